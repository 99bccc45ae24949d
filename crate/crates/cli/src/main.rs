use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use rfim_core::glauber::{empirical_tv_curve, monotone_coupled_run, run_chain, trajectory_csv};
use rfim_core::graph::GraphJson;
use rfim_core::localization::{
    posterior_model, rfim_entropy_certificate, sample_noising_trace, variance_conservation_r,
    verify_posterior_by_simulation, SamplerKind,
};
use rfim_core::model::{assumption_params, check_field_assumption, sample_field, ModelJson};
use rfim_core::oracle::{cor2_matrix, gibbs_table, glauber_gap, mlsi_lower_estimate, sup_cor2_over_pinnings};
use rfim_core::percolation::{
    cluster_of_edge, disagreement_experiment, gap_certificate, mlsi_certificate, norm_interpolation_check,
    percolate, refined_gap_tail, row_sum_tail_report, union_failure_probability, TailExperiment,
};
use rfim_core::sampler::{run_experiment, ExperimentConfig, GraphSpec, IncrementalSampler, KStarMode, SamplerConfig};
use rfim_core::sl::{build_separation_plan, estimate_wsm, sl_boost, trace_moment_probe, WsmSettings};
use rfim_core::{Convention, Error, FieldDistribution, Graph, IsingModel};

const EXIT_VALIDATION: u8 = 2;
const EXIT_CAPACITY: u8 = 3;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(name = "rfim", version, about = "Random-field Ising model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Graph generation.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Model construction and transforms.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Exact enumeration on small models.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Glauber dynamics runs and couplings.
    #[command(subcommand)]
    Mix(MixCmd),
    /// Edge-field localization.
    #[command(subcommand)]
    Localize(LocalizeCmd),
    /// Percolation and closed-form certificates.
    #[command(subcommand)]
    Certify(CertifyCmd),
    /// Stochastic-localization boosting and spatial mixing.
    #[command(subcommand)]
    Sl(SlCmd),
    /// Incremental warm-start sampling.
    #[command(subcommand)]
    Sample(SampleCmd),
    /// Config-driven experiment pipelines.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Json,
    Edges,
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Builds a graph from a JSON spec such as '{"kind":"grid","width":3,"height":3}'.
    Gen {
        #[arg(long)]
        spec: String,
        #[arg(long, value_enum, default_value = "json")]
        format: GraphFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GraphSource {
    /// Graph JSON file (`{"n":..,"edges":[[u,v],..]}`).
    #[arg(long, conflicts_with = "spec")]
    graph: Option<PathBuf>,
    /// Inline graph spec JSON.
    #[arg(long)]
    spec: Option<String>,
}

impl GraphSource {
    fn load(&self) -> anyhow::Result<Graph> {
        match (&self.graph, &self.spec) {
            (Some(p), _) => {
                let g: GraphJson = read_json(p)?;
                Ok(Graph::from_json(&g)?)
            }
            (None, Some(s)) => {
                let spec: GraphSpec = serde_json::from_str(s).context("parsing graph spec")?;
                Ok(spec.build()?)
            }
            (None, None) => bail!("give --graph or --spec"),
        }
    }
}

#[derive(Args)]
struct ModelArg {
    /// Model JSON file.
    #[arg(long)]
    model: PathBuf,
}

impl ModelArg {
    fn load(&self) -> anyhow::Result<IsingModel> {
        let m: ModelJson = read_json(&self.model)?;
        Ok(IsingModel::from_json(&m)?)
    }
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Samples a quenched field and writes a ±1 model.
    Make {
        #[command(flatten)]
        source: GraphSource,
        #[arg(long)]
        beta: f64,
        /// Field distribution JSON, e.g. '{"kind":"two_point","a":5}'.
        #[arg(long)]
        field: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pins as `v=0|1` pairs separated by commas.
        #[arg(long, default_value = "")]
        pin: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edge tilt `(1-θ) ⊗ μ^τ`, written in the 0/1 convention.
    Tilt {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value = "")]
        pin: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derived constants of the field assumption.
    Assume {
        #[arg(long)]
        p0: f64,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        delta: usize,
        #[arg(long)]
        field: Option<String>,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Full Gibbs table as JSON, optionally also as raw little-endian bytes.
    Table {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        binary: Option<PathBuf>,
    },
    /// Spectral gap, tensorization constant and optional MLSI estimate.
    Gap {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 0)]
        mlsi_restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Second-order correlation matrix of the tilted model.
    Cor2 {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, default_value = "")]
        pin: String,
    },
    /// Sup of row/column sums and operator norm over pinnings and tilts.
    Sweep {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value = "0")]
        thetas: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Up,
    Down,
}

#[derive(Subcommand)]
enum MixCmd {
    /// Single chain; prints the trajectory as CSV.
    Run {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "down")]
        init: Init,
        #[arg(long, default_value_t = 1)]
        record_every: u64,
    },
    /// Monotone coupling from all-down and all-up.
    Couple {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Empirical TV to the exact law along a step grid.
    Tvcurve {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        steps: String,
        #[arg(long, default_value_t = 1000)]
        replicas: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "down")]
        init: Init,
    },
}

#[derive(Subcommand)]
enum LocalizeCmd {
    /// One noising trace and its revealed edges at `t`.
    Trace {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
    },
    /// Posterior model for a revealed edge set.
    Posterior {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        t: f64,
        /// Revealed edge indices, comma separated.
        #[arg(long, default_value = "")]
        revealed: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior identity checked by simulation.
    Verify {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 10_000)]
        traces: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        min_hits: u64,
        /// Fail when the largest bucket TV exceeds this many noise units.
        #[arg(long, default_value_t = 4.0)]
        z: f64,
    },
    /// Conservation certificates.
    Certificate {
        #[arg(long, value_enum)]
        kind: CertKind,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        delta: Option<usize>,
        #[arg(long)]
        m_bound: Option<f64>,
        #[arg(long)]
        alpha_star: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CertKind {
    Variance,
    Entropy,
}

#[derive(Args)]
struct AlphaArgs {
    #[arg(long)]
    alpha_star: Option<f64>,
    /// Derive α* from (p0, K) when --alpha-star is absent.
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
}

impl AlphaArgs {
    fn resolve(&self, beta: f64, delta: usize) -> anyhow::Result<f64> {
        match (self.alpha_star, self.p0, self.k) {
            (Some(a), _, _) => Ok(a),
            (None, Some(p0), Some(k)) => Ok(assumption_params(p0, k, beta, delta)?.alpha_star),
            _ => bail!("give --alpha-star or both --p0 and --k"),
        }
    }
}

#[derive(Subcommand)]
enum CertifyCmd {
    Gap {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        delta: usize,
        #[command(flatten)]
        alpha: AlphaArgs,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        field_l1: Option<f64>,
        /// With --p0/--k also report the refined tail at this L.
        #[arg(long)]
        l: Option<f64>,
    },
    Mlsi {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        delta: usize,
        #[arg(long)]
        m_bound: f64,
        #[command(flatten)]
        alpha: AlphaArgs,
    },
    /// Empirical sup row/column-sum tails against the closed-form bound.
    Tails {
        #[command(flatten)]
        source: GraphSource,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        field: String,
        #[arg(long)]
        p0: f64,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        delta: usize,
        #[arg(long, default_value = "0")]
        thetas: String,
        #[arg(long, default_value = "1,2,3")]
        ms: String,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Interpolation bound for a square matrix given as JSON rows.
    Norm {
        #[arg(long)]
        matrix: String,
    },
    /// Percolation realization, edge cluster and optional containment run.
    Percolate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        p0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Edge `u,v` whose cluster and disagreement set are reported.
        #[arg(long)]
        edge: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
    },
}

#[derive(Subcommand)]
enum SlCmd {
    Boost {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Wsm {
        #[command(flatten)]
        source: GraphSource,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        field: String,
        #[arg(long, default_value = "1,2,3")]
        radii: String,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, default_value_t = 1)]
        sl_realizations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes the per-cell CSV here; the JSON summary goes to stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    Plan {
        #[command(flatten)]
        source: GraphSource,
        #[arg(long)]
        points: String,
    },
    Probe {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 2)]
        p: u32,
        #[arg(long, default_value = "0,1,5")]
        ts: String,
        #[arg(long, default_value_t = 200)]
        realizations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum SampleCmd {
    Incremental {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        cstar: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        ordering_seed: u64,
        /// Use the prefix size instead of the full vertex count in k*.
        #[arg(long)]
        prefix_k: bool,
        #[arg(long)]
        per_component: bool,
        /// Compare against the exact law; exits with 2 if TV exceeds --eps.
        #[arg(long)]
        validate: bool,
        #[arg(long, default_value_t = 10_000)]
        replicas: u64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        /// Directory for manifest.json, report.csv and final_state.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Command outcome: a JSON value or raw text, and whether validation passed.
struct Outcome {
    body: Body,
    valid: bool,
}

enum Body {
    Json(Value),
    Text(String),
    Empty,
}

impl Outcome {
    fn json(v: impl Serialize) -> anyhow::Result<Self> {
        Ok(Outcome {
            body: Body::Json(serde_json::to_value(v)?),
            valid: true,
        })
    }

    fn checked(v: impl Serialize, valid: bool) -> anyhow::Result<Self> {
        Ok(Outcome {
            valid,
            ..Outcome::json(v)?
        })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, v: &impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn parse_field(s: &str) -> anyhow::Result<FieldDistribution> {
    let d: FieldDistribution = serde_json::from_str(s).context("parsing field distribution")?;
    d.validate()?;
    Ok(d)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| anyhow!("bad list entry `{x}`: {e}")))
        .collect()
}

fn parse_pins(s: &str) -> anyhow::Result<BTreeMap<usize, bool>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            let (v, s) = x.split_once('=').ok_or_else(|| anyhow!("pin `{x}` is not `v=spin`"))?;
            let v: usize = v.trim().parse()?;
            let up = match s.trim() {
                "1" | "+" | "+1" => true,
                "0" | "-" | "-1" => false,
                other => bail!("pin value `{other}` is not 0/1 or -1/+1"),
            };
            Ok((v, up))
        })
        .collect()
}

fn parse_edge(s: &str) -> anyhow::Result<(usize, usize)> {
    match parse_list::<usize>(s)?.as_slice() {
        [u, v] => Ok((*u, *v)),
        _ => bail!("edge must be `u,v`"),
    }
}

fn as_zero_one(m: IsingModel) -> anyhow::Result<IsingModel> {
    Ok(match m.convention() {
        Convention::ZeroOne => m,
        Convention::PlusMinus => m.to_zero_one()?,
    })
}

fn as_plus_minus(m: IsingModel) -> anyhow::Result<IsingModel> {
    Ok(match m.convention() {
        Convention::PlusMinus => m,
        Convention::ZeroOne => m.to_plus_minus()?,
    })
}

fn emit_model(m: &IsingModel, out: &Option<PathBuf>) -> anyhow::Result<Outcome> {
    let json = m.to_json();
    match out {
        Some(p) => {
            write_json(p, &json)?;
            Ok(Outcome {
                body: Body::Empty,
                valid: true,
            })
        }
        None => Outcome::json(json),
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Graph(GraphCmd::Gen { spec, format, out }) => {
            let spec: GraphSpec = serde_json::from_str(&spec).context("parsing graph spec")?;
            let g = spec.build()?;
            let text = match format {
                GraphFormat::Json => serde_json::to_string_pretty(&g.to_json())?,
                GraphFormat::Edges => g.to_edge_list(),
            };
            match out {
                Some(p) => {
                    fs::write(&p, text)?;
                    Ok(Outcome {
                        body: Body::Empty,
                        valid: true,
                    })
                }
                None => Ok(Outcome {
                    body: Body::Text(text),
                    valid: true,
                }),
            }
        }
        Command::Model(cmd) => model_cmd(cmd),
        Command::Oracle(cmd) => oracle_cmd(cmd),
        Command::Mix(cmd) => mix_cmd(cmd),
        Command::Localize(cmd) => localize_cmd(cmd),
        Command::Certify(cmd) => certify_cmd(cmd),
        Command::Sl(cmd) => sl_cmd(cmd),
        Command::Sample(cmd) => sample_cmd(cmd),
        Command::Experiment(ExperimentCmd::Run { config, out }) => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = ExperimentConfig::from_json_str(&text)?;
            let bundle = run_experiment(&cfg)?;
            bundle.write_to(&out)?;
            Outcome::json(&bundle.manifest)
        }
    }
}

fn model_cmd(cmd: ModelCmd) -> anyhow::Result<Outcome> {
    match cmd {
        ModelCmd::Make {
            source,
            beta,
            field,
            seed,
            pin,
            out,
        } => {
            let g = source.load()?;
            let dist = parse_field(&field)?;
            let h = sample_field(&dist, g.num_vertices(), seed)?;
            let m = IsingModel::with_uniform_coupling(Arc::new(g), beta, h.values, Convention::PlusMinus)?
                .pin(&parse_pins(&pin)?)?;
            emit_model(&m, &out)
        }
        ModelCmd::Tilt { model, theta, pin, out } => {
            let m = as_zero_one(model.load()?)?;
            emit_model(&m.edge_tilt(theta, &parse_pins(&pin)?)?, &out)
        }
        ModelCmd::Assume {
            p0,
            k,
            beta,
            delta,
            field,
        } => {
            let params = assumption_params(p0, k, beta, delta)?;
            let check = match field {
                Some(f) => Some(check_field_assumption(&parse_field(&f)?, p0, k)?),
                None => None,
            };
            let valid = params.valid && check.is_none_or(|c| c.holds);
            Outcome::checked(json!({ "params": params, "field_check": check }), valid)
        }
    }
}

fn oracle_cmd(cmd: OracleCmd) -> anyhow::Result<Outcome> {
    match cmd {
        OracleCmd::Table { model, binary } => {
            let t = gibbs_table(&model.load()?)?;
            if let Some(p) = binary {
                fs::write(&p, t.to_le_bytes())?;
            }
            Outcome::json(t.to_json())
        }
        OracleCmd::Gap {
            model,
            mlsi_restarts,
            seed,
        } => {
            let m = model.load()?;
            let mut r = glauber_gap(&m)?;
            if mlsi_restarts > 0 {
                r.mlsi_lower_estimate = Some(mlsi_lower_estimate(&m, mlsi_restarts, seed)?);
            }
            Outcome::json(r)
        }
        OracleCmd::Cor2 { model, theta, pin } => {
            let m = as_zero_one(model.load()?)?.edge_tilt(theta, &parse_pins(&pin)?)?;
            let c = cor2_matrix(&gibbs_table(&m)?)?;
            let rows: Vec<Vec<f64>> = (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect();
            let check = norm_interpolation_check(&c)?;
            Outcome::json(json!({ "edges": m.graph().edges(), "matrix": rows, "norms": check }))
        }
        OracleCmd::Sweep { model, thetas } => {
            let m = as_zero_one(model.load()?)?;
            let r = sup_cor2_over_pinnings(&m, &parse_list(&thetas)?)?;
            let valid = r.worst_interpolation_slack <= 1e-12 * r.max_opnorm.value.max(1.0);
            Outcome::checked(r, valid)
        }
    }
}

fn init_config(m: &IsingModel, init: Init) -> rfim_core::SpinConfiguration {
    m.constant_configuration(matches!(init, Init::Up))
}

fn mix_cmd(cmd: MixCmd) -> anyhow::Result<Outcome> {
    match cmd {
        MixCmd::Run {
            model,
            steps,
            seed,
            init,
            record_every,
        } => {
            let m = model.load()?;
            let r = run_chain(&m, init_config(&m, init), steps, seed, Some(record_every))?;
            Ok(Outcome {
                body: Body::Text(trajectory_csv(&r.trajectory)),
                valid: true,
            })
        }
        MixCmd::Couple { model, steps, seed } => {
            let m = model.load()?;
            let tr = monotone_coupled_run(&m, init_config(&m, Init::Down), init_config(&m, Init::Up), steps, seed)?;
            Outcome::checked(
                json!({
                    "steps": tr.steps,
                    "coalescence_step": tr.coalescence_step,
                    "order_violations": tr.order_violations,
                    "disagreement_set": tr.disagreement_set,
                    "low": tr.low,
                    "high": tr.high,
                }),
                tr.order_violations == 0,
            )
        }
        MixCmd::Tvcurve {
            model,
            steps,
            replicas,
            seed,
            init,
        } => {
            let m = model.load()?;
            Outcome::json(empirical_tv_curve(&m, &init_config(&m, init), &parse_list(&steps)?, replicas, seed)?)
        }
    }
}

fn localize_cmd(cmd: LocalizeCmd) -> anyhow::Result<Outcome> {
    match cmd {
        LocalizeCmd::Trace { model, seed, t } => {
            let m = as_zero_one(model.load()?)?;
            let tr = sample_noising_trace(&m, SamplerKind::Oracle, seed)?;
            Outcome::json(json!({
                "x": tr.x_sample,
                "edge_uniforms": tr.edge_uniforms,
                "satisfied": tr.satisfied(),
                "t": t,
                "revealed": tr.revealed(t),
            }))
        }
        LocalizeCmd::Posterior { model, t, revealed, out } => {
            let m = as_zero_one(model.load()?)?;
            emit_model(&posterior_model(&m, t, &parse_list(&revealed)?)?, &out)
        }
        LocalizeCmd::Verify {
            model,
            t,
            traces,
            seed,
            min_hits,
            z,
        } => {
            let m = as_zero_one(model.load()?)?;
            let r = verify_posterior_by_simulation(&m, t, traces, seed, min_hits)?;
            let valid = r.buckets.iter().all(|b| b.tv <= z * b.noise + 1e-12);
            Outcome::checked(r, valid)
        }
        LocalizeCmd::Certificate {
            kind,
            theta,
            c,
            n,
            beta,
            delta,
            m_bound,
            alpha_star,
        } => match kind {
            CertKind::Variance => {
                let (Some(c), Some(theta)) = (c, theta) else {
                    bail!("variance certificate needs --c and --theta");
                };
                Outcome::json(variance_conservation_r(c, theta)?)
            }
            CertKind::Entropy => {
                let (Some(n), Some(beta), Some(delta), Some(m), Some(a)) = (n, beta, delta, m_bound, alpha_star) else {
                    bail!("entropy certificate needs --n --beta --delta --m-bound --alpha-star");
                };
                Outcome::json(rfim_entropy_certificate(n, beta, delta, m, a)?)
            }
        },
    }
}

fn certify_cmd(cmd: CertifyCmd) -> anyhow::Result<Outcome> {
    match cmd {
        CertifyCmd::Gap {
            n,
            beta,
            delta,
            alpha,
            eps,
            field_l1,
            l,
        } => {
            let a = alpha.resolve(beta, delta)?;
            let cert = gap_certificate(n, beta, delta, a)?;
            let tmix = match (eps, field_l1) {
                (Some(e), Some(h)) => Some(json!({ "eps": e, "field_l1": h, "log_tmix_upper": cert.log_tmix_upper(e, h) })),
                _ => None,
            };
            let extra = match (alpha.p0, alpha.k) {
                (Some(p0), Some(k)) => {
                    let params = assumption_params(p0, k, beta, delta)?;
                    let refined = l.map(|l| refined_gap_tail(n, &params, l)).transpose()?;
                    Some(json!({
                        "params": params,
                        "union_failure_probability": union_failure_probability(n, &params),
                        "refined": refined,
                    }))
                }
                _ => None,
            };
            Outcome::json(json!({ "certificate": cert, "tmix": tmix, "assumption": extra }))
        }
        CertifyCmd::Mlsi {
            n,
            beta,
            delta,
            m_bound,
            alpha,
        } => Outcome::json(mlsi_certificate(n, beta, delta, alpha.resolve(beta, delta)?, m_bound)?),
        CertifyCmd::Tails {
            source,
            beta,
            field,
            p0,
            k,
            delta,
            thetas,
            ms,
            trials,
            seed,
        } => {
            let g = source.load()?;
            let dist = parse_field(&field)?;
            let thetas: Vec<f64> = parse_list(&thetas)?;
            let ms: Vec<f64> = parse_list(&ms)?;
            let exp = TailExperiment {
                graph: &g,
                beta,
                field: &dist,
                params: assumption_params(p0, k, beta, delta)?,
                theta_grid: &thetas,
                m_grid: &ms,
                trials,
                mode: None,
                seed,
            };
            let r = row_sum_tail_report(&exp)?;
            let ok = r.ok;
            Outcome::checked(r, ok)
        }
        CertifyCmd::Norm { matrix } => {
            let rows: Vec<Vec<f64>> = serde_json::from_str(&matrix).context("matrix must be a JSON array of rows")?;
            let nr = rows.len();
            let nc = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != nc) {
                bail!("matrix rows have different lengths");
            }
            let m = nalgebra_matrix(nr, nc, &rows);
            let c = norm_interpolation_check(&m)?;
            Outcome::checked(c, c.ok)
        }
        CertifyCmd::Percolate {
            model,
            k,
            p0,
            seed,
            edge,
            theta,
        } => {
            let m = model.load()?;
            let pm = as_plus_minus(m.clone())?;
            let r = percolate(m.graph(), pm.field(), k, p0, seed)?;
            let mut out = json!({ "realization": r, "open_set": r.open_set() });
            let mut valid = true;
            if let Some(e) = edge {
                let e = parse_edge(&e)?;
                out["cluster"] = json!(cluster_of_edge(m.graph(), &r, e)?);
                let d = disagreement_experiment(&as_zero_one(m)?, e, theta, &BTreeMap::new(), pm.field(), k, p0, seed)?;
                valid = d.contained;
                out["disagreement"] = json!(d);
            }
            Outcome::checked(out, valid)
        }
    }
}

fn nalgebra_matrix(nr: usize, nc: usize, rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(nr, nc, |i, j| rows[i][j])
}

fn sl_cmd(cmd: SlCmd) -> anyhow::Result<Outcome> {
    match cmd {
        SlCmd::Boost { model, t, seed, out } => {
            let m = as_plus_minus(model.load()?)?;
            let r = sl_boost(&m, t, SamplerKind::Oracle, seed)?;
            if let Some(p) = &out {
                write_json(p, &r.boosted_model.to_json())?;
            }
            Outcome::json(json!({
                "t": r.t,
                "sigma_star": r.sigma_star,
                "noise": r.noise,
                "y": r.y,
                "boosted_field": r.boosted_model.field(),
            }))
        }
        SlCmd::Wsm {
            source,
            beta,
            field,
            radii,
            trials,
            t,
            sl_realizations,
            seed,
            csv,
        } => {
            let s = WsmSettings {
                beta,
                field: parse_field(&field)?,
                radii: parse_list(&radii)?,
                field_trials: trials,
                t,
                sl_realizations,
                vertices: Vec::new(),
                seed,
            };
            let r = estimate_wsm(&source.load()?, &s)?;
            if let Some(p) = csv {
                fs::write(&p, r.to_csv())?;
            }
            Outcome::json(json!({
                "radii": r.radii,
                "radius_mean": r.radius_mean,
                "fitted_c": r.fitted_c,
                "min_valid_c": r.min_valid_c,
                "satisfied": r.satisfied,
                "t": r.t,
                "field_trials": r.field_trials,
                "sl_realizations": r.sl_realizations,
            }))
        }
        SlCmd::Plan { source, points } => {
            let g = source.load()?;
            Outcome::json(build_separation_plan(&g, &parse_list(&points)?)?)
        }
        SlCmd::Probe {
            model,
            p,
            ts,
            realizations,
            seed,
        } => {
            let m = as_plus_minus(model.load()?)?;
            Outcome::json(trace_moment_probe(&m, p, &parse_list(&ts)?, realizations, seed)?)
        }
    }
}

fn sample_cmd(cmd: SampleCmd) -> anyhow::Result<Outcome> {
    let SampleCmd::Incremental {
        model,
        cstar,
        seed,
        ordering_seed,
        prefix_k,
        per_component,
        validate,
        replicas,
        eps,
        out,
    } = cmd;
    let m = as_plus_minus(model.load()?)?;
    let config = SamplerConfig {
        c_star: cstar,
        seed,
        ordering_seed,
        k_mode: if prefix_k { KStarMode::Prefix } else { KStarMode::FullN },
        per_component,
    };
    let sampler = IncrementalSampler::new(&m, config.clone())?;
    let mut report = sampler.run(0);
    let validation = if validate { Some(sampler.validate(replicas)?) } else { None };
    report.tv_to_oracle = validation.map(|v| v.tv);
    let valid = validation.is_none_or(|v| v.tv <= eps);
    if let Some(dir) = &out {
        fs::create_dir_all(dir)?;
        let mut csv = String::from("stage,vertex,steps\n");
        for (i, (v, k)) in report.order.iter().zip(&report.stage_steps).enumerate() {
            csv.push_str(&format!("{i},{v},{k}\n"));
        }
        fs::write(dir.join("report.csv"), csv)?;
        write_json(&dir.join("final_state.json"), &report.final_state)?;
        write_json(
            &dir.join("manifest.json"),
            &json!({
                "version": env!("CARGO_PKG_VERSION"),
                "config": config,
                "model": m.to_json(),
                "total_updates": report.total_updates,
                "validation": validation,
                "eps": eps,
            }),
        )?;
    }
    Outcome::checked(json!({ "report": report, "validation": validation }), valid)
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Capacity { .. }) => EXIT_CAPACITY,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(outcome) => {
            match outcome.body {
                Body::Json(v) => println!("{}", serde_json::to_string_pretty(&v).expect("json value serializes")),
                Body::Text(t) => print!("{t}"),
                Body::Empty => {}
            }
            if outcome.valid {
                ExitCode::SUCCESS
            } else {
                eprintln!("validation failed");
                ExitCode::from(EXIT_VALIDATION)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
