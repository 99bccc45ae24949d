//! Incremental warm-start sampling, the warm-start TV bound and the
//! JSON-configured experiment pipeline.
//!
//! The sampler adds vertices one at a time along an ordering whose prefixes
//! are connected. Vertex `v_1` is drawn exactly with `P(+) ∝ e^{h}`; each
//! later vertex is drawn the same way from its raw field and appended, then
//! `k*` Glauber steps run on the model induced by the current prefix.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::graph::{generators, Graph, GraphJson};
use crate::model::{assumption_params, sample_field, Convention, FieldDistribution, IsingModel, SpinConfiguration};
use crate::numeric::logistic;
use crate::oracle::{gibbs_table, glauber_gap, tv_vectors};
use crate::percolation::{gap_certificate, mlsi_certificate, row_sum_tail_report, TailExperiment};
use crate::rng::{child_seed, substream, uniform, Purpose};
use crate::sl::{estimate_wsm, WsmSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KStarMode {
    /// `k* = ⌈n^{C*}⌉` with `n` the full vertex count, at every stage.
    #[default]
    FullN,
    /// `k* = ⌈i^{C*}⌉` with `i` the current prefix size.
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub c_star: f64,
    pub seed: u64,
    #[serde(default)]
    pub ordering_seed: u64,
    #[serde(default)]
    pub k_mode: KStarMode,
    /// Run each connected component separately instead of failing.
    #[serde(default)]
    pub per_component: bool,
}

impl SamplerConfig {
    pub fn new(c_star: f64, seed: u64) -> Self {
        SamplerConfig {
            c_star,
            seed,
            ordering_seed: 0,
            k_mode: KStarMode::FullN,
            per_component: false,
        }
    }
}

pub fn k_star(n: usize, c_star: f64) -> u64 {
    (n as f64).powf(c_star).ceil() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub order: Vec<usize>,
    /// Glauber steps run at each stage; 0 at the first vertex of a component.
    pub stage_steps: Vec<u64>,
    pub total_updates: u64,
    pub wall_time_secs: f64,
    pub final_state: SpinConfiguration,
    pub tv_to_oracle: Option<f64>,
}

/// Precomputed ordering and stage schedule for one model.
pub struct IncrementalSampler<'a> {
    model: &'a IsingModel,
    config: SamplerConfig,
    order: Vec<usize>,
    /// Stage index at which each vertex joins.
    stage_of: Vec<usize>,
    /// First stage of the component each stage belongs to.
    segment_start: Vec<usize>,
    stage_steps: Vec<u64>,
    /// Per vertex: `(neighbour, coupling)` pairs.
    nbrs: Vec<Vec<(usize, f64)>>,
}

impl<'a> IncrementalSampler<'a> {
    pub fn new(model: &'a IsingModel, config: SamplerConfig) -> Result<Self> {
        model.require_convention(Convention::PlusMinus)?;
        if !model.pinning().is_empty() {
            return input("the incremental sampler takes unpinned models");
        }
        if !(config.c_star > 0.0) || !config.c_star.is_finite() {
            return input(format!("c_star must be positive, got {}", config.c_star));
        }
        let g = model.graph();
        let n = g.num_vertices();
        let mut order = Vec::with_capacity(n);
        let mut segment_start = Vec::with_capacity(n);
        if g.is_connected() {
            order = g.connected_ordering(config.ordering_seed)?;
            segment_start.resize(n, 0);
        } else if !config.per_component {
            let comps = g.components();
            return Err(Error::Disconnected {
                start: comps[0][0],
                vertex: comps[1][0],
            });
        } else {
            for (c, comp) in g.components().into_iter().enumerate() {
                let (sub, _) = g.induced_subgraph(&comp)?;
                let local = sub.connected_ordering(child_seed(config.ordering_seed, Purpose::Ordering, c as u64))?;
                let start = order.len();
                order.extend(local.into_iter().map(|i| comp[i]));
                segment_start.resize(order.len(), start);
            }
        }
        let mut stage_of = vec![0; n];
        for (i, &v) in order.iter().enumerate() {
            stage_of[v] = i;
        }
        let stage_steps = (0..n)
            .map(|i| {
                if i == segment_start[i] {
                    0
                } else {
                    match config.k_mode {
                        KStarMode::FullN => k_star(n, config.c_star),
                        KStarMode::Prefix => k_star(i - segment_start[i] + 1, config.c_star),
                    }
                }
            })
            .collect();
        let mut nbrs = vec![Vec::new(); n];
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            let b = model.couplings()[e];
            nbrs[u].push((v, b));
            nbrs[v].push((u, b));
        }
        Ok(IncrementalSampler {
            model,
            config,
            order,
            stage_of,
            segment_start,
            stage_steps,
            nbrs,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn stage_steps(&self) -> &[u64] {
        &self.stage_steps
    }

    pub fn total_updates(&self) -> u64 {
        self.stage_steps.iter().sum()
    }

    /// One independent run; replica `r` uses its own stream of the seed.
    pub fn sample(&self, replica: u64) -> SpinConfiguration {
        let mut rng = substream(self.config.seed, Purpose::Replica, replica);
        let h = self.model.field();
        let mut config = SpinConfiguration::uniform(self.model.num_vertices(), false, Convention::PlusMinus);
        for (i, &v) in self.order.iter().enumerate() {
            config.set(v, uniform(&mut rng) < logistic(2.0 * h[v]));
            let start = self.segment_start[i];
            let size = i - start + 1;
            for _ in 0..self.stage_steps[i] {
                let k = ((uniform(&mut rng) * size as f64) as usize).min(size - 1);
                let w = self.order[start + k];
                let mut s = h[w];
                for &(x, b) in &self.nbrs[w] {
                    let sx = self.stage_of[x];
                    if sx >= start && sx <= i {
                        s += if config.get(x) { b } else { -b };
                    }
                }
                config.set(w, uniform(&mut rng) < logistic(2.0 * s));
            }
        }
        config
    }

    pub fn run(&self, replica: u64) -> RunReport {
        let t0 = Instant::now();
        let final_state = self.sample(replica);
        RunReport {
            order: self.order.clone(),
            stage_steps: self.stage_steps.clone(),
            total_updates: self.total_updates(),
            wall_time_secs: t0.elapsed().as_secs_f64(),
            final_state,
            tv_to_oracle: None,
        }
    }

    /// Empirical TV of `replicas` runs against the exact table.
    pub fn validate(&self, replicas: u64) -> Result<ValidationReport> {
        if replicas == 0 {
            return input("need at least one replica");
        }
        let table = gibbs_table(self.model)?;
        let free = self.model.free_vertices();
        let mut counts = vec![0u64; table.len()];
        for r in 0..replicas {
            counts[self.sample(r).index_over(&free)] += 1;
        }
        let rf = replicas as f64;
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / rf).collect();
        Ok(ValidationReport {
            replicas,
            tv: tv_vectors(&empirical, table.probs()),
            noise: 0.5 * table.probs().iter().map(|p| (p * (1.0 - p) / rf).sqrt()).sum::<f64>(),
            total_updates: self.total_updates(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub replicas: u64,
    pub tv: f64,
    /// Expected TV of the same number of exact samples, at most.
    pub noise: f64,
    pub total_updates: u64,
}

pub fn incremental_sample(model: &IsingModel, config: SamplerConfig) -> Result<(SpinConfiguration, RunReport)> {
    let s = IncrementalSampler::new(model, config)?;
    let report = s.run(0);
    Ok((report.final_state.clone(), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub c_star: f64,
    pub k_star: u64,
    pub tv: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub eps: f64,
    pub points: Vec<CalibrationPoint>,
    /// Smallest grid value whose empirical TV is at most `eps`.
    pub chosen: Option<f64>,
}

/// Scans `c_grid` in increasing order and picks the first exponent whose
/// empirical TV to the oracle is within `eps`.
pub fn calibrate_c_star(model: &IsingModel, c_grid: &[f64], replicas: u64, eps: f64, seed: u64) -> Result<CalibrationReport> {
    let mut grid = c_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let n = model.num_vertices();
    let mut points = Vec::with_capacity(grid.len());
    let mut chosen = None;
    for (i, &c) in grid.iter().enumerate() {
        let mut cfg = SamplerConfig::new(c, child_seed(seed, Purpose::Experiment, i as u64));
        cfg.ordering_seed = seed;
        let v = IncrementalSampler::new(model, cfg)?.validate(replicas)?;
        points.push(CalibrationPoint {
            c_star: c,
            k_star: k_star(n, c),
            tv: v.tv,
            noise: v.noise,
        });
        if v.tv <= eps {
            chosen = Some(c);
            break;
        }
    }
    Ok(CalibrationReport { eps, points, chosen })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartBound {
    pub value: f64,
    pub preconditions_hold: bool,
    pub warnings: Vec<String>,
}

/// `M (A^{2p} ln k / k)^{1/(2p-1)}`.
pub fn warm_start_tv_bound(m_warm: f64, a: f64, p: f64, k: u64) -> WarmStartBound {
    let mut warnings = Vec::new();
    if !(p >= 1.0) {
        warnings.push(format!("p = {p} is below 1"));
    }
    if !(a.powf(p) >= 2.0 / 4f64.powf(p - 1.0)) {
        warnings.push(format!("A^p = {} is below 2/4^(p-1)", a.powf(p)));
    }
    if k < 2 {
        warnings.push(format!("k = {k} is below 2"));
    }
    let kf = k as f64;
    let value = m_warm * (a.powf(2.0 * p) * kf.ln() / kf).powf(1.0 / (2.0 * p - 1.0));
    WarmStartBound {
        value,
        preconditions_hold: warnings.is_empty(),
        warnings,
    }
}

/// Density bound `M = e^{4β e^{C_α}}` of the incremental warm start.
pub fn warm_start_constant(beta: f64, c_alpha: f64) -> f64 {
    (4.0 * beta * c_alpha.exp()).exp()
}

/// Graph source used by configs and the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    Path { n: usize },
    Cycle { n: usize },
    Complete { n: usize },
    Grid { width: usize, height: usize },
    Torus { width: usize, height: usize },
    RegularTree { arity: usize, depth: usize },
    RandomRegular { n: usize, degree: usize, seed: u64 },
    Explicit { graph: GraphJson },
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        Ok(match self {
            GraphSpec::Path { n } => generators::path(*n),
            GraphSpec::Cycle { n } => generators::cycle(*n)?,
            GraphSpec::Complete { n } => generators::complete(*n),
            GraphSpec::Grid { width, height } => generators::grid(*width, *height),
            GraphSpec::Torus { width, height } => generators::torus(*width, *height)?,
            GraphSpec::RegularTree { arity, depth } => generators::regular_tree(*arity, *depth),
            GraphSpec::RandomRegular { n, degree, seed } => generators::random_regular_connected(*n, *degree, *seed)?,
            GraphSpec::Explicit { graph } => Graph::from_json(graph)?,
        })
    }
}

fn default_p0() -> f64 {
    0.05
}

fn default_k() -> f64 {
    4.0
}

/// One pipeline step of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// Gap certificate against the exact gap on random regular graphs.
    GapCertificate {
        models: u64,
        n: usize,
        degree: usize,
        beta: f64,
        field: FieldDistribution,
        #[serde(default = "default_p0")]
        p0: f64,
        #[serde(default = "default_k")]
        k: f64,
    },
    MlsiCertificate {
        n: usize,
        beta: f64,
        delta: usize,
        alpha_star: f64,
        m_bound: f64,
    },
    /// Incremental sampling with oracle validation.
    IncrementalSample {
        graph: GraphSpec,
        beta: f64,
        field: FieldDistribution,
        c_star: f64,
        replicas: u64,
    },
    TailReport {
        graph: GraphSpec,
        beta: f64,
        field: FieldDistribution,
        p0: f64,
        k: f64,
        delta: usize,
        theta_grid: Vec<f64>,
        m_grid: Vec<f64>,
        trials: u64,
    },
    Wsm {
        graph: GraphSpec,
        beta: f64,
        field: FieldDistribution,
        radii: Vec<usize>,
        field_trials: u64,
    },
}

impl Step {
    fn name(&self) -> &'static str {
        match self {
            Step::GapCertificate { .. } => "gap_certificate",
            Step::MlsiCertificate { .. } => "mlsi_certificate",
            Step::IncrementalSample { .. } => "incremental_sample",
            Step::TailReport { .. } => "tail_report",
            Step::Wsm { .. } => "wsm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub pipeline: Vec<Step>,
}

impl ExperimentConfig {
    /// Parses a config, reporting the JSON path of any schema violation.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Input(format!("config error at `{}`: {}", e.path(), e.inner())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub kind: String,
    pub seed: u64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    pub version: String,
    pub steps: Vec<ManifestEntry>,
}

/// Reports keyed by file name, plus the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub manifest: Manifest,
    pub files: BTreeMap<String, String>,
}

impl ReportBundle {
    pub fn write_to(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub index: u64,
    pub certificate: f64,
    pub exact_gap: f64,
    pub holds: bool,
}

fn pm_model(g: Graph, beta: f64, field: &FieldDistribution, seed: u64) -> Result<IsingModel> {
    let n = g.num_vertices();
    let h = sample_field(field, n, seed)?;
    IsingModel::with_uniform_coupling(Arc::new(g), beta, h.values, Convention::PlusMinus)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Runs every step of the pipeline. Output is a pure function of the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle> {
    let mut files = BTreeMap::new();
    let mut steps = Vec::with_capacity(config.pipeline.len());
    for (i, step) in config.pipeline.iter().enumerate() {
        let seed = child_seed(config.seed, Purpose::Experiment, i as u64);
        let stem = format!("{i:02}_{}", step.name());
        let mut names = Vec::new();
        match step {
            Step::GapCertificate {
                models,
                n,
                degree,
                beta,
                field,
                p0,
                k,
            } => {
                let params = assumption_params(*p0, *k, *beta, *degree)?;
                let cert = gap_certificate(*n, *beta, *degree, params.alpha_star)?;
                let mut csv = String::from("index,certificate,exact_gap,holds\n");
                let mut rows = Vec::with_capacity(*models as usize);
                for m in 0..*models {
                    let g = generators::random_regular_connected(*n, *degree, child_seed(seed, Purpose::Graph, m))?;
                    let model = pm_model(g, *beta, field, child_seed(seed, Purpose::Field, m))?;
                    let exact_gap = glauber_gap(&model)?.gap;
                    let row = GapRow {
                        index: m,
                        certificate: cert.gap_lower,
                        exact_gap,
                        holds: cert.gap_lower <= exact_gap,
                    };
                    csv.push_str(&format!("{},{},{},{}\n", m, row.certificate, row.exact_gap, row.holds));
                    rows.push(row);
                }
                let summary = serde_json::json!({
                    "assumption": params,
                    "certificate": cert,
                    "rows": rows,
                });
                files.insert(format!("{stem}.csv"), csv);
                files.insert(format!("{stem}.json"), to_json(&summary));
                names.extend([format!("{stem}.csv"), format!("{stem}.json")]);
            }
            Step::MlsiCertificate {
                n,
                beta,
                delta,
                alpha_star,
                m_bound,
            } => {
                let cert = mlsi_certificate(*n, *beta, *delta, *alpha_star, *m_bound)?;
                files.insert(format!("{stem}.json"), to_json(&cert));
                names.push(format!("{stem}.json"));
            }
            Step::IncrementalSample {
                graph,
                beta,
                field,
                c_star,
                replicas,
            } => {
                let model = pm_model(graph.build()?, *beta, field, child_seed(seed, Purpose::Field, 0))?;
                let mut cfg = SamplerConfig::new(*c_star, seed);
                cfg.ordering_seed = child_seed(seed, Purpose::Ordering, 0);
                let sampler = IncrementalSampler::new(&model, cfg)?;
                let v = sampler.validate(*replicas)?;
                let last = sampler.sample(0);
                let report = serde_json::json!({
                    "order": sampler.order(),
                    "stage_steps": sampler.stage_steps(),
                    "total_updates": sampler.total_updates(),
                    "validation": v,
                    "final_state": last,
                });
                files.insert(format!("{stem}.json"), to_json(&report));
                names.push(format!("{stem}.json"));
            }
            Step::TailReport {
                graph,
                beta,
                field,
                p0,
                k,
                delta,
                theta_grid,
                m_grid,
                trials,
            } => {
                let g = graph.build()?;
                let exp = TailExperiment {
                    graph: &g,
                    beta: *beta,
                    field,
                    params: assumption_params(*p0, *k, *beta, *delta)?,
                    theta_grid,
                    m_grid,
                    trials: *trials,
                    mode: None,
                    seed,
                };
                files.insert(format!("{stem}.json"), to_json(&row_sum_tail_report(&exp)?));
                names.push(format!("{stem}.json"));
            }
            Step::Wsm {
                graph,
                beta,
                field,
                radii,
                field_trials,
            } => {
                let s = WsmSettings {
                    beta: *beta,
                    field: field.clone(),
                    radii: radii.clone(),
                    field_trials: *field_trials,
                    t: 0.0,
                    sl_realizations: 1,
                    vertices: Vec::new(),
                    seed,
                };
                let r = estimate_wsm(&graph.build()?, &s)?;
                files.insert(format!("{stem}.csv"), r.to_csv());
                files.insert(format!("{stem}.json"), to_json(&r));
                names.extend([format!("{stem}.csv"), format!("{stem}.json")]);
            }
        }
        steps.push(ManifestEntry {
            index: i,
            kind: step.name().into(),
            seed,
            files: names,
        });
    }
    Ok(ReportBundle {
        manifest: Manifest {
            name: config.name.clone(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            steps,
        },
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(g: Graph, beta: f64, h: Vec<f64>) -> IsingModel {
        IsingModel::with_uniform_coupling(Arc::new(g), beta, h, Convention::PlusMinus).unwrap()
    }

    #[test]
    fn single_vertex_is_exact() {
        let m = pm(Graph::new(1, &[]).unwrap(), 0.0, vec![0.4]);
        let s = IncrementalSampler::new(&m, SamplerConfig::new(2.0, 1)).unwrap();
        assert_eq!(s.total_updates(), 0);
        let v = s.validate(20_000).unwrap();
        assert!(v.tv <= 3.0 * v.noise + 1e-3);
    }

    #[test]
    fn two_vertices_match_oracle() {
        let m = pm(generators::path(2), 0.6, vec![0.3, -0.5]);
        let cfg = SamplerConfig::new(10.0, 5);
        assert!(k_star(2, 10.0) >= 1000);
        let s = IncrementalSampler::new(&m, cfg).unwrap();
        let v = s.validate(100_000).unwrap();
        assert!(v.tv <= 0.01, "tv {}", v.tv);
    }

    #[test]
    fn zero_coupling_draws_are_independent() {
        let m = pm(generators::path(3), 0.0, vec![0.5, -1.0, 0.2]);
        let s = IncrementalSampler::new(&m, SamplerConfig::new(0.01, 2)).unwrap();
        let v = s.validate(50_000).unwrap();
        assert!(v.tv <= 3.0 * v.noise);
    }

    #[test]
    fn schedule_and_errors() {
        let m = pm(generators::path(5), 0.3, vec![0.0; 5]);
        let s = IncrementalSampler::new(&m, SamplerConfig::new(1.5, 0)).unwrap();
        assert_eq!(s.stage_steps()[0], 0);
        assert!(s.stage_steps()[1..].iter().all(|&k| k == k_star(5, 1.5)));
        assert_eq!(s.total_updates(), 4 * k_star(5, 1.5));
        assert_eq!(s.sample(3), s.sample(3));

        let mut cfg = SamplerConfig::new(1.0, 0);
        cfg.k_mode = KStarMode::Prefix;
        let s = IncrementalSampler::new(&m, cfg).unwrap();
        assert_eq!(s.stage_steps(), &[0, 2, 3, 4, 5]);

        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        let m = pm(g, 0.3, vec![0.0; 4]);
        assert!(matches!(
            IncrementalSampler::new(&m, SamplerConfig::new(1.0, 0)),
            Err(Error::Disconnected { .. })
        ));
        let mut cfg = SamplerConfig::new(2.0, 0);
        cfg.per_component = true;
        let s = IncrementalSampler::new(&m, cfg).unwrap();
        assert_eq!(s.stage_steps().iter().filter(|&&k| k == 0).count(), 2);
        assert!(s.validate(20_000).unwrap().tv < 0.03);

        let pinned = pm(generators::path(2), 0.3, vec![0.0; 2])
            .pin(&BTreeMap::from([(0, true)]))
            .unwrap();
        assert!(IncrementalSampler::new(&pinned, SamplerConfig::new(1.0, 0)).is_err());
    }

    #[test]
    fn warm_start_examples() {
        let b = warm_start_tv_bound(1.0, 1.0, 1.0, 8);
        assert!((b.value - 8f64.ln() / 8.0).abs() < 1e-15);
        assert!((b.value - 0.2599).abs() < 1e-4);
        let b = warm_start_tv_bound(3.0, 2.0, 1.0, 100);
        assert!((b.value - 3.0 * 4.0 * 100f64.ln() / 100.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for e in 2..20 {
            let v = warm_start_tv_bound(2.0, 1.5, 2.0, 1u64 << e).value;
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 0.2);
        assert!(!warm_start_tv_bound(1.0, 1.0, 0.5, 1).preconditions_hold);
        assert_eq!(warm_start_constant(0.0, 3.0), 1.0);
    }

    #[test]
    fn experiment_pipeline() {
        let empty = run_experiment(&ExperimentConfig::from_json_str(r#"{"seed": 1}"#).unwrap()).unwrap();
        assert!(empty.manifest.steps.is_empty() && empty.files.is_empty());

        let cfg = r#"{"seed": 4, "pipeline": [
            {"kind": "gap_certificate", "models": 3, "n": 6, "degree": 3, "beta": 0.5,
             "field": {"kind": "two_point", "a": 5.0}},
            {"kind": "mlsi_certificate", "n": 8, "beta": 0.2, "delta": 3, "alpha_star": 0.8, "m_bound": 1.0}
        ]}"#;
        let c = ExperimentConfig::from_json_str(cfg).unwrap();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.manifest.steps.len(), 2);
        let csv = &a.files["00_gap_certificate.csv"];
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().skip(1).all(|l| l.ends_with("true")));

        let bad = r#"{"seed": 1, "pipeline": [{"kind": "wsm", "graph": {"kind": "path", "n": 3}, "beta": "x"}]}"#;
        let err = ExperimentConfig::from_json_str(bad).unwrap_err().to_string();
        assert!(err.contains("pipeline[0]"), "{err}");
    }

    #[test]
    fn calibration_picks_first_passing_exponent() {
        let m = pm(generators::path(3), 0.4, vec![0.2, 0.0, -0.3]);
        let r = calibrate_c_star(&m, &[3.0, 0.5, 1.0], 20_000, 0.05, 7).unwrap();
        let c = r.chosen.unwrap();
        assert!(r.points.last().unwrap().tv <= 0.05);
        assert_eq!(r.points.last().unwrap().c_star, c);
    }
}
