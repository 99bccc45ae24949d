//! Field-driven site percolation, Galton–Watson cluster tails, the
//! disagreement-containment experiment and the closed-form gap and MLSI
//! certificates.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{input, Error, Result};
use crate::glauber::{revelation_order, GrandCoupling, RevelationOrder};
use crate::graph::Graph;
use crate::localization::log_marginal_constant;
use crate::model::{sample_field, AssumptionParams, Convention, FieldDistribution, IsingModel};
use crate::oracle::{cor2_matrix, gibbs_table, row_col_opnorm, sup_cor2_over_pinnings};
use crate::rng::{child_seed, substream, uniform, uniforms, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteProvenance {
    /// `|h_x| <= K`.
    FieldOpen,
    /// `|h_x| > K` but `min(U_x, 1-U_x) <= p0/4`.
    UniformOpen,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercolationRealization {
    pub open: Vec<bool>,
    pub provenance: Vec<SiteProvenance>,
    /// Per-vertex uniforms; the same values drive the grand coupling.
    pub uniforms: Vec<f64>,
    pub seed: u64,
}

impl PercolationRealization {
    pub fn open_set(&self) -> Vec<usize> {
        (0..self.open.len()).filter(|&x| self.open[x]).collect()
    }
}

/// Site `x` is open iff `|h_x| <= K` or `min(U_x, 1-U_x) <= p0/4`, with
/// `U = uniforms(seed, Percolation, 0, n)`.
pub fn percolate(g: &Graph, field: &[f64], k: f64, p0: f64, seed: u64) -> Result<PercolationRealization> {
    let n = g.num_vertices();
    if field.len() != n {
        return input(format!("field has {} entries for {n} vertices", field.len()));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return input(format!("p0 must lie in (0,1), got {p0}"));
    }
    let u = uniforms(seed, Purpose::Percolation, 0, n);
    let provenance: Vec<SiteProvenance> = (0..n)
        .map(|x| {
            if field[x].abs() <= k {
                SiteProvenance::FieldOpen
            } else if u[x].min(1.0 - u[x]) <= p0 / 4.0 {
                SiteProvenance::UniformOpen
            } else {
                SiteProvenance::Closed
            }
        })
        .collect();
    Ok(PercolationRealization {
        open: provenance.iter().map(|p| *p != SiteProvenance::Closed).collect(),
        provenance,
        uniforms: u,
        seed,
    })
}

/// Open cluster of the edge `(u, v)` with both endpoints forced open, sorted.
pub fn cluster_of_edge(g: &Graph, realization: &PercolationRealization, edge: (usize, usize)) -> Result<Vec<usize>> {
    let (u, v) = edge;
    let n = g.num_vertices();
    if realization.open.len() != n {
        return input("realization does not match the graph");
    }
    if u >= n || v >= n || g.edge_index(u, v).is_none() {
        return input(format!("({u}, {v}) is not an edge"));
    }
    let mut seen = vec![false; n];
    seen[u] = true;
    seen[v] = true;
    let mut queue = VecDeque::from([u, v]);
    while let Some(x) = queue.pop_front() {
        for &y in g.neighbors(x) {
            if !seen[y] && realization.open[y] {
                seen[y] = true;
                queue.push_back(y);
            }
        }
    }
    Ok((0..n).filter(|&x| seen[x]).collect())
}

fn check_tree_params(delta: usize, p0: f64) -> Result<()> {
    if delta < 3 {
        return input(format!("degree bound must be at least 3, got {delta}"));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return input(format!("p0 must lie in (0,1), got {p0}"));
    }
    Ok(())
}

/// Law of the total progeny of a two-root Galton–Watson forest with
/// `Bin(Δ-1, p0)` offspring: `P(T = x) = (2/x) P(Bin((Δ-1)x, p0) = x-2)`.
pub fn otter_dwass_pmf(delta: usize, p0: f64, x: u64) -> Result<f64> {
    check_tree_params(delta, p0)?;
    if x < 2 {
        return input(format!("a two-root forest has at least 2 vertices, got {x}"));
    }
    let trials = (delta as u64 - 1) * x;
    let k = x - 2;
    if k > trials {
        return Ok(0.0);
    }
    let log_p = ln_binomial(trials, k) + k as f64 * p0.ln() + (trials - k) as f64 * (-p0).ln_1p();
    Ok(2.0 / x as f64 * log_p.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterTailBound {
    pub delta: usize,
    pub p0: f64,
    pub m: f64,
    pub xi_star: f64,
    /// `(2/(1-e^{-ξ*})) ((1-p0)/(p0(Δ-2)))² e^{-ξ* m}`.
    pub tail_bound: f64,
    /// `E e^{α*|C|} <= 2/((1-e^{-2α*})(1-e^{-α*})) ((1-p0)/(p0(Δ-2)))²`, `α* = ξ*/2`.
    pub exp_moment_bound: f64,
}

pub fn cluster_tail_bound(delta: usize, p0: f64, m: f64) -> Result<ClusterTailBound> {
    check_tree_params(delta, p0)?;
    let d = delta as f64;
    if p0 * (d - 1.0) >= 1.0 {
        return input(format!("need p0 (Δ-1) < 1, got {}", p0 * (d - 1.0)));
    }
    let xi = (d - 2.0) * (d - 2.0).ln() - p0.ln() - (d - 1.0) * (d - 1.0).ln() - (d - 2.0) * (-p0).ln_1p();
    let ratio2 = ((1.0 - p0) / (p0 * (d - 2.0))).powi(2);
    let alpha = xi / 2.0;
    Ok(ClusterTailBound {
        delta,
        p0,
        m,
        xi_star: xi,
        tail_bound: 2.0 / -(-xi).exp_m1() * ratio2 * (-xi * m).exp(),
        exp_moment_bound: 2.0 / ((-(-2.0 * alpha).exp_m1()) * (-(-alpha).exp_m1())) * ratio2,
    })
}

/// `Σ_{x >= m} P(T = x)` truncated at `x_max`.
pub fn otter_dwass_tail(delta: usize, p0: f64, m: u64, x_max: u64) -> Result<f64> {
    let mut s = 0.0;
    for x in m.max(2)..=x_max {
        s += otter_dwass_pmf(delta, p0, x)?;
    }
    Ok(s)
}

/// Total progeny of one simulated two-root forest, or `None` if it exceeds `cap`.
pub fn simulate_forest(delta: usize, p0: f64, cap: u64, rng: &mut impl Rng) -> Result<Option<u64>> {
    check_tree_params(delta, p0)?;
    let offspring = Binomial::new(delta as u64 - 1, p0).map_err(|e| Error::Input(e.to_string()))?;
    let mut pending = 2u64;
    let mut total = 2u64;
    while pending > 0 {
        pending -= 1;
        let c = offspring.sample(rng);
        total += c;
        pending += c;
        if total > cap {
            return Ok(None);
        }
    }
    Ok(Some(total))
}

/// Histogram of simulated forest sizes: `counts[x]` forests of size `x`,
/// plus the number that exceeded `cap`.
pub fn forest_size_histogram(delta: usize, p0: f64, forests: u64, cap: u64, seed: u64) -> Result<(Vec<u64>, u64)> {
    let mut rng = substream(seed, Purpose::Percolation, 1);
    let mut counts = vec![0u64; cap as usize + 1];
    let mut overflow = 0;
    for _ in 0..forests {
        match simulate_forest(delta, p0, cap, &mut rng)? {
            Some(x) => counts[x as usize] += 1,
            None => overflow += 1,
        }
    }
    Ok((counts, overflow))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementOutcome {
    pub disagreement: Vec<usize>,
    pub cluster: Vec<usize>,
    pub contained: bool,
    pub order: Vec<usize>,
}

/// Couples `ν = (1-θ) ⊗ μ^τ` with `ν(· | σ_u = σ_v = 1)` through the grand
/// coupling, sharing per-vertex uniforms with the percolation of `field`
/// (the ±1 field). Revelation follows the open cluster of the edge first.
#[allow(clippy::too_many_arguments)]
pub fn disagreement_experiment(
    model01: &IsingModel,
    edge: (usize, usize),
    theta: f64,
    extra_pinning: &BTreeMap<usize, bool>,
    field: &[f64],
    k: f64,
    p0: f64,
    seed: u64,
) -> Result<DisagreementOutcome> {
    model01.require_convention(Convention::ZeroOne)?;
    let g = model01.graph();
    let realization = percolate(g, field, k, p0, seed)?;
    let cluster = cluster_of_edge(g, &realization, edge)?;
    let nu = model01.edge_tilt(theta, extra_pinning)?;
    let nu_uv = nu.pin(&BTreeMap::from([(edge.0, true), (edge.1, true)]))?;
    let order = revelation_order(g, edge, RevelationOrder::ClusterFirst, &realization.open)?;
    let outcome = GrandCoupling::new(&[nu, nu_uv])?.sample(&order, &realization.uniforms)?;
    let contained = outcome
        .disagreement
        .iter()
        .all(|x| cluster.binary_search(x).is_ok());
    Ok(DisagreementOutcome {
        disagreement: outcome.disagreement,
        cluster,
        contained,
        order,
    })
}

/// Failure-probability constant `2/((1-e^{-α*})(1-e^{-2α*})) e^{2γ*}`.
pub fn tail_constant(params: &AssumptionParams) -> f64 {
    let a = params.alpha_star;
    2.0 / ((-(-a).exp_m1()) * (-(-2.0 * a).exp_m1())) * (2.0 * params.gamma_star).exp()
}

/// Bound on `P(sup row sum >= Δm)`, equally on `P(sup column sum >= 2Δm)`.
pub fn row_sum_tail_bound(params: &AssumptionParams, m: f64) -> f64 {
    tail_constant(params) * (-params.alpha_star * m).exp()
}

/// Union bound over all rows and columns at `m = 2 ln n / α*`.
pub fn union_failure_probability(n: usize, params: &AssumptionParams) -> f64 {
    let n = n as f64;
    2.0 * n * params.delta as f64 * tail_constant(params) / (n * n)
}

/// Lower end of the Wilson score interval for `k` successes out of `trials`.
pub fn wilson_lower(k: u64, trials: u64, z: f64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let n = trials as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - spread) / (1.0 + z2 / n)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SupMode {
    /// Every ternary pinning of the free vertices.
    Exact,
    /// `pinnings` random pinnings, each vertex free, down or up with
    /// probability 1/3.
    Sampled { pinnings: usize },
}

/// Vertex count up to which [`SupMode::Exact`] is chosen automatically.
pub const EXACT_SUP_MAX_N: usize = 10;

/// Per-edge sup of absolute row and column sums of `Cor^(2)` over sampled
/// pinnings and the theta grid.
pub fn sampled_cor2_sups(model01: &IsingModel, theta_grid: &[f64], pinnings: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    model01.require_convention(Convention::ZeroOne)?;
    let m = model01.graph().num_edges();
    let free = model01.free_vertices();
    let mut rng = substream(seed, Purpose::Pinning, 0);
    let (mut rows_sup, mut cols_sup) = (vec![0.0f64; m], vec![0.0f64; m]);
    for _ in 0..pinnings {
        let mut tau = BTreeMap::new();
        for &v in &free {
            let r = uniform(&mut rng);
            if r < 1.0 / 3.0 {
                tau.insert(v, false);
            } else if r < 2.0 / 3.0 {
                tau.insert(v, true);
            }
        }
        for &theta in theta_grid {
            let cor = cor2_matrix(&gibbs_table(&model01.edge_tilt(theta, &tau)?)?)?;
            let (rows, cols, _) = row_col_opnorm(&cor);
            for e in 0..m {
                rows_sup[e] = rows_sup[e].max(rows[e]);
                cols_sup[e] = cols_sup[e].max(cols[e]);
            }
        }
    }
    Ok((rows_sup, cols_sup))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub m: f64,
    pub row_threshold: f64,
    pub col_threshold: f64,
    /// Largest per-edge exceedance frequency of the row-sum sup.
    pub row_frequency: f64,
    pub col_frequency: f64,
    pub row_wilson_lower: f64,
    pub col_wilson_lower: f64,
    pub bound: f64,
    /// Both Wilson lower bounds sit at or below the bound.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub mode: SupMode,
    pub params: AssumptionParams,
    pub trials: u64,
    pub z: f64,
    pub rows: Vec<TailRow>,
    pub ok: bool,
}

pub struct TailExperiment<'a> {
    pub graph: &'a Graph,
    pub beta: f64,
    pub field: &'a FieldDistribution,
    pub params: AssumptionParams,
    pub theta_grid: &'a [f64],
    pub m_grid: &'a [f64],
    pub trials: u64,
    /// `None` picks exact mode up to [`EXACT_SUP_MAX_N`] vertices and 10³
    /// sampled pinnings above.
    pub mode: Option<SupMode>,
    pub seed: u64,
}

/// 99% two-sided normal quantile used for the tail verdicts.
pub const TAIL_Z: f64 = 2.576;

/// Empirical per-edge exceedance of the sup row/column sums over quenched
/// fields, against the closed-form tail bound. Thresholds are `Δm` for rows
/// and `2Δm` for columns; each edge is its own event.
pub fn row_sum_tail_report(exp: &TailExperiment<'_>) -> Result<TailReport> {
    let g = exp.graph;
    let n = g.num_vertices();
    let delta = exp.params.delta;
    if g.max_degree() > delta {
        return input(format!("graph degree {} exceeds Δ = {delta}", g.max_degree()));
    }
    let mode = exp.mode.unwrap_or(if n <= EXACT_SUP_MAX_N {
        SupMode::Exact
    } else {
        SupMode::Sampled { pinnings: 1000 }
    });
    let edges = g.num_edges();
    let mut row_hits = vec![vec![0u64; edges]; exp.m_grid.len()];
    let mut col_hits = vec![vec![0u64; edges]; exp.m_grid.len()];
    let graph = std::sync::Arc::new(g.clone());
    for trial in 0..exp.trials {
        let h = sample_field(exp.field, n, child_seed(exp.seed, Purpose::Field, trial))?;
        let model01 = IsingModel::with_uniform_coupling(graph.clone(), exp.beta, h.values, Convention::PlusMinus)?
            .to_zero_one()?;
        let (rows, cols) = match mode {
            SupMode::Exact => {
                let r = sup_cor2_over_pinnings(&model01, exp.theta_grid)?;
                (r.edge_row_sup, r.edge_col_sup)
            }
            SupMode::Sampled { pinnings } => sampled_cor2_sups(
                &model01,
                exp.theta_grid,
                pinnings,
                child_seed(exp.seed, Purpose::Pinning, trial),
            )?,
        };
        for (i, &m) in exp.m_grid.iter().enumerate() {
            let d = delta as f64;
            for e in 0..edges {
                row_hits[i][e] += (rows[e] >= d * m) as u64;
                col_hits[i][e] += (cols[e] >= 2.0 * d * m) as u64;
            }
        }
    }
    let t = exp.trials.max(1) as f64;
    let rows: Vec<TailRow> = exp
        .m_grid
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let rk = row_hits[i].iter().copied().max().unwrap_or(0);
            let ck = col_hits[i].iter().copied().max().unwrap_or(0);
            let bound = row_sum_tail_bound(&exp.params, m);
            let rw = wilson_lower(rk, exp.trials, TAIL_Z);
            let cw = wilson_lower(ck, exp.trials, TAIL_Z);
            TailRow {
                m,
                row_threshold: delta as f64 * m,
                col_threshold: 2.0 * delta as f64 * m,
                row_frequency: rk as f64 / t,
                col_frequency: ck as f64 / t,
                row_wilson_lower: rw,
                col_wilson_lower: cw,
                bound,
                ok: rw <= bound && cw <= bound,
            }
        })
        .collect();
    Ok(TailReport {
        mode,
        params: exp.params,
        trials: exp.trials,
        z: TAIL_Z,
        ok: rows.iter().all(|r| r.ok),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormCheck {
    pub opnorm: f64,
    pub rowsum_max: f64,
    pub colsum_max: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Checks `‖A‖₂ <= sqrt(max row sum · max column sum)` up to a relative
/// slack of `1e-12`.
pub fn norm_interpolation_check(a: &DMatrix<f64>) -> Result<NormCheck> {
    if a.nrows() != a.ncols() {
        return input(format!("matrix is {}x{}, not square", a.nrows(), a.ncols()));
    }
    let (rows, cols, opnorm) = row_col_opnorm(a);
    let rowsum_max = rows.into_iter().fold(0.0, f64::max);
    let colsum_max = cols.into_iter().fold(0.0, f64::max);
    let bound = (rowsum_max * colsum_max).sqrt();
    Ok(NormCheck {
        opnorm,
        rowsum_max,
        colsum_max,
        bound,
        ok: opnorm <= bound + 1e-12 * bound.max(1.0),
    })
}

fn check_cert_inputs(n: usize, beta: f64, delta: usize, alpha_star: f64) -> Result<()> {
    if n == 0 || delta == 0 || !(beta > 0.0) || !(alpha_star > 0.0) {
        return input("certificates need n, Δ, β and α* positive");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub n: usize,
    pub beta: f64,
    pub delta: usize,
    pub alpha_star: f64,
    /// `-ln n - 16βΔ ln n / α*`.
    pub log_gap_lower: f64,
    pub gap_lower: f64,
    /// Exponent of `n` in the mixing-time bound, `1 + 16βΔ/α*`.
    pub tmix_exponent: f64,
    pub failure_probability_note: String,
}

impl GapCertificate {
    /// `n^{1+16βΔ/α*} (βΔn + ‖h‖₁ + ln(1/ε))`, with unit leading constant.
    pub fn tmix_upper(&self, eps: f64, field_l1: f64) -> f64 {
        self.log_tmix_upper(eps, field_l1).exp()
    }

    pub fn log_tmix_upper(&self, eps: f64, field_l1: f64) -> f64 {
        let n = self.n as f64;
        self.tmix_exponent * n.ln() + (self.beta * self.delta as f64 * n + field_l1 - eps.ln()).ln()
    }
}

pub fn gap_certificate(n: usize, beta: f64, delta: usize, alpha_star: f64) -> Result<GapCertificate> {
    check_cert_inputs(n, beta, delta, alpha_star)?;
    let ln_n = (n as f64).ln();
    let c = 16.0 * beta * delta as f64 / alpha_star;
    let log_gap_lower = -ln_n - c * ln_n;
    Ok(GapCertificate {
        n,
        beta,
        delta,
        alpha_star,
        log_gap_lower,
        gap_lower: log_gap_lower.exp(),
        tmix_exponent: 1.0 + c,
        failure_probability_note: "holds for quenched fields outside an event of probability \
            at most 2nΔ·2/((1-e^{-α*})(1-e^{-2α*}))·e^{2γ*}/n² (union bound over rows and columns \
            at m = 2 ln n/α*)"
            .into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlsiCertificate {
    pub n: usize,
    pub beta: f64,
    pub delta: usize,
    pub alpha_star: f64,
    pub m_bound: f64,
    /// `ln C_{Δ,M,β}`.
    pub log_c: f64,
    pub log_rho_lower: f64,
    pub rho_lower: f64,
}

/// `ρ >= (1/(3n)) exp(-4β((C_{Δ,M,β}+1) 4Δ ln n/α* + 1))`, evaluated in log space.
pub fn mlsi_certificate(n: usize, beta: f64, delta: usize, alpha_star: f64, m_bound: f64) -> Result<MlsiCertificate> {
    check_cert_inputs(n, beta, delta, alpha_star)?;
    if m_bound.is_nan() || m_bound < 0.0 {
        return input(format!("field bound M must be nonnegative, got {m_bound}"));
    }
    let ln_n = (n as f64).ln();
    let log_c = log_marginal_constant(delta, m_bound, beta);
    let c = log_c.exp();
    let log_rho_lower = -(3.0 * n as f64).ln() - 4.0 * beta * ((c + 1.0) * 4.0 * delta as f64 * ln_n / alpha_star + 1.0);
    Ok(MlsiCertificate {
        n,
        beta,
        delta,
        alpha_star,
        m_bound,
        log_c,
        log_rho_lower,
        rho_lower: log_rho_lower.exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedGapTail {
    pub epsilon: f64,
    pub l: f64,
    /// `ln(n e^{εL})`, the log of the bound on `gap^{-1}`.
    pub log_inverse_gap_bound: f64,
    pub failure: f64,
    /// `ln(nΔB) / ((√α* - 2) ln n)`; infinite when `√α* <= 2`.
    pub kappa0: f64,
    pub above_threshold: bool,
}

/// `gap^{-1} <= n e^{εL}` with `ε = 16βΔ/√α*`, failing with probability at
/// most `e^{-2L}` once `nΔB e^{-√α* L} <= e^{-2L}`, i.e. `L >= κ₀ ln n`.
pub fn refined_gap_tail(n: usize, params: &AssumptionParams, l: f64) -> Result<RefinedGapTail> {
    check_cert_inputs(n, params.beta, params.delta, params.alpha_star)?;
    if !(l >= 0.0) {
        return input(format!("L must be nonnegative, got {l}"));
    }
    let sa = params.alpha_star.sqrt();
    let ln_n = (n as f64).ln();
    let epsilon = 16.0 * params.beta * params.delta as f64 / sa;
    let log_ndb = ln_n + (params.delta as f64).ln() + tail_constant(params).ln();
    let kappa0 = if sa > 2.0 && ln_n > 0.0 {
        log_ndb / ((sa - 2.0) * ln_n)
    } else {
        f64::INFINITY
    };
    let above_threshold = sa > 2.0 && l * (sa - 2.0) >= log_ndb;
    Ok(RefinedGapTail {
        epsilon,
        l,
        log_inverse_gap_bound: ln_n + epsilon * l,
        failure: (-2.0 * l).exp(),
        kappa0,
        above_threshold,
    })
}
