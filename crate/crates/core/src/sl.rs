//! Field boosting along the stochastic-localization path, weak spatial
//! mixing estimates, separation plans and trace-moment diagnostics.
//!
//! The localization path is realized through its Bayesian form: at time `t`
//! the measure is the model with field `h + tσ* + B_t`, where `σ* ~ μ` and
//! `B_t ~ N(0, t)` per coordinate. Nothing is integrated in time.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::glauber::run_chain;
use crate::graph::Graph;
use crate::localization::{inverse_cdf, SamplerKind};
use crate::model::{sample_field, Convention, FieldDistribution, IsingModel, SpinConfiguration};
use crate::numeric::linear_fit;
use crate::oracle::{gibbs_table, GibbsTable};
use crate::rng::{child_seed, substream, uniform, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct SlRealization {
    pub t: f64,
    pub sigma_star: SpinConfiguration,
    /// `B_t`, one `N(0, t)` value per vertex.
    pub noise: Vec<f64>,
    /// `y = tσ* + B_t`.
    pub y: Vec<f64>,
    pub boosted_model: IsingModel,
}

/// Draws `σ* ~ μ` and builds boosted models for a ±1 model.
pub struct SlSampler<'a> {
    model: &'a IsingModel,
    kind: SamplerKind,
    cdf: Option<(GibbsTable, Vec<f64>)>,
}

impl<'a> SlSampler<'a> {
    pub fn new(model: &'a IsingModel, kind: SamplerKind) -> Result<Self> {
        model.require_convention(Convention::PlusMinus)?;
        let cdf = match kind {
            SamplerKind::Oracle => {
                let table = gibbs_table(model)?;
                let mut acc = 0.0;
                let cdf = table
                    .probs()
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect();
                Some((table, cdf))
            }
            SamplerKind::LongGlauber { .. } => None,
        };
        Ok(SlSampler { model, kind, cdf })
    }

    pub fn model(&self) -> &IsingModel {
        self.model
    }

    /// Realization number `index` of `seed` at time `t`.
    pub fn boost(&self, t: f64, seed: u64, index: u64) -> Result<SlRealization> {
        if !(t >= 0.0) || !t.is_finite() {
            return input(format!("localization time must be finite and >= 0, got {t}"));
        }
        let mut rng = substream(seed, Purpose::Replica, index);
        let sigma_star = match (&self.cdf, self.kind) {
            (Some((table, cdf)), _) => table.configuration(inverse_cdf(cdf, uniform(&mut rng))),
            (None, SamplerKind::LongGlauber { steps }) => {
                let init = self.model.constant_configuration(false);
                run_chain(self.model, init, steps, child_seed(seed, Purpose::Chain, index), None)?
                    .state
                    .config
            }
            (None, SamplerKind::Oracle) => unreachable!("oracle sampler always has a table"),
        };
        let sd = t.sqrt();
        let n = self.model.num_vertices();
        let noise: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|v| t * sigma_star.value(v) + noise[v]).collect();
        let field = self.model.field().iter().zip(&y).map(|(h, y)| h + y).collect();
        Ok(SlRealization {
            t,
            sigma_star,
            noise,
            y,
            boosted_model: self.model.with_field(field)?,
        })
    }
}

pub fn sl_boost(model: &IsingModel, t: f64, kind: SamplerKind, seed: u64) -> Result<SlRealization> {
    SlSampler::new(model, kind)?.boost(t, seed, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub t: f64,
    pub realizations: u64,
    pub target: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Largest `|mean - target| / stderr` over configurations with positive stderr.
    pub max_z: f64,
    /// Configurations whose deviation exceeds `z_tol` standard errors.
    pub violations: usize,
}

/// Averages the boosted Gibbs tables over realizations and compares with `μ`.
pub fn martingale_check(model: &IsingModel, t: f64, realizations: u64, seed: u64, z_tol: f64) -> Result<MartingaleReport> {
    let sampler = SlSampler::new(model, SamplerKind::Oracle)?;
    let target = gibbs_table(model)?.probs().to_vec();
    let k = target.len();
    let (mut s1, mut s2) = (vec![0.0; k], vec![0.0; k]);
    for r in 0..realizations {
        let boosted = gibbs_table(&sampler.boost(t, seed, r)?.boosted_model)?;
        for (i, &p) in boosted.probs().iter().enumerate() {
            s1[i] += p;
            s2[i] += p * p;
        }
    }
    let n = realizations.max(1) as f64;
    let mean: Vec<f64> = s1.iter().map(|s| s / n).collect();
    let stderr: Vec<f64> = (0..k)
        .map(|i| ((s2[i] / n - mean[i] * mean[i]).max(0.0) / (n - 1.0).max(1.0)).sqrt())
        .collect();
    let mut max_z = 0.0f64;
    let mut violations = 0;
    for i in 0..k {
        let dev = (mean[i] - target[i]).abs();
        if stderr[i] > 0.0 {
            let z = dev / stderr[i];
            max_z = max_z.max(z);
            violations += (z > z_tol) as usize;
        } else if dev > 1e-12 {
            max_z = f64::INFINITY;
            violations += 1;
        }
    }
    Ok(MartingaleReport {
        t,
        realizations,
        target,
        mean,
        stderr,
        max_z,
        violations,
    })
}

/// TV distance between the law of `σ_u` under all-plus and all-minus
/// conditioning on the sphere `{w : d(u,w) = ℓ}`, computed on the model
/// induced by the ball of radius `ℓ`. An empty sphere gives 0; `ℓ = 0`
/// pins `u` itself and gives 1.
pub fn wsm_delta(model: &IsingModel, u: usize, ell: usize) -> Result<f64> {
    let g = model.graph();
    let sphere = g.sphere(u, ell)?;
    if sphere.is_empty() {
        return Ok(0.0);
    }
    let ball = g.ball(u, ell)?;
    let local = model.induced_submodel(&ball)?;
    let pos = |v: usize| ball.binary_search(&v).expect("sphere lies in the ball");
    let marginal = |up: bool| -> Result<f64> {
        let pins: BTreeMap<usize, bool> = sphere.iter().map(|&w| (pos(w), up)).collect();
        let m = local.pin(&pins)?;
        let iu = pos(u);
        match m.pinning().get(&iu) {
            Some(&s) => Ok(if s { 1.0 } else { 0.0 }),
            None => Ok(gibbs_table(&m)?.marginal_up(iu)),
        }
    };
    let d = (marginal(true)? - marginal(false)?).abs();
    Ok(d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsmCell {
    pub vertex: usize,
    pub radius: usize,
    pub mean: f64,
    /// Spread across quenched fields.
    pub field_stderr: f64,
    /// Average within-field spread across localization noise; 0 at `t = 0`.
    pub sl_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsmReport {
    pub radii: Vec<usize>,
    pub t: f64,
    pub field_trials: u64,
    pub sl_realizations: u64,
    pub cells: Vec<WsmCell>,
    /// Vertex-averaged delta per field trial and radius.
    pub per_field: Vec<Vec<f64>>,
    /// Vertex-averaged mean delta per radius.
    pub radius_mean: Vec<f64>,
    /// Least-squares fit of `ln δ(r) = ln C - r/C` over radii with positive means.
    pub fitted_c: Option<f64>,
    /// Smallest `C` with `mean δ(r) <= C e^{-r/C}` at every radius.
    pub min_valid_c: f64,
    /// `satisfied[i]` for radius `i` at the fitted `C`.
    pub satisfied: Vec<bool>,
}

impl WsmReport {
    /// Whether `mean δ(r) <= C e^{-r/C}` at every measured radius.
    pub fn satisfied_at(&self, c: f64) -> bool {
        self.radii
            .iter()
            .zip(&self.radius_mean)
            .all(|(&r, &d)| d <= wsm_envelope(c, r))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("vertex,radius,mean_delta,stderr\n");
        for c in &self.cells {
            let se = (c.field_stderr.powi(2) + c.sl_stderr.powi(2)).sqrt();
            s.push_str(&format!("{},{},{},{}\n", c.vertex, c.radius, c.mean, se));
        }
        s
    }

    /// One-sided paired test that the mean delta at radius index `far` is
    /// below the one at `near`; returns the lower confidence bound of the
    /// difference `near - far` at quantile `z`.
    pub fn paired_decay_lower(&self, near: usize, far: usize, z: f64) -> f64 {
        let d: Vec<f64> = self.per_field.iter().map(|row| row[near] - row[far]).collect();
        let n = d.len() as f64;
        if d.len() < 2 {
            return f64::NEG_INFINITY;
        }
        let m = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        m - z * (var / n).sqrt()
    }
}

/// `C e^{-r/C}`.
pub fn wsm_envelope(c: f64, r: usize) -> f64 {
    c * (-(r as f64) / c).exp()
}

/// Smallest `C > 0` with `C e^{-r/C} >= d`; the envelope is increasing in `C`.
fn min_c_for(d: f64, r: usize) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0f64);
    while wsm_envelope(hi, r) < d {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if wsm_envelope(mid, r) >= d {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsmSettings {
    pub beta: f64,
    pub field: FieldDistribution,
    pub radii: Vec<usize>,
    pub field_trials: u64,
    /// Localization time; 0 means the plain model.
    #[serde(default)]
    pub t: f64,
    /// Localization realizations per field, used when `t > 0`.
    #[serde(default = "one")]
    pub sl_realizations: u64,
    /// Vertices to probe; all vertices when empty.
    #[serde(default)]
    pub vertices: Vec<usize>,
    pub seed: u64,
}

fn one() -> u64 {
    1
}

/// Monte Carlo mean of [`wsm_delta`] over quenched fields (and localization
/// noise when `t > 0`) for each probed vertex and radius.
pub fn estimate_wsm(g: &Graph, s: &WsmSettings) -> Result<WsmReport> {
    if s.radii.is_empty() || s.field_trials == 0 {
        return input("need at least one radius and one field trial");
    }
    let n = g.num_vertices();
    let vertices: Vec<usize> = if s.vertices.is_empty() {
        (0..n).collect()
    } else {
        s.vertices.clone()
    };
    if let Some(&v) = vertices.iter().find(|&&v| v >= n) {
        return input(format!("vertex {v} out of range"));
    }
    let graph = Arc::new(g.clone());
    let reps = if s.t > 0.0 { s.sl_realizations.max(1) } else { 1 };
    let (nv, nr) = (vertices.len(), s.radii.len());
    // per (vertex, radius): per-field means and within-field variances
    let mut field_means = vec![vec![0.0; s.field_trials as usize]; nv * nr];
    let mut within_var = vec![0.0; nv * nr];
    let mut per_field = Vec::with_capacity(s.field_trials as usize);
    for trial in 0..s.field_trials {
        let h = sample_field(&s.field, n, child_seed(s.seed, Purpose::Field, trial))?;
        let base = IsingModel::with_uniform_coupling(graph.clone(), s.beta, h.values, Convention::PlusMinus)?;
        let models: Vec<IsingModel> = if s.t > 0.0 {
            let sampler = SlSampler::new(&base, SamplerKind::Oracle)?;
            let seed = child_seed(s.seed, Purpose::Replica, trial);
            (0..reps)
                .map(|r| Ok(sampler.boost(s.t, seed, r)?.boosted_model))
                .collect::<Result<_>>()?
        } else {
            vec![base]
        };
        let mut row = vec![0.0; nr];
        for (a, &v) in vertices.iter().enumerate() {
            for (b, &r) in s.radii.iter().enumerate() {
                let vals = models
                    .iter()
                    .map(|m| wsm_delta(m, v, r))
                    .collect::<Result<Vec<f64>>>()?;
                let k = vals.len() as f64;
                let m = vals.iter().sum::<f64>() / k;
                if vals.len() > 1 {
                    within_var[a * nr + b] += vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0) / k;
                }
                field_means[a * nr + b][trial as usize] = m;
                row[b] += m / nv as f64;
            }
        }
        per_field.push(row);
    }
    let f = s.field_trials as f64;
    let mut cells = Vec::with_capacity(nv * nr);
    for (a, &v) in vertices.iter().enumerate() {
        for (b, &r) in s.radii.iter().enumerate() {
            let xs = &field_means[a * nr + b];
            let m = xs.iter().sum::<f64>() / f;
            let var = if xs.len() > 1 {
                xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (f - 1.0)
            } else {
                0.0
            };
            cells.push(WsmCell {
                vertex: v,
                radius: r,
                mean: m,
                field_stderr: (var / f).sqrt(),
                sl_stderr: (within_var[a * nr + b] / f).sqrt() / f.sqrt(),
            });
        }
    }
    let radius_mean: Vec<f64> = (0..nr)
        .map(|b| per_field.iter().map(|row| row[b]).sum::<f64>() / f)
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = s
        .radii
        .iter()
        .zip(&radius_mean)
        .filter(|(_, &d)| d > 0.0)
        .map(|(&r, &d)| (r as f64, d.ln()))
        .unzip();
    let fitted_c = linear_fit(&xs, &ys).and_then(|(slope, _)| (slope < 0.0).then(|| -1.0 / slope));
    let min_valid_c = s
        .radii
        .iter()
        .zip(&radius_mean)
        .map(|(&r, &d)| min_c_for(d, r))
        .fold(0.0, f64::max);
    let satisfied = s
        .radii
        .iter()
        .zip(&radius_mean)
        .map(|(&r, &d)| fitted_c.is_some_and(|c| d <= wsm_envelope(c, r)))
        .collect();
    Ok(WsmReport {
        radii: s.radii.clone(),
        t: s.t,
        field_trials: s.field_trials,
        sl_realizations: reps,
        cells,
        per_field,
        radius_mean,
        fitted_c,
        min_valid_c,
        satisfied,
    })
}

/// Separation data for a tuple of points. Indices are positions in the
/// tuple, starting at 0; `r`, `j` and `ell` are `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationPlan {
    pub points: Vec<usize>,
    /// `⌊¼ min_{j<i} d(u_i, u_j)⌋` for `i >= 1`.
    pub r: Vec<Option<usize>>,
    /// Smallest earlier index attaining that minimum.
    pub j: Vec<Option<usize>>,
    /// `Q_k = {i : 2^k <= r_i <= 2^{k+1}-1}`; `r_i = 0` lies in no bucket.
    pub q_buckets: BTreeMap<u32, Vec<usize>>,
    pub k_star: Option<u32>,
    pub a_set: Vec<usize>,
    /// `⌊¼ min_{j ∈ {i-1} ∪ A \ {i}} d(u_i, u_j)⌋` for `i ∈ A`.
    pub ell: Vec<Option<usize>>,
}

/// Stand-in for the distance between different components.
const FAR: usize = usize::MAX / 16;

pub fn build_separation_plan(g: &Graph, points: &[usize]) -> Result<SeparationPlan> {
    let p = points.len();
    let dist = points
        .iter()
        .map(|&u| {
            let d = g.distances_from(u)?;
            Ok(points.iter().map(|&w| d[w].unwrap_or(FAR)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    let mut r = vec![None; p];
    let mut j = vec![None; p];
    for i in 1..p {
        let (jj, d) = (0..i).map(|k| (k, dist[i][k])).min_by_key(|&(k, d)| (d, k)).unwrap();
        r[i] = Some(d / 4);
        j[i] = Some(jj);
    }
    let mut q_buckets: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, ri) in r.iter().enumerate() {
        if let Some(ri) = *ri {
            if ri > 0 {
                q_buckets.entry(ri.ilog2()).or_default().push(i);
            }
        }
    }
    let k_star = q_buckets
        .iter()
        .map(|(&k, q)| (k, q.len() as f64 * 2f64.powi(k as i32)))
        .fold(None, |best: Option<(u32, f64)>, (k, w)| match best {
            Some((_, bw)) if bw >= w => best,
            _ => Some((k, w)),
        })
        .map(|(k, _)| k);
    let a_set = k_star.map(|k| q_buckets[&k].clone()).unwrap_or_default();
    let mut ell = vec![None; p];
    for &i in &a_set {
        let d = std::iter::once(i - 1)
            .chain(a_set.iter().copied().filter(|&k| k != i))
            .map(|k| dist[i][k])
            .min()
            .unwrap();
        ell[i] = Some(d / 4);
    }
    let plan = SeparationPlan {
        points: points.to_vec(),
        r,
        j,
        q_buckets,
        k_star,
        a_set,
        ell,
    };
    assert!(plan.separation_holds(g)?, "separation condition failed for {points:?}");
    Ok(plan)
}

impl SeparationPlan {
    /// `d(u_i, u_{i-1}) >= ℓ_i`, `d(u_i, u_j) >= 2(ℓ_i + ℓ_j)` and
    /// `ℓ_i >= r_i / 2` for all `i ≠ j ∈ A`.
    pub fn separation_holds(&self, g: &Graph) -> Result<bool> {
        let d = |a: usize, b: usize| -> Result<usize> {
            Ok(g.distance(self.points[a], self.points[b])?.unwrap_or(FAR))
        };
        for &i in &self.a_set {
            let (Some(li), Some(ri)) = (self.ell[i], self.r[i]) else {
                return Ok(false);
            };
            if d(i, i - 1)? < li || 2 * li < ri {
                return Ok(false);
            }
            for &k in &self.a_set {
                if k != i {
                    let lk = self.ell[k].unwrap_or(usize::MAX / 4);
                    if d(i, k)? < 2 * (li + lk) {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }
}

/// `Tr(A^p)` for a symmetric positive semidefinite `A`.
fn trace_power(a: &nalgebra::DMatrix<f64>, p: u32) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).powi(p as i32))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMomentPoint {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMomentReport {
    pub p: u32,
    pub points: Vec<TraceMomentPoint>,
    pub sup: f64,
    /// Smallest `C₀` with `sup <= (C₀ p)^p n`; fitted, not certified.
    pub fitted_c0: f64,
}

/// Monte Carlo estimate of `E Tr(Cov(ν_t)^p)` on a ±1 model for each `t`.
pub fn trace_moment_probe(model: &IsingModel, p: u32, t_grid: &[f64], realizations: u64, seed: u64) -> Result<TraceMomentReport> {
    if p == 0 || t_grid.is_empty() {
        return input("need p >= 1 and a nonempty t grid");
    }
    let sampler = SlSampler::new(model, SamplerKind::Oracle)?;
    let mut points = Vec::with_capacity(t_grid.len());
    for (ti, &t) in t_grid.iter().enumerate() {
        let reps = if t == 0.0 { 1 } else { realizations.max(1) };
        let stream = child_seed(seed, Purpose::Replica, ti as u64);
        let vals = (0..reps)
            .map(|r| {
                let m = sampler.boost(t, stream, r)?.boosted_model;
                Ok(trace_power(&gibbs_table(&m)?.mean_and_covariance().1, p))
            })
            .collect::<Result<Vec<f64>>>()?;
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let stderr = if vals.len() > 1 {
            (vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        points.push(TraceMomentPoint { t, mean, stderr });
    }
    let sup = points.iter().map(|q| q.mean).fold(0.0, f64::max);
    let n = model.num_vertices().max(1) as f64;
    Ok(TraceMomentReport {
        p,
        points,
        sup,
        fitted_c0: (sup / n).powf(1.0 / p as f64) / p as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { value: f64 },
    Spin { vertex: usize },
    Magnetization,
}

impl TestFunction {
    fn eval(&self, c: &SpinConfiguration) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::Spin { vertex } => c.value(*vertex),
            TestFunction::Magnetization => (0..c.len()).map(|v| c.value(v)).sum(),
        }
    }

    /// `sup φ - inf φ` over all ±1 configurations on `n` vertices.
    pub fn oscillation(&self, n: usize) -> f64 {
        match self {
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Spin { .. } => 2.0,
            TestFunction::Magnetization => 2.0 * n as f64,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            TestFunction::Spin { vertex } if *vertex >= n => input(format!("vertex {vertex} out of range")),
            _ => Ok(()),
        }
    }
}

fn table_variance(t: &GibbsTable, f: &TestFunction) -> f64 {
    let vals: Vec<f64> = (0..t.len()).map(|i| f.eval(&t.configuration(i))).collect();
    crate::numeric::variance(t.probs(), &vals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakPoincareSettings {
    pub beta: f64,
    pub field: FieldDistribution,
    pub t_final: f64,
    pub delta: f64,
    /// Fitted from trace moments of the first field when absent.
    pub c0: Option<f64>,
    pub functions: Vec<TestFunction>,
    pub field_trials: u64,
    pub realizations: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakPoincareVerdict {
    pub function: TestFunction,
    pub satisfied: u64,
    pub trials: u64,
    pub frequency: f64,
    /// `frequency >= 1 - δ`.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakPoincareReport {
    pub c0: f64,
    pub c0_fitted: bool,
    pub p: f64,
    pub verdicts: Vec<WeakPoincareVerdict>,
}

/// `(e^{-c₀} n/δ)^{1/q} E[Var_{ν_T} φ]^{1/p} osc(φ)^{2/q}` with `p = e^{2T/c₀}`.
pub fn weak_poincare_rhs(n: usize, c0: f64, delta: f64, t_final: f64, mean_var_t: f64, osc: f64) -> f64 {
    let p = (2.0 * t_final / c0).exp();
    let inv_q = 1.0 - 1.0 / p;
    let base = ((-c0).exp() * n as f64 / delta).powf(inv_q);
    base * mean_var_t.max(0.0).powf(1.0 / p) * osc.powf(2.0 * inv_q)
}

/// Evaluates both sides of the weak variance inequality per test function
/// and quenched field; `c₀ = 1/(e C₀)` with `C₀` fitted from trace moments
/// unless given. A diagnostic with fitted constants, not a certificate.
pub fn weak_poincare_probe(g: &Graph, s: &WeakPoincareSettings) -> Result<WeakPoincareReport> {
    if !(s.delta > 0.0 && s.delta < 1.0) || !(s.t_final >= 0.0) || s.field_trials == 0 {
        return input("need δ in (0,1), T >= 0 and at least one field trial");
    }
    let n = g.num_vertices();
    for f in &s.functions {
        f.check(n)?;
    }
    let graph = Arc::new(g.clone());
    let model_for = |trial: u64| -> Result<IsingModel> {
        let h = sample_field(&s.field, n, child_seed(s.seed, Purpose::Field, trial))?;
        IsingModel::with_uniform_coupling(graph.clone(), s.beta, h.values, Convention::PlusMinus)
    };
    let (c0, c0_fitted) = match s.c0 {
        Some(c) if c > 0.0 => (c, false),
        Some(c) => return input(format!("c0 must be positive, got {c}")),
        None => {
            let m = model_for(0)?;
            let grid = [0.0, 0.5 * s.t_final, s.t_final];
            let mut c0_big = 0.0f64;
            for p in 1..=3 {
                let r = trace_moment_probe(&m, p, &grid, s.realizations.max(1), s.seed)?;
                c0_big = c0_big.max(r.fitted_c0);
            }
            (1.0 / (std::f64::consts::E * c0_big.max(f64::MIN_POSITIVE)), true)
        }
    };
    let mut satisfied = vec![0u64; s.functions.len()];
    for trial in 0..s.field_trials {
        let m = model_for(trial)?;
        let base = gibbs_table(&m)?;
        let sampler = SlSampler::new(&m, SamplerKind::Oracle)?;
        let stream = child_seed(s.seed, Purpose::Replica, trial);
        let reps = if s.t_final == 0.0 { 1 } else { s.realizations.max(1) };
        let boosted = (0..reps)
            .map(|r| gibbs_table(&sampler.boost(s.t_final, stream, r)?.boosted_model))
            .collect::<Result<Vec<_>>>()?;
        for (k, f) in s.functions.iter().enumerate() {
            let lhs = table_variance(&base, f);
            let mean_var = boosted.iter().map(|t| table_variance(t, f)).sum::<f64>() / reps as f64;
            let rhs = weak_poincare_rhs(n, c0, s.delta, s.t_final, mean_var, f.oscillation(n));
            satisfied[k] += (lhs <= rhs * (1.0 + 1e-12) + 1e-15) as u64;
        }
    }
    let verdicts = s
        .functions
        .iter()
        .zip(satisfied)
        .map(|(f, k)| {
            let frequency = k as f64 / s.field_trials as f64;
            WeakPoincareVerdict {
                function: f.clone(),
                satisfied: k,
                trials: s.field_trials,
                frequency,
                ok: frequency >= 1.0 - s.delta,
            }
        })
        .collect();
    Ok(WeakPoincareReport {
        c0,
        c0_fitted,
        p: (2.0 * s.t_final / c0).exp(),
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generators;
    use proptest::prelude::*;

    fn pm(g: Graph, beta: f64, h: Vec<f64>) -> IsingModel {
        IsingModel::with_uniform_coupling(Arc::new(g), beta, h, Convention::PlusMinus).unwrap()
    }

    #[test]
    fn boost_at_zero_is_identity() {
        let m = pm(generators::path(4), 0.5, vec![0.3, -0.2, 0.1, 0.0]);
        let r = sl_boost(&m, 0.0, SamplerKind::Oracle, 3).unwrap();
        assert_eq!(r.boosted_model, m);
        let r = sl_boost(&m, 1.5, SamplerKind::Oracle, 3).unwrap();
        for v in 0..4 {
            assert_eq!(r.y[v], 1.5 * r.sigma_star.value(v) + r.noise[v]);
        }
        assert_eq!(r.boosted_model.couplings(), m.couplings());
        assert!(sl_boost(&m.to_zero_one().unwrap(), 1.0, SamplerKind::Oracle, 0).is_err());
    }

    #[test]
    fn large_time_boost_dominates() {
        let m = pm(generators::path(3), 0.5, vec![1.0, -1.0, 0.5]);
        let s = SlSampler::new(&m, SamplerKind::Oracle).unwrap();
        let mut strong = 0u64;
        let draws = 10_000u64;
        for i in 0..draws {
            let r = s.boost(50.0, 9, i).unwrap();
            strong += r.boosted_model.field().iter().all(|h| h.abs() > 1.0) as u64;
        }
        assert!(strong as f64 / draws as f64 >= 0.999);
    }

    #[test]
    fn martingale_small() {
        let m = pm(generators::path(3), 0.5, vec![0.2, -0.4, 0.1]);
        let r = martingale_check(&m, 1.0, 2000, 4, 4.0).unwrap();
        assert_eq!(r.violations, 0, "max z {}", r.max_z);
    }

    #[test]
    fn wsm_examples() {
        let m = pm(generators::path(3), 0.0, vec![0.3, 0.1, -0.2]);
        assert_eq!(wsm_delta(&m, 1, 1).unwrap(), 0.0);
        let m = pm(generators::path(3), 1.0, vec![0.0; 3]);
        assert_eq!(wsm_delta(&m, 1, 2).unwrap(), 0.0);
        assert_eq!(wsm_delta(&m, 1, 0).unwrap(), 1.0);
        // centre of P3 with both ends pinned: P(+ | ++) = e^2/(e^2+e^-2)
        let p = 1.0 / (1.0 + (-4f64).exp());
        assert!((wsm_delta(&m, 1, 1).unwrap() - (2.0 * p - 1.0)).abs() < 1e-13);
        let direct = {
            let t = gibbs_table(&m).unwrap();
            let plus = t.condition(&BTreeMap::from([(0, true), (2, true)])).unwrap().marginal_up(1);
            let minus = t.condition(&BTreeMap::from([(0, false), (2, false)])).unwrap().marginal_up(1);
            plus - minus
        };
        assert!((wsm_delta(&m, 1, 1).unwrap() - direct).abs() < 1e-13);
    }

    #[test]
    fn wsm_estimate_zero_coupling() {
        let s = WsmSettings {
            beta: 0.0,
            field: FieldDistribution::TwoPoint { a: 1.0 },
            radii: vec![1, 2],
            field_trials: 5,
            t: 0.0,
            sl_realizations: 1,
            vertices: vec![],
            seed: 1,
        };
        let r = estimate_wsm(&generators::path(6), &s).unwrap();
        assert!(r.cells.iter().all(|c| c.mean == 0.0));
        assert!(r.satisfied_at(1e-9));
        assert_eq!(r.min_valid_c, 0.0);
        assert!(r.to_csv().starts_with("vertex,radius,mean_delta,stderr\n"));
    }

    #[test]
    fn wsm_estimate_with_localization() {
        let s = WsmSettings {
            beta: 0.5,
            field: FieldDistribution::TwoPoint { a: 1.0 },
            radii: vec![1, 2, 3],
            field_trials: 10,
            t: 1.0,
            sl_realizations: 5,
            vertices: vec![3],
            seed: 2,
        };
        let r = estimate_wsm(&generators::path(7), &s).unwrap();
        assert_eq!(r.cells.len(), 3);
        assert!(r.cells.iter().all(|c| c.sl_stderr >= 0.0 && (0.0..=1.0).contains(&c.mean)));
        assert!(r.satisfied_at(r.min_valid_c));
    }

    #[test]
    fn separation_hand_trace() {
        let g = generators::path(9);
        let plan = build_separation_plan(&g, &[0, 8]).unwrap();
        assert_eq!(plan.r, vec![None, Some(2)]);
        assert_eq!(plan.j, vec![None, Some(0)]);
        assert_eq!(plan.q_buckets, BTreeMap::from([(1, vec![1])]));
        assert_eq!(plan.k_star, Some(1));
        assert_eq!(plan.a_set, vec![1]);
        assert_eq!(plan.ell, vec![None, Some(2)]);

        let plan = build_separation_plan(&g, &[4, 4, 4]).unwrap();
        assert!(plan.a_set.is_empty());
        assert_eq!(plan.r, vec![None, Some(0), Some(0)]);
        let plan = build_separation_plan(&g, &[3]).unwrap();
        assert!(plan.a_set.is_empty() && plan.k_star.is_none());
    }

    #[test]
    fn trace_moment_examples() {
        let m = pm(generators::path(4), 0.0, vec![0.0; 4]);
        let r = trace_moment_probe(&m, 1, &[0.0, 1.0], 50, 1).unwrap();
        assert!((r.points[0].mean - 4.0).abs() < 1e-12);
        assert_eq!(r.points[0].stderr, 0.0);
        assert!(r.points[1].mean <= 4.0 + 1e-12);
    }

    #[test]
    fn weak_poincare_degenerate_cases() {
        let rhs = weak_poincare_rhs(5, 0.7, 0.1, 0.0, 0.37, 2.0);
        assert!((rhs - 0.37).abs() < 1e-15);
        let s = WeakPoincareSettings {
            beta: 0.3,
            field: FieldDistribution::UniformSymmetric { m: 1.0 },
            t_final: 0.0,
            delta: 0.5,
            c0: Some(1.0),
            functions: vec![TestFunction::Constant { value: 3.0 }, TestFunction::Spin { vertex: 1 }],
            field_trials: 5,
            realizations: 1,
            seed: 3,
        };
        let r = weak_poincare_probe(&generators::path(4), &s).unwrap();
        assert!(r.verdicts.iter().all(|v| v.satisfied == 5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn plans_on_cycles_separate(seed in any::<u64>()) {
            let g = generators::cycle(20).unwrap();
            let u = crate::rng::uniforms(seed, Purpose::Experiment, 0, 5);
            let pts: Vec<usize> = u.iter().map(|x| (x * 20.0) as usize).collect();
            let plan = build_separation_plan(&g, &pts).unwrap();
            prop_assert!(plan.separation_holds(&g).unwrap());
        }

        #[test]
        fn wsm_delta_in_unit_interval(beta in 0.0f64..2.0, h in -2.0f64..2.0, ell in 0usize..4) {
            let m = pm(generators::grid(3, 3), beta, vec![h; 9]);
            let d = wsm_delta(&m, 4, ell).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
