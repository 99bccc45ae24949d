//! Exhaustive enumeration oracles for small models.
//!
//! A [`GibbsTable`] lists the probability of every assignment of the free
//! vertices. Entry `i` assigns bit `k` of `i` to the `k`-th free vertex in
//! increasing vertex order; pinned vertices keep their pinned value.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::model::{Convention, IsingModel, SpinConfiguration};
use crate::numeric::{entropy, logistic, xlogx};
use crate::rng::{substream, Purpose};

pub const TABLE_CAP: usize = 24;
pub const SPECTRAL_CAP: usize = 12;
pub const MLSI_CAP: usize = 10;
pub const SWEEP_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsTable {
    model: IsingModel,
    free: Vec<usize>,
    probs: Vec<f64>,
    log_partition: f64,
}

fn check_cap(what: &'static str, actual: usize, limit: usize) -> Result<()> {
    if actual > limit {
        return Err(Error::Capacity {
            what,
            actual,
            limit,
        });
    }
    Ok(())
}

/// Enumerates `μ(σ) ∝ exp H(σ)` over the free vertices in Gray-code order,
/// updating the energy by one local field per step.
pub fn gibbs_table(model: &IsingModel) -> Result<GibbsTable> {
    let free = model.free_vertices();
    let f = free.len();
    check_cap("free vertex count", f, TABLE_CAP)?;
    let size = 1usize << f;
    let mut config = model.constant_configuration(false);
    let mut log_w = vec![0.0; size];
    let mut energy = model.hamiltonian(&config)?;
    log_w[0] = energy;
    let mut index = 0usize;
    for step in 1..size {
        let k = step.trailing_zeros() as usize;
        let v = free[k];
        let odds = model.log_odds_up(v, |w| config.get(w));
        if config.get(v) {
            energy -= odds;
        } else {
            energy += odds;
        }
        config.set(v, !config.get(v));
        index ^= 1 << k;
        log_w[index] = energy;
    }
    Ok(GibbsTable::from_log_weights(model.clone(), free, log_w))
}

/// Table of `μ^τ` with `τ` the model's pinning extended by `extra`.
pub fn conditional_table(model: &IsingModel, extra: &BTreeMap<usize, bool>) -> Result<GibbsTable> {
    gibbs_table(&model.pin(extra)?)
}

impl GibbsTable {
    /// Normalizes unnormalized log-weights indexed like the table.
    pub fn from_log_weights(model: IsingModel, free: Vec<usize>, mut log_w: Vec<f64>) -> Self {
        let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for w in log_w.iter_mut() {
            *w = (*w - m).exp();
            z += *w;
        }
        for w in log_w.iter_mut() {
            *w /= z;
        }
        GibbsTable {
            model,
            free,
            probs: log_w,
            log_partition: m + z.ln(),
        }
    }

    pub fn model(&self) -> &IsingModel {
        &self.model
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    pub fn convention(&self) -> Convention {
        self.model.convention()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Full configuration for table entry `index`.
    pub fn configuration(&self, index: usize) -> SpinConfiguration {
        let base = self.model.constant_configuration(false);
        SpinConfiguration::from_index(&base, &self.free, index)
    }

    /// Whether vertex `v` is up in entry `index` (pinned vertices included).
    #[inline]
    pub fn is_up(&self, index: usize, v: usize) -> bool {
        match self.free.binary_search(&v) {
            Ok(k) => index >> k & 1 == 1,
            Err(_) => self.model.pinning()[&v],
        }
    }

    pub fn index_of(&self, c: &SpinConfiguration) -> Result<usize> {
        self.model.check_configuration(c)?;
        if !self.model.respects_pinning(c) {
            return input("configuration violates the table's pinning");
        }
        Ok(c.index_over(&self.free))
    }

    pub fn prob_of(&self, c: &SpinConfiguration) -> Result<f64> {
        Ok(self.probs[self.index_of(c)?])
    }

    /// Probability of an event given as a predicate on table indices.
    pub fn event_prob(&self, event: impl Fn(usize) -> bool) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| event(*i))
            .map(|(_, p)| p)
            .sum()
    }

    pub fn marginal_up(&self, v: usize) -> f64 {
        self.event_prob(|i| self.is_up(i, v))
    }

    /// Renormalized slice of this table on a larger pinning.
    pub fn condition(&self, extra: &BTreeMap<usize, bool>) -> Result<GibbsTable> {
        let model = self.model.pin(extra)?;
        let free = model.free_vertices();
        let mut probs = vec![0.0; 1 << free.len()];
        let mut mass = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            if extra.iter().all(|(&v, &s)| self.is_up(i, v) == s) {
                let mut j = 0usize;
                for (k, &v) in free.iter().enumerate() {
                    if self.is_up(i, v) {
                        j |= 1 << k;
                    }
                }
                probs[j] += p;
                mass += p;
            }
        }
        if mass <= 0.0 {
            return Err(Error::Infeasible("conditioning event has probability zero".into()));
        }
        for p in probs.iter_mut() {
            *p /= mass;
        }
        Ok(GibbsTable {
            model,
            free,
            probs,
            log_partition: self.log_partition + mass.ln(),
        })
    }

    /// Exact mean vector and covariance matrix of the free spins, in the
    /// table's convention.
    pub fn mean_and_covariance(&self) -> (DVector<f64>, DMatrix<f64>) {
        let f = self.free.len();
        let conv = self.convention();
        let mut mean = DVector::<f64>::zeros(f);
        let mut second = DMatrix::<f64>::zeros(f, f);
        let mut vals = vec![0.0; f];
        for (i, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (k, val) in vals.iter_mut().enumerate() {
                *val = conv.value(i >> k & 1 == 1);
            }
            for a in 0..f {
                mean[a] += p * vals[a];
                for b in 0..f {
                    second[(a, b)] += p * vals[a] * vals[b];
                }
            }
        }
        let cov = second - &mean * mean.transpose();
        (mean, cov)
    }

    /// Little-endian export: `u64` free count, the free vertex ids as `u64`,
    /// then `2^f` probabilities as `f64`.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (1 + self.free.len() + self.probs.len()));
        out.extend_from_slice(&(self.free.len() as u64).to_le_bytes());
        for &v in &self.free {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &p in &self.probs {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn to_json(&self) -> TableJson {
        TableJson {
            convention: self.convention(),
            free_vertices: self.free.clone(),
            log_partition: self.log_partition,
            probs: self.probs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableJson {
    pub convention: Convention,
    pub free_vertices: Vec<usize>,
    pub log_partition: f64,
    pub probs: Vec<f64>,
}

/// Parses the binary export back into `(free vertices, probabilities)`.
pub fn table_from_le_bytes(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let word = |k: usize| -> Result<[u8; 8]> {
        bytes
            .get(8 * k..8 * k + 8)
            .map(|s| s.try_into().unwrap())
            .ok_or_else(|| Error::Input("truncated table".into()))
    };
    let f = u64::from_le_bytes(word(0)?) as usize;
    check_cap("free vertex count", f, TABLE_CAP)?;
    let free = (0..f)
        .map(|k| Ok(u64::from_le_bytes(word(1 + k)?) as usize))
        .collect::<Result<Vec<_>>>()?;
    let probs = (0..1usize << f)
        .map(|k| Ok(f64::from_le_bytes(word(1 + f + k)?)))
        .collect::<Result<Vec<_>>>()?;
    if bytes.len() != 8 * (1 + f + (1 << f)) {
        return input("trailing bytes after table");
    }
    Ok((free, probs))
}

/// `½ Σ |p - q|` over a common index space.
pub fn tv_distance(a: &GibbsTable, b: &GibbsTable) -> Result<f64> {
    if a.free != b.free || a.model.num_vertices() != b.model.num_vertices() {
        return input("tables are indexed by different free vertex sets");
    }
    Ok(0.5
        * a.probs
            .iter()
            .zip(&b.probs)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>())
}

/// `½ Σ |p - q|` for raw probability vectors of equal length.
pub fn tv_vectors(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn edge_event_masks(table: &GibbsTable) -> Vec<Vec<bool>> {
    table
        .model
        .graph()
        .edges()
        .iter()
        .map(|&(u, v)| {
            (0..table.len())
                .map(|i| table.is_up(i, u) && table.is_up(i, v))
                .collect()
        })
        .collect()
}

/// Second-order correlation matrix over edges: entry `(uv, wz)` is
/// `μ(wz | uv) - μ(wz)` with `uv = {σ_u = σ_v = 1}`, and a zero row when
/// `μ(uv) = 0`. Computed as a ratio of joint probabilities.
pub fn cor2_matrix(table: &GibbsTable) -> Result<DMatrix<f64>> {
    table.model.require_convention(Convention::ZeroOne)?;
    let masks = edge_event_masks(table);
    let m = masks.len();
    let marg: Vec<f64> = masks
        .iter()
        .map(|mask| table.event_prob(|i| mask[i]))
        .collect();
    let mut out = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        if marg[a] <= 0.0 {
            continue;
        }
        for b in 0..m {
            let joint = table.event_prob(|i| masks[a][i] && masks[b][i]);
            out[(a, b)] = joint / marg[a] - marg[b];
        }
    }
    Ok(out)
}

/// The same matrix computed by pinning both endpoints of the row edge and
/// renormalizing; an independent path used to cross-check [`cor2_matrix`].
pub fn cor2_matrix_by_conditioning(table: &GibbsTable) -> Result<DMatrix<f64>> {
    table.model.require_convention(Convention::ZeroOne)?;
    let edges = table.model.graph().edges().to_vec();
    let m = edges.len();
    let marg: Vec<f64> = edges
        .iter()
        .map(|&(w, z)| table.event_prob(|i| table.is_up(i, w) && table.is_up(i, z)))
        .collect();
    let mut out = DMatrix::<f64>::zeros(m, m);
    for (a, &(u, v)) in edges.iter().enumerate() {
        let cond = match table.condition(&BTreeMap::from([(u, true), (v, true)])) {
            Ok(t) => t,
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        };
        for (b, &(w, z)) in edges.iter().enumerate() {
            let p = cond.event_prob(|i| cond.is_up(i, w) && cond.is_up(i, z));
            out[(a, b)] = p - marg[b];
        }
    }
    Ok(out)
}

/// Heat-bath probabilities `P(x_i = up | x_{-i})` for every table entry and
/// free coordinate, stored row-major as `[x * f + i]`.
fn heat_bath_probs(model: &IsingModel, free: &[usize]) -> Vec<f64> {
    let f = free.len();
    let base = model.constant_configuration(false);
    let mut out = vec![0.0; f << f];
    for x in 0..1usize << f {
        let c = SpinConfiguration::from_index(&base, free, x);
        for (k, &v) in free.iter().enumerate() {
            out[x * f + k] = logistic(model.log_odds_up(v, |w| c.get(w)));
        }
    }
    out
}

/// Dense Glauber transition matrix on the free coordinates: a free vertex is
/// chosen with probability `1/f` and resampled from its conditional law.
pub fn glauber_transition_matrix(model: &IsingModel) -> Result<DMatrix<f64>> {
    let free = model.free_vertices();
    let f = free.len();
    check_cap("free vertex count", f, SPECTRAL_CAP)?;
    if f == 0 {
        return input("model has no free vertices");
    }
    let up = heat_bath_probs(model, &free);
    let size = 1usize << f;
    let mut p = DMatrix::<f64>::zeros(size, size);
    let w = 1.0 / f as f64;
    for x in 0..size {
        for k in 0..f {
            let q = up[x * f + k];
            p[(x, x | 1 << k)] += w * q;
            p[(x, x & !(1 << k))] += w * (1.0 - q);
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// `1 - λ₂` of the transition matrix.
    pub gap: f64,
    /// Minimum of the Dirichlet form over the variance.
    pub gap_rayleigh: f64,
    pub at_variance_constant: f64,
    pub mlsi_lower_estimate: Option<f64>,
    pub free_vertices: usize,
    pub notes: Vec<String>,
}

/// Spectral gap computed twice: from the symmetrized transition matrix and
/// from the Dirichlet form `(1/(2f)) Σ_{σ~σ'} μμ'/(μ+μ') (φ(σ)-φ(σ'))²`
/// (ordered pairs differing at one free site) against the variance.
pub fn glauber_gap(model: &IsingModel) -> Result<SpectralReport> {
    let f = model.num_free();
    check_cap("free vertex count", f, SPECTRAL_CAP)?;
    let gap = gap_from_transition(model)?;
    let table = gibbs_table(model)?;
    let gap_rayleigh = gap_from_dirichlet(&table)?;
    let at_var = at_variance_from_table(&table)?;
    Ok(SpectralReport {
        gap,
        gap_rayleigh,
        at_variance_constant: at_var,
        mlsi_lower_estimate: None,
        free_vertices: f,
        notes: vec![
            "heat-bath update, vertex chosen uniformly among free vertices".into(),
            "gap = 1 - second largest eigenvalue (not the absolute gap)".into(),
        ],
    })
}

fn second_largest(mut eig: Vec<f64>) -> f64 {
    eig.sort_by(|a, b| b.total_cmp(a));
    eig.get(1).copied().unwrap_or(f64::NEG_INFINITY)
}

fn smallest(eig: &[f64]) -> f64 {
    eig.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Path (a): reversibility makes `sqrt(P_xy P_yx)` the symmetrization
/// `D^{1/2} P D^{-1/2}` without reference to `μ`.
fn gap_from_transition(model: &IsingModel) -> Result<f64> {
    let p = glauber_transition_matrix(model)?;
    let size = p.nrows();
    if size == 2 {
        // one free vertex: P has rank one
        return Ok(1.0 - (p[(0, 0)] + p[(1, 1)] - 1.0));
    }
    let s = DMatrix::from_fn(size, size, |x, y| {
        if x == y {
            p[(x, x)]
        } else {
            (p[(x, y)] * p[(y, x)]).sqrt()
        }
    });
    Ok(1.0 - second_largest(s.symmetric_eigenvalues().iter().copied().collect()))
}

/// Weights `μ(x)μ(y)/(μ(x)+μ(y))` for the unordered pairs `{x, x ⊕ e_k}`.
fn pair_weight(px: f64, py: f64) -> f64 {
    if px + py > 0.0 {
        px * py / (px + py)
    } else {
        0.0
    }
}

/// Smallest eigenvalue of `D^{-1/2} Q D^{-1/2}` on the complement of the
/// constant mode, where `Q` is the quadratic form `Σ_pairs w (Δφ)²` scaled
/// by `scale`.
fn generalized_min(table: &GibbsTable, scale: f64) -> Result<f64> {
    let f = table.num_free();
    if f == 0 {
        return input("model has no free vertices");
    }
    let size = table.len();
    let pi = &table.probs;
    if pi.iter().any(|&p| p <= 0.0) {
        return input("table has zero-probability states; variance form is singular");
    }
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let mut m = DMatrix::<f64>::zeros(size, size);
    for x in 0..size {
        for k in 0..f {
            let y = x ^ (1 << k);
            if y < x {
                continue;
            }
            let w = scale * pair_weight(pi[x], pi[y]);
            m[(x, x)] += w / pi[x];
            m[(y, y)] += w / pi[y];
            let off = w / (sq[x] * sq[y]);
            m[(x, y)] -= off;
            m[(y, x)] -= off;
        }
    }
    // lift the constant mode (eigenvector √μ, eigenvalue 0) out of the way
    let lift = 2.0 * scale.max(1.0) * f as f64;
    for x in 0..size {
        for y in 0..size {
            m[(x, y)] += lift * sq[x] * sq[y];
        }
    }
    Ok(smallest(m.symmetric_eigenvalues().as_slice()))
}

/// Path (b): `inf ℰ(φ,φ)/Var(φ)` with `ℰ = (1/f) Σ_pairs w (Δφ)²`.
fn gap_from_dirichlet(table: &GibbsTable) -> Result<f64> {
    generalized_min(table, 1.0 / table.num_free() as f64)
}

/// `sup Var(φ) / Σ_i E[Var(φ | x_{-i})]`; the single-site conditional
/// variance of a two-point law with masses `a, b` is `ab/(a+b)² (Δφ)²`.
fn at_variance_from_table(table: &GibbsTable) -> Result<f64> {
    Ok(1.0 / generalized_min(table, 1.0)?)
}

/// Approximate tensorization constant of variance for the model's measure.
pub fn at_variance_constant(model: &IsingModel) -> Result<f64> {
    check_cap("free vertex count", model.num_free(), SPECTRAL_CAP)?;
    at_variance_from_table(&gibbs_table(model)?)
}

/// Sparse heat-bath operator on a table's index space.
struct HeatBath {
    f: usize,
    up: Vec<f64>,
}

impl HeatBath {
    fn new(table: &GibbsTable) -> Self {
        HeatBath {
            f: table.num_free(),
            up: heat_bath_probs(&table.model, &table.free),
        }
    }

    fn apply(&self, g: &[f64], out: &mut [f64]) {
        let f = self.f;
        let w = 1.0 / f as f64;
        for (x, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..f {
                let q = self.up[x * f + k];
                s += q * g[x | 1 << k] + (1.0 - q) * g[x & !(1 << k)];
            }
            *o = w * s;
        }
    }
}

/// `(Ent f - Ent Pf) / Ent f` for a nonnegative, nonconstant `f`.
fn mlsi_ratio(pi: &[f64], hb: &HeatBath, f: &[f64], scratch: &mut [f64]) -> f64 {
    let ent = entropy(pi, f);
    if ent <= 0.0 {
        return f64::INFINITY;
    }
    hb.apply(f, scratch);
    (ent - entropy(pi, scratch)) / ent
}

struct MlsiObjective<'a> {
    pi: &'a [f64],
    hb: &'a HeatBath,
    pf: Vec<f64>,
    lpf: Vec<f64>,
    plpf: Vec<f64>,
}

impl MlsiObjective<'_> {
    /// Ratio and gradient with respect to `g` where `f = exp(g)`.
    fn eval(&mut self, g: &[f64], grad: &mut [f64]) -> f64 {
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let f: Vec<f64> = g.iter().map(|x| (x - gmax).exp()).collect();
        let pi = self.pi;
        let mean: f64 = pi.iter().zip(&f).map(|(p, x)| p * x).sum();
        let ent_f = entropy(pi, &f);
        if ent_f <= 1e-300 {
            grad.iter_mut().for_each(|x| *x = 0.0);
            return f64::INFINITY;
        }
        self.hb.apply(&f, &mut self.pf);
        let ent_pf = entropy(pi, &self.pf);
        for (l, p) in self.lpf.iter_mut().zip(&self.pf) {
            *l = (p / mean).ln();
        }
        self.hb.apply(&self.lpf, &mut self.plpf);
        let ratio = (ent_f - ent_pf) / ent_f;
        for x in 0..g.len() {
            let d_a = pi[x] * (f[x] / mean).ln();
            let d_b = pi[x] * self.plpf[x];
            grad[x] = f[x] * ((1.0 - ratio) * d_a - d_b) / ent_f;
        }
        ratio
    }
}

fn descend(obj: &mut MlsiObjective<'_>, g: &mut [f64], iters: usize) -> f64 {
    let n = g.len();
    let mut grad = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut val = obj.eval(g, &mut grad);
    let mut step = 1.0;
    for _ in 0..iters {
        let norm2: f64 = grad.iter().map(|x| x * x).sum();
        if !val.is_finite() || norm2 < 1e-30 {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let scale = step / norm2.sqrt();
            for x in 0..n {
                trial[x] = g[x] - scale * grad[x];
            }
            let tv = obj.eval(&trial, &mut trial_grad);
            if tv < val - 1e-4 * step * norm2.sqrt() {
                g.copy_from_slice(&trial);
                grad.copy_from_slice(&trial_grad);
                val = tv;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    val
}

/// Heuristic estimate of `ρ_LS = 1 - sup Ent[Pf]/Ent[f]` by minimizing the
/// ratio over deterministic candidates (indicators of single states and of
/// single-spin events) and `restarts` random starts refined by gradient
/// descent in `log f`. Being an infimum estimate it upper-bounds `ρ_LS`.
pub fn mlsi_lower_estimate(model: &IsingModel, restarts: usize, seed: u64) -> Result<f64> {
    let f = model.num_free();
    check_cap("free vertex count", f, MLSI_CAP)?;
    if f == 0 {
        return input("model has no free vertices");
    }
    let table = gibbs_table(model)?;
    let hb = HeatBath::new(&table);
    let pi = table.probs();
    let size = pi.len();
    let mut scratch = vec![0.0; size];
    let mut best = f64::INFINITY;

    let mut candidate = vec![0.0; size];
    for x in 0..size {
        candidate.iter_mut().for_each(|c| *c = 0.0);
        candidate[x] = 1.0;
        best = best.min(mlsi_ratio(pi, &hb, &candidate, &mut scratch));
    }
    for k in 0..f {
        for up in [false, true] {
            for (x, c) in candidate.iter_mut().enumerate() {
                *c = if (x >> k & 1 == 1) == up { 1.0 } else { 0.0 };
            }
            best = best.min(mlsi_ratio(pi, &hb, &candidate, &mut scratch));
        }
    }

    let mut obj = MlsiObjective {
        pi,
        hb: &hb,
        pf: vec![0.0; size],
        lpf: vec![0.0; size],
        plpf: vec![0.0; size],
    };
    let mut rng = substream(seed, Purpose::Optimizer, 0);
    let mut g = vec![0.0; size];
    for _ in 0..restarts {
        let spread = 0.25 * (20.0f64).powf(rng.random::<f64>());
        let normal = Normal::new(0.0, spread).unwrap();
        for x in g.iter_mut() {
            *x = normal.sample(&mut rng);
        }
        best = best.min(descend(&mut obj, &mut g, 40));
    }
    Ok(best.clamp(0.0, 1.0))
}

/// Exact MLSI ratio of the single free-vertex chain for `f = (x, 1)`.
pub fn two_point_mlsi_ratio(p_up: f64, x: f64) -> f64 {
    let pi = [1.0 - p_up, p_up];
    let f = [x, 1.0];
    let ent = entropy(&pi, &f);
    let mean = pi[0] * x + pi[1];
    // Pf is the constant mean for a single free vertex
    let ent_pf = pi.iter().map(|p| p * xlogx(mean)).sum::<f64>() - xlogx(mean);
    (ent - ent_pf) / ent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepExtremum {
    pub value: f64,
    /// Ternary code per vertex: 0 free, 1 pinned down, 2 pinned up.
    pub pinning: Vec<u8>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cor2SweepReport {
    pub max_row_sum: SweepExtremum,
    pub max_col_sum: SweepExtremum,
    pub max_opnorm: SweepExtremum,
    /// Per edge, the supremum of its absolute row sum.
    pub edge_row_sup: Vec<f64>,
    /// Per edge, the supremum of its absolute column sum.
    pub edge_col_sup: Vec<f64>,
    /// Largest `opnorm - sqrt(rowmax * colmax)` over all cells.
    pub worst_interpolation_slack: f64,
    pub cells: usize,
}

/// Absolute row sums, column sums and spectral norm of a square matrix.
pub fn row_col_opnorm(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, f64) {
    let rows = (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum())
        .collect();
    let cols = (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum())
        .collect();
    let op = if m.is_empty() {
        0.0
    } else {
        m.clone()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    };
    (rows, cols, op)
}

fn decode_pinning(code: &[u8]) -> BTreeMap<usize, bool> {
    code.iter()
        .enumerate()
        .filter(|(_, &c)| c != 0)
        .map(|(v, &c)| (v, c == 2))
        .collect()
}

/// Advances a ternary counter with vertex 0 as the most significant digit.
fn next_code(code: &mut [u8]) -> bool {
    for d in code.iter_mut().rev() {
        if *d < 2 {
            *d += 1;
            return true;
        }
        *d = 0;
    }
    false
}

/// Maximizes row sums, column sums and the operator norm of `Cor^(2)` of
/// `(1-θ) ⊗ μ^τ` over every pinning `τ` of the model's free vertices and
/// every `θ` in the grid. Pinnings are visited in lexicographic ternary
/// order, so ties resolve to the smallest code.
pub fn sup_cor2_over_pinnings(model01: &IsingModel, theta_grid: &[f64]) -> Result<Cor2SweepReport> {
    model01.require_convention(Convention::ZeroOne)?;
    let free = model01.free_vertices();
    check_cap("free vertex count", free.len(), SWEEP_CAP)?;
    if theta_grid.is_empty() {
        return input("theta grid is empty");
    }
    let m = model01.graph().num_edges();
    let n = model01.num_vertices();
    let empty = SweepExtremum {
        value: f64::NEG_INFINITY,
        pinning: vec![0; n],
        theta: theta_grid[0],
    };
    let mut report = Cor2SweepReport {
        max_row_sum: empty.clone(),
        max_col_sum: empty.clone(),
        max_opnorm: empty,
        edge_row_sup: vec![0.0; m],
        edge_col_sup: vec![0.0; m],
        worst_interpolation_slack: f64::NEG_INFINITY,
        cells: 0,
    };
    let mut code = vec![0u8; free.len()];
    loop {
        let local = decode_pinning(&code);
        let tau: BTreeMap<usize, bool> = local.iter().map(|(&k, &s)| (free[k], s)).collect();
        let mut full_code = vec![0u8; n];
        for (&v, &s) in model01.pinning().iter().chain(tau.iter()) {
            full_code[v] = if s { 2 } else { 1 };
        }
        for &theta in theta_grid {
            let tilted = model01.edge_tilt(theta, &tau)?;
            let cor = cor2_matrix(&gibbs_table(&tilted)?)?;
            let (rows, cols, op) = row_col_opnorm(&cor);
            let rmax = rows.iter().copied().fold(0.0, f64::max);
            let cmax = cols.iter().copied().fold(0.0, f64::max);
            for e in 0..m {
                report.edge_row_sup[e] = report.edge_row_sup[e].max(rows[e]);
                report.edge_col_sup[e] = report.edge_col_sup[e].max(cols[e]);
            }
            let update = |ext: &mut SweepExtremum, value: f64| {
                if value > ext.value {
                    *ext = SweepExtremum {
                        value,
                        pinning: full_code.clone(),
                        theta,
                    };
                }
            };
            update(&mut report.max_row_sum, rmax);
            update(&mut report.max_col_sum, cmax);
            update(&mut report.max_opnorm, op);
            report.worst_interpolation_slack = report
                .worst_interpolation_slack
                .max(op - (rmax * cmax).sqrt());
            report.cells += 1;
        }
        if !next_code(&mut code) {
            break;
        }
    }
    Ok(report)
}
