//! Edge-field noising and denoising.
//!
//! Each edge `uv` carries the event `A_uv = {x_u = x_v = 1}` and an
//! independent uniform `U_uv`. At time `t` the revealed set is
//! `{uv : x ∈ A_uv, U_uv <= t}`. Given the revealed set `S` at time `t < 1`,
//! the posterior of `x` is `μ(x) (1-t)^{|Z(x) \ S|} 1[S ⊆ Z(x)]` up to
//! normalization, where `Z(x)` is the set of satisfied events; this is the
//! edge tilt of `μ` pinned to 1 on the endpoints of `S`.

use std::collections::{BTreeMap, HashMap};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::glauber::run_chain;
use crate::model::{Convention, IsingModel, SpinConfiguration};
use crate::oracle::{gibbs_table, GibbsTable};
use crate::rng::{child_seed, substream, uniform, Purpose};

/// How the clean sample `x ~ μ` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Oracle,
    LongGlauber { steps: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoisingTrace {
    pub x_sample: SpinConfiguration,
    pub edge_uniforms: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

impl DenoisingTrace {
    pub fn new(model01: &IsingModel, x_sample: SpinConfiguration, edge_uniforms: Vec<f64>) -> Result<Self> {
        model01.require_convention(Convention::ZeroOne)?;
        model01.check_configuration(&x_sample)?;
        if edge_uniforms.len() != model01.graph().num_edges() {
            return input("one uniform per edge is required");
        }
        Ok(DenoisingTrace {
            x_sample,
            edge_uniforms,
            edges: model01.graph().edges().to_vec(),
        })
    }

    /// Indices of edges whose event holds in the clean sample.
    pub fn satisfied(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(u, v))| self.x_sample.get(u) && self.x_sample.get(v))
            .map(|(e, _)| e)
            .collect()
    }

    /// Edge indices revealed by time `t`, increasing.
    pub fn revealed(&self, t: f64) -> Vec<usize> {
        self.satisfied()
            .into_iter()
            .filter(|&e| self.edge_uniforms[e] <= t)
            .collect()
    }
}

/// Draws clean samples and traces for one model, caching its table.
pub struct NoisingSampler<'a> {
    model: &'a IsingModel,
    kind: SamplerKind,
    cdf: Option<(GibbsTable, Vec<f64>)>,
}

impl<'a> NoisingSampler<'a> {
    pub fn new(model01: &'a IsingModel, kind: SamplerKind) -> Result<Self> {
        model01.require_convention(Convention::ZeroOne)?;
        let cdf = match kind {
            SamplerKind::Oracle => {
                let t = gibbs_table(model01)?;
                let cdf = t
                    .probs()
                    .iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect();
                Some((t, cdf))
            }
            SamplerKind::LongGlauber { .. } => None,
        };
        Ok(NoisingSampler {
            model: model01,
            kind,
            cdf,
        })
    }

    /// Draws `x ~ μ` using `rng` (oracle) or a seeded long chain.
    pub fn draw(&self, rng: &mut impl RngCore) -> Result<SpinConfiguration> {
        match (&self.cdf, self.kind) {
            (Some((table, cdf)), _) => Ok(table.configuration(inverse_cdf(cdf, uniform(rng)))),
            (None, SamplerKind::LongGlauber { steps }) => {
                let init = self.model.constant_configuration(false);
                Ok(run_chain(self.model, init, steps, rng.next_u64(), None)?.state.config)
            }
            (None, SamplerKind::Oracle) => unreachable!("oracle sampler always has a table"),
        }
    }

    /// Trace number `index` of `seed`: one draw of `x`, then one uniform per edge.
    pub fn trace(&self, seed: u64, index: u64) -> Result<DenoisingTrace> {
        let mut rng = substream(seed, Purpose::Trace, index);
        let x = self.draw(&mut rng)?;
        let u = (0..self.model.graph().num_edges())
            .map(|_| uniform(&mut rng))
            .collect();
        DenoisingTrace::new(self.model, x, u)
    }
}

/// Smallest index whose cumulative probability exceeds `u`.
pub fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

pub fn sample_noising_trace(model01: &IsingModel, kind: SamplerKind, seed: u64) -> Result<DenoisingTrace> {
    NoisingSampler::new(model01, kind)?.trace(seed, 0)
}

/// Edge tilt at time `t` with both endpoints of every revealed edge pinned to 1.
pub fn posterior_model(model01: &IsingModel, t: f64, revealed: &[usize]) -> Result<IsingModel> {
    model01.require_convention(Convention::ZeroOne)?;
    if !(0.0..1.0).contains(&t) {
        return input(format!("posterior time must lie in [0,1), got {t}"));
    }
    let edges = model01.graph().edges();
    let mut pins = BTreeMap::new();
    for &e in revealed {
        let &(u, v) = edges
            .get(e)
            .ok_or_else(|| crate::Error::Input(format!("edge index {e} out of range")))?;
        pins.insert(u, true);
        pins.insert(v, true);
    }
    model01.edge_tilt(t, &pins)
}

/// `P(revealed(t) = S | x) = t^{|S|} (1-t)^{|Z(x)| - |S|} 1[S ⊆ Z(x)]`.
fn revealed_likelihood(satisfied: &[bool], s: &[usize], t: f64) -> f64 {
    if s.iter().any(|&e| !satisfied[e]) {
        return 0.0;
    }
    let z = satisfied.iter().filter(|&&b| b).count();
    t.powi(s.len() as i32) * (1.0 - t).powi((z - s.len()) as i32)
}

fn satisfied_events(table: &GibbsTable, index: usize) -> Vec<bool> {
    table
        .model()
        .graph()
        .edges()
        .iter()
        .map(|&(u, v)| table.is_up(index, u) && table.is_up(index, v))
        .collect()
}

/// Exact `Law(x | revealed(t) = S)` by Bayes over the product of `μ` and the
/// edge uniforms, indexed like the base table. `None` when `P(S) = 0`.
pub fn bayes_posterior(base: &GibbsTable, t: f64, s: &[usize]) -> Option<Vec<f64>> {
    let mut post: Vec<f64> = (0..base.len())
        .map(|i| base.probs()[i] * revealed_likelihood(&satisfied_events(base, i), s, t))
        .collect();
    let z: f64 = post.iter().sum();
    if z <= 0.0 {
        return None;
    }
    post.iter_mut().for_each(|p| *p /= z);
    Some(post)
}

/// Revealed sets of positive probability at time `t`, with their probability.
pub fn positive_revealed_sets(base: &GibbsTable, t: f64) -> Result<Vec<(Vec<usize>, f64)>> {
    let m = base.model().graph().num_edges();
    if m > 20 {
        return Err(crate::Error::Capacity {
            what: "edge count for revealed-set enumeration",
            actual: m,
            limit: 20,
        });
    }
    let sat: Vec<Vec<bool>> = (0..base.len()).map(|i| satisfied_events(base, i)).collect();
    let mut out = Vec::new();
    for mask in 0u32..1 << m {
        let s: Vec<usize> = (0..m).filter(|&e| mask >> e & 1 == 1).collect();
        let p: f64 = (0..base.len())
            .map(|i| base.probs()[i] * revealed_likelihood(&sat[i], &s, t))
            .sum();
        if p > 0.0 {
            out.push((s, p));
        }
    }
    Ok(out)
}

/// Posterior table of `posterior_model` spread onto the base index space.
pub fn posterior_on_base(base: &GibbsTable, post: &GibbsTable) -> Vec<f64> {
    (0..base.len())
        .map(|i| {
            let consistent = post
                .model()
                .pinning()
                .iter()
                .all(|(&v, &s)| base.is_up(i, v) == s);
            if consistent {
                let j = post
                    .free_vertices()
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (k, &v)| acc | (usize::from(base.is_up(i, v)) << k));
                post.probs()[j]
            } else {
                0.0
            }
        })
        .collect()
}

/// Largest `|Bayes posterior - posterior_model table|` over every revealed set
/// of positive probability at time `t`.
pub fn posterior_identity_error(model01: &IsingModel, t: f64) -> Result<f64> {
    let base = gibbs_table(model01)?;
    let mut worst: f64 = 0.0;
    for (s, _) in positive_revealed_sets(&base, t)? {
        let bayes = bayes_posterior(&base, t, &s).expect("positive probability");
        let post = gibbs_table(&posterior_model(model01, t, &s)?)?;
        let spread = posterior_on_base(&base, &post);
        for (a, b) in bayes.iter().zip(&spread) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Largest `|table - product of its marginals|` over all entries.
pub fn product_defect(table: &GibbsTable) -> f64 {
    let marg: Vec<f64> = table
        .free_vertices()
        .iter()
        .map(|&v| table.marginal_up(v))
        .collect();
    (0..table.len())
        .map(|i| {
            let prod: f64 = marg
                .iter()
                .enumerate()
                .map(|(k, &p)| if i >> k & 1 == 1 { p } else { 1.0 - p })
                .product();
            (prod - table.probs()[i]).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub revealed: Vec<usize>,
    pub hits: u64,
    pub tv: f64,
    /// `½ Σ sqrt(p(1-p)/hits)` for the posterior law `p`.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSimulationReport {
    pub t: f64,
    pub traces: u64,
    pub min_hits: u64,
    pub buckets: Vec<BucketReport>,
    /// Max TV over buckets with at least `min_hits` hits.
    pub max_tv: f64,
}

/// Buckets Monte Carlo traces by their revealed set at `t` and compares the
/// empirical law of `x` in each bucket with the posterior table.
pub fn verify_posterior_by_simulation(
    model01: &IsingModel,
    t: f64,
    traces: u64,
    seed: u64,
    min_hits: u64,
) -> Result<PosteriorSimulationReport> {
    let sampler = NoisingSampler::new(model01, SamplerKind::Oracle)?;
    let base = gibbs_table(model01)?;
    let free = model01.free_vertices();
    let mut counts: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
    for k in 0..traces {
        let tr = sampler.trace(seed, k)?;
        let entry = counts
            .entry(tr.revealed(t))
            .or_insert_with(|| vec![0; base.len()]);
        entry[tr.x_sample.index_over(&free)] += 1;
    }
    let mut keys: Vec<_> = counts.keys().cloned().collect();
    keys.sort();
    let mut buckets = Vec::new();
    let mut max_tv: f64 = 0.0;
    for s in keys {
        let c = &counts[&s];
        let hits: u64 = c.iter().sum();
        let post = posterior_on_base(&base, &gibbs_table(&posterior_model(model01, t, &s)?)?);
        let h = hits as f64;
        let tv = 0.5
            * c.iter()
                .zip(&post)
                .map(|(&k, p)| (k as f64 / h - p).abs())
                .sum::<f64>();
        let noise = 0.5 * post.iter().map(|p| (p * (1.0 - p) / h).sqrt()).sum::<f64>();
        if hits >= min_hits {
            max_tv = max_tv.max(tv);
        }
        buckets.push(BucketReport {
            revealed: s,
            hits,
            tv,
            noise,
        });
    }
    Ok(PosteriorSimulationReport {
        t,
        traces,
        min_hits,
        buckets,
        max_tv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConservationKind {
    Variance,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationCertificate {
    pub kind: ConservationKind,
    pub theta: f64,
    pub inputs: BTreeMap<String, f64>,
    pub r: f64,
    pub log_r: f64,
    pub formula_id: String,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `R = exp ∫₀^θ C/(1-t) dt = (1-θ)^{-C}`.
pub fn variance_conservation_r(c: f64, theta: f64) -> Result<ConservationCertificate> {
    if c.is_nan() || c < 0.0 {
        return input(format!("rate bound must be nonnegative, got {c}"));
    }
    if !(0.0..1.0).contains(&theta) {
        return input(format!("theta must lie in [0,1), got {theta}"));
    }
    let log_r = -c * (1.0 - theta).ln();
    Ok(ConservationCertificate {
        kind: ConservationKind::Variance,
        theta,
        inputs: BTreeMap::from([("c".into(), c)]),
        r: log_r.exp(),
        log_r,
        formula_id: "variance-conservation: R = (1-theta)^(-C)".into(),
    })
}

/// `L = (K_low+1)(η_op-1)+1`, `ES = L/(1-(1-θ)^L)`, `R = 1 + ES/(L(1-θ)^L)`.
pub fn entropy_conservation_r(eta_op: f64, k_low: f64, theta: f64) -> Result<ConservationCertificate> {
    if !(eta_op >= 1.0) || !(k_low >= 1.0) {
        return input(format!("need eta_op >= 1 and K_low >= 1, got {eta_op}, {k_low}"));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return input(format!("theta must lie in (0,1), got {theta}"));
    }
    let l = (k_low + 1.0) * (eta_op - 1.0) + 1.0;
    let log_keep = l * (1.0 - theta).ln();
    let es = l / -log_keep.exp_m1();
    let log_r = softplus(es.ln() - l.ln() - log_keep);
    Ok(ConservationCertificate {
        kind: ConservationKind::Entropy,
        theta,
        inputs: BTreeMap::from([
            ("eta_op".into(), eta_op),
            ("k_low".into(), k_low),
            ("l".into(), l),
            ("es".into(), es),
        ]),
        r: log_r.exp(),
        log_r,
        formula_id: "entropy-conservation: L=(K_low+1)(eta_op-1)+1, ES=L/(1-(1-theta)^L), R=1+ES/(L(1-theta)^L)".into(),
    })
}

/// `C_{Δ,M,β} = (1 + e^{2(βΔ+M)})²`, returned as its logarithm.
pub fn log_marginal_constant(delta: usize, m_bound: f64, beta: f64) -> f64 {
    2.0 * softplus(2.0 * (beta * delta as f64 + m_bound))
}

/// `1 / C_{Δ,M,β}`, a lower bound on every tilted edge-event probability
/// when `|h| <= M`.
pub fn marginal_lower_bound(delta: usize, m_bound: f64, beta: f64) -> Result<f64> {
    if m_bound.is_nan() || m_bound < 0.0 || beta.is_nan() || beta < 0.0 {
        return input("need M >= 0 and beta >= 0");
    }
    Ok((-log_marginal_constant(delta, m_bound, beta)).exp())
}

/// The entropy certificate instantiated for the random-field model:
/// `η_op = 4Δ ln n / α*` (clamped to at least 1), `K_low = C_{Δ,M,β}`,
/// `θ = θ* = 1 - e^{-4β}`. Also reports the MLSI bound `1/(R n)` as `log_rho`.
pub fn rfim_entropy_certificate(
    n: usize,
    beta: f64,
    delta: usize,
    m_bound: f64,
    alpha_star: f64,
) -> Result<ConservationCertificate> {
    if n == 0 || !(beta > 0.0) || !(alpha_star > 0.0) {
        return input("need n >= 1, beta > 0 and alpha* > 0");
    }
    let eta = (4.0 * delta as f64 * (n as f64).ln() / alpha_star).max(1.0);
    let k_low = log_marginal_constant(delta, m_bound, beta).exp();
    let theta_star = -(-4.0 * beta).exp_m1();
    let mut cert = entropy_conservation_r(eta, k_low, theta_star)?;
    cert.inputs.insert("n".into(), n as f64);
    cert.inputs.insert("beta".into(), beta);
    cert.inputs.insert("delta".into(), delta as f64);
    cert.inputs.insert("m_bound".into(), m_bound);
    cert.inputs.insert("alpha_star".into(), alpha_star);
    cert.inputs
        .insert("log_rho".into(), -cert.log_r - (n as f64).ln());
    Ok(cert)
}

/// Enumerated vertex tilt `(θ * μ)(σ) ∝ μ(σ) θ^{|σ|}`.
pub fn vertex_tilt_table(model01: &IsingModel, theta: f64) -> Result<GibbsTable> {
    model01.require_convention(Convention::ZeroOne)?;
    if !(theta > 0.0 && theta <= 1.0) {
        return input(format!("vertex tilt must lie in (0,1], got {theta}"));
    }
    let shift = theta.ln();
    let field = model01.field().iter().map(|h| h + shift).collect();
    gibbs_table(&model01.with_field(field)?)
}

/// Seed for the `k`-th independent sub-experiment of `seed`.
pub fn trace_seed(seed: u64, k: u64) -> u64 {
    child_seed(seed, Purpose::Localization, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generators, Graph};
    use std::sync::Arc;

    fn model01(g: Graph, beta: f64, h: Vec<f64>) -> IsingModel {
        IsingModel::with_uniform_coupling(Arc::new(g), beta, h, Convention::PlusMinus)
            .unwrap()
            .to_zero_one()
            .unwrap()
    }

    fn k3() -> IsingModel {
        model01(generators::complete(3), 0.3, vec![0.2, -0.1, 0.05])
    }

    #[test]
    fn revealed_sets_examples() {
        let m = k3();
        for seed in 0..50 {
            let tr = sample_noising_trace(&m, SamplerKind::Oracle, seed).unwrap();
            assert!(tr.revealed(0.0).is_empty() || tr.edge_uniforms.contains(&0.0));
            assert_eq!(tr.revealed(1.0), tr.satisfied());
            let mut last = Vec::new();
            for k in 0..=10 {
                let r = tr.revealed(k as f64 / 10.0);
                assert!(last.iter().all(|e| r.contains(e)));
                last = r;
            }
        }
    }

    #[test]
    fn event_frequency_matches_oracle() {
        let m = model01(generators::path(2), 0.0, vec![-0.8, -0.6]);
        let table = gibbs_table(&m).unwrap();
        let p = table.event_prob(|i| i == 3);
        let sampler = NoisingSampler::new(&m, SamplerKind::Oracle).unwrap();
        let n = 100_000;
        let hits = (0..n)
            .filter(|&k| !sampler.trace(4, k).unwrap().revealed(1.0).is_empty())
            .count();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn long_glauber_sampler_runs() {
        let m = k3();
        let tr = sample_noising_trace(&m, SamplerKind::LongGlauber { steps: 100 }, 3).unwrap();
        assert_eq!(tr.edge_uniforms.len(), 3);
    }

    #[test]
    fn posterior_model_examples() {
        let m = k3();
        assert_eq!(posterior_model(&m, 0.0, &[]).unwrap(), m);
        let p = posterior_model(&m, 0.3, &[0]).unwrap();
        let (u, v) = m.graph().edges()[0];
        assert_eq!(p.pinning(), &BTreeMap::from([(u, true), (v, true)]));
        assert!((p.couplings()[1] - (m.couplings()[1] + 0.7f64.ln())).abs() < 1e-15);
        assert!(posterior_model(&m, 1.0, &[]).is_err());
    }

    #[test]
    fn posterior_matches_direct_tilt_enumeration() {
        // μ(σ)(1-t)^{|Z(σ)|} enumerated directly, against the tilted model table
        let m = k3();
        let t = 0.5;
        let base = gibbs_table(&m).unwrap();
        let mut w: Vec<f64> = (0..base.len())
            .map(|i| {
                let z = satisfied_events(&base, i).iter().filter(|&&b| b).count();
                base.probs()[i] * (1.0f64 - t).powi(z as i32)
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let post = gibbs_table(&posterior_model(&m, t, &[]).unwrap()).unwrap();
        for (a, b) in w.iter().zip(post.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_identity_on_small_graphs() {
        for g in [generators::complete(3), generators::complete(4), generators::path(5)] {
            let n = g.num_vertices();
            let h: Vec<f64> = (0..n).map(|i| 0.3 * (i as f64) - 0.5).collect();
            let m = model01(g, 0.5, h);
            let theta_star = 1.0 - (-2.0f64).exp();
            for t in [0.0, 0.25 * theta_star, 0.5 * theta_star, 0.9] {
                assert!(posterior_identity_error(&m, t).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn theta_star_posteriors_are_products() {
        let m = model01(generators::complete(4), 0.5, vec![0.1, -0.3, 0.2, 0.0]);
        let theta_star = -(-4.0f64 * 0.5).exp_m1();
        let base = gibbs_table(&m).unwrap();
        for (s, _) in positive_revealed_sets(&base, theta_star).unwrap() {
            let p = posterior_model(&m, theta_star, &s).unwrap();
            assert!(p.couplings().iter().all(|c| c.abs() < 1e-12));
            assert!(product_defect(&gibbs_table(&p).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn simulation_examples() {
        let p2 = model01(generators::path(2), 0.4, vec![0.3, 0.2]);
        let r = verify_posterior_by_simulation(&p2, 0.7, 100_000, 1, 500).unwrap();
        assert_eq!(r.buckets.len(), 2);
        for b in &r.buckets {
            assert!(b.tv <= 3.0 * b.noise, "{b:?}");
        }

        // θ* of the ±1 coupling β = 0.25 kills the tilted coupling 4β + ln(1-θ)
        let m = model01(generators::path(3), 0.25, vec![0.1, 0.0, -0.2]);
        let theta_star = -(-1.0f64).exp_m1();
        let r = verify_posterior_by_simulation(&m, theta_star - 1e-12, 50_000, 2, 500).unwrap();
        for b in r.buckets.iter().filter(|b| b.hits >= 500) {
            assert!(b.tv <= 3.0 * b.noise, "{b:?}");
        }
    }

    #[test]
    fn variance_certificate_examples() {
        assert_eq!(variance_conservation_r(0.0, 0.7).unwrap().r, 1.0);
        let theta_star = -(-2.0f64).exp_m1();
        let c = variance_conservation_r(2.0, theta_star).unwrap();
        assert!((c.r - 4f64.exp()).abs() < 1e-9);
        assert!((c.r - 54.598).abs() < 1e-3);
        let alpha = 0.8304;
        let cc = 4.0 * 3.0 * 10f64.ln() / alpha;
        let c = variance_conservation_r(cc, theta_star).unwrap();
        let expect = 16.0 * 0.5 * 3.0 * 10f64.ln() / alpha;
        assert!((c.log_r - expect).abs() < 1e-9);
        assert!(variance_conservation_r(1.0, 1.0).is_err());
    }

    #[test]
    fn entropy_certificate_examples() {
        let theta = 0.3;
        let c = entropy_conservation_r(1.0, 5.0, theta).unwrap();
        assert_eq!(c.inputs["l"], 1.0);
        assert!((c.inputs["es"] - 1.0 / theta).abs() < 1e-12);
        assert!((c.r - (1.0 + 1.0 / theta / (1.0 - theta))).abs() < 1e-12);

        let c = entropy_conservation_r(2.0, 4.0, 0.5).unwrap();
        assert_eq!(c.inputs["l"], 6.0);
        assert!((c.inputs["es"] - 6.0 / (1.0 - 2f64.powi(-6))).abs() < 1e-12);
        assert!((c.inputs["es"] - 6.0952).abs() < 1e-4);
        assert!((c.r - 66.02).abs() < 0.01);
        assert!(entropy_conservation_r(0.5, 4.0, 0.5).is_err());

        let a = crate::model::assumption_params(0.05, 10.0, 0.5, 3).unwrap();
        let c = rfim_entropy_certificate(10, 0.5, 3, 1.0, a.alpha_star).unwrap();
        assert!(c.log_r.is_finite() && c.log_r > 0.0);
        assert!(c.inputs["log_rho"] < 0.0);
    }

    #[test]
    fn conservation_is_monotone() {
        let mut last = 0.0;
        for k in 0..20 {
            let theta = k as f64 / 21.0;
            let r = variance_conservation_r(3.0, theta).unwrap().log_r;
            assert!(r >= last);
            last = r;
        }
        let mut last = 0.0;
        for k in 1..20 {
            let r = entropy_conservation_r(1.0 + k as f64 * 0.1, 3.0, 0.4).unwrap().log_r;
            assert!(r >= last);
            last = r;
        }
        // R = 1 + 1/(q(1-q)) with q = (1-θ)^L, so R grows in θ only once q <= 1/2
        let l = 6.0f64;
        let theta_half = 1.0 - 0.5f64.powf(1.0 / l);
        let mut last = 0.0;
        for k in 0..20 {
            let theta = theta_half + (1.0 - theta_half) * k as f64 / 21.0;
            let r = entropy_conservation_r(2.0, 4.0, theta).unwrap().log_r;
            assert!(r >= last - 1e-12, "theta {theta}");
            last = r;
        }
        let early = entropy_conservation_r(2.0, 4.0, 0.01).unwrap().r;
        let mid = entropy_conservation_r(2.0, 4.0, theta_half).unwrap().r;
        assert!(early > mid && (mid - 5.0).abs() < 1e-9);
    }

    #[test]
    fn marginal_bound_examples() {
        assert_eq!(marginal_lower_bound(0, 0.0, 0.7).unwrap(), 0.25);
        let b = marginal_lower_bound(3, 1.0, 0.5).unwrap();
        assert!((b - 1.0 / (1.0 + 5f64.exp()).powi(2)).abs() < 1e-18);
        assert!((b - 4.47e-5).abs() < 1e-7);
        let mut last = 1.0;
        for k in 0..10 {
            let v = marginal_lower_bound(3, 0.5, 0.1 * k as f64).unwrap();
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn tilted_event_probability_respects_marginal_bound() {
        let beta = 0.4;
        let m_bound = 0.5;
        let g = generators::complete(4);
        let m = model01(g, beta, vec![0.5, -0.5, 0.2, -0.1]);
        let bound = marginal_lower_bound(3, m_bound, beta).unwrap();
        let theta_star = -(-4.0 * beta).exp_m1();
        for t in [0.0, 0.5 * theta_star, theta_star] {
            let table = gibbs_table(&m.edge_tilt(t, &BTreeMap::new()).unwrap()).unwrap();
            for &(u, v) in m.graph().edges() {
                assert!(table.event_prob(|i| table.is_up(i, u) && table.is_up(i, v)) >= bound);
            }
        }
    }

    #[test]
    fn vertex_tilt_examples() {
        let m = k3();
        assert_eq!(vertex_tilt_table(&m, 1.0).unwrap().probs(), gibbs_table(&m).unwrap().probs());
        let t = vertex_tilt_table(&m, 1e-9).unwrap();
        assert!(t.probs()[0] > 0.999);
        let fair = IsingModel::with_uniform_coupling(Arc::new(Graph::new(1, &[]).unwrap()), 0.0, vec![0.0], Convention::ZeroOne)
            .unwrap();
        let t = vertex_tilt_table(&fair, 1.0 / 3.0).unwrap();
        assert!((t.probs()[0] - 0.75).abs() < 1e-15 && (t.probs()[1] - 0.25).abs() < 1e-15);
    }
}
