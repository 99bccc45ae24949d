//! The random-field Ising measure, spin conventions, quenched fields, pinnings
//! and edge tilts.
//!
//! A configuration is stored as one bit per vertex, "up" meaning `+1` in the
//! plus-minus convention and `1` in the zero-one convention, so the bijection
//! `x = (σ + 1) / 2` between conventions leaves the bits untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use bitvec::prelude::*;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{input, Error, Result};
use crate::graph::{Graph, GraphJson};
use crate::numeric::logistic;
use crate::rng::{substream, uniform, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Convention {
    #[serde(rename = "pm")]
    PlusMinus,
    #[serde(rename = "01")]
    ZeroOne,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::PlusMinus => "pm",
            Convention::ZeroOne => "01",
        }
    }

    /// Numeric value of a spin with the given bit.
    #[inline]
    pub fn value(self, up: bool) -> f64 {
        match (self, up) {
            (_, true) => 1.0,
            (Convention::PlusMinus, false) => -1.0,
            (Convention::ZeroOne, false) => 0.0,
        }
    }

    pub fn parse_spin(self, value: i64) -> Result<bool> {
        match (self, value) {
            (_, 1) => Ok(true),
            (Convention::PlusMinus, -1) | (Convention::ZeroOne, 0) => Ok(false),
            _ => input(format!(
                "spin value {value} is not valid in the {} convention",
                self.name()
            )),
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration {
    bits: BitVec<u64, Lsb0>,
    convention: Convention,
}

impl SpinConfiguration {
    pub fn uniform(n: usize, up: bool, convention: Convention) -> Self {
        SpinConfiguration {
            bits: BitVec::repeat(up, n),
            convention,
        }
    }

    pub fn from_bits(bits: &[bool], convention: Convention) -> Self {
        SpinConfiguration {
            bits: bits.iter().copied().collect(),
            convention,
        }
    }

    /// Accepts `±1` or `0/1` according to `convention`.
    pub fn from_values(values: &[i64], convention: Convention) -> Result<Self> {
        let bits = values
            .iter()
            .map(|&v| convention.parse_spin(v))
            .collect::<Result<Vec<bool>>>()?;
        Ok(Self::from_bits(&bits, convention))
    }

    /// Bit `i` of `index` is the spin of `vertices[i]`; other vertices are
    /// taken from `base`.
    pub fn from_index(base: &SpinConfiguration, vertices: &[usize], index: usize) -> Self {
        let mut c = base.clone();
        for (i, &v) in vertices.iter().enumerate() {
            c.set(v, index >> i & 1 == 1);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    #[inline]
    pub fn get(&self, v: usize) -> bool {
        self.bits[v]
    }

    #[inline]
    pub fn set(&mut self, v: usize, up: bool) {
        self.bits.set(v, up);
    }

    #[inline]
    pub fn value(&self, v: usize) -> f64 {
        self.convention.value(self.bits[v])
    }

    pub fn values(&self) -> Vec<i64> {
        (0..self.len()).map(|v| self.value(v) as i64).collect()
    }

    pub fn bits(&self) -> &BitSlice<u64, Lsb0> {
        &self.bits
    }

    pub fn count_up(&self) -> usize {
        self.bits.count_ones()
    }

    /// Same bits, relabelled in another convention.
    pub fn with_convention(&self, convention: Convention) -> Self {
        SpinConfiguration {
            bits: self.bits.clone(),
            convention,
        }
    }

    /// Packs the spins of `vertices` into an integer, bit `i` for `vertices[i]`.
    pub fn index_over(&self, vertices: &[usize]) -> usize {
        vertices
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &v)| acc | (usize::from(self.bits[v]) << i))
    }

    /// Pointwise `self <= other` in the up-is-larger order.
    pub fn le(&self, other: &SpinConfiguration) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(other.bits.iter()).all(|(a, b)| !*a || *b)
    }

    /// Vertices where the two configurations differ.
    pub fn disagreements(&self, other: &SpinConfiguration) -> Vec<usize> {
        (0..self.len())
            .filter(|&v| self.bits[v] != other.bits[v])
            .collect()
    }

    /// Mean spin value.
    pub fn magnetization(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).map(|v| self.value(v)).sum::<f64>() / self.len() as f64
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigurationJson {
    convention: Convention,
    spins: Vec<i64>,
}

impl Serialize for SpinConfiguration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ConfigurationJson {
            convention: self.convention,
            spins: self.values(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpinConfiguration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ConfigurationJson::deserialize(d)?;
        SpinConfiguration::from_values(&j.spins, j.convention).map_err(serde::de::Error::custom)
    }
}

/// Law of a single field coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldDistribution {
    Gaussian { sigma: f64 },
    UniformSymmetric { m: f64 },
    /// `±a` with probability one half each.
    TwoPoint { a: f64 },
    /// `base` draw plus a deterministic per-vertex offset.
    Shifted {
        base: Box<FieldDistribution>,
        offsets: Vec<f64>,
    },
}

impl FieldDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            FieldDistribution::Gaussian { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                input(format!("gaussian sigma must be positive, got {sigma}"))
            }
            FieldDistribution::UniformSymmetric { m } if !(*m > 0.0 && m.is_finite()) => {
                input(format!("uniform half-width must be positive, got {m}"))
            }
            FieldDistribution::TwoPoint { a } if !(*a >= 0.0 && a.is_finite()) => {
                input(format!("two-point magnitude must be nonnegative, got {a}"))
            }
            FieldDistribution::Shifted { base, offsets } => {
                if offsets.iter().any(|o| !o.is_finite()) {
                    return input("offsets must be finite");
                }
                base.validate()
            }
            _ => Ok(()),
        }
    }

    /// Largest possible `|h|`, if bounded.
    pub fn sup_abs(&self) -> Option<f64> {
        match self {
            FieldDistribution::Gaussian { .. } => None,
            FieldDistribution::UniformSymmetric { m } => Some(*m),
            FieldDistribution::TwoPoint { a } => Some(*a),
            FieldDistribution::Shifted { base, offsets } => {
                let off = offsets.iter().fold(0.0f64, |m, o| m.max(o.abs()));
                base.sup_abs().map(|b| b + off)
            }
        }
    }

    fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        match self {
            FieldDistribution::Gaussian { sigma } => {
                Normal::new(0.0, *sigma).expect("validated sigma").sample(rng)
            }
            FieldDistribution::UniformSymmetric { m } => (2.0 * uniform(rng) - 1.0) * m,
            FieldDistribution::TwoPoint { a } => {
                if uniform(rng) < 0.5 {
                    -a
                } else {
                    *a
                }
            }
            FieldDistribution::Shifted { base, .. } => base.draw(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedField {
    pub values: Vec<f64>,
    pub distribution: FieldDistribution,
    pub seed: u64,
}

impl QuenchedField {
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|h| h.abs()).sum()
    }
}

/// `n` i.i.d. draws from `dist`, bit-reproducible for a given seed.
pub fn sample_field(dist: &FieldDistribution, n: usize, seed: u64) -> Result<QuenchedField> {
    dist.validate()?;
    if let FieldDistribution::Shifted { offsets, .. } = dist {
        if offsets.len() != n {
            return input(format!(
                "shifted field has {} offsets for {n} vertices",
                offsets.len()
            ));
        }
    }
    let mut rng = substream(seed, Purpose::Field, 0);
    let mut values: Vec<f64> = (0..n).map(|_| dist.draw(&mut rng)).collect();
    if let FieldDistribution::Shifted { offsets, .. } = dist {
        for (h, o) in values.iter_mut().zip(offsets) {
            *h += o;
        }
    }
    Ok(QuenchedField {
        values,
        distribution: dist.clone(),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldAssumptionCheck {
    /// `P(|h| <= K)`.
    pub mass: f64,
    /// `mass < p0 / 2`.
    pub holds: bool,
}

pub fn check_field_assumption(
    dist: &FieldDistribution,
    p0: f64,
    k: f64,
) -> Result<FieldAssumptionCheck> {
    dist.validate()?;
    if !(p0 > 0.0 && p0 < 1.0) || k.is_nan() || k < 0.0 {
        return input(format!("need p0 in (0,1) and K >= 0, got p0={p0}, K={k}"));
    }
    let mass = match dist {
        FieldDistribution::Gaussian { sigma } => erf(k / (sigma * std::f64::consts::SQRT_2)),
        FieldDistribution::UniformSymmetric { m } => (k / m).min(1.0),
        FieldDistribution::TwoPoint { a } => {
            if *a <= k {
                1.0
            } else {
                0.0
            }
        }
        FieldDistribution::Shifted { .. } => {
            return input("shifted fields are not identically distributed; no closed-form mass")
        }
    };
    Ok(FieldAssumptionCheck {
        mass,
        holds: mass < p0 / 2.0,
    })
}

/// Constants attached to the field assumption and the percolation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionParams {
    pub p0: f64,
    pub k: f64,
    pub beta: f64,
    pub delta: usize,
    pub rho: f64,
    pub xi_star: f64,
    pub alpha_star: f64,
    pub gamma_star: f64,
    pub valid: bool,
}

pub fn assumption_params(p0: f64, k: f64, beta: f64, delta: usize) -> Result<AssumptionParams> {
    if delta < 3 {
        return input(format!("degree bound must be at least 3, got {delta}"));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return input(format!("p0 must lie in (0,1), got {p0}"));
    }
    if !(beta > 0.0) || !(k > 0.0) {
        return input(format!("beta and K must be positive, got beta={beta}, K={k}"));
    }
    let d = delta as f64;
    let rho = logistic(2.0 * (d * beta - k));
    let xi_star = (d - 2.0) * (d - 2.0).ln()
        - p0.ln()
        - (d - 1.0) * (d - 1.0).ln()
        - (d - 2.0) * (1.0 - p0).ln();
    let gamma_star = ((1.0 - p0) / (p0 * (d - 2.0))).ln();
    Ok(AssumptionParams {
        p0,
        k,
        beta,
        delta,
        rho,
        xi_star,
        alpha_star: xi_star / 2.0,
        gamma_star,
        valid: p0 * (d - 1.0) < 1.0 && rho < p0 / 4.0,
    })
}

/// Ising model on a graph with per-edge couplings, per-vertex field and a pinning.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    graph: Arc<Graph>,
    couplings: Vec<f64>,
    field: Vec<f64>,
    convention: Convention,
    pinning: BTreeMap<usize, bool>,
}

impl IsingModel {
    pub fn new(
        graph: Arc<Graph>,
        couplings: Vec<f64>,
        field: Vec<f64>,
        convention: Convention,
    ) -> Result<Self> {
        if couplings.len() != graph.num_edges() {
            return input(format!(
                "{} couplings for {} edges",
                couplings.len(),
                graph.num_edges()
            ));
        }
        if field.len() != graph.num_vertices() {
            return input(format!(
                "{} field values for {} vertices",
                field.len(),
                graph.num_vertices()
            ));
        }
        if couplings.iter().chain(&field).any(|x| !x.is_finite()) {
            return input("couplings and fields must be finite");
        }
        Ok(IsingModel {
            graph,
            couplings,
            field,
            convention,
            pinning: BTreeMap::new(),
        })
    }

    pub fn with_uniform_coupling(
        graph: Arc<Graph>,
        beta: f64,
        field: Vec<f64>,
        convention: Convention,
    ) -> Result<Self> {
        let m = graph.num_edges();
        Self::new(graph, vec![beta; m], field, convention)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn num_vertices(&self) -> usize {
        self.graph.num_vertices()
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn pinning(&self) -> &BTreeMap<usize, bool> {
        &self.pinning
    }

    pub fn is_pinned(&self, v: usize) -> bool {
        self.pinning.contains_key(&v)
    }

    /// Unpinned vertices in increasing order; this is the index order of
    /// every enumerated table.
    pub fn free_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices())
            .filter(|v| !self.pinning.contains_key(v))
            .collect()
    }

    pub fn num_free(&self) -> usize {
        self.num_vertices() - self.pinning.len()
    }

    pub fn beta_max(&self) -> f64 {
        self.couplings.iter().fold(0.0f64, |m, b| m.max(b.abs()))
    }

    pub fn is_ferromagnetic(&self) -> bool {
        self.couplings.iter().all(|&b| b >= 0.0)
    }

    pub fn require_ferromagnetic(&self) -> Result<()> {
        if self.is_ferromagnetic() {
            Ok(())
        } else {
            Err(Error::NotFerromagnetic)
        }
    }

    pub fn require_convention(&self, expected: Convention) -> Result<()> {
        if self.convention == expected {
            Ok(())
        } else {
            Err(Error::Convention {
                expected: expected.name(),
                found: self.convention.name(),
            })
        }
    }

    /// Configuration with every free vertex set to `up` and pins applied.
    pub fn constant_configuration(&self, up: bool) -> SpinConfiguration {
        let mut c = SpinConfiguration::uniform(self.num_vertices(), up, self.convention);
        self.apply_pinning(&mut c);
        c
    }

    pub fn apply_pinning(&self, c: &mut SpinConfiguration) {
        for (&v, &s) in &self.pinning {
            c.set(v, s);
        }
    }

    pub fn respects_pinning(&self, c: &SpinConfiguration) -> bool {
        self.pinning.iter().all(|(&v, &s)| c.get(v) == s)
    }

    pub fn check_configuration(&self, c: &SpinConfiguration) -> Result<()> {
        if c.convention() != self.convention {
            return Err(Error::Convention {
                expected: self.convention.name(),
                found: c.convention().name(),
            });
        }
        if c.len() != self.num_vertices() {
            return input(format!(
                "configuration has {} spins, model has {} vertices",
                c.len(),
                self.num_vertices()
            ));
        }
        Ok(())
    }

    /// `Σ β_uv σ_u σ_v + Σ h_u σ_u` in the model's convention.
    pub fn hamiltonian(&self, c: &SpinConfiguration) -> Result<f64> {
        self.check_configuration(c)?;
        Ok(self.energy_of(|v| c.get(v)))
    }

    pub(crate) fn energy_of(&self, up: impl Fn(usize) -> bool) -> f64 {
        let conv = self.convention;
        let mut h = 0.0;
        for (e, &(u, v)) in self.graph.edges().iter().enumerate() {
            h += self.couplings[e] * conv.value(up(u)) * conv.value(up(v));
        }
        for (v, &hv) in self.field.iter().enumerate() {
            h += hv * conv.value(up(v));
        }
        h
    }

    /// `ln P(up) - ln P(down)` for the conditional law of `v` given the rest.
    #[inline]
    pub fn log_odds_up(&self, v: usize, up: impl Fn(usize) -> bool) -> f64 {
        let conv = self.convention;
        let mut s = self.field[v];
        for (&w, &e) in self
            .graph
            .neighbors(v)
            .iter()
            .zip(self.graph.incident_edges(v))
        {
            s += self.couplings[e] * conv.value(up(w));
        }
        match conv {
            Convention::PlusMinus => 2.0 * s,
            Convention::ZeroOne => s,
        }
    }

    /// Heat-bath probability that `v` is up given the rest of `c`.
    #[inline]
    pub fn prob_up(&self, v: usize, c: &SpinConfiguration) -> f64 {
        logistic(self.log_odds_up(v, |w| c.get(w)))
    }

    /// Adds pins; conflicting values are an infeasible pinning.
    pub fn pin(&self, extra: &BTreeMap<usize, bool>) -> Result<IsingModel> {
        let mut m = self.clone();
        for (&v, &s) in extra {
            if v >= self.num_vertices() {
                return input(format!("pinned vertex {v} out of range"));
            }
            match m.pinning.get(&v) {
                Some(&old) if old != s => {
                    return Err(Error::Infeasible(format!(
                        "vertex {v} is already pinned to the opposite value"
                    )))
                }
                _ => {
                    m.pinning.insert(v, s);
                }
            }
        }
        Ok(m)
    }

    pub fn unpinned(&self) -> IsingModel {
        let mut m = self.clone();
        m.pinning.clear();
        m
    }

    pub fn with_field(&self, field: Vec<f64>) -> Result<IsingModel> {
        let mut m = IsingModel::new(
            self.graph.clone(),
            self.couplings.clone(),
            field,
            self.convention,
        )?;
        m.pinning = self.pinning.clone();
        Ok(m)
    }

    /// The same measure in the zero-one convention: couplings `4β_uv`,
    /// fields `2h_u - 2 Σ_v β_uv`.
    pub fn to_zero_one(&self) -> Result<IsingModel> {
        self.require_convention(Convention::PlusMinus)?;
        let couplings = self.couplings.iter().map(|b| 4.0 * b).collect();
        let mut field: Vec<f64> = self.field.iter().map(|h| 2.0 * h).collect();
        for (e, &(u, v)) in self.graph.edges().iter().enumerate() {
            field[u] -= 2.0 * self.couplings[e];
            field[v] -= 2.0 * self.couplings[e];
        }
        Ok(IsingModel {
            graph: self.graph.clone(),
            couplings,
            field,
            convention: Convention::ZeroOne,
            pinning: self.pinning.clone(),
        })
    }

    /// Inverse of [`IsingModel::to_zero_one`].
    pub fn to_plus_minus(&self) -> Result<IsingModel> {
        self.require_convention(Convention::ZeroOne)?;
        let couplings: Vec<f64> = self.couplings.iter().map(|b| b / 4.0).collect();
        let mut field: Vec<f64> = self.field.iter().map(|h| h / 2.0).collect();
        for (e, &(u, v)) in self.graph.edges().iter().enumerate() {
            field[u] += couplings[e];
            field[v] += couplings[e];
        }
        Ok(IsingModel {
            graph: self.graph.clone(),
            couplings,
            field,
            convention: Convention::PlusMinus,
            pinning: self.pinning.clone(),
        })
    }

    /// The edge tilt `(1-θ) ⊗ μ^τ`: every coupling gains `ln(1-θ)`, then
    /// `pinning` is added. The tilt is applied on all edges, including those
    /// touching pinned vertices, because an edge to a vertex pinned at 1 is
    /// weighted by `(1-θ)` exactly like a free edge.
    pub fn edge_tilt(&self, theta: f64, pinning: &BTreeMap<usize, bool>) -> Result<IsingModel> {
        self.require_convention(Convention::ZeroOne)?;
        if !(0.0..1.0).contains(&theta) {
            return input(format!("tilt theta must lie in [0,1), got {theta}"));
        }
        let shift = (1.0 - theta).ln();
        let mut m = self.clone();
        for b in &mut m.couplings {
            *b += shift;
        }
        m.pin(pinning)
    }

    /// Model on the induced subgraph of `vertices`, with vertex `vertices[i]`
    /// renumbered to `i`. Outside vertices are dropped, not conditioned on.
    pub fn induced_submodel(&self, vertices: &[usize]) -> Result<IsingModel> {
        let (g, parent_edges) = self.graph.induced_subgraph(vertices)?;
        let couplings = parent_edges.iter().map(|&e| self.couplings[e]).collect();
        let field = vertices.iter().map(|&v| self.field[v]).collect();
        let mut m = IsingModel::new(Arc::new(g), couplings, field, self.convention)?;
        for (i, &v) in vertices.iter().enumerate() {
            if let Some(&s) = self.pinning.get(&v) {
                m.pinning.insert(i, s);
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> ModelJson {
        let uniform = self
            .couplings
            .first()
            .filter(|b| self.couplings.iter().all(|x| x == *b))
            .copied();
        ModelJson {
            graph: self.graph.to_json(),
            beta: uniform.unwrap_or_else(|| self.beta_max()),
            edge_couplings: if uniform.is_some() || self.couplings.is_empty() {
                None
            } else {
                Some(self.couplings.clone())
            },
            field: self.field.clone(),
            convention: self.convention,
            pinning: self
                .pinning
                .iter()
                .map(|(&v, &s)| (v.to_string(), self.convention.value(s) as i64))
                .collect(),
        }
    }

    pub fn from_json(json: &ModelJson) -> Result<IsingModel> {
        let graph = Arc::new(Graph::from_json(&json.graph)?);
        let couplings = match &json.edge_couplings {
            Some(c) => c.clone(),
            None => vec![json.beta; graph.num_edges()],
        };
        let model = IsingModel::new(graph, couplings, json.field.clone(), json.convention)?;
        let mut pins = BTreeMap::new();
        for (k, &s) in &json.pinning {
            let v: usize = k
                .parse()
                .map_err(|_| Error::Input(format!("pinning key {k:?} is not a vertex index")))?;
            pins.insert(v, json.convention.parse_spin(s)?);
        }
        model.pin(&pins)
    }
}

/// Serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub graph: GraphJson,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_couplings: Option<Vec<f64>>,
    pub field: Vec<f64>,
    pub convention: Convention,
    #[serde(default)]
    pub pinning: BTreeMap<String, i64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generators;

    fn p2(beta: f64, h: [f64; 2]) -> IsingModel {
        IsingModel::with_uniform_coupling(
            Arc::new(generators::path(2)),
            beta,
            h.to_vec(),
            Convention::PlusMinus,
        )
        .unwrap()
    }

    #[test]
    fn sample_field_examples() {
        let f = sample_field(&FieldDistribution::TwoPoint { a: 0.0 }, 5, 1).unwrap();
        assert!(f.values.iter().all(|&h| h == 0.0));

        let f = sample_field(&FieldDistribution::UniformSymmetric { m: 2.0 }, 10_000, 3).unwrap();
        let mean = f.values.iter().sum::<f64>() / 1e4;
        assert!(mean.abs() < 3.0 * (2.0 / 3f64.sqrt()) / 100.0);
        assert!(f.values.iter().all(|h| h.abs() <= 2.0));

        let g = FieldDistribution::Gaussian { sigma: 1.0 };
        assert_eq!(
            sample_field(&g, 50, 9).unwrap(),
            sample_field(&g, 50, 9).unwrap()
        );
        assert!(sample_field(&FieldDistribution::Gaussian { sigma: 0.0 }, 3, 0).is_err());
        assert!(sample_field(&FieldDistribution::TwoPoint { a: -1.0 }, 3, 0).is_err());
    }

    #[test]
    fn shifted_field_adds_offsets() {
        let d = FieldDistribution::Shifted {
            base: Box::new(FieldDistribution::TwoPoint { a: 1.0 }),
            offsets: vec![10.0, -10.0],
        };
        let f = sample_field(&d, 2, 4).unwrap();
        assert!((f.values[0] - 10.0).abs() == 1.0);
        assert!((f.values[1] + 10.0).abs() == 1.0);
        assert!(sample_field(&d, 3, 4).is_err());
    }

    #[test]
    fn hamiltonian_examples() {
        let up = SpinConfiguration::uniform(2, true, Convention::PlusMinus);
        assert_eq!(p2(1.0, [0.0, 0.0]).hamiltonian(&up).unwrap(), 1.0);
        let mixed = SpinConfiguration::from_values(&[1, -1], Convention::PlusMinus).unwrap();
        assert_eq!(p2(1.0, [0.5, -0.5]).hamiltonian(&mixed).unwrap(), 0.0);

        let g = Arc::new(Graph::new(3, &[]).unwrap());
        let m = IsingModel::with_uniform_coupling(g, 1.0, vec![1.0, 2.0, 3.0], Convention::PlusMinus)
            .unwrap();
        let c = SpinConfiguration::from_values(&[1, -1, 1], Convention::PlusMinus).unwrap();
        assert_eq!(m.hamiltonian(&c).unwrap(), 2.0);

        let wrong = up.with_convention(Convention::ZeroOne);
        assert!(matches!(
            p2(1.0, [0.0, 0.0]).hamiltonian(&wrong),
            Err(Error::Convention { .. })
        ));
    }

    #[test]
    fn zero_one_examples() {
        let m = p2(1.0, [0.0, 0.0]).to_zero_one().unwrap();
        assert_eq!(m.couplings(), &[4.0]);
        assert_eq!(m.field(), &[-2.0, -2.0]);
        let m = p2(1.0, [0.5, -0.5]).to_zero_one().unwrap();
        assert_eq!(m.field(), &[-1.0, -3.0]);

        let g = Arc::new(Graph::new(1, &[]).unwrap());
        let m = IsingModel::with_uniform_coupling(g, 0.0, vec![0.7], Convention::PlusMinus)
            .unwrap()
            .to_zero_one()
            .unwrap();
        assert_eq!(m.field(), &[1.4]);
    }

    #[test]
    fn zero_one_energy_differs_by_a_constant() {
        let pm = p2(0.8, [0.3, -1.1]);
        let zo = pm.to_zero_one().unwrap();
        let diffs: Vec<f64> = (0..4)
            .map(|i| {
                let c = SpinConfiguration::from_bits(&[i & 1 == 1, i & 2 == 2], Convention::PlusMinus);
                pm.hamiltonian(&c).unwrap()
                    - zo.hamiltonian(&c.with_convention(Convention::ZeroOne)).unwrap()
            })
            .collect();
        assert!(diffs.iter().all(|d| (d - diffs[0]).abs() < 1e-12));
        let back = zo.to_plus_minus().unwrap();
        for (a, b) in back.field().iter().zip(pm.field()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_tilt_examples() {
        let m = p2(0.5, [0.0, 0.0]).to_zero_one().unwrap();
        assert_eq!(m.edge_tilt(0.0, &BTreeMap::new()).unwrap(), m);
        let theta_star = 1.0 - (-2.0f64).exp();
        assert!((theta_star - 0.8646647).abs() < 1e-7);
        let t = m.edge_tilt(theta_star, &BTreeMap::new()).unwrap();
        assert!(t.couplings()[0].abs() < 1e-15);
        let t = m.edge_tilt(0.5, &BTreeMap::new()).unwrap();
        assert!((t.couplings()[0] - 1.3068528).abs() < 1e-7);
        assert!(m.edge_tilt(1.0, &BTreeMap::new()).is_err());
        assert!(p2(0.5, [0.0, 0.0]).edge_tilt(0.1, &BTreeMap::new()).is_err());
    }

    #[test]
    fn assumption_examples() {
        let a = assumption_params(0.3, 1.5, 0.5, 3).unwrap();
        assert_eq!(a.rho, 0.5);
        assert!(!a.valid);

        let a = assumption_params(0.05, 10.0, 0.5, 3).unwrap();
        assert!(a.rho < 0.0125);
        let direct = (1.0 / (4.0 * 0.05 * 0.95f64)).ln();
        assert!((a.xi_star - direct).abs() < 1e-12);
        assert!((a.xi_star - 1.6607).abs() < 1e-4);
        assert!((a.alpha_star - 0.8304).abs() < 1e-4);
        assert!(a.valid);

        let a = assumption_params(0.4, 10.0, 0.5, 3).unwrap();
        assert!(0.4 * 2.0 < 1.0 && a.valid);
        assert!(assumption_params(0.1, 1.0, 0.5, 2).is_err());
    }

    #[test]
    fn alpha_star_increases_as_p0_decreases() {
        for delta in 3..7 {
            let mut last = f64::NEG_INFINITY;
            for i in (1..100).rev() {
                let p0 = i as f64 / 100.0 / (delta as f64 - 1.0);
                let a = assumption_params(p0, 1.0, 0.1, delta).unwrap().alpha_star;
                assert!(a > last);
                last = a;
            }
        }
    }

    #[test]
    fn field_assumption_examples() {
        let c = check_field_assumption(&FieldDistribution::TwoPoint { a: 5.0 }, 0.1, 1.0).unwrap();
        assert_eq!(c.mass, 0.0);
        assert!(c.holds);
        let c = check_field_assumption(&FieldDistribution::UniformSymmetric { m: 10.0 }, 0.5, 1.0)
            .unwrap();
        assert!((c.mass - 0.1).abs() < 1e-15 && c.holds);
        let c = check_field_assumption(&FieldDistribution::Gaussian { sigma: 1.0 }, 0.1, 1.0).unwrap();
        assert!((c.mass - 0.682_689_492_137).abs() < 1e-9);
        assert!(!c.holds);
    }

    #[test]
    fn pinning_and_json_roundtrip() {
        let m = p2(0.4, [0.1, 0.2]);
        let pinned = m.pin(&BTreeMap::from([(1, false)])).unwrap();
        assert_eq!(pinned.free_vertices(), vec![0]);
        assert!(matches!(
            pinned.pin(&BTreeMap::from([(1, true)])),
            Err(Error::Infeasible(_))
        ));
        let back = IsingModel::from_json(&pinned.to_json()).unwrap();
        assert_eq!(back, pinned);
        let text = serde_json::to_string(&pinned.to_json()).unwrap();
        assert!(text.contains("\"convention\":\"pm\""));
        assert!(text.contains("\"1\":-1"));
    }

    #[test]
    fn configuration_serde_roundtrip() {
        let c = SpinConfiguration::from_values(&[0, 1, 1], Convention::ZeroOne).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<SpinConfiguration>(&s).unwrap(), c);
        assert!(SpinConfiguration::from_values(&[-1], Convention::ZeroOne).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn field_sampling_is_reproducible(seed in any::<u64>(), n in 0usize..40, a in 0.0f64..5.0) {
                let d = FieldDistribution::UniformSymmetric { m: a + 0.1 };
                prop_assert_eq!(sample_field(&d, n, seed).unwrap(), sample_field(&d, n, seed).unwrap());
            }

            #[test]
            fn tilt_by_zero_preserves_energy(bits in proptest::collection::vec(any::<bool>(), 4), beta in 0.0f64..2.0) {
                let g = Arc::new(generators::cycle(4).unwrap());
                let m = IsingModel::with_uniform_coupling(g, beta, vec![0.3, -0.2, 0.1, 0.0], Convention::PlusMinus)
                    .unwrap().to_zero_one().unwrap();
                let t = m.edge_tilt(0.0, &BTreeMap::new()).unwrap();
                let c = SpinConfiguration::from_bits(&bits, Convention::ZeroOne);
                prop_assert_eq!(m.hamiltonian(&c).unwrap(), t.hamiltonian(&c).unwrap());
            }
        }
    }
}
