//! Single-site heat-bath Glauber dynamics and its couplings.
//!
//! One step draws two uniforms from the chain's stream: the first selects a
//! free vertex as `free[floor(U₁ f)]`, the second resamples it with the
//! quantile rule "up iff `U₂ < P(up | rest)`". Coupled chains consume the same
//! pair, which makes the coupling monotone for ferromagnetic models.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::graph::Graph;
use crate::model::{IsingModel, SpinConfiguration};
use crate::numeric::logistic;
use crate::oracle::{gibbs_table, GibbsTable};
use crate::rng::{substream, uniform, uniforms, Purpose};

#[derive(Debug, Clone)]
pub struct ChainState {
    pub config: SpinConfiguration,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl ChainState {
    /// Applies the model's pinning to `init`.
    pub fn new(model: &IsingModel, mut init: SpinConfiguration, seed: u64, stream: u64) -> Result<Self> {
        model.check_configuration(&init)?;
        model.apply_pinning(&mut init);
        Ok(ChainState {
            config: init,
            step: 0,
            rng: substream(seed, Purpose::Chain, stream),
        })
    }
}

/// A model together with its free-vertex list, ready to step.
pub struct Glauber<'a> {
    model: &'a IsingModel,
    free: Vec<usize>,
}

impl<'a> Glauber<'a> {
    pub fn new(model: &'a IsingModel) -> Result<Self> {
        let free = model.free_vertices();
        if free.is_empty() {
            return input("model has no free vertices to update");
        }
        Ok(Glauber { model, free })
    }

    pub fn model(&self) -> &IsingModel {
        self.model
    }

    /// Vertex chosen by the first uniform of a step.
    #[inline]
    pub fn pick(&self, u: f64) -> usize {
        let k = ((u * self.free.len() as f64) as usize).min(self.free.len() - 1);
        self.free[k]
    }

    /// Heat-bath update of `v` driven by `u`; returns the new spin.
    #[inline]
    pub fn update(&self, config: &mut SpinConfiguration, v: usize, u: f64) -> bool {
        let p = logistic(self.model.log_odds_up(v, |w| config.get(w)));
        let up = u < p;
        config.set(v, up);
        up
    }

    pub fn step(&self, state: &mut ChainState) -> usize {
        let v = self.pick(uniform(&mut state.rng));
        let u = uniform(&mut state.rng);
        self.update(&mut state.config, v, u);
        state.step += 1;
        v
    }
}

/// One heat-bath step.
pub fn glauber_step(model: &IsingModel, state: &mut ChainState) -> Result<usize> {
    model.check_configuration(&state.config)?;
    Ok(Glauber::new(model)?.step(state))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub magnetization: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub state: ChainState,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Runs `steps` updates from `init`; records every `record_every` steps
/// (including step 0) when given.
pub fn run_chain(
    model: &IsingModel,
    init: SpinConfiguration,
    steps: u64,
    seed: u64,
    record_every: Option<u64>,
) -> Result<ChainRun> {
    let mut state = ChainState::new(model, init, seed, 0)?;
    let mut trajectory = Vec::new();
    let record = |s: &ChainState, out: &mut Vec<TrajectoryPoint>| {
        out.push(TrajectoryPoint {
            step: s.step,
            magnetization: s.config.magnetization(),
            energy: model.energy_of(|v| s.config.get(v)),
        })
    };
    if let Some(0) = record_every {
        return input("record interval must be positive");
    }
    if steps == 0 {
        if record_every.is_some() {
            record(&state, &mut trajectory);
        }
        return Ok(ChainRun { state, trajectory });
    }
    let chain = Glauber::new(model)?;
    if record_every.is_some() {
        record(&state, &mut trajectory);
    }
    for _ in 0..steps {
        chain.step(&mut state);
        if let Some(k) = record_every {
            if state.step % k == 0 {
                record(&state, &mut trajectory);
            }
        }
    }
    Ok(ChainRun { state, trajectory })
}

/// Trajectory as CSV text with a header.
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut s = String::from("step,magnetization,energy\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.step, p.magnetization, p.energy));
    }
    s
}

#[derive(Debug, Clone)]
pub struct CouplingTrace {
    pub low: SpinConfiguration,
    pub high: SpinConfiguration,
    pub steps: u64,
    /// First step after which the chains agree everywhere.
    pub coalescence_step: Option<u64>,
    /// Steps at which `low <= high` failed; always zero for a valid coupling.
    pub order_violations: u64,
    pub disagreement_set: Vec<usize>,
    /// Per vertex, the step of its first update (if any).
    pub first_update: Vec<Option<u64>>,
}

/// Two chains from `low <= high` driven by the same vertex choices and
/// uniforms. Order is checked after every step.
pub fn monotone_coupled_run(
    model: &IsingModel,
    low: SpinConfiguration,
    high: SpinConfiguration,
    steps: u64,
    seed: u64,
) -> Result<CouplingTrace> {
    model.require_ferromagnetic()?;
    model.check_configuration(&low)?;
    model.check_configuration(&high)?;
    let mut lo = low;
    let mut hi = high;
    model.apply_pinning(&mut lo);
    model.apply_pinning(&mut hi);
    if !lo.le(&hi) {
        return input("initial states are not ordered low <= high");
    }
    let chain = Glauber::new(model)?;
    let mut rng = substream(seed, Purpose::Coupling, 0);
    let mut differ = lo.disagreements(&hi).len();
    let mut coalescence = if differ == 0 { Some(0) } else { None };
    let mut violations = 0;
    let mut first_update = vec![None; model.num_vertices()];
    for t in 1..=steps {
        let v = chain.pick(uniform(&mut rng));
        let u = uniform(&mut rng);
        let before = lo.get(v) != hi.get(v);
        let a = chain.update(&mut lo, v, u);
        let b = chain.update(&mut hi, v, u);
        if a && !b {
            violations += 1;
        }
        first_update[v].get_or_insert(t);
        let after = a != b;
        if before && !after {
            differ -= 1;
        } else if !before && after {
            differ += 1;
        }
        if differ == 0 && coalescence.is_none() {
            coalescence = Some(t);
        }
    }
    let disagreement_set = lo.disagreements(&hi);
    Ok(CouplingTrace {
        low: lo,
        high: hi,
        steps,
        coalescence_step: coalescence,
        order_violations: violations,
        disagreement_set,
        first_update,
    })
}

/// How the grand coupling orders its revelations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevelationOrder {
    /// Breadth-first from the endpoints of the distinguished edge.
    Bfs,
    /// Breadth-first through open sites only, starting from the edge
    /// endpoints; once that exploration stops, the remaining vertices follow
    /// in breadth-first order. The choice of the next vertex only looks at
    /// sites already revealed.
    ClusterFirst,
}

/// Vertex order for one grand-coupling run. `open[x]` may only be read once
/// `x` is revealed, which is how both variants use it.
pub fn revelation_order(
    g: &Graph,
    edge: (usize, usize),
    kind: RevelationOrder,
    open: &[bool],
) -> Result<Vec<usize>> {
    let (u, v) = edge;
    if u >= g.num_vertices() || v >= g.num_vertices() || g.edge_index(u, v).is_none() {
        return input(format!("({u}, {v}) is not an edge"));
    }
    let n = g.num_vertices();
    let bfs = {
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([u, v]);
        seen[u] = true;
        seen[v] = true;
        while let Some(x) = queue.pop_front() {
            order.push(x);
            for &y in g.neighbors(x) {
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        // other components in index order
        for s in 0..n {
            if !seen[s] {
                seen[s] = true;
                order.push(s);
            }
        }
        order
    };
    match kind {
        RevelationOrder::Bfs => Ok(bfs),
        RevelationOrder::ClusterFirst => {
            let mut revealed = vec![false; n];
            let mut queued = vec![false; n];
            let mut order = Vec::with_capacity(n);
            let mut queue = VecDeque::from([u, v]);
            queued[u] = true;
            queued[v] = true;
            while let Some(x) = queue.pop_front() {
                revealed[x] = true;
                order.push(x);
                if x == u || x == v || open[x] {
                    for &y in g.neighbors(x) {
                        if !queued[y] {
                            queued[y] = true;
                            queue.push_back(y);
                        }
                    }
                }
            }
            order.extend(bfs.into_iter().filter(|&x| !revealed[x]));
            Ok(order)
        }
    }
}

/// Exact sequential sampling of several measures on one vertex set with a
/// shared uniform per revealed vertex: each model's spin at the revealed
/// vertex is "up iff `U < P(up | previously revealed spins)`".
pub struct GrandCoupling {
    tables: Vec<GibbsTable>,
    n: usize,
}

#[derive(Debug, Clone)]
pub struct GrandOutcome {
    pub states: Vec<SpinConfiguration>,
    /// Vertices where some two states differ.
    pub disagreement: Vec<usize>,
}

impl GrandCoupling {
    pub fn new(models: &[IsingModel]) -> Result<Self> {
        let n = models
            .first()
            .map(IsingModel::num_vertices)
            .ok_or_else(|| Error::Input("no models to couple".into()))?;
        if models.iter().any(|m| m.num_vertices() != n) {
            return input("coupled models must share a vertex set");
        }
        let tables = models.iter().map(gibbs_table).collect::<Result<Vec<_>>>()?;
        Ok(GrandCoupling { tables, n })
    }

    pub fn tables(&self) -> &[GibbsTable] {
        &self.tables
    }

    /// `order` must be a permutation of the vertices; `u[x]` is the uniform
    /// attached to vertex `x`.
    pub fn sample(&self, order: &[usize], u: &[f64]) -> Result<GrandOutcome> {
        if order.len() != self.n || u.len() != self.n {
            return input("order and uniforms must cover every vertex");
        }
        let mut seen = vec![false; self.n];
        for &x in order {
            if x >= self.n || std::mem::replace(&mut seen[x], true) {
                return input("order is not a permutation");
            }
        }
        let mut states = Vec::with_capacity(self.tables.len());
        for table in &self.tables {
            let model = table.model();
            let mut config = model.constant_configuration(false);
            let mut alive: Vec<usize> = (0..table.len()).collect();
            for &x in order {
                let up = match model.pinning().get(&x) {
                    Some(&s) => s,
                    None => {
                        let (mut mass, mut mass_up) = (0.0, 0.0);
                        for &i in &alive {
                            let p = table.probs()[i];
                            mass += p;
                            if table.is_up(i, x) {
                                mass_up += p;
                            }
                        }
                        let up = u[x] < mass_up / mass;
                        alive.retain(|&i| table.is_up(i, x) == up);
                        up
                    }
                };
                config.set(x, up);
            }
            states.push(config);
        }
        let disagreement = (0..self.n)
            .filter(|&x| states.iter().any(|s| s.get(x) != states[0].get(x)))
            .collect();
        Ok(GrandOutcome {
            states,
            disagreement,
        })
    }
}

/// Grand coupling along `order` with per-vertex uniforms taken from the
/// percolation stream of `seed`, so the same uniforms can drive a
/// percolation realization.
pub fn grand_coupled_update(models: &[IsingModel], order: &[usize], seed: u64) -> Result<GrandOutcome> {
    let gc = GrandCoupling::new(models)?;
    let u = uniforms(seed, Purpose::Percolation, 0, gc.n);
    gc.sample(order, &u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvPoint {
    pub step: u64,
    pub tv: f64,
    /// `½ Σ_x sqrt(μ(x)(1-μ(x))/R)`, an upper bound on the expected TV of
    /// `R` exact samples.
    pub noise: f64,
}

/// Empirical TV between `replicas` independent chains and the exact law at
/// each grid step.
pub fn empirical_tv_curve(
    model: &IsingModel,
    init: &SpinConfiguration,
    step_grid: &[u64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<TvPoint>> {
    let table = gibbs_table(model)?;
    if replicas == 0 {
        return input("need at least one replica");
    }
    let mut grid = step_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let free = model.free_vertices();
    let mut counts = vec![vec![0u64; table.len()]; grid.len()];
    let chain = if free.is_empty() { None } else { Some(Glauber::new(model)?) };
    for r in 0..replicas {
        let mut state = ChainState::new(model, init.clone(), seed, r as u64)?;
        for (g, &target) in grid.iter().enumerate() {
            if let Some(chain) = &chain {
                while state.step < target {
                    chain.step(&mut state);
                }
            }
            counts[g][state.config.index_over(&free)] += 1;
        }
    }
    let rf = replicas as f64;
    let noise = 0.5
        * table
            .probs()
            .iter()
            .map(|p| (p * (1.0 - p) / rf).sqrt())
            .sum::<f64>();
    Ok(grid
        .iter()
        .zip(counts)
        .map(|(&step, c)| {
            let tv = 0.5
                * c.iter()
                    .zip(table.probs())
                    .map(|(&k, p)| (k as f64 / rf - p).abs())
                    .sum::<f64>();
            TvPoint { step, tv, noise }
        })
        .collect())
}

/// `c · gap⁻¹ (ln(1/η) + ln(1/ε))`, the gap-based mixing-time form with
/// `η` the smallest initial-state probability.
pub fn predicted_mixing_time(gap: f64, eta: f64, eps: f64, c: f64) -> f64 {
    c / gap * ((1.0 / eta).ln() + (1.0 / eps).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generators, Graph};
    use crate::model::Convention;
    use crate::oracle::{conditional_table, glauber_gap};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn model(g: Graph, beta: f64, h: Vec<f64>) -> IsingModel {
        IsingModel::with_uniform_coupling(Arc::new(g), beta, h, Convention::PlusMinus).unwrap()
    }

    #[test]
    fn step_probabilities() {
        let iso = model(Graph::new(1, &[]).unwrap(), 0.0, vec![0.0]);
        let c = iso.constant_configuration(true);
        assert_eq!(iso.prob_up(0, &c), 0.5);

        // field ln(3)/2 gives S = ln 3 / 2 and P(+1) = e^{2S}/(e^{2S}+1) = 0.75;
        // the ±1 heat-bath probability at S = ln 3 is 9/10
        let m = model(Graph::new(1, &[]).unwrap(), 0.0, vec![3f64.ln()]);
        let p = m.prob_up(0, &m.constant_configuration(true));
        assert!((p - 0.9).abs() < 1e-15);
    }

    #[test]
    fn pinned_neighbor_matches_conditional_table() {
        let g = generators::path(3);
        let m = model(g, 0.7, vec![0.2, -0.3, 0.4])
            .pin(&BTreeMap::from([(0, true), (2, false)]))
            .unwrap();
        let t = conditional_table(&m, &BTreeMap::new()).unwrap();
        let c = m.constant_configuration(false);
        assert!((m.prob_up(1, &c) - t.marginal_up(1)).abs() < 1e-15);
    }

    #[test]
    fn run_chain_examples() {
        let m = model(generators::path(3), 0.5, vec![0.0; 3]);
        let init = m.constant_configuration(true);
        let r = run_chain(&m, init.clone(), 0, 1, None).unwrap();
        assert_eq!(r.state.config, init);
        let a = run_chain(&m, init.clone(), 500, 4, Some(10)).unwrap();
        let b = run_chain(&m, init.clone(), 500, 4, Some(10)).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.state.config, b.state.config);
        assert_eq!(a.trajectory.len(), 51);
        assert!(trajectory_csv(&a.trajectory).starts_with("step,magnetization,energy\n0,1,"));
    }

    #[test]
    fn single_vertex_is_stationary_after_one_step() {
        let h = 0.4f64;
        let m = model(Graph::new(1, &[]).unwrap(), 0.0, vec![h]);
        let p = (h.exp()) / (2.0 * h.cosh());
        let replicas = 100_000;
        let mut ups = 0;
        for r in 0..replicas {
            let mut s = ChainState::new(&m, m.constant_configuration(false), 3, r).unwrap();
            glauber_step(&m, &mut s).unwrap();
            ups += usize::from(s.config.get(0));
        }
        let sigma = (p * (1.0 - p) / replicas as f64).sqrt();
        assert!((ups as f64 / replicas as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn pinned_vertices_never_move() {
        let m = model(generators::cycle(5).unwrap(), 0.8, vec![0.0; 5])
            .pin(&BTreeMap::from([(2, false)]))
            .unwrap();
        let r = run_chain(&m, SpinConfiguration::uniform(5, true, Convention::PlusMinus), 2000, 9, None)
            .unwrap();
        assert!(!r.state.config.get(2));
    }

    #[test]
    fn monotone_examples() {
        let m = model(generators::path(3), 0.5, vec![0.0; 3]);
        let top = m.constant_configuration(true);
        let t = monotone_coupled_run(&m, top.clone(), top.clone(), 1000, 1).unwrap();
        assert!(t.disagreement_set.is_empty() && t.coalescence_step == Some(0));

        for seed in 0..100 {
            let t = monotone_coupled_run(&m, m.constant_configuration(false), top.clone(), 10_000, seed)
                .unwrap();
            assert_eq!(t.order_violations, 0);
            assert!(t.low.le(&t.high));
        }

        let free = model(generators::path(3), 0.0, vec![0.3, 0.0, -0.2]);
        let t = monotone_coupled_run(&free, free.constant_configuration(false), free.constant_configuration(true), 50, 7)
            .unwrap();
        let last_first = t.first_update.iter().map(|x| x.unwrap()).max().unwrap();
        assert_eq!(t.coalescence_step, Some(last_first));

        let anti = model(generators::path(2), -0.5, vec![0.0; 2]);
        assert!(matches!(
            monotone_coupled_run(&anti, anti.constant_configuration(false), anti.constant_configuration(true), 1, 0),
            Err(Error::NotFerromagnetic)
        ));
        assert!(monotone_coupled_run(&m, top.clone(), m.constant_configuration(false), 1, 0).is_err());
    }

    #[test]
    fn revelation_orders() {
        let g = generators::path(5);
        let bfs = revelation_order(&g, (0, 1), RevelationOrder::Bfs, &[false; 5]).unwrap();
        assert_eq!(bfs, vec![0, 1, 2, 3, 4]);
        let open = [false, false, false, true, true];
        let cf = revelation_order(&g, (3, 4), RevelationOrder::ClusterFirst, &open).unwrap();
        assert_eq!(cf, vec![3, 4, 2, 1, 0]);
        assert!(revelation_order(&g, (0, 2), RevelationOrder::Bfs, &[false; 5]).is_err());
    }

    #[test]
    fn grand_coupling_examples() {
        let g = generators::complete(3);
        let m = model(g.clone(), 0.3, vec![0.2, -0.1, 0.4]).to_zero_one().unwrap();
        let order = [0, 1, 2];
        let out = grand_coupled_update(&[m.clone(), m.clone()], &order, 5).unwrap();
        assert!(out.disagreement.is_empty());

        let indep = model(generators::path(4), 0.0, vec![0.1, 0.2, -0.3, 0.0]).to_zero_one().unwrap();
        let pinned = indep.pin(&BTreeMap::from([(1, true), (2, true)])).unwrap();
        for seed in 0..200 {
            let out = grand_coupled_update(&[indep.clone(), pinned.clone()], &[1, 2, 0, 3], seed).unwrap();
            assert!(out.disagreement.iter().all(|&x| x == 1 || x == 2));
        }
        let small = model(generators::path(2), 0.0, vec![0.0; 2]);
        assert!(grand_coupled_update(&[m, small], &order, 0).is_err());
    }

    #[test]
    fn grand_coupling_marginals_match_oracle() {
        let k3 = model(generators::complete(3), 0.3, vec![0.5, -0.2, 0.1]).to_zero_one().unwrap();
        let cond = k3.pin(&BTreeMap::from([(0, true), (1, true)])).unwrap();
        let gc = GrandCoupling::new(&[k3.clone(), cond.clone()]).unwrap();
        let runs = 10_000;
        let mut ups = [[0usize; 3]; 2];
        for r in 0..runs {
            let u = uniforms(77, Purpose::Percolation, r, 3);
            let out = gc.sample(&[0, 1, 2], &u).unwrap();
            for (m, s) in out.states.iter().enumerate() {
                for (x, c) in ups[m].iter_mut().enumerate() {
                    *c += usize::from(s.get(x));
                }
            }
        }
        for (m, table) in gc.tables().iter().enumerate() {
            for x in 0..3 {
                let p = table.marginal_up(x);
                let sigma = (p * (1.0 - p) / runs as f64).sqrt();
                let freq = ups[m][x] as f64 / runs as f64;
                assert!((freq - p).abs() <= 3.0 * sigma + 1e-12, "model {m} vertex {x}");
            }
        }
    }

    #[test]
    fn tv_curve_examples() {
        let m = model(generators::path(3), 1.0, vec![0.0; 3]);
        let init = m.constant_configuration(true);
        let table = gibbs_table(&m).unwrap();
        let curve = empirical_tv_curve(&m, &init, &[0], 10, 1).unwrap();
        assert!((curve[0].tv - (1.0 - table.prob_of(&init).unwrap())).abs() < 1e-12);

        let single = model(Graph::new(1, &[]).unwrap(), 0.0, vec![0.3]);
        let c = empirical_tv_curve(&single, &single.constant_configuration(false), &[1], 20_000, 2).unwrap();
        assert!(c[0].tv <= 3.0 * c[0].noise);
    }

    #[test]
    fn tv_decays_by_predicted_time() {
        let m = model(generators::path(3), 1.0, vec![0.0; 3]);
        let init = m.constant_configuration(true);
        let gap = glauber_gap(&m).unwrap().gap;
        let table = gibbs_table(&m).unwrap();
        let eta = table.prob_of(&init).unwrap();
        // calibration constant fixed once from a separate run at eps = 0.1
        let c = 1.0;
        let t = predicted_mixing_time(gap, eta, 0.02, c).ceil() as u64;
        let curve = empirical_tv_curve(&m, &init, &[t], 20_000, 8).unwrap();
        assert!(curve[0].tv < 0.02, "tv {} at step {t}", curve[0].tv);
    }

    #[test]
    fn detailed_balance_from_stationary_starts() {
        let m = model(generators::path(2), 0.6, vec![0.3, -0.2]);
        let table = gibbs_table(&m).unwrap();
        let chain = Glauber::new(&m).unwrap();
        let mut rng = substream(5, Purpose::Experiment, 0);
        let draws = 200_000;
        let mut flow = [[0u64; 4]; 4];
        let cdf: Vec<f64> = table
            .probs()
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        for _ in 0..draws {
            let u = uniform(&mut rng);
            let x = cdf.iter().position(|&c| u < c).unwrap_or(3);
            let mut c = table.configuration(x);
            let v = chain.pick(uniform(&mut rng));
            chain.update(&mut c, v, uniform(&mut rng));
            flow[x][c.index_over(&[0, 1])] += 1;
        }
        for x in 0..4 {
            for y in 0..4 {
                let a = flow[x][y] as f64 / draws as f64;
                let b = flow[y][x] as f64 / draws as f64;
                let sigma = ((a + b) / draws as f64).sqrt();
                assert!((a - b).abs() <= 3.0 * sigma + 1e-12, "{x}->{y}");
            }
        }
    }
}
