//! Finite simple graphs, BFS metric geometry and prefix-connected orderings.
//!
//! Vertices are dense `0..n` indices. Edges are stored normalized as
//! `(min, max)` in first-insertion order; that order is the edge index used
//! by per-edge couplings, uniforms and correlation matrices throughout the
//! crate.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    incident: Vec<Vec<usize>>,
    index: HashMap<(usize, usize), usize>,
}

/// Serialized form: `{"n": .., "edges": [[u, v], ..]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl Graph {
    pub fn new(num_vertices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Graph {
            n: num_vertices,
            edges: Vec::with_capacity(edges.len()),
            adjacency: vec![Vec::new(); num_vertices],
            incident: vec![Vec::new(); num_vertices],
            index: HashMap::with_capacity(edges.len()),
        };
        for &(u, v) in edges {
            if u >= num_vertices || v >= num_vertices {
                return input(format!(
                    "edge ({u}, {v}) has an endpoint outside 0..{num_vertices}"
                ));
            }
            if u == v {
                return input(format!("self-loop at vertex {u}"));
            }
            let key = (u.min(v), u.max(v));
            if g.index.contains_key(&key) {
                continue;
            }
            let e = g.edges.len();
            g.index.insert(key, e);
            g.edges.push(key);
            g.adjacency[u].push(v);
            g.adjacency[v].push(u);
            g.incident[u].push(e);
            g.incident[v].push(e);
        }
        Ok(g)
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Edge indices incident to `v`, parallel to `neighbors(v)`.
    pub fn incident_edges(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.index.get(&(u.min(v), u.max(v))).copied()
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v >= self.n {
            return input(format!("vertex {v} outside 0..{}", self.n));
        }
        Ok(())
    }

    /// BFS distances from `source`; `None` for unreachable vertices.
    pub fn distances_from(&self, source: usize) -> Result<Vec<Option<usize>>> {
        self.check_vertex(source)?;
        Ok(self.bfs_distances(&[source]))
    }

    fn bfs_distances(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(x) = queue.pop_front() {
            let d = dist[x].unwrap();
            for &y in &self.adjacency[x] {
                if dist[y].is_none() {
                    dist[y] = Some(d + 1);
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    pub fn distance(&self, u: usize, v: usize) -> Result<Option<usize>> {
        self.check_vertex(v)?;
        Ok(self.distances_from(u)?[v])
    }

    /// Vertices at distance at most `r` from `v`, sorted.
    pub fn ball(&self, v: usize, r: usize) -> Result<Vec<usize>> {
        let dist = self.distances_from(v)?;
        Ok((0..self.n)
            .filter(|&w| matches!(dist[w], Some(d) if d <= r))
            .collect())
    }

    /// Vertices at distance exactly `r` from `v`, sorted.
    pub fn sphere(&self, v: usize, r: usize) -> Result<Vec<usize>> {
        let dist = self.distances_from(v)?;
        Ok((0..self.n).filter(|&w| dist[w] == Some(r)).collect())
    }

    /// Outer vertex boundary `{v not in a : v adjacent to a}`, sorted.
    pub fn boundary(&self, a: &[usize]) -> Result<Vec<usize>> {
        let mut inside = vec![false; self.n];
        for &v in a {
            self.check_vertex(v)?;
            inside[v] = true;
        }
        let mut out = vec![false; self.n];
        for &v in a {
            for &w in &self.adjacency[v] {
                if !inside[w] {
                    out[w] = true;
                }
            }
        }
        Ok((0..self.n).filter(|&w| out[w]).collect())
    }

    /// `ball(u, l) ∪ ball(v, l)` for an edge `(u, v)`.
    pub fn edge_ball(&self, e: (usize, usize), l: usize) -> Result<Vec<usize>> {
        if e.0 >= self.n || e.1 >= self.n || self.edge_index(e.0, e.1).is_none() {
            return input(format!("({}, {}) is not an edge", e.0, e.1));
        }
        let dist = self.bfs_distances(&[e.0, e.1]);
        Ok((0..self.n)
            .filter(|&w| matches!(dist[w], Some(d) if d <= l))
            .collect())
    }

    pub fn eccentricity(&self, v: usize) -> Result<usize> {
        Ok(self
            .distances_from(v)?
            .into_iter()
            .flatten()
            .max()
            .unwrap_or(0))
    }

    /// Largest finite distance between any two vertices (per component).
    pub fn diameter(&self) -> usize {
        (0..self.n)
            .map(|v| self.eccentricity(v).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            let dist = self.bfs_distances(&[s]);
            let comp: Vec<usize> = (0..self.n).filter(|&w| dist[w].is_some()).collect();
            for &w in &comp {
                seen[w] = true;
            }
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.n <= 1 || self.bfs_distances(&[0]).iter().all(Option::is_some)
    }

    /// Induced subgraph on `vertices` (in the given order). Returns the
    /// subgraph and, for each of its edges, the index of that edge in `self`.
    pub fn induced_subgraph(&self, vertices: &[usize]) -> Result<(Graph, Vec<usize>)> {
        let mut local = vec![usize::MAX; self.n];
        for (i, &v) in vertices.iter().enumerate() {
            self.check_vertex(v)?;
            if local[v] != usize::MAX {
                return input(format!("vertex {v} listed twice"));
            }
            local[v] = i;
        }
        let mut edges = Vec::new();
        let mut parent = Vec::new();
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            if local[u] != usize::MAX && local[v] != usize::MAX {
                edges.push((local[u], local[v]));
                parent.push(e);
            }
        }
        Ok((Graph::new(vertices.len(), &edges)?, parent))
    }

    /// Ordering `v_1..v_n` in which every prefix induces a connected subgraph,
    /// starting from a seeded random vertex.
    pub fn connected_ordering(&self, seed: u64) -> Result<Vec<usize>> {
        if self.n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = substream(seed, Purpose::Ordering, 0);
        let start = rng.random_range(0..self.n);
        self.connected_ordering_from(start, seed)
    }

    /// Randomized frontier growth from `start`: at each step a uniformly chosen
    /// vertex adjacent to the current prefix is appended.
    pub fn connected_ordering_from(&self, start: usize, seed: u64) -> Result<Vec<usize>> {
        self.check_vertex(start)?;
        let mut rng = substream(seed, Purpose::Ordering, 1);
        let mut in_order = vec![false; self.n];
        let mut on_frontier = vec![false; self.n];
        let mut order = vec![start];
        in_order[start] = true;
        let mut frontier: Vec<usize> = Vec::new();
        let extend = |v: usize, frontier: &mut Vec<usize>, in_order: &[bool], on: &mut [bool]| {
            for &w in &self.adjacency[v] {
                if !in_order[w] && !on[w] {
                    on[w] = true;
                    frontier.push(w);
                }
            }
        };
        extend(start, &mut frontier, &in_order, &mut on_frontier);
        while !frontier.is_empty() {
            let k = rng.random_range(0..frontier.len());
            let v = frontier.swap_remove(k);
            in_order[v] = true;
            order.push(v);
            extend(v, &mut frontier, &in_order, &mut on_frontier);
        }
        if let Some(vertex) = (0..self.n).find(|&v| !in_order[v]) {
            return Err(Error::Disconnected { start, vertex });
        }
        Ok(order)
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n: self.n,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
        }
    }

    pub fn from_json(json: &GraphJson) -> Result<Self> {
        let edges: Vec<(usize, usize)> = json.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::new(json.n, &edges)
    }

    /// Edge-list text: first line `n m`, then `m` lines `u v`.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.edges.len());
        for &(u, v) in &self.edges {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Input("empty edge list".into()))?;
        let nums = parse_pair(header)?;
        let (n, m) = nums;
        let mut edges = Vec::with_capacity(m);
        for line in lines {
            edges.push(parse_pair(line)?);
        }
        if edges.len() != m {
            return input(format!("header declares {m} edges, found {}", edges.len()));
        }
        Graph::new(n, &edges)
    }
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 2 {
        return input(format!("expected two integers, got {line:?}"));
    }
    let a = parts[0]
        .parse()
        .map_err(|_| Error::Input(format!("bad integer {:?}", parts[0])))?;
    let b = parts[1]
        .parse()
        .map_err(|_| Error::Input(format!("bad integer {:?}", parts[1])))?;
    Ok((a, b))
}

/// Ball-size profile against the stretched-exponential envelope `exp(c r^alpha)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GrowthProfile {
    pub alpha: f64,
    pub c_alpha: f64,
    pub per_radius_max_ball: Vec<(usize, usize)>,
    pub satisfied: bool,
}

pub fn growth_profile(g: &Graph, alpha: f64, c_alpha: f64) -> Result<GrowthProfile> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return input(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if c_alpha.is_nan() || c_alpha <= 0.0 {
        return input(format!("c_alpha must be positive, got {c_alpha}"));
    }
    let dists: Vec<Vec<Option<usize>>> = (0..g.num_vertices())
        .map(|v| g.bfs_distances(&[v]))
        .collect();
    let diam = dists
        .iter()
        .flat_map(|d| d.iter().flatten().copied())
        .max()
        .unwrap_or(0);
    let mut per_radius = Vec::with_capacity(diam);
    for r in 1..=diam {
        let max_ball = dists
            .iter()
            .map(|d| d.iter().filter(|x| matches!(x, Some(k) if *k <= r)).count())
            .max()
            .unwrap_or(0);
        per_radius.push((r, max_ball));
    }
    let satisfied = per_radius
        .iter()
        .all(|&(r, b)| (b as f64) <= (c_alpha * (r as f64).powf(alpha)).exp());
    Ok(GrowthProfile {
        alpha,
        c_alpha,
        per_radius_max_ball: per_radius,
        satisfied,
    })
}

/// Standard graph families.
pub mod generators {
    use super::*;

    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, &edges).expect("path edges are valid")
    }

    pub fn cycle(n: usize) -> Result<Graph> {
        if n < 3 {
            return input("a cycle needs at least 3 vertices");
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, &edges)
    }

    pub fn complete(n: usize) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                edges.push((u, v));
            }
        }
        Graph::new(n, &edges).expect("complete graph edges are valid")
    }

    /// `width x height` grid, vertex `(x, y)` at index `y * width + x`.
    pub fn grid(width: usize, height: usize) -> Graph {
        let idx = |x: usize, y: usize| y * width + x;
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if x + 1 < width {
                    edges.push((idx(x, y), idx(x + 1, y)));
                }
                if y + 1 < height {
                    edges.push((idx(x, y), idx(x, y + 1)));
                }
            }
        }
        Graph::new(width * height, &edges).expect("grid edges are valid")
    }

    /// Periodic grid; each side must be at least 3 to stay simple.
    pub fn torus(width: usize, height: usize) -> Result<Graph> {
        if width < 3 || height < 3 {
            return input("torus sides must be at least 3");
        }
        let idx = |x: usize, y: usize| y * width + x;
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                edges.push((idx(x, y), idx((x + 1) % width, y)));
                edges.push((idx(x, y), idx(x, (y + 1) % height)));
            }
        }
        Graph::new(width * height, &edges)
    }

    /// Complete `arity`-regular tree: the root has `arity` children and every
    /// other internal vertex `arity - 1`, down to `depth` levels.
    pub fn regular_tree(arity: usize, depth: usize) -> Graph {
        let mut edges = Vec::new();
        let mut level = vec![0usize];
        let mut n = 1;
        for d in 0..depth {
            let mut next = Vec::new();
            for &p in &level {
                let kids = if d == 0 { arity } else { arity.saturating_sub(1) };
                for _ in 0..kids {
                    edges.push((p, n));
                    next.push(n);
                    n += 1;
                }
            }
            level = next;
        }
        Graph::new(n, &edges).expect("tree edges are valid")
    }

    /// Uniform-ish random `degree`-regular simple graph by the pairing model
    /// with restarts.
    pub fn random_regular(n: usize, degree: usize, seed: u64) -> Result<Graph> {
        if degree >= n || (n * degree) % 2 != 0 {
            return input(format!("no simple {degree}-regular graph on {n} vertices"));
        }
        let mut rng = substream(seed, Purpose::Graph, 0);
        for _attempt in 0..10_000 {
            let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degree)).collect();
            stubs.shuffle(&mut rng);
            let mut seen = std::collections::HashSet::new();
            let mut edges = Vec::with_capacity(stubs.len() / 2);
            let mut ok = true;
            for pair in stubs.chunks(2) {
                let (u, v) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                if u == v || !seen.insert((u, v)) {
                    ok = false;
                    break;
                }
                edges.push((u, v));
            }
            if ok {
                return Graph::new(n, &edges);
            }
        }
        input("pairing model failed to produce a simple graph")
    }

    /// Random connected `degree`-regular graph.
    pub fn random_regular_connected(n: usize, degree: usize, seed: u64) -> Result<Graph> {
        for k in 0..1000u64 {
            let g = random_regular(n, degree, seed.wrapping_add(k.wrapping_mul(0x9E37_79B9)))?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        input("could not draw a connected regular graph")
    }
}
