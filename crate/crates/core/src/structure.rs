//! Bayesian-network structure learning over feature columns.
//!
//! Every node family is scored with a linear-Gaussian BIC:
//! the child is regressed on `[1, parents]` by least squares, the variance is
//! the MLE `σ̂² = RSS / M` (floored at `1e-12`), and
//!
//! `local = −(M/2)(ln(2π σ̂²) + 1) − (ln M / 2)(|parents| + 2)`.
//!
//! The total score decomposes as the sum of node-family scores, which lets the
//! hill climber rescore only the families a move touches.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpliftError};
use crate::linalg::solve_spd;
use crate::rng::{derive_seed, SeededRng};

pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const SINGULAR_RIDGE: f64 = 1e-8;
/// Smallest score gain accepted as an improvement.
pub const MIN_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalScore {
    pub score: f64,
    /// The parent design was singular and a `1e-8` ridge was applied.
    pub ridge_fallback: bool,
}

/// Centered cross-product matrix of the data, from which every family's
/// residual sum of squares follows.
#[derive(Debug, Clone)]
struct Scatter {
    m: usize,
    s: DMatrix<f64>,
}

impl Scatter {
    fn new(data: &DMatrix<f64>) -> Self {
        let m = data.nrows();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            let mean = col.sum() / m as f64;
            col.add_scalar_mut(-mean);
        }
        Self {
            m,
            s: centered.transpose() * &centered,
        }
    }

    fn local(&self, child: usize, parents: &[usize]) -> Result<LocalScore> {
        let m = self.m;
        if m < parents.len() + 3 {
            return Err(UpliftError::Contract(format!(
                "BIC needs at least |parents| + 3 = {} rows, got {m}",
                parents.len() + 3
            )));
        }
        let mut rss = self.s[(child, child)];
        let mut ridge_fallback = false;
        if !parents.is_empty() {
            let k = parents.len();
            let spp = DMatrix::from_fn(k, k, |a, b| self.s[(parents[a], parents[b])]);
            let spc = DVector::from_fn(k, |a, _| self.s[(parents[a], child)]);
            let beta = match solve_spd(&spp, &spc) {
                Some(beta) => beta,
                None => {
                    ridge_fallback = true;
                    let mut reg = spp.clone();
                    for a in 0..k {
                        reg[(a, a)] += SINGULAR_RIDGE * spp[(a, a)].max(1.0);
                    }
                    solve_spd(&reg, &spc)
                        .or_else(|| reg.lu().solve(&spc))
                        .unwrap_or_else(|| DVector::zeros(k))
                }
            };
            rss -= spc.dot(&beta);
        }
        let var = (rss / m as f64).max(VARIANCE_FLOOR);
        let mf = m as f64;
        let score = -(mf / 2.0) * ((2.0 * std::f64::consts::PI * var).ln() + 1.0)
            - (mf.ln() / 2.0) * (parents.len() as f64 + 2.0);
        Ok(LocalScore {
            score,
            ridge_fallback,
        })
    }
}

/// Linear-Gaussian BIC of one node family.
pub fn bic_local(child: usize, parents: &[usize], data: &DMatrix<f64>) -> Result<LocalScore> {
    let d = data.ncols();
    if child >= d || parents.iter().any(|&p| p >= d || p == child) {
        return Err(UpliftError::Contract(format!(
            "family {child} <- {parents:?} is not valid over {d} columns"
        )));
    }
    Scatter::new(data).local(child, parents)
}

/// Family-score cache over one dataset.
#[derive(Debug, Clone)]
pub struct BicScorer {
    scatter: Scatter,
    d: usize,
    cache: HashMap<(usize, Vec<usize>), LocalScore>,
    pub evaluations: usize,
}

impl BicScorer {
    pub fn new(data: &DMatrix<f64>) -> Self {
        Self {
            scatter: Scatter::new(data),
            d: data.ncols(),
            cache: HashMap::new(),
            evaluations: 0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.d
    }

    pub fn n_rows(&self) -> usize {
        self.scatter.m
    }

    pub fn local(&mut self, child: usize, parents: &[usize]) -> Result<f64> {
        let mut key = parents.to_vec();
        key.sort_unstable();
        if let Some(hit) = self.cache.get(&(child, key.clone())) {
            return Ok(hit.score);
        }
        self.evaluations += 1;
        let local = self.scatter.local(child, &key)?;
        self.cache.insert((child, key), local);
        Ok(local.score)
    }

    pub fn local_scores(&mut self, adj: &[Vec<u8>]) -> Result<Vec<f64>> {
        if !is_acyclic(adj) {
            return Err(UpliftError::Contract("graph contains a cycle".into()));
        }
        (0..adj.len())
            .map(|c| self.local(c, &parents_of(adj, c)))
            .collect()
    }

    pub fn structure(&mut self, adj: Vec<Vec<u8>>) -> Result<DagStructure> {
        let local_scores = self.local_scores(&adj)?;
        Ok(DagStructure {
            score: local_scores.iter().sum(),
            adj,
            local_scores,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagStructure {
    /// `adj[p][c] == 1` means an edge `p → c`.
    pub adj: Vec<Vec<u8>>,
    pub score: f64,
    pub local_scores: Vec<f64>,
}

impl DagStructure {
    pub fn empty(d: usize) -> Vec<Vec<u8>> {
        vec![vec![0; d]; d]
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        edges(&self.adj)
    }

    /// Undirected edge set as sorted pairs.
    pub fn skeleton(&self) -> Vec<(usize, usize)> {
        let mut s: Vec<(usize, usize)> = self
            .edges()
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Induced subgraph on `nodes`, rescored on `data` (whose columns
    /// correspond to `nodes`).
    pub fn restrict(&self, nodes: &[usize], data: &DMatrix<f64>) -> Result<DagStructure> {
        let adj = nodes
            .iter()
            .map(|&p| nodes.iter().map(|&c| self.adj[p][c]).collect())
            .collect();
        BicScorer::new(data).structure(adj)
    }

    pub fn edge_list(&self, names: &[String]) -> String {
        let mut out = String::new();
        for (p, c) in self.edges() {
            let _ = writeln!(out, "{} -> {}", names[p], names[c]);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: DagStructure = serde_json::from_str(s)?;
        let d = g.adj.len();
        if g.adj.iter().any(|row| row.len() != d) || g.local_scores.len() != d {
            return Err(UpliftError::Data(
                "malformed DAG: adjacency must be square".into(),
            ));
        }
        if (0..d).any(|i| g.adj[i][i] != 0) || !is_acyclic(&g.adj) {
            return Err(UpliftError::Data(
                "malformed DAG: self-edge or cycle".into(),
            ));
        }
        Ok(g)
    }
}

pub fn edges(adj: &[Vec<u8>]) -> Vec<(usize, usize)> {
    let d = adj.len();
    (0..d)
        .flat_map(|p| (0..d).filter(move |&c| adj[p][c] != 0).map(move |c| (p, c)))
        .collect()
}

pub fn parents_of(adj: &[Vec<u8>], child: usize) -> Vec<usize> {
    (0..adj.len()).filter(|&p| adj[p][child] != 0).collect()
}

/// Kahn's algorithm; `None` when the graph has a cycle.
pub fn topological_order(adj: &[Vec<u8>]) -> Option<Vec<usize>> {
    let d = adj.len();
    let mut indegree: Vec<usize> = (0..d).map(|c| parents_of(adj, c).len()).collect();
    let mut ready: Vec<usize> = (0..d).rev().filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(v) = ready.pop() {
        order.push(v);
        for c in (0..d).rev() {
            if adj[v][c] != 0 {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
    }
    (order.len() == d).then_some(order)
}

pub fn is_acyclic(adj: &[Vec<u8>]) -> bool {
    topological_order(adj).is_some()
}

/// Sum of family scores; errors on a cyclic graph.
pub fn bic_total(adj: &[Vec<u8>], data: &DMatrix<f64>) -> Result<f64> {
    if adj.len() != data.ncols() {
        return Err(UpliftError::shape(
            format!("{} nodes", data.ncols()),
            adj.len(),
        ));
    }
    Ok(BicScorer::new(data).local_scores(adj)?.iter().sum())
}

fn reachable(adj: &[Vec<u8>], from: usize, to: usize) -> bool {
    let d = adj.len();
    let mut seen = vec![false; d];
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        stack.extend((0..d).filter(|&c| adj[v][c] != 0 && !seen[c]));
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Add,
    Delete,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub kind: MoveKind,
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HillClimbOptions {
    pub max_iters: usize,
    /// Extra runs started from random DAGs after the empty-graph run.
    pub restarts: usize,
    pub parent_cap: usize,
    pub seed: u64,
    /// Edge probability of the random restart DAGs.
    pub restart_edge_prob: f64,
}

impl Default for HillClimbOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            restarts: 0,
            parent_cap: 5,
            seed: 0,
            restart_edge_prob: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClimbRun {
    /// Graph the run started from.
    pub start: Vec<Vec<u8>>,
    pub start_score: f64,
    /// Total score after each applied move.
    pub trace: Vec<f64>,
    pub moves: Vec<Move>,
    pub result: DagStructure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HillClimbResult {
    pub best: DagStructure,
    pub runs: Vec<ClimbRun>,
}

impl HillClimbResult {
    pub fn iterations(&self) -> usize {
        self.runs.iter().map(|r| r.moves.len()).sum()
    }
}

pub fn hill_climb(data: &DMatrix<f64>, opts: &HillClimbOptions) -> Result<HillClimbResult> {
    let d = data.ncols();
    if d == 0 {
        return Err(UpliftError::Config(
            "structure search needs at least one column".into(),
        ));
    }
    if data.nrows() < 5 {
        return Err(UpliftError::Config(format!(
            "structure search needs at least 5 rows, got {}",
            data.nrows()
        )));
    }
    if opts.parent_cap + 3 > data.nrows() {
        return Err(UpliftError::Config(format!(
            "parent cap {} needs at least {} rows",
            opts.parent_cap,
            opts.parent_cap + 3
        )));
    }
    let mut scorer = BicScorer::new(data);
    let mut runs = Vec::with_capacity(opts.restarts + 1);
    for r in 0..=opts.restarts {
        let start = if r == 0 {
            DagStructure::empty(d)
        } else {
            let mut rng = SeededRng::new(derive_seed(opts.seed, r as u64));
            random_dag(d, opts.restart_edge_prob, opts.parent_cap, &mut rng)
        };
        runs.push(climb_from(&mut scorer, start, opts)?);
    }
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.result.score > runs[best].result.score {
            best = i;
        }
    }
    Ok(HillClimbResult {
        best: runs[best].result.clone(),
        runs,
    })
}

/// Random DAG: a seeded node order, each forward pair connected with
/// probability `p` while the child stays under the parent cap.
pub fn random_dag(d: usize, p: f64, parent_cap: usize, rng: &mut SeededRng) -> Vec<Vec<u8>> {
    let order = rng.permutation(d);
    let mut adj = DagStructure::empty(d);
    for b in 1..d {
        let child = order[b];
        for &parent in &order[..b] {
            if rng.bernoulli(p) && parents_of(&adj, child).len() < parent_cap {
                adj[parent][child] = 1;
            }
        }
    }
    adj
}

fn climb_from(
    scorer: &mut BicScorer,
    start: Vec<Vec<u8>>,
    opts: &HillClimbOptions,
) -> Result<ClimbRun> {
    let d = start.len();
    let mut current = scorer.structure(start.clone())?;
    let start_score = current.score;
    let mut trace = Vec::new();
    let mut moves = Vec::new();
    if d < 2 {
        return Ok(ClimbRun {
            start,
            start_score,
            trace,
            moves,
            result: current,
        });
    }
    for _ in 0..opts.max_iters {
        let Some((mv, gain, touched)) = best_move(scorer, &current, opts.parent_cap)? else {
            break;
        };
        apply(&mut current.adj, mv);
        for (node, local) in touched {
            current.local_scores[node] = local;
        }
        let next: f64 = current.local_scores.iter().sum();
        debug_assert!(next > current.score, "gain {gain}");
        current.score = next;
        trace.push(next);
        moves.push(mv);
    }
    Ok(ClimbRun {
        start,
        start_score,
        trace,
        moves,
        result: current,
    })
}

fn apply(adj: &mut [Vec<u8>], mv: Move) {
    let (s, t) = (mv.source, mv.target);
    match mv.kind {
        MoveKind::Add => adj[s][t] = 1,
        MoveKind::Delete => adj[s][t] = 0,
        MoveKind::Reverse => {
            adj[s][t] = 0;
            adj[t][s] = 1;
        }
    }
}

type Touched = Vec<(usize, f64)>;

/// Largest-gain legal move, scanning add < delete < reverse, then source,
/// then target; a later candidate wins only with a strictly larger gain.
fn best_move(
    scorer: &mut BicScorer,
    g: &DagStructure,
    parent_cap: usize,
) -> Result<Option<(Move, f64, Touched)>> {
    let d = g.n_nodes();
    let adj = &g.adj;
    let mut best: Option<(Move, f64, Touched)> = None;
    let consider =
        |mv: Move, gain: f64, touched: Touched, best: &mut Option<(Move, f64, Touched)>| {
            if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.1) {
                *best = Some((mv, gain, touched));
            }
        };
    for s in 0..d {
        for t in 0..d {
            if s == t || adj[s][t] != 0 || adj[t][s] != 0 {
                continue;
            }
            let mut pa = parents_of(adj, t);
            if pa.len() >= parent_cap || reachable(adj, t, s) {
                continue;
            }
            pa.push(s);
            let local = scorer.local(t, &pa)?;
            let mv = Move {
                kind: MoveKind::Add,
                source: s,
                target: t,
            };
            consider(mv, local - g.local_scores[t], vec![(t, local)], &mut best);
        }
    }
    for s in 0..d {
        for t in 0..d {
            if adj[s][t] == 0 {
                continue;
            }
            let pa: Vec<usize> = parents_of(adj, t).into_iter().filter(|&p| p != s).collect();
            let local = scorer.local(t, &pa)?;
            let mv = Move {
                kind: MoveKind::Delete,
                source: s,
                target: t,
            };
            consider(mv, local - g.local_scores[t], vec![(t, local)], &mut best);
        }
    }
    let mut scratch = adj.clone();
    for s in 0..d {
        for t in 0..d {
            if adj[s][t] == 0 {
                continue;
            }
            let mut pa_s = parents_of(adj, s);
            if pa_s.len() >= parent_cap {
                continue;
            }
            scratch[s][t] = 0;
            let cyclic = reachable(&scratch, s, t);
            scratch[s][t] = 1;
            if cyclic {
                continue;
            }
            let pa_t: Vec<usize> = parents_of(adj, t).into_iter().filter(|&p| p != s).collect();
            pa_s.push(t);
            let local_t = scorer.local(t, &pa_t)?;
            let local_s = scorer.local(s, &pa_s)?;
            let gain = (local_t - g.local_scores[t]) + (local_s - g.local_scores[s]);
            let mv = Move {
                kind: MoveKind::Reverse,
                source: s,
                target: t,
            };
            consider(mv, gain, vec![(t, local_t), (s, local_s)], &mut best);
        }
    }
    Ok(best)
}

/// `D̂^{-1/2} Â D̂^{-1/2}` with `Â = (adj ∨ adjᵀ) + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnAdjacency {
    pub a_norm: DMatrix<f64>,
}

impl GcnAdjacency {
    pub fn identity(d: usize) -> Self {
        Self {
            a_norm: DMatrix::identity(d, d),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.a_norm.nrows()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(UpliftError::Data("adjacency must be square".into()));
        }
        Ok(Self {
            a_norm: DMatrix::from_fn(d, d, |i, j| rows[i][j]),
        })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.a_norm
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        for row in self.rows() {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn to_gcn_adjacency(g: &DagStructure) -> GcnAdjacency {
    normalized_adjacency(&g.adj)
}

pub fn normalized_adjacency(adj: &[Vec<u8>]) -> GcnAdjacency {
    let d = adj.len();
    let a_hat = DMatrix::<f64>::from_fn(d, d, |i, j| {
        if i == j || adj[i][j] != 0 || adj[j][i] != 0 {
            1.0
        } else {
            0.0
        }
    });
    let inv_sqrt: Vec<f64> = a_hat.row_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    GcnAdjacency {
        a_norm: DMatrix::from_fn(d, d, |i, j| a_hat[(i, j)] * inv_sqrt[i] * inv_sqrt[j]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_data(m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = SeededRng::new(seed);
        let mut data = DMatrix::zeros(m, 3);
        for i in 0..m {
            let a = rng.standard_normal();
            let b = a + 0.2 * rng.standard_normal();
            let c = b + 0.2 * rng.standard_normal();
            data[(i, 0)] = a;
            data[(i, 1)] = b;
            data[(i, 2)] = c;
        }
        data
    }

    #[test]
    fn parentless_local_matches_gaussian_mle() {
        let mut rng = SeededRng::new(1);
        let m = 1000;
        let data = DMatrix::from_fn(m, 1, |_, _| rng.standard_normal());
        let mean = data.column(0).sum() / m as f64;
        let var = data
            .column(0)
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / m as f64;
        let mf = m as f64;
        let expected = -(mf / 2.0) * ((2.0 * std::f64::consts::PI * var).ln() + 1.0) - mf.ln();
        let got = bic_local(0, &[], &data).unwrap();
        assert!((got.score - expected).abs() < 1e-9 * expected.abs());
        assert!(!got.ridge_fallback);
    }

    #[test]
    fn perfect_parent_hits_variance_floor() {
        let mut rng = SeededRng::new(2);
        let mut data = DMatrix::from_fn(200, 2, |_, _| rng.standard_normal());
        for i in 0..200 {
            data[(i, 1)] = data[(i, 0)];
        }
        let got = bic_local(1, &[0], &data).unwrap();
        let mf = 200.0_f64;
        let floor = -(mf / 2.0) * ((2.0 * std::f64::consts::PI * VARIANCE_FLOOR).ln() + 1.0)
            - (mf.ln() / 2.0) * 3.0;
        assert!(got.score.is_finite());
        assert!((got.score - floor).abs() < 1e-6, "{} vs {floor}", got.score);
    }

    #[test]
    fn collinear_parents_use_ridge_fallback() {
        let mut rng = SeededRng::new(3);
        let mut data = DMatrix::from_fn(100, 3, |_, _| rng.standard_normal());
        for i in 0..100 {
            data[(i, 1)] = 2.0 * data[(i, 0)];
        }
        let got = bic_local(2, &[0, 1], &data).unwrap();
        assert!(got.ridge_fallback);
        assert!(got.score.is_finite());
    }

    #[test]
    fn too_few_rows_violates_contract() {
        let data = DMatrix::from_fn(3, 2, |i, j| (i + j) as f64);
        assert!(matches!(
            bic_local(0, &[1], &data),
            Err(UpliftError::Contract(_))
        ));
    }

    #[test]
    fn cyclic_total_is_rejected() {
        let data = chain_data(50, 1);
        let adj = vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]];
        assert!(matches!(
            bic_total(&adj, &data),
            Err(UpliftError::Contract(_))
        ));
    }

    #[test]
    fn empty_total_is_sum_of_parentless_locals() {
        let data = chain_data(300, 2);
        let total = bic_total(&DagStructure::empty(3), &data).unwrap();
        let sum: f64 = (0..3)
            .map(|c| bic_local(c, &[], &data).unwrap().score)
            .sum();
        assert!((total - sum).abs() < 1e-9);
    }

    #[test]
    fn single_node_returns_empty_graph() {
        let data = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let res = hill_climb(&data, &HillClimbOptions::default()).unwrap();
        assert_eq!(res.best.adj, vec![vec![0]]);
        assert_eq!(res.iterations(), 0);
    }

    #[test]
    fn chain_skeleton_is_recovered() {
        let data = chain_data(2000, 5);
        let res = hill_climb(&data, &HillClimbOptions::default()).unwrap();
        assert_eq!(res.best.skeleton(), vec![(0, 1), (1, 2)]);
        let run = &res.runs[0];
        let mut prev = run.start_score;
        for &s in &run.trace {
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn restarts_never_lose_to_the_empty_start() {
        let data = chain_data(500, 9);
        let opts = HillClimbOptions {
            restarts: 3,
            seed: 4,
            ..Default::default()
        };
        let res = hill_climb(&data, &opts).unwrap();
        assert_eq!(res.runs.len(), 4);
        assert!(res.runs.iter().all(|r| r.result.score <= res.best.score));
        assert!(is_acyclic(&res.best.adj));
    }

    #[test]
    fn adjacency_hand_examples() {
        let a = normalized_adjacency(&DagStructure::empty(3));
        assert_eq!(a.a_norm, DMatrix::identity(3, 3));

        let a = normalized_adjacency(&[vec![0, 1], vec![0, 0]]);
        assert!(a.a_norm.iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let path = vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]];
        let a = normalized_adjacency(&path);
        assert_eq!(a.a_norm[(0, 2)], 0.0);
        assert!((a.a_norm[(0, 1)] - 1.0 / 6.0_f64.sqrt()).abs() < 1e-15);
        assert!((a.a_norm[(0, 1)] - 0.40825).abs() < 1e-5);
    }

    #[test]
    fn dag_json_round_trip_and_validation() {
        let data = chain_data(300, 3);
        let g = hill_climb(&data, &HillClimbOptions::default())
            .unwrap()
            .best;
        let back = DagStructure::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"adj":[[0,1],[1,0]],"score":0.0,"local_scores":[0.0,0.0]}"#;
        assert!(DagStructure::from_json(bad).is_err());
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        assert_eq!(g.edge_list(&names).lines().count(), g.edges().len());
    }
}
