//! Stage-two matching: stage-one pairs matched with each other by minimum-weight
//! perfect matching on the penalized covariate distance, labelling within each
//! quadruple the pair with the bigger exposure change.

mod blossom;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distances::{stage2_distance_matrix, trajectory, DistanceMatrix, DEFAULT_RHO_PRIME, DEFAULT_XI, FORBIDDEN};
use crate::error::{Error, Result};
use crate::ingest::csvio::{column_index, create, open};
use crate::ingest::COVARIATES;
use crate::match_bipartite::ClusterPair;
use crate::stats::{mean, std_dev};

use blossom::{max_weight_matching, max_weight_matching_with_duals, NONE};

/// Largest quantized edge weight handed to the integer blossom solver.
const WEIGHT_SCALE: f64 = (1u64 << 40) as f64;

/// Minimum-weight perfect matching of the real nodes of a distance matrix,
/// some of which may have been absorbed by phantom nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfectMatching {
    /// Matched real nodes, each pair ordered and the list sorted.
    pub pairs: Vec<(usize, usize)>,
    /// Real nodes matched to phantoms.
    pub discarded: Vec<usize>,
    /// Sum of the matched real-real entries, accumulated in `pairs` order.
    pub total: f64,
}

/// Exact minimum-weight perfect matching on `dist` extended with
/// `n_phantoms` extra nodes.
///
/// Phantoms connect to every real node at zero cost and never to each other,
/// so each one absorbs exactly one real node. Entries equal to [`FORBIDDEN`]
/// are treated as missing edges. Weights are mapped affinely onto integers in
/// `[0, 2^40]` and solved exactly as a maximum-cardinality maximum-weight
/// matching of the complemented weights.
pub fn solve_perfect_matching(dist: &DistanceMatrix, n_phantoms: usize) -> Result<PerfectMatching> {
    solve_with_limit(dist, n_phantoms, DENSE_LIMIT)
}

fn solve_with_limit(dist: &DistanceMatrix, n_phantoms: usize, dense_limit: usize) -> Result<PerfectMatching> {
    let n = dist.rows;
    if dist.cols != n || !dist.is_symmetric() {
        return Err(Error::InvalidInput("perfect matching needs a symmetric square matrix".into()));
    }
    let total_nodes = n + n_phantoms;
    if total_nodes % 2 == 1 {
        return Err(Error::Infeasible(format!(
            "{n} nodes with {n_phantoms} phantoms is odd; add or remove one phantom"
        )));
    }
    if n_phantoms > n {
        return Err(Error::Infeasible(format!(
            "{n_phantoms} phantoms cannot all be absorbed by {n} real nodes"
        )));
    }
    if n == 0 {
        return Ok(PerfectMatching { pairs: vec![], discarded: vec![], total: 0.0 });
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let w = dist.get(i, j);
            if w == FORBIDDEN {
                continue;
            }
            if !w.is_finite() {
                return Err(Error::InvalidInput(format!("distance ({i}, {j}) is not finite")));
            }
            lo = lo.min(w);
            hi = hi.max(w);
        }
    }
    if n_phantoms > 0 {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    let scale = if hi > lo { WEIGHT_SCALE / (hi - lo) } else { 0.0 };
    // Every perfect matching has the same number of edges, so maximizing the
    // complemented weights minimizes the original ones.
    let top = WEIGHT_SCALE as i64 + 1;
    let weight = |w: f64| top - ((w - lo) * scale).round() as i64;
    let phantom_weight = weight(0.0);

    let mate = if total_nodes <= dense_limit {
        let mut edges = Vec::with_capacity(total_nodes * (total_nodes - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let w = dist.get(i, j);
                if w != FORBIDDEN {
                    edges.push((i, j, weight(w)));
                }
            }
        }
        for ph in n..total_nodes {
            edges.extend((0..n).map(|i| (i, ph, phantom_weight)));
        }
        max_weight_matching(total_nodes, &edges, true)
    } else {
        sparse_matching(dist, n_phantoms, &weight, phantom_weight)
    };
    if mate.contains(&NONE) {
        return Err(Error::Infeasible("no perfect matching exists on the allowed edges".into()));
    }
    let mut pairs = Vec::new();
    let mut discarded = Vec::new();
    for (i, &m) in mate.iter().enumerate().take(n) {
        if m >= n {
            discarded.push(i);
        } else if i < m {
            pairs.push((i, m));
        }
    }
    let total = matching_total(dist, &pairs);
    Ok(PerfectMatching { pairs, discarded, total })
}

/// Node count up to which the complete graph is handed to the solver.
const DENSE_LIMIT: usize = 300;
/// Nearest neighbours per node in the initial candidate graph.
const CANDIDATES: usize = 20;

/// Solves on a candidate graph of nearest neighbours, then checks the dual
/// certificate against every omitted edge; edges with negative reduced cost
/// are added and the problem solved again until the certificate covers the
/// complete graph. The result is optimal for the complete graph.
fn sparse_matching(dist: &DistanceMatrix, n_phantoms: usize, weight: &dyn Fn(f64) -> i64, phantom_weight: i64) -> Vec<usize> {
    let n = dist.rows;
    let total_nodes = n + n_phantoms;
    let mut present = vec![false; n * n];
    let mut real: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        let mut near: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i && dist.get(i, j) != FORBIDDEN)
            .map(|j| (dist.get(i, j), j))
            .collect();
        let k = CANDIDATES.min(near.len());
        if k < near.len() {
            near.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        for &(_, j) in &near[..k] {
            let (a, b) = (i.min(j), i.max(j));
            if !present[a * n + b] {
                present[a * n + b] = true;
                real.push((a, b));
            }
        }
    }
    loop {
        real.sort_unstable();
        let mut edges: Vec<(usize, usize, i64)> = real.iter().map(|&(i, j)| (i, j, weight(dist.get(i, j)))).collect();
        for ph in n..total_nodes {
            edges.extend((0..n).map(|i| (i, ph, phantom_weight)));
        }
        let sol = max_weight_matching_with_duals(total_nodes, &edges, true);
        let mut violated = Vec::new();
        if sol.mate.contains(&NONE) {
            // The candidate graph lacks a perfect matching; fall back to every edge.
            for i in 0..n {
                for j in i + 1..n {
                    if !present[i * n + j] && dist.get(i, j) != FORBIDDEN {
                        violated.push((i, j));
                    }
                }
            }
            if violated.is_empty() {
                return sol.mate;
            }
        } else {
            let ancestors = sol.ancestors();
            for i in 0..n {
                for j in i + 1..n {
                    let w = dist.get(i, j);
                    if !present[i * n + j] && w != FORBIDDEN && sol.reduced_cost(&ancestors, i, j, weight(w)) < 0 {
                        violated.push((i, j));
                    }
                }
            }
            if violated.is_empty() {
                return sol.mate;
            }
        }
        log::debug!("adding {} edges to the candidate graph", violated.len());
        for &(i, j) in &violated {
            present[i * n + j] = true;
        }
        real.extend(violated);
    }
}

/// Sum of `dist` over matched pairs, normalized to sorted order so that equal
/// matchings always report bit-identical totals.
pub fn matching_total(dist: &DistanceMatrix, pairs: &[(usize, usize)]) -> f64 {
    let mut sorted: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    sorted.sort_unstable();
    sorted.iter().map(|&(i, j)| dist.get(i, j)).sum()
}

/// A matched pair of pairs. `bec` has the bigger (more negative) exposure change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadMatch {
    pub quad_id: usize,
    pub bec: ClusterPair,
    pub sec: ClusterPair,
    pub distance: f64,
}

impl QuadMatch {
    /// Orders two matched pairs into BEC and SEC; equal exposure changes are
    /// broken by the lower pair id becoming BEC.
    pub fn new(quad_id: usize, a: ClusterPair, b: ClusterPair, distance: f64) -> Self {
        let a_first = (a.z_diff, a.pair_id) <= (b.z_diff, b.pair_id);
        let (bec, sec) = if a_first { (a, b) } else { (b, a) };
        QuadMatch { quad_id, bec, sec, distance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub rho_prime: f64,
    pub xi: f64,
    /// Phantom nodes per matching problem; by default the parity of the pair count.
    pub n_phantoms: Option<usize>,
    /// Match within each country instead of pooling all pairs.
    pub per_country: bool,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            rho_prime: DEFAULT_RHO_PRIME,
            xi: DEFAULT_XI,
            n_phantoms: None,
            per_country: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Audit {
    pub n_pairs: usize,
    pub n_phantoms: usize,
    pub n_quads: usize,
    pub discarded_pair_ids: Vec<usize>,
    pub retention_rate: f64,
    pub total_distance: f64,
    /// Matched edges whose exposure changes were closer than `xi`.
    pub penalized_edges: usize,
}

pub fn run_stage2(pairs: &[ClusterPair], cfg: &Stage2Config) -> Result<(Vec<QuadMatch>, Stage2Audit)> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!("stage two needs at least 2 pairs, got {}", pairs.len())));
    }
    let groups: Vec<Vec<&ClusterPair>> = if cfg.per_country {
        let mut by: BTreeMap<&str, Vec<&ClusterPair>> = BTreeMap::new();
        for p in pairs {
            by.entry(p.country()).or_default().push(p);
        }
        by.into_values().collect()
    } else {
        vec![pairs.iter().collect()]
    };

    let mut quads = Vec::new();
    let mut audit = Stage2Audit { n_pairs: pairs.len(), ..Default::default() };
    for group in groups {
        let k = cfg.n_phantoms.unwrap_or(group.len() % 2);
        audit.n_phantoms += k;
        if group.len() < 2 {
            audit.discarded_pair_ids.extend(group.iter().map(|p| p.pair_id));
            continue;
        }
        let owned: Vec<ClusterPair> = group.iter().map(|&p| p.clone()).collect();
        let dist = stage2_distance_matrix(&owned, cfg.rho_prime, cfg.xi)?;
        let m = solve_perfect_matching(&dist, k)?;
        audit.discarded_pair_ids.extend(m.discarded.iter().map(|&i| owned[i].pair_id));
        for &(i, j) in &m.pairs {
            if dist.penalized(i, j) {
                audit.penalized_edges += 1;
            }
            audit.total_distance += dist.get(i, j);
            quads.push(QuadMatch::new(quads.len() + 1, owned[i].clone(), owned[j].clone(), dist.get(i, j)));
        }
    }
    audit.discarded_pair_ids.sort_unstable();
    audit.n_quads = quads.len();
    audit.retention_rate = 2.0 * quads.len() as f64 / pairs.len() as f64;
    Ok((quads, audit))
}

/// Standardized BEC-SEC difference for one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub name: String,
    pub mean_bec: f64,
    pub mean_sec: f64,
    pub sd_pre: f64,
    pub std_diff: f64,
    /// |std_diff| at or above the balance threshold.
    pub flagged: bool,
    /// Zero pre-match spread but unequal group means.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTable {
    /// The 24 covariate columns: every covariate in the early epoch, then in the late epoch.
    pub rows: Vec<BalanceRow>,
    pub exposure_change: BalanceRow,
}

pub const BALANCE_THRESHOLD: f64 = 0.1;

impl BalanceTable {
    pub fn max_abs_std_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.std_diff.abs()).fold(0.0, f64::max)
    }

    pub fn n_flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.flagged).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        w.write_record(["column", "mean_bec", "mean_sec", "sd_pre", "std_diff", "flagged"])?;
        for r in self.rows.iter().chain(std::iter::once(&self.exposure_change)) {
            w.write_record([
                r.name.clone(),
                r.mean_bec.to_string(),
                r.mean_sec.to_string(),
                r.sd_pre.to_string(),
                r.std_diff.to_string(),
                r.flagged.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Names of the 24 trajectory columns.
pub fn trajectory_names() -> Vec<String> {
    ["early", "late"]
        .iter()
        .flat_map(|epoch| COVARIATES.iter().map(move |c| format!("{}_{epoch}", c.name())))
        .collect()
}

fn balance_row(name: String, bec: &[f64], sec: &[f64], pre: &[f64]) -> BalanceRow {
    let (mean_bec, mean_sec) = (mean(bec), mean(sec));
    let sd_pre = if pre.len() >= 2 { std_dev(pre) } else { 0.0 };
    let (std_diff, degenerate) = if sd_pre > 0.0 {
        ((mean_sec - mean_bec) / sd_pre, false)
    } else {
        (0.0, mean_sec != mean_bec)
    };
    BalanceRow {
        name,
        mean_bec,
        mean_sec,
        sd_pre,
        std_diff,
        flagged: degenerate || std_diff.abs() >= BALANCE_THRESHOLD,
        degenerate,
    }
}

fn table_from_groups(bec: &[&ClusterPair], sec: &[&ClusterPair], pre: &[ClusterPair]) -> BalanceTable {
    let traj = |ps: &[&ClusterPair]| ps.iter().map(|p| trajectory(p)).collect::<Vec<_>>();
    let (tb, ts) = (traj(bec), traj(sec));
    let tp: Vec<Vec<f64>> = pre.iter().map(trajectory).collect();
    let column = |rows: &[Vec<f64>], k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let rows = trajectory_names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| balance_row(name, &column(&tb, k), &column(&ts, k), &column(&tp, k)))
        .collect();
    let zd = |ps: &[&ClusterPair]| ps.iter().map(|p| p.z_diff).collect::<Vec<f64>>();
    let exposure_change = balance_row(
        "z_diff".to_string(),
        &zd(bec),
        &zd(sec),
        &pre.iter().map(|p| p.z_diff).collect::<Vec<_>>(),
    );
    BalanceTable { rows, exposure_change }
}

/// Balance of the matched quadruples, standardized by the spread of each
/// column over all pairs available before stage two.
pub fn balance_table(quads: &[QuadMatch], pre_match_pairs: &[ClusterPair]) -> Result<BalanceTable> {
    if quads.is_empty() {
        return Err(Error::InvalidInput("balance needs at least one quadruple".into()));
    }
    let bec: Vec<&ClusterPair> = quads.iter().map(|q| &q.bec).collect();
    let sec: Vec<&ClusterPair> = quads.iter().map(|q| &q.sec).collect();
    Ok(table_from_groups(&bec, &sec, pre_match_pairs))
}

/// Balance before stage two: pairs whose exposure change is below the median
/// play the BEC role and the rest the SEC role.
pub fn prematch_balance(pairs: &[ClusterPair]) -> Result<BalanceTable> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput("pre-match balance needs at least 2 pairs".into()));
    }
    let mut sorted: Vec<&ClusterPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.z_diff.total_cmp(&b.z_diff).then(a.pair_id.cmp(&b.pair_id)));
    let half = sorted.len() / 2;
    let (low, high) = sorted.split_at(half);
    let high = &high[high.len() - half..];
    Ok(table_from_groups(low, high, pairs))
}

const QUAD_COLUMNS: [&str; 6] = ["quad_id", "bec_pair_id", "sec_pair_id", "bec_z_diff", "sec_z_diff", "distance"];

pub fn write_quads(path: &Path, quads: &[QuadMatch]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(QUAD_COLUMNS)?;
    for q in quads {
        w.write_record([
            q.quad_id.to_string(),
            q.bec.pair_id.to_string(),
            q.sec.pair_id.to_string(),
            q.bec.z_diff.to_string(),
            q.sec.z_diff.to_string(),
            q.distance.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_quads(path: &Path, pairs: &[ClusterPair]) -> Result<Vec<QuadMatch>> {
    let by_id: HashMap<usize, &ClusterPair> = pairs.iter().map(|p| (p.pair_id, p)).collect();
    let mut reader = open(path)?;
    let headers = reader.headers()?.clone();
    let idx = QUAD_COLUMNS
        .iter()
        .map(|n| column_index(&headers, n))
        .collect::<Result<Vec<_>>>()?;
    let mut quads = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let err = |field: &str, message: String| Error::Row { row: i + 2, field: field.to_string(), message };
        let get = |k: usize| row.get(idx[k]).unwrap_or("");
        let id = |k: usize| -> Result<usize> { get(k).parse().map_err(|e: std::num::ParseIntError| err(QUAD_COLUMNS[k], e.to_string())) };
        let pair = |k: usize| -> Result<ClusterPair> {
            let pid = id(k)?;
            by_id
                .get(&pid)
                .map(|p| (*p).clone())
                .ok_or_else(|| err(QUAD_COLUMNS[k], format!("unknown pair {pid}")))
        };
        let distance = get(5).parse::<f64>().map_err(|e| err("distance", e.to_string()))?;
        quads.push(QuadMatch { quad_id: id(0)?, bec: pair(1)?, sec: pair(2)?, distance });
    }
    Ok(quads)
}
