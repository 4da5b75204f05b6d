//! Pseudo-label groups: object categories clustered by their
//! relation-frequency distributions.
//!
//! Each object category is summarized by the L1-normalized histogram of
//! relation labels over all training triples having that category as object.
//! K-means (Lloyd's algorithm, k-means++ seeding, multiple restarts) groups
//! those distributions into pseudo-label groups; cluster cohesion is reported
//! as the standard deviation of cosine distances from member vectors to the
//! cluster mean, and the group count is selected as the smallest k whose
//! clustering satisfies the cohesion and support constraints.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelVocabulary, SceneRecord};
use crate::error::{Error, Result};
use crate::par;
use crate::util::{atomic_write, derive_seed};

/// Lloyd iteration cap; convergence (assignment fixpoint) normally wins.
pub const MAX_LLOYD_ITERATIONS: usize = 300;

const MODEL_VERSION: u32 = 1;

/// Per-category relation counts and L1-normalized distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    /// counts[category][relation] over all training triples.
    pub counts: Vec<Vec<u64>>,
    /// Rows normalized to sum 1; all-zero rows stay zero.
    pub normalized: Vec<Vec<f64>>,
    /// Total triple count per category.
    pub support: Vec<u64>,
    pub n_relations: usize,
}

impl FrequencyMatrix {
    /// Categories with at least one triple, ascending; only these cluster.
    pub fn clustered_categories(&self) -> Vec<usize> {
        (0..self.counts.len())
            .filter(|&c| self.support[c] > 0)
            .collect()
    }

    pub fn total_support(&self) -> u64 {
        self.support.iter().sum()
    }

    pub fn n_categories(&self) -> usize {
        self.counts.len()
    }
}

/// Tallies training triples into a per-object-category relation histogram.
pub fn build_frequency_matrix(
    scenes: &[SceneRecord],
    vocab: &LabelVocabulary,
) -> FrequencyMatrix {
    let n_cat = vocab.n_categories();
    let n_rel = vocab.n_relations();
    let mut counts = vec![vec![0u64; n_rel]; n_cat];
    for scene in scenes {
        for triple in &scene.triples {
            let object = scene
                .instance(triple.object_id)
                .expect("validated scenes reference existing instances");
            counts[object.category_id][triple.relation_id] += 1;
        }
    }
    let support: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let normalized = counts
        .iter()
        .zip(&support)
        .map(|(row, &s)| {
            if s == 0 {
                vec![0.0; n_rel]
            } else {
                row.iter().map(|&c| c as f64 / s as f64).collect()
            }
        })
        .collect();
    FrequencyMatrix {
        counts,
        normalized,
        support,
        n_relations: n_rel,
    }
}

/// Prediction path assigned to a pseudo-label group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Sample a relation from the group distribution.
    FrequencySample,
    /// Always the most frequent relation of the group.
    FrequencyArgmax,
    /// Gradient-boosted classifier over pair features.
    Boosted,
}

/// One evaluated candidate k in a selection sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KTrace {
    pub k: usize,
    pub wcss: f64,
    pub aggregate_sigma: f64,
    pub min_group_support: u64,
    pub feasible: bool,
}

/// Full audit trail of a `select_k` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub entries: Vec<KTrace>,
    pub selected_k: usize,
    /// False when no candidate satisfied the constraints and the minimum
    /// aggregate sigma was used instead.
    pub any_feasible: bool,
    pub max_sigma: f64,
    pub min_support: u64,
}

/// Category → pseudo-label-group model, with pooled group distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub version: u32,
    pub k: usize,
    pub n_categories: usize,
    pub n_relations: usize,
    /// Per category: its group, or None for zero-support categories.
    pub assignment: Vec<Option<usize>>,
    /// K-means centroids over normalized rows.
    pub centroids: Vec<Vec<f64>>,
    /// Per group, pooled member counts renormalized to a distribution.
    pub group_distribution: Vec<Vec<f64>>,
    /// Per group, total member triple count.
    pub group_support: Vec<u64>,
    /// Group whose centroid is nearest the uniform distribution; used for
    /// categories unseen in training.
    pub fallback_group: usize,
    /// Per-group prediction path; empty until routing has been assigned.
    #[serde(default)]
    pub routing: Vec<RoutingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionTrace>,
}

impl ClusterModel {
    /// Group of a category, falling back for unclustered categories.
    pub fn group_of(&self, category_id: usize) -> Result<usize> {
        match self.assignment.get(category_id) {
            Some(Some(g)) => Ok(*g),
            Some(None) => Ok(self.fallback_group),
            None => Err(Error::InvalidInput(format!(
                "category id {category_id} out of range for cluster model with {} categories",
                self.n_categories
            ))),
        }
    }

    pub fn routing_filled(&self) -> bool {
        self.routing.len() == self.k
    }

    /// Member categories of a group, ascending.
    pub fn members(&self, group: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Some(group))
            .map(|(c, _)| c)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("cluster model serializes");
        text.push('\n');
        atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<ClusterModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ClusterModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })?;
        if model.version != MODEL_VERSION {
            return Err(Error::ModelState(format!(
                "cluster model version {} unsupported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

/// Result of one Lloyd run over a fixed row set.
#[derive(Debug, Clone)]
pub struct LloydRun {
    /// Cluster of each input row.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
    /// WCSS after each iteration's update step; non-increasing.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// K-means++ seeding: first centroid uniform, then D²-weighted draws.
fn seed_centroids(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.random_range(0..n)].clone());
    let mut best_dist: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best_dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in best_dist.iter().enumerate() {
                acc += d;
                if target < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All points coincide with existing centroids; any index works.
            rng.random_range(0..n)
        };
        centroids.push(rows[next].clone());
        for (i, row) in rows.iter().enumerate() {
            let d = sq_dist(row, centroids.last().unwrap());
            if d < best_dist[i] {
                best_dist[i] = d;
            }
        }
    }
    centroids
}

/// One seeded Lloyd run to convergence (assignment fixpoint) or the
/// iteration cap. Ties in the assignment step go to the lowest cluster
/// index; emptied clusters are reseeded at the point farthest from its
/// current centroid.
pub fn lloyd_kmeans(rows: &[Vec<f64>], k: usize, seed: u64) -> Result<LloydRun> {
    let n = rows.len();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "k = {k} outside valid range 1..={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(rows, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut wcss_trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    for _ in 0..MAX_LLOYD_ITERATIONS {
        iterations += 1;
        // Assignment step.
        let mut changed = false;
        for (i, row) in rows.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(row, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        // Reseed empty clusters from the farthest member of a multi-member
        // cluster; this never increases WCSS.
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut far_idx: Option<usize> = None;
            let mut far_d = -1.0;
            for (i, row) in rows.iter().enumerate() {
                if sizes[assignment[i]] > 1 {
                    let d = sq_dist(row, &centroids[assignment[i]]);
                    if d > far_d {
                        far_d = d;
                        far_idx = Some(i);
                    }
                }
            }
            if let Some(i) = far_idx {
                sizes[assignment[i]] -= 1;
                assignment[i] = empty;
                sizes[empty] = 1;
                centroids[empty] = rows[i].clone();
                changed = true;
            }
        }
        // Update step: centroids become member means.
        let dim = rows[0].len();
        let mut sums = vec![vec![0.0f64; dim]; k];
        for (i, row) in rows.iter().enumerate() {
            for (s, v) in sums[assignment[i]].iter_mut().zip(row) {
                *s += v;
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            if sizes[c] > 0 {
                centroids[c] = sum.into_iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        let wcss: f64 = rows
            .iter()
            .zip(&assignment)
            .map(|(row, &a)| sq_dist(row, &centroids[a]))
            .sum();
        if let Some(&prev) = wcss_trace.last() {
            debug_assert!(
                wcss <= prev + 1e-12 * prev.max(1.0),
                "WCSS increased: {prev} -> {wcss}"
            );
        }
        wcss_trace.push(wcss);
        if !changed {
            break;
        }
    }
    let wcss = *wcss_trace.last().expect("at least one iteration ran");
    Ok(LloydRun {
        assignment,
        centroids,
        wcss,
        wcss_trace,
        iterations,
    })
}

/// Canonical processing order for clustered categories: rows sorted by
/// normalized vector, then support. Seeding over this order makes the
/// partition invariant to the order categories appear in the vocabulary.
fn canonical_order(matrix: &FrequencyMatrix) -> Vec<usize> {
    let mut order = matrix.clustered_categories();
    order.sort_by(|&a, &b| {
        let ra = &matrix.normalized[a];
        let rb = &matrix.normalized[b];
        for (x, y) in ra.iter().zip(rb) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        matrix.support[a].cmp(&matrix.support[b])
    });
    order
}

/// Clusters the normalized frequency rows into `k` groups: best of
/// `restarts` seeded Lloyd runs by WCSS (ties to the lowest restart index).
pub fn kmeans(matrix: &FrequencyMatrix, k: usize, seed: u64, restarts: usize) -> Result<ClusterModel> {
    let order = canonical_order(matrix);
    if k == 0 || k > order.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} outside valid range 1..={} (clustered categories)",
            order.len()
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidInput("restarts must be >= 1".into()));
    }
    let rows: Vec<Vec<f64>> = order.iter().map(|&c| matrix.normalized[c].clone()).collect();
    let runs = par::map_range(restarts, |r| {
        lloyd_kmeans(&rows, k, derive_seed(seed, r as u64)).expect("validated k")
    });
    let mut best = 0usize;
    for (i, run) in runs.iter().enumerate() {
        if run.wcss < runs[best].wcss {
            best = i;
        }
    }
    let run = &runs[best];

    let mut assignment = vec![None; matrix.n_categories()];
    for (row_idx, &cat) in order.iter().enumerate() {
        assignment[cat] = Some(run.assignment[row_idx]);
    }
    let mut group_counts = vec![vec![0u64; matrix.n_relations]; k];
    let mut group_support = vec![0u64; k];
    for (&cat, &group) in order.iter().zip(&run.assignment) {
        group_support[group] += matrix.support[cat];
        for (g, &c) in group_counts[group].iter_mut().zip(&matrix.counts[cat]) {
            *g += c;
        }
    }
    let group_distribution: Vec<Vec<f64>> = group_counts
        .iter()
        .zip(&group_support)
        .map(|(counts, &s)| {
            if s == 0 {
                vec![0.0; matrix.n_relations]
            } else {
                counts.iter().map(|&c| c as f64 / s as f64).collect()
            }
        })
        .collect();

    let uniform = vec![1.0 / matrix.n_relations as f64; matrix.n_relations];
    let mut fallback_group = 0usize;
    let mut fallback_d = f64::INFINITY;
    for (g, centroid) in run.centroids.iter().enumerate() {
        let d = sq_dist(centroid, &uniform);
        if d < fallback_d {
            fallback_d = d;
            fallback_group = g;
        }
    }

    Ok(ClusterModel {
        version: MODEL_VERSION,
        k,
        n_categories: matrix.n_categories(),
        n_relations: matrix.n_relations,
        assignment,
        centroids: run.centroids.clone(),
        group_distribution,
        group_support,
        fallback_group,
        routing: Vec::new(),
        selection: None,
    })
}

/// Cluster cohesion: per-group population standard deviation of the cosine
/// distances from member vectors to the group mean vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohesionReport {
    pub per_cluster_sigma: Vec<f64>,
    /// Support-weighted mean of per-cluster sigmas.
    pub aggregate_sigma: f64,
    pub min_group_support: u64,
    /// Members excluded from the cosine computation for having zero norm.
    pub excluded_zero_norm: usize,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(1.0 - dot / (na * nb))
}

pub fn cohesion(matrix: &FrequencyMatrix, model: &ClusterModel) -> Result<CohesionReport> {
    if model.n_categories != matrix.n_categories() || model.n_relations != matrix.n_relations {
        return Err(Error::Dimension(
            "cluster model does not match frequency matrix dimensions".into(),
        ));
    }
    let mut excluded = 0usize;
    let mut per_cluster_sigma = Vec::with_capacity(model.k);
    for group in 0..model.k {
        let members = model.members(group);
        let vectors: Vec<&Vec<f64>> = members.iter().map(|&c| &matrix.normalized[c]).collect();
        if vectors.is_empty() {
            per_cluster_sigma.push(0.0);
            continue;
        }
        let dim = matrix.n_relations;
        let mut mean = vec![0.0f64; dim];
        for v in &vectors {
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= vectors.len() as f64);
        let mut distances = Vec::with_capacity(vectors.len());
        for v in &vectors {
            match cosine_distance(v, &mean) {
                Some(d) => distances.push(d),
                None => excluded += 1,
            }
        }
        if distances.len() <= 1 {
            per_cluster_sigma.push(0.0);
            continue;
        }
        let d_mean = distances.iter().sum::<f64>() / distances.len() as f64;
        let var = distances
            .iter()
            .map(|d| (d - d_mean) * (d - d_mean))
            .sum::<f64>()
            / distances.len() as f64;
        per_cluster_sigma.push(var.sqrt());
    }
    let total_support: u64 = model.group_support.iter().sum();
    let aggregate_sigma = if total_support == 0 {
        0.0
    } else {
        per_cluster_sigma
            .iter()
            .zip(&model.group_support)
            .map(|(s, &w)| s * w as f64)
            .sum::<f64>()
            / total_support as f64
    };
    let min_group_support = model.group_support.iter().copied().min().unwrap_or(0);
    Ok(CohesionReport {
        per_cluster_sigma,
        aggregate_sigma,
        min_group_support,
        excluded_zero_norm: excluded,
    })
}

/// Feasibility constraints for the k sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConstraints {
    /// Upper bound on the support-weighted aggregate sigma.
    pub max_sigma: f64,
    /// Lower bound on the smallest group support.
    pub min_support: u64,
}

impl Default for SelectionConstraints {
    fn default() -> Self {
        SelectionConstraints {
            max_sigma: 0.15,
            min_support: 50,
        }
    }
}

/// Outcome of a `select_k` sweep: the chosen model, its cohesion report,
/// and the full per-k trace (also attached to the model).
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub model: ClusterModel,
    pub report: CohesionReport,
    pub trace: SelectionTrace,
}

/// Sweeps k over the inclusive range, scoring each clustering, and selects
/// the smallest k satisfying the constraints; if none does, the k with the
/// lowest aggregate sigma is selected and the trace is marked infeasible.
pub fn select_k(
    matrix: &FrequencyMatrix,
    k_range: (usize, usize),
    seed: u64,
    restarts: usize,
    constraints: SelectionConstraints,
) -> Result<SelectionOutcome> {
    let (k_min, k_max) = k_range;
    if k_min == 0 || k_min > k_max {
        return Err(Error::InvalidInput(format!(
            "invalid k range [{k_min}, {k_max}]"
        )));
    }
    let n_clustered = matrix.clustered_categories().len();
    let hi = k_max.min(n_clustered);
    if k_min > hi {
        return Err(Error::InvalidInput(format!(
            "k range [{k_min}, {k_max}] has no candidate <= {n_clustered} clustered categories"
        )));
    }
    let mut candidates: Vec<(ClusterModel, CohesionReport, KTrace)> = Vec::new();
    for k in k_min..=hi {
        let model = kmeans(matrix, k, seed, restarts)?;
        let report = cohesion(matrix, &model)?;
        let wcss = model
            .centroids
            .iter()
            .enumerate()
            .map(|(g, centroid)| {
                model
                    .members(g)
                    .iter()
                    .map(|&c| sq_dist(&matrix.normalized[c], centroid))
                    .sum::<f64>()
            })
            .sum();
        let feasible = report.aggregate_sigma <= constraints.max_sigma
            && report.min_group_support >= constraints.min_support;
        let trace = KTrace {
            k,
            wcss,
            aggregate_sigma: report.aggregate_sigma,
            min_group_support: report.min_group_support,
            feasible,
        };
        candidates.push((model, report, trace));
    }
    let feasible_idx = candidates.iter().position(|(_, _, t)| t.feasible);
    let any_feasible = feasible_idx.is_some();
    let chosen = feasible_idx.unwrap_or_else(|| {
        let mut best = 0usize;
        for (i, (_, _, t)) in candidates.iter().enumerate() {
            if t.aggregate_sigma < candidates[best].2.aggregate_sigma {
                best = i;
            }
        }
        best
    });
    let entries: Vec<KTrace> = candidates.iter().map(|(_, _, t)| t.clone()).collect();
    let (mut model, report, trace) = candidates.swap_remove(chosen);
    let selection = SelectionTrace {
        selected_k: trace.k,
        entries,
        any_feasible,
        max_sigma: constraints.max_sigma,
        min_support: constraints.min_support,
    };
    model.selection = Some(selection.clone());
    Ok(SelectionOutcome {
        model,
        report,
        trace: selection,
    })
}
