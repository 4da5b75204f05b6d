//! IoU-thresholded relation accuracy.
//!
//! Metric convention: predicted instances are matched to ground-truth
//! instances greedily over same-category pairs in descending IoU order
//! (inclusive threshold); relation accuracy is recall over ground-truth
//! triples — a truth triple is hit when some predicted triple maps onto it
//! through the instance matching with an equal relation — and dataset
//! accuracy is the triple-weighted mean over scenes. Absolute numbers depend
//! on these choices; every report embeds them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::dataset::{
    mask_iou, read_depth_raster, Instance, LabelVocabulary, RelationTriple, SceneRecord,
};
use crate::error::{Error, Result};
use crate::features::box_iou;
use crate::par;
use crate::predict::{
    predict_scene, predict_scene_frequency, BoostedModel, FrequencyMode, FrequencyModel,
};

/// One line embedded in every report describing the metric convention.
pub const METRIC_NOTE: &str =
    "relation accuracy = recall over ground-truth triples (triple-weighted); \
     instance matching = greedy same-category IoU, inclusive threshold";

/// Instance overlap measure used by the matcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Mask,
    Box,
}

/// Evaluation thresholds and matcher choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub matching: MatchKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: vec![0.25, 0.5, 0.75],
            matching: MatchKind::Mask,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("no evaluation thresholds".into()));
        }
        for t in &self.thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::Config(format!("threshold {t} outside (0, 1]")));
            }
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Greedy partial bijection predicted → truth over same-category pairs with
/// IoU >= threshold, in descending IoU order; ties break on
/// (predicted id, truth id).
pub fn match_instances(
    predicted: &[Instance],
    truth: &[Instance],
    threshold: f64,
    matching: MatchKind,
) -> Result<BTreeMap<u32, u32>> {
    let mut scored: Vec<(f64, u32, u32, usize, usize)> = Vec::new();
    for (pi, p) in predicted.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            if p.category_id != t.category_id {
                continue;
            }
            let iou = match matching {
                MatchKind::Mask => mask_iou(&p.mask, &t.mask)?,
                MatchKind::Box => box_iou(&p.box_, &t.box_),
            };
            if iou >= threshold {
                scored.push((iou, p.instance_id, t.instance_id, pi, ti));
            }
        }
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut pred_used = vec![false; predicted.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut mapping = BTreeMap::new();
    for (_, pred_id, truth_id, pi, ti) in scored {
        if !pred_used[pi] && !truth_used[ti] {
            pred_used[pi] = true;
            truth_used[ti] = true;
            mapping.insert(pred_id, truth_id);
        }
    }
    Ok(mapping)
}

/// Counts truth triples hit by the predictions under an instance matching.
pub fn relation_hits(
    pred_triples: &[RelationTriple],
    truth_triples: &[RelationTriple],
    matching: &BTreeMap<u32, u32>,
) -> u64 {
    let translated: BTreeSet<(u32, u32, usize)> = pred_triples
        .iter()
        .filter_map(|t| {
            let s = matching.get(&t.subject_id)?;
            let o = matching.get(&t.object_id)?;
            Some((*s, *o, t.relation_id))
        })
        .collect();
    truth_triples
        .iter()
        .filter(|t| translated.contains(&(t.subject_id, t.object_id, t.relation_id)))
        .count() as u64
}

/// Scene-level fraction of truth triples hit; `None` when the scene has no
/// truth triples (it contributes nothing to the dataset accuracy).
pub fn relation_accuracy(
    pred_triples: &[RelationTriple],
    truth_triples: &[RelationTriple],
    matching: &BTreeMap<u32, u32>,
) -> Option<f64> {
    if truth_triples.is_empty() {
        return None;
    }
    let hits = relation_hits(pred_triples, truth_triples, matching);
    Some(hits as f64 / truth_triples.len() as f64)
}

/// Predictions for one scene. `instances: None` means the predicted triples
/// reference the ground-truth instances of the scene (the matcher still
/// runs, against the truth instance list itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<Vec<Instance>>,
    pub triples: Vec<RelationTriple>,
}

/// Accuracy and tallies at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub matched_instances: u64,
    pub matched_triples: u64,
    pub truth_triples: u64,
}

/// Dataset-level evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_threshold: Vec<ThresholdReport>,
    /// Arithmetic mean of the per-threshold accuracies.
    pub average: f64,
    pub matching: MatchKind,
    pub metric_note: String,
}

fn index_predictions<'a>(
    truth_scenes: &[SceneRecord],
    predictions: &'a [ScenePrediction],
) -> Result<BTreeMap<&'a str, &'a ScenePrediction>> {
    let mut by_scene: BTreeMap<&str, &ScenePrediction> = BTreeMap::new();
    for p in predictions {
        if by_scene.insert(p.scene_id.as_str(), p).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate predictions for scene '{}'",
                p.scene_id
            )));
        }
    }
    let known: BTreeSet<&str> = truth_scenes.iter().map(|s| s.scene_id.as_str()).collect();
    if let Some(p) = predictions.iter().find(|p| !known.contains(p.scene_id.as_str())) {
        return Err(Error::InvalidInput(format!(
            "predictions reference unknown scene '{}'",
            p.scene_id
        )));
    }
    Ok(by_scene)
}

/// Per scene, per threshold: (matched instances, hits, truth count).
fn scene_counts(
    truth_scenes: &[SceneRecord],
    by_scene: &BTreeMap<&str, &ScenePrediction>,
    config: &EvalConfig,
) -> Vec<Result<Vec<(u64, u64, u64)>>> {
    par::map_slice(truth_scenes, |scene| {
        let truth_count = scene.triples.len() as u64;
        let prediction = by_scene.get(scene.scene_id.as_str());
        let mut rows = Vec::with_capacity(config.thresholds.len());
        for &threshold in &config.thresholds {
            let (matched, hits) = match prediction {
                None => (0, 0),
                Some(p) => {
                    let predicted_instances = p.instances.as_deref().unwrap_or(&scene.instances);
                    let mapping = match_instances(
                        predicted_instances,
                        &scene.instances,
                        threshold,
                        config.matching,
                    )?;
                    let hits = relation_hits(&p.triples, &scene.triples, &mapping);
                    (mapping.len() as u64, hits)
                }
            };
            rows.push((matched, hits, truth_count));
        }
        Ok(rows)
    })
}

/// Scores predictions against ground truth at every configured threshold.
/// Scenes without a prediction entry count their truth triples as misses;
/// predictions for unknown scenes are an error.
pub fn evaluate(
    truth_scenes: &[SceneRecord],
    predictions: &[ScenePrediction],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let by_scene = index_predictions(truth_scenes, predictions)?;

    // Per scene and threshold: (matched instances, hits, truth count).
    let per_scene = scene_counts(truth_scenes, &by_scene, config);

    let mut totals = vec![(0u64, 0u64, 0u64); config.thresholds.len()];
    for rows in per_scene {
        for (acc, row) in totals.iter_mut().zip(rows?) {
            acc.0 += row.0;
            acc.1 += row.1;
            acc.2 += row.2;
        }
    }
    let per_threshold: Vec<ThresholdReport> = config
        .thresholds
        .iter()
        .zip(&totals)
        .map(|(&threshold, &(matched, hits, truth))| ThresholdReport {
            threshold,
            accuracy: if truth == 0 { 0.0 } else { hits as f64 / truth as f64 },
            matched_instances: matched,
            matched_triples: hits,
            truth_triples: truth,
        })
        .collect();
    for w in per_threshold.windows(2) {
        debug_assert!(
            w[1].accuracy <= w[0].accuracy,
            "accuracy increased with threshold: {w:?}"
        );
    }
    let average =
        per_threshold.iter().map(|t| t.accuracy).sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalReport {
        per_threshold,
        average,
        matching: config.matching,
        metric_note: METRIC_NOTE.to_string(),
    })
}

/// Per-scene tallies for the diagnostics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDiagnostics {
    pub scene_id: String,
    pub truth_triples: u64,
    /// Hit counts, one per configured threshold.
    pub hits: Vec<u64>,
}

/// Per-scene hit counts at every threshold, in scene order.
pub fn evaluate_per_scene(
    truth_scenes: &[SceneRecord],
    predictions: &[ScenePrediction],
    config: &EvalConfig,
) -> Result<Vec<SceneDiagnostics>> {
    config.validate()?;
    let by_scene = index_predictions(truth_scenes, predictions)?;
    let counts = scene_counts(truth_scenes, &by_scene, config);
    truth_scenes
        .iter()
        .zip(counts)
        .map(|(scene, rows)| {
            let rows = rows?;
            Ok(SceneDiagnostics {
                scene_id: scene.scene_id.clone(),
                truth_triples: scene.triples.len() as u64,
                hits: rows.iter().map(|&(_, hits, _)| hits).collect(),
            })
        })
        .collect()
}

/// Writes per-scene diagnostics: `scene_id,truth_triples,hits_iou_<t>...`.
pub fn write_scene_diagnostics_csv<W: std::io::Write>(
    mut out: W,
    diagnostics: &[SceneDiagnostics],
    thresholds: &[f64],
) -> Result<()> {
    let wr = |e: std::io::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    let mut header = vec!["scene_id".to_string(), "truth_triples".to_string()];
    header.extend(thresholds.iter().map(|t| format!("hits_iou_{t}")));
    writeln!(out, "{}", header.join(",")).map_err(wr)?;
    for d in diagnostics {
        let mut cells = vec![d.scene_id.clone(), d.truth_triples.to_string()];
        cells.extend(d.hits.iter().map(|h| h.to_string()));
        writeln!(out, "{}", cells.join(",")).map_err(wr)?;
    }
    Ok(())
}

/// Writes reports as CSV rows, one configuration per row, with a leading
/// metric-convention comment. Column set: `config`, one `iou_<t>` column per
/// threshold, `average`.
pub fn write_report_csv<W: std::io::Write>(
    mut out: W,
    rows: &[(String, EvalReport)],
) -> Result<()> {
    let wr = |e: std::io::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    writeln!(out, "# {METRIC_NOTE}").map_err(wr)?;
    if rows.is_empty() {
        return Ok(());
    }
    let thresholds: Vec<f64> = rows[0].1.per_threshold.iter().map(|t| t.threshold).collect();
    let mut header = vec!["config".to_string()];
    header.extend(thresholds.iter().map(|t| format!("iou_{t}")));
    header.push("average".to_string());
    writeln!(out, "{}", header.join(",")).map_err(wr)?;
    for (name, report) in rows {
        let mut cells = vec![name.clone()];
        cells.extend(report.per_threshold.iter().map(|t| t.accuracy.to_string()));
        cells.push(report.average.to_string());
        writeln!(out, "{}", cells.join(",")).map_err(wr)?;
    }
    Ok(())
}

/// Trained artifacts feeding the four-way ablation.
pub struct AblationArtifacts {
    /// Cluster model with routing filled.
    pub cluster: ClusterModel,
    /// Per-category frequency baseline (unclustered).
    pub freq_full: FrequencyModel,
    /// Boosted model trained with depth imputed.
    pub gb: BoostedModel,
    /// Boosted model trained with real depth statistics.
    pub gb_depth: BoostedModel,
}

/// Ablation row names, in output order.
pub const ABLATION_CONFIGS: [&str; 4] = ["freq_full", "freq_clustered", "gb", "gb_depth"];

/// Runs the four-configuration ablation on an evaluation split:
/// `freq_full` predicts from per-category distributions, `freq_clustered`
/// from pooled group distributions, `gb` runs the routed pipeline with depth
/// imputed, and `gb_depth` with depth rasters loaded from `dataset_root`.
pub fn run_ablation(
    eval_scenes: &[SceneRecord],
    vocab: &LabelVocabulary,
    dataset_root: &Path,
    artifacts: &AblationArtifacts,
    eval_config: &EvalConfig,
    frequency_mode: FrequencyMode,
    seed: u64,
) -> Result<Vec<(String, EvalReport)>> {
    let freq_clustered = FrequencyModel::from_cluster(&artifacts.cluster);
    let mut rows = Vec::with_capacity(ABLATION_CONFIGS.len());
    for &name in &ABLATION_CONFIGS {
        let per_scene: Vec<Result<ScenePrediction>> = par::map_slice(eval_scenes, |scene| {
            let predictions = match name {
                "freq_full" => predict_scene_frequency(
                    scene,
                    vocab,
                    &artifacts.freq_full,
                    frequency_mode,
                    seed,
                )?,
                "freq_clustered" => {
                    predict_scene_frequency(scene, vocab, &freq_clustered, frequency_mode, seed)?
                }
                "gb" => predict_scene(
                    scene,
                    vocab,
                    &artifacts.cluster,
                    &freq_clustered,
                    Some(&artifacts.gb),
                    None,
                    seed,
                )?,
                "gb_depth" => {
                    let raster = scene
                        .depth_path
                        .as_ref()
                        .map(|rel| read_depth_raster(&dataset_root.join(rel)))
                        .transpose()?;
                    predict_scene(
                        scene,
                        vocab,
                        &artifacts.cluster,
                        &freq_clustered,
                        Some(&artifacts.gb_depth),
                        raster.as_ref(),
                        seed,
                    )?
                }
                _ => unreachable!(),
            };
            Ok(ScenePrediction {
                scene_id: scene.scene_id.clone(),
                instances: None,
                triples: predictions
                    .into_iter()
                    .map(|(pair, relation)| RelationTriple {
                        subject_id: pair.subject_id,
                        object_id: pair.object_id,
                        relation_id: relation,
                    })
                    .collect(),
            })
        });
        let predictions: Vec<ScenePrediction> =
            per_scene.into_iter().collect::<Result<Vec<_>>>()?;
        let report = evaluate(eval_scenes, &predictions, eval_config)?;
        rows.push((name.to_string(), report));
    }
    Ok(rows)
}
