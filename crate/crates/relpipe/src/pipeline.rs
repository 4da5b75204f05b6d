//! Pipeline stages wiring the modules together: clustering + routing,
//! boosted training-set assembly, split prediction, and the four-way
//! ablation artifacts. The CLI is a thin shell over these.

use std::collections::BTreeMap;
use std::path::Path;

use crate::clustering::{
    build_frequency_matrix, select_k, ClusterModel, CohesionReport, FrequencyMatrix,
    RoutingMode, SelectionTrace,
};
use crate::config::PipelineConfig;
use crate::dataset::{read_depth_raster, DepthRaster, LabelVocabulary, SceneRecord};
use crate::error::{Error, Result};
use crate::eval::AblationArtifacts;
use crate::features::{assemble_features, generate_candidates, CandidatePair, PairFeatures};
use crate::par;
use crate::predict::gbdt::TrainingSummary;
use crate::predict::{predict_scene, route_groups, BoostedModel, FrequencyModel, train_boosted};

/// Output of the clustering stage.
pub struct ClusterStage {
    pub matrix: FrequencyMatrix,
    /// Routed cluster model carrying the selection trace.
    pub model: ClusterModel,
    pub report: CohesionReport,
    pub trace: SelectionTrace,
}

/// Builds the frequency matrix, sweeps k, and fills routing.
pub fn run_cluster_stage(
    scenes: &[SceneRecord],
    vocab: &LabelVocabulary,
    config: &PipelineConfig,
) -> Result<ClusterStage> {
    let matrix = build_frequency_matrix(scenes, vocab);
    let outcome = select_k(
        &matrix,
        (config.clustering.k_min, config.clustering.k_max),
        config.clustering_seed(),
        config.clustering.restarts,
        config.clustering.constraints(),
    )?;
    let model = route_groups(outcome.model, vocab, &config.routing)?;
    Ok(ClusterStage {
        matrix,
        model,
        report: outcome.report,
        trace: outcome.trace,
    })
}

fn load_scene_depth(
    root: &Path,
    scene: &SceneRecord,
    use_depth: bool,
) -> Result<Option<DepthRaster>> {
    if !use_depth {
        return Ok(None);
    }
    scene
        .depth_path
        .as_ref()
        .map(|rel| read_depth_raster(&root.join(rel)))
        .transpose()
}

/// Labeled feature rows for every candidate whose object group routes to the
/// boosted path, in (scene_id, subject_id, object_id) order.
pub fn collect_boosted_training_set(
    scenes: &[SceneRecord],
    vocab: &LabelVocabulary,
    cluster: &ClusterModel,
    dataset_root: &Path,
    use_depth: bool,
) -> Result<Vec<(PairFeatures, usize)>> {
    if !cluster.routing_filled() {
        return Err(Error::ModelState("cluster model routing has not been assigned".into()));
    }
    let per_scene: Vec<Result<Vec<(PairFeatures, usize)>>> = par::map_slice(scenes, |scene| {
        let depth = load_scene_depth(dataset_root, scene, use_depth)?;
        let mut rows = Vec::new();
        for pair in generate_candidates(scene, vocab) {
            let Some(label) = pair.label else { continue };
            let object = scene.instance(pair.object_id).expect("validated scene");
            let group = cluster.group_of(object.category_id)?;
            if cluster.routing[group] != RoutingMode::Boosted {
                continue;
            }
            let features = assemble_features(&pair, scene, cluster, depth.as_ref())?;
            rows.push((features, label));
        }
        Ok(rows)
    });
    let mut out = Vec::new();
    for rows in per_scene {
        out.extend(rows?);
    }
    Ok(out)
}

/// Trains the boosted classifier for the configured depth mode.
pub fn run_train_stage(
    scenes: &[SceneRecord],
    vocab: &LabelVocabulary,
    cluster: &ClusterModel,
    dataset_root: &Path,
    config: &PipelineConfig,
    use_depth: bool,
) -> Result<(BoostedModel, TrainingSummary)> {
    let training_set =
        collect_boosted_training_set(scenes, vocab, cluster, dataset_root, use_depth)?;
    if training_set.is_empty() {
        return Err(Error::ModelState(
            "no labeled candidates route to the boosted path; frequency models cover every group"
                .into(),
        ));
    }
    train_boosted(&training_set, cluster, vocab, &config.boosting.params(), use_depth)
}

/// Routed predictions for a whole split, ordered by scene then
/// (subject_id, object_id). Depth usage follows the boosted model's
/// training mode so serving matches training.
pub fn predict_split(
    scenes: &[SceneRecord],
    vocab: &LabelVocabulary,
    cluster: &ClusterModel,
    boosted: Option<&BoostedModel>,
    dataset_root: &Path,
    seed: u64,
) -> Result<Vec<(CandidatePair, usize)>> {
    let freq = FrequencyModel::from_cluster(cluster);
    let use_depth = boosted.is_some_and(|m| m.uses_depth);
    let per_scene: Vec<Result<Vec<(CandidatePair, usize)>>> = par::map_slice(scenes, |scene| {
        let depth = load_scene_depth(dataset_root, scene, use_depth)?;
        predict_scene(scene, vocab, cluster, &freq, boosted, depth.as_ref(), seed)
    });
    let mut out = Vec::new();
    for rows in per_scene {
        out.extend(rows?);
    }
    Ok(out)
}

/// Trains everything the ablation needs: the routed cluster model, the
/// per-category frequency baseline, and boosted models with and without
/// depth. Returns the stage outputs for logging alongside the artifacts.
pub fn train_ablation_artifacts(
    train_scenes: &[SceneRecord],
    vocab: &LabelVocabulary,
    dataset_root: &Path,
    config: &PipelineConfig,
) -> Result<(AblationArtifacts, ClusterStage, TrainingSummary, TrainingSummary)> {
    let stage = run_cluster_stage(train_scenes, vocab, config)?;
    let freq_full = FrequencyModel::from_matrix(&stage.matrix);
    let (gb, gb_log) =
        run_train_stage(train_scenes, vocab, &stage.model, dataset_root, config, false)?;
    let (gb_depth, gb_depth_log) =
        run_train_stage(train_scenes, vocab, &stage.model, dataset_root, config, true)?;
    let artifacts = AblationArtifacts {
        cluster: stage.model.clone(),
        freq_full,
        gb,
        gb_depth,
    };
    Ok((artifacts, stage, gb_log, gb_depth_log))
}

/// Feature rows for every candidate of a split, labels included where the
/// scenes carry ground truth; feeds the debug feature-dump CSV.
pub fn dump_split_features(
    scenes: &[SceneRecord],
    vocab: &LabelVocabulary,
    cluster: &ClusterModel,
    dataset_root: &Path,
    use_depth: bool,
) -> Result<Vec<(CandidatePair, PairFeatures)>> {
    let per_scene: Vec<Result<Vec<(CandidatePair, PairFeatures)>>> =
        par::map_slice(scenes, |scene| {
            let depth = load_scene_depth(dataset_root, scene, use_depth)?;
            generate_candidates(scene, vocab)
                .into_iter()
                .map(|pair| {
                    let features = assemble_features(&pair, scene, cluster, depth.as_ref())?;
                    Ok((pair, features))
                })
                .collect()
        });
    let mut out = Vec::new();
    for rows in per_scene {
        out.extend(rows?);
    }
    Ok(out)
}

/// Predictions CSV header.
pub const PREDICTIONS_CSV_HEADER: &[&str] = &["scene_id", "subject_id", "object_id", "relation"];

/// Writes predictions as CSV with relation names.
pub fn write_predictions_csv<W: std::io::Write>(
    out: W,
    predictions: &[(CandidatePair, usize)],
    vocab: &LabelVocabulary,
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    writer.write_record(PREDICTIONS_CSV_HEADER).map_err(io_err)?;
    for (pair, relation) in predictions {
        writer
            .write_record([
                pair.scene_id.as_str(),
                &pair.subject_id.to_string(),
                &pair.object_id.to_string(),
                &vocab.relation_labels[*relation],
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(())
}

/// Reads a predictions CSV back into per-scene triples.
pub fn read_predictions_csv(
    path: &Path,
    vocab: &LabelVocabulary,
) -> Result<BTreeMap<String, Vec<crate::dataset::RelationTriple>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })?;
    if headers != *PREDICTIONS_CSV_HEADER {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            offset: 0,
            message: format!("unexpected header {headers:?}"),
        });
    }
    let mut by_scene: BTreeMap<String, Vec<crate::dataset::RelationTriple>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            offset: 0,
            message: format!("row {}: {e}", line + 2),
        })?;
        let parse_u32 = |s: &str, what: &str| {
            s.parse::<u32>().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                offset: 0,
                message: format!("row {}: bad {what} '{s}'", line + 2),
            })
        };
        let relation = vocab.relation_id(&record[3]).ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            offset: 0,
            message: format!("row {}: unknown relation '{}'", line + 2, &record[3]),
        })?;
        by_scene
            .entry(record[0].to_string())
            .or_default()
            .push(crate::dataset::RelationTriple {
                subject_id: parse_u32(&record[1], "subject_id")?,
                object_id: parse_u32(&record[2], "object_id")?,
                relation_id: relation,
            });
    }
    Ok(by_scene)
}
