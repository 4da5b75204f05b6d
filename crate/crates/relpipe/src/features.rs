//! Candidate pair generation and the 10-value pair feature vector.
//!
//! Every relation is human-centered: a scene with n instances and k humans
//! yields (n-1)*k candidate pairs. Each pair is described by the normalized
//! bounding-box coordinate differences (subject minus object), the box
//! overlap, the object's pseudo-label group, and the filtered depth mean and
//! median of subject and object.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::dataset::{BoundingBox, DepthRaster, Instance, LabelVocabulary, SceneRecord};
use crate::depth::{masked_depth_stats, DepthStats};
use crate::error::{Error, Result};

/// One (human subject, object) candidate, with its training label when the
/// scene carries ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub scene_id: String,
    pub subject_id: u32,
    pub object_id: u32,
    /// Ground-truth relation; the lowest relation id when several triples
    /// annotate the same pair.
    pub label: Option<usize>,
}

/// The 10 feature values of one candidate pair. `depth_imputed` is metadata,
/// not a feature: it records that the four depth fields were filled with 0
/// because no raster was supplied or the stats were invalid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub d_y1: f64,
    pub d_x1: f64,
    pub d_y2: f64,
    pub d_x2: f64,
    pub overlap: f64,
    pub group_id: usize,
    pub subj_mean: f64,
    pub subj_median: f64,
    pub obj_mean: f64,
    pub obj_median: f64,
    pub depth_imputed: bool,
}

impl PairFeatures {
    pub const VALUE_COUNT: usize = 10;

    /// Numeric vector for the boosted model: box differences, overlap, the
    /// group id one-hot over `n_groups`, then the four depth values.
    pub fn to_model_vector(&self, n_groups: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(9 + n_groups);
        v.extend_from_slice(&[self.d_y1, self.d_x1, self.d_y2, self.d_x2, self.overlap]);
        for g in 0..n_groups {
            v.push(if g == self.group_id { 1.0 } else { 0.0 });
        }
        v.extend_from_slice(&[
            self.subj_mean,
            self.subj_median,
            self.obj_mean,
            self.obj_median,
        ]);
        v
    }

    /// Column names matching `to_model_vector`.
    pub fn model_feature_names(n_groups: usize) -> Vec<String> {
        let mut names = vec![
            "d_y1".to_string(),
            "d_x1".to_string(),
            "d_y2".to_string(),
            "d_x2".to_string(),
            "overlap".to_string(),
        ];
        for g in 0..n_groups {
            names.push(format!("group_{g}"));
        }
        names.extend(
            ["subj_mean", "subj_median", "obj_mean", "obj_median"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }
}

/// All (human, other) pairs of a scene, ordered by (subject_id, object_id).
pub fn generate_candidates(scene: &SceneRecord, vocab: &LabelVocabulary) -> Vec<CandidatePair> {
    let humans = scene.human_ids(vocab);
    let mut object_ids: Vec<u32> = scene.instances.iter().map(|i| i.instance_id).collect();
    object_ids.sort_unstable();
    let mut pairs = Vec::with_capacity(humans.len() * object_ids.len().saturating_sub(1));
    for &subject_id in &humans {
        for &object_id in &object_ids {
            if object_id == subject_id {
                continue;
            }
            let label = scene
                .triples
                .iter()
                .filter(|t| t.subject_id == subject_id && t.object_id == object_id)
                .map(|t| t.relation_id)
                .min();
            pairs.push(CandidatePair {
                scene_id: scene.scene_id.clone(),
                subject_id,
                object_id,
                label,
            });
        }
    }
    pairs
}

/// Area intersection-over-union of two boxes; 0 when the union is degenerate.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let inter = iy * ix;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

fn depth_fields(
    instance: &Instance,
    depth: Option<&DepthRaster>,
) -> Result<(DepthStats, bool)> {
    match depth {
        None => Ok((DepthStats::invalid(), true)),
        Some(raster) => {
            let stats = masked_depth_stats(raster, &instance.mask)?;
            let imputed = !stats.valid;
            Ok((stats, imputed))
        }
    }
}

/// Assembles the feature vector for one candidate pair. Box differences are
/// subject minus object, normalized by the image extent; absent or invalid
/// depth yields zeroed depth fields with `depth_imputed` set.
pub fn assemble_features(
    pair: &CandidatePair,
    scene: &SceneRecord,
    cluster: &ClusterModel,
    depth: Option<&DepthRaster>,
) -> Result<PairFeatures> {
    let subject = scene.instance(pair.subject_id).ok_or_else(|| {
        Error::validation(&scene.scene_id, format!("missing subject {}", pair.subject_id))
    })?;
    let object = scene.instance(pair.object_id).ok_or_else(|| {
        Error::validation(&scene.scene_id, format!("missing object {}", pair.object_id))
    })?;
    let group_id = cluster.group_of(object.category_id)?;
    let h = f64::from(scene.height).max(1.0);
    let w = f64::from(scene.width).max(1.0);
    let (sb, ob) = (&subject.box_, &object.box_);
    let (subj_stats, subj_imputed) = depth_fields(subject, depth)?;
    let (obj_stats, obj_imputed) = depth_fields(object, depth)?;
    Ok(PairFeatures {
        d_y1: (sb.y1 - ob.y1) / h,
        d_x1: (sb.x1 - ob.x1) / w,
        d_y2: (sb.y2 - ob.y2) / h,
        d_x2: (sb.x2 - ob.x2) / w,
        overlap: box_iou(sb, ob),
        group_id,
        subj_mean: if subj_stats.valid { subj_stats.mean } else { 0.0 },
        subj_median: if subj_stats.valid { subj_stats.median } else { 0.0 },
        obj_mean: if obj_stats.valid { obj_stats.mean } else { 0.0 },
        obj_median: if obj_stats.valid { obj_stats.median } else { 0.0 },
        depth_imputed: subj_imputed || obj_imputed,
    })
}

/// Header of the feature-dump CSV.
pub const FEATURE_CSV_HEADER: &[&str] = &[
    "scene_id",
    "subject_id",
    "object_id",
    "d_y1",
    "d_x1",
    "d_y2",
    "d_x2",
    "overlap",
    "group_id",
    "subj_mean",
    "subj_median",
    "obj_mean",
    "obj_median",
    "label",
];

/// Writes candidate features as CSV rows in (scene_id, subject, object)
/// order. The label column is empty for unlabeled pairs.
pub fn write_feature_csv<W: std::io::Write>(
    out: W,
    rows: &[(CandidatePair, PairFeatures)],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    writer.write_record(FEATURE_CSV_HEADER).map_err(io_err)?;
    for (pair, f) in rows {
        writer
            .write_record(&[
                pair.scene_id.clone(),
                pair.subject_id.to_string(),
                pair.object_id.to_string(),
                f.d_y1.to_string(),
                f.d_x1.to_string(),
                f.d_y2.to_string(),
                f.d_x2.to_string(),
                f.overlap.to_string(),
                f.group_id.to_string(),
                f.subj_mean.to_string(),
                f.subj_median.to_string(),
                f.obj_mean.to_string(),
                f.obj_median.to_string(),
                pair.label.map(|l| l.to_string()).unwrap_or_default(),
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(())
}
