//! Dataset model and on-disk formats.
//!
//! A dataset is a directory of JSON-lines annotation files (one per split),
//! a vocabulary JSON file, and optional binary depth rasters referenced by
//! relative path from the scene records. All types are immutable after load
//! and safe to share across threads.

mod io;
mod mask;

pub use io::{
    load_dataset, load_split, read_depth_raster, read_split_unvalidated, read_vocabulary,
    write_depth_raster, write_split, write_vocabulary, DEPTH_MAGIC,
};
pub use mask::{decode_mask, encode_mask, mask_foreground_bounds, mask_iou};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category and relation vocabularies shared by every scene in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocabulary {
    /// Category names; index is the category id.
    pub object_categories: Vec<String>,
    /// Index of the single category designated as human.
    pub human_category: usize,
    /// Relation names; index is the relation id.
    pub relation_labels: Vec<String>,
    /// Per-relation flag marking geometric (spatial) relations.
    pub geometric_flags: Vec<bool>,
}

impl LabelVocabulary {
    pub fn new(
        categories: Vec<(String, bool)>,
        relations: Vec<(String, bool)>,
    ) -> Result<LabelVocabulary> {
        let humans: Vec<usize> = categories
            .iter()
            .enumerate()
            .filter(|(_, (_, h))| *h)
            .map(|(i, _)| i)
            .collect();
        if humans.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "vocabulary must designate exactly one human category, found {}",
                humans.len()
            )));
        }
        let vocab = LabelVocabulary {
            human_category: humans[0],
            object_categories: categories.into_iter().map(|(n, _)| n).collect(),
            relation_labels: relations.iter().map(|(n, _)| n.clone()).collect(),
            geometric_flags: relations.iter().map(|(_, g)| *g).collect(),
        };
        vocab.check_unique()?;
        Ok(vocab)
    }

    fn check_unique(&self) -> Result<()> {
        let mut cats = self.object_categories.clone();
        cats.sort();
        cats.dedup();
        if cats.len() != self.object_categories.len() {
            return Err(Error::InvalidInput(
                "duplicate object category names".into(),
            ));
        }
        let mut rels = self.relation_labels.clone();
        rels.sort();
        rels.dedup();
        if rels.len() != self.relation_labels.len() {
            return Err(Error::InvalidInput("duplicate relation names".into()));
        }
        Ok(())
    }

    pub fn n_categories(&self) -> usize {
        self.object_categories.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn is_human(&self, category_id: usize) -> bool {
        category_id == self.human_category
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_labels.iter().position(|r| r == name)
    }

    pub fn category_id(&self, name: &str) -> Option<usize> {
        self.object_categories.iter().position(|c| c == name)
    }
}

/// Axis-aligned box in image coordinates, `(y1, x1)` top-left inclusive,
/// `(y2, x2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub y1: f64,
    pub x1: f64,
    pub y2: f64,
    pub x2: f64,
}

impl BoundingBox {
    pub fn new(y1: f64, x1: f64, y2: f64, x2: f64) -> BoundingBox {
        BoundingBox { y1, x1, y2, x2 }
    }

    pub fn area(&self) -> f64 {
        (self.y2 - self.y1).max(0.0) * (self.x2 - self.x1).max(0.0)
    }
}

/// Binary instance mask as row-major run-length counts, starting with a run
/// of background pixels (a leading `0` encodes a mask whose first pixel is
/// foreground).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMask {
    pub height: u32,
    pub width: u32,
    pub runs: Vec<u32>,
}

impl InstanceMask {
    /// Total pixel count implied by the dimensions.
    pub fn pixel_count(&self) -> u64 {
        u64::from(self.height) * u64::from(self.width)
    }

    /// Number of foreground pixels (sum of odd-position runs).
    pub fn foreground_count(&self) -> u64 {
        self.runs
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == 1)
            .map(|(_, &c)| u64::from(c))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.runs.iter().map(|&c| u64::from(c)).sum();
        if total != self.pixel_count() {
            return Err(Error::InvalidInput(format!(
                "mask runs sum to {total}, expected {}x{} = {}",
                self.height,
                self.width,
                self.pixel_count()
            )));
        }
        Ok(())
    }
}

/// One segmented object in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: u32,
    pub category_id: usize,
    #[serde(rename = "box")]
    pub box_: BoundingBox,
    pub mask: InstanceMask,
}

/// Ground-truth relation: `subject` (a human instance) → `relation` → `object`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subject_id: u32,
    pub object_id: u32,
    pub relation_id: usize,
}

/// One image's worth of instances, ground-truth triples, and an optional
/// reference to a depth raster (relative to the dataset root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub height: u32,
    pub width: u32,
    pub instances: Vec<Instance>,
    #[serde(default)]
    pub triples: Vec<RelationTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
}

impl SceneRecord {
    pub fn instance(&self, id: u32) -> Option<&Instance> {
        self.instances.iter().find(|i| i.instance_id == id)
    }

    /// Instance ids of all humans, ascending.
    pub fn human_ids(&self, vocab: &LabelVocabulary) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .instances
            .iter()
            .filter(|i| vocab.is_human(i.category_id))
            .map(|i| i.instance_id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Checks every per-scene invariant, naming the offending instance.
    pub fn validate(&self, vocab: &LabelVocabulary) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.instance_id) {
                return Err(Error::validation_instance(
                    &self.scene_id,
                    inst.instance_id,
                    "duplicate instance id",
                ));
            }
            self.validate_instance(inst, vocab)?;
        }
        for triple in &self.triples {
            self.validate_triple(triple, vocab)?;
        }
        Ok(())
    }

    fn validate_instance(&self, inst: &Instance, vocab: &LabelVocabulary) -> Result<()> {
        let fail = |msg: String| Err(Error::validation_instance(&self.scene_id, inst.instance_id, msg));
        if inst.category_id >= vocab.n_categories() {
            return fail(format!("category id {} out of range", inst.category_id));
        }
        let b = &inst.box_;
        if !(b.y1 <= b.y2 && b.x1 <= b.x2) {
            return fail(format!("degenerate box {b:?}"));
        }
        if b.y1 < 0.0 || b.x1 < 0.0 || b.y2 > f64::from(self.height) || b.x2 > f64::from(self.width)
        {
            return fail(format!(
                "box {b:?} outside image extent {}x{}",
                self.height, self.width
            ));
        }
        if inst.mask.height != self.height || inst.mask.width != self.width {
            return fail(format!(
                "mask dimensions {}x{} differ from scene {}x{}",
                inst.mask.height, inst.mask.width, self.height, self.width
            ));
        }
        if let Err(e) = inst.mask.validate() {
            return fail(e.to_string());
        }
        // Box must enclose every foreground pixel center within 1 pixel of
        // tolerance, absorbing rasterization rounding in upstream tools.
        if let Some((min_r, min_c, max_r, max_c)) = mask_foreground_bounds(&inst.mask) {
            const TOL: f64 = 1.0 + 1e-9;
            let min_rc = f64::from(min_r) + 0.5;
            let max_rc = f64::from(max_r) + 0.5;
            let min_cc = f64::from(min_c) + 0.5;
            let max_cc = f64::from(max_c) + 0.5;
            if min_rc < b.y1 - TOL
                || max_rc > b.y2 + TOL
                || min_cc < b.x1 - TOL
                || max_cc > b.x2 + TOL
            {
                return fail(format!(
                    "box {b:?} does not enclose mask foreground rows {min_r}..={max_r}, cols {min_c}..={max_c}"
                ));
            }
        }
        Ok(())
    }

    fn validate_triple(&self, triple: &RelationTriple, vocab: &LabelVocabulary) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(&self.scene_id, msg));
        if triple.relation_id >= vocab.n_relations() {
            return fail(format!("relation id {} out of range", triple.relation_id));
        }
        if triple.subject_id == triple.object_id {
            return fail(format!(
                "triple subject and object are the same instance {}",
                triple.subject_id
            ));
        }
        let subject = self.instance(triple.subject_id).ok_or_else(|| {
            Error::validation(
                &self.scene_id,
                format!("triple references missing subject instance {}", triple.subject_id),
            )
        })?;
        if self.instance(triple.object_id).is_none() {
            return fail(format!(
                "triple references missing object instance {}",
                triple.object_id
            ));
        }
        if !vocab.is_human(subject.category_id) {
            return fail(format!(
                "triple subject {} is not a human instance",
                triple.subject_id
            ));
        }
        Ok(())
    }
}

/// Dense monocular depth raster. Values are unitless; the dataset convention
/// is recorded by the producer (the bundled generator uses smaller = nearer).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthRaster {
    pub height: u32,
    pub width: u32,
    pub values: Vec<f32>,
}

impl DepthRaster {
    pub fn new(height: u32, width: u32, values: Vec<f32>) -> Result<DepthRaster> {
        let raster = DepthRaster {
            height,
            width,
            values,
        };
        raster.validate()?;
        Ok(raster)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = u64::from(self.height) * u64::from(self.width);
        if self.values.len() as u64 != expected {
            return Err(Error::Dimension(format!(
                "depth raster holds {} values, expected {}x{} = {expected}",
                self.values.len(),
                self.height,
                self.width
            )));
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "depth raster value at index {pos} is not finite"
            )));
        }
        Ok(())
    }
}
