//! Parameterized synthetic datasets with planted structure.
//!
//! Categories belong to families sharing a relation-distribution template;
//! with probability `rho` a pair's relation is instead determined by depth
//! order (nearer subject → `in-front-of`, farther → `behind`), so depth
//! carries real signal that a depth-blind predictor cannot recover. Masks
//! are axis-aligned rectangles with optional pixel dropout; depth rasters
//! paint nearer instances over farther ones (smaller value = nearer).
//! Generation is deterministic given the spec seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    encode_mask, write_depth_raster, write_split, write_vocabulary, BoundingBox, DepthRaster,
    Instance, LabelVocabulary, RelationTriple, SceneRecord,
};
#[cfg(test)]
use crate::depth::masked_depth_stats;
use crate::error::{Error, Result};
use crate::par;
use crate::util::{atomic_write, StableHasher};

pub const IN_FRONT_OF: &str = "in-front-of";
pub const BEHIND: &str = "behind";
pub const NEXT_TO: &str = "next-to";

/// One relation in the generated vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub is_geometric: bool,
}

/// One category family: `members` categories sharing a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    pub members: usize,
    /// Relation name → probability; normalized on use.
    pub template: BTreeMap<String, f64>,
    /// Relative sampling weight when drawing object categories.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

fn default_humans() -> (usize, usize) {
    (1, 2)
}

fn default_objects() -> (usize, usize) {
    (3, 7)
}

fn default_depth_range() -> (f64, f64) {
    (1.0, 10.0)
}

fn default_val_fraction() -> f64 {
    0.2
}

/// Full description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// Total scene count, split into train and val by `val_fraction`.
    pub scene_count: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub image_height: u32,
    pub image_width: u32,
    pub relations: Vec<RelationSpec>,
    pub families: Vec<FamilySpec>,
    /// Probability that a pair's relation follows depth order.
    pub rho: f64,
    /// Foreground pixel dropout probability on masks.
    #[serde(default)]
    pub mask_noise: f64,
    /// Additive uniform jitter amplitude on depth raster values.
    #[serde(default)]
    pub depth_jitter: f64,
    #[serde(default = "default_humans")]
    pub humans_per_scene: (usize, usize),
    #[serde(default = "default_objects")]
    pub objects_per_scene: (usize, usize),
    /// Instance depth values are drawn uniformly from this interval;
    /// smaller values are nearer.
    #[serde(default = "default_depth_range")]
    pub depth_range: (f64, f64),
    /// Template used when the object of a pair is a human; defaults to
    /// one-hot `next-to`.
    #[serde(default)]
    pub human_template: BTreeMap<String, f64>,
}

impl SynthSpec {
    /// A geometric-relations-plus-actions vocabulary shared by the examples
    /// and tests.
    pub fn default_relations() -> Vec<RelationSpec> {
        [
            (IN_FRONT_OF, true),
            (NEXT_TO, true),
            (BEHIND, true),
            ("hold", false),
            ("carry", false),
            ("touch", false),
            ("look-at", false),
        ]
        .iter()
        .map(|&(name, is_geometric)| RelationSpec { name: name.into(), is_geometric })
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho {} outside [0, 1]", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction outside [0, 1]".into()));
        }
        if !(0.0..=0.9).contains(&self.mask_noise) {
            return Err(Error::Config("mask_noise outside [0, 0.9]".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("at least one family required".into()));
        }
        if self.humans_per_scene.0 < 1 || self.humans_per_scene.0 > self.humans_per_scene.1 {
            return Err(Error::Config("humans_per_scene must be a range with min >= 1".into()));
        }
        if self.objects_per_scene.0 > self.objects_per_scene.1 {
            return Err(Error::Config("objects_per_scene range inverted".into()));
        }
        if self.image_height < 8 || self.image_width < 8 {
            return Err(Error::Config("image extent must be at least 8x8".into()));
        }
        if self.depth_range.0 >= self.depth_range.1 {
            return Err(Error::Config("depth_range must be increasing".into()));
        }
        let names: Vec<&str> = self.relations.iter().map(|r| r.name.as_str()).collect();
        for required in [IN_FRONT_OF, BEHIND, NEXT_TO] {
            if !names.contains(&required) {
                return Err(Error::Config(format!(
                    "relations must include '{required}' for the depth rule"
                )));
            }
        }
        for family in &self.families {
            if family.members == 0 {
                return Err(Error::Config(format!("family '{}' has no members", family.name)));
            }
            if family.weight <= 0.0 {
                return Err(Error::Config(format!("family '{}' weight must be positive", family.name)));
            }
            for rel in family.template.keys() {
                if !names.contains(&rel.as_str()) {
                    return Err(Error::Config(format!(
                        "family '{}' references unknown relation '{rel}'",
                        family.name
                    )));
                }
            }
            if family.template.values().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!("family '{}' template has no mass", family.name)));
            }
        }
        for rel in self.human_template.keys() {
            if !names.contains(&rel.as_str()) {
                return Err(Error::Config(format!(
                    "human_template references unknown relation '{rel}'"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SynthSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    fn val_count(&self) -> usize {
        (self.scene_count as f64 * self.val_fraction).round() as usize
    }

    fn train_count(&self) -> usize {
        self.scene_count - self.val_count()
    }
}

/// Ground-truth generation metadata, persisted as `planted.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMetadata {
    pub seed: u64,
    pub rho: f64,
    pub depth_convention: String,
    /// Family name → member category names.
    pub families: BTreeMap<String, Vec<String>>,
    /// Category name → family index (humans excluded).
    pub family_of_category: BTreeMap<String, usize>,
}

/// One generated scene with its depth raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub record: SceneRecord,
    pub raster: DepthRaster,
}

/// A complete generated dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub vocab: LabelVocabulary,
    pub train: Vec<GeneratedScene>,
    pub val: Vec<GeneratedScene>,
    pub planted: PlantedMetadata,
}

fn build_vocab(spec: &SynthSpec) -> Result<(LabelVocabulary, PlantedMetadata)> {
    let mut categories = vec![("human".to_string(), true)];
    let mut families = BTreeMap::new();
    let mut family_of_category = BTreeMap::new();
    for (f, family) in spec.families.iter().enumerate() {
        let mut members = Vec::with_capacity(family.members);
        for m in 0..family.members {
            let name = format!("{}_{m}", family.name);
            family_of_category.insert(name.clone(), f);
            members.push(name.clone());
            categories.push((name, false));
        }
        families.insert(family.name.clone(), members);
    }
    let relations = spec
        .relations
        .iter()
        .map(|r| (r.name.clone(), r.is_geometric))
        .collect();
    let vocab = LabelVocabulary::new(categories, relations)?;
    let planted = PlantedMetadata {
        seed: spec.seed,
        rho: spec.rho,
        depth_convention: "smaller_is_nearer".to_string(),
        families,
        family_of_category,
    };
    Ok((vocab, planted))
}

/// Relation-name template resolved to a distribution over relation ids.
fn resolve_template(template: &BTreeMap<String, f64>, vocab: &LabelVocabulary) -> Vec<f64> {
    let mut dist = vec![0.0; vocab.n_relations()];
    for (name, &mass) in template {
        if let Some(id) = vocab.relation_id(name) {
            dist[id] = mass.max(0.0);
        }
    }
    let total: f64 = dist.iter().sum();
    if total > 0.0 {
        dist.iter_mut().for_each(|p| *p /= total);
    }
    dist
}

fn sample_index(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

struct InstancePlan {
    category_id: usize,
    y0: u32,
    x0: u32,
    y1: u32,
    x1: u32,
    depth: f64,
}

fn generate_scene(spec: &SynthSpec, vocab: &LabelVocabulary, planted: &PlantedMetadata, scene_id: &str, seed: u64) -> GeneratedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.image_height, spec.image_width);
    let n_humans = rng.random_range(spec.humans_per_scene.0..=spec.humans_per_scene.1);
    let n_objects = rng.random_range(spec.objects_per_scene.0..=spec.objects_per_scene.1);

    // Family sampling by cumulative weight.
    let total_weight: f64 = spec.families.iter().map(|f| f.weight).sum();
    let family_dist: Vec<f64> = spec.families.iter().map(|f| f.weight / total_weight).collect();
    // First category id of each family (humans occupy id 0).
    let mut family_base = Vec::with_capacity(spec.families.len());
    let mut next = 1usize;
    for family in &spec.families {
        family_base.push(next);
        next += family.members;
    }

    let mut plans: Vec<InstancePlan> = Vec::with_capacity(n_humans + n_objects);
    for i in 0..n_humans + n_objects {
        let category_id = if i < n_humans {
            vocab.human_category
        } else {
            let family = sample_index(&mut rng, &family_dist);
            family_base[family] + rng.random_range(0..spec.families[family].members)
        };
        let rh = rng.random_range(h / 6..=h / 3).max(2);
        let rw = rng.random_range(w / 6..=w / 3).max(2);
        let y0 = rng.random_range(0..=h - rh);
        let x0 = rng.random_range(0..=w - rw);
        let depth = rng.random_range(spec.depth_range.0..spec.depth_range.1);
        plans.push(InstancePlan { category_id, y0, x0, y1: y0 + rh, x1: x0 + rw, depth });
    }

    // Depth raster: background beyond the far bound, nearer instances
    // painted last so they occlude.
    let mut raster = vec![(spec.depth_range.1 + 1.0) as f32; (h * w) as usize];
    let mut paint_order: Vec<usize> = (0..plans.len()).collect();
    paint_order.sort_by(|&a, &b| plans[b].depth.total_cmp(&plans[a].depth).then(a.cmp(&b)));
    for &i in &paint_order {
        let p = &plans[i];
        for r in p.y0..p.y1 {
            for c in p.x0..p.x1 {
                let jitter = if spec.depth_jitter > 0.0 {
                    rng.random_range(-spec.depth_jitter..=spec.depth_jitter)
                } else {
                    0.0
                };
                raster[(r * w + c) as usize] = (p.depth + jitter) as f32;
            }
        }
    }

    let mut instances = Vec::with_capacity(plans.len());
    for (i, p) in plans.iter().enumerate() {
        let mut grid = vec![false; (h * w) as usize];
        let mut any = false;
        for r in p.y0..p.y1 {
            for c in p.x0..p.x1 {
                let keep = spec.mask_noise == 0.0 || rng.random_range(0.0..1.0) >= spec.mask_noise;
                if keep {
                    grid[(r * w + c) as usize] = true;
                    any = true;
                }
            }
        }
        if !any {
            // Dropout erased everything; keep the full rectangle.
            for r in p.y0..p.y1 {
                for c in p.x0..p.x1 {
                    grid[(r * w + c) as usize] = true;
                }
            }
        }
        instances.push(Instance {
            instance_id: i as u32 + 1,
            category_id: p.category_id,
            box_: BoundingBox::new(
                f64::from(p.y0),
                f64::from(p.x0),
                f64::from(p.y1),
                f64::from(p.x1),
            ),
            mask: encode_mask(&grid, h, w).expect("grid sized to extent"),
        });
    }

    // Triples: every (human, other) pair gets exactly one relation.
    let front = vocab.relation_id(IN_FRONT_OF).expect("validated");
    let behind = vocab.relation_id(BEHIND).expect("validated");
    let next_to = vocab.relation_id(NEXT_TO).expect("validated");
    let human_template = if spec.human_template.is_empty() {
        let mut t = vec![0.0; vocab.n_relations()];
        t[next_to] = 1.0;
        t
    } else {
        resolve_template(&spec.human_template, vocab)
    };
    let family_templates: Vec<Vec<f64>> = spec
        .families
        .iter()
        .map(|f| resolve_template(&f.template, vocab))
        .collect();

    let mut triples = Vec::new();
    for s in 0..plans.len() {
        if plans[s].category_id != vocab.human_category {
            continue;
        }
        for (o, plan) in plans.iter().enumerate() {
            if o == s {
                continue;
            }
            let relation_id = if spec.rho > 0.0 && rng.random_range(0.0..1.0) < spec.rho {
                match plans[s].depth.partial_cmp(&plan.depth).expect("finite depths") {
                    std::cmp::Ordering::Less => front,
                    std::cmp::Ordering::Greater => behind,
                    std::cmp::Ordering::Equal => next_to,
                }
            } else if plan.category_id == vocab.human_category {
                sample_index(&mut rng, &human_template)
            } else {
                let family = planted.family_of_category
                    [&vocab.object_categories[plan.category_id]];
                sample_index(&mut rng, &family_templates[family])
            };
            triples.push(RelationTriple {
                subject_id: s as u32 + 1,
                object_id: o as u32 + 1,
                relation_id,
            });
        }
    }

    GeneratedScene {
        record: SceneRecord {
            scene_id: scene_id.to_string(),
            height: h,
            width: w,
            instances,
            triples,
            depth_path: Some(format!("depth/{scene_id}.reldepth")),
        },
        raster: DepthRaster { height: h, width: w, values: raster },
    }
}

/// Generates the full dataset in memory; scenes are independent and derive
/// per-scene seeds, so generation parallelizes deterministically.
pub fn generate_in_memory(spec: &SynthSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let (vocab, planted) = build_vocab(spec)?;
    let make_split = |split: &str, count: usize| -> Vec<GeneratedScene> {
        let ids: Vec<String> = (0..count).map(|i| format!("{split}_{i:05}")).collect();
        par::map_slice(&ids, |scene_id| {
            let seed = StableHasher::new()
                .write_u64(spec.seed)
                .write_str(scene_id)
                .finish();
            generate_scene(spec, &vocab, &planted, scene_id, seed)
        })
    };
    let train = make_split("train", spec.train_count());
    let val = make_split("val", spec.val_count());
    Ok(GeneratedDataset { vocab, train, val, planted })
}

/// Generates the dataset and writes it in the standard on-disk layout:
/// `vocab.json`, `train.jsonl`, `val.jsonl`, `depth/*.reldepth`, and
/// `planted.json` under `root`.
pub fn generate(spec: &SynthSpec, root: &Path) -> Result<GeneratedDataset> {
    let dataset = generate_in_memory(spec)?;
    std::fs::create_dir_all(root.join("depth")).map_err(|e| Error::io(root, e))?;
    write_vocabulary(&root.join("vocab.json"), &dataset.vocab)?;
    for (split, scenes) in [("train", &dataset.train), ("val", &dataset.val)] {
        let records: Vec<SceneRecord> = scenes.iter().map(|s| s.record.clone()).collect();
        write_split(&root.join(format!("{split}.jsonl")), &records)?;
        for scene in scenes.iter() {
            let rel = scene.record.depth_path.as_ref().expect("generator sets depth_path");
            write_depth_raster(&root.join(rel), &scene.raster)?;
        }
    }
    let mut planted_json =
        serde_json::to_string_pretty(&dataset.planted).expect("metadata serializes");
    planted_json.push('\n');
    atomic_write(&root.join("planted.json"), planted_json.as_bytes())?;
    Ok(dataset)
}
