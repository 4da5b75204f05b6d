//! File formats: vocabulary JSON, JSON-lines annotation splits, and the
//! binary depth raster container.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::atomic_write;

use super::{DepthRaster, LabelVocabulary, SceneRecord};

/// Magic prefix of a depth raster file.
pub const DEPTH_MAGIC: &[u8; 8] = b"RELDEPTH";

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    object_categories: Vec<CategoryEntry>,
    relations: Vec<RelationEntry>,
}

#[derive(Serialize, Deserialize)]
struct CategoryEntry {
    name: String,
    #[serde(default)]
    is_human: bool,
}

#[derive(Serialize, Deserialize)]
struct RelationEntry {
    name: String,
    #[serde(default)]
    is_geometric: bool,
}

pub fn read_vocabulary(path: &Path) -> Result<LabelVocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: VocabularyFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        offset: byte_offset(&text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    LabelVocabulary::new(
        file.object_categories
            .into_iter()
            .map(|c| (c.name, c.is_human))
            .collect(),
        file.relations
            .into_iter()
            .map(|r| (r.name, r.is_geometric))
            .collect(),
    )
}

pub fn write_vocabulary(path: &Path, vocab: &LabelVocabulary) -> Result<()> {
    let file = VocabularyFile {
        object_categories: vocab
            .object_categories
            .iter()
            .enumerate()
            .map(|(i, name)| CategoryEntry {
                name: name.clone(),
                is_human: i == vocab.human_category,
            })
            .collect(),
        relations: vocab
            .relation_labels
            .iter()
            .zip(&vocab.geometric_flags)
            .map(|(name, &g)| RelationEntry {
                name: name.clone(),
                is_geometric: g,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("vocabulary serializes");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Converts serde_json's 1-based line/column into a byte offset into `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0usize;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

/// Reads one annotation split without enforcing scene invariants.
///
/// Lines are parsed in file order; parse failures report the byte offset of
/// the offending line position.
pub fn read_split_unvalidated(path: &Path) -> Result<Vec<SceneRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scenes = Vec::new();
    let mut offset = 0usize;
    for line in text.split('\n') {
        if !line.trim().is_empty() {
            let scene: SceneRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                file: path.to_path_buf(),
                offset: offset + e.column().saturating_sub(1),
                message: e.to_string(),
            })?;
            scenes.push(scene);
        }
        offset += line.len() + 1;
    }
    Ok(scenes)
}

fn sort_and_validate(
    mut scenes: Vec<SceneRecord>,
    vocab: &LabelVocabulary,
) -> Result<Vec<SceneRecord>> {
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    for pair in scenes.windows(2) {
        if pair[0].scene_id == pair[1].scene_id {
            return Err(Error::validation(
                &pair[0].scene_id,
                "duplicate scene id in dataset",
            ));
        }
    }
    let results = crate::par::map_slice(&scenes, |scene| scene.validate(vocab));
    for r in results {
        r?;
    }
    Ok(scenes)
}

/// Loads and validates a single split file `<root>/<split>.jsonl`.
pub fn load_split(root: &Path, split: &str, vocab: &LabelVocabulary) -> Result<Vec<SceneRecord>> {
    let path = split_path(root, split);
    sort_and_validate(read_split_unvalidated(&path)?, vocab)
}

pub fn split_path(root: &Path, split: &str) -> PathBuf {
    root.join(format!("{split}.jsonl"))
}

/// Loads the vocabulary plus every `*.jsonl` split under `root`, merged and
/// sorted by scene id. An empty directory yields an empty scene list.
pub fn load_dataset(root: &Path, vocab_path: &Path) -> Result<(Vec<SceneRecord>, LabelVocabulary)> {
    let vocab = read_vocabulary(vocab_path)?;
    let mut files: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    let mut scenes = Vec::new();
    for file in &files {
        scenes.extend(read_split_unvalidated(file)?);
    }
    let scenes = sort_and_validate(scenes, &vocab)?;
    Ok((scenes, vocab))
}

/// Writes one split as JSON lines, one scene per line, in the given order.
pub fn write_split(path: &Path, scenes: &[SceneRecord]) -> Result<()> {
    let mut out = String::new();
    for scene in scenes {
        out.push_str(&serde_json::to_string(scene).expect("scene serializes"));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_depth_raster(path: &Path) -> Result<DepthRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |offset: usize, message: &str| Error::Parse {
        file: path.to_path_buf(),
        offset,
        message: message.to_string(),
    };
    if bytes.len() < 16 {
        return Err(parse_err(bytes.len(), "truncated header"));
    }
    if &bytes[0..8] != DEPTH_MAGIC {
        return Err(parse_err(0, "bad magic, expected RELDEPTH"));
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let count = height as usize * width as usize;
    let expected_len = 16 + count * 4;
    if bytes.len() != expected_len {
        return Err(parse_err(
            bytes.len().min(expected_len),
            &format!("expected {expected_len} bytes for {height}x{width} raster, found {}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for chunk in bytes[16..].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    DepthRaster::new(height, width, values)
}

pub fn write_depth_raster(path: &Path, raster: &DepthRaster) -> Result<()> {
    raster.validate()?;
    let mut bytes = Vec::with_capacity(16 + raster.values.len() * 4);
    bytes.extend_from_slice(DEPTH_MAGIC);
    bytes.extend_from_slice(&raster.height.to_le_bytes());
    bytes.extend_from_slice(&raster.width.to_le_bytes());
    for v in &raster.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}
