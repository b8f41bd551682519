//! Scenes, regions, expressions, ingestion, and the synthetic world.

pub mod bbox;
pub mod features;
pub mod io;
pub mod synth;

pub use bbox::BBox;
pub use features::{spatial_feature, visdif_feature};
pub use synth::{synth_world, Relation, SynthConfig, SynthStats, TemplateKind};

use std::collections::BTreeMap;

use crate::compute::tensor::Tensor;
use crate::error::{Error, Result};

/// Expressions are truncated (not rejected) to this many tokens and padded
/// with the reserved pad id.
pub const MAX_LEN: usize = 20;

#[derive(Debug, Clone)]
pub struct RegionFeature {
    pub visual: Tensor,
    pub visdif: Option<Tensor>,
    pub spatial: Tensor,
    pub category: Option<String>,
}

impl RegionFeature {
    /// x_i = [visual, visdif?, spatial].
    pub fn concat(&self) -> Tensor {
        let mut data = self.visual.data().to_vec();
        if let Some(v) = &self.visdif {
            data.extend_from_slice(v.data());
        }
        data.extend_from_slice(self.spatial.data());
        let n = data.len();
        Tensor::raw(vec![n], data)
    }
}

#[derive(Debug, Clone)]
pub struct Region {
    pub id: u64,
    pub bbox: BBox,
    pub feature: RegionFeature,
    /// Concatenated feature vector, precomputed at load.
    pub x: Tensor,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub id: u64,
    pub width: f64,
    pub height: f64,
    pub regions: Vec<Region>,
    /// Whole-scene feature: mean of the region feature vectors.
    pub global: Tensor,
}

impl Scene {
    pub fn region_index(&self, region_id: u64) -> Option<usize> {
        self.regions.iter().position(|r| r.id == region_id)
    }
}

#[derive(Debug, Clone)]
pub struct ExpressionRecord {
    pub id: u64,
    pub scene_index: usize,
    pub raw: String,
    /// Tokenized and truncated to [`MAX_LEN`].
    pub words: Vec<String>,
    /// Vocabulary ids padded to [`MAX_LEN`]; filled by `attach_vocab`.
    pub token_ids: Vec<u32>,
    pub len: usize,
    /// Referent region index within the scene; absent in unsupervised data.
    pub referent: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    pub expressions: Vec<ExpressionRecord>,
    /// Split name → expression indices.
    pub splits: BTreeMap<String, Vec<usize>>,
    pub feature_dim: usize,
    pub use_visdif: bool,
}

impl Dataset {
    pub fn scene_of(&self, expr: &ExpressionRecord) -> &Scene {
        &self.scenes[expr.scene_index]
    }

    pub fn split(&self, name: &str) -> Result<&[usize]> {
        self.splits
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Invalid(format!("no split named {name:?}")))
    }

    /// Expression indices for a split, or every expression when the split
    /// map is empty.
    pub fn split_or_all(&self, name: &str) -> Result<Vec<usize>> {
        if self.splits.is_empty() {
            return Ok((0..self.expressions.len()).collect());
        }
        Ok(self.split(name)?.to_vec())
    }

    /// Stable content hash over the canonical serialized form; ties
    /// checkpoints to the data they were trained on.
    pub fn content_hash(&self) -> u64 {
        let file = io::to_annotation_file(self, None);
        let text = serde_json::to_string(&file).expect("dataset serializes");
        const OFFSET: u64 = 0xcbf29ce484222325;
        const PRIME: u64 = 0x100000001b3;
        let mut h = OFFSET;
        for b in text.bytes() {
            h = (h ^ b as u64).wrapping_mul(PRIME);
        }
        h
    }

    /// Maps words to ids and pads to [`MAX_LEN`] using the given vocabulary.
    pub fn attach_vocab(&mut self, vocab: &crate::language::Vocabulary) {
        for expr in &mut self.expressions {
            expr.token_ids = vocab.encode_padded(&expr.words);
        }
    }
}

/// Whitespace tokenizer used for `raw` expressions; lowercases to match the
/// synthetic world's vocabulary conventions.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .take(MAX_LEN)
        .collect()
}
