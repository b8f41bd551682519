//! Seeded synthetic referring-expression world.
//!
//! Objects carry a category, a color, and a size class; visual features are
//! the one-hot codes of those attributes plus small seeded noise, so no
//! pretrained feature extractor is needed. Expressions are built from
//! templates and only emitted when they identify exactly one region under
//! the world's semantics, and the scene keeps enough same-category
//! distractors that category matching alone is ambiguous.
//!
//! Relation semantics (shared with the evaluation oracle): `left of` and
//! `right of` compare box center x, `above`/`below` compare center y, and
//! the superlatives compare box area within the named category.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::rng::stream;
use crate::compute::tensor::Tensor;
use crate::data::bbox::BBox;
use crate::data::features::{spatial_feature, visdif_feature};
use crate::data::{Dataset, ExpressionRecord, Region, RegionFeature, Scene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    Largest,
    Smallest,
}

impl Relation {
    pub fn tokens(&self) -> &'static [&'static str] {
        match self {
            Relation::LeftOf => &["left", "of"],
            Relation::RightOf => &["right", "of"],
            Relation::Above => &["above"],
            Relation::Below => &["below"],
            Relation::Largest => &["largest"],
            Relation::Smallest => &["smallest"],
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(
            self,
            Relation::LeftOf | Relation::RightOf | Relation::Above | Relation::Below
        )
    }

    /// Binary relation on box centers.
    pub fn holds(&self, a: &BBox, b: &BBox) -> bool {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        match self {
            Relation::LeftOf => ax < bx,
            Relation::RightOf => ax > bx,
            Relation::Above => ay < by,
            Relation::Below => ay > by,
            Relation::Largest | Relation::Smallest => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    /// "the <color> <category>"
    Attribute,
    /// "the <size> <category>"
    SizeAttribute,
    /// "the largest|smallest <category>"
    Superlative,
    /// "the <category> <relation> the <color> <category>"
    Relational,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::Attribute,
        TemplateKind::SizeAttribute,
        TemplateKind::Superlative,
        TemplateKind::Relational,
    ];

    fn default_weight(&self) -> f64 {
        match self {
            TemplateKind::Attribute => 0.25,
            TemplateKind::SizeAttribute => 0.15,
            TemplateKind::Superlative => 0.35,
            TemplateKind::Relational => 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub categories: Vec<String>,
    pub colors: Vec<String>,
    pub sizes: Vec<String>,
    pub relations: Vec<Relation>,
    pub templates: Vec<TemplateKind>,
    /// Sampling weight per entry of `templates`; defaults favor templates
    /// that need context to resolve.
    pub template_weights: Option<Vec<f64>>,
    /// Minimum number of other same-category objects for every expression's
    /// referent.
    pub same_category_distractors: usize,
    pub expressions_per_scene: usize,
    pub width: f64,
    pub height: f64,
    /// Uniform noise added to the one-hot visual codes.
    pub feature_noise: f64,
    /// Probability that the forced same-category group shares one size
    /// class, which makes superlatives resolvable only by comparison.
    pub same_size_class_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_scenes: 200,
            test_scenes: 50,
            objects_min: 4,
            objects_max: 8,
            categories: ["ball", "box", "cone", "disc", "star", "ring"]
                .map(String::from)
                .to_vec(),
            colors: ["red", "green", "blue", "yellow", "purple", "orange", "cyan"]
                .map(String::from)
                .to_vec(),
            sizes: ["small", "medium", "large"].map(String::from).to_vec(),
            relations: vec![
                Relation::LeftOf,
                Relation::RightOf,
                Relation::Above,
                Relation::Below,
                Relation::Largest,
                Relation::Smallest,
            ],
            templates: TemplateKind::ALL.to_vec(),
            template_weights: None,
            same_category_distractors: 2,
            expressions_per_scene: 2,
            width: 640.0,
            height: 480.0,
            feature_noise: 0.02,
            same_size_class_prob: 0.6,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() || self.colors.is_empty() || self.sizes.is_empty() {
            return Err(Error::Config("empty attribute alphabet".into()));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(Error::Config(format!(
                "bad object count range [{}, {}]",
                self.objects_min, self.objects_max
            )));
        }
        if self.templates.is_empty() {
            return Err(Error::Config("no templates enabled".into()));
        }
        if let Some(w) = &self.template_weights {
            if w.len() != self.templates.len() || w.iter().any(|&x| x < 0.0) {
                return Err(Error::Config("template_weights must align with templates".into()));
            }
        }
        if self.expressions_per_scene == 0 {
            return Err(Error::Config("expressions_per_scene must be positive".into()));
        }
        Ok(())
    }

    /// A one-object world needs no context to resolve expressions.
    pub fn context_free(&self) -> bool {
        self.objects_max == 1
    }

    pub fn visual_dim(&self) -> usize {
        self.categories.len() + self.colors.len() + self.sizes.len()
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SynthStats {
    pub scenes: usize,
    pub expressions: usize,
    /// Scene attempts discarded because no template produced a unique
    /// referent.
    pub skipped_scenes: usize,
    /// Expression slots left unfilled for lack of valid candidates.
    pub skipped_expressions: usize,
    pub per_template: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
struct SynthObject {
    cat: usize,
    color: usize,
    size: usize,
    bbox: BBox,
}

#[derive(Debug, Clone)]
struct Candidate {
    kind: TemplateKind,
    words: Vec<String>,
    referent: usize,
}

/// Generates a seeded dataset with `train`/`test` splits. Identical seeds
/// produce byte-identical serialized datasets.
pub fn synth_world(cfg: &SynthConfig) -> Result<(Dataset, SynthStats)> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, "synth", 0);
    let mut stats = SynthStats::default();

    let mut scenes = Vec::new();
    let mut expressions = Vec::new();
    let mut splits: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut next_region_id: u64 = 1;
    let mut next_expr_id: u64 = 1;

    for (split, want) in [("train", cfg.train_scenes), ("test", cfg.test_scenes)] {
        let mut made = 0;
        let mut attempts = 0;
        let cap = want.saturating_mul(20).max(20);
        while made < want {
            attempts += 1;
            if attempts > cap {
                return Err(Error::Config(format!(
                    "could not generate {want} {split} scenes in {cap} attempts; \
                     the template/distractor configuration is too restrictive"
                )));
            }
            let objects = place_objects(cfg, &mut rng);
            let mut candidates = enumerate_candidates(cfg, &objects);
            if candidates.is_empty() {
                stats.skipped_scenes += 1;
                continue;
            }
            let picked = sample_candidates(cfg, &mut candidates, &mut rng);
            if picked.is_empty() {
                stats.skipped_scenes += 1;
                continue;
            }
            stats.skipped_expressions += cfg.expressions_per_scene - picked.len();

            let scene_id = (scenes.len() + 1) as u64;
            let scene = build_scene(cfg, scene_id, &objects, &mut next_region_id, &mut rng)?;
            let scene_index = scenes.len();
            scenes.push(scene);
            for cand in picked {
                *stats
                    .per_template
                    .entry(format!("{:?}", cand.kind).to_lowercase())
                    .or_default() += 1;
                let raw = cand.words.join(" ");
                let len = cand.words.len();
                let idx = expressions.len();
                expressions.push(ExpressionRecord {
                    id: next_expr_id,
                    scene_index,
                    raw,
                    words: cand.words,
                    token_ids: Vec::new(),
                    len,
                    referent: Some(cand.referent),
                });
                splits.entry(split.to_string()).or_default().push(idx);
                next_expr_id += 1;
                stats.expressions += 1;
            }
            made += 1;
            stats.scenes += 1;
        }
    }

    let feature_dim = scenes
        .first()
        .map(|s| s.regions[0].x.len())
        .unwrap_or(0);
    Ok((
        Dataset { scenes, expressions, splits, feature_dim, use_visdif: true },
        stats,
    ))
}

fn place_objects(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<SynthObject> {
    let n = rng.gen_range(cfg.objects_min..=cfg.objects_max);
    let focus_cat = rng.gen_range(0..cfg.categories.len());
    let focus_count = (cfg.same_category_distractors + 1).min(n);
    let share_size = rng.gen_bool(cfg.same_size_class_prob);
    let shared_size = rng.gen_range(0..cfg.sizes.len());

    let mut objects: Vec<SynthObject> = Vec::with_capacity(n);
    for k in 0..n {
        let cat = if k < focus_count {
            focus_cat
        } else {
            rng.gen_range(0..cfg.categories.len())
        };
        let color = rng.gen_range(0..cfg.colors.len());
        let size = if k < focus_count && share_size {
            shared_size
        } else {
            rng.gen_range(0..cfg.sizes.len())
        };
        let bbox = place_box(cfg, size, &objects, rng);
        objects.push(SynthObject { cat, color, size, bbox });
    }
    objects
}

/// Area-fraction range for a size class, evenly spread with gaps so classes
/// stay visually distinct.
fn size_range(cfg: &SynthConfig, size: usize) -> (f64, f64) {
    let span = 0.09 / cfg.sizes.len() as f64;
    let lo = 0.01 + size as f64 * span;
    (lo, lo + 0.8 * span)
}

fn place_box(
    cfg: &SynthConfig,
    size: usize,
    placed: &[SynthObject],
    rng: &mut ChaCha8Rng,
) -> BBox {
    let (lo, hi) = size_range(cfg, size);
    let min_dist = 0.12 * cfg.width.min(cfg.height);
    let mut last = None;
    for _ in 0..30 {
        let frac = rng.gen_range(lo..hi);
        let aspect = rng.gen_range(0.75..1.33);
        let area = frac * cfg.width * cfg.height;
        let w = (area * aspect).sqrt().min(cfg.width * 0.9);
        let h = (area / w).min(cfg.height * 0.9);
        let cx = rng.gen_range(w / 2.0..cfg.width - w / 2.0);
        let cy = rng.gen_range(h / 2.0..cfg.height - h / 2.0);
        let bbox = BBox {
            x_tl: cx - w / 2.0,
            y_tl: cy - h / 2.0,
            x_br: cx + w / 2.0,
            y_br: cy + h / 2.0,
        };
        let clear = placed.iter().all(|o| {
            let (ox, oy) = o.bbox.center();
            let dx = cx - ox;
            let dy = cy - oy;
            (dx * dx + dy * dy).sqrt() >= min_dist
        });
        last = Some(bbox);
        if clear {
            return bbox;
        }
    }
    last.expect("at least one placement attempt")
}

fn enumerate_candidates(cfg: &SynthConfig, objects: &[SynthObject]) -> Vec<Candidate> {
    let mut out = Vec::new();
    let policy = |o: usize| -> bool {
        let cat = objects[o].cat;
        objects.iter().filter(|x| x.cat == cat).count() >= cfg.same_category_distractors + 1
    };
    let margin_x = 0.05 * cfg.width;
    let margin_y = 0.05 * cfg.height;

    for kind in &cfg.templates {
        match kind {
            TemplateKind::Attribute => {
                for (o, obj) in objects.iter().enumerate() {
                    let matches = objects
                        .iter()
                        .filter(|x| x.cat == obj.cat && x.color == obj.color)
                        .count();
                    if matches == 1 && policy(o) {
                        out.push(Candidate {
                            kind: *kind,
                            words: vec![
                                "the".into(),
                                cfg.colors[obj.color].clone(),
                                cfg.categories[obj.cat].clone(),
                            ],
                            referent: o,
                        });
                    }
                }
            }
            TemplateKind::SizeAttribute => {
                for (o, obj) in objects.iter().enumerate() {
                    let matches = objects
                        .iter()
                        .filter(|x| x.cat == obj.cat && x.size == obj.size)
                        .count();
                    if matches == 1 && policy(o) {
                        out.push(Candidate {
                            kind: *kind,
                            words: vec![
                                "the".into(),
                                cfg.sizes[obj.size].clone(),
                                cfg.categories[obj.cat].clone(),
                            ],
                            referent: o,
                        });
                    }
                }
            }
            TemplateKind::Superlative => {
                for rel in [Relation::Largest, Relation::Smallest] {
                    if !cfg.relations.contains(&rel) {
                        continue;
                    }
                    for cat in 0..cfg.categories.len() {
                        let members: Vec<usize> = (0..objects.len())
                            .filter(|&i| objects[i].cat == cat)
                            .collect();
                        if members.len() < 2 {
                            continue;
                        }
                        let pick = members
                            .iter()
                            .copied()
                            .max_by(|&a, &b| {
                                let (aa, ab) = (objects[a].bbox.area(), objects[b].bbox.area());
                                if rel == Relation::Largest {
                                    aa.total_cmp(&ab)
                                } else {
                                    ab.total_cmp(&aa)
                                }
                            })
                            .unwrap();
                        if policy(pick) {
                            let mut words = vec!["the".to_string()];
                            words.extend(rel.tokens().iter().map(|t| t.to_string()));
                            words.push(cfg.categories[cat].clone());
                            out.push(Candidate { kind: *kind, words, referent: pick });
                        }
                    }
                }
            }
            TemplateKind::Relational => {
                for (l, lm) in objects.iter().enumerate() {
                    // Landmark must be unique by (color, category) scene-wide.
                    let lm_matches = objects
                        .iter()
                        .filter(|x| x.cat == lm.cat && x.color == lm.color)
                        .count();
                    if lm_matches != 1 {
                        continue;
                    }
                    for rel in &cfg.relations {
                        if !rel.is_binary() {
                            continue;
                        }
                        for cat in 0..cfg.categories.len() {
                            let satisfying: Vec<usize> = (0..objects.len())
                                .filter(|&i| i != l && objects[i].cat == cat)
                                .filter(|&i| rel.holds(&objects[i].bbox, &lm.bbox))
                                .collect();
                            if satisfying.len() != 1 {
                                continue;
                            }
                            let o = satisfying[0];
                            if !policy(o) {
                                continue;
                            }
                            // Keep only geometrically clear referents.
                            let (ox, oy) = objects[o].bbox.center();
                            let (lx, ly) = lm.bbox.center();
                            let clear = match rel {
                                Relation::LeftOf | Relation::RightOf => {
                                    (ox - lx).abs() >= margin_x
                                }
                                _ => (oy - ly).abs() >= margin_y,
                            };
                            if !clear {
                                continue;
                            }
                            let mut words = vec![
                                "the".to_string(),
                                cfg.categories[cat].clone(),
                            ];
                            words.extend(rel.tokens().iter().map(|t| t.to_string()));
                            words.push("the".into());
                            words.push(cfg.colors[lm.color].clone());
                            words.push(cfg.categories[lm.cat].clone());
                            out.push(Candidate { kind: *kind, words, referent: o });
                        }
                    }
                }
            }
        }
    }
    out
}

fn sample_candidates(
    cfg: &SynthConfig,
    candidates: &mut Vec<Candidate>,
    rng: &mut ChaCha8Rng,
) -> Vec<Candidate> {
    let mut by_kind: BTreeMap<usize, Vec<Candidate>> = BTreeMap::new();
    for c in candidates.drain(..) {
        let slot = cfg.templates.iter().position(|k| *k == c.kind).unwrap();
        by_kind.entry(slot).or_default().push(c);
    }
    for v in by_kind.values_mut() {
        v.shuffle(rng);
    }
    let weights: Vec<f64> = match &cfg.template_weights {
        Some(w) => w.clone(),
        None => cfg.templates.iter().map(|k| k.default_weight()).collect(),
    };

    let mut picked = Vec::new();
    for _ in 0..cfg.expressions_per_scene {
        let live: Vec<usize> = by_kind
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(&k, _)| k)
            .collect();
        if live.is_empty() {
            break;
        }
        let total: f64 = live.iter().map(|&k| weights[k].max(1e-12)).sum();
        let mut roll = rng.gen_range(0.0..total);
        let mut chosen = live[live.len() - 1];
        for &k in &live {
            let w = weights[k].max(1e-12);
            if roll < w {
                chosen = k;
                break;
            }
            roll -= w;
        }
        picked.push(by_kind.get_mut(&chosen).unwrap().pop().unwrap());
    }
    picked
}

fn build_scene(
    cfg: &SynthConfig,
    scene_id: u64,
    objects: &[SynthObject],
    next_region_id: &mut u64,
    rng: &mut ChaCha8Rng,
) -> Result<Scene> {
    let dim = cfg.visual_dim();
    let mut visuals: Vec<Tensor> = Vec::with_capacity(objects.len());
    for obj in objects {
        let mut v = vec![0.0f64; dim];
        v[obj.cat] = 1.0;
        v[cfg.categories.len() + obj.color] = 1.0;
        v[cfg.categories.len() + cfg.colors.len() + obj.size] = 1.0;
        for x in v.iter_mut() {
            let noisy = *x + rng.gen_range(-cfg.feature_noise..=cfg.feature_noise);
            // Quantize to f32 so in-memory and persisted features agree.
            *x = noisy as f32 as f64;
        }
        visuals.push(Tensor::raw(vec![dim], v));
    }

    let mut regions = Vec::with_capacity(objects.len());
    for (k, obj) in objects.iter().enumerate() {
        let others: Vec<&Tensor> = (0..objects.len())
            .filter(|&j| j != k && objects[j].cat == obj.cat)
            .map(|j| &visuals[j])
            .collect();
        let visdif = visdif_feature(&visuals[k], &others)?;
        let spatial = spatial_feature(&obj.bbox, cfg.width, cfg.height)?;
        let feature = RegionFeature {
            visual: visuals[k].clone(),
            visdif: Some(visdif),
            spatial,
            category: Some(cfg.categories[obj.cat].clone()),
        };
        let x = feature.concat();
        regions.push(Region { id: *next_region_id, bbox: obj.bbox, feature, x });
        *next_region_id += 1;
    }

    let fdim = regions[0].x.len();
    let mut acc = vec![0.0; fdim];
    for r in &regions {
        for (a, v) in acc.iter_mut().zip(r.x.data()) {
            *a += v;
        }
    }
    let n = regions.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }

    Ok(Scene {
        id: scene_id,
        width: cfg.width,
        height: cfg.height,
        regions,
        global: Tensor::raw(vec![fdim], acc),
    })
}
