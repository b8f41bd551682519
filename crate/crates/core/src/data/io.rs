//! Annotation-file ingestion and the binary feature-matrix format.
//!
//! Annotation files are UTF-8 JSON with top-level `images`, `expressions`,
//! and `splits`. Region visual features come, in order of precedence, from a
//! companion feature-matrix file (`feature_file`), inline per-region
//! `feature` arrays, or are synthesized as one-hot category codes.
//!
//! The feature matrix is binary: magic `VCF1`, little-endian u32 count and
//! dim, then count×dim little-endian f32 values in row-major order. Row
//! order follows the region ids listed in the sidecar index
//! (`<path>.index.json`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compute::tensor::Tensor;
use crate::data::bbox::BBox;
use crate::data::features::{spatial_feature, visdif_feature};
use crate::data::{tokenize, Dataset, ExpressionRecord, Region, RegionFeature, Scene, MAX_LEN};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"VCF1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageRec>,
    pub expressions: Vec<ExprRec>,
    #[serde(default)]
    pub splits: BTreeMap<String, Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRec {
    pub id: u64,
    pub width: f64,
    pub height: f64,
    pub regions: Vec<RegionRec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionRec {
    pub id: u64,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExprRec {
    pub id: u64,
    pub image_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent_region_id: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureIndex {
    region_ids: Vec<u64>,
}

pub fn load_annotations(path: &Path) -> Result<Dataset> {
    load_annotations_with(path, true)
}

/// Loads and validates a dataset. Validation errors are itemized, one line
/// per offending record.
pub fn load_annotations_with(path: &Path, use_visdif: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let file: AnnotationFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;

    let features = match &file.feature_file {
        Some(rel) => {
            let fpath = path.parent().unwrap_or(Path::new(".")).join(rel);
            let (ids, _, rows) = read_feature_matrix(&fpath)?;
            Some(ids.into_iter().zip(rows).collect::<HashMap<u64, Vec<f32>>>())
        }
        None => None,
    };
    build_dataset(file, features.as_ref(), use_visdif)
}

pub fn build_dataset(
    file: AnnotationFile,
    feature_rows: Option<&HashMap<u64, Vec<f32>>>,
    use_visdif: bool,
) -> Result<Dataset> {
    let mut problems: Vec<String> = Vec::new();

    let mut image_ids = HashSet::new();
    for img in &file.images {
        if !image_ids.insert(img.id) {
            problems.push(format!("duplicate image id {}", img.id));
        }
        if img.regions.is_empty() {
            problems.push(format!("image {} has no regions", img.id));
        }
        let mut region_ids = HashSet::new();
        for r in &img.regions {
            if !region_ids.insert(r.id) {
                problems.push(format!("image {}: duplicate region id {}", img.id, r.id));
            }
        }
    }

    // Category alphabet for synthesized one-hot features.
    let mut categories: Vec<&str> = file
        .images
        .iter()
        .flat_map(|i| i.regions.iter())
        .filter_map(|r| r.category.as_deref())
        .collect();
    categories.sort_unstable();
    categories.dedup();
    let cat_index: HashMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();

    let mut scenes = Vec::with_capacity(file.images.len());
    let mut scene_index_by_id = HashMap::new();
    for img in &file.images {
        if img.width <= 0.0 || img.height <= 0.0 {
            problems.push(format!("image {}: non-positive dimensions", img.id));
            continue;
        }
        let mut visuals: Vec<Tensor> = Vec::with_capacity(img.regions.len());
        let mut boxes: Vec<BBox> = Vec::with_capacity(img.regions.len());
        let mut ok = true;
        for r in &img.regions {
            let raw = BBox {
                x_tl: r.bbox[0],
                y_tl: r.bbox[1],
                x_br: r.bbox[2],
                y_br: r.bbox[3],
            };
            match raw.clamped(img.width, img.height) {
                Ok(b) => boxes.push(b),
                Err(e) => {
                    problems.push(format!("image {} region {}: {e}", img.id, r.id));
                    ok = false;
                    continue;
                }
            }
            let visual = if let Some(rows) = feature_rows {
                match rows.get(&r.id) {
                    Some(row) => Tensor::vector(row.iter().map(|&v| v as f64).collect())?,
                    None => {
                        problems.push(format!(
                            "image {} region {}: missing feature row",
                            img.id, r.id
                        ));
                        ok = false;
                        continue;
                    }
                }
            } else if let Some(inline) = &r.feature {
                Tensor::vector(inline.clone())?
            } else {
                // One-hot over the categories present in the file.
                let dim = cat_index.len().max(1);
                let mut v = vec![0.0; dim];
                if let Some(c) = r.category.as_deref() {
                    v[cat_index[c]] = 1.0;
                }
                Tensor::raw(vec![dim], v)
            };
            visuals.push(visual);
        }
        if !ok {
            continue;
        }
        let dims: HashSet<usize> = visuals.iter().map(|v| v.len()).collect();
        if dims.len() > 1 {
            problems.push(format!("image {}: inconsistent visual feature dims", img.id));
            continue;
        }

        let mut regions = Vec::with_capacity(img.regions.len());
        for (k, r) in img.regions.iter().enumerate() {
            let visdif = if use_visdif {
                Some(compute_visdif(&visuals, img, k)?)
            } else {
                None
            };
            let spatial = spatial_feature(&boxes[k], img.width, img.height)?;
            let feature = RegionFeature {
                visual: visuals[k].clone(),
                visdif,
                spatial,
                category: r.category.clone(),
            };
            let x = feature.concat();
            regions.push(Region { id: r.id, bbox: boxes[k], feature, x });
        }
        let global = mean_feature(&regions);
        scene_index_by_id.insert(img.id, scenes.len());
        scenes.push(Scene {
            id: img.id,
            width: img.width,
            height: img.height,
            regions,
            global,
        });
    }

    let mut expressions = Vec::with_capacity(file.expressions.len());
    let mut expr_index_by_id = HashMap::new();
    let mut expr_ids = HashSet::new();
    for e in &file.expressions {
        if !expr_ids.insert(e.id) {
            problems.push(format!("duplicate expression id {}", e.id));
            continue;
        }
        let Some(&scene_index) = scene_index_by_id.get(&e.image_id) else {
            problems.push(format!("expression {}: unknown image {}", e.id, e.image_id));
            continue;
        };
        let words = match (&e.tokens, &e.raw) {
            (Some(t), _) => t.iter().map(|w| w.to_lowercase()).take(MAX_LEN).collect(),
            (None, Some(r)) => tokenize(r),
            (None, None) => {
                problems.push(format!("expression {}: neither tokens nor raw text", e.id));
                continue;
            }
        };
        let words: Vec<String> = words;
        if words.is_empty() {
            problems.push(format!("expression {}: empty token list", e.id));
            continue;
        }
        let referent = match e.referent_region_id {
            Some(rid) => match scenes[scene_index].region_index(rid) {
                Some(idx) => Some(idx),
                None => {
                    problems.push(format!(
                        "expression {}: referent region {} not in image {}",
                        e.id, rid, e.image_id
                    ));
                    continue;
                }
            },
            None => None,
        };
        let raw = e
            .raw
            .clone()
            .unwrap_or_else(|| words.join(" "));
        expr_index_by_id.insert(e.id, expressions.len());
        let len = words.len();
        expressions.push(ExpressionRecord {
            id: e.id,
            scene_index,
            raw,
            words,
            token_ids: Vec::new(),
            len,
            referent,
        });
    }

    let mut splits = BTreeMap::new();
    for (name, ids) in &file.splits {
        let mut idxs = Vec::with_capacity(ids.len());
        for id in ids {
            match expr_index_by_id.get(id) {
                Some(&i) => idxs.push(i),
                None => problems.push(format!("split {name:?}: unknown expression id {id}")),
            }
        }
        splits.insert(name.clone(), idxs);
    }

    if !problems.is_empty() {
        return Err(Error::Validation(problems.join("\n")));
    }
    let feature_dim = scenes
        .first()
        .map(|s| s.regions[0].x.len())
        .unwrap_or(0);
    if scenes
        .iter()
        .any(|s| s.regions.iter().any(|r| r.x.len() != feature_dim))
    {
        return Err(Error::Validation(
            "inconsistent region feature dimension across scenes".into(),
        ));
    }
    Ok(Dataset { scenes, expressions, splits, feature_dim, use_visdif })
}

fn compute_visdif(visuals: &[Tensor], img: &ImageRec, k: usize) -> Result<Tensor> {
    // Comparison set: other regions of the same category when categories
    // exist, otherwise all other regions.
    let my_cat = img.regions[k].category.as_deref();
    let others: Vec<&Tensor> = visuals
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .filter(|&(j, _)| match my_cat {
            Some(c) => img.regions[j].category.as_deref() == Some(c),
            None => true,
        })
        .map(|(_, v)| v)
        .collect();
    visdif_feature(&visuals[k], &others)
}

fn mean_feature(regions: &[Region]) -> Tensor {
    let dim = regions[0].x.len();
    let mut acc = vec![0.0; dim];
    for r in regions {
        for (a, v) in acc.iter_mut().zip(r.x.data()) {
            *a += v;
        }
    }
    let n = regions.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Tensor::raw(vec![dim], acc)
}

/// Canonical serialized form. With `feature_file` set, visual features are
/// expected in the companion matrix; otherwise they are inlined.
pub fn to_annotation_file(data: &Dataset, feature_file: Option<&str>) -> AnnotationFile {
    let inline = feature_file.is_none();
    let images = data
        .scenes
        .iter()
        .map(|s| ImageRec {
            id: s.id,
            width: s.width,
            height: s.height,
            regions: s
                .regions
                .iter()
                .map(|r| RegionRec {
                    id: r.id,
                    bbox: [r.bbox.x_tl, r.bbox.y_tl, r.bbox.x_br, r.bbox.y_br],
                    category: r.feature.category.clone(),
                    feature: inline.then(|| r.feature.visual.data().to_vec()),
                })
                .collect(),
        })
        .collect();
    let expressions = data
        .expressions
        .iter()
        .map(|e| ExprRec {
            id: e.id,
            image_id: data.scenes[e.scene_index].id,
            raw: Some(e.raw.clone()),
            tokens: Some(e.words.clone()),
            referent_region_id: e
                .referent
                .map(|idx| data.scenes[e.scene_index].regions[idx].id),
        })
        .collect();
    let splits = data
        .splits
        .iter()
        .map(|(name, idxs)| {
            (
                name.clone(),
                idxs.iter().map(|&i| data.expressions[i].id).collect(),
            )
        })
        .collect();
    AnnotationFile {
        images,
        expressions,
        splits,
        feature_file: feature_file.map(String::from),
    }
}

/// Writes the annotation JSON, and when `with_feature_file` is set, the
/// companion VCF1 matrix plus its sidecar index.
pub fn save_annotations(data: &Dataset, path: &Path, with_feature_file: bool) -> Result<()> {
    let feature_name = with_feature_file.then(|| {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "features".into());
        format!("{stem}.vcf")
    });
    let file = to_annotation_file(data, feature_name.as_deref());
    let text = serde_json::to_string_pretty(&file).expect("dataset serializes");
    std::fs::write(path, text)?;
    if let Some(name) = feature_name {
        let rows: Vec<(u64, Vec<f32>)> = data
            .scenes
            .iter()
            .flat_map(|s| {
                s.regions
                    .iter()
                    .map(|r| (r.id, r.feature.visual.data().iter().map(|&v| v as f32).collect()))
            })
            .collect();
        let fpath = path.parent().unwrap_or(Path::new(".")).join(name);
        write_feature_matrix(&fpath, &rows)?;
    }
    Ok(())
}

pub fn write_feature_matrix(path: &Path, rows: &[(u64, Vec<f32>)]) -> Result<()> {
    let dim = rows.first().map(|(_, r)| r.len()).unwrap_or(0);
    if rows.iter().any(|(_, r)| r.len() != dim) {
        return Err(Error::Shape("feature rows of unequal length".into()));
    }
    let mut buf = Vec::with_capacity(12 + rows.len() * dim * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for (_, row) in rows {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;

    let index = FeatureIndex { region_ids: rows.iter().map(|(id, _)| *id).collect() };
    let sidecar = sidecar_path(path);
    std::fs::write(&sidecar, serde_json::to_string(&index).expect("index serializes"))?;
    Ok(())
}

pub fn read_feature_matrix(path: &Path) -> Result<(Vec<u64>, usize, Vec<Vec<f32>>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 12 || &buf[0..4] != FEATURE_MAGIC {
        return Err(Error::Parse(format!(
            "{}: not a VCF1 feature matrix",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let want = 12 + count * dim * 4;
    if buf.len() != want {
        return Err(Error::Parse(format!(
            "{}: expected {want} bytes, found {}",
            path.display(),
            buf.len()
        )));
    }
    let mut rows = Vec::with_capacity(count);
    let mut off = 12;
    for _ in 0..count {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        rows.push(row);
    }

    let sidecar = sidecar_path(path);
    let index: FeatureIndex = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", sidecar.display())))?;
    if index.region_ids.len() != count {
        return Err(Error::Parse(format!(
            "{}: sidecar lists {} ids for {count} rows",
            sidecar.display(),
            index.region_ids.len()
        )));
    }
    Ok((index.region_ids, dim, rows))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".index.json");
    std::path::PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_file() -> AnnotationFile {
        AnnotationFile {
            images: vec![ImageRec {
                id: 1,
                width: 100.0,
                height: 100.0,
                regions: vec![RegionRec {
                    id: 10,
                    bbox: [0.0, 0.0, 50.0, 50.0],
                    category: Some("ball".into()),
                    feature: Some(vec![1.0, 0.0]),
                }],
            }],
            expressions: vec![ExprRec {
                id: 100,
                image_id: 1,
                raw: Some("the ball".into()),
                tokens: None,
                referent_region_id: Some(10),
            }],
            splits: BTreeMap::new(),
            feature_file: None,
        }
    }

    #[test]
    fn minimal_valid_file_loads() {
        let data = build_dataset(minimal_file(), None, true).unwrap();
        assert_eq!(data.scenes.len(), 1);
        assert_eq!(data.expressions.len(), 1);
        assert_eq!(data.expressions[0].referent, Some(0));
        // visual 2 + visdif 2 + spatial 5
        assert_eq!(data.feature_dim, 9);
    }

    #[test]
    fn empty_region_list_rejected() {
        let mut f = minimal_file();
        f.images[0].regions.clear();
        f.expressions.clear();
        let err = build_dataset(f, None, true).unwrap_err();
        assert!(err.to_string().contains("no regions"));
    }

    #[test]
    fn unknown_referent_names_the_record() {
        let mut f = minimal_file();
        f.expressions[0].referent_region_id = Some(999);
        let err = build_dataset(f, None, true).unwrap_err();
        assert!(err.to_string().contains("expression 100"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut f = minimal_file();
        let img = f.images[0].clone();
        f.images.push(img);
        let err = build_dataset(f, None, true).unwrap_err();
        assert!(err.to_string().contains("duplicate image id"));
    }

    #[test]
    fn feature_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.vcf");
        let rows = vec![(7u64, vec![1.5f32, -2.0]), (9u64, vec![0.25, 4.0])];
        write_feature_matrix(&path, &rows).unwrap();
        let (ids, dim, back) = read_feature_matrix(&path).unwrap();
        assert_eq!(ids, vec![7, 9]);
        assert_eq!(dim, 2);
        assert_eq!(back, vec![vec![1.5, -2.0], vec![0.25, 4.0]]);
    }

    #[test]
    fn load_serialize_load_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let text = serde_json::to_string(&minimal_file()).unwrap();
        std::fs::write(&path, text).unwrap();
        let first = load_annotations(&path).unwrap();
        let path2 = dir.path().join("b.json");
        save_annotations(&first, &path2, false).unwrap();
        let second = load_annotations(&path2).unwrap();
        assert_eq!(first.content_hash(), second.content_hash());
        assert_eq!(
            serde_json::to_string(&to_annotation_file(&first, None)).unwrap(),
            serde_json::to_string(&to_annotation_file(&second, None)).unwrap()
        );
    }
}
