//! Region feature construction: normalized spatial attributes and the
//! visual-difference vector against comparison regions.

use crate::compute::graph::EPS;
use crate::compute::tensor::Tensor;
use crate::data::bbox::BBox;
use crate::error::{Error, Result};

/// [x_tl/W, y_tl/H, x_br/W, y_br/H, (w·h)/(W·H)] — all in [0, 1] for an
/// in-bounds box.
pub fn spatial_feature(bbox: &BBox, width: f64, height: f64) -> Result<Tensor> {
    bbox.validate()?;
    if bbox.x_tl < 0.0 || bbox.y_tl < 0.0 || bbox.x_br > width || bbox.y_br > height {
        return Err(Error::Validation(format!(
            "box ({}, {}, {}, {}) outside image {width}x{height}",
            bbox.x_tl, bbox.y_tl, bbox.x_br, bbox.y_br
        )));
    }
    Tensor::vector(vec![
        bbox.x_tl / width,
        bbox.y_tl / height,
        bbox.x_br / width,
        bbox.y_br / height,
        (bbox.width() * bbox.height()) / (width * height),
    ])
}

/// Mean of unit difference vectors (v_i − v_j)/‖v_i − v_j‖ over the
/// comparison set. Near-identical pairs contribute zero; an empty
/// comparison set yields the zero vector.
pub fn visdif_feature(v_i: &Tensor, others: &[&Tensor]) -> Result<Tensor> {
    let dim = v_i.len();
    let mut acc = vec![0.0; dim];
    if others.is_empty() {
        return Ok(Tensor::raw(vec![dim], acc));
    }
    for v_j in others {
        if v_j.len() != dim {
            return Err(Error::Shape(format!(
                "visdif: dimension {} against {}",
                v_j.len(),
                dim
            )));
        }
        let mut diff = vec![0.0; dim];
        let mut sq = 0.0;
        for k in 0..dim {
            let d = v_i.data()[k] - v_j.data()[k];
            diff[k] = d;
            sq += d * d;
        }
        let norm = sq.sqrt();
        if norm >= EPS {
            for k in 0..dim {
                acc[k] += diff[k] / norm;
            }
        }
    }
    let n = others.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(Tensor::raw(vec![dim], acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_full_image_box() {
        let b = BBox::new(0.0, 0.0, 640.0, 480.0).unwrap();
        let s = spatial_feature(&b, 640.0, 480.0).unwrap();
        assert_eq!(s.data(), &[0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn spatial_quarter_box() {
        let b = BBox::new(0.0, 0.0, 50.0, 40.0).unwrap();
        let s = spatial_feature(&b, 100.0, 80.0).unwrap();
        assert_eq!(s.data(), &[0.0, 0.0, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn spatial_hand_arithmetic() {
        let b = BBox::new(10.0, 20.0, 30.0, 60.0).unwrap();
        let s = spatial_feature(&b, 100.0, 100.0).unwrap();
        let expect = [0.1, 0.2, 0.3, 0.6, 0.08];
        for (a, e) in s.data().iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn visdif_single_unit_difference() {
        let vi = Tensor::vector(vec![2.0, 3.0]).unwrap();
        let vj = Tensor::vector(vec![1.0, 3.0]).unwrap();
        let d = visdif_feature(&vi, &[&vj]).unwrap();
        assert!((d.data()[0] - 1.0).abs() < 1e-12);
        assert!(d.data()[1].abs() < 1e-12);
    }

    #[test]
    fn visdif_symmetric_cancellation() {
        let vi = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let a = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let b = Tensor::vector(vec![-1.0, 0.0]).unwrap();
        let d = visdif_feature(&vi, &[&a, &b]).unwrap();
        assert!(d.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn visdif_identical_pair_contributes_zero() {
        let vi = Tensor::vector(vec![0.5, 0.5]).unwrap();
        let vj = vi.clone();
        let d = visdif_feature(&vi, &[&vj]).unwrap();
        assert_eq!(d.data(), &[0.0, 0.0]);
    }

    #[test]
    fn visdif_norm_at_most_one() {
        let vi = Tensor::vector(vec![0.3, -0.7, 0.2]).unwrap();
        let o1 = Tensor::vector(vec![1.0, 0.0, 0.0]).unwrap();
        let o2 = Tensor::vector(vec![0.0, 1.0, 0.5]).unwrap();
        let d = visdif_feature(&vi, &[&o1, &o2]).unwrap();
        assert!(d.norm() <= 1.0 + 1e-12);
    }
}
