//! Evaluation measures: mean class accuracy, overall accuracy, per-shape
//! part IoU and normal-estimation errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Upper edges of the angular-error histogram bins, in degrees. A final
/// open bin collects everything at or above 30°.
pub const ANGLE_BIN_EDGES: [f64; 6] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    Ok(())
}

/// Correct / total.
pub fn overall_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Per-class accuracy averaged over the classes that occur in `truth`.
pub fn mean_class_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (p, t) in pred.iter().zip(truth) {
        let e = per_class.entry(*t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    let sum: f64 = per_class.values().map(|&(c, n)| c as f64 / n as f64).sum();
    Ok(sum / per_class.len() as f64)
}

/// Number of distinct classes in `truth`, the divisor of [`mean_class_accuracy`].
pub fn classes_present(truth: &[usize]) -> usize {
    let mut seen: Vec<usize> = truth.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Mean over `parts` of per-part intersection over union. A part absent from
/// both prediction and truth scores 1.
pub fn shape_iou(pred: &[usize], truth: &[usize], parts: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    if parts.is_empty() {
        return Err(Error::invalid("shape has no parts"));
    }
    if let Some(bad) = pred.iter().chain(truth).find(|l| !parts.contains(l)) {
        return Err(Error::invalid(format!("part label {bad} not in {parts:?}")));
    }
    let total: f64 = parts
        .iter()
        .map(|&c| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&p, &t) in pred.iter().zip(truth) {
                let (a, b) = (p == c, t == c);
                inter += usize::from(a && b);
                union += usize::from(a || b);
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .sum();
    Ok(total / parts.len() as f64)
}

pub fn mean_iou(shape_ious: &[f64]) -> Result<f64> {
    if shape_ious.is_empty() {
        return Err(Error::invalid("no shapes to average"));
    }
    Ok(shape_ious.iter().sum::<f64>() / shape_ious.len() as f64)
}

/// Aggregate normal-estimation errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalErrors {
    /// Mean of `n̂ · n`.
    pub cosine_similarity: f64,
    /// `1 - cosine_similarity`, in `[0, 2]` when oriented.
    pub cosine_distance: f64,
    pub rms_angle_deg: f64,
    pub count: usize,
}

fn unit_or_warn(v: Vec3, what: &str) -> Result<Vec3> {
    let n = vec3::norm(v);
    if (n - 1.0).abs() <= 1e-6 {
        return Ok(v);
    }
    log::warn!("renormalizing {what} normal of length {n}");
    vec3::normalize(v).ok_or_else(|| Error::invalid(format!("zero-length {what} normal")))
}

/// Clamped cosine between each unit pair; `|cos|` when `oriented` is false.
fn cosines(pred: &[Vec3], gt: &[Vec3], mask: Option<&[bool]>, oriented: bool) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "{} predicted normals for {} references",
            pred.len(),
            gt.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(Error::invalid("mask length differs from normal count"));
        }
    }
    let mut out = Vec::with_capacity(pred.len());
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let c = vec3::dot(unit_or_warn(*p, "predicted")?, unit_or_warn(*g, "reference")?);
        let c = c.clamp(-1.0, 1.0);
        out.push(if oriented { c } else { c.abs() });
    }
    Ok(out)
}

/// Per-point angles in degrees between predicted and reference normals,
/// for unmasked points only.
pub fn normal_angles_deg(
    pred: &[Vec3],
    gt: &[Vec3],
    mask: Option<&[bool]>,
    oriented: bool,
) -> Result<Vec<f64>> {
    Ok(cosines(pred, gt, mask, oriented)?
        .into_iter()
        .map(|c| c.acos().to_degrees())
        .collect())
}

pub fn normal_errors(
    pred: &[Vec3],
    gt: &[Vec3],
    mask: Option<&[bool]>,
    oriented: bool,
) -> Result<NormalErrors> {
    let cos = cosines(pred, gt, mask, oriented)?;
    if cos.is_empty() {
        return Err(Error::invalid("every normal is masked out"));
    }
    let m = cos.len() as f64;
    let similarity = cos.iter().sum::<f64>() / m;
    let mean_sq = cos.iter().map(|c| c.acos().to_degrees().powi(2)).sum::<f64>() / m;
    Ok(NormalErrors {
        cosine_similarity: similarity,
        cosine_distance: 1.0 - similarity,
        rms_angle_deg: mean_sq.sqrt(),
        count: cos.len(),
    })
}

/// Counts of angles per [`ANGLE_BIN_EDGES`] bin plus the open `>= 30°` bin.
pub fn angle_histogram(angles_deg: &[f64]) -> [usize; 7] {
    let mut bins = [0usize; 7];
    for a in angles_deg {
        let b = ANGLE_BIN_EDGES.partition_point(|&e| e <= *a);
        bins[b] += 1;
    }
    bins
}

/// Everything an evaluation can report; fields that do not apply are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_class_accuracy: Option<f64>,
    /// Classes present in the reference labels, the divisor of mA.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes_counted: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_shape_iou: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal_cosine_similarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal_cosine_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal_rms_angle_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal_unoriented_cosine_distance: Option<f64>,
}

pub const REPORT_CSV_HEADER: &str = "mean_class_accuracy,classes_counted,overall_accuracy,mean_iou,\
normal_cosine_similarity,normal_cosine_distance,normal_rms_angle_deg,normal_unoriented_cosine_distance";

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn new() -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            ..Self::default()
        }
    }

    pub fn set_classification(&mut self, pred: &[usize], truth: &[usize]) -> Result<()> {
        self.mean_class_accuracy = Some(mean_class_accuracy(pred, truth)?);
        self.classes_counted = Some(classes_present(truth));
        self.overall_accuracy = Some(overall_accuracy(pred, truth)?);
        Ok(())
    }

    /// Per-shape IoU, mIoU and point-level OA. Each shape is
    /// `(pred, truth, category_parts)`.
    pub fn set_segmentation(&mut self, shapes: &[(&[usize], &[usize], &[usize])]) -> Result<()> {
        let ious = shapes
            .iter()
            .map(|(p, t, parts)| shape_iou(p, t, parts))
            .collect::<Result<Vec<_>>>()?;
        self.mean_iou = Some(mean_iou(&ious)?);
        self.per_shape_iou = Some(ious);
        let pred: Vec<usize> = shapes.iter().flat_map(|s| s.0.iter().copied()).collect();
        let truth: Vec<usize> = shapes.iter().flat_map(|s| s.1.iter().copied()).collect();
        self.overall_accuracy = Some(overall_accuracy(&pred, &truth)?);
        Ok(())
    }

    pub fn set_normals(&mut self, pred: &[Vec3], gt: &[Vec3], mask: Option<&[bool]>) -> Result<()> {
        let oriented = normal_errors(pred, gt, mask, true)?;
        let unoriented = normal_errors(pred, gt, mask, false)?;
        self.normal_cosine_similarity = Some(oriented.cosine_similarity);
        self.normal_cosine_distance = Some(oriented.cosine_distance);
        self.normal_rms_angle_deg = Some(oriented.rms_angle_deg);
        self.normal_unoriented_cosine_distance = Some(unoriented.cosine_distance);
        Ok(())
    }

    /// One row matching [`REPORT_CSV_HEADER`]; absent fields are empty cells.
    pub fn csv_row(&self) -> String {
        [
            cell(self.mean_class_accuracy),
            cell(self.classes_counted),
            cell(self.overall_accuracy),
            cell(self.mean_iou),
            cell(self.normal_cosine_similarity),
            cell(self.normal_cosine_distance),
            cell(self.normal_rms_angle_deg),
            cell(self.normal_unoriented_cosine_distance),
        ]
        .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(overall_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(overall_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        let (pred, truth) = ([0, 0, 0], [0, 0, 1]);
        assert_eq!(mean_class_accuracy(&pred, &truth).unwrap(), 0.5);
        assert!((overall_accuracy(&pred, &truth).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(classes_present(&truth), 2);
        assert!(overall_accuracy(&[], &[]).is_err());
        assert!(mean_class_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn iou_examples() {
        let pred = [0, 0, 1, 1, 1, 0];
        let truth = [0, 0, 0, 1, 1, 1];
        assert_eq!(shape_iou(&pred, &truth, &[0, 1]).unwrap(), 0.5);
        assert_eq!(shape_iou(&truth, &truth, &[0, 1]).unwrap(), 1.0);
        // part 2 appears nowhere and scores 1
        assert!((shape_iou(&pred, &truth, &[0, 1, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // truth has part 1 but it is never predicted
        assert_eq!(shape_iou(&[0, 0], &[0, 1], &[0, 1]).unwrap(), 0.25);
        assert!(shape_iou(&[5], &[0], &[0, 1]).is_err());
        assert_eq!(mean_iou(&[0.5, 1.0]).unwrap(), 0.75);
    }

    #[test]
    fn normal_examples() {
        let gt = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let same = normal_errors(&gt, &gt, None, true).unwrap();
        assert_eq!((same.cosine_similarity, same.cosine_distance, same.rms_angle_deg), (1.0, 0.0, 0.0));
        let flipped = gt.map(|n| vec3::scale(n, -1.0));
        assert_eq!(normal_errors(&flipped, &gt, None, true).unwrap().cosine_distance, 2.0);
        assert_eq!(normal_errors(&flipped, &gt, None, false).unwrap().cosine_distance, 0.0);
        assert!(normal_errors(&gt, &gt, Some(&[false, false]), true).is_err());
        let perp = [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let e = normal_errors(&perp, &gt, Some(&[true, false]), true).unwrap();
        assert_eq!(e.count, 1);
        assert!((e.rms_angle_deg - 90.0).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_prediction_is_rescaled() {
        let e = normal_errors(&[[0.0, 0.0, 3.0]], &[[0.0, 0.0, 1.0]], None, true).unwrap();
        assert_eq!(e.cosine_similarity, 1.0);
        assert!(normal_errors(&[[0.0; 3]], &[[0.0, 0.0, 1.0]], None, true).is_err());
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(angle_histogram(&[0.0, 4.9, 5.0, 29.9, 30.0, 170.0]), [2, 1, 0, 0, 0, 1, 2]);
    }

    #[test]
    fn report_serialization_skips_absent_fields() {
        let mut r = MetricsReport::new();
        r.set_classification(&[0, 1], &[0, 0]).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("mean_iou").is_none());
        assert_eq!(json["classes_counted"], 1);
        assert_eq!(r.csv_row(), "0.5,1,0.5,,,,,");
        assert_eq!(REPORT_CSV_HEADER.split(',').count(), r.csv_row().split(',').count());
    }
}
