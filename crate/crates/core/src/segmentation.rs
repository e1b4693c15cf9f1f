//! Vertebra detection from mid-sagittal probability masks, level assignment and
//! detection scoring.
//!
//! Masks are single-slice volumes (`nz = 1`). Axis 0 runs anterior–posterior, axis 1
//! runs cranial → caudal, so a larger `y` is further down the spine.

use crate::anatomy::Vertebra;
use crate::volume::MaskVolume;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SegmentationError {
    #[error("mask must be a single slice, got dims {0:?}")]
    NotASlice([usize; 3]),
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("masks have different geometry")]
    GeometryMismatch,
    #[error("no sacral component to anchor level labels")]
    NoSacrum,
    #[error("S1 overlaps lumbar vertebra {0}")]
    OverlapS1Lumbar(Vertebra),
    #[error("label sets differ between detection and truth")]
    LabelMismatch,
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub threshold: f64,
    pub min_area_mm2: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            threshold: 0.5,
            min_area_mm2: 30.0,
        }
    }
}

/// Pixel grid of a sagittal slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
    pub origin: [f64; 2],
}

impl SliceGrid {
    fn of(mask: &MaskVolume) -> Self {
        let [nx, ny, _] = mask.dims();
        let s = mask.spacing();
        let o = mask.origin();
        SliceGrid {
            dims: [nx, ny],
            spacing: [s[0] as f64, s[1] as f64],
            origin: [o[0] as f64, o[1] as f64],
        }
    }

    pub fn center(&self, pixel: (usize, usize)) -> [f64; 2] {
        [
            self.origin[0] + pixel.0 as f64 * self.spacing[0],
            self.origin[1] + pixel.1 as f64 * self.spacing[1],
        ]
    }

    /// Pixel whose centre is nearest to `point`, if it lies on the grid.
    pub fn pixel_at(&self, point: [f64; 2]) -> Option<(usize, usize)> {
        let i = ((point[0] - self.origin[0]) / self.spacing[0]).round();
        let j = ((point[1] - self.origin[1]) / self.spacing[1]).round();
        if i < 0.0 || j < 0.0 || i >= self.dims[0] as f64 || j >= self.dims[1] as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }
}

/// An 8-connected set of above-threshold pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// `(i, j)` pixel indices, sorted.
    pub pixels: Vec<(usize, usize)>,
    /// Mean pixel-centre position in mm.
    pub centroid: [f64; 2],
    /// Inclusive pixel bounding box `[i_min, j_min, i_max, j_max]`.
    pub bbox: [usize; 4],
    pub area_mm2: f64,
}

impl Component {
    pub fn contains(&self, pixel: (usize, usize)) -> bool {
        self.pixels.binary_search(&pixel).is_ok()
    }

    pub fn overlaps(&self, other: &Component) -> bool {
        let [a0, b0, a1, b1] = self.bbox;
        let [c0, d0, c1, d1] = other.bbox;
        if a1 < c0 || c1 < a0 || b1 < d0 || d1 < b0 {
            return false;
        }
        let (small, large) = if self.pixels.len() <= other.pixels.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.pixels.iter().any(|&p| large.contains(p))
    }
}

/// Thresholds a single-slice mask and returns its 8-connected components at or above
/// `min_area_mm2`, sorted cranial → caudal by centroid.
pub fn binarize_and_components(
    mask: &MaskVolume,
    threshold: f64,
    min_area_mm2: f64,
) -> Result<Vec<Component>, SegmentationError> {
    let dims = mask.dims();
    if dims[2] != 1 {
        return Err(SegmentationError::NotASlice(dims));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SegmentationError::BadThreshold(threshold));
    }
    let grid = SliceGrid::of(mask);
    let [nx, ny] = grid.dims;
    let on: Vec<bool> = mask.data().iter().map(|&p| p as f64 >= threshold).collect();
    let mut seen = vec![false; on.len()];
    let pixel_area = grid.spacing[0] * grid.spacing[1];
    let mut out = Vec::new();

    for start in 0..on.len() {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (i, j) = (idx % nx, idx / nx);
            pixels.push((i, j));
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                        continue;
                    }
                    let n = ni as usize + nx * nj as usize;
                    if on[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        let area = pixels.len() as f64 * pixel_area;
        if area < min_area_mm2 {
            continue;
        }
        out.push(make_component(pixels, &grid));
    }
    out.sort_by(|a, b| {
        a.centroid[1]
            .total_cmp(&b.centroid[1])
            .then(a.centroid[0].total_cmp(&b.centroid[0]))
    });
    Ok(out)
}

fn make_component(mut pixels: Vec<(usize, usize)>, grid: &SliceGrid) -> Component {
    pixels.sort_unstable();
    let n = pixels.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut bbox = [usize::MAX, usize::MAX, 0, 0];
    for &(i, j) in &pixels {
        let c = grid.center((i, j));
        sx += c[0];
        sy += c[1];
        bbox[0] = bbox[0].min(i);
        bbox[1] = bbox[1].min(j);
        bbox[2] = bbox[2].max(i);
        bbox[3] = bbox[3].max(j);
    }
    Component {
        area_mm2: n * grid.spacing[0] * grid.spacing[1],
        pixels,
        centroid: [sx / n, sy / n],
        bbox,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVertebra {
    pub label: Vertebra,
    pub component: Component,
}

impl LabeledVertebra {
    pub fn centroid(&self) -> [f64; 2] {
        self.component.centroid
    }
}

/// Labeled vertebrae from one mid-sagittal slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraSegmentation {
    /// Cranial → caudal.
    pub vertebrae: Vec<LabeledVertebra>,
    /// Detected components that could not be given a label.
    pub rejected: Vec<Component>,
    pub grid: SliceGrid,
    pub diagnostics: Vec<String>,
}

impl VertebraSegmentation {
    pub fn get(&self, label: Vertebra) -> Option<&LabeledVertebra> {
        self.vertebrae.iter().find(|v| v.label == label)
    }

    pub fn centroids(&self) -> Vec<(Vertebra, [f64; 2])> {
        self.vertebrae
            .iter()
            .map(|v| (v.label, v.centroid()))
            .collect()
    }

    /// Every detected area, labeled or not.
    pub fn detected(&self) -> impl Iterator<Item = &Component> {
        self.vertebrae
            .iter()
            .map(|v| &v.component)
            .chain(self.rejected.iter())
    }

    /// First lumbar vertebra sharing pixels with S1.
    pub fn sacral_overlap(&self) -> Option<Vertebra> {
        let s1 = self.get(Vertebra::S1)?;
        self.vertebrae
            .iter()
            .filter(|v| !v.label.is_sacral())
            .find(|v| v.component.overlaps(&s1.component))
            .map(|v| v.label)
    }
}

/// Labels components by anchoring the most caudal sacral component as S1 and counting
/// lumbar components upward (L5, L4, … T12). Overlap between S1 and a lumbar body is
/// tolerated here; [`assign_levels`] rejects it.
pub fn label_components(
    lumbar: Vec<Component>,
    sacral: Vec<Component>,
    grid: SliceGrid,
) -> Result<VertebraSegmentation, SegmentationError> {
    let mut diagnostics = Vec::new();
    let mut rejected = Vec::new();

    let mut sacral = sacral;
    sacral.sort_by(|a, b| a.centroid[1].total_cmp(&b.centroid[1]));
    let s1 = sacral.pop().ok_or(SegmentationError::NoSacrum)?;
    for extra in sacral {
        diagnostics.push(format!(
            "extra sacral component at ({:.1}, {:.1}) mm ignored",
            extra.centroid[0], extra.centroid[1]
        ));
        rejected.push(extra);
    }

    let (mut above, below): (Vec<Component>, Vec<Component>) = lumbar
        .into_iter()
        .partition(|c| c.centroid[1] < s1.centroid[1]);
    for c in below {
        diagnostics.push(format!(
            "lumbar component at ({:.1}, {:.1}) mm lies below S1",
            c.centroid[0], c.centroid[1]
        ));
        rejected.push(c);
    }
    // Caudal first.
    above.sort_by(|a, b| b.centroid[1].total_cmp(&a.centroid[1]));

    let mut vertebrae = vec![LabeledVertebra {
        label: Vertebra::S1,
        component: s1,
    }];
    for (n, c) in above.into_iter().enumerate() {
        match Vertebra::LUMBAR.len().checked_sub(n + 1) {
            Some(idx) => vertebrae.push(LabeledVertebra {
                label: Vertebra::LUMBAR[idx],
                component: c,
            }),
            None => {
                diagnostics.push(format!(
                    "surplus component above T12 at ({:.1}, {:.1}) mm",
                    c.centroid[0], c.centroid[1]
                ));
                rejected.push(c);
            }
        }
    }
    vertebrae.reverse();
    Ok(VertebraSegmentation {
        vertebrae,
        rejected,
        grid,
        diagnostics,
    })
}

/// Combines lumbar and sacral detections into a labeled segmentation.
pub fn assign_levels(
    lumbar: Vec<Component>,
    sacral: Vec<Component>,
    grid: SliceGrid,
) -> Result<VertebraSegmentation, SegmentationError> {
    let seg = label_components(lumbar, sacral, grid)?;
    if let Some(v) = seg.sacral_overlap() {
        return Err(SegmentationError::OverlapS1Lumbar(v));
    }
    Ok(seg)
}

/// Runs thresholding and component extraction on both masks and labels the result
/// without rejecting S1 overlap.
pub fn segment_masks(
    lumbar: &MaskVolume,
    sacral: &MaskVolume,
    config: &SegmentationConfig,
) -> Result<VertebraSegmentation, SegmentationError> {
    if !lumbar.same_geometry(sacral) {
        return Err(SegmentationError::GeometryMismatch);
    }
    let l = binarize_and_components(lumbar, config.threshold, config.min_area_mm2)?;
    let s = binarize_and_components(sacral, config.threshold, config.min_area_mm2)?;
    label_components(l, s, SliceGrid::of(lumbar))
}

/// Soft Dice overlap `(2 Σ p g + ε) / (Σ p + Σ g + ε)`.
pub fn dice_coefficient(
    pred: &MaskVolume,
    truth: &MaskVolume,
    epsilon: f64,
) -> Result<f64, SegmentationError> {
    if !pred.same_geometry(truth) {
        return Err(SegmentationError::GeometryMismatch);
    }
    dice_of_slices(pred.data(), truth.data(), epsilon)
}

pub fn dice_of_slices(pred: &[f32], truth: &[f32], epsilon: f64) -> Result<f64, SegmentationError> {
    if pred.len() != truth.len() {
        return Err(SegmentationError::GeometryMismatch);
    }
    if !(epsilon > 0.0) {
        return Err(SegmentationError::BadEpsilon(epsilon));
    }
    let (mut inter, mut sp, mut sg) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &g) in pred.iter().zip(truth) {
        let (p, g) = (p as f64, g as f64);
        inter += p * g;
        sp += p;
        sg += g;
    }
    Ok((2.0 * inter + epsilon) / (sp + sg + epsilon))
}

/// The segmentation loss: negative Dice.
pub fn dice_loss(
    pred: &MaskVolume,
    truth: &MaskVolume,
    epsilon: f64,
) -> Result<f64, SegmentationError> {
    dice_coefficient(pred, truth, epsilon).map(|d| -d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidErrors {
    pub per_vertebra: Vec<(Vertebra, f64)>,
    pub mean: f64,
    pub std: f64,
}

/// Euclidean distance between detected and true centroids, per label.
pub fn centroid_error(
    seg: &VertebraSegmentation,
    truth: &[(Vertebra, [f64; 2])],
) -> Result<CentroidErrors, SegmentationError> {
    let mut detected: Vec<Vertebra> = seg.vertebrae.iter().map(|v| v.label).collect();
    let mut expected: Vec<Vertebra> = truth.iter().map(|t| t.0).collect();
    detected.sort();
    expected.sort();
    if detected != expected {
        return Err(SegmentationError::LabelMismatch);
    }
    let per_vertebra: Vec<(Vertebra, f64)> = seg
        .vertebrae
        .iter()
        .map(|v| {
            let t = truth
                .iter()
                .find(|t| t.0 == v.label)
                .expect("labels checked")
                .1;
            let c = v.centroid();
            (v.label, (c[0] - t[0]).hypot(c[1] - t[1]))
        })
        .collect();
    let n = per_vertebra.len().max(1) as f64;
    let mean = per_vertebra.iter().map(|e| e.1).sum::<f64>() / n;
    let std = (per_vertebra
        .iter()
        .map(|e| (e.1 - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(CentroidErrors {
        per_vertebra,
        mean,
        std,
    })
}

/// The detection success criterion that failed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// A detected area does not contain exactly one true centroid.
    CentroidContainment,
    /// Detected and true vertebra counts differ.
    CountMismatch,
    /// The S1 detection overlaps a lumbar detection.
    SacralOverlap,
}

impl FailureReason {
    pub fn criterion(self) -> u8 {
        match self {
            FailureReason::CentroidContainment => 1,
            FailureReason::CountMismatch => 2,
            FailureReason::SacralOverlap => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FailureReason::CentroidContainment => "centroid_containment",
            FailureReason::CountMismatch => "count_mismatch",
            FailureReason::SacralOverlap => "sacral_overlap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    /// Dice of the lumbar and sacral detectors against their truth masks, when given.
    pub dice_lumbar: Option<f64>,
    pub dice_sacral: Option<f64>,
    /// Mean centroid distance in mm, when detected and true labels match.
    pub centroid_error_mm: Option<f64>,
    pub centroid_errors: Option<CentroidErrors>,
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
}

/// Applies the three detection success criteria in order.
pub fn success_criteria(
    seg: &VertebraSegmentation,
    truth: &[(Vertebra, [f64; 2])],
) -> SegmentationScore {
    let truth_pixels: Vec<Option<(usize, usize)>> =
        truth.iter().map(|t| seg.grid.pixel_at(t.1)).collect();
    let containment_ok = seg.detected().all(|c| {
        truth_pixels
            .iter()
            .filter(|p| p.is_some_and(|p| c.contains(p)))
            .count()
            == 1
    });
    let count_ok = seg.detected().count() == truth.len();
    let overlap_ok = seg.sacral_overlap().is_none();

    let failure_reason = if !containment_ok {
        Some(FailureReason::CentroidContainment)
    } else if !count_ok {
        Some(FailureReason::CountMismatch)
    } else if !overlap_ok {
        Some(FailureReason::SacralOverlap)
    } else {
        None
    };
    let centroid_errors = centroid_error(seg, truth).ok();
    SegmentationScore {
        dice_lumbar: None,
        dice_sacral: None,
        centroid_error_mm: centroid_errors.as_ref().map(|e| e.mean),
        centroid_errors,
        success: failure_reason.is_none(),
        failure_reason,
    }
}

/// [`success_criteria`] plus detector Dice against truth masks.
pub fn score_segmentation(
    seg: &VertebraSegmentation,
    truth: &[(Vertebra, [f64; 2])],
    predicted: (&MaskVolume, &MaskVolume),
    truth_masks: (&MaskVolume, &MaskVolume),
    epsilon: f64,
) -> Result<SegmentationScore, SegmentationError> {
    let mut score = success_criteria(seg, truth);
    score.dice_lumbar = Some(dice_coefficient(predicted.0, truth_masks.0, epsilon)?);
    score.dice_sacral = Some(dice_coefficient(predicted.1, truth_masks.1, epsilon)?);
    Ok(score)
}
