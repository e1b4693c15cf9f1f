//! Spine-curve fitting and disc-plane frames.
//!
//! The curve is a polynomial `x = f(y)` in sagittal-plane millimetres, `y` running
//! cranial → caudal. Discs sit midway between consecutive vertebra centroids and their
//! planes are perpendicular to the curve tangent there.

use crate::anatomy::DiscLevel;
use crate::segmentation::VertebraSegmentation;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CurveError {
    #[error("need at least {needed} centroids for degree {degree}, got {got}")]
    InsufficientPoints {
        degree: usize,
        needed: usize,
        got: usize,
    },
    #[error("polynomial degree must be at least 2, got {0}")]
    DegreeTooLow(usize),
    #[error("centroids repeat a y coordinate ({0} mm)")]
    DegenerateFit(f64),
    #[error("no pair of adjacent labeled vertebrae")]
    MissingAdjacentVertebra,
    #[error("non-finite centroid coordinate")]
    NonFinite,
}

pub const DEFAULT_DEGREE: usize = 3;

/// Least-squares polynomial `x = Σ cₖ yᵏ` through vertebra centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineCurve {
    /// Monomial coefficients, constant term first.
    pub coefficients: Vec<f64>,
    pub domain: [f64; 2],
    /// Root-mean-square horizontal residual in mm.
    pub fit_residual: f64,
}

impl SpineCurve {
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * y + c)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * y + k as f64 * c)
    }

    /// Unit tangent `(f'(y), 1) / ‖·‖`, pointing caudally.
    pub fn tangent(&self, y: f64) -> [f64; 2] {
        let d = self.derivative(y);
        let n = d.hypot(1.0);
        [d / n, 1.0 / n]
    }
}

/// Fits `x = f(y)` of the given degree through `centroids` (`(x, y)` in mm).
pub fn fit_spine_curve(centroids: &[[f64; 2]], degree: usize) -> Result<SpineCurve, CurveError> {
    if degree < 2 {
        return Err(CurveError::DegreeTooLow(degree));
    }
    if centroids.len() < degree + 1 {
        return Err(CurveError::InsufficientPoints {
            degree,
            needed: degree + 1,
            got: centroids.len(),
        });
    }
    if centroids.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CurveError::NonFinite);
    }
    let mut ys: Vec<f64> = centroids.iter().map(|c| c[1]).collect();
    ys.sort_by(f64::total_cmp);
    if let Some(w) = ys.windows(2).find(|w| w[0] == w[1]) {
        return Err(CurveError::DegenerateFit(w[0]));
    }

    // Solve in a centred, scaled variable t = (y - m) / s for conditioning, then expand
    // back to monomials in y.
    let (lo, hi) = (ys[0], ys[ys.len() - 1]);
    let m = 0.5 * (lo + hi);
    let s = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let n = centroids.len();
    let vander = DMatrix::from_fn(n, degree + 1, |r, c| {
        ((centroids[r][1] - m) / s).powi(c as i32)
    });
    let rhs = DVector::from_iterator(n, centroids.iter().map(|c| c[0]));
    let scaled = vander
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|_| CurveError::DegenerateFit(m))?;

    // Σ aₖ ((y - m)/s)ᵏ = Σ aₖ s⁻ᵏ Σᵢ C(k,i) yⁱ (-m)ᵏ⁻ⁱ
    let mut coefficients = vec![0.0; degree + 1];
    for (k, a) in scaled.iter().enumerate() {
        let scale = a / s.powi(k as i32);
        let mut binom = 1.0;
        for i in 0..=k {
            coefficients[i] += scale * binom * (-m).powi((k - i) as i32);
            binom = binom * (k - i) as f64 / (i + 1) as f64;
        }
    }

    let mut curve = SpineCurve {
        coefficients,
        domain: [lo, hi],
        fit_residual: 0.0,
    };
    let sq: f64 = centroids
        .iter()
        .map(|c| (curve.eval(c[1]) - c[0]).powi(2))
        .sum();
    curve.fit_residual = (sq / n as f64).sqrt();
    Ok(curve)
}

/// A disc position and its in-plane orientation on the sagittal slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscLocation {
    pub level: DiscLevel,
    pub disc_point: [f64; 2],
    /// Unit curve tangent at the disc, pointing caudally.
    pub tangent: [f64; 2],
    /// Unit direction of the disc plane within the sagittal slice, ⟂ `tangent`.
    pub plane_normal: [f64; 2],
}

impl DiscLocation {
    fn new(level: DiscLevel, disc_point: [f64; 2], tangent: [f64; 2]) -> Self {
        DiscLocation {
            level,
            disc_point,
            tangent,
            plane_normal: [tangent[1], -tangent[0]],
        }
    }

    /// Tilt of the disc plane from horizontal, `atan f'(y)`, in radians.
    pub fn tilt(&self) -> f64 {
        self.tangent[0].atan2(self.tangent[1])
    }
}

/// Places a disc between every pair of adjacent labeled vertebrae.
pub fn locate_discs(
    seg: &VertebraSegmentation,
    curve: &SpineCurve,
) -> Result<Vec<DiscLocation>, CurveError> {
    let discs: Vec<DiscLocation> = DiscLevel::ALL
        .into_iter()
        .filter_map(|level| {
            let (upper, lower) = level.flanking();
            let a = seg.get(upper)?.centroid();
            let b = seg.get(lower)?.centroid();
            Some(disc_between(level, a, b, curve))
        })
        .collect();
    if discs.is_empty() {
        return Err(CurveError::MissingAdjacentVertebra);
    }
    Ok(discs)
}

pub fn disc_between(
    level: DiscLevel,
    a: [f64; 2],
    b: [f64; 2],
    curve: &SpineCurve,
) -> DiscLocation {
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    DiscLocation::new(level, mid, curve.tangent(mid[1]))
}

/// Orthonormal 3D basis with an origin, in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame3 {
    pub origin: [f64; 3],
    /// Unit axes, one per output volume axis.
    pub axes: [[f64; 3]; 3],
}

impl Frame3 {
    pub fn to_world(&self, local: [f64; 3]) -> [f64; 3] {
        let mut p = self.origin;
        for (a, &l) in self.axes.iter().zip(&local) {
            for d in 0..3 {
                p[d] += l * a[d];
            }
        }
        p
    }

    /// Maximum deviation of the Gram matrix from the identity.
    pub fn gram_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|d| self.axes[i][d] * self.axes[j][d]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let [a, b, c] = self.axes;
        dot(cross(a, b), c)
    }

    pub fn identity(origin: [f64; 3]) -> Self {
        Frame3 {
            origin,
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

/// Disc location with the 3D frames used to resample its axial and sagittal volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscFrame {
    pub location: DiscLocation,
    /// Axes `(in-plane AP, left–right, tangent)`; the third axis indexes slices.
    pub axial: Frame3,
    /// Axes `(plane_normal, tangent, left–right)`.
    pub sagittal: Frame3,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    v.map(|c| c / n)
}

/// Lifts a disc location into 3D. `lr_axis` is the left–right direction (normally the
/// source volume's third axis) and `lr_center` the mid-sagittal coordinate along it.
///
/// Both frames are right-handed; the axial frame's first axis is `lr_axis × tangent`,
/// which is `plane_normal` up to sign.
pub fn build_frames(location: &DiscLocation, lr_axis: [f64; 3], lr_center: f64) -> DiscFrame {
    let lr = normalize(lr_axis);
    let t = [location.tangent[0], location.tangent[1], 0.0];
    let n = [location.plane_normal[0], location.plane_normal[1], 0.0];
    // Keep the in-plane vectors exactly orthogonal to the left-right axis.
    let t = normalize([0, 1, 2].map(|d| t[d] - dot(t, lr) * lr[d]));
    let n = normalize([0, 1, 2].map(|d| n[d] - dot(n, lr) * lr[d] - dot(n, t) * t[d]));
    let mut origin = [location.disc_point[0], location.disc_point[1], 0.0];
    for d in 0..3 {
        origin[d] += lr_center * lr[d];
    }
    let axial_first = cross(lr, t);
    DiscFrame {
        location: *location,
        axial: Frame3 {
            origin,
            axes: [axial_first, lr, t],
        },
        sagittal: Frame3 {
            origin,
            axes: [n, t, cross(n, t)],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::Vertebra;
    use crate::segmentation::{Component, LabeledVertebra, SliceGrid};
    use proptest::prelude::*;

    #[test]
    fn straight_line() {
        let pts: Vec<[f64; 2]> = (0..5).map(|i| [5.0, 10.0 * i as f64]).collect();
        let c = fit_spine_curve(&pts, 2).unwrap();
        assert!((c.coefficients[0] - 5.0).abs() < 1e-12);
        assert!(c.coefficients[1].abs() < 1e-12 && c.coefficients[2].abs() < 1e-12);
        assert!(c.fit_residual < 1e-12);
    }

    #[test]
    fn recovers_exact_quadratic() {
        let f = |y: f64| 0.01 * y * y - 0.5 * y + 3.0;
        let pts: Vec<[f64; 2]> = (0..7)
            .map(|i| {
                let y = -20.0 + 37.0 * i as f64;
                [f(y), y]
            })
            .collect();
        let c = fit_spine_curve(&pts, 2).unwrap();
        for (got, want) in c.coefficients.iter().zip([3.0, -0.5, 0.01]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(c.fit_residual < 1e-9);
        assert_eq!(c.domain, [-20.0, 202.0]);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_spine_curve(&[[0.0, 0.0], [1.0, 1.0]], 2),
            Err(CurveError::InsufficientPoints {
                needed: 3,
                got: 2,
                ..
            })
        ));
        assert!(matches!(
            fit_spine_curve(&[[0.0, 0.0], [1.0, 1.0], [2.0, 1.0]], 2),
            Err(CurveError::DegenerateFit(_))
        ));
        assert_eq!(
            fit_spine_curve(&[[0.0, 0.0]; 4], 1),
            Err(CurveError::DegreeTooLow(1))
        );
    }

    fn seg_from(centroids: &[(Vertebra, [f64; 2])]) -> VertebraSegmentation {
        VertebraSegmentation {
            vertebrae: centroids
                .iter()
                .map(|&(label, centroid)| LabeledVertebra {
                    label,
                    component: Component {
                        pixels: vec![],
                        centroid,
                        bbox: [0; 4],
                        area_mm2: 0.0,
                    },
                })
                .collect(),
            rejected: vec![],
            grid: SliceGrid {
                dims: [1, 1],
                spacing: [1.0, 1.0],
                origin: [0.0, 0.0],
            },
            diagnostics: vec![],
        }
    }

    #[test]
    fn midpoint_disc() {
        let curve = fit_spine_curve(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 2).unwrap();
        let seg = seg_from(&[(Vertebra::L4, [0.0, 0.0]), (Vertebra::L5, [2.0, 2.0])]);
        let discs = locate_discs(&seg, &curve).unwrap();
        assert_eq!(discs.len(), 1);
        assert_eq!(discs[0].level, DiscLevel::L4L5);
        assert_eq!(discs[0].disc_point, [1.0, 1.0]);
    }

    #[test]
    fn vertical_spine_gives_horizontal_planes() {
        let pts: Vec<(Vertebra, [f64; 2])> = Vertebra::ALL
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, [40.0, 30.0 * i as f64]))
            .collect();
        let curve = fit_spine_curve(&pts.iter().map(|p| p.1).collect::<Vec<_>>(), 3).unwrap();
        let discs = locate_discs(&seg_from(&pts), &curve).unwrap();
        assert_eq!(discs.len(), 6);
        for d in &discs {
            assert!((d.tangent[0]).abs() < 1e-12 && (d.tangent[1] - 1.0).abs() < 1e-12);
            assert!((d.plane_normal[0] - 1.0).abs() < 1e-12 && d.plane_normal[1].abs() < 1e-12);
        }
    }

    #[test]
    fn missing_neighbours() {
        let curve = fit_spine_curve(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 2).unwrap();
        let seg = seg_from(&[(Vertebra::L1, [0.0, 0.0]), (Vertebra::L3, [2.0, 2.0])]);
        assert_eq!(
            locate_discs(&seg, &curve),
            Err(CurveError::MissingAdjacentVertebra)
        );
    }

    #[test]
    fn quadratic_tilt_matches_analytic_slope() {
        let f = |y: f64| 0.002 * y * y - 0.3 * y + 50.0;
        let df = |y: f64| 0.004 * y - 0.3;
        let pts: Vec<(Vertebra, [f64; 2])> = Vertebra::ALL
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let y = 20.0 + 32.0 * i as f64;
                (v, [f(y), y])
            })
            .collect();
        let curve = fit_spine_curve(&pts.iter().map(|p| p.1).collect::<Vec<_>>(), 3).unwrap();
        for d in locate_discs(&seg_from(&pts), &curve).unwrap() {
            let expected = df(d.disc_point[1]).atan();
            assert!((d.tilt() - expected).abs() < 1e-6);
        }
    }

    fn location(theta: f64) -> DiscLocation {
        DiscLocation::new(DiscLevel::L3L4, [10.0, 20.0], [theta.sin(), theta.cos()])
    }

    #[test]
    fn vertical_frames_are_signed_axis_permutations() {
        let f = build_frames(&location(0.0), [0.0, 0.0, 1.0], 7.0);
        assert_eq!(f.axial.origin, [10.0, 20.0, 7.0]);
        assert_eq!(
            f.axial.axes,
            [[-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
        );
        assert_eq!(
            f.sagittal.axes,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        );
    }

    #[test]
    fn tilted_frames_are_rotations_about_left_right() {
        let theta = 10f64.to_radians();
        let upright = build_frames(&location(0.0), [0.0, 0.0, 1.0], 0.0);
        let tilted = build_frames(&location(theta), [0.0, 0.0, 1.0], 0.0);
        // Rotation about z by -theta carries (0,1,0) onto (sin θ, cos θ, 0).
        let (s, c) = ((-theta).sin(), (-theta).cos());
        let rot = |v: [f64; 3]| [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
        for (a, b) in upright.axial.axes.iter().zip(tilted.axial.axes.iter()) {
            let r = rot(*a);
            for d in 0..3 {
                assert!((r[d] - b[d]).abs() < 1e-12);
            }
        }
        for (a, b) in upright
            .sagittal
            .axes
            .iter()
            .zip(tilted.sagittal.axes.iter())
        {
            let r = rot(*a);
            for d in 0..3 {
                assert!((r[d] - b[d]).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn frames_are_orthonormal_and_right_handed(theta in -1.2f64..1.2, lr_center in -50.0f64..50.0) {
            let f = build_frames(&location(theta), [0.0, 0.0, 1.0], lr_center);
            prop_assert!(f.axial.gram_error() < 1e-9);
            prop_assert!(f.sagittal.gram_error() < 1e-9);
            prop_assert!((f.axial.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((f.sagittal.determinant() - 1.0).abs() < 1e-9);
            let loc = f.location;
            prop_assert_eq!(loc.tangent[0] * loc.plane_normal[0] + loc.tangent[1] * loc.plane_normal[1], 0.0);
        }

        #[test]
        fn midpoint_symmetric(ax in -100.0f64..100.0, ay in 0.0f64..100.0, bx in -100.0f64..100.0, by in 100.0f64..200.0) {
            let curve = fit_spine_curve(&[[0.0, 0.0], [1.0, 50.0], [0.0, 100.0]], 2).unwrap();
            let d1 = disc_between(DiscLevel::L1L2, [ax, ay], [bx, by], &curve);
            let d2 = disc_between(DiscLevel::L1L2, [bx, by], [ax, ay], &curve);
            prop_assert_eq!(d1.disc_point, d2.disc_point);
        }

        #[test]
        fn reproduces_random_cubics(c0 in -50.0f64..50.0, c1 in -1.0f64..1.0, c2 in -0.01f64..0.01, c3 in -1e-4f64..1e-4) {
            let f = |y: f64| c0 + c1 * y + c2 * y * y + c3 * y * y * y;
            let pts: Vec<[f64; 2]> = (0..7).map(|i| { let y = 15.0 + 31.0 * i as f64; [f(y), y] }).collect();
            let curve = fit_spine_curve(&pts, 3).unwrap();
            prop_assert!(curve.fit_residual < 1e-9);
            for (got, want) in curve.coefficients.iter().zip([c0, c1, c2, c3]) {
                prop_assert!((got - want).abs() < 1e-9);
            }
        }
    }
}
