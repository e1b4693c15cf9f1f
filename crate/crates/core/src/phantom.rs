//! Deterministic synthetic spines with analytic ground truth.
//!
//! Bodies T12..L5 are rectangles and S1 is a trapezoid, each oriented along the true
//! curve tangent and spaced at a fixed arc length. The sagittal volume extrudes them
//! along left–right (`z`) and places one spherical marker per disc and site whose
//! intensity encodes the grade: canal at the disc point, right foramen at `+z`, left at
//! `-z`. Masks are single slices at `z = 0`.

use crate::anatomy::{DiscLevel, Grade, Site, Vertebra};
use crate::curve::{build_frames, disc_between, DiscFrame, SpineCurve};
use crate::labels::LabelTable;
use crate::report::StenosisLabelSet;
use crate::volume::{MaskVolume, Volume3D, VolumeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Number of bodies: T12, L1..L5 and S1.
pub const VERTEBRA_COUNT: usize = 7;

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("phantom geometry leaves the volume: {0}")]
    SpecOutOfBounds(String),
    #[error("invalid phantom spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intensities {
    pub background: f32,
    pub bone: f32,
    /// Marker intensity for grade 0.
    pub marker_base: f32,
    /// Added per grade step.
    pub marker_step: f32,
    /// Standard deviation of additive Gaussian noise; 0 disables noise.
    pub noise_sigma: f32,
}

impl Default for Intensities {
    fn default() -> Self {
        Intensities {
            background: 10.0,
            bone: 100.0,
            marker_base: 40.0,
            marker_step: 40.0,
            noise_sigma: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureModes {
    /// Bridges L3 and L4 in the lumbar mask so one area holds two centroids.
    pub fused_bodies: bool,
    /// Leaves S1 out of the sacral mask.
    pub missing_s1: bool,
    /// Adds a spurious blob to the lumbar mask away from every centroid.
    pub extra_component: bool,
    /// Leaves L2 out of the lumbar mask.
    pub missing_vertebra: bool,
    /// Extends L5 caudally into the S1 body in the lumbar mask.
    pub s1_overlap: bool,
}

impl FailureModes {
    pub fn any(&self) -> bool {
        self.fused_bodies
            || self.missing_s1
            || self.extra_component
            || self.missing_vertebra
            || self.s1_overlap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub study_id: String,
    /// True curve `x = Σ cₖ yᵏ` in world mm.
    pub curve: Vec<f64>,
    /// `y` of the T12 centroid in mm.
    pub first_y: f64,
    /// Arc length between consecutive centroids in mm.
    pub arc_spacing: f64,
    /// Lumbar body size `[AP width, height along the tangent]` in mm.
    pub body_size: [f64; 2],
    /// S1 trapezoid `[cranial width, caudal width, height]` in mm.
    pub s1_size: [f64; 3],
    /// Half-extent of bone along `z` in mm.
    pub extrusion_half_width: f64,
    pub marker_radius: f64,
    /// Left–right offset of the foraminal markers in mm.
    pub foramen_offset: f64,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub intensities: Intensities,
    /// Standard deviation of a per-body offset along the disc-plane normal, mm.
    pub jitter_sigma: f64,
    pub seed: u64,
    /// Fixed grades `[level][scs, rfs, lfs]`; drawn from the seed when absent.
    pub grades: Option<Vec<[u8; 3]>>,
    pub failures: FailureModes,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            study_id: "phantom".into(),
            curve: vec![70.0, 0.25, -0.0015, 2e-6],
            first_y: 30.0,
            arc_spacing: 32.0,
            body_size: [36.0, 24.0],
            s1_size: [40.0, 24.0, 26.0],
            extrusion_half_width: 20.0,
            marker_radius: 3.5,
            foramen_offset: 12.0,
            dims: [160, 256, 64],
            spacing: [1.0, 1.0, 1.0],
            intensities: Intensities::default(),
            jitter_sigma: 0.0,
            seed: 42,
            grades: None,
            failures: FailureModes::default(),
        }
    }
}

impl PhantomSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, PhantomError> {
        toml::from_str(text).map_err(|e| PhantomError::BadSpec(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PhantomError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// World origin such that the mid-sagittal slice sits at `z = 0`.
    pub fn origin(&self) -> [f32; 3] {
        let half = (self.dims[2] as f32 - 1.0) / 2.0;
        [0.0, 0.0, -(half.floor()) * self.spacing[2]]
    }

    fn mid_slice(&self) -> usize {
        (self.dims[2] - 1) / 2
    }

    pub fn true_curve(&self) -> SpineCurve {
        SpineCurve {
            coefficients: self.curve.clone(),
            domain: [0.0, self.dims[1] as f64 * self.spacing[1] as f64],
            fit_residual: 0.0,
        }
    }

    fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::BadSpec(m));
        if self.curve.is_empty() || self.curve.iter().any(|c| !c.is_finite()) {
            return bad("curve needs finite coefficients".into());
        }
        if self.dims.contains(&0) || self.spacing.iter().any(|s| !(*s > 0.0)) {
            return bad(format!("bad grid {:?} @ {:?}", self.dims, self.spacing));
        }
        let sizes = [
            self.arc_spacing,
            self.body_size[0],
            self.body_size[1],
            self.s1_size[0],
            self.s1_size[1],
            self.s1_size[2],
        ];
        if sizes.iter().any(|s| !(*s > 0.0)) || self.marker_radius <= 0.0 || self.jitter_sigma < 0.0
        {
            return bad("sizes must be positive".into());
        }
        if let Some(g) = &self.grades {
            if g.len() != DiscLevel::ALL.len() || g.iter().flatten().any(|&v| v > 3) {
                return bad("grades need six rows of values in 0..=3".into());
            }
        }
        Ok(())
    }
}

/// Oriented body shape in the sagittal plane: `u` along the disc-plane normal,
/// `v` along the caudal tangent.
#[derive(Debug, Clone, Copy)]
struct Body {
    center: [f64; 2],
    tangent: [f64; 2],
    normal: [f64; 2],
    /// `v` range and the half widths at each end.
    v_range: [f64; 2],
    half_width: [f64; 2],
}

impl Body {
    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        [
            d[0] * self.normal[0] + d[1] * self.normal[1],
            d[0] * self.tangent[0] + d[1] * self.tangent[1],
        ]
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let [u, v] = self.local(p);
        if v < self.v_range[0] || v > self.v_range[1] {
            return false;
        }
        let s = (v - self.v_range[0]) / (self.v_range[1] - self.v_range[0]);
        u.abs() <= self.half_width[0] + s * (self.half_width[1] - self.half_width[0])
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        let at = |u: f64, v: f64| {
            [
                self.center[0] + u * self.normal[0] + v * self.tangent[0],
                self.center[1] + u * self.normal[1] + v * self.tangent[1],
            ]
        };
        let [v0, v1] = self.v_range;
        let [w0, w1] = self.half_width;
        [at(-w0, v0), at(w0, v0), at(-w1, v1), at(w1, v1)]
    }

    fn rectangle(center: [f64; 2], tangent: [f64; 2], size: [f64; 2]) -> Self {
        Body {
            center,
            tangent,
            normal: [tangent[1], -tangent[0]],
            v_range: [-size[1] / 2.0, size[1] / 2.0],
            half_width: [size[0] / 2.0; 2],
        }
    }

    /// Trapezoid whose area centroid sits at `center`.
    fn trapezoid(center: [f64; 2], tangent: [f64; 2], size: [f64; 3]) -> Self {
        let [a, b, h] = size;
        let from_caudal = h * (2.0 * a + b) / (3.0 * (a + b));
        Body {
            center,
            tangent,
            normal: [tangent[1], -tangent[0]],
            v_range: [from_caudal - h, from_caudal],
            half_width: [a / 2.0, b / 2.0],
        }
    }
}

/// Walks the curve from `y0` until the arc length reaches `length`.
fn advance_by_arc(curve: &SpineCurve, y0: f64, length: f64) -> f64 {
    let speed = |y: f64| curve.derivative(y).hypot(1.0);
    let h = 1e-3;
    let mut y = y0;
    let mut acc = 0.0;
    loop {
        let step = h * (speed(y) + 4.0 * speed(y + h / 2.0) + speed(y + h)) / 6.0;
        if acc + step >= length {
            // Linear finish inside the last sub-step.
            return y + h * (length - acc) / step;
        }
        acc += step;
        y += h;
    }
}

pub struct Phantom {
    pub spec: PhantomSpec,
    pub volume: Volume3D,
    pub lumbar_mask: MaskVolume,
    pub sacral_mask: MaskVolume,
    /// Analytic body centroids, cranial → caudal.
    pub truth_centroids: Vec<(Vertebra, [f64; 2])>,
    /// Disc frames from the true curve at the truth-centroid midpoints.
    pub truth_discs: Vec<DiscFrame>,
    pub labels: LabelTable,
    /// Free-text report stating every grade.
    pub report: String,
}

fn grade_phrase(site: Site, grade: Grade) -> String {
    let severity = ["no", "mild", "moderate", "severe"][grade.index()];
    let place = match site {
        Site::Scs => "central canal stenosis",
        Site::Rfs => "right neural foraminal narrowing",
        Site::Lfs => "left neural foraminal narrowing",
    };
    format!("{severity} {place}")
}

/// Report text with one heading per level and one sentence per site.
pub fn synthesize_report(grades: &[(DiscLevel, [Grade; 3])]) -> String {
    let mut out = String::from("Lumbar spine MRI.\n\nFINDINGS:\n");
    for (level, g) in grades {
        let (upper, lower) = level.flanking();
        let _ = write!(out, "{}-{}: ", upper.name(), lower.name());
        let sentences: Vec<String> = Site::ALL
            .iter()
            .map(|&s| {
                let mut p = grade_phrase(s, g[s.index()]);
                p[..1].make_ascii_uppercase();
                p + "."
            })
            .collect();
        let _ = writeln!(out, "{}", sentences.join(" "));
    }
    out
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let curve = spec.true_curve();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.jitter_sigma.max(0.0)).expect("non-negative sigma");

    let mut ys = vec![spec.first_y];
    for _ in 1..VERTEBRA_COUNT {
        let last = *ys.last().expect("non-empty");
        ys.push(advance_by_arc(&curve, last, spec.arc_spacing));
    }
    let mut bodies = Vec::with_capacity(VERTEBRA_COUNT);
    let mut truth_centroids = Vec::with_capacity(VERTEBRA_COUNT);
    for (k, &y) in ys.iter().enumerate() {
        let tangent = curve.tangent(y);
        let normal = [tangent[1], -tangent[0]];
        let offset = if spec.jitter_sigma > 0.0 {
            jitter.sample(&mut rng)
        } else {
            0.0
        };
        let center = [curve.eval(y) + offset * normal[0], y + offset * normal[1]];
        let label = Vertebra::ALL[k];
        let body = if label.is_sacral() {
            Body::trapezoid(center, tangent, spec.s1_size)
        } else {
            Body::rectangle(center, tangent, spec.body_size)
        };
        bodies.push(body);
        truth_centroids.push((label, center));
    }

    let truth_discs: Vec<DiscFrame> = DiscLevel::ALL
        .iter()
        .enumerate()
        .map(|(k, &level)| {
            let loc = disc_between(
                level,
                truth_centroids[k].1,
                truth_centroids[k + 1].1,
                &curve,
            );
            build_frames(&loc, [0.0, 0.0, 1.0], 0.0)
        })
        .collect();

    let grades: Vec<[Grade; 3]> = match &spec.grades {
        Some(rows) => rows
            .iter()
            .map(|r| r.map(|g| Grade::new(g).expect("validated")))
            .collect(),
        None => (0..DiscLevel::ALL.len())
            .map(|_| [0; 3].map(|_| Grade::new(rng.random_range(0..4u8)).expect("below 4")))
            .collect(),
    };

    let origin = spec.origin();
    let sp = spec.spacing.map(|s| s as f64);
    let extent = [0, 1, 2].map(|a| origin[a] as f64 + (spec.dims[a] - 1) as f64 * sp[a]);
    let inside = |p: [f64; 3]| (0..3).all(|a| p[a] >= origin[a] as f64 && p[a] <= extent[a]);
    for (label, body) in truth_centroids.iter().map(|t| t.0).zip(&bodies) {
        for c in body.corners() {
            if !inside([c[0], c[1], 0.0]) {
                return Err(PhantomError::SpecOutOfBounds(format!(
                    "{label} corner at ({:.1}, {:.1}) mm",
                    c[0], c[1]
                )));
            }
        }
    }
    let z_reach = spec
        .extrusion_half_width
        .max(spec.foramen_offset + spec.marker_radius);
    if -z_reach < origin[2] as f64 || z_reach > extent[2] {
        return Err(PhantomError::SpecOutOfBounds(format!(
            "left-right reach {z_reach} mm"
        )));
    }

    let [nx, ny, nz] = spec.dims;
    let pixel = |i: usize, j: usize| {
        [
            origin[0] as f64 + i as f64 * sp[0],
            origin[1] as f64 + j as f64 * sp[1],
        ]
    };

    // Bone map on the sagittal plane, shared by every extruded slice.
    let mut bone = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let p = pixel(i, j);
            bone[i + nx * j] = bodies.iter().any(|b| b.contains(p));
        }
    }

    let ints = spec.intensities;
    let mut data = vec![ints.background; nx * ny * nz];
    for k in 0..nz {
        let z = origin[2] as f64 + k as f64 * sp[2];
        if z.abs() > spec.extrusion_half_width {
            continue;
        }
        let base = k * nx * ny;
        for (idx, &is_bone) in bone.iter().enumerate() {
            if is_bone {
                data[base + idx] = ints.bone;
            }
        }
    }

    let r = spec.marker_radius;
    for (frame, g) in truth_discs.iter().zip(&grades) {
        let dp = frame.location.disc_point;
        for site in Site::ALL {
            let z0 = match site {
                Site::Scs => 0.0,
                Site::Rfs => spec.foramen_offset,
                Site::Lfs => -spec.foramen_offset,
            };
            let value = ints.marker_base + ints.marker_step * g[site.index()].value() as f32;
            let c = [dp[0], dp[1], z0];
            let lo = [0, 1, 2]
                .map(|a| (((c[a] - r - origin[a] as f64) / sp[a]).floor().max(0.0)) as usize);
            let hi = [0, 1, 2].map(|a| {
                ((((c[a] + r - origin[a] as f64) / sp[a]).ceil()) as usize).min(spec.dims[a] - 1)
            });
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let p = [
                            origin[0] as f64 + i as f64 * sp[0],
                            origin[1] as f64 + j as f64 * sp[1],
                            origin[2] as f64 + k as f64 * sp[2],
                        ];
                        let d2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
                        if d2 <= r * r {
                            data[i + nx * (j + ny * k)] = value;
                        }
                    }
                }
            }
        }
    }

    if ints.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, ints.noise_sigma).expect("positive sigma");
        for v in data.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let volume = Volume3D::new(spec.dims, spec.spacing, origin, data)?;

    let (lumbar_mask, sacral_mask) = build_masks(spec, &bodies, &truth_centroids, &pixel)?;

    let mut labels = LabelTable::new();
    let level_grades: Vec<(DiscLevel, [Grade; 3])> = DiscLevel::ALL
        .iter()
        .copied()
        .zip(grades.iter().copied())
        .collect();
    for (level, g) in &level_grades {
        let set = StenosisLabelSet::from_grades(*level, g.map(Some));
        labels
            .insert(spec.study_id.clone(), set, true)
            .expect("unique levels");
    }

    Ok(Phantom {
        spec: spec.clone(),
        volume,
        lumbar_mask,
        sacral_mask,
        truth_centroids,
        truth_discs,
        labels,
        report: synthesize_report(&level_grades),
    })
}

fn build_masks(
    spec: &PhantomSpec,
    bodies: &[Body],
    centroids: &[(Vertebra, [f64; 2])],
    pixel: &dyn Fn(usize, usize) -> [f64; 2],
) -> Result<(MaskVolume, MaskVolume), PhantomError> {
    let [nx, ny, _] = spec.dims;
    let f = spec.failures;
    let mut lumbar = vec![0.0f32; nx * ny];
    let mut sacral = vec![0.0f32; nx * ny];
    let index_of = |v: Vertebra| {
        centroids
            .iter()
            .position(|c| c.0 == v)
            .expect("all labels present")
    };
    let fuse = (
        bodies[index_of(Vertebra::L3)],
        bodies[index_of(Vertebra::L4)],
    );
    let l5 = bodies[index_of(Vertebra::L5)];
    let s1 = bodies[index_of(Vertebra::S1)];
    // L5 stretched 4 mm past the cranial edge of S1, short of its centroid.
    let stretched = Body {
        v_range: [l5.v_range[0], spec.arc_spacing + s1.v_range[0] + 4.0],
        ..l5
    };
    let bridge_center = [
        0.5 * (fuse.0.center[0] + fuse.1.center[0]),
        0.5 * (fuse.0.center[1] + fuse.1.center[1]),
    ];
    let bridge = Body::rectangle(
        bridge_center,
        fuse.0.tangent,
        [spec.body_size[0] / 3.0, spec.arc_spacing],
    );
    let extra_center = [s1.center[0] + spec.body_size[0], s1.center[1]];
    let extra = Body::rectangle(extra_center, [0.0, 1.0], [10.0, 10.0]);

    for j in 0..ny {
        for i in 0..nx {
            let p = pixel(i, j);
            let idx = i + nx * j;
            for (b, (label, _)) in bodies.iter().zip(centroids) {
                if !b.contains(p) {
                    continue;
                }
                match label {
                    Vertebra::S1 if f.missing_s1 => {}
                    Vertebra::S1 => sacral[idx] = 1.0,
                    Vertebra::L2 if f.missing_vertebra => {}
                    _ => lumbar[idx] = 1.0,
                }
            }
            if (f.fused_bodies && bridge.contains(p))
                || (f.s1_overlap && stretched.contains(p))
                || (f.extra_component && extra.contains(p))
            {
                lumbar[idx] = 1.0;
            }
        }
    }
    let mid_z = spec.origin()[2] + spec.mid_slice() as f32 * spec.spacing[2];
    let slice_origin = [0.0, 0.0, mid_z];
    let dims = [nx, ny, 1];
    Ok((
        MaskVolume::new(Volume3D::new(dims, spec.spacing, slice_origin, lumbar)?)?,
        MaskVolume::new(Volume3D::new(dims, spec.spacing, slice_origin, sacral)?)?,
    ))
}

impl Phantom {
    /// Writes volumes as SPNV and truth as CSV/text into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), PhantomError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        crate::volume::write_volume(&self.volume, dir.join("sagittal.spnv"))?;
        crate::volume::write_volume(&self.lumbar_mask, dir.join("lumbar_mask.spnv"))?;
        crate::volume::write_volume(&self.sacral_mask, dir.join("sacral_mask.spnv"))?;
        std::fs::write(dir.join("truth_centroids.csv"), self.centroids_csv())?;
        std::fs::write(dir.join("truth_discs.csv"), self.discs_csv())?;
        std::fs::write(dir.join("labels.csv"), self.labels.to_csv_string())?;
        std::fs::write(dir.join("report.txt"), &self.report)?;
        std::fs::write(dir.join("spec.toml"), self.spec.to_toml_string())?;
        Ok(())
    }

    pub fn centroids_csv(&self) -> String {
        let mut s = String::from("label,x_mm,y_mm\n");
        for (v, c) in &self.truth_centroids {
            let _ = writeln!(s, "{v},{},{}", c[0], c[1]);
        }
        s
    }

    pub fn discs_csv(&self) -> String {
        let mut s = String::from("level,x_mm,y_mm,tangent_x,tangent_y,tilt_rad\n");
        for d in &self.truth_discs {
            let l = &d.location;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                l.level,
                l.disc_point[0],
                l.disc_point[1],
                l.tangent[0],
                l.tangent[1],
                l.tilt()
            );
        }
        s
    }
}

/// Parses `label,x_mm,y_mm` rows as written by [`Phantom::centroids_csv`].
pub fn read_truth_centroids(text: &str) -> Result<Vec<(Vertebra, [f64; 2])>, PhantomError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || PhantomError::BadSpec(format!("truth centroid line {}: {line:?}", n + 1));
        let mut f = line.split(',');
        let label: Vertebra = f
            .next()
            .ok_or_else(bad)?
            .trim()
            .parse()
            .map_err(|_| bad())?;
        let x: f64 = f
            .next()
            .ok_or_else(bad)?
            .trim()
            .parse()
            .map_err(|_| bad())?;
        let y: f64 = f
            .next()
            .ok_or_else(bad)?
            .trim()
            .parse()
            .map_err(|_| bad())?;
        out.push((label, [x, y]));
    }
    Ok(out)
}

/// `count` studies sharing `base` geometry with per-study seeds and ids.
pub fn cohort_specs(base: &PhantomSpec, count: usize) -> Vec<PhantomSpec> {
    (0..count)
        .map(|i| PhantomSpec {
            study_id: format!("{}{:03}", base.study_id, i),
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        })
        .collect()
}
