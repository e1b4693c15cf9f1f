//! Acceptance suite. Each test checks one criterion at its stated tolerance and writes a
//! single `criterion NN PASS|FAIL` line to stderr, bypassing libtest output capture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinegrade::curve::{fit_spine_curve, Frame3};
use spinegrade::evaluation::{auc, MetricReport};
use spinegrade::grading::{
    binary_collapse, class_weights, loss_gradient, merge_mild_moderate, weighted_ce_loss, Adadelta,
    ClassWeights, OneHotTargets, TaskProbabilities, CLASSES, TASKS,
};
use spinegrade::phantom::{cohort_specs, generate_phantom, FailureModes, Intensities, PhantomSpec};
use spinegrade::pipeline::{run_pipeline, study_geometry, PipelineConfig, StudySource};
use spinegrade::report::{match_severity, parse_report, DiagnosticKind};
use spinegrade::resample::{resample_disc_volume, resample_raw, AXIAL_GRID, SAGITTAL_GRID};
use spinegrade::segmentation::{
    dice_of_slices, segment_masks, success_criteria, FailureReason, SegmentationConfig,
};
use spinegrade::volume::Volume3D;
use spinegrade::{DiscLevel, Grade, Site};
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

fn report(id: u8, title: &str, pass: bool, detail: impl std::fmt::Display) {
    let line = format!(
        "criterion {id:02} {} {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn grades_at(raw: &str, level: DiscLevel) -> [Option<u8>; 3] {
    parse_report(raw)
        .level(level)
        .map(|s| s.grades().map(|g| g.map(Grade::value)))
        .unwrap_or([None; 3])
}

fn clean_spec() -> PhantomSpec {
    PhantomSpec {
        intensities: Intensities {
            noise_sigma: 0.0,
            ..Intensities::default()
        },
        ..PhantomSpec::default()
    }
}

#[test]
fn criterion_01_parser_fixtures() {
    let started = Instant::now();
    let fixtures = [
        (
            "There is no significant central canal stenosis and mild right and moderate left foraminal narrowing.",
            [0, 1, 2],
        ),
        (
            "Moderate right and mild left stenosis are present. No evidence of spinal canal narrowing is observed.",
            [0, 2, 1],
        ),
        ("Severe canal stenosis and bilateral foraminal narrowing which is severe as well.", [3, 3, 3]),
    ];
    let mut mismatches = Vec::new();
    for (sentence, want) in fixtures {
        let got = grades_at(&format!("L4-L5: {sentence}"), DiscLevel::L4L5);
        if got != want.map(Some) {
            mismatches.push(format!("{sentence:?} -> {got:?}"));
        }
    }

    let normal = [
        "Normal",
        "Unremarkable",
        "Without significant spinal canal or foraminal stenosis",
    ];
    let findings = [
        "stenosis",
        "narrowing",
        "compromise",
        "triangulation",
        "nerve root encroachment",
        "neural impingement",
    ];
    let canal = [
        "central canal",
        "central spinal canal",
        "central spinal",
        "spinal canal",
        "central zone",
        "central",
        "canal",
    ];
    let foramen = [
        "neural foramen",
        "neuro-foramen",
        "neuroforamen",
        "foramen",
        "neuroforaminal",
    ];
    let mut cases: Vec<(String, [Option<u8>; 3])> = normal
        .iter()
        .map(|n| (format!("L4-L5: {n}."), [Some(0); 3]))
        .collect();
    for f in findings {
        for c in canal {
            cases.push((format!("L4-L5: Moderate {c} {f}."), [Some(2), None, None]));
        }
        for fo in foramen {
            cases.push((
                format!("L4-L5: Mild right {fo} {f}."),
                [None, Some(1), None],
            ));
        }
    }
    let mut unknown = 0;
    for (text, want) in &cases {
        let parsed = parse_report(text);
        unknown += parsed
            .diagnostics
            .iter()
            .filter(|d| d.kind == DiagnosticKind::UnknownSeverity)
            .count();
        let got = grades_at(text, DiscLevel::L4L5);
        if got != *want {
            mismatches.push(format!("{text:?} -> {got:?}"));
        }
    }
    let elapsed = started.elapsed();
    report(
        1,
        "parser fixtures and synonym surfaces",
        mismatches.is_empty() && unknown == 0 && elapsed < Duration::from_secs(1),
        format!(
            "3 fixtures + {} synonym cases, {} mismatches {:?}, {unknown} unknown-severity diagnostics, {:.3} s",
            cases.len(),
            mismatches.len(),
            mismatches.first(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_intermediate_grades() {
    let direct = (
        match_severity("mild-moderate").ok().map(Grade::value),
        match_severity("moderate-severe").ok().map(Grade::value),
    );
    let in_text = (
        grades_at(
            "L3-L4: Mild-moderate central canal stenosis.",
            DiscLevel::L3L4,
        )[0],
        grades_at(
            "L3-L4: Moderate-severe central canal stenosis.",
            DiscLevel::L3L4,
        )[0],
    );
    report(
        2,
        "intermediate grades grouped upward",
        direct == (Some(2), Some(3)) && in_text == (Some(2), Some(3)),
        format!("lexicon {direct:?}, in report {in_text:?}"),
    );
}

#[test]
fn criterion_03_dice() {
    let ones = vec![1.0f32; 100];
    let identical = dice_of_slices(&ones, &ones, 1.0).unwrap();
    let a: Vec<f32> = (0..100).map(|i| if i < 50 { 1.0 } else { 0.0 }).collect();
    let b: Vec<f32> = a.iter().map(|v| 1.0 - v).collect();
    let disjoint = dice_of_slices(&a, &b, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut asymmetric = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..400);
        let p: Vec<f32> = (0..n)
            .map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
            .collect();
        let g: Vec<f32> = (0..n)
            .map(|_| if rng.random_bool(0.6) { 1.0 } else { 0.0 })
            .collect();
        if dice_of_slices(&p, &g, 1.0).unwrap() != dice_of_slices(&g, &p, 1.0).unwrap() {
            asymmetric += 1;
        }
    }
    let disjoint_err = (disjoint - 1.0 / 101.0).abs();
    report(
        3,
        "dice with epsilon 1",
        identical == 1.0 && disjoint_err < 1e-12 && asymmetric == 0,
        format!("identical {identical}, disjoint error {disjoint_err:.1e}, {asymmetric}/100 asymmetric pairs"),
    );
}

/// `ln softmax(z)[y]` by log-sum-exp.
fn log_prob(z: &[f64; CLASSES], y: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z[y] - lse
}

fn random_targets(rng: &mut ChaCha8Rng) -> OneHotTargets {
    loop {
        let t = OneHotTargets(std::array::from_fn(|_| {
            rng.random_bool(0.85)
                .then(|| Grade::new(rng.random_range(0..4)).unwrap())
        }));
        if !t.is_empty() {
            return t;
        }
    }
}

#[test]
fn criterion_04_weighted_loss_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_uniform = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..100 {
        let z: [[f64; CLASSES]; TASKS] =
            std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-6.0..6.0)));
        let targets = random_targets(&mut rng);
        let probs = TaskProbabilities::from_logits(&z).unwrap();
        let plain: f64 = Site::ALL
            .iter()
            .filter_map(|s| targets.0[s.index()].map(|g| -log_prob(&z[s.index()], g.index())))
            .sum();
        let uniform = weighted_ce_loss(&probs, &targets, &ClassWeights::uniform());
        worst_uniform = worst_uniform.max((uniform - plain).abs() / plain.abs().max(1.0));

        let weights = ClassWeights(std::array::from_fn(|_| {
            std::array::from_fn(|_| rng.random_range(0.2..5.0))
        }));
        let loss_at = |z: &[[f64; CLASSES]; TASKS]| {
            weighted_ce_loss(
                &TaskProbabilities::from_logits(z).unwrap(),
                &targets,
                &weights,
            )
        };
        let analytic = loss_gradient(&z, &targets, &weights).unwrap();
        let h = 1e-5;
        let (mut diff, mut scale_a, mut scale_n) = (0.0, 0.0, 0.0);
        for t in 0..TASKS {
            for j in 0..CLASSES {
                let mut up = z;
                let mut down = z;
                up[t][j] += h;
                down[t][j] -= h;
                let numeric = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
                diff += (analytic[t][j] - numeric).powi(2);
                scale_a += analytic[t][j].powi(2);
                scale_n += numeric.powi(2);
            }
        }
        let rel = diff.sqrt() / f64::max(scale_a.sqrt().max(scale_n.sqrt()), 1e-300);
        worst_grad = worst_grad.max(rel);
    }
    report(
        4,
        "weighted cross-entropy",
        worst_uniform <= 1e-12 && worst_grad < 1e-4,
        format!("uniform-alpha vs plain CE max error {worst_uniform:.1e}, gradient max relative error {worst_grad:.1e} over 100 trials"),
    );
}

#[test]
fn criterion_05_class_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut exact = 0;
    for _ in 0..1000 {
        let counts: [[u64; CLASSES]; TASKS] =
            std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(1..200_000)));
        let w = class_weights(&counts).unwrap();
        for t in 0..TASKS {
            let n: u64 = counts[t].iter().sum();
            let s: f64 = (0..CLASSES).map(|j| w.0[t][j] * counts[t][j] as f64).sum();
            let rel = (s - n as f64).abs() / n as f64;
            exact += usize::from(rel == 0.0);
            worst = worst.max(rel);
        }
    }
    let balanced = class_weights(&[[250; CLASSES]; TASKS]).unwrap();
    let balanced_ok = balanced.0.iter().flatten().all(|a| *a == 1.0);
    report(
        5,
        "class weights",
        worst <= 1e-12 && balanced_ok,
        format!(
            "sum(alpha n) = N for 3000 random tasks ({exact} bit-exact, worst relative deviation {worst:.1e}); balanced alpha all 1: {balanced_ok}"
        ),
    );
}

#[test]
fn criterion_06_geometry_closure() {
    let started = Instant::now();
    let spec = clean_spec();
    let phantom = generate_phantom(&spec).unwrap();
    let config = PipelineConfig::default();
    let geometry = study_geometry(&phantom.lumbar_mask, &phantom.sacral_mask, &config).unwrap();
    let found = geometry.segmentation.centroids();
    let mut centroid_err = 0.0f64;
    for (v, truth) in &phantom.truth_centroids {
        let got = found.iter().find(|(l, _)| l == v).map(|(_, c)| *c);
        centroid_err = centroid_err.max(match got {
            Some(c) => ((c[0] - truth[0]).powi(2) + (c[1] - truth[1]).powi(2)).sqrt(),
            None => f64::INFINITY,
        });
    }
    let mut angle_err = 0.0f64;
    for truth in &phantom.truth_discs {
        let got = geometry
            .discs
            .iter()
            .find(|d| d.location.level == truth.location.level);
        angle_err = angle_err.max(match got {
            Some(d) => (d.location.tilt() - truth.location.tilt()).abs(),
            None => f64::INFINITY,
        });
    }
    let curve = phantom.spec.true_curve();
    let samples: Vec<[f64; 2]> = (0..25)
        .map(|i| {
            let y = 20.0 + 9.0 * i as f64;
            [curve.eval(y), y]
        })
        .collect();
    let fitted = fit_spine_curve(&samples, 3).unwrap();
    let coef_err = fitted
        .coefficients
        .iter()
        .zip(&spec.curve)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let elapsed = started.elapsed();
    report(
        6,
        "geometry closure on a clean phantom",
        found.len() == 7
            && centroid_err <= 0.5
            && angle_err <= 1f64.to_radians()
            && coef_err <= 1e-9
            && elapsed < Duration::from_secs(10),
        format!(
            "{} vertebrae, max centroid error {centroid_err:.3} mm, max disc angle error {:.4} deg, max coefficient error {coef_err:.1e}, {:.2} s",
            found.len(),
            angle_err.to_degrees(),
            elapsed.as_secs_f64()
        ),
    );
}

fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let m = [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ];
    // Columns of the rotation matrix are the rotated unit axes.
    std::array::from_fn(|c| std::array::from_fn(|r| m[r][c]))
}

#[test]
fn criterion_07_resampling() {
    let field = |p: [f64; 3]| 0.05 * p[0] - 0.08 * p[1] + 0.06 * p[2] + 1.0;
    let source = Volume3D::from_fn([200, 330, 130], [1.0; 3], [-30.0, -20.0, -65.0], |p| {
        field(p) as f32
    })
    .unwrap();
    let phantom = generate_phantom(&clean_spec()).unwrap();
    let oblique = Frame3 {
        origin: [70.0, 140.0, 0.0],
        axes: rotation([0.3, -0.5, 0.8], 0.7),
    };
    let mut frames: Vec<Frame3> = phantom
        .truth_discs
        .iter()
        .flat_map(|d| [d.axial, d.sagittal])
        .collect();
    frames.push(oblique);
    let mut worst = 0.0f64;
    let mut missed = 0;
    for frame in &frames {
        for grid in [&AXIAL_GRID, &SAGITTAL_GRID] {
            let r = resample_raw(&source, frame, grid).unwrap();
            missed += r.out_of_bounds;
            let [nx, ny, nz] = grid.dims;
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let want = field(frame.to_world(grid.local([i, j, k])));
                        worst = worst.max((r.volume.get(i, j, k) as f64 - want).abs());
                    }
                }
            }
        }
    }

    let noisy = generate_phantom(&PhantomSpec::default()).unwrap();
    let mut worst_mean = 0.0f64;
    let mut dims_ok = true;
    for p in [&phantom, &noisy] {
        for d in &p.truth_discs {
            let pair = resample_disc_volume(&p.volume, d).unwrap();
            worst_mean = worst_mean
                .max(pair.axial.mean().abs())
                .max(pair.sagittal.mean().abs());
            dims_ok &= pair.axial.dims() == [360, 360, 8] && pair.sagittal.dims() == [160, 320, 25];
        }
    }
    report(
        7,
        "disc resampling",
        missed == 0 && worst <= 1e-4 && worst_mean < 1e-5 && dims_ok,
        format!(
            "linear field max error {worst:.1e} over {} frames ({missed} out-of-bounds samples), max normalized mean {worst_mean:.1e}, dims 360x360x8 and 160x320x25: {dims_ok}",
            frames.len()
        ),
    );
}

#[test]
fn criterion_08_failure_modes() {
    let cases = [
        (
            "fused bodies",
            FailureModes {
                fused_bodies: true,
                ..FailureModes::default()
            },
            FailureReason::CentroidContainment,
        ),
        (
            "missing vertebra",
            FailureModes {
                missing_vertebra: true,
                ..FailureModes::default()
            },
            FailureReason::CountMismatch,
        ),
        (
            "S1 overlap",
            FailureModes {
                s1_overlap: true,
                ..FailureModes::default()
            },
            FailureReason::SacralOverlap,
        ),
    ];
    let clean = generate_phantom(&clean_spec()).unwrap();
    let cfg = SegmentationConfig::default();
    let clean_ok = success_criteria(
        &segment_masks(&clean.lumbar_mask, &clean.sacral_mask, &cfg).unwrap(),
        &clean.truth_centroids,
    )
    .success;
    let mut outcomes = Vec::new();
    let mut pass = clean_ok;
    for (name, failures, want) in cases {
        let p = generate_phantom(&PhantomSpec {
            failures,
            ..clean_spec()
        })
        .unwrap();
        let seg = segment_masks(&p.lumbar_mask, &p.sacral_mask, &cfg).unwrap();
        let score = success_criteria(&seg, &p.truth_centroids);
        pass &= !score.success && score.failure_reason == Some(want);
        outcomes.push(format!(
            "{name} -> success={} reason={}",
            score.success,
            score.failure_reason.map_or("none", FailureReason::name)
        ));
    }
    report(
        8,
        "detection criteria failure modes",
        pass,
        format!("clean success={clean_ok}; {}", outcomes.join("; ")),
    );
}

#[test]
fn criterion_09_merge_and_collapse() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let denom = (1u64 << 20) as f64;
    let mut violations = 0;
    for _ in 0..1000 {
        // Dyadic masses: sums of k / 2^20 are exact in f64.
        let mut edges = [0u64, 0, 0, 0, 1 << 20];
        for e in &mut edges[1..4] {
            *e = rng.random_range(0..=1u64 << 20);
        }
        edges.sort_unstable();
        let p: [f64; CLASSES] = std::array::from_fn(|j| (edges[j + 1] - edges[j]) as f64 / denom);
        let total: f64 = p.iter().sum();
        let m = merge_mild_moderate(&p);
        let b = binary_collapse(&p);
        let ok = total == 1.0
            && m.iter().sum::<f64>() == total
            && b.iter().sum::<f64>() == total
            && m == [p[0], p[1] + p[2], p[3]]
            && b == [p[0] + p[1] + p[2], p[3]];
        violations += usize::from(!ok);
    }
    let p = [0.1, 0.2, 0.3, 0.4];
    let m = merge_mild_moderate(&p);
    let b = binary_collapse(&p);
    let close = |a: &[f64], w: &[f64]| a.iter().zip(w).all(|(x, y)| (x - y).abs() < 1e-12);
    let examples = close(&m, &[0.1, 0.5, 0.4]) && close(&b, &[0.6, 0.4]);
    report(
        9,
        "merge and binary collapse",
        violations == 0 && examples,
        format!(
            "{violations}/1000 mass-preservation violations; (0.1,0.2,0.3,0.4) -> {m:?} and {b:?}"
        ),
    );
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn criterion_10_auc() {
    let perfect = auc(
        &[0.1, 0.2, 0.3, 0.8, 0.9],
        &[false, false, false, true, true],
    )
    .unwrap();
    let ties = auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
    let s4 = [0.1, 0.4, 0.35, 0.8];
    let l4 = [false, false, true, true];
    let four = auc(&s4, &l4).unwrap();
    let four_brute = brute_auc(&s4, &l4);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut variant = 0;
    let mut oracle_mismatch = 0;
    for _ in 0..100 {
        let n = rng.random_range(4..80);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0..40) as f64) / 10.0 - 2.0)
            .collect();
        let base = auc(&scores, &labels).unwrap();
        oracle_mismatch += usize::from((base - brute_auc(&scores, &labels)).abs() > 1e-12);
        let transforms: [fn(f64) -> f64; 3] = [
            |s| (2.0 * s).exp(),
            |s| s * s * s + s,
            |s| 1.0 / (1.0 + (-s).exp()),
        ];
        for f in transforms {
            let t: Vec<f64> = scores.iter().map(|s| f(*s)).collect();
            variant += usize::from(auc(&t, &labels).unwrap() != base);
        }
    }
    report(
        10,
        "AUC",
        perfect == 1.0
            && ties == 0.5
            && four == 0.75
            && four_brute == 0.75
            && variant == 0
            && oracle_mismatch == 0,
        format!(
            "perfect {perfect}, ties {ties}, 4-sample {four} (pair oracle {four_brute}), {variant}/300 transform changes, {oracle_mismatch}/100 oracle mismatches"
        ),
    );
}

#[test]
fn criterion_11_adadelta() {
    let (rho, eps) = (0.95, 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w0: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
    let g: Vec<f64> = (0..16).map(|_| rng.random_range(-10.0..10.0)).collect();
    let mut w = w0.clone();
    let mut opt = Adadelta::new(w.len(), rho, eps);
    opt.step(&mut w, &g);
    let first_err = w0
        .iter()
        .zip(&g)
        .zip(&w)
        .map(|((w0, g), w1)| {
            let closed = w0 - eps.sqrt() / ((1.0 - rho) * g * g + eps).sqrt() * g;
            (closed - w1).abs()
        })
        .fold(0.0, f64::max);

    // Bowl f(w) = |w|^2 from w = (1, 1).
    let mut w = [1.0, 1.0];
    let mut opt = Adadelta::new(2, rho, eps);
    let mut loss = f64::NAN;
    let mut reached = None;
    for step in 1..=200 {
        let grad = [2.0 * w[0], 2.0 * w[1]];
        opt.step(&mut w, &grad);
        loss = w[0] * w[0] + w[1] * w[1];
        if reached.is_none() && loss < 1e-2 {
            reached = Some(step);
        }
    }
    report(
        11,
        "Adadelta lr=1 rho=0.95",
        first_err <= 1e-12 && reached.is_some(),
        format!(
            "first-step max error {first_err:.1e}; bowl loss after 200 steps {loss:.4} (target < 1e-2, reached at {reached:?})"
        ),
    );
}

fn run_cohort(out: &Path) -> (Duration, Option<f64>, usize) {
    let started = Instant::now();
    let sources: Vec<StudySource> = cohort_specs(&PhantomSpec::default(), 20)
        .into_iter()
        .map(StudySource::Phantom)
        .collect();
    let run = run_pipeline(&sources, &PipelineConfig::default(), out).unwrap();
    let metrics = run.model.map(|m| m.metrics);
    (
        started.elapsed(),
        metrics.as_ref().and_then(MetricReport::min_class_average),
        metrics.map_or(0, |m| m.discs),
    )
}

#[test]
fn criterion_12_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    let (time_a, class_avg, discs) = run_cohort(&a);
    let (time_b, _, _) = run_cohort(&b);
    let split_a = std::fs::read(a.join("split.json")).ok();
    let identical = split_a.is_some() && split_a == std::fs::read(b.join("split.json")).ok();
    let slowest = time_a.max(time_b);
    report(
        12,
        "pipeline over 20 phantom studies",
        class_avg.is_some_and(|c| c > 0.95) && identical && slowest < Duration::from_secs(120),
        format!(
            "min task class-average {class_avg:?} on {discs} test discs, split byte-identical: {identical}, slowest run {:.1} s",
            slowest.as_secs_f64()
        ),
    );
}
