//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line. Run with `cargo test -p crossloc --test acceptance`
//! (add `-- --nocapture` to see the lines for passing criteria too).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crossloc::correlation::{
    correlate, pool_half, sample_slices, FeatureMap, SliceScale,
};
use crossloc::estimator::{
    disambiguate_rotations, localize, run_traced, EstimatorConfig,
};
use crossloc::geometry::{
    build_bev_grid, spherical_map, spherical_map_closed_form, Attitude, BevCamera, PanoCamera,
};
use crossloc::georef::{
    global_to_gps, gps_to_global, ground_resolution, GlobalPixel, GpsCoord, PixelLabel,
};
use crossloc::homography::{
    corners_from_homography, dlt_from_corners, feature_to_image_frame, frame_corners, invert,
    weighted_dlt, CornerDisplacement, Homography, PointGrid,
};
use crossloc::metrics::{hybrid_loss, loss_info, loss_ori, LossWeights};
use crossloc::raster::{rotate_quarter, warp_by_grid, warp_by_homography};
use crossloc::synth::{
    make_overhead, make_pair, render_pano, run_benchmark, SceneSpec, TextureStyle, TrialSpec,
};

fn pass(criterion: u32, detail: &str) {
    println!("criterion {criterion}: PASS — {detail}");
}

/// Criterion 1: spherical-transform round trip. render_pano then the forward
/// warp recovers the overhead's central disk (radius W_b/4) with mean abs
/// intensity error < 0.05 across 3 texture styles × 5 seeds, < 2 s per case
/// at 2048×1024 pano / 512² BEV.
#[test]
fn criterion_1_spherical_round_trip() {
    let bev = BevCamera::new(512, 512, 85.0).unwrap();
    let pano = PanoCamera::new(2048, 1024).unwrap();
    let grid = build_bev_grid(&bev, &pano, &Attitude::zero());
    let mut worst_err: f64 = 0.0;
    let mut worst_time = 0.0_f64;
    for style in [
        TextureStyle::Checker,
        TextureStyle::BlobField,
        TextureStyle::RoadGrid,
    ] {
        for seed in 0..5u64 {
            let overhead = make_overhead(&SceneSpec::new(seed, style)).unwrap();
            let start = Instant::now();
            let rendered = render_pano(&overhead, &bev, &pano);
            let back = warp_by_grid(&rendered, &grid).unwrap();
            let elapsed = start.elapsed().as_secs_f64();
            let mut err = 0.0;
            let mut n = 0usize;
            for y in 0..512 {
                for x in 0..512 {
                    let dx = x as f64 - 256.0;
                    let dy = y as f64 - 256.0;
                    if dx * dx + dy * dy <= 128.0 * 128.0 {
                        for c in 0..overhead.channels() {
                            err += (back.pixel(y, x)[c] - overhead.pixel(y, x)[c]).abs();
                            n += 1;
                        }
                    }
                }
            }
            let mean = err / n as f64;
            assert!(
                mean < 0.05,
                "style {style:?} seed {seed}: round-trip error {mean}"
            );
            assert!(
                elapsed < 2.0,
                "style {style:?} seed {seed}: {elapsed:.2} s per case"
            );
            worst_err = worst_err.max(mean);
            worst_time = worst_time.max(elapsed);
        }
    }
    pass(
        1,
        &format!("worst disk error {worst_err:.4} (< 0.05), worst case {worst_time:.2} s (< 2 s)"),
    );
}

/// Criterion 2: Eq.-1 closed form vs the composed spherical path agree to
/// 1e-9 px over the full 512² grid.
#[test]
fn criterion_2_dual_path_geometry() {
    let bev = BevCamera::new(512, 512, 85.0).unwrap();
    let pano = PanoCamera::new(2048, 1024).unwrap();
    let zero = Attitude::zero();
    let mut worst: f64 = 0.0;
    for v in 0..512 {
        for u in 0..512 {
            let a = spherical_map(u as f64, v as f64, &bev, &pano, &zero);
            let b = spherical_map_closed_form(u as f64, v as f64, &bev, &pano);
            worst = worst.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
        }
    }
    assert!(worst < 1e-9, "dual-path disagreement {worst}");
    pass(2, &format!("max disagreement {worst:.2e} px (< 1e-9) over 512²"));
}

/// Criterion 3: Web Mercator round trips close to 1e-9°; the two anchor
/// values hold exactly.
#[test]
fn criterion_3_web_mercator() {
    let origin = gps_to_global(GpsCoord::new(0.0, 0.0).unwrap(), 20).unwrap();
    assert_eq!((origin.x, origin.y), (134_217_728.0, 134_217_728.0));
    let east = gps_to_global(GpsCoord::new(0.0, 90.0).unwrap(), 1).unwrap();
    assert!((east.x - 384.0).abs() < 1e-9 && (east.y - 256.0).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..5000 {
        let g = GpsCoord::new(rng.gen_range(-84.0..84.0), rng.gen_range(-180.0..180.0)).unwrap();
        let zoom = rng.gen_range(0u8..=23);
        let back = global_to_gps(gps_to_global(g, zoom).unwrap()).unwrap();
        worst = worst
            .max((back.lat_deg - g.lat_deg).abs())
            .max((back.lon_deg - g.lon_deg).abs());
    }
    assert!(worst < 1e-9, "round-trip error {worst}°");
    pass(
        3,
        &format!("anchors exact; worst of 5000 round trips {worst:.2e}° (< 1e-9°)"),
    );
}

/// Criterion 4: corner-cube DLT bijection and weighted-DLT recovery of
/// random homographies from 100 noiseless correspondences to 1e-7 relative,
/// over 1000 seeds with zero failures.
#[test]
fn criterion_4_homography_algebra() {
    let frame = (16.0, 16.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_bijection: f64 = 0.0;
    let mut worst_recovery: f64 = 0.0;
    for seed in 0..1000u32 {
        // bijection on a random non-degenerate cube
        let mut d = CornerDisplacement::zero();
        for c in d.d.iter_mut() {
            c[0] = rng.gen_range(-4.0..4.0);
            c[1] = rng.gen_range(-4.0..4.0);
        }
        let h = dlt_from_corners(&d, frame)
            .unwrap_or_else(|e| panic!("seed {seed}: degenerate cube: {e}"));
        let back = corners_from_homography(&h, frame).unwrap();
        for k in 0..4 {
            worst_bijection = worst_bijection
                .max((back.d[k][0] - d.d[k][0]).abs())
                .max((back.d[k][1] - d.d[k][1]).abs());
        }

        // weighted-DLT recovery from noiseless correspondences
        let h_true = Homography::from_rows([
            [
                1.0 + rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-20.0..20.0),
            ],
            [
                rng.gen_range(-0.2..0.2),
                1.0 + rng.gen_range(-0.2..0.2),
                rng.gen_range(-20.0..20.0),
            ],
            [rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3), 1.0],
        ])
        .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let mut src = Vec::with_capacity(100);
        let mut dst = Vec::with_capacity(100);
        for _ in 0..100 {
            let p = (rng.gen_range(0.0..16.0), rng.gen_range(0.0..16.0));
            src.push(p);
            dst.push(h_true.project_point(p.0, p.1).unwrap());
        }
        let h_est = weighted_dlt(&src, &dst, &[1.0; 100])
            .unwrap_or_else(|e| panic!("seed {seed}: weighted DLT failed: {e}"));
        let scale = h_true
            .to_row_major()
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        let rel = h_est
            .to_row_major()
            .iter()
            .zip(h_true.to_row_major().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            / scale;
        assert!(rel < 1e-7, "seed {seed}: recovery {rel:.2e}");
        worst_recovery = worst_recovery.max(rel);
    }
    assert!(worst_bijection < 1e-9);
    pass(
        4,
        &format!(
            "1000 seeds, zero failures; bijection {worst_bijection:.2e} px (< 1e-9), recovery {worst_recovery:.2e} rel (< 1e-7)"
        ),
    );
}

/// Criterion 5: correlation volume, stride-2 pooling, and fractional slice
/// sampling each match quadruple-loop brute-force oracles to 1e-12 on random
/// 8×8×16 features.
#[test]
fn criterion_5_correlation_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rand_features = |rng: &mut ChaCha8Rng| {
        let data: Vec<f64> = (0..16 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::new(16, 8, 8, data)
    };
    let fg = rand_features(&mut rng);
    let fs = rand_features(&mut rng);
    let c = correlate(&fg, &fs).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            for k in 0..8 {
                for l in 0..8 {
                    let mut dot = 0.0;
                    for d in 0..16 {
                        dot += fg.at(i, j)[d] * fs.at(k, l)[d];
                    }
                    worst = worst.max((c.at(i, j, k, l) - dot.max(0.0)).abs());
                }
            }
        }
    }
    assert!(worst < 1e-12, "volume oracle {worst:.2e}");
    let volume_worst = worst;

    let p = pool_half(&c).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            for k in 0..4 {
                for l in 0..4 {
                    let want = (c.at(i, j, 2 * k, 2 * l)
                        + c.at(i, j, 2 * k, 2 * l + 1)
                        + c.at(i, j, 2 * k + 1, 2 * l)
                        + c.at(i, j, 2 * k + 1, 2 * l + 1))
                        / 4.0;
                    worst = worst.max((p.at(i, j, k, l) - want).abs());
                }
            }
        }
    }
    assert!(worst < 1e-12, "pooling oracle {worst:.2e}");
    let pool_worst = worst;

    let xs: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..10.0)).collect();
    let ys: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..10.0)).collect();
    let coords = PointGrid::from_points(8, 8, xs, ys).unwrap();
    let r = 3usize;
    let s = sample_slices(&c, &coords, r, SliceScale::Full).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..8usize {
        for j in 0..8usize {
            let (cu, cv) = coords.point(i, j);
            for dv in -(r as i64)..=r as i64 {
                for du in -(r as i64)..=r as i64 {
                    let x = cu + du as f64;
                    let y = cv + dv as f64;
                    let mut want = 0.0;
                    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
                    for (ny, nx) in [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)] {
                        let wgt = (1.0 - (x - nx as f64).abs()) * (1.0 - (y - ny as f64).abs());
                        if wgt <= 0.0 || nx < 0 || ny < 0 || nx >= 8 || ny >= 8 {
                            continue;
                        }
                        want += wgt * c.at(i, j, ny as usize, nx as usize);
                    }
                    worst = worst.max((s.at_offset(i, j, du, dv) - want).abs());
                }
            }
        }
    }
    assert!(worst < 1e-12, "slice oracle {worst:.2e}");
    pass(
        5,
        &format!(
            "oracle gaps: volume {volume_worst:.1e}, pooling {pool_worst:.1e}, slices {worst:.1e} (all < 1e-12)"
        ),
    );
}

/// Criterion 6: end-to-end synthetic alignment. 16×16 grid, r = 4, K = 6,
/// corner perturbations ≤ 4 cells, unique textures, σ = 0: ≥ 95% of 200
/// seeded trials converge to mean corner error < 0.25 cells; the per-step
/// mean error is non-increasing after step 1; the suite completes in < 60 s.
#[test]
fn criterion_6_synthetic_alignment() {
    let suite: Vec<TrialSpec> = (0..200u64)
        .map(|k| TrialSpec::benchmark(10_000 + k, 20_000 + k, 4.0))
        .collect();
    let start = Instant::now();
    let report = run_benchmark(&suite).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    assert_eq!(report.failures, 0, "estimator failures: {}", report.failures);
    assert!(
        report.converged_fraction >= 0.95,
        "converged fraction {}",
        report.converged_fraction
    );
    for w in report.convergence_curve.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-9,
            "mean curve rose: {:?}",
            report.convergence_curve
        );
    }
    assert!(elapsed < 60.0, "suite took {elapsed:.1} s");
    pass(
        6,
        &format!(
            "{:.1}% converged (≥ 95%), curve {:?} non-increasing, {elapsed:.1} s (< 60 s)",
            100.0 * report.converged_fraction,
            report
                .convergence_curve
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        ),
    );
}

/// Criterion 7: occlusion robustness. At 25% occlusion the median final
/// corner error stays below 2× the unoccluded median over 50 paired seeds.
#[test]
fn criterion_7_occlusion_robustness() {
    let mut clean = Vec::new();
    let mut occluded = Vec::new();
    for seed in 0..50u64 {
        for occ in [0.0, 0.25] {
            let mut trial = TrialSpec::benchmark(30_000 + seed, 40_000 + seed, 4.0);
            trial.scene.occlusion_fraction = occ;
            let overhead = make_overhead(&trial.scene).unwrap();
            let pair = make_pair(&overhead, &trial).unwrap();
            let out =
                run_traced(&pair.bev, &pair.sat, &trial.config, Some(&pair.gt_cube_cells))
                    .unwrap();
            let err = out.trace.last().unwrap().corner_error.unwrap();
            if occ == 0.0 {
                clean.push(err);
            } else {
                occluded.push(err);
            }
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[24] + v[25]) / 2.0
    };
    let m_clean = median(&mut clean);
    let m_occ = median(&mut occluded);
    assert!(
        m_occ < 2.0 * m_clean,
        "occluded median {m_occ} vs clean {m_clean}"
    );
    pass(
        7,
        &format!("median corner error {m_occ:.3} occluded vs {m_clean:.3} clean (× {:.2} < 2)", m_occ / m_clean),
    );
}

/// Criterion 8: localization readout and rotation disambiguation. Recovered
/// GPS error < 0.5 × ground_resolution × (total corner error in image px:
/// the sum over the four corners), θ error < 2°; the 180°-flip
/// disambiguation picks the correct branch in ≥ 95% of 100 seeded trials.
#[test]
fn criterion_8_localization_readout() {
    // readout accuracy over 50 perturbed trials
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_theta: f64 = 0.0;
    for seed in 0..50u64 {
        let trial = TrialSpec::benchmark(50_000 + seed, 60_000 + seed, 4.0);
        let overhead = make_overhead(&trial.scene).unwrap();
        let pair = make_pair(&overhead, &trial).unwrap();
        let out =
            run_traced(&pair.bev, &pair.sat, &trial.config, Some(&pair.gt_cube_cells)).unwrap();
        let h_img = out.homography_image().unwrap();
        let fix = localize(&h_img, &trial.meta, (512, 512), 128.0).unwrap();

        // total corner error in image pixels (sum over the 4 corners)
        let est_img_cube =
            corners_from_homography(&h_img, (512.0, 512.0)).unwrap();
        let gt_img_cube =
            corners_from_homography(&pair.gt_homography_img, (512.0, 512.0)).unwrap();
        let total_px = est_img_cube.total_corner_error(&gt_img_cube);

        let res = ground_resolution(trial.meta.center.lat_deg, trial.meta.zoom).unwrap();
        let gps_err =
            crossloc::metrics::localization_error_m(fix.gps, pair.gt_gps, pair.gt_gps.lat_deg)
                .unwrap();
        let bound = 0.5 * res * total_px + 1e-9;
        assert!(
            gps_err < bound,
            "seed {seed}: gps error {gps_err:.4} m vs bound {bound:.4} m"
        );
        let theta_err = loss_ori(fix.theta_deg, pair.gt_theta_deg);
        assert!(theta_err < 2.0, "seed {seed}: θ error {theta_err:.2}°");
        worst_ratio = worst_ratio.max(gps_err / bound);
        worst_theta = worst_theta.max(theta_err);
    }

    // 180°-flip disambiguation over 100 seeded trials
    let mut correct = 0;
    for seed in 0..100u64 {
        let mut trial = TrialSpec::benchmark(70_000 + seed, 80_000 + seed, 1.0);
        // guarantee an off-center fix so branch predictions separate
        trial.perturb_cells = 1.0;
        let overhead = make_overhead(&trial.scene).unwrap();
        // translation-bearing ground truth: offset 1.5–3.5 cells plus jitter
        let t_mag = rng.gen_range(1.5..3.5);
        let t_ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut gt = CornerDisplacement::zero();
        for c in gt.d.iter_mut() {
            c[0] = t_mag * t_ang.cos() + rng.gen_range(-1.0..1.0);
            c[1] = t_mag * t_ang.sin() + rng.gen_range(-1.0..1.0);
        }
        let h_feat = dlt_from_corners(&gt, (16.0, 16.0)).unwrap();
        let h_img = feature_to_image_frame(&h_feat, 32.0).unwrap();
        let bev = warp_by_homography(&overhead, &invert(&h_img).unwrap(), 512, 512).unwrap();
        let flipped = rotate_quarter(&bev, 2);
        let res =
            disambiguate_rotations(&flipped, &overhead, &trial.config, &trial.meta, None)
                .unwrap();
        if res.applied_rotation_deg == 180.0 {
            correct += 1;
        }
    }
    assert!(correct >= 95, "correct branch in {correct}/100");
    pass(
        8,
        &format!(
            "GPS error ≤ {:.0}% of bound, worst θ error {worst_theta:.2}° (< 2°); 180° branch picked {correct}/100 (≥ 95)",
            100.0 * worst_ratio
        ),
    );
}

/// Criterion 9: loss arithmetic anchors.
#[test]
fn criterion_9_loss_arithmetic() {
    // uniform 16×16 volume → ln 256
    let mut fg = vec![0.0; 256];
    fg[8 * 16 + 8] = 1.0;
    let fgm = FeatureMap::new(1, 16, 16, fg);
    let fsm = FeatureMap::new(1, 16, 16, vec![0.25; 256]);
    let c = correlate(&fgm, &fsm).unwrap();
    let uniform = loss_info(&c, (5, 9), 4.0).unwrap();
    assert!((uniform - 256.0_f64.ln()).abs() < 1e-9, "loss_info {uniform}");

    let hybrid = hybrid_loss(25.0, 2.0, 5.5452, &LossWeights::default());
    assert!((hybrid - 28.0452).abs() < 1e-9, "hybrid {hybrid}");

    let wrap = loss_ori(170.0, -170.0);
    assert!((wrap - 20.0).abs() < 1e-12, "wrap {wrap}");

    let _ = PixelLabel { u: 0.0, v: 0.0 };
    pass(
        9,
        &format!("ln 256 = {uniform:.6}, hybrid = {hybrid:.4}, wrap(170°, −170°) = {wrap}°"),
    );
}
