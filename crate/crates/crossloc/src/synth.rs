//! Synthetic-data generation and the benchmark harness: overhead textures,
//! inverse-spherical panorama rendering, homography-perturbed pairs with
//! photometric noise and occlusion, and end-to-end scoring of the estimator.
//!
//! Scenes stand in for satellite/ground data: the satellite proxy is the
//! overhead texture itself and the BEV proxy is its homography warp, which
//! isolates estimator behavior from feature-learning quality. Fixed seeds
//! make every report reproducible bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    localize, run_traced, EstimatorConfig, EstimatorError, LocalizationFix,
};
use crate::geometry::{BevCamera, PanoCamera};
use crate::georef::{GeorefError, GpsCoord, PatchMeta, PixelLabel};
use crate::homography::{
    dlt_from_corners, feature_to_image_frame, invert, CornerDisplacement, Homography,
    HomographyError,
};
use crate::metrics::{summarize, EvalRecord, EvalReport, MetricsError, Thresholds};
use crate::raster::{bilinear_sample_into, warp_by_homography, ImageBuffer, RasterError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("noise sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("occlusion fraction {0} outside [0, 0.5]")]
    OcclusionOutOfRange(f64),
    #[error("scene size and channels must be positive")]
    EmptyScene,
    #[error("texture size {0} not divisible by the {1}x{1} feature grid")]
    GridMismatch(usize, usize),
    #[error("benchmark suite is empty")]
    EmptySuite,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Georef(#[from] GeorefError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Overhead texture families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureStyle {
    /// Two-tone checkerboard with 64-px cells; periodic, grayscale-friendly.
    Checker,
    /// Smooth field of spectral blobs: a coarse grid of sparse channel
    /// patterns, bilinearly upsampled. Locally unique everywhere — the
    /// workhorse for estimator benchmarks.
    BlobField,
    /// Blob backdrop crossed by dark road bands with a few bright blocks.
    RoadGrid,
}

/// Deterministic scene description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub size: usize,
    pub style: TextureStyle,
    /// Spectral channel count; 3 renders as RGB, higher counts give the
    /// correlation features more to discriminate with.
    pub channels: usize,
    pub noise_sigma: f64,
    pub occlusion_fraction: f64,
}

impl SceneSpec {
    pub fn new(seed: u64, style: TextureStyle) -> Self {
        Self {
            seed,
            size: 512,
            style,
            channels: 3,
            noise_sigma: 0.0,
            occlusion_fraction: 0.0,
        }
    }

    /// Benchmark-grade blob field: 16 spectral channels.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            channels: 16,
            ..Self::new(seed, TextureStyle::BlobField)
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.noise_sigma < 0.0 {
            return Err(SynthError::NegativeSigma(self.noise_sigma));
        }
        if !(0.0..=0.5).contains(&self.occlusion_fraction) {
            return Err(SynthError::OcclusionOutOfRange(self.occlusion_fraction));
        }
        if self.size == 0 || self.channels == 0 {
            return Err(SynthError::EmptyScene);
        }
        Ok(())
    }
}

/// Deterministic overhead texture for a scene.
pub fn make_overhead(spec: &SceneSpec) -> Result<ImageBuffer, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let img = match spec.style {
        TextureStyle::Checker => checker(spec.size, spec.channels),
        TextureStyle::BlobField => blob_field(&mut rng, spec.size, spec.channels),
        TextureStyle::RoadGrid => road_grid(&mut rng, spec.size, spec.channels),
    };
    Ok(img)
}

/// 64-px checker cells at 0.05/0.95 (clear of the exact-zero fill value).
fn checker(size: usize, channels: usize) -> ImageBuffer {
    let mut img = ImageBuffer::new(size, size, channels);
    let cell = 64usize;
    let px = |v: f64| vec![v; channels];
    let (dark, light) = (px(0.05), px(0.95));
    for y in 0..size {
        for x in 0..size {
            let on = ((x / cell) + (y / cell)) % 2 == 0;
            img.set_pixel(y, x, if on { &light } else { &dark });
        }
    }
    img
}

/// Sparse spectral patterns on a 32-px coarse grid, bilinearly upsampled.
/// Every 32-px neighborhood carries a distinct smooth high-dimensional
/// descriptor; channel means land near 0.5 so composites look natural.
fn blob_field(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> ImageBuffer {
    let n = (size / 32).max(4);
    let hot = channels.div_ceil(2);
    let mut coarse = vec![0.02; n * n * channels];
    for cell in 0..n * n {
        for _ in 0..hot {
            let c = rng.gen_range(0..channels);
            coarse[cell * channels + c] = rng.gen_range(0.4..0.9);
        }
    }
    upsample_bilinear(&coarse, n, size, channels)
}

fn road_grid(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> ImageBuffer {
    let mut img = blob_field(rng, size, channels);
    // dark road bands
    let road = vec![0.08; channels];
    for _ in 0..3 {
        let w = rng.gen_range(8..20usize);
        let x0 = rng.gen_range(0..size - w);
        for y in 0..size {
            for x in x0..x0 + w {
                img.set_pixel(y, x, &road);
            }
        }
        let w = rng.gen_range(8..20usize);
        let y0 = rng.gen_range(0..size - w);
        for y in y0..y0 + w {
            for x in 0..size {
                img.set_pixel(y, x, &road);
            }
        }
    }
    // bright blocks
    for _ in 0..6 {
        let s = rng.gen_range(16..40usize);
        let y0 = rng.gen_range(0..size - s);
        let x0 = rng.gen_range(0..size - s);
        let mut block = vec![0.1; channels];
        for v in block.iter_mut() {
            *v = rng.gen_range(0.6..0.95);
        }
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                img.set_pixel(y, x, &block);
            }
        }
    }
    img
}

fn upsample_bilinear(coarse: &[f64], n: usize, size: usize, channels: usize) -> ImageBuffer {
    let mut img = ImageBuffer::new(size, size, channels);
    let scale = n as f64 / size as f64;
    let mut px = vec![0.0; channels];
    for y in 0..size {
        for x in 0..size {
            let gx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let gy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let x0 = gx.floor() as usize;
            let y0 = gy.floor() as usize;
            let x1 = (x0 + 1).min(n - 1);
            let y1 = (y0 + 1).min(n - 1);
            let fx = gx - x0 as f64;
            let fy = gy - y0 as f64;
            for (c, p) in px.iter_mut().enumerate() {
                let v00 = coarse[(y0 * n + x0) * channels + c];
                let v01 = coarse[(y0 * n + x1) * channels + c];
                let v10 = coarse[(y1 * n + x0) * channels + c];
                let v11 = coarse[(y1 * n + x1) * channels + c];
                *p = v00 * (1.0 - fx) * (1.0 - fy)
                    + v01 * fx * (1.0 - fy)
                    + v10 * (1.0 - fx) * fy
                    + v11 * fx * fy;
            }
            img.set_pixel(y, x, &px);
        }
    }
    img
}

/// Sky value for the upper hemisphere of rendered panoramas.
pub const SKY_VALUE: f64 = 0.7;

/// Renders what a panoramic camera at the overhead's center would see of the
/// ground plane: each lower-hemisphere pixel's ray is intersected with the
/// BEV tangent plane and the overhead texture sampled there; the upper
/// hemisphere is flat sky. The overhead is treated as the BEV-plane image
/// (centers aligned when the overhead is larger than the BEV frame).
pub fn render_pano(
    overhead: &ImageBuffer,
    bev: &BevCamera,
    pano: &PanoCamera,
) -> ImageBuffer {
    let mut out = ImageBuffer::new(pano.height, pano.width, overhead.channels());
    let f = bev.focal();
    let off_x = (overhead.width() as f64 - bev.width as f64) / 2.0;
    let off_y = (overhead.height() as f64 - bev.height as f64) / 2.0;
    let sky = vec![SKY_VALUE; overhead.channels()];
    let mut px = vec![0.0; overhead.channels()];
    for v in 0..pano.height {
        let y2 = 1.0 - 2.0 * v as f64 / pano.height as f64;
        let theta = std::f64::consts::FRAC_PI_2 * y2;
        if theta >= 0.0 {
            for u in 0..pano.width {
                out.set_pixel(v, u, &sky);
            }
            continue;
        }
        // ray elevation below the horizon; distance along the ground plane
        let ground = f * theta.cos() / (-theta.sin());
        for u in 0..pano.width {
            let x2 = 2.0 * u as f64 / pano.width as f64 - 1.0;
            let phi = -std::f64::consts::PI * x2;
            let x1 = ground * phi.cos();
            let y1 = ground * phi.sin();
            let u_b = bev.width as f64 / 2.0 - y1;
            let v_b = bev.height as f64 / 2.0 - x1;
            bilinear_sample_into(overhead, u_b + off_x, v_b + off_y, &mut px);
            out.set_pixel(v, u, &px);
        }
    }
    out
}

/// One benchmark trial: scene, ground-truth perturbation, estimator config,
/// and the geo-referencing the readout is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub scene: SceneSpec,
    /// Seed of the ground-truth perturbation draw.
    pub seed: u64,
    /// Maximum corner displacement magnitude, in feature cells; each corner
    /// draws uniformly from the disk of this radius.
    pub perturb_cells: f64,
    pub config: EstimatorConfig,
    pub meta: PatchMeta,
}

impl TrialSpec {
    /// Standard benchmark trial: spectral blob field, default estimator,
    /// urban-latitude patch at zoom 20.
    pub fn benchmark(scene_seed: u64, perturb_seed: u64, perturb_cells: f64) -> Self {
        Self {
            scene: SceneSpec::benchmark(scene_seed),
            seed: perturb_seed,
            perturb_cells,
            config: EstimatorConfig::default(),
            meta: PatchMeta::new(
                GpsCoord::new(41.8781, -87.6298).expect("valid fixture latitude"),
                20,
                512,
            )
            .expect("valid fixture patch"),
        }
    }
}

/// A generated pair plus everything needed to score an estimate against it.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub bev: ImageBuffer,
    pub sat: ImageBuffer,
    /// BEV→satellite map in image pixels.
    pub gt_homography_img: Homography,
    /// The same ground truth as a feature-frame corner cube.
    pub gt_cube_cells: CornerDisplacement,
    pub gt_label: PixelLabel,
    pub gt_gps: GpsCoord,
    pub gt_theta_deg: f64,
}

/// Builds a trial pair: the satellite proxy is the overhead itself; the BEV
/// proxy is the overhead warped by the ground-truth homography, plus optional
/// photometric noise (observable pixels only — fill stays exactly zero) and
/// a zero occlusion block.
pub fn make_pair(overhead: &ImageBuffer, trial: &TrialSpec) -> Result<SyntheticPair, SynthError> {
    trial.scene.validate()?;
    let (gh, gw) = trial.config.grid;
    if overhead.height() % gh != 0 || overhead.width() % gw != 0 {
        return Err(SynthError::GridMismatch(overhead.height(), gh));
    }
    let stride = overhead.width() as f64 / gw as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(trial.seed);

    let mut cube = CornerDisplacement::zero();
    for corner in cube.d.iter_mut() {
        let radius = trial.perturb_cells * rng.gen::<f64>().sqrt();
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        corner[0] = radius * angle.cos();
        corner[1] = radius * angle.sin();
    }
    let h_feat = dlt_from_corners(&cube, (gw as f64, gh as f64))?;
    let h_img = feature_to_image_frame(&h_feat, stride)?;

    let sat = overhead.clone();
    let mut bev = warp_by_homography(&sat, &invert(&h_img)?, sat.height(), sat.width())?;

    if trial.scene.noise_sigma > 0.0 {
        add_gaussian_noise(&mut bev, &h_img, trial.scene.noise_sigma, &mut rng);
    }
    if trial.scene.occlusion_fraction > 0.0 {
        occlude(&mut bev, trial.scene.occlusion_fraction, &mut rng);
    }

    let dims = (bev.height(), bev.width());
    let fix: LocalizationFix = localize(&h_img, &trial.meta, dims, dims.0 as f64 / 4.0)?;
    Ok(SyntheticPair {
        gt_label: PixelLabel {
            u: fix.u_s,
            v: fix.v_s,
        },
        gt_gps: fix.gps,
        gt_theta_deg: fix.theta_deg,
        bev,
        sat,
        gt_homography_img: h_img,
        gt_cube_cells: cube,
    })
}

/// Box–Muller gaussian noise on observable (non-fill) pixels; the zero fill
/// marks unobservable content and must stay exact.
fn add_gaussian_noise(img: &mut ImageBuffer, h_img: &Homography, sigma: f64, rng: &mut ChaCha8Rng) {
    let (height, width, channels) = (img.height(), img.width(), img.channels());
    let src_w = width as f64;
    let src_h = height as f64;
    let mut px = vec![0.0; channels];
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = h_img.apply_raw(x as f64, y as f64);
            let inside = sx >= 0.0 && sy >= 0.0 && sx <= src_w - 1.0 && sy <= src_h - 1.0;
            if !inside {
                continue;
            }
            px.copy_from_slice(img.pixel(y, x));
            for v in px.iter_mut() {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                *v += sigma * g;
            }
            img.set_pixel(y, x, &px);
        }
    }
}

/// Zeroes a square block of the requested area fraction, fully inside the
/// image, at a seeded random position.
fn occlude(img: &mut ImageBuffer, fraction: f64, rng: &mut ChaCha8Rng) {
    let area = fraction * (img.height() * img.width()) as f64;
    let side = (area.sqrt().round() as usize).clamp(1, img.height().min(img.width()));
    let y0 = rng.gen_range(0..=img.height() - side);
    let x0 = rng.gen_range(0..=img.width() - side);
    let zeros = vec![0.0; img.channels()];
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            img.set_pixel(y, x, &zeros);
        }
    }
}

/// Outcome of one benchmark trial; estimator errors are recorded, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub scene_seed: u64,
    pub perturb_seed: u64,
    pub final_corner_error_cells: Option<f64>,
    pub per_step_corner_error: Vec<f64>,
    pub loc_error_m: Option<f64>,
    pub theta_error_deg: Option<f64>,
    pub error: Option<String>,
}

/// Aggregate benchmark report: corner-error statistics, the mean per-step
/// convergence curve, and the localization metrics table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub trials: usize,
    pub failures: usize,
    /// Fraction of trials with final corner error < 0.25 feature cells.
    pub converged_fraction: f64,
    pub mean_final_corner_error: f64,
    pub median_final_corner_error: f64,
    /// Mean corner error per iteration, averaged over scored trials.
    pub convergence_curve: Vec<f64>,
    pub eval: EvalReport,
    pub outcomes: Vec<TrialOutcome>,
}

/// Generates, runs, and scores one trial; estimator failures land in the
/// outcome instead of aborting.
fn score_trial(trial: &TrialSpec) -> (TrialOutcome, Option<(EvalRecord, f64, Vec<f64>)>) {
    let mut outcome = TrialOutcome {
        scene_seed: trial.scene.seed,
        perturb_seed: trial.seed,
        final_corner_error_cells: None,
        per_step_corner_error: Vec::new(),
        loc_error_m: None,
        theta_error_deg: None,
        error: None,
    };
    let run = || -> Result<(EvalRecord, f64, Vec<f64>), SynthError> {
        let overhead = make_overhead(&trial.scene)?;
        let pair = make_pair(&overhead, trial)?;
        let out = run_traced(&pair.bev, &pair.sat, &trial.config, Some(&pair.gt_cube_cells))?;
        let curve: Vec<f64> = out
            .trace
            .iter()
            .map(|s| s.corner_error.expect("ground truth supplied"))
            .collect();
        let final_err = *curve.last().expect("at least one iteration");
        let h_img = out.homography_image()?;
        let dims = (pair.bev.height(), pair.bev.width());
        let fix = localize(&h_img, &trial.meta, dims, dims.0 as f64 / 4.0)?;
        let record = EvalRecord::new(fix.gps, fix.theta_deg, pair.gt_gps, pair.gt_theta_deg)?;
        Ok((record, final_err, curve))
    };
    match run() {
        Ok((record, final_err, curve)) => {
            outcome.final_corner_error_cells = Some(final_err);
            outcome.per_step_corner_error = curve.clone();
            outcome.loc_error_m = Some(record.loc_err_m);
            outcome.theta_error_deg = Some(record.ori_err_deg);
            (outcome, Some((record, final_err, curve)))
        }
        Err(e) => {
            outcome.error = Some(e.to_string());
            (outcome, None)
        }
    }
}

/// Runs every trial, scores it against its ground truth, and aggregates.
/// Per-trial estimator failures are recorded in the outcome list.
pub fn run_benchmark(suite: &[TrialSpec]) -> Result<BenchReport, SynthError> {
    if suite.is_empty() {
        return Err(SynthError::EmptySuite);
    }
    // trials are independent; run them on a small thread pool and reassemble
    // by index so reports stay deterministic
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
        .min(suite.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<(TrialOutcome, Option<(EvalRecord, f64, Vec<f64>)>)>> =
        (0..suite.len()).map(|_| None).collect();
    let slot_refs: Vec<std::sync::Mutex<&mut Option<_>>> =
        slots.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= suite.len() {
                    break;
                }
                let result = score_trial(&suite[i]);
                **slot_refs[i].lock().expect("slot lock") = Some(result);
            });
        }
    });

    let mut outcomes = Vec::with_capacity(suite.len());
    let mut records = Vec::new();
    let mut finals = Vec::new();
    let mut curves: Vec<Vec<f64>> = Vec::new();
    for slot in slots {
        let (outcome, scored) = slot.expect("every trial ran");
        if let Some((record, final_err, curve)) = scored {
            records.push(record);
            finals.push(final_err);
            curves.push(curve);
        }
        outcomes.push(outcome);
    }

    if records.is_empty() {
        return Err(SynthError::EmptySuite);
    }
    let max_len = curves.iter().map(Vec::len).max().unwrap_or(0);
    let mut convergence_curve = vec![0.0; max_len];
    for curve in &curves {
        for k in 0..max_len {
            // shorter traces hold their final value
            convergence_curve[k] += *curve.get(k).unwrap_or_else(|| curve.last().unwrap());
        }
    }
    for v in convergence_curve.iter_mut() {
        *v /= curves.len() as f64;
    }
    let mean_final = finals.iter().sum::<f64>() / finals.len() as f64;
    let mut sorted = finals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_final = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };
    let converged = finals.iter().filter(|&&e| e < 0.25).count();

    Ok(BenchReport {
        trials: suite.len(),
        failures: suite.len() - records.len(),
        converged_fraction: converged as f64 / finals.len() as f64,
        mean_final_corner_error: mean_final,
        median_final_corner_error: median_final,
        convergence_curve,
        eval: summarize(&records, &Thresholds::default())?,
        outcomes,
    })
}
