//! Online stereo self-calibration: recover the rectifying projective
//! transform by minimizing mono/stereo depth inconsistency.
//!
//! The stereo matcher is treated as a black box; gradients of the scalar
//! objective are estimated with central finite differences on normalized
//! warp parameters and fed to an Adam-style accumulator, with a
//! derivative-free simplex as fallback for rough landscapes.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defocus::{DefocusModel, PsiRange};
use crate::error::{Error, Result};
use crate::geometry::{rotation_homography, warp_image, Homography, RotationAxis, WarpInterp};
use crate::image::Image;
use crate::manifest::DatasetManifest;
use crate::map::{DepthMap, Map2D};
use crate::pfm::read_pfm;
use crate::rng;
use crate::stereo::{match_stereo_full, MatcherConfig, ReferenceSide, StereoRig};

/// Joint-validity floor: below this fraction the consistency loss returns
/// +∞ so the optimizer cannot win by destroying overlap.
pub const MIN_OVERLAP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpSide {
    #[default]
    WarpLeft,
    WarpRight,
    /// Two transformation blocks, one per image (16 parameters).
    WarpBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    #[default]
    Depth,
    Disparity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    L1,
    RelativeL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    AdamLike,
    NelderMead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub side: WarpSide,
    pub loss_space: LossSpace,
    pub loss_kind: LossKind,
    /// Optimizer iterations.
    pub steps: usize,
    /// Initial learning rate on normalized parameters.
    pub step_size: f64,
    /// Per-parameter central-difference step on normalized parameters.
    pub fd_epsilon: f64,
    pub optimizer: OptimizerKind,
    /// Additional seeded-perturbation restarts; the best final loss wins.
    pub restarts: usize,
    /// Stream seed for restart perturbations.
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            side: WarpSide::WarpLeft,
            loss_space: LossSpace::Depth,
            loss_kind: LossKind::L1,
            steps: 150,
            step_size: 1e-3,
            fd_epsilon: 1e-4,
            optimizer: OptimizerKind::AdamLike,
            restarts: 1,
            seed: 0,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.fd_epsilon <= 0.0 {
            return Err(Error::Config("fd_epsilon must be > 0".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if self.step_size <= 0.0 {
            return Err(Error::Config("step_size must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CalibResult {
    /// Recovered transform for the warped image (pixel coordinates).
    pub homography: Homography,
    /// Second transform when `WarpSide::WarpBoth` is configured.
    pub homography_right: Option<Homography>,
    /// Loss at the current iterate, one entry per optimizer step.
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub valid_overlap_fraction: f64,
    pub converged: bool,
}

/// Masked mean L1 (or relative L1) difference between two maps.
///
/// Averages over pixels valid in both maps; +∞ when fewer than
/// [`MIN_OVERLAP_FRACTION`] of all pixels are jointly valid. In relative
/// mode pixels whose reference value is below 1e-6 are excluded (the ratio
/// is meaningless there).
pub fn consistency_loss(mono: &DepthMap, stereo: &DepthMap, kind: LossKind) -> Result<(f64, usize)> {
    consistency_loss_maps(mono, stereo, kind)
}

fn consistency_loss_maps(mono: &Map2D, stereo: &Map2D, kind: LossKind) -> Result<(f64, usize)> {
    mono.same_dims(stereo)?;
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for (m, s) in mono.data().iter().zip(stereo.data()) {
        if !(m.is_finite() && s.is_finite()) {
            continue;
        }
        let m = *m as f64;
        let s = *s as f64;
        match kind {
            LossKind::L1 => {
                sum += (m - s).abs();
                n += 1;
            }
            LossKind::RelativeL1 => {
                if m > 1e-6 {
                    sum += (m - s).abs() / m;
                    n += 1;
                }
            }
        }
    }
    let total = mono.len();
    if (n as f64) < MIN_OVERLAP_FRACTION * total as f64 {
        return Ok((f64::INFINITY, n));
    }
    Ok((sum / n as f64, n))
}

/// Least-squares affine alignment of a relative map onto a metric
/// reference: returns s·rel + t over the relative map's valid pixels.
/// The scale is forced positive; a zero-variance or anti-correlated
/// reference is rejected as non-informative.
pub fn align_scale_shift(relative: &DepthMap, reference: &DepthMap) -> Result<DepthMap> {
    Ok(DepthMap(align_affine_maps(relative, reference)?))
}

fn align_affine_maps(relative: &Map2D, reference: &Map2D) -> Result<Map2D> {
    relative.same_dims(reference)?;
    let mut n = 0usize;
    let (mut sr, mut sf, mut srr, mut srf) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (r, f) in relative.data().iter().zip(reference.data()) {
        if !(r.is_finite() && f.is_finite()) {
            continue;
        }
        let r = *r as f64;
        let f = *f as f64;
        n += 1;
        sr += r;
        sf += f;
        srr += r * r;
        srf += r * f;
    }
    if n < 10 {
        return Err(Error::InsufficientOverlap { got: n, need: 10 });
    }
    let nf = n as f64;
    let denom = nf * srr - sr * sr;
    if denom.abs() < 1e-12 * nf * srr.max(1.0) {
        return Err(Error::NonInformativeReference(0.0));
    }
    let s = (nf * srf - sr * sf) / denom;
    if s <= 0.0 {
        return Err(Error::NonInformativeReference(s));
    }
    let t = (sf - s * sr) / nf;
    Ok(relative.map_valid(|v| (s * v as f64 + t) as f32))
}

/// Maps pixel-space homographies to a normalized frame (centered, scaled by
/// half the larger image side) where all 8 parameters carry comparable
/// magnitudes for the optimizer.
#[derive(Debug, Clone, Copy)]
pub struct ParamNormalizer {
    to_norm: Homography,
    to_pixel: Homography,
}

impl ParamNormalizer {
    pub fn new(width: usize, height: usize) -> Self {
        let s = width.max(height) as f64 / 2.0;
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let to_norm = Homography::from_params(&[
            1.0 / s,
            0.0,
            -cx / s,
            0.0,
            1.0 / s,
            -cy / s,
            0.0,
            0.0,
        ]);
        let to_pixel = Homography::from_params(&[s, 0.0, cx, 0.0, s, cy, 0.0, 0.0]);
        ParamNormalizer { to_norm, to_pixel }
    }

    /// Pixel-space transform for normalized parameters.
    pub fn pixel_homography(&self, p: &[f64; 8]) -> Result<Homography> {
        let hn = Homography::from_params(p);
        self.to_pixel.compose(&hn)?.compose(&self.to_norm)
    }

    /// Normalized parameters representing a pixel-space transform.
    pub fn normalized_params(&self, h: &Homography) -> Result<[f64; 8]> {
        Ok(self.to_norm.compose(h)?.compose(&self.to_pixel)?.params())
    }
}

const IDENTITY_PARAMS: [f64; 8] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

/// The monocular reference used as the consistency anchor. It must belong
/// to a camera the optimizer does not move so the comparison frame stays
/// fixed.
#[derive(Debug, Clone)]
pub struct MonoReference {
    pub depth: DepthMap,
    /// Scale/shift-ambiguous (image-based) references are re-aligned to the
    /// stereo map at every objective evaluation.
    pub relative: bool,
    /// Camera frame the reference lives in.
    pub side: ReferenceSide,
}

/// One evaluation of the calibration objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub n_valid: usize,
    pub total: usize,
}

/// Everything needed to evaluate the objective for one image pair.
pub struct CalibProblem<'a> {
    pub left: &'a Image,
    pub right: &'a Image,
    pub mono: &'a MonoReference,
    pub rig: &'a StereoRig,
    pub matcher: &'a MatcherConfig,
    pub calib: &'a CalibConfig,
    normalizer: ParamNormalizer,
}

impl<'a> CalibProblem<'a> {
    pub fn new(
        left: &'a Image,
        right: &'a Image,
        mono: &'a MonoReference,
        rig: &'a StereoRig,
        matcher: &'a MatcherConfig,
        calib: &'a CalibConfig,
    ) -> Result<Self> {
        left.same_dims(right)?;
        calib.validate()?;
        matcher.validate()?;
        if mono.depth.width() != left.width() || mono.depth.height() != left.height() {
            return Err(Error::DimensionMismatch(
                left.width(),
                left.height(),
                mono.depth.width(),
                mono.depth.height(),
            ));
        }
        // The reference frame must not be the frame being warped.
        let coherent = match calib.side {
            WarpSide::WarpLeft => mono.side == ReferenceSide::Right,
            WarpSide::WarpRight => mono.side == ReferenceSide::Left,
            WarpSide::WarpBoth => true,
        };
        if !coherent {
            return Err(Error::Config(format!(
                "mono reference side {:?} conflicts with warp side {:?}: the reference must \
                 come from the non-warped camera",
                mono.side, calib.side
            )));
        }
        Ok(CalibProblem {
            left,
            right,
            mono,
            rig,
            matcher,
            calib,
            normalizer: ParamNormalizer::new(left.width(), left.height()),
        })
    }

    pub fn normalizer(&self) -> &ParamNormalizer {
        &self.normalizer
    }

    pub fn param_len(&self) -> usize {
        match self.calib.side {
            WarpSide::WarpBoth => 16,
            _ => 8,
        }
    }

    pub fn identity_params(&self) -> Vec<f64> {
        match self.calib.side {
            WarpSide::WarpBoth => {
                let mut p = IDENTITY_PARAMS.to_vec();
                p.extend_from_slice(&IDENTITY_PARAMS);
                p
            }
            _ => IDENTITY_PARAMS.to_vec(),
        }
    }

    /// Pixel-space homographies (left, right) encoded by a parameter vector.
    pub fn homographies(&self, params: &[f64]) -> Result<(Homography, Homography)> {
        assert_eq!(params.len(), self.param_len(), "parameter vector length");
        let slot = |off: usize| -> [f64; 8] {
            let mut p = [0.0; 8];
            p.copy_from_slice(&params[off..off + 8]);
            p
        };
        Ok(match self.calib.side {
            WarpSide::WarpLeft => (
                self.normalizer.pixel_homography(&slot(0))?,
                Homography::identity(),
            ),
            WarpSide::WarpRight => (
                Homography::identity(),
                self.normalizer.pixel_homography(&slot(0))?,
            ),
            WarpSide::WarpBoth => (
                self.normalizer.pixel_homography(&slot(0))?,
                self.normalizer.pixel_homography(&slot(8))?,
            ),
        })
    }

    pub fn eval(&self, params: &[f64]) -> f64 {
        self.eval_full(params).loss
    }

    /// Warp the configured side(s), run the matcher, compare the reference
    /// frame's stereo map against the mono reference. Degenerate transforms
    /// and overlap collapse yield +∞ rather than errors.
    pub fn eval_full(&self, params: &[f64]) -> ObjectiveValue {
        let total = self.left.width() * self.left.height();
        let dead = ObjectiveValue {
            loss: f64::INFINITY,
            n_valid: 0,
            total,
        };
        let (h_left, h_right) = match self.homographies(params) {
            Ok(h) => h,
            Err(_) => return dead,
        };
        let warp_or_borrow = |img: &Image, h: &Homography| -> Result<Option<Image>> {
            if *h == Homography::identity() {
                Ok(None)
            } else {
                Ok(Some(warp_image(img, h, WarpInterp::Bilinear)?))
            }
        };
        let (wl, wr) = match (
            warp_or_borrow(self.left, &h_left),
            warp_or_borrow(self.right, &h_right),
        ) {
            (Ok(l), Ok(r)) => (l, r),
            _ => return dead,
        };
        let left = wl.as_ref().unwrap_or(self.left);
        let right = wr.as_ref().unwrap_or(self.right);

        let matched = match match_stereo_full(left, right, self.rig, self.matcher) {
            Ok(m) => m,
            Err(_) => return dead,
        };
        let (stereo_depth, stereo_disp) = match self.mono.side {
            ReferenceSide::Left => (matched.left_depth, matched.left_disparity),
            ReferenceSide::Right => (matched.right_depth, matched.right_disparity),
        };

        let (mono_map, stereo_map): (Map2D, Map2D) = match self.calib.loss_space {
            LossSpace::Depth => {
                let mono = if self.mono.relative {
                    match align_affine_maps(&self.mono.depth, &stereo_depth) {
                        Ok(m) => m,
                        Err(_) => return dead,
                    }
                } else {
                    self.mono.depth.0.clone()
                };
                (mono, stereo_depth.0)
            }
            LossSpace::Disparity => {
                let fb = self.rig.focal_px * self.rig.baseline_m;
                let to_disp = |z: &Map2D| {
                    z.map_valid(|v| {
                        if v as f64 > 1e-6 {
                            (fb / v as f64) as f32
                        } else {
                            f32::NAN
                        }
                    })
                };
                let mono_depth = if self.mono.relative {
                    match align_affine_maps(&self.mono.depth, &stereo_depth) {
                        Ok(m) => m,
                        Err(_) => return dead,
                    }
                } else {
                    self.mono.depth.0.clone()
                };
                (to_disp(&mono_depth), stereo_disp.0)
            }
        };

        match consistency_loss_maps(&mono_map, &stereo_map, self.calib.loss_kind) {
            Ok((loss, n)) => ObjectiveValue {
                loss,
                n_valid: n,
                total,
            },
            Err(_) => dead,
        }
    }
}

/// Spec-shaped scalar objective for one parameter vector.
pub fn calibration_objective(
    pair: (&Image, &Image),
    h_params: &[f64],
    mono: &MonoReference,
    rig: &StereoRig,
    matcher: &MatcherConfig,
    calib: &CalibConfig,
) -> Result<f64> {
    let problem = CalibProblem::new(pair.0, pair.1, mono, rig, matcher, calib)?;
    Ok(problem.eval(h_params))
}

/// Central finite-difference gradient of the objective, estimated in
/// parallel (the probes are independent pure evaluations). Components
/// whose probes are all non-finite come back as 0.
pub fn fd_gradient(problem: &CalibProblem, x: &[f64], f_x: f64, eps: f64) -> Vec<f64> {
    let n = x.len();
    let probes: Vec<(usize, bool)> = (0..n).flat_map(|k| [(k, false), (k, true)]).collect();
    let values: Vec<f64> = probes
        .par_iter()
        .map(|&(k, plus)| {
            let mut p = x.to_vec();
            p[k] += if plus { eps } else { -eps };
            problem.eval(&p)
        })
        .collect();
    (0..n)
        .map(|k| {
            let f_minus = values[2 * k];
            let f_plus = values[2 * k + 1];
            match (f_plus.is_finite(), f_minus.is_finite()) {
                (true, true) => (f_plus - f_minus) / (2.0 * eps),
                (true, false) if f_x.is_finite() => (f_plus - f_x) / eps,
                (false, true) if f_x.is_finite() => (f_x - f_minus) / eps,
                _ => 0.0,
            }
        })
        .collect()
}

struct BestTracker {
    params: Vec<f64>,
    loss: f64,
}

impl BestTracker {
    fn new(params: Vec<f64>, loss: f64) -> Self {
        BestTracker { params, loss }
    }

    fn offer(&mut self, params: &[f64], loss: f64) {
        if loss < self.loss {
            self.loss = loss;
            self.params = params.to_vec();
        }
    }
}

/// Minimize the calibration objective from an identity initialization.
///
/// Restarts beyond the first perturb the initialization with seeded noise;
/// the best final loss wins. The returned transform never scores worse
/// than the identity initialization. `NoProgress` is reported only when no
/// parameter vector ever produced a finite objective.
pub fn calibrate(
    pair: (&Image, &Image),
    mono: &MonoReference,
    rig: &StereoRig,
    matcher: &MatcherConfig,
    calib: &CalibConfig,
) -> Result<CalibResult> {
    let problem = CalibProblem::new(pair.0, pair.1, mono, rig, matcher, calib)?;
    let min_ref = (0.05 * mono.depth.len() as f64).ceil() as usize;
    let got = mono.depth.valid_count();
    if got < min_ref {
        return Err(Error::InsufficientOverlap { got, need: min_ref });
    }

    let identity = problem.identity_params();
    let init_value = problem.eval_full(&identity);
    let mut best = BestTracker::new(identity.clone(), init_value.loss);
    let mut best_trace: Vec<f64> = vec![init_value.loss];
    let mut best_converged = false;
    let mut best_restart_loss = f64::INFINITY;

    for restart in 0..calib.restarts {
        let mut x = identity.clone();
        if restart > 0 {
            let stream = rng::component_seed(calib.seed, &format!("calib/restart/{restart}"));
            for (k, v) in x.iter_mut().enumerate() {
                let u = rng::pixel_uniform(stream, k as u64, 0);
                *v += 0.02 * (2.0 * u - 1.0);
            }
        }
        let (trace, converged, restart_best) = match calib.optimizer {
            OptimizerKind::AdamLike => run_adam(&problem, x, calib, &mut best),
            OptimizerKind::NelderMead => run_nelder_mead(&problem, x, calib, restart, &mut best),
        };
        if restart_best < best_restart_loss {
            best_restart_loss = restart_best;
            best_trace = trace;
            best_converged = converged;
        }
    }

    if !best.loss.is_finite() {
        return Err(Error::NoProgress);
    }

    let final_value = problem.eval_full(&best.params);
    let (h_left, h_right) = problem.homographies(&best.params)?;
    let (homography, homography_right) = match calib.side {
        WarpSide::WarpLeft => (h_left, None),
        WarpSide::WarpRight => (h_right, None),
        WarpSide::WarpBoth => (h_left, Some(h_right)),
    };
    Ok(CalibResult {
        homography,
        homography_right,
        loss_trace: best_trace,
        final_loss: final_value.loss,
        valid_overlap_fraction: final_value.n_valid as f64 / final_value.total as f64,
        converged: best_converged,
    })
}

/// Adam on FD gradients with a linear learning-rate decay to 10% of the
/// initial rate. Returns (trace, converged, best loss of this run).
fn run_adam(
    problem: &CalibProblem,
    mut x: Vec<f64>,
    calib: &CalibConfig,
    best: &mut BestTracker,
) -> (Vec<f64>, bool, f64) {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let n = x.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut f_cur = problem.eval(&x);
    best.offer(&x, f_cur);
    let mut run_best = f_cur;
    let mut trace = vec![f_cur];
    let mut stall_steps = 0usize;
    let mut converged = false;

    for t in 0..calib.steps {
        let grad = fd_gradient(problem, &x, f_cur, calib.fd_epsilon);
        if grad.iter().all(|g| *g == 0.0) && !f_cur.is_finite() {
            break;
        }
        let lr = calib.step_size * (1.0 - 0.9 * t as f64 / calib.steps as f64);
        for k in 0..n {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * grad[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * grad[k] * grad[k];
            let m_hat = m[k] / (1.0 - BETA1.powi(t as i32 + 1));
            let v_hat = v[k] / (1.0 - BETA2.powi(t as i32 + 1));
            x[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        f_cur = problem.eval(&x);
        best.offer(&x, f_cur);
        trace.push(f_cur);

        let prev_best = run_best;
        run_best = run_best.min(f_cur);
        let improvement = if prev_best.is_finite() && run_best.is_finite() {
            (prev_best - run_best) / prev_best.abs().max(1e-12)
        } else if run_best.is_finite() {
            1.0
        } else {
            0.0
        };
        if improvement < 1e-4 {
            stall_steps += 1;
            if stall_steps >= 10 {
                converged = true;
                break;
            }
        } else {
            stall_steps = 0;
        }
    }
    (trace, converged, run_best)
}

/// Nelder-Mead simplex (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5). The trace records the best vertex per iteration and is
/// non-increasing by construction.
fn run_nelder_mead(
    problem: &CalibProblem,
    x0: Vec<f64>,
    calib: &CalibConfig,
    restart: usize,
    best: &mut BestTracker,
) -> (Vec<f64>, bool, f64) {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;
    let n = x0.len();
    let stream = rng::component_seed(calib.seed, &format!("calib/nm/{restart}"));
    // Initial simplex: x0 plus per-axis offsets with a small seeded jitter.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = problem.eval(&x0);
    best.offer(&x0, f0);
    simplex.push((x0.clone(), f0));
    for k in 0..n {
        let mut p = x0.clone();
        let u = rng::pixel_uniform(stream, k as u64, 1);
        p[k] += 0.02 * (0.5 + u);
        let f = problem.eval(&p);
        best.offer(&p, f);
        simplex.push((p, f));
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    };
    order(&mut simplex);
    let mut trace = vec![simplex[0].1];
    let mut stall_steps = 0usize;
    let mut converged = false;

    for _ in 0..calib.steps {
        let prev_best_f = simplex[0].1;
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(p, _)| p[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|k| centroid[k] + ALPHA * (centroid[k] - worst.0[k]))
            .collect();
        let f_r = problem.eval(&reflect);
        best.offer(&reflect, f_r);

        if f_r < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|k| centroid[k] + GAMMA * (centroid[k] - worst.0[k]))
                .collect();
            let f_e = problem.eval(&expand);
            best.offer(&expand, f_e);
            simplex[n] = if f_e < f_r { (expand, f_e) } else { (reflect, f_r) };
        } else if f_r < simplex[n - 1].1 {
            simplex[n] = (reflect, f_r);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|k| centroid[k] + RHO * (worst.0[k] - centroid[k]))
                .collect();
            let f_c = problem.eval(&contract);
            best.offer(&contract, f_c);
            if f_c < worst.1 {
                simplex[n] = (contract, f_c);
            } else {
                // Shrink toward the best vertex.
                let anchor = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    for k in 0..n {
                        entry.0[k] = anchor[k] + SIGMA * (entry.0[k] - anchor[k]);
                    }
                    entry.1 = problem.eval(&entry.0);
                    best.offer(&entry.0, entry.1);
                }
            }
        }
        order(&mut simplex);
        trace.push(simplex[0].1);

        let improvement = if prev_best_f.is_finite() && simplex[0].1.is_finite() {
            (prev_best_f - simplex[0].1) / prev_best_f.abs().max(1e-12)
        } else if simplex[0].1.is_finite() {
            1.0
        } else {
            0.0
        };
        if improvement < 1e-4 {
            stall_steps += 1;
            if stall_steps >= 10 {
                converged = true;
                break;
            }
        } else {
            stall_steps = 0;
        }
    }
    let run_best = simplex[0].1;
    (trace, converged, run_best)
}

/// Objective over a grid of rotation compositions applied to the warped
/// side: rows follow `axis1` angles, columns `axis2`. Both grids must be
/// non-empty and contain zero.
pub fn landscape_scan(
    problem: &CalibProblem,
    axis1: (RotationAxis, &[f64]),
    axis2: (RotationAxis, &[f64]),
) -> Result<Vec<Vec<f64>>> {
    for (name, grid) in [("axis1", axis1.1), ("axis2", axis2.1)] {
        if grid.is_empty() {
            return Err(Error::Config(format!("{name} grid is empty")));
        }
        if !grid.iter().any(|a| a.abs() < 1e-12) {
            return Err(Error::Config(format!("{name} grid must contain 0")));
        }
    }
    let k = &problem.rig.intrinsics;
    let mut rows = Vec::with_capacity(axis1.1.len());
    for &a1 in axis1.1 {
        let mut row = Vec::with_capacity(axis2.1.len());
        for &a2 in axis2.1 {
            let h = rotation_homography(axis1.0, a1, k)
                .compose(&rotation_homography(axis2.0, a2, k))?;
            let p = problem.normalizer.normalized_params(&h)?;
            let mut params = p.to_vec();
            if problem.param_len() == 16 {
                params.extend_from_slice(&IDENTITY_PARAMS);
            }
            row.push(problem.eval(&params));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Rank manifest records by the fraction of valid ground-truth pixels
/// whose depth falls inside the mono operating range; return the top `k`
/// with their fractions. Ties keep record order.
pub fn select_calibration_frames(
    manifest: &DatasetManifest,
    base_dir: &Path,
    model: &DefocusModel,
    range: &PsiRange,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if manifest.records.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let (z_near, z_far) = model.valid_depth_range(range)?;
    let mut scored = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let gt = read_pfm(&base_dir.join(&rec.gt_depth_path))?;
        let mut valid = 0usize;
        let mut inside = 0usize;
        for &z in gt.data() {
            if z.is_finite() {
                valid += 1;
                let z = z as f64;
                if z >= z_near && z <= z_far {
                    inside += 1;
                }
            }
        }
        let fraction = if valid > 0 {
            inside as f64 / valid as f64
        } else {
            0.0
        };
        scored.push((rec.index, fraction));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    scored.truncate(k);
    Ok(scored)
}

/// Rolling-mean consistency monitor that raises an alarm when the loss
/// drifts above `alpha` times the calibration-time baseline.
#[derive(Debug, Clone)]
pub struct DriftMonitor {
    baseline: f64,
    alpha: f64,
    window: usize,
    recent: VecDeque<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct DriftSample {
    pub loss: f64,
    pub rolling_mean: f64,
    pub alarm: bool,
}

impl DriftMonitor {
    pub fn new(baseline_loss: f64, window: usize, alpha: f64) -> Result<Self> {
        if window < 1 {
            return Err(Error::Config("drift window must be >= 1".into()));
        }
        if !(baseline_loss.is_finite() && baseline_loss >= 0.0) {
            return Err(Error::Config(format!(
                "baseline loss must be finite and non-negative, got {baseline_loss}"
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        Ok(DriftMonitor {
            baseline: baseline_loss,
            alpha,
            window,
            recent: VecDeque::new(),
        })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    /// Ingest one frame's mono/stereo pair.
    pub fn push(
        &mut self,
        mono: &DepthMap,
        stereo: &DepthMap,
        kind: LossKind,
    ) -> Result<DriftSample> {
        let (loss, _) = consistency_loss(mono, stereo, kind)?;
        Ok(self.push_loss(loss))
    }

    /// Ingest a precomputed per-frame loss.
    pub fn push_loss(&mut self, loss: f64) -> DriftSample {
        self.recent.push_back(loss);
        if self.recent.len() > self.window {
            self.recent.pop_front();
        }
        let rolling_mean = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
        DriftSample {
            loss,
            rolling_mean,
            alarm: rolling_mean > self.alpha * self.baseline,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Map2D;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn loss_identical_maps_zero() {
        let a = DepthMap(Map2D::filled(10, 10, 1.5));
        let (loss, n) = consistency_loss(&a, &a, LossKind::L1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(n, 100);
    }

    #[test]
    fn loss_constant_offset() {
        let a = DepthMap(Map2D::filled(10, 10, 1.5));
        let b = DepthMap(Map2D::filled(10, 10, 1.8));
        let (loss, _) = consistency_loss(&b, &a, LossKind::L1).unwrap();
        assert_relative_eq!(loss, 0.3, max_relative = 1e-6);
    }

    #[test]
    fn loss_masked_mean_matches_scalar_oracle() {
        let mut rng = rng::component_rng(17, "test/loss_oracle");
        for _ in 0..100 {
            let w = rng.random_range(3..12);
            let h = rng.random_range(3..12);
            let mut mono = DepthMap::new(w, h);
            let mut stereo = DepthMap::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    if rng.random_range(0.0..1.0) > 0.3 {
                        mono.set(x, y, rng.random_range(0.5..5.0f64) as f32);
                    }
                    if rng.random_range(0.0..1.0) > 0.3 {
                        stereo.set(x, y, rng.random_range(0.5..5.0f64) as f32);
                    }
                }
            }
            for kind in [LossKind::L1, LossKind::RelativeL1] {
                // Scalar loop oracle over the joint-valid intersection.
                let mut sum = 0.0f64;
                let mut n = 0usize;
                for y in 0..h {
                    for x in 0..w {
                        if mono.is_valid(x, y) && stereo.is_valid(x, y) {
                            let m = mono.get(x, y) as f64;
                            let s = stereo.get(x, y) as f64;
                            match kind {
                                LossKind::L1 => {
                                    sum += (m - s).abs();
                                    n += 1;
                                }
                                LossKind::RelativeL1 => {
                                    if m > 1e-6 {
                                        sum += (m - s).abs() / m;
                                        n += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                let expect = if (n as f64) < 0.01 * (w * h) as f64 {
                    f64::INFINITY
                } else {
                    sum / n as f64
                };
                let (got, got_n) = consistency_loss(&mono, &stereo, kind).unwrap();
                assert_eq!(got_n, n);
                if expect.is_infinite() {
                    assert!(got.is_infinite());
                } else {
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn loss_overlap_collapse_sentinel() {
        let mut mono = DepthMap::new(20, 20);
        let stereo = DepthMap(Map2D::filled(20, 20, 1.0));
        // 3 valid pixels < 1% of 400.
        mono.set(0, 0, 1.0);
        mono.set(1, 0, 1.0);
        mono.set(2, 0, 1.0);
        let (loss, n) = consistency_loss(&mono, &stereo, LossKind::L1).unwrap();
        assert!(loss.is_infinite());
        assert_eq!(n, 3);
    }

    #[test]
    fn align_recovers_affine_relationship() {
        let mut reference = DepthMap::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                reference.set(x, y, 1.0 + 0.1 * (x + 8 * y) as f32);
            }
        }
        // relative = 2·ref + 0.1 → alignment must reproduce ref.
        let relative = DepthMap(reference.map_valid(|v| 2.0 * v + 0.1));
        let aligned = align_scale_shift(&relative, &reference).unwrap();
        for (a, r) in aligned.data().iter().zip(reference.data()) {
            assert_relative_eq!(*a as f64, *r as f64, max_relative = 1e-6);
        }
        // relative == ref → s = 1, t = 0.
        let aligned = align_scale_shift(&reference, &reference).unwrap();
        for (a, r) in aligned.data().iter().zip(reference.data()) {
            assert_relative_eq!(*a as f64, *r as f64, max_relative = 1e-6);
        }
    }

    #[test]
    fn align_rejects_degenerate_inputs() {
        // Constant reference: no scale information.
        let rel = {
            let mut m = DepthMap::new(8, 8);
            for y in 0..8 {
                for x in 0..8 {
                    m.set(x, y, 1.0 + 0.05 * x as f32);
                }
            }
            m
        };
        let flat = DepthMap(Map2D::filled(8, 8, 2.0));
        assert!(matches!(
            align_scale_shift(&rel, &flat),
            Err(Error::NonInformativeReference(_))
        ));
        // Constant relative map: scale underdetermined.
        assert!(matches!(
            align_scale_shift(&flat, &rel),
            Err(Error::NonInformativeReference(_))
        ));
        // Too few joint pixels.
        let mut sparse = DepthMap::new(8, 8);
        sparse.set(0, 0, 1.0);
        assert!(matches!(
            align_scale_shift(&sparse, &rel),
            Err(Error::InsufficientOverlap { .. })
        ));
        // Anti-correlated reference: forced-positive scale fails.
        let anti = DepthMap(rel.map_valid(|v| 10.0 - v));
        assert!(matches!(
            align_scale_shift(&rel, &anti),
            Err(Error::NonInformativeReference(_))
        ));
    }

    #[test]
    fn normalizer_roundtrip() {
        let norm = ParamNormalizer::new(256, 192);
        let mut rng = rng::component_rng(23, "test/norm");
        for _ in 0..50 {
            let mut p = [0.0; 8];
            for (i, v) in p.iter_mut().enumerate() {
                *v = rng.random_range(-0.2..0.2) * if i == 6 || i == 7 { 0.1 } else { 1.0 };
            }
            p[0] += 1.0;
            p[4] += 1.0;
            let h = norm.pixel_homography(&p).unwrap();
            let back = norm.normalized_params(&h).unwrap();
            for k in 0..8 {
                assert_relative_eq!(back[k], p[k], epsilon = 1e-9, max_relative = 1e-9);
            }
        }
        // Identity params map to the identity transform.
        let h = norm.pixel_homography(&IDENTITY_PARAMS).unwrap();
        assert!(h.mean_corner_distance(&Homography::identity(), 256, 192) < 1e-12);
    }

    #[test]
    fn drift_monitor_thresholds() {
        let mut m = DriftMonitor::new(0.1, 3, 1.5).unwrap();
        // Clean stream at baseline level never alarms.
        for _ in 0..50 {
            let s = m.push_loss(0.1);
            assert!(!s.alarm);
        }
        // Injected degradation alarms within the window.
        let mut alarm_at = None;
        for i in 0..10 {
            let s = m.push_loss(0.4);
            if s.alarm {
                alarm_at = Some(i);
                break;
            }
        }
        assert!(alarm_at.unwrap() <= 2);
    }

    #[test]
    fn drift_window_one_is_per_frame_threshold() {
        let mut m = DriftMonitor::new(0.1, 1, 1.5).unwrap();
        assert!(!m.push_loss(0.14).alarm);
        assert!(m.push_loss(0.16).alarm);
        assert!(!m.push_loss(0.1).alarm);
    }

    #[test]
    fn drift_huge_alpha_never_alarms() {
        let mut m = DriftMonitor::new(0.1, 3, 1e9).unwrap();
        for _ in 0..20 {
            assert!(!m.push_loss(1000.0).alarm);
        }
    }
}
