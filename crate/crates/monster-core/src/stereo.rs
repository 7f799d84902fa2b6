//! Classical block-matching stereo: cost volume, winner-take-all disparity
//! with parabola subpixel refinement, left-right consistency and
//! disparity ↔ depth conversion.
//!
//! The matcher is deterministic: identical inputs produce bit-identical
//! outputs regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::image::Image;
use crate::map::{ConfidenceMap, DepthMap, DisparityMap, Map2D};

/// Sentinel cost for windows that leave the image or touch invalid pixels.
pub const COST_SENTINEL: f64 = 1e9;

/// Disparities at or below this are treated as unreliable for depth
/// conversion (z = fB/d blows up).
pub const MIN_VALID_DISPARITY: f64 = 0.25;

/// Physical stereo rig: baseline plus pixel-space focal length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    /// Camera separation, meters.
    pub baseline_m: f64,
    /// Focal length in pixels used for z = f·B/d.
    pub focal_px: f64,
    pub intrinsics: Intrinsics,
}

impl StereoRig {
    pub fn new(baseline_m: f64, focal_px: f64, intrinsics: Intrinsics) -> Result<Self> {
        if baseline_m <= 0.0 || focal_px <= 0.0 {
            return Err(Error::Config(format!(
                "stereo rig requires positive baseline and focal length, got {baseline_m}, {focal_px}"
            )));
        }
        Ok(StereoRig {
            baseline_m,
            focal_px,
            intrinsics,
        })
    }

    /// Disparity of an object at depth z meters.
    pub fn disparity_at(&self, z: f64) -> f64 {
        self.focal_px * self.baseline_m / z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Sum of absolute differences over the window.
    #[default]
    Sad,
    /// 1 − zero-mean normalized cross-correlation.
    Zncc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    /// Window radius; the matching window is (2r+1)².
    pub block_radius: usize,
    /// Largest disparity searched, pixels.
    pub max_disp: usize,
    pub cost: CostKind,
    /// Left-right consistency tolerance, pixels.
    pub lr_threshold: f64,
    /// Best-vs-second-best ratio below which a pixel is rejected; 1.0
    /// disables the test.
    pub uniqueness_ratio: f64,
    /// Optional spatial box filter over each cost slice (radius, 0 = off);
    /// used to smooth the objective for gradient checks.
    pub cost_smooth_radius: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            block_radius: 3,
            max_disp: 64,
            cost: CostKind::Sad,
            lr_threshold: 1.0,
            uniqueness_ratio: 1.05,
            cost_smooth_radius: 0,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_radius < 1 {
            return Err(Error::Config("block_radius must be >= 1".into()));
        }
        if self.max_disp < 1 {
            return Err(Error::Config("max_disp must be >= 1".into()));
        }
        if self.lr_threshold < 0.0 {
            return Err(Error::Config("lr_threshold must be >= 0".into()));
        }
        if self.uniqueness_ratio < 1.0 {
            return Err(Error::Config("uniqueness_ratio must be >= 1".into()));
        }
        Ok(())
    }
}

/// Matching cost per (pixel, disparity). Slices are stored disparity-major:
/// `costs[d * w * h + y * w + x]`.
#[derive(Debug, Clone)]
pub struct CostVolume {
    width: usize,
    height: usize,
    max_disp: usize,
    costs: Vec<f64>,
}

impl CostVolume {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn max_disp(&self) -> usize {
        self.max_disp
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize, d: usize) -> f64 {
        self.costs[d * self.width * self.height + y * self.width + x]
    }

    fn slice(&self, d: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.costs[d * n..(d + 1) * n]
    }
}

/// Box-filter sum over a (2r+1)² window via prefix sums. Entries whose
/// window leaves the image are left untouched.
fn box_filter_sum(src: &[f64], w: usize, h: usize, r: usize, tmp: &mut [f64], out: &mut [f64]) {
    if w < 2 * r + 1 {
        return;
    }
    // Horizontal pass: running window sum per row.
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let mut acc = 0.0;
        for v in row.iter().take(2 * r + 1) {
            acc += v;
        }
        tmp[y * w + r] = acc;
        for x in r + 1..w - r {
            acc += row[x + r] - row[x - r - 1];
            tmp[y * w + x] = acc;
        }
    }
    // Vertical pass.
    if h < 2 * r + 1 {
        return;
    }
    for x in r..w - r {
        let mut acc = 0.0;
        for y in 0..2 * r + 1 {
            acc += tmp[y * w + x];
        }
        out[r * w + x] = acc;
        for y in r + 1..h - r {
            acc += tmp[(y + r) * w + x] - tmp[(y - r - 1) * w + x];
            out[y * w + x] = acc;
        }
    }
}

struct LumaPlanes {
    lum: Vec<f64>,
    valid: Vec<bool>,
}

fn luma_planes(img: &Image) -> LumaPlanes {
    let g = img.to_luma();
    let lum = g.samples().iter().map(|&v| v as f64).collect();
    let valid = g.validity().to_vec();
    LumaPlanes { lum, valid }
}

/// Build the cost volume comparing the left window at (x, y) with the right
/// window at (x − d, y). Windows leaving the image or covering an invalid
/// pixel cost [`COST_SENTINEL`].
pub fn compute_cost_volume(left: &Image, right: &Image, cfg: &MatcherConfig) -> Result<CostVolume> {
    left.same_dims(right)?;
    cfg.validate()?;
    let w = left.width();
    let h = left.height();
    let n = w * h;
    let r = cfg.block_radius;
    let l = luma_planes(left);
    let rt = luma_planes(right);

    let mut costs = vec![COST_SENTINEL; n * (cfg.max_disp + 1)];

    // Precomputed right-image window sums for ZNCC (indexed at x − d).
    let zn = match cfg.cost {
        CostKind::Zncc => {
            let mut sl = vec![0.0; n];
            let mut sll = vec![0.0; n];
            let mut sr = vec![0.0; n];
            let mut srr = vec![0.0; n];
            let mut tmp = vec![0.0; n];
            let sq_l: Vec<f64> = l.lum.iter().map(|v| v * v).collect();
            let sq_r: Vec<f64> = rt.lum.iter().map(|v| v * v).collect();
            box_filter_sum(&l.lum, w, h, r, &mut tmp, &mut sl);
            box_filter_sum(&sq_l, w, h, r, &mut tmp, &mut sll);
            box_filter_sum(&rt.lum, w, h, r, &mut tmp, &mut sr);
            box_filter_sum(&sq_r, w, h, r, &mut tmp, &mut srr);
            Some((sl, sll, sr, srr))
        }
        CostKind::Sad => None,
    };

    costs
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(d, plane)| {
            let mut field = vec![0.0; n];
            let mut bad = vec![0.0; n];
            let mut sum = vec![0.0; n];
            let mut badsum = vec![0.0; n];
            let mut tmp = vec![0.0; n];

            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if x < d || !l.valid[i] || !rt.valid[i - d] {
                        bad[i] = 1.0;
                        continue;
                    }
                    field[i] = match cfg.cost {
                        CostKind::Sad => (l.lum[i] - rt.lum[i - d]).abs(),
                        CostKind::Zncc => l.lum[i] * rt.lum[i - d],
                    };
                }
            }
            box_filter_sum(&field, w, h, r, &mut tmp, &mut sum);
            box_filter_sum(&bad, w, h, r, &mut tmp, &mut badsum);

            if h < 2 * r + 1 || w < 2 * r + 1 {
                return;
            }
            let win = ((2 * r + 1) * (2 * r + 1)) as f64;
            for y in r..h - r {
                // Both windows must be fully inside: x−d−r >= 0.
                let x_lo = r.max(d + r);
                for x in x_lo..w - r {
                    let i = y * w + x;
                    if badsum[i] > 0.0 {
                        continue;
                    }
                    plane[i] = match (&zn, cfg.cost) {
                        (_, CostKind::Sad) => sum[i],
                        (Some((sl, sll, sr, srr)), CostKind::Zncc) => {
                            let j = i - d;
                            let cov = sum[i] - sl[i] * sr[j] / win;
                            let var_l = sll[i] - sl[i] * sl[i] / win;
                            let var_r = srr[j] - sr[j] * sr[j] / win;
                            if var_l < 1e-12 || var_r < 1e-12 {
                                COST_SENTINEL
                            } else {
                                1.0 - cov / (var_l * var_r).sqrt()
                            }
                        }
                        (None, CostKind::Zncc) => unreachable!(),
                    };
                }
            }
        });

    let mut cv = CostVolume {
        width: w,
        height: h,
        max_disp: cfg.max_disp,
        costs,
    };
    if cfg.cost_smooth_radius > 0 {
        smooth_cost_volume(&mut cv, cfg.cost_smooth_radius);
    }
    Ok(cv)
}

/// Box-average each disparity slice; windows touching a sentinel stay
/// sentinel so invalid regions never leak plausible costs.
fn smooth_cost_volume(cv: &mut CostVolume, radius: usize) {
    let w = cv.width;
    let h = cv.height;
    let n = w * h;
    let r = radius;
    if w < 2 * r + 1 || h < 2 * r + 1 {
        return;
    }
    let win = ((2 * r + 1) * (2 * r + 1)) as f64;
    cv.costs.par_chunks_mut(n).for_each(|plane| {
        let mut field = vec![0.0; n];
        let mut bad = vec![0.0; n];
        let mut sum = vec![0.0; n];
        let mut badsum = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for i in 0..n {
            if plane[i] >= COST_SENTINEL {
                bad[i] = 1.0;
            } else {
                field[i] = plane[i];
            }
        }
        box_filter_sum(&field, w, h, r, &mut tmp, &mut sum);
        box_filter_sum(&bad, w, h, r, &mut tmp, &mut badsum);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let interior = x >= r && x < w - r && y >= r && y < h - r;
                plane[i] = if !interior || badsum[i] > 0.0 {
                    COST_SENTINEL
                } else {
                    sum[i] / win
                };
            }
        }
    });
}

/// Winner-take-all disparity with parabola subpixel refinement and a
/// best-vs-second-best confidence.
///
/// Ties in the argmin break toward the smaller disparity. The second best
/// excludes the immediate neighbors of the winner (|d₂ − d*| > 1).
pub fn disparity_wta(cv: &CostVolume, cfg: &MatcherConfig) -> (DisparityMap, ConfidenceMap) {
    let w = cv.width;
    let h = cv.height;
    let dmax = cv.max_disp;
    let mut disp = DisparityMap::new(w, h);
    let mut conf = ConfidenceMap::filled(w, h, 0.0);

    let disp_rows: Vec<_> = disp.data_mut().chunks_mut(w).collect();
    let conf_rows: Vec<_> = conf.data_mut().chunks_mut(w).collect();

    disp_rows
        .into_par_iter()
        .zip(conf_rows)
        .enumerate()
        .for_each(|(y, (drow, crow))| {
            // Gather this row's costs for all disparities; the scan then
            // stays cache-local.
            let mut rowbuf = vec![0.0f64; (dmax + 1) * w];
            for d in 0..=dmax {
                let slice = cv.slice(d);
                rowbuf[d * w..(d + 1) * w].copy_from_slice(&slice[y * w..(y + 1) * w]);
            }
            for x in 0..w {
                let cost_at = |d: usize| rowbuf[d * w + x];
                let mut best_d = 0usize;
                let mut best_c = cost_at(0);
                for d in 1..=dmax {
                    let c = cost_at(d);
                    if c < best_c {
                        best_c = c;
                        best_d = d;
                    }
                }
                if best_c >= COST_SENTINEL {
                    continue;
                }
                // Second best outside the winner's immediate neighborhood.
                let mut second_c = f64::INFINITY;
                for d in 0..=dmax {
                    if d + 1 >= best_d && d <= best_d + 1 {
                        continue;
                    }
                    let c = cost_at(d);
                    if c < second_c {
                        second_c = c;
                    }
                }
                if second_c.is_infinite() {
                    // Search range too small to certify uniqueness.
                    continue;
                }
                if second_c < best_c * cfg.uniqueness_ratio || (best_c == 0.0 && second_c == 0.0) {
                    continue;
                }
                let confidence = if second_c > 0.0 {
                    (1.0 - best_c / second_c).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let mut d_refined = best_d as f64;
                if best_d > 0 && best_d < dmax {
                    let cm = cost_at(best_d - 1);
                    let cp = cost_at(best_d + 1);
                    if cm < COST_SENTINEL && cp < COST_SENTINEL {
                        let denom = cm - 2.0 * best_c + cp;
                        if denom > 0.0 {
                            d_refined += ((cm - cp) / (2.0 * denom)).clamp(-0.5, 0.5);
                        }
                    }
                }
                drow[x] = d_refined as f32;
                crow[x] = confidence as f32;
            }
        });

    (disp, conf)
}

/// Keep a left-map pixel iff the right map agrees at the corresponding
/// column: |dl(x,y) − dr(round(x − dl(x,y)), y)| ≤ threshold.
pub fn lr_consistency(
    dl: &DisparityMap,
    dr: &DisparityMap,
    threshold: f64,
) -> Result<DisparityMap> {
    dl.same_dims(dr)?;
    let w = dl.width();
    let h = dl.height();
    let mut out = dl.clone();
    for y in 0..h {
        for x in 0..w {
            if !dl.is_valid(x, y) {
                continue;
            }
            let d = dl.get(x, y) as f64;
            let xr = (x as f64 - d).round();
            if xr < 0.0 || xr >= w as f64 {
                out.set_invalid(x, y);
                continue;
            }
            let xr = xr as usize;
            if !dr.is_valid(xr, y) || (d - dr.get(xr, y) as f64).abs() > threshold {
                out.set_invalid(x, y);
            }
        }
    }
    Ok(out)
}

/// z = f·B/d. Disparities at or below [`MIN_VALID_DISPARITY`] are
/// invalidated rather than erroring.
pub fn disparity_to_depth(d: &DisparityMap, rig: &StereoRig) -> DepthMap {
    let fb = rig.focal_px * rig.baseline_m;
    let mut out = DepthMap::new(d.width(), d.height());
    for y in 0..d.height() {
        for x in 0..d.width() {
            if !d.is_valid(x, y) {
                continue;
            }
            let dv = d.get(x, y) as f64;
            if dv > MIN_VALID_DISPARITY {
                out.set(x, y, (fb / dv) as f32);
            }
        }
    }
    out
}

/// d = f·B/z. Valid non-positive depths are an input error.
pub fn depth_to_disparity(z: &DepthMap, rig: &StereoRig) -> Result<DisparityMap> {
    let fb = rig.focal_px * rig.baseline_m;
    let mut out = DisparityMap::new(z.width(), z.height());
    for y in 0..z.height() {
        for x in 0..z.width() {
            if !z.is_valid(x, y) {
                continue;
            }
            let zv = z.get(x, y) as f64;
            if zv <= 0.0 {
                return Err(Error::NonPositiveDepth(zv));
            }
            out.set(x, y, (fb / zv) as f32);
        }
    }
    Ok(out)
}

fn flip_map(m: &Map2D) -> Map2D {
    let w = m.width();
    let h = m.height();
    let mut out = Map2D::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, m.get(w - 1 - x, y));
        }
    }
    out
}

/// Which image the returned depth map is registered to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSide {
    #[default]
    Left,
    Right,
}

/// Full two-sided matching output.
#[derive(Debug, Clone)]
pub struct StereoMatch {
    pub left_disparity: DisparityMap,
    pub right_disparity: DisparityMap,
    pub left_depth: DepthMap,
    pub right_depth: DepthMap,
    pub left_confidence: ConfidenceMap,
    pub right_confidence: ConfidenceMap,
}

/// End-to-end matcher: cost volumes in both directions, WTA, left-right
/// consistency, depth conversion. Expects a rectified pair.
pub fn match_stereo_full(
    left: &Image,
    right: &Image,
    rig: &StereoRig,
    cfg: &MatcherConfig,
) -> Result<StereoMatch> {
    let cv_l = compute_cost_volume(left, right, cfg)?;
    let (dl, cl) = disparity_wta(&cv_l, cfg);

    // Right-referenced matching reuses the same kernel on mirrored images:
    // cost'(x,y,d) then compares right(w−1−x) with left(w−1−x+d).
    let lf = left.flip_horizontal();
    let rf = right.flip_horizontal();
    let cv_r = compute_cost_volume(&rf, &lf, cfg)?;
    let (dr_flipped, cr_flipped) = disparity_wta(&cv_r, cfg);
    let dr = DisparityMap(flip_map(&dr_flipped));
    let cr = ConfidenceMap(flip_map(&cr_flipped));

    let dl_ok = lr_consistency(&dl, &dr, cfg.lr_threshold)?;
    // The right-primary rule |dr(x) − dl(x + dr(x))| ≤ t is the mirrored
    // left-primary rule.
    let dr_ok_flipped = lr_consistency(
        &DisparityMap(flip_map(&dr)),
        &DisparityMap(flip_map(&dl)),
        cfg.lr_threshold,
    )?;
    let dr_ok = DisparityMap(flip_map(&dr_ok_flipped));

    let zero_where_invalid = |conf: &ConfidenceMap, disp: &DisparityMap| {
        let mut out = conf.clone();
        for y in 0..out.height() {
            for x in 0..out.width() {
                if !disp.is_valid(x, y) {
                    out.set(x, y, 0.0);
                }
            }
        }
        out
    };
    let cl = zero_where_invalid(&cl, &dl_ok);
    let cr = zero_where_invalid(&cr, &dr_ok);

    Ok(StereoMatch {
        left_depth: disparity_to_depth(&dl_ok, rig),
        right_depth: disparity_to_depth(&dr_ok, rig),
        left_disparity: dl_ok,
        right_disparity: dr_ok,
        left_confidence: cl,
        right_confidence: cr,
    })
}

/// Left-referenced depth and confidence (the common case).
pub fn match_stereo(
    left: &Image,
    right: &Image,
    rig: &StereoRig,
    cfg: &MatcherConfig,
) -> Result<(DepthMap, ConfidenceMap)> {
    let m = match_stereo_full(left, right, rig, cfg)?;
    Ok((m.left_depth, m.left_confidence))
}
