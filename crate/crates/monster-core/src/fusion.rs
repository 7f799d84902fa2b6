//! Per-pixel fusion of mono and stereo depth maps via a binary source mask,
//! plus the evaluation metrics (L1, relative L1, per-depth-bin MAPE).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{ConfidenceMap, DepthMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Pick mono where its confidence beats stereo's by the margin.
    Confidence,
    /// Pick mono wherever its depth lies inside the mono operating range.
    #[default]
    RangeGated,
    /// Range gate first, confidence comparison inside the gate.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionPolicy {
    pub mode: FusionMode,
    /// Mono operating range (z_near, z_far) in meters for the gated modes.
    pub mono_range: (f64, f64),
    /// Confidence advantage mono needs before it is selected.
    pub confidence_margin: f64,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        FusionPolicy {
            mode: FusionMode::RangeGated,
            // valid_depth_range at C = 9, z_n = 0.7 m.
            mono_range: (0.39375, 1.0161290322580645),
            confidence_margin: 0.0,
        }
    }
}

impl FusionPolicy {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.mode, FusionMode::RangeGated | FusionMode::Hybrid)
            && self.mono_range.0 >= self.mono_range.1
        {
            return Err(Error::InvalidRange(self.mono_range.0, self.mono_range.1));
        }
        if self.confidence_margin < 0.0 {
            return Err(Error::Config(format!(
                "confidence_margin must be >= 0, got {}",
                self.confidence_margin
            )));
        }
        Ok(())
    }
}

/// Which source produced each fused pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SourceLabel {
    Stereo = 0,
    Mono = 1,
    Invalid = 2,
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub depth: DepthMap,
    /// One label per pixel, row-major.
    pub source_mask: Vec<SourceLabel>,
}

/// Fuse per pixel. A pixel valid in exactly one source always takes that
/// source regardless of mode; the fused value is bit-identical to the
/// selected source.
pub fn fuse(
    stereo: (&DepthMap, &ConfidenceMap),
    mono: (&DepthMap, &ConfidenceMap),
    policy: &FusionPolicy,
) -> Result<FusionResult> {
    policy.validate()?;
    let (sd, sc) = stereo;
    let (md, mc) = mono;
    sd.same_dims(md)?;
    sd.same_dims(sc)?;
    sd.same_dims(mc)?;

    let w = sd.width();
    let h = sd.height();
    let mut depth = DepthMap::new(w, h);
    let mut mask = vec![SourceLabel::Invalid; w * h];

    for y in 0..h {
        for x in 0..w {
            let s_ok = sd.is_valid(x, y);
            let m_ok = md.is_valid(x, y);
            let pick_mono = match (s_ok, m_ok) {
                (false, false) => continue,
                (false, true) => true,
                (true, false) => false,
                (true, true) => {
                    let in_gate = {
                        let z = md.get(x, y) as f64;
                        z >= policy.mono_range.0 && z <= policy.mono_range.1
                    };
                    let conf_wins = mc.get(x, y) as f64
                        > sc.get(x, y) as f64 + policy.confidence_margin;
                    match policy.mode {
                        FusionMode::Confidence => conf_wins,
                        FusionMode::RangeGated => in_gate,
                        FusionMode::Hybrid => in_gate && conf_wins,
                    }
                }
            };
            let src = if pick_mono { md } else { sd };
            depth.set(x, y, src.get(x, y));
            mask[y * w + x] = if pick_mono {
                SourceLabel::Mono
            } else {
                SourceLabel::Stereo
            };
        }
    }
    Ok(FusionResult {
        depth,
        source_mask: mask,
    })
}

/// Per-depth-bin error metric.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMetric {
    pub lo: f64,
    pub hi: f64,
    /// 100 · mean(|pred − gt| / gt) over the bin; NaN when count is 0.
    pub mape_percent: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean |pred − gt| in meters over jointly valid pixels.
    pub l1: f64,
    /// Mean |pred − gt| / gt.
    pub rel_l1: f64,
    pub n_valid: usize,
    pub mape_bins: Vec<BinMetric>,
}

/// Accuracy of a prediction against ground truth over jointly valid pixels;
/// `bins` are disjoint [lo, hi) depth intervals binned on gt. Empty
/// intersections are reported with count 0, never as an error.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap, bins: &[(f64, f64)]) -> Result<EvalReport> {
    pred.same_dims(gt)?;
    for (i, &(lo, hi)) in bins.iter().enumerate() {
        if lo >= hi {
            return Err(Error::InvalidRange(lo, hi));
        }
        for &(lo2, hi2) in &bins[i + 1..] {
            if lo < hi2 && lo2 < hi {
                return Err(Error::Config(format!(
                    "bins [{lo},{hi}) and [{lo2},{hi2}) overlap"
                )));
            }
        }
    }

    let mut n = 0usize;
    let mut l1_sum = 0.0f64;
    let mut rel_sum = 0.0f64;
    let mut bin_sum = vec![0.0f64; bins.len()];
    let mut bin_n = vec![0usize; bins.len()];

    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if !pred.is_valid(x, y) || !gt.is_valid(x, y) {
                continue;
            }
            let p = pred.get(x, y) as f64;
            let g = gt.get(x, y) as f64;
            if g <= 0.0 {
                return Err(Error::NonPositiveDepth(g));
            }
            let abs = (p - g).abs();
            n += 1;
            l1_sum += abs;
            rel_sum += abs / g;
            for (i, &(lo, hi)) in bins.iter().enumerate() {
                if g >= lo && g < hi {
                    bin_sum[i] += abs / g;
                    bin_n[i] += 1;
                    break;
                }
            }
        }
    }

    let mape_bins = bins
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| BinMetric {
            lo,
            hi,
            mape_percent: if bin_n[i] > 0 {
                100.0 * bin_sum[i] / bin_n[i] as f64
            } else {
                f64::NAN
            },
            count: bin_n[i],
        })
        .collect();

    Ok(EvalReport {
        l1: if n > 0 { l1_sum / n as f64 } else { f64::NAN },
        rel_l1: if n > 0 { rel_sum / n as f64 } else { f64::NAN },
        n_valid: n,
        mape_bins,
    })
}

/// MAPE curve binned uniformly in inverse depth over `range`, resolving
/// near depths finely (disparity-uniform). Bin centers are harmonic
/// midpoints. Empty bins come back with count 0.
pub fn mape_by_depth(
    pred: &DepthMap,
    gt: &DepthMap,
    n_bins: usize,
    range: (f64, f64),
) -> Result<Vec<BinMetric>> {
    assert!(n_bins >= 2, "mape_by_depth needs at least 2 bins");
    pred.same_dims(gt)?;
    let (z_lo, z_hi) = range;
    if !(z_lo > 0.0 && z_lo < z_hi) {
        return Err(Error::InvalidRange(z_lo, z_hi));
    }
    let inv_hi = 1.0 / z_lo;
    let inv_lo = 1.0 / z_hi;
    let step = (inv_hi - inv_lo) / n_bins as f64;

    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if !pred.is_valid(x, y) || !gt.is_valid(x, y) {
                continue;
            }
            let g = gt.get(x, y) as f64;
            if g < z_lo || g > z_hi {
                continue;
            }
            let idx = (((1.0 / g - inv_lo) / step) as usize).min(n_bins - 1);
            let p = pred.get(x, y) as f64;
            sums[idx] += (p - g).abs() / g;
            counts[idx] += 1;
        }
    }
    Ok((0..n_bins)
        .map(|i| {
            // Bin i covers inverse depths [inv_lo + i·step, inv_lo + (i+1)·step);
            // in depth that is a (hi_z, lo_z) interval.
            let inv_a = inv_lo + i as f64 * step;
            let inv_b = inv_a + step;
            BinMetric {
                lo: 1.0 / inv_b,
                hi: 1.0 / inv_a,
                mape_percent: if counts[i] > 0 {
                    100.0 * sums[i] / counts[i] as f64
                } else {
                    f64::NAN
                },
                count: counts[i],
            }
        })
        .collect())
}

impl BinMetric {
    /// Harmonic midpoint of the depth interval (uniform-in-1/z center).
    pub fn center(&self) -> f64 {
        2.0 / (1.0 / self.lo + 1.0 / self.hi)
    }
}
