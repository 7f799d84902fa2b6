//! Defocus model for a phase-coded aperture: ψ ↔ depth conversion, valid
//! depth-range arithmetic and simulated monocular depth providers.
//!
//! ψ = C·(1/z_o − 1/z_n) with C = πR²/λ. Objects nearer than the focus
//! distance z_n give ψ > 0, farther objects ψ < 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{ConfidenceMap, DepthMap};
use crate::rng;

/// Default exit-pupil radius in meters.
pub const DEFAULT_PUPIL_RADIUS: f64 = 1.14e-3;
/// Default lens focal length in meters.
pub const DEFAULT_FOCAL_LENGTH: f64 = 16e-3;
/// Default defocus coefficient C = πR²/λ.
pub const DEFAULT_DEFOCUS_COEFF: f64 = 9.0;

/// Lens constants and the derived defocus coefficient C = πR²/λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefocusModel {
    /// Exit-pupil radius, meters.
    pub r: f64,
    /// Illumination wavelength, meters.
    pub lambda: f64,
    /// Lens focal length, meters.
    pub f: f64,
    /// Nominal focus distance, meters.
    pub z_n: f64,
}

impl DefocusModel {
    pub fn new(r: f64, lambda: f64, f: f64, z_n: f64) -> Result<Self> {
        let m = DefocusModel { r, lambda, f, z_n };
        m.validate()?;
        Ok(m)
    }

    /// Build from a target defocus coefficient, deriving the wavelength for
    /// the default pupil radius.
    pub fn from_coefficient(c: f64, f: f64, z_n: f64) -> Result<Self> {
        let r = DEFAULT_PUPIL_RADIUS;
        let lambda = std::f64::consts::PI * r * r / c;
        Self::new(r, lambda, f, z_n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.lambda > 0.0 && self.f > 0.0) {
            return Err(Error::Config(format!(
                "defocus model requires positive r, lambda, f (got {}, {}, {})",
                self.r, self.lambda, self.f
            )));
        }
        if self.z_n <= self.f {
            return Err(Error::ObjectInsideFocalLength {
                z: self.z_n,
                f: self.f,
            });
        }
        Ok(())
    }

    /// Defocus coefficient C = πR²/λ.
    pub fn coefficient(&self) -> f64 {
        std::f64::consts::PI * self.r * self.r / self.lambda
    }

    /// ψ for an object at distance `z_o` meters.
    pub fn psi_from_depth(&self, z_o: f64) -> Result<f64> {
        if z_o <= 0.0 || !z_o.is_finite() {
            return Err(Error::NonPositiveDepth(z_o));
        }
        Ok(self.coefficient() * (1.0 / z_o - 1.0 / self.z_n))
    }

    /// Exact algebraic inverse of [`Self::psi_from_depth`].
    pub fn depth_from_psi(&self, psi: f64) -> Result<f64> {
        let c = self.coefficient();
        let min_psi = -c / self.z_n;
        if psi <= min_psi {
            return Err(Error::PsiOutOfPhysicalRange { psi, min_psi });
        }
        Ok(1.0 / (psi / c + 1.0 / self.z_n))
    }

    /// Ideal image-plane distance for an object at `z` via the thin-lens
    /// equation 1/f = 1/z + 1/z_i.
    pub fn thin_lens_image_distance(&self, z: f64) -> Result<f64> {
        if z <= self.f {
            return Err(Error::ObjectInsideFocalLength { z, f: self.f });
        }
        Ok(1.0 / (1.0 / self.f - 1.0 / z))
    }

    /// Sensor-plane location: image distance of the nominal focus point.
    pub fn sensor_plane_distance(&self) -> f64 {
        // z_n > f is a construction invariant.
        self.thin_lens_image_distance(self.z_n).expect("z_n > f")
    }

    /// Metric depth interval covered by a ψ interval:
    /// (depth at psi_max, depth at psi_min).
    pub fn valid_depth_range(&self, r: &PsiRange) -> Result<(f64, f64)> {
        r.validate()?;
        let z_near = self.depth_from_psi(r.psi_max)?;
        let z_far = self.depth_from_psi(r.psi_min)?;
        Ok((z_near, z_far))
    }
}

/// Operating band of the ψ estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsiRange {
    pub psi_min: f64,
    pub psi_max: f64,
}

impl Default for PsiRange {
    fn default() -> Self {
        PsiRange {
            psi_min: -4.0,
            psi_max: 10.0,
        }
    }
}

impl PsiRange {
    pub fn new(psi_min: f64, psi_max: f64) -> Result<Self> {
        let r = PsiRange { psi_min, psi_max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi_min >= self.psi_max {
            return Err(Error::InvalidRange(self.psi_min, self.psi_max));
        }
        Ok(())
    }

    pub fn contains(&self, psi: f64) -> bool {
        psi >= self.psi_min && psi <= self.psi_max
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.psi_min + self.psi_max)
    }

    pub fn half_span(&self) -> f64 {
        0.5 * (self.psi_max - self.psi_min)
    }
}

/// Snap ψ to the nearest of `levels` uniformly spaced values over the range,
/// emulating a classification-style predictor. Exact midpoints round toward
/// the lower level.
pub fn psi_quantize(psi: f64, levels: usize, range: &PsiRange) -> f64 {
    assert!(levels >= 2, "psi_quantize requires at least 2 levels");
    let step = (range.psi_max - range.psi_min) / (levels - 1) as f64;
    let t = (psi - range.psi_min) / step;
    let idx = (t - 0.5).ceil().clamp(0.0, (levels - 1) as f64);
    range.psi_min + idx * step
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonoMode {
    /// Absolute depth from the phase-coded ψ estimator.
    #[default]
    PhaseCoded,
    /// Scale/shift-ambiguous depth from scene structure alone.
    ImageBased,
}

/// What the phase-coded simulator does with pixels whose true ψ falls
/// outside the operating band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfRangePolicy {
    /// Abstain: invalid output, confidence 0.
    #[default]
    Invalidate,
    /// Emulate a bounded regressor that saturates at the band edges and
    /// reports floor confidence.
    Saturate,
}

/// Configuration for the simulated monocular depth providers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonoSimSpec {
    pub mode: MonoMode,
    /// Std-dev of ψ estimation noise (phase-coded mode), ψ units.
    pub noise_sigma_psi: f64,
    pub out_of_range: OutOfRangePolicy,
    /// Hidden affine ambiguity of the image-based mode. Consumers must treat
    /// image-based output as relative; these values are never exported.
    pub relative_scale: f64,
    pub relative_shift: f64,
    /// Amplitude of the low-frequency multiplicative noise field applied in
    /// image-based mode (0 disables).
    pub relative_noise_amp: f64,
    pub rng_seed: u64,
}

impl Default for MonoSimSpec {
    fn default() -> Self {
        MonoSimSpec {
            mode: MonoMode::PhaseCoded,
            noise_sigma_psi: 0.0,
            out_of_range: OutOfRangePolicy::Invalidate,
            relative_scale: 1.0,
            relative_shift: 0.0,
            relative_noise_amp: 0.0,
            rng_seed: 0,
        }
    }
}

impl MonoSimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma_psi < 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma_psi must be >= 0, got {}",
                self.noise_sigma_psi
            )));
        }
        if self.relative_scale <= 0.0 {
            return Err(Error::Config(format!(
                "relative_scale must be > 0, got {}",
                self.relative_scale
            )));
        }
        Ok(())
    }
}

/// Simulated monocular depth estimate for a ground-truth depth map.
///
/// Phase-coded mode inverts a noisy ψ observation per pixel; confidence is
/// triangular in ψ, maximal at the band midpoint and floored at 0.05.
/// Image-based mode returns an affine-distorted copy with low-frequency
/// multiplicative noise and uniform confidence 0.5. Deterministic given
/// `rng_seed`, independent of pixel visit order.
pub fn simulate_mono_depth(
    gt: &DepthMap,
    m: &DefocusModel,
    r: &PsiRange,
    spec: &MonoSimSpec,
) -> Result<(DepthMap, ConfidenceMap)> {
    spec.validate()?;
    r.validate()?;
    let w = gt.width();
    let h = gt.height();
    let mut depth = DepthMap::new(w, h);
    let mut conf = ConfidenceMap::filled(w, h, 0.0);
    let stream = rng::component_seed(spec.rng_seed, "mono_sim");

    match spec.mode {
        MonoMode::PhaseCoded => {
            let c = m.coefficient();
            let min_psi_physical = -c / m.z_n;
            for y in 0..h {
                for x in 0..w {
                    if !gt.is_valid(x, y) {
                        continue;
                    }
                    let z = gt.get(x, y) as f64;
                    let psi = m.psi_from_depth(z)?;
                    let psi = if r.contains(psi) {
                        psi
                    } else {
                        match spec.out_of_range {
                            OutOfRangePolicy::Invalidate => continue,
                            OutOfRangePolicy::Saturate => psi.clamp(r.psi_min, r.psi_max),
                        }
                    };
                    let eps = if spec.noise_sigma_psi > 0.0 {
                        spec.noise_sigma_psi * rng::pixel_normal(stream, gt.idx(x, y) as u64)
                    } else {
                        0.0
                    };
                    let noisy = psi + eps;
                    // A noise excursion below the physical pole has no valid
                    // depth; abstain on that pixel.
                    if noisy <= min_psi_physical {
                        continue;
                    }
                    let z_est = m.depth_from_psi(noisy)?;
                    depth.set(x, y, z_est as f32);
                    let tri = 1.0 - (psi - r.mid()).abs() / r.half_span();
                    conf.set(x, y, tri.max(0.05) as f32);
                }
            }
        }
        MonoMode::ImageBased => {
            let noise = low_frequency_field(w, h, spec.relative_noise_amp, stream);
            for y in 0..h {
                for x in 0..w {
                    if !gt.is_valid(x, y) {
                        continue;
                    }
                    let z = gt.get(x, y) as f64;
                    if z <= 0.0 {
                        return Err(Error::NonPositiveDepth(z));
                    }
                    let rel = (spec.relative_scale * z + spec.relative_shift)
                        * noise[y * w + x];
                    depth.set(x, y, rel as f32);
                    conf.set(x, y, 0.5);
                }
            }
        }
    }
    Ok((depth, conf))
}

/// Smooth multiplicative field around 1.0: bilinear interpolation of a
/// coarse grid of perturbations.
fn low_frequency_field(w: usize, h: usize, amp: f64, stream: u64) -> Vec<f64> {
    if amp == 0.0 {
        return vec![1.0; w * h];
    }
    let cell = 32.0;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let node = |gx: usize, gy: usize| -> f64 {
        let u = rng::pixel_uniform(stream, (gy * gw + gx) as u64, 7);
        1.0 + amp * (2.0 * u - 1.0)
    };
    let mut out = vec![1.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let fx = x as f64 / cell;
            let fy = y as f64 / cell;
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let tx = fx - x0 as f64;
            let ty = fy - y0 as f64;
            let v = node(x0, y0) * (1.0 - tx) * (1.0 - ty)
                + node(x0 + 1, y0) * tx * (1.0 - ty)
                + node(x0, y0 + 1) * (1.0 - tx) * ty
                + node(x0 + 1, y0 + 1) * tx * ty;
            out[y * w + x] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(c: f64, z_n: f64) -> DefocusModel {
        DefocusModel::from_coefficient(c, DEFAULT_FOCAL_LENGTH, z_n).unwrap()
    }

    #[test]
    fn coefficient_matches_definition() {
        let m = model(9.0, 1.5);
        assert_relative_eq!(
            m.coefficient(),
            std::f64::consts::PI * m.r * m.r / m.lambda,
            max_relative = 1e-12
        );
        assert_relative_eq!(m.coefficient(), 9.0, max_relative = 1e-12);
    }

    #[test]
    fn psi_zero_at_focus() {
        let m = model(9.0, 1.5);
        assert_eq!(m.psi_from_depth(1.5).unwrap(), 0.0);
        assert_eq!(m.depth_from_psi(0.0).unwrap(), 1.5);
    }

    #[test]
    fn psi_hand_values() {
        let m = model(9.0, 1.5);
        // 9·(1/0.5625 − 1/1.5) = 10, 9·(1/4.5 − 1/1.5) = −4.
        assert_relative_eq!(m.psi_from_depth(0.5625).unwrap(), 10.0, epsilon = 1e-12);
        assert_relative_eq!(m.psi_from_depth(4.5).unwrap(), -4.0, epsilon = 1e-12);
    }

    #[test]
    fn psi_sign_convention() {
        let m = model(9.0, 1.5);
        assert!(m.psi_from_depth(1.0).unwrap() > 0.0);
        assert!(m.psi_from_depth(3.0).unwrap() < 0.0);
    }

    #[test]
    fn depth_hand_value_near_focus_point() {
        let m = model(9.0, 0.7);
        // 1/(10/9 + 1/0.7) = 63/160.
        assert_relative_eq!(m.depth_from_psi(10.0).unwrap(), 0.39375, epsilon = 1e-12);
    }

    #[test]
    fn depth_psi_roundtrip() {
        let m = model(9.0, 1.5);
        let mut rng = crate::rng::component_rng(5, "test/defocus");
        use rand::Rng;
        for _ in 0..1000 {
            let z = rng.random_range(0.3..10.0);
            let back = m.depth_from_psi(m.psi_from_depth(z).unwrap()).unwrap();
            assert_relative_eq!(back, z, max_relative = 1e-9);
        }
    }

    #[test]
    fn psi_monotone_decreasing_in_depth() {
        let m = model(9.0, 1.5);
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let z = 0.3 + 0.05 * i as f64;
            let psi = m.psi_from_depth(z).unwrap();
            assert!(psi < prev);
            prev = psi;
        }
    }

    #[test]
    fn nonpositive_depth_rejected() {
        let m = model(9.0, 1.5);
        assert!(matches!(
            m.psi_from_depth(0.0),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(matches!(
            m.psi_from_depth(-1.0),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn psi_below_physical_pole_rejected() {
        let m = model(9.0, 1.5);
        // Pole at -C/z_n = -6.
        assert!(m.depth_from_psi(-5.999).is_ok());
        assert!(matches!(
            m.depth_from_psi(-6.0),
            Err(Error::PsiOutOfPhysicalRange { .. })
        ));
    }

    #[test]
    fn published_depth_ranges() {
        let r = PsiRange::default();
        let (near, far) = model(9.0, 1.5).valid_depth_range(&r).unwrap();
        assert_relative_eq!(near, 0.5625, epsilon = 1e-12);
        assert_relative_eq!(far, 4.5, epsilon = 1e-12);

        let (near, far) = model(9.0, 0.7).valid_depth_range(&r).unwrap();
        assert_relative_eq!(near, 0.39375, epsilon = 1e-12);
        assert_relative_eq!(far, 1.0161290322580645, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_psi_range_rejected() {
        assert!(matches!(
            PsiRange::new(0.0, 0.0),
            Err(Error::InvalidRange(_, _))
        ));
        assert!(matches!(
            model(9.0, 1.5).valid_depth_range(&PsiRange {
                psi_min: 2.0,
                psi_max: 2.0
            }),
            Err(Error::InvalidRange(_, _))
        ));
    }

    #[test]
    fn thin_lens_values() {
        let m = model(9.0, 1.5);
        // f = 16mm, z = 1.5m.
        assert_relative_eq!(
            m.thin_lens_image_distance(1.5).unwrap(),
            0.016172506738544475,
            max_relative = 1e-12
        );
        // Unit magnification at z = 2f.
        assert_relative_eq!(
            m.thin_lens_image_distance(2.0 * m.f).unwrap(),
            2.0 * m.f,
            max_relative = 1e-12
        );
        // Far limit approaches f.
        let zi = m.thin_lens_image_distance(1e6 * m.f).unwrap();
        assert!((zi - m.f).abs() / m.f < 2e-6);
        assert!(matches!(
            m.thin_lens_image_distance(m.f),
            Err(Error::ObjectInsideFocalLength { .. })
        ));
    }

    #[test]
    fn quantize_grid_and_tiebreak() {
        let r = PsiRange::default();
        // 15 levels over [-4, 10]: unit spacing, 0 on the grid.
        assert_eq!(psi_quantize(0.0, 15, &r), 0.0);
        assert_eq!(psi_quantize(0.3, 15, &r), 0.0);
        assert_eq!(psi_quantize(0.7, 15, &r), 1.0);
        // Exact midpoint rounds toward the lower level.
        assert_eq!(psi_quantize(0.5, 15, &r), 0.0);
        // Two levels snap to the range ends.
        assert_eq!(psi_quantize(1.0, 2, &r), -4.0);
        assert_eq!(psi_quantize(55.0, 2, &r), 10.0);
        assert_eq!(psi_quantize(-55.0, 2, &r), -4.0);
    }

    #[test]
    fn noiseless_phase_sim_is_identity_in_range() {
        let m = model(9.0, 1.5);
        let r = PsiRange::default();
        let gt = DepthMap::filled(16, 12, 1.25);
        let (depth, conf) = simulate_mono_depth(&gt, &m, &r, &MonoSimSpec::default()).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                assert_relative_eq!(depth.get(x, y) as f64, 1.25, max_relative = 1e-6);
                assert!(conf.get(x, y) > 0.0);
            }
        }
    }

    #[test]
    fn out_of_range_plane_fully_invalid() {
        // psi(6m) ≈ −11.36 < −4 for z_n = 0.7.
        let m = model(9.0, 0.7);
        let gt = DepthMap::filled(8, 8, 6.0);
        let (depth, conf) =
            simulate_mono_depth(&gt, &m, &PsiRange::default(), &MonoSimSpec::default()).unwrap();
        assert_eq!(depth.valid_count(), 0);
        assert!(conf.data().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn saturate_policy_clamps_instead() {
        let m = model(9.0, 0.7);
        let gt = DepthMap::filled(8, 8, 6.0);
        let spec = MonoSimSpec {
            out_of_range: OutOfRangePolicy::Saturate,
            ..Default::default()
        };
        let (depth, conf) = simulate_mono_depth(&gt, &m, &PsiRange::default(), &spec).unwrap();
        let expect = m.depth_from_psi(-4.0).unwrap();
        for &v in depth.data() {
            assert_relative_eq!(v as f64, expect, max_relative = 1e-6);
        }
        assert!(conf.data().iter().all(|&c| (c - 0.05).abs() < 1e-6));
    }

    #[test]
    fn image_based_affine_before_noise() {
        let gt = DepthMap::filled(6, 6, 1.0);
        let spec = MonoSimSpec {
            mode: MonoMode::ImageBased,
            relative_scale: 2.0,
            relative_shift: 0.1,
            ..Default::default()
        };
        let (depth, conf) = simulate_mono_depth(
            &gt,
            &model(9.0, 1.5),
            &PsiRange::default(),
            &spec,
        )
        .unwrap();
        for &v in depth.data() {
            assert_relative_eq!(v as f64, 2.1, max_relative = 1e-6);
        }
        assert!(conf.data().iter().all(|&c| c == 0.5));
    }

    #[test]
    fn sim_deterministic_given_seed() {
        let m = model(9.0, 1.5);
        let r = PsiRange::default();
        let mut gt = DepthMap::filled(20, 20, 1.0);
        for y in 0..20 {
            for x in 0..20 {
                gt.set(x, y, 0.8 + 0.1 * ((x + y) % 5) as f32);
            }
        }
        let spec = MonoSimSpec {
            noise_sigma_psi: 0.5,
            rng_seed: 99,
            ..Default::default()
        };
        let (a, _) = simulate_mono_depth(&gt, &m, &r, &spec).unwrap();
        let (b, _) = simulate_mono_depth(&gt, &m, &r, &spec).unwrap();
        assert_eq!(a, b);
        let spec2 = MonoSimSpec {
            rng_seed: 100,
            ..spec
        };
        let (c, _) = simulate_mono_depth(&gt, &m, &r, &spec2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn confidence_peaks_at_mid_band_depth() {
        let m = model(9.0, 1.5);
        let r = PsiRange::default();
        let z_mid = m.depth_from_psi(r.mid()).unwrap();
        let (near, far) = m.valid_depth_range(&r).unwrap();
        let depths = [near + 1e-3, 0.8, z_mid, 2.0, far - 1e-3];
        let gt = DepthMap::from_vec(depths.len(), 1, depths.iter().map(|&z| z as f32).collect());
        let (_, conf) = simulate_mono_depth(&gt, &m, &r, &MonoSimSpec::default()).unwrap();
        let mid_idx = 2;
        for i in 0..depths.len() {
            assert!(conf.get(i, 0) <= conf.get(mid_idx, 0) + 1e-6);
        }
        // Monotone decrease away from the peak on each side.
        assert!(conf.get(0, 0) <= conf.get(1, 0));
        assert!(conf.get(4, 0) <= conf.get(3, 0));
    }
}
