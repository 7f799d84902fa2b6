//! Projective transforms, rotation-induced homographies and image warping.
//!
//! Pixel coordinates place integer (x, y) at pixel centers, x growing right
//! and y growing down. Homographies act on these coordinates.

use crate::error::{Error, Result};
use crate::image::Image;

const SINGULAR_EPS: f64 = 1e-12;

/// 3x3 projective transform with the lower-right entry fixed to 1, leaving
/// 8 free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Fill the matrix row-major from 8 parameters; m[2][2] = 1.
    /// Identity parameters are (1,0,0, 0,1,0, 0,0).
    pub fn from_params(p: &[f64; 8]) -> Self {
        Homography {
            m: [
                [p[0], p[1], p[2]],
                [p[3], p[4], p[5]],
                [p[6], p[7], 1.0],
            ],
        }
    }

    /// The 8 free parameters, row-major.
    pub fn params(&self) -> [f64; 8] {
        [
            self.m[0][0], self.m[0][1], self.m[0][2],
            self.m[1][0], self.m[1][1], self.m[1][2],
            self.m[2][0], self.m[2][1],
        ]
    }

    /// Build from a raw matrix, renormalizing so m[2][2] == 1.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let w = m[2][2];
        if w.abs() <= SINGULAR_EPS {
            return Err(Error::SingularHomography(SINGULAR_EPS));
        }
        let mut out = [[0.0; 3]; 3];
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[i][j] = v / w;
            }
        }
        out[2][2] = 1.0;
        Ok(Homography { m: out })
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// self ∘ other: apply `other` first, then `self`.
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        let a = &self.m;
        let b = &other.m;
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Homography::from_matrix(out)
    }

    /// Inverse via adjugate, renormalized so the [2][2] entry is 1.
    pub fn invert(&self) -> Result<Homography> {
        let det = self.det();
        if det.abs() <= SINGULAR_EPS {
            return Err(Error::SingularHomography(SINGULAR_EPS));
        }
        let m = &self.m;
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Homography::from_matrix(adj)
    }

    /// Apply to a 2D point with perspective division.
    pub fn apply(&self, pt: (f64, f64)) -> Result<(f64, f64)> {
        let (x, y) = pt;
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if w.abs() <= SINGULAR_EPS {
            return Err(Error::DegeneratePoint(w));
        }
        Ok((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        ))
    }

    /// Largest displacement this transform induces on the four corners of a
    /// width x height image, in pixels.
    pub fn max_corner_displacement(&self, width: usize, height: usize) -> f64 {
        let w = width as f64 - 1.0;
        let h = height as f64 - 1.0;
        let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
        corners
            .iter()
            .map(|&c| match self.apply(c) {
                Ok((x, y)) => ((x - c.0).powi(2) + (y - c.1).powi(2)).sqrt(),
                Err(_) => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    /// Mean corner displacement between two transforms on an image of the
    /// given size.
    pub fn mean_corner_distance(&self, other: &Homography, width: usize, height: usize) -> f64 {
        let w = width as f64 - 1.0;
        let h = height as f64 - 1.0;
        let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
        let mut sum = 0.0;
        for &c in &corners {
            match (self.apply(c), other.apply(c)) {
                (Ok(a), Ok(b)) => sum += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
                _ => return f64::INFINITY,
            }
        }
        sum / corners.len() as f64
    }
}

/// Pinhole intrinsics used to realize physical rotations as homographies.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Default used when no calibration is supplied: f = max(w, h),
    /// principal point at the image center.
    pub fn default_for(width: usize, height: usize) -> Self {
        let f = width.max(height) as f64;
        Intrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }
}

/// Camera rotation axes. `Pitch` is rotation about the camera x-axis
/// (perspective foreshortening along y), `Yaw` about the y-axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationAxis {
    InPlane,
    Pitch,
    Yaw,
}

impl std::fmt::Display for RotationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RotationAxis::InPlane => write!(f, "inplane"),
            RotationAxis::Pitch => write!(f, "pitch"),
            RotationAxis::Yaw => write!(f, "yaw"),
        }
    }
}

/// Homography K·R·K⁻¹ induced by rotating the camera about one axis.
/// Angle zero returns the exact identity.
pub fn rotation_homography(axis: RotationAxis, angle: f64, k: &Intrinsics) -> Homography {
    assert!(
        angle.abs() < std::f64::consts::FRAC_PI_2,
        "rotation angle must satisfy |angle| < pi/2"
    );
    if angle == 0.0 {
        return Homography::identity();
    }
    let (s, c) = angle.sin_cos();
    let r = match axis {
        RotationAxis::InPlane => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        RotationAxis::Pitch => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        RotationAxis::Yaw => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
    };
    let km = [[k.fx, 0.0, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]];
    let kinv = [
        [1.0 / k.fx, 0.0, -k.cx / k.fx],
        [0.0, 1.0 / k.fy, -k.cy / k.fy],
        [0.0, 0.0, 1.0],
    ];
    let rk = mat_mul(&r, &kinv);
    let krk = mat_mul(&km, &rk);
    // |angle| < pi/2 keeps the [2][2] entry positive, so this cannot fail.
    Homography::from_matrix(krk).expect("rotation homography is non-singular")
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Sampling kernel for [`warp_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpInterp {
    #[default]
    Bilinear,
    /// Nearest-neighbor; use for masks and label maps.
    Nearest,
}

/// Inverse-warp `src` by `h`: output pixel (x, y) samples `src` at
/// h⁻¹·(x, y, 1). Output pixels whose source location leaves the image or
/// touches an invalid source pixel are marked invalid, never clamped.
pub fn warp_image(src: &Image, h: &Homography, interp: WarpInterp) -> Result<Image> {
    let hinv = h.invert()?;
    let w = src.width();
    let ht = src.height();
    let ch = src.channels();
    let mut out = Image::new(w, ht, ch);

    for y in 0..ht {
        for x in 0..w {
            let (sx, sy) = match hinv.apply((x as f64, y as f64)) {
                Ok(p) => p,
                Err(_) => {
                    out.set_valid(x, y, false);
                    continue;
                }
            };
            match interp {
                WarpInterp::Nearest => {
                    let nx = sx.round();
                    let ny = sy.round();
                    if nx < 0.0 || ny < 0.0 || nx > (w - 1) as f64 || ny > (ht - 1) as f64 {
                        out.set_valid(x, y, false);
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !src.is_valid(nx, ny) {
                        out.set_valid(x, y, false);
                        continue;
                    }
                    for c in 0..ch {
                        out.set(x, y, c, src.get(nx, ny, c));
                    }
                }
                WarpInterp::Bilinear => {
                    if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (ht - 1) as f64 {
                        out.set_valid(x, y, false);
                        continue;
                    }
                    let x0 = sx.floor() as usize;
                    let y0 = sy.floor() as usize;
                    let fx = sx - x0 as f64;
                    let fy = sy - y0 as f64;
                    // Taps with weight zero are skipped entirely so that
                    // integer source positions stay bit-exact and border
                    // pixels do not read out of bounds.
                    let taps = [
                        (x0, y0, (1.0 - fx) * (1.0 - fy)),
                        (x0 + 1, y0, fx * (1.0 - fy)),
                        (x0, y0 + 1, (1.0 - fx) * fy),
                        (x0 + 1, y0 + 1, fx * fy),
                    ];
                    let mut ok = true;
                    for &(tx, ty, wgt) in &taps {
                        if wgt == 0.0 {
                            continue;
                        }
                        if tx >= w || ty >= ht || !src.is_valid(tx, ty) {
                            ok = false;
                            break;
                        }
                    }
                    if !ok {
                        out.set_valid(x, y, false);
                        continue;
                    }
                    for c in 0..ch {
                        let mut acc = 0.0f64;
                        for &(tx, ty, wgt) in &taps {
                            if wgt == 0.0 {
                                continue;
                            }
                            acc += wgt * src.get(tx, ty, c) as f64;
                        }
                        out.set(x, y, c, acc as f32);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn translation(tx: f64, ty: f64) -> Homography {
        Homography::from_params(&[1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0])
    }

    #[test]
    fn identity_params_roundtrip() {
        let p = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let h = Homography::from_params(&p);
        assert_eq!(h, Homography::identity());
        assert_eq!(h.params(), p);
    }

    #[test]
    fn translation_maps_origin() {
        let h = translation(5.0, -3.0);
        assert_eq!(h.apply((0.0, 0.0)).unwrap(), (5.0, -3.0));
        assert_eq!(h.apply((10.0, 20.0)).unwrap(), (15.0, 17.0));
    }

    #[test]
    fn identity_apply() {
        let h = Homography::identity();
        assert_eq!(h.apply((10.0, 20.0)).unwrap(), (10.0, 20.0));
    }

    #[test]
    fn perspective_division_hand_value() {
        let h = Homography::from_params(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.001, 0.0]);
        let (x, y) = h.apply((100.0, 0.0)).unwrap();
        assert_relative_eq!(x, 100.0 / 1.1, epsilon = 1e-12);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn degenerate_point_detected() {
        let h = Homography::from_params(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -0.01, 0.0]);
        // w = 1 - 0.01*100 = 0 at x = 100.
        assert!(matches!(
            h.apply((100.0, 0.0)),
            Err(Error::DegeneratePoint(_))
        ));
    }

    #[test]
    fn compose_matches_sequential_application() {
        let mut rng = crate::rng::component_rng(11, "test/compose");
        for _ in 0..100 {
            let mut pa = [0.0; 8];
            let mut pb = [0.0; 8];
            for i in 0..8 {
                let scale = if i == 6 || i == 7 { 1e-3 } else { 1.0 };
                pa[i] = rng.random_range(-0.5..0.5) * scale;
                pb[i] = rng.random_range(-0.5..0.5) * scale;
            }
            pa[0] += 1.0;
            pa[4] += 1.0;
            pb[0] += 1.0;
            pb[4] += 1.0;
            let a = Homography::from_params(&pa);
            let b = Homography::from_params(&pb);
            if a.det().abs() < 1e-6 || b.det().abs() < 1e-6 {
                continue;
            }
            let ab = a.compose(&b).unwrap();
            let pt = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let direct = ab.apply(pt);
            let seq = b.apply(pt).and_then(|q| a.apply(q));
            let (d, s) = match (direct, seq) {
                (Ok(d), Ok(s)) => (d, s),
                _ => continue,
            };
            assert!((d.0 - s.0).abs() < 1e-9, "{} vs {}", d.0, s.0);
            assert!((d.1 - s.1).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_invert_is_identity() {
        let h = Homography::from_params(&[1.05, 0.02, 4.0, -0.03, 0.98, -2.0, 1e-4, -2e-4]);
        let prod = h.compose(&h.invert().unwrap()).unwrap();
        let id = Homography::identity();
        for i in 0..3 {
            for j in 0..3 {
                assert!((prod.matrix()[i][j] - id.matrix()[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn params_roundtrip_random() {
        let mut rng = crate::rng::component_rng(3, "test/params");
        for _ in 0..50 {
            let mut p = [0.0; 8];
            for (i, v) in p.iter_mut().enumerate() {
                let scale = if i == 6 || i == 7 { 1e-3 } else { 1.0 };
                *v = rng.random_range(-1.0..1.0) * scale;
            }
            p[0] += 1.5;
            p[4] += 1.5;
            assert_eq!(Homography::from_params(&p).params(), p);
        }
    }

    #[test]
    fn rotation_zero_angle_is_identity() {
        let k = Intrinsics::default_for(256, 256);
        for axis in [RotationAxis::InPlane, RotationAxis::Pitch, RotationAxis::Yaw] {
            assert_eq!(rotation_homography(axis, 0.0, &k), Homography::identity());
        }
    }

    #[test]
    fn inplane_rotation_fixes_principal_point() {
        let k = Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 128.0,
            cy: 128.0,
        };
        for deg in [-30.0, -7.0, 1.0, 7.0, 45.0] {
            let h = rotation_homography(RotationAxis::InPlane, f64::to_radians(deg), &k);
            let (x, y) = h.apply((128.0, 128.0)).unwrap();
            assert_relative_eq!(x, 128.0, epsilon = 1e-9);
            assert_relative_eq!(y, 128.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn inplane_seven_degrees_corner_frozen_value() {
        // Direct evaluation of K·Rz(7°)·K⁻¹ at (0,0) for f=500, c=(128,128).
        let k = Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 128.0,
            cy: 128.0,
        };
        let h = rotation_homography(RotationAxis::InPlane, f64::to_radians(7.0), &k);
        let (x, y) = h.apply((0.0, 0.0)).unwrap();
        assert_relative_eq!(x, 16.553368545769644, epsilon = 1e-9);
        assert_relative_eq!(y, -14.645183365948128, epsilon = 1e-9);
    }

    fn gradient_image(w: usize, h: usize) -> Image {
        Image::from_fn_gray(w, h, |x, y| {
            0.2 + 0.5 * (x as f32 / w as f32) + 0.2 * (y as f32 / h as f32)
        })
    }

    #[test]
    fn warp_identity_bit_exact() {
        let img = gradient_image(32, 24);
        let out = warp_image(&img, &Homography::identity(), WarpInterp::Bilinear).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn warp_translation_shifts_and_invalidates_border() {
        let img = gradient_image(32, 24);
        let out = warp_image(&img, &translation(5.0, 0.0), WarpInterp::Bilinear).unwrap();
        for x in 0..5 {
            assert!(!out.is_valid(x, 10));
        }
        for x in 5..32 {
            assert!(out.is_valid(x, 10));
            assert_eq!(out.get(x, 10, 0), img.get(x - 5, 10, 0));
        }
    }

    #[test]
    fn warp_roundtrip_small_interior_error() {
        let img = Image::from_fn_gray(48, 48, |x, y| {
            0.5 + 0.3 * ((x as f32) * 0.2).sin() * ((y as f32) * 0.15).cos()
        });
        let h = rotation_homography(
            RotationAxis::InPlane,
            f64::to_radians(4.0),
            &Intrinsics::default_for(48, 48),
        );
        let fwd = warp_image(&img, &h, WarpInterp::Bilinear).unwrap();
        let back = warp_image(&fwd, &h.invert().unwrap(), WarpInterp::Bilinear).unwrap();
        for y in 2..46 {
            for x in 2..46 {
                if back.is_valid(x, y) {
                    assert!(
                        (back.get(x, y, 0) - img.get(x, y, 0)).abs() < 0.02,
                        "pixel ({x},{y})"
                    );
                }
            }
        }
    }

    #[test]
    fn bilinear_exact_on_affine_image() {
        // Bilinear sampling reproduces any image that is affine in (x, y).
        let (a, b, c) = (0.01f64, 0.005f64, 0.1f64);
        let img = Image::from_fn_gray(40, 40, |x, y| (a * x as f64 + b * y as f64 + c) as f32);
        let h = Homography::from_params(&[0.97, 0.04, 2.3, -0.03, 1.01, -1.7, 0.0, 0.0]);
        let out = warp_image(&img, &h, WarpInterp::Bilinear).unwrap();
        let hinv = h.invert().unwrap();
        for y in 0..40 {
            for x in 0..40 {
                if !out.is_valid(x, y) {
                    continue;
                }
                let (sx, sy) = hinv.apply((x as f64, y as f64)).unwrap();
                let expect = a * sx + b * sy + c;
                // f32 storage limits agreement to ~1e-7 per tap even though
                // the interpolation itself is exact.
                assert!(
                    (out.get(x, y, 0) as f64 - expect).abs() < 1e-6,
                    "pixel ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn warp_invalid_source_pixels_propagate() {
        let mut img = gradient_image(16, 16);
        img.set_valid(8, 8, false);
        let out = warp_image(&img, &translation(0.5, 0.0), WarpInterp::Bilinear).unwrap();
        // Output pixels that touch (8,8) must be invalid.
        assert!(!out.is_valid(8, 8));
        assert!(!out.is_valid(9, 8));
    }

    #[test]
    fn rotation_principal_point_sample_preserved() {
        let img = Image::from_fn_gray(33, 33, |x, y| {
            0.5 + 0.4 * ((x as f32 * 0.7).sin() * (y as f32 * 0.3).cos())
        });
        let k = Intrinsics {
            fx: 33.0,
            fy: 33.0,
            cx: 16.0,
            cy: 16.0,
        };
        let h = rotation_homography(RotationAxis::InPlane, f64::to_radians(10.0), &k);
        let out = warp_image(&img, &h, WarpInterp::Bilinear).unwrap();
        assert!((out.get(16, 16, 0) - img.get(16, 16, 0)).abs() < 1e-6);
    }
}
