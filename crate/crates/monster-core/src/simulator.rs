//! Synthetic scene and dataset generation: textured piecewise-planar depth
//! scenes, stereo-pair rendering by disparity warping with z-buffering and
//! disocclusion holes, and controlled decalibration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::defocus::{DefocusModel, PsiRange};
use crate::error::{Error, Result};
use crate::geometry::{rotation_homography, warp_image, Homography, RotationAxis, WarpInterp};
use crate::image::{save_png16, Image};
use crate::manifest::{DatasetManifest, ManifestRecord};
use crate::map::DepthMap;
use crate::pfm::write_pfm;
use crate::rng;
use crate::stereo::StereoRig;

/// Disparity jump (pixels) between adjacent columns above which the surface
/// is treated as discontinuous: no span is drawn, leaving a disocclusion
/// hole in the right image.
pub const DISOCCLUSION_DISPARITY_JUMP: f64 = 1.0;

/// Scene primitives. Depths are meters; coordinates are pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Full-frame fronto-parallel plane. Every layout needs one.
    Background { depth: f64 },
    /// Fronto-parallel rectangle spanning [x0, x1) x [y0, y1).
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        depth: f64,
    },
    /// Rectangle with linear depth variation around its center.
    Slant {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        depth: f64,
        /// Depth gradient, meters per pixel.
        gx: f64,
        gy: f64,
    },
    /// Front hemisphere of a sphere.
    Sphere {
        cx: f64,
        cy: f64,
        radius_px: f64,
        /// Depth of the sphere center plane.
        depth: f64,
        /// Metric bulge toward the camera at the sphere center.
        bulge: f64,
    },
}

impl Primitive {
    /// Depth at a pixel, or None when the primitive does not cover it.
    fn depth_at(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            Primitive::Background { depth } => Some(depth),
            Primitive::Rect {
                x0,
                y0,
                x1,
                y1,
                depth,
            } => (x >= x0 && x < x1 && y >= y0 && y < y1).then_some(depth),
            Primitive::Slant {
                x0,
                y0,
                x1,
                y1,
                depth,
                gx,
                gy,
            } => (x >= x0 && x < x1 && y >= y0 && y < y1)
                .then(|| depth + gx * (x - 0.5 * (x0 + x1)) + gy * (y - 0.5 * (y0 + y1))),
            Primitive::Sphere {
                cx,
                cy,
                radius_px,
                depth,
                bulge,
            } => {
                let rr = ((x - cx).powi(2) + (y - cy).powi(2)) / (radius_px * radius_px);
                (rr <= 1.0).then(|| depth - bulge * (1.0 - rr).sqrt())
            }
        }
    }
}

/// Procedural texture parameters: multi-octave value noise plus a checker
/// component that guarantees matchable gradients everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureParams {
    pub octaves: usize,
    /// Coarsest octave cell size, pixels.
    pub base_cell: f64,
    /// Total amplitude of the centered noise component.
    pub noise_amp: f64,
    pub checker_period: usize,
    pub checker_amp: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            octaves: 4,
            base_cell: 32.0,
            noise_amp: 0.32,
            checker_period: 4,
            checker_amp: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub layout: Vec<Primitive>,
    /// All generated depths are clamped into this interval.
    pub depth_range: (f64, f64),
    pub texture: TextureParams,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidSpec(format!(
                "scene must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::InvalidSpec(format!(
                "depth range must satisfy 0 < min < max, got ({lo}, {hi})"
            )));
        }
        if !self
            .layout
            .iter()
            .any(|p| matches!(p, Primitive::Background { .. }))
        {
            return Err(Error::InvalidSpec(
                "layout needs a background plane covering the frame".into(),
            ));
        }
        if self.texture.octaves == 0 || self.texture.checker_period == 0 {
            return Err(Error::InvalidSpec(
                "texture needs at least one octave and a nonzero checker period".into(),
            ));
        }
        Ok(())
    }
}

/// Z-buffered ground-truth depth plus a matchable texture.
///
/// Deterministic given `rng_seed`. Every 9x9 window of the texture has
/// intensity variance >= 1e-4; the checker amplitude escalates (rarely)
/// until that holds.
pub fn generate_scene(spec: &SceneSpec) -> Result<(DepthMap, Image)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (z_lo, z_hi) = spec.depth_range;

    let mut depth = DepthMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut z = f64::INFINITY;
            for p in &spec.layout {
                if let Some(pz) = p.depth_at(x as f64, y as f64) {
                    z = z.min(pz.clamp(z_lo, z_hi));
                }
            }
            depth.set(x, y, z as f32);
        }
    }

    let mut tex_params = spec.texture;
    for attempt in 0..4 {
        let tex = synthesize_texture(w, h, &tex_params, spec.rng_seed);
        if min_window_variance(&tex, 4) >= 1e-4 {
            return Ok((depth, tex));
        }
        if attempt == 3 {
            return Err(Error::InvalidSpec(
                "texture variance floor unreachable with these parameters".into(),
            ));
        }
        tex_params.checker_amp *= 2.0;
    }
    unreachable!()
}

fn synthesize_texture(w: usize, h: usize, p: &TextureParams, seed: u64) -> Image {
    // Per-octave value noise from a stateless hash; independent of pixel
    // visit order.
    let stream = rng::component_seed(seed, "texture");
    let octave_value = |o: usize, x: usize, y: usize| -> f64 {
        let cell = (p.base_cell / (1 << o) as f64).max(2.0);
        let fx = x as f64 / cell;
        let fy = y as f64 / cell;
        let x0 = fx.floor() as u64;
        let y0 = fy.floor() as u64;
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let node = |gx: u64, gy: u64| {
            rng::pixel_uniform(stream, gy.wrapping_mul(1 << 20).wrapping_add(gx), o as u64)
        };
        node(x0, y0) * (1.0 - tx) * (1.0 - ty)
            + node(x0 + 1, y0) * tx * (1.0 - ty)
            + node(x0, y0 + 1) * (1.0 - tx) * ty
            + node(x0 + 1, y0 + 1) * tx * ty
    };

    let weight_total: f64 = (0..p.octaves).map(|o| 0.5f64.powi(o as i32)).sum();
    Image::from_fn_gray(w, h, |x, y| {
        let mut noise = 0.0;
        for o in 0..p.octaves {
            noise += 0.5f64.powi(o as i32) * octave_value(o, x, y);
        }
        let centered = (noise / weight_total - 0.5) * 2.0 * p.noise_amp;
        let phase = (x / p.checker_period + y / p.checker_period) % 2;
        let checker = if phase == 0 {
            p.checker_amp
        } else {
            -p.checker_amp
        };
        (0.5 + centered + checker) as f32
    })
}

/// Minimum intensity variance over all (2r+1)² windows.
pub fn min_window_variance(img: &Image, r: usize) -> f64 {
    let w = img.width();
    let h = img.height();
    if w < 2 * r + 1 || h < 2 * r + 1 {
        return 0.0;
    }
    // Integral images of v and v².
    let mut s = vec![0.0f64; (w + 1) * (h + 1)];
    let mut s2 = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y, 0) as f64;
            s[(y + 1) * (w + 1) + x + 1] =
                v + s[y * (w + 1) + x + 1] + s[(y + 1) * (w + 1) + x] - s[y * (w + 1) + x];
            s2[(y + 1) * (w + 1) + x + 1] = v * v
                + s2[y * (w + 1) + x + 1]
                + s2[(y + 1) * (w + 1) + x]
                - s2[y * (w + 1) + x];
        }
    }
    let rect = |m: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        m[y1 * (w + 1) + x1] - m[y0 * (w + 1) + x1] - m[y1 * (w + 1) + x0] + m[y0 * (w + 1) + x0]
    };
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut min_var = f64::INFINITY;
    for y in r..h - r {
        for x in r..w - r {
            let sum = rect(&s, x - r, y - r, x + r + 1, y + r + 1);
            let sq = rect(&s2, x - r, y - r, x + r + 1, y + r + 1);
            let var = (sq - sum * sum / n) / n;
            min_var = min_var.min(var);
        }
    }
    min_var
}

/// Right-camera depth map induced by the left-frame ground truth:
/// z-buffered forward splat along disparity spans. Disoccluded pixels come
/// back invalid.
pub fn right_depth_from_left(gt: &DepthMap, rig: &StereoRig) -> DepthMap {
    let (_, depth) = forward_render(None, gt, rig);
    depth
}

/// Render the rectified stereo pair for a texture + left-frame depth map.
/// The left image is the texture itself; the right image is forward-mapped
/// with z-buffering (nearest surface wins) and disocclusion holes marked
/// invalid.
pub fn render_stereo_pair(texture: &Image, gt: &DepthMap, rig: &StereoRig) -> (Image, Image) {
    let (right, _) = forward_render(Some(texture), gt, rig);
    (texture.clone(), right.expect("texture supplied"))
}

/// Right image and right-frame depth in one pass.
pub fn render_right_view(texture: &Image, gt: &DepthMap, rig: &StereoRig) -> (Image, DepthMap) {
    let (right, depth) = forward_render(Some(texture), gt, rig);
    (right.expect("texture supplied"), depth)
}

fn forward_render(
    texture: Option<&Image>,
    gt: &DepthMap,
    rig: &StereoRig,
) -> (Option<Image>, DepthMap) {
    let w = gt.width();
    let h = gt.height();
    let gray = texture.map(|t| t.to_luma());
    let fb = rig.focal_px * rig.baseline_m;

    let mut out = gray.as_ref().map(|_| {
        let mut img = Image::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                img.set_valid(x, y, false);
            }
        }
        img
    });
    let mut depth = DepthMap::new(w, h);
    let mut zbuf = vec![f64::INFINITY; w];

    for y in 0..h {
        zbuf.iter_mut().for_each(|z| *z = f64::INFINITY);
        let mut row_depth = vec![f32::NAN; w];
        let mut row_tex = vec![0.0f32; w];
        for x in 0..w.saturating_sub(1) {
            if !gt.is_valid(x, y) || !gt.is_valid(x + 1, y) {
                continue;
            }
            let z0 = gt.get(x, y) as f64;
            let z1 = gt.get(x + 1, y) as f64;
            let d0 = fb / z0;
            let d1 = fb / z1;
            if (d0 - d1).abs() > DISOCCLUSION_DISPARITY_JUMP {
                continue;
            }
            let u0 = x as f64 - d0;
            let u1 = (x + 1) as f64 - d1;
            if u1 <= u0 {
                continue;
            }
            let first = u0.ceil().max(0.0);
            let last = u1.floor().min((w - 1) as f64);
            if last < first {
                continue;
            }
            for xr in first as usize..=last as usize {
                let t = (xr as f64 - u0) / (u1 - u0);
                let d = (1.0 - t) * d0 + t * d1;
                let z = fb / d;
                if z < zbuf[xr] {
                    zbuf[xr] = z;
                    row_depth[xr] = z as f32;
                    if let Some(g) = &gray {
                        let i0 = g.get(x, y, 0) as f64;
                        let i1 = g.get(x + 1, y, 0) as f64;
                        row_tex[xr] = ((1.0 - t) * i0 + t * i1) as f32;
                    }
                }
            }
        }
        for x in 0..w {
            if row_depth[x].is_finite() {
                depth.set(x, y, row_depth[x]);
                if let Some(img) = &mut out {
                    img.set(x, y, 0, row_tex[x]);
                    img.set_valid(x, y, true);
                }
            }
        }
    }
    (out, depth)
}

/// Warp an image by a decalibration homography (bilinear inverse warp).
pub fn decalibrate(img: &Image, h: &Homography) -> Result<Image> {
    warp_image(img, h, WarpInterp::Bilinear)
}

/// How each dataset record gets decalibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecalSpec {
    None,
    /// Fixed rotation about one camera axis.
    Rotation { axis: RotationAxis, angle_rad: f64 },
    /// Fixed raw homography parameters.
    Params { params: [f64; 8] },
    /// Per-record rotation drawn uniformly from [−max, +max].
    RandomRotation { axis: RotationAxis, max_angle_rad: f64 },
}

impl DecalSpec {
    /// Resolve to a concrete homography for record `index`.
    pub fn resolve(
        &self,
        seed: u64,
        index: usize,
        k: &crate::geometry::Intrinsics,
    ) -> Option<Homography> {
        match *self {
            DecalSpec::None => None,
            DecalSpec::Rotation { axis, angle_rad } => {
                Some(rotation_homography(axis, angle_rad, k))
            }
            DecalSpec::Params { params } => Some(Homography::from_params(&params)),
            DecalSpec::RandomRotation {
                axis,
                max_angle_rad,
            } => {
                let u = rng::pixel_uniform(rng::component_seed(seed, "decal"), index as u64, 0);
                let angle = (2.0 * u - 1.0) * max_angle_rad;
                Some(rotation_homography(axis, angle, k))
            }
        }
    }
}

/// Randomized scene family for dataset builds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneTemplate {
    pub width: usize,
    pub height: usize,
    pub depth_range: (f64, f64),
    /// Background plane depth range as a fraction of depth_range.max.
    pub background_fraction: (f64, f64),
    pub objects_min: usize,
    pub objects_max: usize,
    pub texture: TextureParams,
}

impl Default for SceneTemplate {
    fn default() -> Self {
        SceneTemplate {
            width: 256,
            height: 256,
            depth_range: (0.35, 6.0),
            background_fraction: (0.6, 1.0),
            objects_min: 3,
            objects_max: 6,
            texture: TextureParams::default(),
        }
    }
}

impl SceneTemplate {
    /// Concrete scene for record `index`; object depths are uniform in
    /// inverse depth so near ranges are populated as densely as far ones.
    pub fn realize(&self, seed: u64, index: usize) -> SceneSpec {
        let stream = rng::component_seed(seed, &format!("scene/{index}"));
        let mut draw = 0u64;
        let mut next = move || {
            let v = rng::pixel_uniform(stream, draw, 1);
            draw += 1;
            v
        };
        let (z_lo, z_hi) = self.depth_range;
        let (bg_lo, bg_hi) = self.background_fraction;
        let bg_depth = z_hi * (bg_lo + (bg_hi - bg_lo) * next());
        let mut layout = vec![Primitive::Background { depth: bg_depth }];

        let n_objects = if self.objects_max > self.objects_min {
            self.objects_min
                + (next() * (self.objects_max - self.objects_min + 1) as f64) as usize
        } else {
            self.objects_min
        };
        let inv_depth = |u: f64| 1.0 / (1.0 / z_hi + u * (1.0 / (z_lo * 1.05) - 1.0 / z_hi));
        let side = self.width.min(self.height) as f64;
        for _ in 0..n_objects {
            let z = inv_depth(next());
            let cx = next() * self.width as f64;
            let cy = next() * self.height as f64;
            let size = side * (0.12 + 0.2 * next());
            match (next() * 3.0) as usize {
                0 => layout.push(Primitive::Rect {
                    x0: cx - size / 2.0,
                    y0: cy - size / 2.0,
                    x1: cx + size / 2.0,
                    y1: cy + size / 2.0,
                    depth: z,
                }),
                1 => {
                    // Gentle slant: ±10% depth across the patch.
                    let gx = 0.2 * z / size * (next() - 0.5);
                    let gy = 0.2 * z / size * (next() - 0.5);
                    layout.push(Primitive::Slant {
                        x0: cx - size / 2.0,
                        y0: cy - size / 2.0,
                        x1: cx + size / 2.0,
                        y1: cy + size / 2.0,
                        depth: z,
                        gx,
                        gy,
                    });
                }
                _ => layout.push(Primitive::Sphere {
                    cx,
                    cy,
                    radius_px: size / 2.0,
                    depth: z,
                    bulge: (0.15 * z).min(z - z_lo).max(0.0),
                }),
            }
        }
        SceneSpec {
            width: self.width,
            height: self.height,
            layout,
            depth_range: self.depth_range,
            texture: self.texture,
            rng_seed: rng::component_seed(seed, &format!("scene/{index}/texture")),
        }
    }
}

/// Write `n` scenes (left/right PNG + ground-truth PFM) plus a manifest.
/// Byte-identical across reruns with the same arguments. Decalibration,
/// when requested, transforms the left image and is recorded per record.
#[allow(clippy::too_many_arguments)]
pub fn build_dataset(
    out_dir: &Path,
    n: usize,
    template: &SceneTemplate,
    rig: &StereoRig,
    defocus_left: &DefocusModel,
    defocus_right: &DefocusModel,
    psi_range: &PsiRange,
    decal: &DecalSpec,
    seed: u64,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidSpec(
            "dataset needs at least one scene".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let spec = template.realize(seed, i);
        let (gt, tex) = generate_scene(&spec)?;
        let (right, _) = render_right_view(&tex, &gt, rig);
        let decal_h = decal.resolve(seed, i, &rig.intrinsics);
        let left = match &decal_h {
            Some(h) => decalibrate(&tex, h)?,
            None => tex,
        };

        let left_path = format!("scene_{i:04}_left.png");
        let right_path = format!("scene_{i:04}_right.png");
        let gt_path = format!("scene_{i:04}_gt.pfm");
        save_png16(&left, &out_dir.join(&left_path))?;
        save_png16(&right, &out_dir.join(&right_path))?;
        write_pfm(&gt, &out_dir.join(&gt_path))?;

        records.push(ManifestRecord {
            index: i,
            left_path,
            right_path,
            gt_depth_path: gt_path,
            decalibration_params: decal_h.map(|h| h.params()),
        });
    }

    let manifest = DatasetManifest {
        rig: *rig,
        defocus_left: *defocus_left,
        defocus_right: *defocus_right,
        psi_range: *psi_range,
        records,
    };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::stereo::{match_stereo_full, MatcherConfig};

    fn test_rig(w: usize, h: usize, focal_px: f64) -> StereoRig {
        StereoRig::new(0.1, focal_px, Intrinsics::default_for(w, h)).unwrap()
    }

    fn flat_scene(depth: f64) -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 48,
            layout: vec![Primitive::Background { depth }],
            depth_range: (0.3, 8.0),
            texture: TextureParams::default(),
            rng_seed: 7,
        }
    }

    #[test]
    fn background_plane_constant_depth() {
        let (gt, tex) = generate_scene(&flat_scene(2.0)).unwrap();
        assert!(gt.data().iter().all(|&z| z == 2.0));
        assert_eq!(tex.width(), 64);
    }

    #[test]
    fn rect_over_background_two_depth_values() {
        let mut spec = flat_scene(2.0);
        spec.layout.push(Primitive::Rect {
            x0: 10.0,
            y0: 10.0,
            x1: 30.0,
            y1: 30.0,
            depth: 0.5,
        });
        let (gt, _) = generate_scene(&spec).unwrap();
        let mut values: Vec<f32> = gt.data().to_vec();
        values.sort_by(f32::total_cmp);
        values.dedup();
        assert_eq!(values, vec![0.5, 2.0]);
        assert_eq!(gt.get(15, 15), 0.5);
        assert_eq!(gt.get(40, 40), 2.0);
    }

    #[test]
    fn missing_background_rejected() {
        let spec = SceneSpec {
            layout: vec![Primitive::Rect {
                x0: 0.0,
                y0: 0.0,
                x1: 64.0,
                y1: 48.0,
                depth: 1.0,
            }],
            ..flat_scene(1.0)
        };
        assert!(matches!(generate_scene(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn scene_deterministic_and_seed_sensitive() {
        let spec = flat_scene(1.5);
        let (_, a) = generate_scene(&spec).unwrap();
        let (_, b) = generate_scene(&spec).unwrap();
        assert_eq!(a, b);
        let mut spec2 = spec.clone();
        spec2.rng_seed = 8;
        let (_, c) = generate_scene(&spec2).unwrap();
        let differing = a
            .samples()
            .iter()
            .zip(c.samples())
            .filter(|(x, y)| x != y)
            .count();
        assert!(differing * 2 >= a.samples().len(), "{differing}");
    }

    #[test]
    fn texture_window_variance_floor() {
        let (_, tex) = generate_scene(&flat_scene(3.0)).unwrap();
        assert!(min_window_variance(&tex, 4) >= 1e-4);
    }

    #[test]
    fn depths_stay_inside_range() {
        let template = SceneTemplate {
            width: 64,
            height: 64,
            depth_range: (0.5, 4.0),
            ..Default::default()
        };
        for i in 0..5 {
            let spec = template.realize(3, i);
            let (gt, _) = generate_scene(&spec).unwrap();
            for &z in gt.data() {
                assert!((0.5..=4.0).contains(&(z as f64)), "depth {z}");
            }
        }
    }

    #[test]
    fn constant_depth_renders_exact_shift() {
        // z = 1m at fB = 50 → uniform 50 px shift.
        let (gt, tex) = generate_scene(&flat_scene(1.0)).unwrap();
        let rig = test_rig(64, 48, 500.0);
        let (left, right) = render_stereo_pair(&tex, &gt, &rig);
        for y in 0..48 {
            for x in 0..64 {
                let src = x + 50;
                if src < 64 {
                    assert!(right.is_valid(x, y));
                    assert_eq!(right.get(x, y, 0), left.to_luma().get(src, y, 0));
                } else {
                    assert!(!right.is_valid(x, y));
                }
            }
        }
    }

    #[test]
    fn near_infinite_depth_right_equals_left() {
        let mut spec = flat_scene(1e6);
        spec.depth_range = (0.3, 2e6);
        let (gt, tex) = generate_scene(&spec).unwrap();
        let rig = test_rig(64, 48, 500.0);
        let (left, right) = render_stereo_pair(&tex, &gt, &rig);
        for y in 0..48 {
            for x in 1..63 {
                assert!(right.is_valid(x, y));
                assert!((right.get(x, y, 0) - left.get(x, y, 0)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn disocclusion_band_width_matches_geometry() {
        // Occluder at 0.5 m (d = 40) over background at 2 m (d = 10):
        // a band of width d_near − d_far = 30 px of background has no
        // left-image counterpart next to the occluder.
        let mut spec = flat_scene(2.0);
        spec.width = 128;
        spec.layout.push(Primitive::Rect {
            x0: 60.0,
            y0: 0.0,
            x1: 100.0,
            y1: 48.0,
            depth: 0.5,
        });
        let (gt, tex) = generate_scene(&spec).unwrap();
        let rig = test_rig(128, 48, 200.0);
        let (_, right) = render_stereo_pair(&tex, &gt, &rig);
        let y = 20;
        let holes: Vec<usize> = (10..118).filter(|&x| !right.is_valid(x, y)).collect();
        assert!(
            (28..=33).contains(&holes.len()),
            "band width {} ({holes:?})",
            holes.len()
        );
        // The band is contiguous and adjacent to the occluder.
        let lo = *holes.first().unwrap();
        let hi = *holes.last().unwrap();
        assert_eq!(hi - lo + 1, holes.len(), "band not contiguous");
    }

    #[test]
    fn zbuffer_keeps_near_surface() {
        let mut spec = flat_scene(2.0);
        spec.width = 128;
        spec.layout.push(Primitive::Rect {
            x0: 60.0,
            y0: 0.0,
            x1: 100.0,
            y1: 48.0,
            depth: 0.5,
        });
        let (gt, tex) = generate_scene(&spec).unwrap();
        let rig = test_rig(128, 48, 200.0);
        let (_, rd) = render_right_view(&tex, &gt, &rig);
        // Occluder maps to right-image columns [60−40, 100−40) = [20, 60).
        for x in 22..58 {
            if rd.is_valid(x, 10) {
                assert!(
                    (rd.get(x, 10) - 0.5).abs() < 1e-3,
                    "column {x}: {}",
                    rd.get(x, 10)
                );
            }
        }
    }

    #[test]
    fn rendered_pair_satisfies_matcher() {
        // Closes the loop between simulator and matcher: recovered
        // disparity must equal fB/z for ≥90% of validated pixels.
        let template = SceneTemplate {
            width: 96,
            height: 96,
            depth_range: (0.8, 3.0),
            objects_min: 2,
            objects_max: 3,
            ..Default::default()
        };
        let spec = template.realize(11, 0);
        let (gt, tex) = generate_scene(&spec).unwrap();
        let rig = test_rig(96, 96, 160.0);
        let (left, right) = render_stereo_pair(&tex, &gt, &rig);
        let cfg = MatcherConfig {
            max_disp: 24,
            ..Default::default()
        };
        let m = match_stereo_full(&left, &right, &rig, &cfg).unwrap();
        let mut ok = 0usize;
        let mut total = 0usize;
        for y in 4..92 {
            for x in 26..92 {
                if !m.left_disparity.is_valid(x, y) {
                    continue;
                }
                let d_true = rig.disparity_at(gt.get(x, y) as f64);
                total += 1;
                if (m.left_disparity.get(x, y) as f64 - d_true).abs() <= 1.0 {
                    ok += 1;
                }
            }
        }
        assert!(total > 2000, "too few validated pixels: {total}");
        assert!(ok as f64 / total as f64 >= 0.90, "{ok}/{total}");
    }

    #[test]
    fn decalibrate_identity_unchanged() {
        let (_, tex) = generate_scene(&flat_scene(1.0)).unwrap();
        let out = decalibrate(&tex, &Homography::identity()).unwrap();
        assert_eq!(out, tex);
    }

    #[test]
    fn decal_spec_resolution() {
        let k = Intrinsics::default_for(64, 64);
        assert!(DecalSpec::None.resolve(1, 0, &k).is_none());
        let h = DecalSpec::Rotation {
            axis: RotationAxis::InPlane,
            angle_rad: f64::to_radians(7.0),
        }
        .resolve(1, 0, &k)
        .unwrap();
        assert!(h.max_corner_displacement(64, 64) > 1.0);
        // Random rotations differ across records but not across calls.
        let spec = DecalSpec::RandomRotation {
            axis: RotationAxis::InPlane,
            max_angle_rad: 0.1,
        };
        let a = spec.resolve(5, 0, &k).unwrap();
        let b = spec.resolve(5, 1, &k).unwrap();
        let a2 = spec.resolve(5, 0, &k).unwrap();
        assert_eq!(a.params(), a2.params());
        assert_ne!(a.params(), b.params());
    }
}
