//! Run configuration: one strict TOML file covering the whole pipeline,
//! plus the small string grammars used by command-line flags
//! (decalibration specs and landscape axis grids).
//!
//! Unknown keys anywhere in the file are errors. Flags override file
//! values; all randomness derives from `seed` via named component streams
//! (see [`crate::rng`]).

use serde::{Deserialize, Serialize};

use crate::calibration::CalibConfig;
use crate::defocus::{DefocusModel, MonoSimSpec, PsiRange, DEFAULT_FOCAL_LENGTH};
use crate::error::{Error, Result};
use crate::fusion::FusionPolicy;
use crate::geometry::{Intrinsics, RotationAxis};
use crate::simulator::{DecalSpec, SceneTemplate};
use crate::stereo::{MatcherConfig, StereoRig};

/// Defocus lens settings in coefficient form (C = πR²/λ); the wavelength
/// is derived for the default pupil radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefocusConfig {
    pub coefficient: f64,
    pub focus_distance_m: f64,
    pub focal_length_m: f64,
}

impl Default for DefocusConfig {
    fn default() -> Self {
        DefocusConfig::with_focus(1.5)
    }
}

impl DefocusConfig {
    pub fn with_focus(focus_distance_m: f64) -> Self {
        DefocusConfig {
            coefficient: 9.0,
            focus_distance_m,
            focal_length_m: DEFAULT_FOCAL_LENGTH,
        }
    }

    pub fn to_model(&self) -> Result<DefocusModel> {
        let mut m = DefocusModel::from_coefficient(
            self.coefficient,
            self.focal_length_m,
            self.focus_distance_m,
        )?;
        m.f = self.focal_length_m;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub baseline_m: f64,
    pub focal_px: f64,
    /// Principal point; defaults to the scene center when absent.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            baseline_m: 0.1,
            focal_px: 300.0,
            cx: None,
            cy: None,
        }
    }
}

impl RigConfig {
    pub fn to_rig(&self, width: usize, height: usize) -> Result<StereoRig> {
        let k = Intrinsics {
            fx: self.focal_px,
            fy: self.focal_px,
            cx: self.cx.unwrap_or((width as f64 - 1.0) / 2.0),
            cy: self.cy.unwrap_or((height as f64 - 1.0) / 2.0),
        };
        StereoRig::new(self.baseline_m, self.focal_px, k)
    }
}

/// Full pipeline configuration. Defaults reproduce the standard setup:
/// left camera focused at 1.5 m (broad calibration reference range),
/// right camera at 0.7 m (near-range fusion band), 10 cm baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub scene: SceneTemplate,
    pub rig: RigConfig,
    pub defocus_left: DefocusConfig,
    pub defocus_right: DefocusConfig,
    pub psi_range: PsiRange,
    pub matcher: MatcherConfig,
    pub calib: CalibConfig,
    pub fusion: FusionPolicy,
    pub mono_sim: MonoSimSpec,
    /// Drift monitor: alarm when the rolling mean exceeds alpha × baseline.
    pub drift_alpha: f64,
    pub drift_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: "out".into(),
            scene: SceneTemplate::default(),
            rig: RigConfig::default(),
            defocus_left: DefocusConfig::with_focus(1.5),
            defocus_right: DefocusConfig::with_focus(0.7),
            psi_range: PsiRange::default(),
            matcher: MatcherConfig::default(),
            calib: CalibConfig::default(),
            fusion: FusionPolicy::default(),
            mono_sim: MonoSimSpec::default(),
            drift_alpha: 1.5,
            drift_window: 3,
        }
    }
}

impl RunConfig {
    /// Parse a TOML document; unknown keys are errors.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.matcher.validate()?;
        self.calib.validate()?;
        self.fusion.validate()?;
        self.mono_sim.validate()?;
        self.psi_range.validate()?;
        self.defocus_left.to_model()?;
        self.defocus_right.to_model()?;
        self.rig
            .to_rig(self.scene.width, self.scene.height)?;
        if self.drift_window < 1 {
            return Err(Error::Config("drift_window must be >= 1".into()));
        }
        if self.drift_alpha <= 0.0 {
            return Err(Error::Config("drift_alpha must be > 0".into()));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse a decalibration spec:
/// `none`, `<axis>:<angle>deg`, `<axis>:rand:<angle>deg`, or
/// `params:p0,...,p7` with axis ∈ {inplane, pitch, yaw}.
pub fn parse_decalib_spec(s: &str) -> Result<DecalSpec> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("none") {
        return Ok(DecalSpec::None);
    }
    if let Some(rest) = s.strip_prefix("params:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Parse(format!(
                "params decalibration needs 8 comma-separated values, got {}",
                parts.len()
            )));
        }
        let mut p = [0.0; 8];
        for (slot, tok) in p.iter_mut().zip(&parts) {
            *slot = tok
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad homography parameter {tok:?}")))?;
            if !slot.is_finite() {
                return Err(Error::Parse(format!("non-finite parameter {tok:?}")));
            }
        }
        return Ok(DecalSpec::Params { params: p });
    }
    let mut parts = s.split(':');
    let axis = parse_axis(parts.next().unwrap_or(""))?;
    let second = parts
        .next()
        .ok_or_else(|| Error::Parse(format!("decalibration spec {s:?} missing angle")))?;
    let (random, angle_str) = if second.eq_ignore_ascii_case("rand") {
        let third = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("decalibration spec {s:?} missing angle")))?;
        (true, third)
    } else {
        (false, second)
    };
    if parts.next().is_some() {
        return Err(Error::Parse(format!("trailing input in spec {s:?}")));
    }
    let angle_rad = parse_angle_deg(angle_str)?;
    Ok(if random {
        DecalSpec::RandomRotation {
            axis,
            max_angle_rad: angle_rad.abs(),
        }
    } else {
        DecalSpec::Rotation { axis, angle_rad }
    })
}

/// Parse a landscape grid spec `axis:lo:hi:count` (degrees) into the axis
/// and an inclusive linspace of angles in radians.
pub fn parse_axis_grid(s: &str) -> Result<(RotationAxis, Vec<f64>)> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    if parts.len() != 4 {
        return Err(Error::Parse(format!(
            "axis grid {s:?} must look like axis:lo:hi:count"
        )));
    }
    let axis = parse_axis(parts[0])?;
    let lo: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad grid bound {:?}", parts[1])))?;
    let hi: f64 = parts[2]
        .parse()
        .map_err(|_| Error::Parse(format!("bad grid bound {:?}", parts[2])))?;
    let count: usize = parts[3]
        .parse()
        .map_err(|_| Error::Parse(format!("bad grid count {:?}", parts[3])))?;
    if count == 0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::Parse(format!("bad grid range in {s:?}")));
    }
    let angles = if count == 1 {
        vec![lo.to_radians()]
    } else {
        (0..count)
            .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).to_radians())
            .collect()
    };
    Ok((axis, angles))
}

fn parse_axis(s: &str) -> Result<RotationAxis> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inplane" | "in-plane" | "roll" => Ok(RotationAxis::InPlane),
        "pitch" => Ok(RotationAxis::Pitch),
        "yaw" => Ok(RotationAxis::Yaw),
        other => Err(Error::Parse(format!(
            "unknown rotation axis {other:?} (expected inplane, pitch or yaw)"
        ))),
    }
}

fn parse_angle_deg(s: &str) -> Result<f64> {
    let t = s.trim();
    let t = t
        .strip_suffix("deg")
        .or_else(|| t.strip_suffix("Deg"))
        .unwrap_or(t);
    let v: f64 = t
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad angle {s:?}")))?;
    if !v.is_finite() || v.abs() >= 90.0 {
        return Err(Error::Parse(format!(
            "angle {s:?} out of range (|angle| < 90 deg)"
        )));
    }
    Ok(v.to_radians())
}
