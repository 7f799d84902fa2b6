//! Dataset manifest: a versioned key/value text file describing the rig,
//! the defocus models of both cameras and one record per scene.
//!
//! Schema (version 1):
//!
//! ```text
//! manifest_version: 1
//! baseline_m: <f64>
//! focal_px: <f64>
//! fx: <f64>
//! fy: <f64>
//! cx: <f64>
//! cy: <f64>
//! left_pupil_radius_m: <f64>      # defocus model, left camera
//! left_wavelength_m: <f64>
//! left_focal_length_m: <f64>
//! left_focus_distance_m: <f64>
//! right_pupil_radius_m: <f64>     # defocus model, right camera
//! right_wavelength_m: <f64>
//! right_focal_length_m: <f64>
//! right_focus_distance_m: <f64>
//! psi_min: <f64>
//! psi_max: <f64>
//!
//! record: <index>
//! left: <relative path>
//! right: <relative path>
//! gt_depth: <relative path>
//! decal_params: <8 space-separated f64>   # absent when not decalibrated
//! end
//! ```
//!
//! Unknown keys are errors. Floats are written in shortest round-trip form,
//! so save → load → save is byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::defocus::{DefocusModel, PsiRange};
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::stereo::StereoRig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub index: usize,
    pub left_path: String,
    pub right_path: String,
    pub gt_depth_path: String,
    /// Ground-truth decalibration applied to the left image, when any.
    pub decalibration_params: Option<[f64; 8]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub rig: StereoRig,
    pub defocus_left: DefocusModel,
    pub defocus_right: DefocusModel,
    pub psi_range: PsiRange,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn serialize_to_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "manifest_version: {}", MANIFEST_VERSION);
        let _ = writeln!(s, "baseline_m: {}", self.rig.baseline_m);
        let _ = writeln!(s, "focal_px: {}", self.rig.focal_px);
        let _ = writeln!(s, "fx: {}", self.rig.intrinsics.fx);
        let _ = writeln!(s, "fy: {}", self.rig.intrinsics.fy);
        let _ = writeln!(s, "cx: {}", self.rig.intrinsics.cx);
        let _ = writeln!(s, "cy: {}", self.rig.intrinsics.cy);
        for (prefix, m) in [("left", &self.defocus_left), ("right", &self.defocus_right)] {
            let _ = writeln!(s, "{prefix}_pupil_radius_m: {}", m.r);
            let _ = writeln!(s, "{prefix}_wavelength_m: {}", m.lambda);
            let _ = writeln!(s, "{prefix}_focal_length_m: {}", m.f);
            let _ = writeln!(s, "{prefix}_focus_distance_m: {}", m.z_n);
        }
        let _ = writeln!(s, "psi_min: {}", self.psi_range.psi_min);
        let _ = writeln!(s, "psi_max: {}", self.psi_range.psi_max);
        for rec in &self.records {
            let _ = writeln!(s);
            let _ = writeln!(s, "record: {}", rec.index);
            let _ = writeln!(s, "left: {}", rec.left_path);
            let _ = writeln!(s, "right: {}", rec.right_path);
            let _ = writeln!(s, "gt_depth: {}", rec.gt_depth_path);
            if let Some(p) = &rec.decalibration_params {
                let joined: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "decal_params: {}", joined.join(" "));
            }
            let _ = writeln!(s, "end");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize_to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Strict parser; unknown keys and malformed blocks are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut header = HeaderBuilder::default();
        let mut records = Vec::new();
        let mut current: Option<RecordBuilder> = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse(format!("manifest line {}: {msg}", lineno + 1));
            if line == "end" {
                let rec = current
                    .take()
                    .ok_or_else(|| err("'end' outside a record block".into()))?;
                records.push(rec.finish(lineno + 1)?);
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| err(format!("expected 'key: value', got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();

            if key == "record" {
                if current.is_some() {
                    return Err(err("record block not closed with 'end'".into()));
                }
                let index = value
                    .parse::<usize>()
                    .map_err(|_| err(format!("bad record index {value:?}")))?;
                current = Some(RecordBuilder {
                    index,
                    ..Default::default()
                });
                continue;
            }

            match &mut current {
                Some(rec) => rec.set(key, value).map_err(|m| err(m))?,
                None => header.set(key, value).map_err(|m| err(m))?,
            }
        }
        if current.is_some() {
            return Err(Error::Parse("manifest ends inside a record block".into()));
        }
        header.finish(records)
    }

    /// Absolute path of a record file relative to the manifest location.
    pub fn resolve(&self, base_dir: &Path, rel: &str) -> PathBuf {
        base_dir.join(rel)
    }
}

#[derive(Default)]
struct HeaderBuilder {
    version: Option<u32>,
    baseline_m: Option<f64>,
    focal_px: Option<f64>,
    fx: Option<f64>,
    fy: Option<f64>,
    cx: Option<f64>,
    cy: Option<f64>,
    left: [Option<f64>; 4],
    right: [Option<f64>; 4],
    psi_min: Option<f64>,
    psi_max: Option<f64>,
}

impl HeaderBuilder {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let f = || -> std::result::Result<f64, String> {
            value
                .parse::<f64>()
                .map_err(|_| format!("bad float {value:?} for key {key:?}"))
        };
        let defocus_slot = |key: &str| -> Option<(bool, usize)> {
            let (left, rest) = if let Some(r) = key.strip_prefix("left_") {
                (true, r)
            } else if let Some(r) = key.strip_prefix("right_") {
                (false, r)
            } else {
                return None;
            };
            let slot = match rest {
                "pupil_radius_m" => 0,
                "wavelength_m" => 1,
                "focal_length_m" => 2,
                "focus_distance_m" => 3,
                _ => return None,
            };
            Some((left, slot))
        };
        match key {
            "manifest_version" => {
                let v = value
                    .parse::<u32>()
                    .map_err(|_| format!("bad version {value:?}"))?;
                if v != MANIFEST_VERSION {
                    return Err(format!("unsupported manifest_version {v}"));
                }
                self.version = Some(v);
            }
            "baseline_m" => self.baseline_m = Some(f()?),
            "focal_px" => self.focal_px = Some(f()?),
            "fx" => self.fx = Some(f()?),
            "fy" => self.fy = Some(f()?),
            "cx" => self.cx = Some(f()?),
            "cy" => self.cy = Some(f()?),
            "psi_min" => self.psi_min = Some(f()?),
            "psi_max" => self.psi_max = Some(f()?),
            _ => match defocus_slot(key) {
                Some((true, i)) => self.left[i] = Some(f()?),
                Some((false, i)) => self.right[i] = Some(f()?),
                None => return Err(format!("unknown manifest key {key:?}")),
            },
        }
        Ok(())
    }

    fn finish(self, records: Vec<ManifestRecord>) -> Result<DatasetManifest> {
        let miss = |what: &str| Error::Parse(format!("manifest missing {what}"));
        if self.version.is_none() {
            return Err(miss("manifest_version"));
        }
        let rig = StereoRig::new(
            self.baseline_m.ok_or_else(|| miss("baseline_m"))?,
            self.focal_px.ok_or_else(|| miss("focal_px"))?,
            Intrinsics {
                fx: self.fx.ok_or_else(|| miss("fx"))?,
                fy: self.fy.ok_or_else(|| miss("fy"))?,
                cx: self.cx.ok_or_else(|| miss("cx"))?,
                cy: self.cy.ok_or_else(|| miss("cy"))?,
            },
        )?;
        let model = |v: [Option<f64>; 4], side: &str| -> Result<DefocusModel> {
            DefocusModel::new(
                v[0].ok_or_else(|| miss(&format!("{side}_pupil_radius_m")))?,
                v[1].ok_or_else(|| miss(&format!("{side}_wavelength_m")))?,
                v[2].ok_or_else(|| miss(&format!("{side}_focal_length_m")))?,
                v[3].ok_or_else(|| miss(&format!("{side}_focus_distance_m")))?,
            )
        };
        Ok(DatasetManifest {
            rig,
            defocus_left: model(self.left, "left")?,
            defocus_right: model(self.right, "right")?,
            psi_range: PsiRange::new(
                self.psi_min.ok_or_else(|| miss("psi_min"))?,
                self.psi_max.ok_or_else(|| miss("psi_max"))?,
            )?,
            records,
        })
    }
}

#[derive(Default)]
struct RecordBuilder {
    index: usize,
    left: Option<String>,
    right: Option<String>,
    gt_depth: Option<String>,
    decal: Option<[f64; 8]>,
}

impl RecordBuilder {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "left" => self.left = Some(value.to_string()),
            "right" => self.right = Some(value.to_string()),
            "gt_depth" => self.gt_depth = Some(value.to_string()),
            "decal_params" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 8 {
                    return Err(format!("decal_params needs 8 values, got {}", parts.len()));
                }
                let mut p = [0.0; 8];
                for (slot, tok) in p.iter_mut().zip(&parts) {
                    *slot = tok
                        .parse::<f64>()
                        .map_err(|_| format!("bad decal parameter {tok:?}"))?;
                    if !slot.is_finite() {
                        return Err(format!("non-finite decal parameter {tok:?}"));
                    }
                }
                self.decal = Some(p);
            }
            _ => return Err(format!("unknown record key {key:?}")),
        }
        Ok(())
    }

    fn finish(self, lineno: usize) -> Result<ManifestRecord> {
        let miss = |what: &str| {
            Error::Parse(format!(
                "manifest line {lineno}: record {} missing {what}",
                self.index
            ))
        };
        Ok(ManifestRecord {
            index: self.index,
            left_path: self.left.ok_or_else(|| miss("left"))?,
            right_path: self.right.ok_or_else(|| miss("right"))?,
            gt_depth_path: self.gt_depth.ok_or_else(|| miss("gt_depth"))?,
            decalibration_params: self.decal,
        })
    }
}
