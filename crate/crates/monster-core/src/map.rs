//! Dense scalar maps (depth, disparity, confidence).
//!
//! A [`Map2D`] stores one `f32` per pixel; `NaN` marks an invalid pixel.
//! All derived map types share this representation so PFM round-trips are
//! lossless.

use crate::error::{Error, Result};

/// H x W grid of `f32` samples with NaN marking invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2D {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Map2D {
    /// All-invalid map.
    pub fn new(width: usize, height: usize) -> Self {
        Map2D {
            width,
            height,
            data: vec![f32::NAN; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Map2D {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "data length mismatch");
        Map2D {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    #[inline]
    pub fn set_invalid(&mut self, x: usize, y: usize) {
        self.set(x, y, f32::NAN);
    }

    /// A pixel is valid iff its sample is finite.
    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y).is_finite()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite()).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.valid_count() as f64 / self.data.len() as f64
        }
    }

    pub fn same_dims(&self, other: &Map2D) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Bit-exact equality; unlike `==`, treats NaN (invalid) pixels with
    /// identical bit patterns as equal.
    pub fn bits_eq(&self, other: &Map2D) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Apply `f` to every valid sample.
    pub fn map_valid(&self, mut f: impl FnMut(f32) -> f32) -> Map2D {
        let data = self
            .data
            .iter()
            .map(|&v| if v.is_finite() { f(v) } else { f32::NAN })
            .collect();
        Map2D {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

macro_rules! map_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Map2D);

        impl $name {
            pub fn new(width: usize, height: usize) -> Self {
                $name(Map2D::new(width, height))
            }

            pub fn filled(width: usize, height: usize, value: f32) -> Self {
                $name(Map2D::filled(width, height, value))
            }

            pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
                $name(Map2D::from_vec(width, height, data))
            }
        }

        impl std::ops::Deref for $name {
            type Target = Map2D;
            fn deref(&self) -> &Map2D {
                &self.0
            }
        }

        impl std::ops::DerefMut for $name {
            fn deref_mut(&mut self) -> &mut Map2D {
                &mut self.0
            }
        }
    };
}

map_newtype!(
    /// Per-pixel metric depth in meters. NaN = invalid.
    DepthMap
);
map_newtype!(
    /// Per-pixel horizontal disparity in pixels. NaN = invalid.
    DisparityMap
);
map_newtype!(
    /// Per-pixel confidence in [0, 1].
    ConfidenceMap
);
