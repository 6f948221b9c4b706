use std::collections::HashSet;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::geometry::{Pose, TargetSpec};

/// One detected corner: target index, pixel position and an optional
/// autocorrelation weight `[c11, c12, c22]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub j: usize,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<[f64; 3]>,
}

impl Corner {
    pub fn new(j: usize, x: f64, y: f64) -> Self {
        Self { j, x, y, w: None }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// The 2x2 weight, identity when absent.
    pub fn weight(&self) -> Matrix2<f64> {
        match self.w {
            Some([a, b, c]) => Matrix2::new(a, b, b, c),
            None => Matrix2::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageObservations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_guess: Option<Pose>,
    pub corners: Vec<Corner>,
}

impl ImageObservations {
    pub fn new(corners: Vec<Corner>) -> Self {
        Self { pose_guess: None, corners }
    }
}

/// Corner observations of a planar target over several images.
///
/// Serialized as
/// `{"image_size":[w,h], "target":{...}, "images":[{"corners":[{"j","x","y","w"?}]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub image_size: [u32; 2],
    pub target: TargetSpec,
    pub images: Vec<ImageObservations>,
}

impl ObservationSet {
    pub fn new(image_size: [u32; 2], target: TargetSpec) -> Self {
        Self { image_size, target, images: Vec::new() }
    }

    pub fn corner_count(&self) -> usize {
        self.images.iter().map(|im| im.corners.len()).sum()
    }

    pub fn has_weights(&self) -> bool {
        self.images.iter().flat_map(|im| &im.corners).any(|c| c.w.is_some())
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        self.target.validate()?;
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(CalibrationError::InvalidObservations("image size must be positive".into()));
        }
        for (i, im) in self.images.iter().enumerate() {
            validate_image(im, &self.target).map_err(|msg| {
                CalibrationError::InvalidObservations(format!("image {i}: {msg}"))
            })?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, CalibrationError> {
        let obs: Self = serde_json::from_str(s)
            .map_err(|e| CalibrationError::InvalidObservations(e.to_string()))?;
        obs.validate()?;
        Ok(obs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| CalibrationError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("observation set serializes")
    }
}

/// Checks index range and uniqueness, finiteness, and weight symmetry/PSD-ness.
pub fn validate_image(im: &ImageObservations, target: &TargetSpec) -> Result<(), String> {
    let mut seen = HashSet::with_capacity(im.corners.len());
    for c in &im.corners {
        if c.j >= target.len() {
            return Err(format!("target index {} out of range (n = {})", c.j, target.len()));
        }
        if !seen.insert(c.j) {
            return Err(format!("duplicate target index {}", c.j));
        }
        if !(c.x.is_finite() && c.y.is_finite()) {
            return Err(format!("non-finite coordinates for corner {}", c.j));
        }
        if let Some([a, b, d]) = c.w {
            let scale = a.abs().max(d.abs()).max(b.abs()).max(f64::MIN_POSITIVE);
            let tol = 1e-12 * scale;
            if !(a.is_finite() && b.is_finite() && d.is_finite())
                || a < -tol
                || d < -tol
                || a * d - b * b < -tol * scale
            {
                return Err(format!("weight of corner {} is not positive semidefinite", c.j));
            }
        }
    }
    Ok(())
}
