use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// How wall reflection coefficients are derived from the requested T60.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionModel {
    /// Sabine absorption, `beta = sqrt(1 - 0.161 V / (S T60))`.
    Sabine,
    /// Coefficient solved so that the image-source energy decay of this
    /// room reaches the requested T60.
    #[default]
    Calibrated,
}

/// Shoebox room.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub t60: f64,
    pub speed_of_sound: f64,
    /// Maximum image order; `Some(0)` keeps only the direct path.
    pub max_order: Option<usize>,
    pub reflection: ReflectionModel,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], t60: f64) -> Self {
        RoomSpec {
            dims,
            t60,
            speed_of_sound: 343.0,
            max_order: None,
            reflection: ReflectionModel::default(),
        }
    }

    pub fn anechoic(dims: [f64; 3]) -> Self {
        RoomSpec {
            max_order: Some(0),
            ..RoomSpec::new(dims, 0.2)
        }
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + y * z + x * z)
    }

    pub fn center(&self) -> Point {
        [self.dims[0] / 2.0, self.dims[1] / 2.0, self.dims[2] / 2.0]
    }

    pub fn contains(&self, p: Point) -> bool {
        p.iter().zip(&self.dims).all(|(&c, &d)| c > 0.0 && c < d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidRoom(format!("dimensions {:?} must be positive", self.dims)));
        }
        if !(self.t60 > 0.0) {
            return Err(Error::InvalidRoom(format!("t60 {} must be positive", self.t60)));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidRoom("speed of sound must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform circular array in the horizontal plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub center: Point,
    pub radius: f64,
    pub mic_positions: Vec<Point>,
}

impl ArrayGeometry {
    pub const MICS: usize = 6;

    /// Six microphones, `M1` on the +x axis, counter-clockwise at 60 deg steps.
    pub fn circular(center: Point, radius: f64) -> Self {
        let mic_positions = (0..Self::MICS)
            .map(|m| {
                let a = (m as f64 * 60.0).to_radians();
                [center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]]
            })
            .collect();
        ArrayGeometry {
            center,
            radius,
            mic_positions,
        }
    }

    pub fn len(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mic_positions.is_empty()
    }
}

/// The 36 candidate source positions around the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCatalog {
    pub positions: Vec<Point>,
    pub distance: f64,
}

impl SourceCatalog {
    pub const DIRECTIONS: usize = 36;
    pub const STEP_DEG: f64 = 10.0;

    pub fn around(array: &ArrayGeometry, distance: f64) -> Self {
        let c = array.center;
        let positions = (0..Self::DIRECTIONS)
            .map(|k| {
                let a = Self::angle_deg(k).to_radians();
                [c[0] + distance * a.cos(), c[1] + distance * a.sin(), c[2]]
            })
            .collect();
        SourceCatalog { positions, distance }
    }

    pub fn angle_deg(class: usize) -> f64 {
        class as f64 * Self::STEP_DEG
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
