//! Scalar volumes on a regular grid with physical spacing.
//!
//! Voxel `(i, j, k)` has its center at `origin + (i, j, k) * spacing` (the
//! MetaImage `Offset` convention) and data is stored x-fastest.

mod io;

use serde::{Deserialize, Serialize};

pub use io::{read_metaimage, read_sidecar, read_volume, write_metaimage, write_sidecar, ElementType};

use crate::error::{Error, Result};
use crate::geom::Point3;

/// GV = HU + 1024.
pub const GV_OFFSET: f64 = 1024.0;

/// Default lower threshold raising lung tissue to myocardium level (gray values).
pub const DEFAULT_T_MYO: f64 = 950.0;
/// Default upper threshold above which calcifications are suppressed (gray values).
pub const DEFAULT_T_CALC: f64 = 1700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntensityUnit {
    #[default]
    Raw,
    GrayValue,
    Probability,
}

impl IntensityUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityUnit::Raw => "raw",
            IntensityUnit::GrayValue => "gray-value",
            IntensityUnit::Probability => "probability",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Some(IntensityUnit::Raw),
            "gray-value" | "grayvalue" | "gv" => Some(IntensityUnit::GrayValue),
            "probability" => Some(IntensityUnit::Probability),
            _ => None,
        }
    }
}

/// An immutable 3D scalar image `I(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f64>,
    unit: IntensityUnit,
    outside: f64,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        data: Vec<f64>,
        unit: IntensityUnit,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidVolume(format!("every dimension must be >= 2, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidVolume(format!("spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume("origin must be finite".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?} ({n} voxels)",
                data.len(),
                dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("data contains non-finite values".into()));
        }
        if unit == IntensityUnit::Probability && data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidVolume("probability volume has values outside [0, 1]".into()));
        }
        let outside = data.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { dims, spacing, origin, data, unit, outside })
    }

    /// Builds a volume by evaluating `f` at every voxel center.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        unit: IntensityUnit,
        mut f: impl FnMut(Point3) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(Point3::new(
                        origin[0] + i as f64 * spacing[0],
                        origin[1] + j as f64 * spacing[1],
                        origin[2] + k as f64 * spacing[2],
                    )));
                }
            }
        }
        Self::new(dims, spacing, origin, data, unit)
    }

    /// Replaces the value returned by [`Volume::sample`] outside the grid hull
    /// (default: the volume minimum).
    pub fn with_outside_value(mut self, value: f64) -> Self {
        self.outside = value;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn unit(&self) -> IntensityUnit {
        self.unit
    }

    pub fn outside_value(&self) -> f64 {
        self.outside
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.linear_index(i, j, k)]
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3 {
        Point3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    /// Continuous voxel coordinates of a physical point.
    #[inline]
    pub fn to_index(&self, p: &Point3) -> [f64; 3] {
        [
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        ]
    }

    /// True when `p` lies inside the hull spanned by the voxel centers.
    pub fn contains(&self, p: &Point3) -> bool {
        let c = self.to_index(p);
        (0..3).all(|a| c[a] >= 0.0 && c[a] <= (self.dims[a] - 1) as f64)
    }

    /// Distance in mm from `p` to the nearest face of the grid hull; negative outside.
    pub fn distance_to_boundary(&self, p: &Point3) -> f64 {
        let c = self.to_index(p);
        (0..3)
            .map(|a| {
                let lo = c[a] * self.spacing[a];
                let hi = ((self.dims[a] - 1) as f64 - c[a]) * self.spacing[a];
                lo.min(hi)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Physical extent `(min corner, max corner)` of the voxel-center hull.
    pub fn bounds(&self) -> (Point3, Point3) {
        let lo = Point3::from(self.origin);
        let hi = self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        (lo, hi)
    }

    /// Trilinear interpolation at a physical point. Points outside the grid
    /// hull return [`Volume::outside_value`].
    pub fn sample(&self, p: &Point3) -> f64 {
        let c = self.to_index(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f64;
            if !(c[a] >= 0.0 && c[a] <= max) {
                return self.outside;
            }
            // the upper face belongs to the last cell
            let f = c[a].floor().min(max - 1.0);
            base[a] = f as usize;
            frac[a] = c[a] - f;
        }
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let c000 = self.get(i, j, k);
        let c100 = self.get(i + 1, j, k);
        let c010 = self.get(i, j + 1, k);
        let c110 = self.get(i + 1, j + 1, k);
        let c001 = self.get(i, j, k + 1);
        let c101 = self.get(i + 1, j, k + 1);
        let c011 = self.get(i, j + 1, k + 1);
        let c111 = self.get(i + 1, j + 1, k + 1);
        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        c0 + (c1 - c0) * fz
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// New volume with every voxel mapped through `f`; the outside value is
    /// recomputed from the new data.
    pub fn map(&self, unit: IntensityUnit, f: impl Fn(f64) -> f64) -> Result<Volume> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Volume::new(self.dims, self.spacing, self.origin, data, unit)
    }

    /// `alpha * I + beta`, keeping the unit unless it was probability.
    pub fn affine(&self, alpha: f64, beta: f64) -> Result<Volume> {
        let unit = match self.unit {
            IntensityUnit::Probability => IntensityUnit::Raw,
            u => u,
        };
        self.map(unit, |v| alpha * v + beta)
    }

    /// Coronary preprocessing: values below `t_myo` are raised to `t_myo` and
    /// calcifications above `t_calc` are replaced by `t_myo`.
    pub fn clamp_coronary(&self, t_myo: f64, t_calc: f64) -> Result<Volume> {
        if !(t_myo < t_calc) {
            return Err(Error::param(format!("t_myo ({t_myo}) must be below t_calc ({t_calc})")));
        }
        if self.unit != IntensityUnit::GrayValue {
            return Err(Error::param(format!(
                "coronary clamping expects gray-value intensities, volume is {}",
                self.unit.as_str()
            )));
        }
        self.map(IntensityUnit::GrayValue, |v| clamp_coronary_value(v, t_myo, t_calc))
    }
}

#[inline]
pub fn clamp_coronary_value(v: f64, t_myo: f64, t_calc: f64) -> f64 {
    if v < t_myo || v > t_calc {
        t_myo
    } else {
        v
    }
}

#[inline]
pub fn gv_to_hu(gv: f64) -> f64 {
    gv - GV_OFFSET
}

#[inline]
pub fn hu_to_gv(hu: f64) -> f64 {
    hu + GV_OFFSET
}
