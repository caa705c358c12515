//! Synthetic tube-tree volumes with exact ground truth.
//!
//! Each voxel holds `m + k_b * T_b(x)` for the branch `b` with the largest
//! contribution, where `T_b` is the template profile around the branch's finite
//! axis segment, plus seeded Gaussian noise. Occluded gap regions hold `m` plus
//! noise.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centerline::{Branch, CenterlineTree};
use crate::error::{Error, Result};
use crate::geom::{orthonormal_basis, Point3};
use crate::template::{profile_from_dist_sq, DEFAULT_GAMMA};
use crate::volume::{IntensityUnit, Volume};

/// Spacing of the ground-truth centerline samples.
pub const TRUTH_SPACING: f64 = 0.25;

/// Beyond this many radii from the axis a branch contributes nothing.
const PROFILE_REACH: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BranchGeometry {
    Segment { start: [f64; 3], end: [f64; 3] },
    /// Leaves the end of branch `parent`, turned by `angle_deg` from the
    /// parent direction towards azimuth `azimuth_deg` around it.
    Child { parent: usize, angle_deg: f64, azimuth_deg: f64, length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RadiusProfile {
    Constant { radius: f64 },
    /// Linear from `start` at the first endpoint to `end` at the second.
    Taper { start: f64, end: f64 },
}

impl RadiusProfile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            RadiusProfile::Constant { radius } => radius,
            RadiusProfile::Taper { start, end } => start + (end - start) * t.clamp(0.0, 1.0),
        }
    }

    fn max(&self) -> f64 {
        match *self {
            RadiusProfile::Constant { radius } => radius,
            RadiusProfile::Taper { start, end } => start.max(end),
        }
    }

    fn min(&self) -> f64 {
        match *self {
            RadiusProfile::Constant { radius } => radius,
            RadiusProfile::Taper { start, end } => start.min(end),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub geometry: BranchGeometry,
    pub radius: RadiusProfile,
    pub contrast: f64,
}

/// Cylinder whose voxels are replaced by background plus noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRegion {
    pub center: [f64; 3],
    pub direction: [f64; 3],
    pub length: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub background: f64,
    pub noise_sigma: f64,
    pub rng_seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub branches: Vec<BranchSpec>,
    #[serde(default)]
    pub gaps: Vec<GapRegion>,
    /// Declared radius range every branch must respect.
    #[serde(default = "default_radius_bounds")]
    pub radius_bounds: [f64; 2],
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_radius_bounds() -> [f64; 2] {
    [0.5, 20.0]
}

/// A branch with its axis resolved to physical endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedBranch {
    pub start: Point3,
    pub end: Point3,
    pub radius: RadiusProfile,
    pub contrast: f64,
    pub parent: Option<usize>,
}

impl ResolvedBranch {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn direction(&self) -> Point3 {
        (self.end - self.start).normalize()
    }

    /// Squared distance to the axis segment and the clamped segment parameter.
    fn locate(&self, x: &Point3) -> (f64, f64) {
        let axis = self.end - self.start;
        let len2 = axis.norm_squared();
        let t = ((x - self.start).dot(&axis) / len2).clamp(0.0, 1.0);
        let foot = self.start + axis * t;
        ((x - foot).norm_squared(), t)
    }
}

impl PhantomSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Phantom(format!("cannot read phantom spec {}", path.display())))?;
        Self::from_json(&text)
    }

    /// Physical endpoints of every branch, in declaration order.
    pub fn resolve(&self) -> Result<Vec<ResolvedBranch>> {
        let mut out: Vec<ResolvedBranch> = Vec::with_capacity(self.branches.len());
        for (i, b) in self.branches.iter().enumerate() {
            let (start, end, parent) = match b.geometry {
                BranchGeometry::Segment { start, end } => (Point3::from(start), Point3::from(end), None),
                BranchGeometry::Child { parent, angle_deg, azimuth_deg, length } => {
                    let p = out.get(parent).ok_or_else(|| {
                        Error::Phantom(format!("branch {i} references parent {parent} not declared before it"))
                    })?;
                    if !(length > 0.0) {
                        return Err(Error::Phantom(format!("branch {i} has non-positive length")));
                    }
                    let v = p.direction();
                    let (e1, e2) = orthonormal_basis(&v);
                    let (a, phi) = (angle_deg.to_radians(), azimuth_deg.to_radians());
                    let dir = v * a.cos() + (e1 * phi.cos() + e2 * phi.sin()) * a.sin();
                    (p.end, p.end + dir * length, Some(parent))
                }
            };
            if (end - start).norm() <= 0.0 {
                return Err(Error::Phantom(format!("branch {i} has coincident endpoints")));
            }
            out.push(ResolvedBranch { start, end, radius: b.radius, contrast: b.contrast, parent });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<Vec<ResolvedBranch>> {
        if self.dims.iter().any(|&d| d < 2) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Phantom("dims must be >= 2 and spacing positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Phantom("noise sigma must be non-negative".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Phantom("gamma must be positive".into()));
        }
        let [lo, hi] = self.radius_bounds;
        let branches = self.resolve()?;
        let eps = 1e-9;
        for (i, b) in branches.iter().enumerate() {
            if b.radius.min() < lo - eps || b.radius.max() > hi + eps || !(b.radius.min() > 0.0) {
                return Err(Error::Phantom(format!("branch {i} radius outside [{lo}, {hi}]")));
            }
            for (name, p) in [("start", b.start), ("end", b.end)] {
                for ax in 0..3 {
                    let min = self.origin[ax];
                    let max = self.origin[ax] + (self.dims[ax] - 1) as f64 * self.spacing[ax];
                    if p[ax] < min - eps || p[ax] > max + eps {
                        return Err(Error::Phantom(format!("branch {i} {name} lies outside the volume")));
                    }
                }
            }
        }
        for g in &self.gaps {
            if !(g.length > 0.0 && g.radius > 0.0) || Point3::from(g.direction).norm() == 0.0 {
                return Err(Error::Phantom("gap regions need positive length, radius and a direction".into()));
            }
        }
        Ok(branches)
    }

    /// Noise-free intensity at `x`.
    pub fn clean_value(&self, branches: &[ResolvedBranch], x: &Point3) -> f64 {
        let mut best = 0.0f64;
        for b in branches {
            let (d2, t) = b.locate(x);
            let r = b.radius.at(t);
            if d2 > (PROFILE_REACH * r).powi(2) {
                continue;
            }
            best = best.max(b.contrast * profile_from_dist_sq(d2, r, self.gamma));
        }
        self.background + best
    }

    fn in_gap(&self, x: &Point3) -> bool {
        self.gaps.iter().any(|g| {
            let v = Point3::from(g.direction).normalize();
            let d = x - Point3::from(g.center);
            let t = d.dot(&v);
            t.abs() <= 0.5 * g.length && d.norm_squared() - t * t <= g.radius * g.radius
        })
    }

    /// Ground-truth centerlines sampled every [`TRUTH_SPACING`] mm.
    pub fn ground_truth(&self, branches: &[ResolvedBranch]) -> CenterlineTree {
        let seed = branches.first().map_or(Point3::zeros(), |b| b.start);
        let mut tree = CenterlineTree::new(seed);
        for (id, b) in branches.iter().enumerate() {
            let mut out = Branch::new(id, b.parent);
            let len = b.length();
            let n = (len / TRUTH_SPACING).ceil().max(1.0) as usize;
            for s in 0..=n {
                let t = s as f64 / n as f64;
                out.push(b.start + (b.end - b.start) * t, b.radius.at(t));
            }
            tree.branches.push(out);
        }
        tree
    }
}

/// Renders the volume and its ground truth.
///
/// Noise is drawn from one counter-based stream per z slice, so the result is
/// identical regardless of thread count.
pub fn render(spec: &PhantomSpec) -> Result<(Volume, CenterlineTree)> {
    let branches = spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let slice = nx * ny;
    let mut data = vec![0.0; slice * nz];
    data.par_chunks_mut(slice).enumerate().for_each(|(k, chunk)| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(k as u64);
        for j in 0..ny {
            for i in 0..nx {
                let x = Point3::new(
                    spec.origin[0] + i as f64 * spec.spacing[0],
                    spec.origin[1] + j as f64 * spec.spacing[1],
                    spec.origin[2] + k as f64 * spec.spacing[2],
                );
                let z: f64 = StandardNormal.sample(&mut rng);
                let clean = if spec.in_gap(&x) { spec.background } else { spec.clean_value(&branches, &x) };
                chunk[j * nx + i] = clean + spec.noise_sigma * z;
            }
        }
    });
    let volume = Volume::new(spec.dims, spec.spacing, spec.origin, data, IntensityUnit::Raw)?;
    Ok((volume, spec.ground_truth(&branches)))
}
