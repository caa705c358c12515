//! Tubular template model: distance to the template axis, the profile
//! function and the localizing weight window used by the fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{orthonormal_basis, Point3};

/// Default profile steepness.
pub const DEFAULT_GAMMA: f64 = 8.0;

/// Weights below this value are treated as outside the window support.
pub const SUPPORT_CUTOFF: f64 = 1e-3;

/// One straight tubular segment: center, unit axis direction, radius and
/// profile steepness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    pub center: Point3,
    pub direction: Point3,
    pub radius: f64,
    pub gamma: f64,
}

impl TemplateParams {
    /// Validated constructor; `direction` is normalized.
    pub fn new(center: Point3, direction: Point3, radius: f64) -> Result<Self> {
        Self::with_gamma(center, direction, radius, DEFAULT_GAMMA)
    }

    pub fn with_gamma(center: Point3, direction: Point3, radius: f64, gamma: f64) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::param("template direction must be a non-zero finite vector"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::param(format!("template radius must be positive, got {radius}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::param(format!("profile steepness must be positive, got {gamma}")));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::param("template center must be finite"));
        }
        Ok(Self { center, direction: direction / n, radius, gamma })
    }

    pub fn check_radius_bounds(&self, r_min: f64, r_max: f64) -> Result<()> {
        if self.radius < r_min || self.radius > r_max {
            return Err(Error::param(format!(
                "template radius {} outside [{r_min}, {r_max}]",
                self.radius
            )));
        }
        Ok(())
    }
}

/// Squared perpendicular distance from `x` to the line through `x0` along unit `v`.
#[inline]
pub fn axis_dist_sq(x: &Point3, x0: &Point3, v: &Point3) -> f64 {
    let d = x - x0;
    let t = d.dot(v);
    (d.norm_squared() - t * t).max(0.0)
}

/// `r^g / (d^g + r^g)` written in terms of `d^2 / r^2` to stay finite for large radii.
#[inline]
pub fn profile_from_dist_sq(d2: f64, radius: f64, gamma: f64) -> f64 {
    let q = d2 / (radius * radius);
    let half = 0.5 * gamma;
    let p = if half.fract() == 0.0 && half <= 64.0 { q.powi(half as i32) } else { q.powf(half) };
    1.0 / (1.0 + p)
}

/// Template profile value in (0, 1] at `x`.
#[inline]
pub fn profile(x: &Point3, params: &TemplateParams) -> f64 {
    profile_from_dist_sq(axis_dist_sq(x, &params.center, &params.direction), params.radius, params.gamma)
}

/// Localizing window of the template fit.
///
/// The window is a radial Gaussian of width `window_factor * r` times an axial
/// plateau covering `[-backward_factor * r, +forward_factor * r]` along the
/// template direction, with Gaussian shoulders of width `shoulder_factor * r`.
/// The forward extent is one tracking step, so the window leans towards the
/// direction of travel. All extents scale with the template radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightWindow {
    pub window_factor: f64,
    pub forward_factor: f64,
    pub backward_factor: f64,
    pub shoulder_factor: f64,
}

impl WeightWindow {
    /// Window for a tracker advancing `step_length_factor * r` per step.
    pub fn new(window_factor: f64, step_length_factor: f64) -> Result<Self> {
        Self::with_extents(window_factor, step_length_factor, 0.5, 0.5)
    }

    pub fn with_extents(
        window_factor: f64,
        forward_factor: f64,
        backward_factor: f64,
        shoulder_factor: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("window factor", window_factor),
            ("forward extent", forward_factor),
            ("backward extent", backward_factor),
            ("shoulder width", shoulder_factor),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if forward_factor < backward_factor {
            return Err(Error::param("forward window extent must not be shorter than the backward one"));
        }
        Ok(Self { window_factor, forward_factor, backward_factor, shoulder_factor })
    }

    pub fn sigma_radial(&self, radius: f64) -> f64 {
        self.window_factor * radius
    }

    pub fn axial_halfwidth_fwd(&self, radius: f64) -> f64 {
        self.forward_factor * radius
    }

    pub fn axial_halfwidth_bwd(&self, radius: f64) -> f64 {
        self.backward_factor * radius
    }

    pub fn axial_sigma(&self, radius: f64) -> f64 {
        self.shoulder_factor * radius
    }

    /// Radial extent and axial interval `(radial, behind, ahead)` where the
    /// weight can exceed `cutoff`.
    pub fn support(&self, radius: f64, cutoff: f64) -> (f64, f64, f64) {
        let z = (-2.0 * cutoff.ln()).sqrt();
        (
            self.sigma_radial(radius) * z,
            self.axial_halfwidth_bwd(radius) + self.axial_sigma(radius) * z,
            self.axial_halfwidth_fwd(radius) + self.axial_sigma(radius) * z,
        )
    }

    /// Weight from the perpendicular distance squared and the signed axial offset.
    #[inline]
    pub fn weight_at(&self, d2: f64, axial: f64, radius: f64) -> f64 {
        let sr = self.window_factor * radius;
        let radial = -d2 / (2.0 * sr * sr);
        let fwd = self.forward_factor * radius;
        let bwd = self.backward_factor * radius;
        let over = if axial > fwd {
            axial - fwd
        } else if axial < -bwd {
            axial + bwd
        } else {
            0.0
        };
        let sa = self.shoulder_factor * radius;
        (radial - over * over / (2.0 * sa * sa)).exp()
    }
}

/// Window weight in [0, 1] at `x`.
pub fn weight(x: &Point3, params: &TemplateParams, win: &WeightWindow) -> f64 {
    let d = x - params.center;
    let axial = d.dot(&params.direction);
    let d2 = (d.norm_squared() - axial * axial).max(0.0);
    win.weight_at(d2, axial, params.radius)
}

/// Regular grid of `(point, weight)` pairs in the template frame covering the
/// window support.
///
/// Grid spacing is `1 / density` mm, refined when needed so that at least
/// five samples fall across the template diameter. The grid is anchored at the
/// template center, which makes it symmetric under reflection through the axis.
pub fn sample_stencil(params: &TemplateParams, win: &WeightWindow, density: f64) -> Result<Vec<(Point3, f64)>> {
    if !(density > 0.0) || !density.is_finite() {
        return Err(Error::param(format!("stencil density must be positive, got {density}")));
    }
    let r = params.radius;
    let h = (1.0 / density).min(0.5 * r);
    let (radial, behind, ahead) = win.support(r, SUPPORT_CUTOFF);
    if radial < h {
        return Err(Error::EmptyStencil(format!(
            "window support radius {radial:.4} mm is below the sample spacing {h:.4} mm"
        )));
    }
    let (e1, e2) = orthonormal_basis(&params.direction);
    let nr = (radial / h).floor() as i64;
    let nb = (behind / h).floor() as i64;
    let na = (ahead / h).floor() as i64;
    let mut out = Vec::new();
    for t in -nb..=na {
        let axial = t as f64 * h;
        for a in -nr..=nr {
            for b in -nr..=nr {
                let (u, w) = (a as f64 * h, b as f64 * h);
                let d2 = u * u + w * w;
                let wt = win.weight_at(d2, axial, r);
                if wt > SUPPORT_CUTOFF {
                    out.push((params.center + e1 * u + e2 * w + params.direction * axial, wt));
                }
            }
        }
    }
    if out.len() < 3 {
        return Err(Error::EmptyStencil(format!("only {} samples in the window support", out.len())));
    }
    Ok(out)
}
