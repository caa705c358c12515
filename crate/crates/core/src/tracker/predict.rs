use crate::geom::{orthonormal_basis, Point3};
use crate::template::TemplateParams;

use super::config::TrackerConfig;

/// Candidate directions: `v` plus rings at deviations `j * angle / num_angles`,
/// each with azimuthal samples in proportion to the ring circumference.
pub fn candidate_directions(v: &Point3, search_angle_deg: f64, num_angles: usize) -> Vec<Point3> {
    let v = v.normalize();
    let (e1, e2) = orthonormal_basis(&v);
    let spacing = search_angle_deg.to_radians() / num_angles as f64;
    let mut dirs = vec![v];
    for j in 1..=num_angles {
        let theta = spacing * j as f64;
        let count = ((std::f64::consts::TAU * theta.sin() / spacing).ceil() as usize).max(1);
        for m in 0..count {
            let phi = std::f64::consts::TAU * m as f64 / count as f64;
            let d = (v * theta.cos() + (e1 * phi.cos() + e2 * phi.sin()) * theta.sin()).normalize();
            if dirs.iter().all(|o: &Point3| o.dot(&d) < (1e-6f64).cos()) {
                dirs.push(d);
            }
        }
    }
    dirs
}

/// Templates one step ahead of `tip` in every candidate direction.
pub fn predict(tip: &TemplateParams, cfg: &TrackerConfig) -> Vec<TemplateParams> {
    let step = cfg.step_length(tip.radius);
    let radius = tip.radius.clamp(cfg.r_min, cfg.r_max);
    candidate_directions(&tip.direction, cfg.search_angle, cfg.num_angles)
        .into_iter()
        .map(|d| TemplateParams { center: tip.center + d * step, direction: d, radius, gamma: tip.gamma })
        .collect()
}
