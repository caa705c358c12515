//! Automatic seeding: the strongest template fit on a coarse grid.

use mhtrack::{fit_template, Error, Point3, Result, TemplateParams, TrackerConfig, Volume};
use rayon::prelude::*;

/// Fits an axis-aligned template at every node of a `per_axis`^3 grid and
/// returns the fitted center with the highest raw score. Ties go to the
/// lowest grid index.
pub fn auto_max_fit(volume: &Volume, cfg: &TrackerConfig, per_axis: usize) -> Result<Point3> {
    let (lo, hi) = volume.bounds();
    let radius = (cfg.r_min * cfg.r_max).sqrt().clamp(cfg.r_min, cfg.r_max);
    let window = cfg.window()?;
    let opts = cfg.fit_options();
    let axes = [Point3::x(), Point3::y(), Point3::z()];
    let at = |a: usize, i: usize| lo[a] + (hi[a] - lo[a]) * (i as f64 + 0.5) / per_axis as f64;
    let trials: Vec<TemplateParams> = (0..per_axis.pow(3))
        .flat_map(|n| {
            let c = Point3::new(at(0, n / (per_axis * per_axis)), at(1, (n / per_axis) % per_axis), at(2, n % per_axis));
            axes.iter().map(move |d| TemplateParams::with_gamma(c, *d, radius, cfg.gamma))
        })
        .collect::<Result<_>>()?;
    let fits: Vec<Option<(f64, Point3)>> = trials
        .par_iter()
        .map(|t| {
            let fit = fit_template(volume, t, &window, &opts).ok()?;
            let c = fit.params.center;
            let usable = !fit.degenerate
                && fit.k > 0.0
                && fit.raw_score.is_finite()
                && volume.contains(&c)
                && (c - t.center).norm() <= 2.0 * fit.params.radius;
            usable.then_some((fit.raw_score, c))
        })
        .collect();
    let mut best: Option<(f64, Point3)> = None;
    for (score, c) in fits.into_iter().flatten() {
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, c));
        }
    }
    best.map(|(_, c)| c).ok_or(Error::SeedNotOnTube)
}
