use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{FitOptions, Sampling, ScoreFormula};
use crate::mht::{RankScope, ScoringMode, Thresholds, DEFAULT_FRONTIER_CAP};
use crate::template::{WeightWindow, DEFAULT_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcationConfig {
    pub enabled: bool,
    /// Minimum centroid separation of the two clusters, in mean radii.
    pub min_separation: f64,
}

impl Default for BifurcationConfig {
    fn default() -> Self {
        Self { enabled: true, min_separation: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub mode: ScoringMode,
    pub r_min: f64,
    pub r_max: f64,
    pub step_length_factor: f64,
    pub weight_window_factor: f64,
    pub search_depth: usize,
    pub search_angle: f64,
    pub num_angles: usize,
    pub local_threshold: Option<f64>,
    pub global_threshold: f64,
    pub max_steps: usize,
    /// No further splits once this many branches exist.
    pub max_branches: usize,
    /// Stop tracking once this many candidate fits have been made.
    pub max_fits: Option<usize>,
    pub bifurcation: BifurcationConfig,
    pub rank_scope: RankScope,
    pub gamma: f64,
    pub max_outer_iters: usize,
    pub step_tol_mm: f64,
    pub sampling: Sampling,
    pub score: ScoreFormula,
    /// Smallest `k / std(k)` for a fitted candidate to count as a tube segment.
    pub min_significance: f64,
    /// Consecutive steps a path may continue on the prediction alone when no
    /// candidate is significant; never more than `search_depth - 1`.
    pub max_coast_steps: usize,
    /// Candidates of one parent closer than this many parent radii are merged.
    pub merge_distance: f64,
    pub frontier_cap: usize,
    /// Committed points within this many steps of a branch start are ignored
    /// by the self-intersection guard.
    pub guard_exclusion_steps: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self::airway_modified()
    }
}

impl TrackerConfig {
    fn base() -> Self {
        Self {
            mode: ScoringMode::Modified,
            r_min: 1.0,
            r_max: 10.0,
            step_length_factor: 1.1,
            weight_window_factor: 1.0,
            search_depth: 6,
            search_angle: 70.0,
            num_angles: 2,
            local_threshold: None,
            global_threshold: 0.7,
            max_steps: 2000,
            max_branches: 256,
            max_fits: None,
            bifurcation: BifurcationConfig::default(),
            rank_scope: RankScope::PerParent,
            gamma: DEFAULT_GAMMA,
            max_outer_iters: 25,
            step_tol_mm: 1e-4,
            sampling: Sampling::default(),
            score: ScoreFormula::default(),
            min_significance: 6.0,
            max_coast_steps: 3,
            merge_distance: 0.5,
            frontier_cap: DEFAULT_FRONTIER_CAP,
            guard_exclusion_steps: 2.0,
        }
    }

    /// Airway parameters, rank-scored.
    pub fn airway_modified() -> Self {
        Self::base()
    }

    /// Airway parameters, raw-scored.
    pub fn airway_original() -> Self {
        Self {
            mode: ScoringMode::Original,
            step_length_factor: 1.5,
            weight_window_factor: 3.0,
            search_angle: 60.0,
            num_angles: 3,
            local_threshold: Some(2.0),
            global_threshold: 4.0,
            ..Self::base()
        }
    }

    /// Coronary parameters, rank-scored.
    pub fn coronary_modified() -> Self {
        Self {
            r_max: 3.0,
            search_depth: 4,
            step_length_factor: 1.5,
            search_angle: 60.0,
            global_threshold: 0.95,
            ..Self::base()
        }
    }

    /// Coronary parameters, raw-scored.
    pub fn coronary_original() -> Self {
        Self {
            mode: ScoringMode::Original,
            r_max: 3.0,
            search_depth: 4,
            weight_window_factor: 3.0,
            step_length_factor: 1.5,
            search_angle: 60.0,
            num_angles: 3,
            local_threshold: Some(4.0),
            global_threshold: 8.0,
            ..Self::base()
        }
    }

    /// Named preset: `airway-modified`, `airway-original`, `coronary-modified`
    /// or `coronary-original`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "airway-modified" => Some(Self::airway_modified()),
            "airway-original" => Some(Self::airway_original()),
            "coronary-modified" => Some(Self::coronary_modified()),
            "coronary-original" => Some(Self::coronary_original()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max.is_finite()) {
            return bad(format!("radius bounds [{}, {}] are invalid", self.r_min, self.r_max));
        }
        if !(self.step_length_factor >= 1.0) || !self.step_length_factor.is_finite() {
            return bad(format!("step length factor must be >= 1, got {}", self.step_length_factor));
        }
        if !(self.weight_window_factor > 0.0) || !self.weight_window_factor.is_finite() {
            return bad("weight window factor must be positive".into());
        }
        if self.search_depth == 0 {
            return bad("search depth must be at least 1".into());
        }
        if !(self.search_angle > 0.0 && self.search_angle <= 90.0) {
            return bad(format!("search angle must lie in (0, 90], got {}", self.search_angle));
        }
        if self.num_angles == 0 {
            return bad("number of angles must be at least 1".into());
        }
        match (self.mode, self.local_threshold) {
            (ScoringMode::Modified, Some(_)) => return bad("modified mode takes no local threshold".into()),
            (ScoringMode::Original, None) => return bad("original mode needs a local threshold".into()),
            _ => {}
        }
        if !self.global_threshold.is_finite() {
            return bad("global threshold must be finite".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        if self.max_branches == 0 {
            return bad("max_branches must be at least 1".into());
        }
        if !(self.min_significance >= 0.0) || !(self.merge_distance >= 0.0) || !(self.guard_exclusion_steps >= 0.0) {
            return bad("significance floor, merge distance and guard exclusion must be non-negative".into());
        }
        if !(self.bifurcation.min_separation > 0.0) {
            return bad("bifurcation separation must be positive".into());
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive".into());
        }
        if self.frontier_cap == 0 {
            return bad("frontier cap must be at least 1".into());
        }
        self.fit_options().validate()
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_outer_iters: self.max_outer_iters,
            step_tol_mm: self.step_tol_mm,
            sampling: self.sampling,
            r_min: self.r_min,
            r_max: self.r_max,
            score: self.score,
        }
    }

    pub fn window(&self) -> Result<WeightWindow> {
        WeightWindow::new(self.weight_window_factor, self.step_length_factor)
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { local: self.local_threshold, global: self.global_threshold }
    }

    /// Significance below which a fit is not a tube segment. Raw-scored
    /// tracking leaves this to the local threshold.
    pub fn significance_floor(&self) -> f64 {
        match self.mode {
            ScoringMode::Modified => self.min_significance,
            ScoringMode::Original => 0.0,
        }
    }

    pub fn coast_limit(&self) -> usize {
        self.max_coast_steps.min(self.search_depth.saturating_sub(1))
    }

    pub fn step_length(&self, radius: f64) -> f64 {
        self.step_length_factor * radius
    }
}
