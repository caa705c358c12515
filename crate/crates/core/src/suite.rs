//! The phantom scenarios used for acceptance and parameter sweeps, and the
//! glue that tracks a scenario and scores it against its ground truth.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::centerline::CenterlineTree;
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::metrics::{coverage, evaluate, Evaluation, DEFAULT_SPACING};
use crate::phantom::{render, BranchGeometry, BranchSpec, GapRegion, PhantomSpec, RadiusProfile};
use crate::tracker::{track_tree, TerminationReason, TrackOutput, TrackerConfig};
use crate::volume::Volume;

/// Default noise level relative to a unit contrast.
pub const DEFAULT_NOISE: f64 = 0.15;
pub const DEFAULT_BACKGROUND: f64 = 0.1;
pub const DEFAULT_CONTRAST: f64 = 0.8;

/// A phantom together with the seed point used to track it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub spec: PhantomSpec,
    pub seed: [f64; 3],
}

fn segment(start: [f64; 3], end: [f64; 3], radius: RadiusProfile) -> BranchSpec {
    BranchSpec { geometry: BranchGeometry::Segment { start, end }, radius, contrast: DEFAULT_CONTRAST }
}

fn child(parent: usize, angle_deg: f64, azimuth_deg: f64, length: f64, radius: f64) -> BranchSpec {
    BranchSpec {
        geometry: BranchGeometry::Child { parent, angle_deg, azimuth_deg, length },
        radius: RadiusProfile::Constant { radius },
        contrast: DEFAULT_CONTRAST,
    }
}

fn spec(dims: [usize; 3], spacing: f64, noise: f64, rng_seed: u64, branches: Vec<BranchSpec>) -> PhantomSpec {
    PhantomSpec {
        dims,
        spacing: [spacing; 3],
        origin: [0.0; 3],
        background: DEFAULT_BACKGROUND,
        noise_sigma: noise,
        rng_seed,
        gamma: crate::template::DEFAULT_GAMMA,
        branches,
        gaps: Vec::new(),
        radius_bounds: [1.0, 10.0],
    }
}

/// Straight tube of constant radius crossing the volume along z, slightly
/// tilted, on a grid whose spacing grows with the radius.
pub fn straight_tube(radius: f64, noise: f64, rng_seed: u64) -> Scenario {
    straight_tube_with_spacing(radius, (radius / 4.0).clamp(0.5, 1.0), noise, rng_seed)
}

/// [`straight_tube`] on a grid of the given spacing.
pub fn straight_tube_with_spacing(radius: f64, spacing: f64, noise: f64, rng_seed: u64) -> Scenario {
    let half = (3.0 * radius).max(6.0);
    let n = ((2.0 * half) / spacing).ceil() as usize + 1;
    let extent = (n - 1) as f64 * spacing;
    let nz = ((12.0 * radius).max(24.0) / spacing).ceil() as usize + 1;
    let len = (nz - 1) as f64 * spacing;
    let c = extent / 2.0;
    let start = [c - 0.05 * len, c, 0.0];
    let end = [c + 0.05 * len, c + 0.02 * len, len];
    Scenario {
        name: format!("straight-r{radius}"),
        spec: spec([n, n, nz], spacing, noise, rng_seed, vec![segment(start, end, RadiusProfile::Constant { radius })]),
        seed: [start[0], start[1], 0.5 * radius],
    }
}

/// Tube tapering linearly from radius 3 to 1.
pub fn tapered_tube(noise: f64, rng_seed: u64) -> Scenario {
    let spacing = 0.5;
    let (n, nz) = (37, 97);
    let c = (n - 1) as f64 * spacing / 2.0;
    let len = (nz - 1) as f64 * spacing;
    let start = [c - 2.0, c, 0.0];
    let end = [c + 2.0, c + 1.0, len];
    Scenario {
        name: "tapered".into(),
        spec: spec([n, n, nz], spacing, noise, rng_seed, vec![segment(start, end, RadiusProfile::Taper { start: 3.0, end: 1.0 })]),
        seed: [start[0], start[1], 1.5],
    }
}

/// Parent of radius 3 splitting into two radius-2 children, each turned 35
/// degrees from the parent axis. The children leave through the top face.
pub fn y_tree(noise: f64, rng_seed: u64) -> Scenario {
    let spacing = 0.5;
    let trunk = 18.0;
    let arm = 18.0;
    let angle: f64 = 35.0;
    let spread = arm * angle.to_radians().sin();
    let height = trunk + arm * angle.to_radians().cos();
    let nx = ((2.0 * spread + 16.0) / spacing).ceil() as usize + 1;
    let ny = (16.0 / spacing) as usize + 1;
    let nz = (height / spacing).ceil() as usize + 1;
    let cx = (nx - 1) as f64 * spacing / 2.0;
    let cy = (ny - 1) as f64 * spacing / 2.0;
    let mut s = spec(
        [nx, ny, nz],
        spacing,
        noise,
        rng_seed,
        vec![
            segment([cx, cy, 0.0], [cx, cy, trunk], RadiusProfile::Constant { radius: 3.0 }),
            child(0, angle, 90.0, arm, 2.0),
            child(0, angle, 270.0, arm, 2.0),
        ],
    );
    // the arms end on the top face up to rounding of the grid
    let top = (nz - 1) as f64 * spacing;
    let arm_len = (top - trunk) / angle.to_radians().cos() - 0.01;
    for b in s.branches.iter_mut().skip(1) {
        if let BranchGeometry::Child { length, .. } = &mut b.geometry {
            *length = arm_len;
        }
    }
    Scenario { name: "y-tree".into(), spec: s, seed: [cx, cy, 1.5] }
}

/// Four generations of radii 8, 4, 2 and 1 mm in a 128^3 grid, with the
/// bifurcation planes alternating between generations.
pub fn multi_scale_tree(noise: f64, rng_seed: u64) -> Scenario {
    let spacing = 0.75;
    let n = 128;
    let c = (n - 1) as f64 * spacing / 2.0;
    let mut branches = vec![segment([c, c, 0.0], [c, c, 22.0], RadiusProfile::Constant { radius: 8.0 })];
    let gens: [(f64, f64, f64); 3] = [(4.0, 24.0, 35.0), (2.0, 18.0, 35.0), (1.0, 12.0, 35.0)];
    let mut parents = vec![0usize];
    for (g, &(radius, length, angle)) in gens.iter().enumerate() {
        let mut next = Vec::new();
        for &p in &parents {
            for side in [0.0, 180.0] {
                let azimuth = side + if g % 2 == 0 { 0.0 } else { 90.0 };
                branches.push(child(p, angle, azimuth, length, radius));
                next.push(branches.len() - 1);
            }
        }
        parents = next;
    }
    Scenario {
        name: "multi-scale".into(),
        spec: spec([n, n, n], spacing, noise, rng_seed, branches),
        seed: [c, c, 2.0],
    }
}

/// Straight radius-2 tube with an occlusion two steps long halfway up.
pub fn gap_tube(noise: f64, rng_seed: u64, step_length_factor: f64) -> Scenario {
    let mut s = straight_tube(2.0, noise, rng_seed);
    let (start, end) = match s.spec.branches[0].geometry {
        BranchGeometry::Segment { start, end } => (Point3::from(start), Point3::from(end)),
        _ => unreachable!("straight tube is a segment"),
    };
    let mid = (start + end) / 2.0;
    let dir = (end - start).normalize();
    s.spec.gaps.push(GapRegion {
        center: [mid.x, mid.y, mid.z],
        direction: [dir.x, dir.y, dir.z],
        length: 2.0 * step_length_factor * 2.0,
        radius: 2.0 * 2.0,
    });
    s.name = "gap".into();
    s
}

/// Every scenario of the default suite at the default noise level.
pub fn default_suite(rng_seed: u64) -> Vec<Scenario> {
    vec![
        straight_tube(2.0, DEFAULT_NOISE, rng_seed),
        tapered_tube(DEFAULT_NOISE, rng_seed),
        y_tree(DEFAULT_NOISE, rng_seed),
        multi_scale_tree(DEFAULT_NOISE, rng_seed),
        gap_tube(DEFAULT_NOISE, rng_seed, TrackerConfig::airway_modified().step_length_factor),
    ]
}

pub fn scenario_by_name(name: &str, rng_seed: u64) -> Option<Scenario> {
    default_suite(rng_seed).into_iter().find(|s| s.name == name || (name == "straight" && s.name.starts_with("straight")))
}

/// Rendered scenario ready to track.
pub struct Prepared {
    pub scenario: Scenario,
    pub volume: Volume,
    pub truth: CenterlineTree,
}

impl Scenario {
    pub fn prepare(&self) -> Result<Prepared> {
        let (volume, truth) = render(&self.spec)?;
        Ok(Prepared { scenario: self.clone(), volume, truth })
    }

    pub fn seed_point(&self) -> Point3 {
        Point3::from(self.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub evaluation: Evaluation,
    pub coverage: f64,
    pub branches: usize,
    pub length_mm: f64,
    pub terminations: Vec<(usize, TerminationReason)>,
    pub seconds: f64,
}

impl Prepared {
    pub fn track(&self, cfg: &TrackerConfig) -> Result<TrackOutput> {
        track_tree(&self.volume, &self.scenario.seed_point(), cfg)
    }

    pub fn run(&self, cfg: &TrackerConfig) -> Result<(TrackOutput, RunSummary)> {
        let t0 = Instant::now();
        let out = self.track(cfg)?;
        let seconds = t0.elapsed().as_secs_f64();
        let summary = self.summarize(&out, seconds)?;
        Ok((out, summary))
    }

    pub fn summarize(&self, out: &TrackOutput, seconds: f64) -> Result<RunSummary> {
        Ok(RunSummary {
            scenario: self.scenario.name.clone(),
            evaluation: evaluate(&out.tree, &self.truth, 0.5, DEFAULT_SPACING)?,
            coverage: coverage(&out.tree, &self.truth, DEFAULT_SPACING)?,
            branches: out.tree.branches.len(),
            length_mm: out.tree.total_length(),
            terminations: out.terminations.clone(),
            seconds,
        })
    }
}

/// A tracker parameter that a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    GlobalThreshold,
    LocalThreshold,
    StepLengthFactor,
    WeightWindowFactor,
    SearchDepth,
    SearchAngle,
    NumAngles,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "global_threshold" => SweepParam::GlobalThreshold,
            "local_threshold" => SweepParam::LocalThreshold,
            "step_length_factor" => SweepParam::StepLengthFactor,
            "weight_window_factor" => SweepParam::WeightWindowFactor,
            "search_depth" => SweepParam::SearchDepth,
            "search_angle" => SweepParam::SearchAngle,
            "num_angles" => SweepParam::NumAngles,
            other => return Err(Error::param(format!("unknown sweep parameter {other:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::GlobalThreshold => "global_threshold",
            SweepParam::LocalThreshold => "local_threshold",
            SweepParam::StepLengthFactor => "step_length_factor",
            SweepParam::WeightWindowFactor => "weight_window_factor",
            SweepParam::SearchDepth => "search_depth",
            SweepParam::SearchAngle => "search_angle",
            SweepParam::NumAngles => "num_angles",
        }
    }

    pub fn apply(self, cfg: &mut TrackerConfig, value: f64) {
        match self {
            SweepParam::GlobalThreshold => cfg.global_threshold = value,
            SweepParam::LocalThreshold => cfg.local_threshold = Some(value),
            SweepParam::StepLengthFactor => cfg.step_length_factor = value,
            SweepParam::WeightWindowFactor => cfg.weight_window_factor = value,
            SweepParam::SearchDepth => cfg.search_depth = value.round() as usize,
            SweepParam::SearchAngle => cfg.search_angle = value,
            SweepParam::NumAngles => cfg.num_angles = value.round() as usize,
        }
    }
}

/// Cartesian grid of parameter values, enumerated with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axes: Vec<(SweepParam, Vec<f64>)>,
    /// In raw-score mode, tie the global threshold to twice the local one.
    #[serde(default)]
    pub couple_global_to_local: bool,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            return 0;
        }
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter values of grid point `index`.
    pub fn point(&self, index: usize) -> Vec<(SweepParam, f64)> {
        let mut rem = index;
        let mut out = vec![(SweepParam::GlobalThreshold, 0.0); self.axes.len()];
        for (slot, (param, values)) in self.axes.iter().enumerate().rev() {
            out[slot] = (*param, values[rem % values.len()]);
            rem /= values.len();
        }
        out
    }

    pub fn config_at(&self, base: &TrackerConfig, index: usize) -> TrackerConfig {
        let mut cfg = *base;
        for (param, value) in self.point(index) {
            param.apply(&mut cfg, value);
        }
        if self.couple_global_to_local {
            if let Some(t) = cfg.local_threshold {
                cfg.global_threshold = 2.0 * t;
            }
        }
        cfg
    }
}
