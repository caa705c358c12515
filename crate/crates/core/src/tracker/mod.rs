//! Predict, fit, aggregate and commit: grows branch polylines from a seed
//! through the hypothesis tree, splitting into child branches where the
//! frontier separates into two spatial clusters.

mod audit;
mod bifurcation;
mod config;
mod predict;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use audit::{write_jsonl, AuditRecord, CandidateEntry, CandidateFate};
pub use bifurcation::detect_bifurcation;
pub use config::{BifurcationConfig, TrackerConfig};
pub use predict::{candidate_directions, predict};

pub use crate::centerline::{Branch, CenterlineTree};
use crate::error::{Error, Result};
use crate::fitting::{fit_template, solve_linear, FitOptions, FitResult};
use crate::geom::{angle_between, Point3};
use crate::mht::{CandidateStatus, ExtendOutcome, HypothesisTree, LocalHypothesis, ScoringMode};
use crate::template::{TemplateParams, WeightWindow};
use crate::volume::Volume;

/// Split label of a frontier leaf that joins neither child branch.
const UNASSIGNED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    /// Every full-depth path fell below the global threshold.
    EmptyFrontier,
    /// No valid candidate was left to extend the tree.
    NoCandidates,
    OutOfVolume,
    MaxSteps,
    SelfIntersection,
    /// The branch ended in a split into two child branches.
    Bifurcation,
    /// The fit budget ran out.
    Budget,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::EmptyFrontier => "empty-frontier",
            TerminationReason::NoCandidates => "no-candidates",
            TerminationReason::OutOfVolume => "out-of-volume",
            TerminationReason::MaxSteps => "max-steps",
            TerminationReason::SelfIntersection => "self-intersection",
            TerminationReason::Bifurcation => "bifurcation",
            TerminationReason::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackStats {
    pub fits: usize,
    pub trimmed_leaves: usize,
    pub max_frontier: usize,
    pub bifurcations: usize,
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub tree: CenterlineTree,
    pub audit: Vec<AuditRecord>,
    pub terminations: Vec<(usize, TerminationReason)>,
    pub stats: TrackStats,
}

/// Tracking state of one branch.
#[derive(Debug, Clone)]
pub struct BranchState {
    pub id: usize,
    pub parent_id: Option<usize>,
    pub tree: HypothesisTree,
    pub polyline: Branch,
    pub start: Point3,
    pub steps_taken: usize,
}

/// Output points are rounded to `1 / OUTPUT_SCALE` mm.
const OUTPUT_SCALE: f64 = 1e6;

fn quantize(x: f64) -> f64 {
    (x * OUTPUT_SCALE).round() / OUTPUT_SCALE
}

/// Committed points of every branch, for the self-intersection guard.
struct CommittedIndex {
    cell: f64,
    grid: HashMap<[i64; 3], Vec<usize>>,
    points: Vec<(Point3, f64, usize, usize)>,
}

impl CommittedIndex {
    fn new(cell: f64) -> Self {
        Self { cell, grid: HashMap::new(), points: Vec::new() }
    }

    fn key(&self, p: &Point3) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: Point3, r: f64, branch: usize, index: usize) {
        let id = self.points.len();
        self.points.push((p, r, branch, index));
        let key = self.key(&p);
        self.grid.entry(key).or_default().push(id);
    }

    /// Whether `q` lies strictly inside the sphere of a committed point not
    /// excluded by `skip`.
    fn hits(&self, q: &Point3, skip: impl Fn(&Point3, usize, usize) -> bool) -> bool {
        let k = self.key(q);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(ids) = self.grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else { continue };
                    for &id in ids {
                        let (p, r, b, i) = self.points[id];
                        if (p - q).norm() < r && !skip(&p, b, i) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

struct Candidate {
    leaf: usize,
    init: TemplateParams,
    fit: Option<FitResult>,
    fate: CandidateFate,
    coast: bool,
}

struct Tracker<'a> {
    volume: &'a Volume,
    cfg: TrackerConfig,
    window: WeightWindow,
    fit_opts: FitOptions,
    index: CommittedIndex,
    audit: Vec<AuditRecord>,
    terminations: Vec<(usize, TerminationReason)>,
    stats: TrackStats,
    finished: Vec<Branch>,
    next_id: usize,
}

fn point4(p: &TemplateParams) -> [f64; 4] {
    [p.center.x, p.center.y, p.center.z, p.radius]
}

impl<'a> Tracker<'a> {
    fn significance(fit: &FitResult) -> f64 {
        if fit.degenerate || !(fit.std_k > 0.0) {
            0.0
        } else {
            fit.k / fit.std_k
        }
    }

    fn is_weak(&self, fit: &FitResult) -> bool {
        Self::significance(fit) < self.cfg.significance_floor()
    }

    /// Number of weak hypotheses at the end of the path to frontier leaf `leaf`.
    fn weak_run(&self, tree: &HypothesisTree, leaf: usize) -> usize {
        let path = tree.path_to(tree.frontier()[leaf]);
        let mut run = 0;
        for h in path.iter().rev().chain(std::iter::once(tree.root())).chain(tree.committed().iter().rev()) {
            if !self.is_weak(&h.fit) {
                break;
            }
            run += 1;
        }
        run
    }

    fn intersects(&self, st: &BranchState, p: &Point3, step: f64) -> bool {
        let last = st.polyline.len();
        self.index.hits(p, |q, b, i| {
            (b == st.id && i + 2 >= last) || (q - st.start).norm() < self.cfg.guard_exclusion_steps * step
        })
    }

    /// Moves a fitted center along its own axis to one step length from the
    /// tip, on the side of the predicted direction, and re-solves contrast and
    /// background there.
    fn slide_to_step(&self, tip: &TemplateParams, init: &TemplateParams, fit: FitResult) -> FitResult {
        if fit.degenerate {
            return fit;
        }
        let step = self.cfg.step_length(tip.radius);
        let v = fit.params.direction;
        let w = fit.params.center - tip.center;
        let b = w.dot(&v);
        let disc = b * b - w.norm_squared() + step * step;
        let t = if disc >= 0.0 {
            let root = disc.sqrt();
            let ahead = |t: f64| (w + v * t).dot(&init.direction);
            if ahead(-b + root) >= ahead(-b - root) {
                -b + root
            } else {
                -b - root
            }
        } else {
            -b
        };
        let mut params = fit.params;
        params.center += v * t;
        if !self.volume.contains(&params.center) {
            return fit;
        }
        match solve_linear(self.volume, &params, &self.window, &self.fit_opts) {
            Ok(lin) if !lin.degenerate => FitResult {
                iterations: fit.iterations,
                converged: fit.converged,
                ..FitResult::from_linear(params, lin, self.fit_opts.score)
            },
            _ => fit,
        }
    }

    /// Fits every candidate predicted from the frontier, in parallel, and
    /// classifies the results.
    fn expand(&self, st: &BranchState) -> Vec<Candidate> {
        let tips: Vec<TemplateParams> = st.tree.frontier().iter().map(|&id| st.tree.leaf(id).fit.params).collect();
        let jobs: Vec<(usize, TemplateParams)> = tips
            .iter()
            .enumerate()
            .flat_map(|(leaf, tip)| predict(tip, &self.cfg).into_iter().map(move |c| (leaf, c)))
            .collect();
        let mut cands: Vec<Candidate> = jobs
            .par_iter()
            .map(|&(leaf, init)| {
                let (fit, fate) = if !self.volume.contains(&init.center) {
                    (None, CandidateFate::Invalid("out-of-volume".into()))
                } else {
                    match fit_template(self.volume, &init, &self.window, &self.fit_opts) {
                        Ok(fit) => (Some(self.slide_to_step(&tips[leaf], &init, fit)), CandidateFate::Kept),
                        Err(_) => (None, CandidateFate::Invalid("fit-error".into())),
                    }
                };
                Candidate { leaf, init, fit, fate, coast: false }
            })
            .collect();

        for c in cands.iter_mut() {
            let Some(fit) = &c.fit else { continue };
            let tip = &tips[c.leaf];
            let step = self.cfg.step_length(tip.radius);
            let p = &fit.params;
            let reason = if fit.degenerate || !fit.raw_score.is_finite() {
                Some("degenerate")
            } else if !self.volume.contains(&p.center) {
                Some("out-of-volume")
            } else if self.is_weak(fit) {
                Some("weak")
            } else if (p.center - tip.center).dot(&c.init.direction) < 0.5 * step {
                Some("no-advance")
            } else if angle_between(&p.direction, &tip.direction) >= std::f64::consts::FRAC_PI_2 {
                Some("reversed")
            } else if self.intersects(st, &p.center, step) {
                Some("self-intersection")
            } else {
                None
            };
            if let Some(r) = reason {
                c.fate = CandidateFate::Invalid(r.into());
            }
        }

        // merge near-duplicates of the same parent, strongest first
        let mut by_leaf: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in cands.iter().enumerate() {
            if c.fate == CandidateFate::Kept {
                by_leaf.entry(c.leaf).or_default().push(i);
            }
        }
        for (leaf, mut ids) in by_leaf {
            let reach = self.cfg.merge_distance * tips[leaf].radius;
            ids.sort_by(|&a, &b| {
                let (sa, sb) = (cands[a].fit.unwrap().raw_score, cands[b].fit.unwrap().raw_score);
                sb.total_cmp(&sa).then(a.cmp(&b))
            });
            let mut kept: Vec<Point3> = Vec::new();
            for id in ids {
                let center = cands[id].fit.unwrap().params.center;
                if kept.iter().any(|k| (k - center).norm() < reach) {
                    cands[id].fate = CandidateFate::Merged;
                } else {
                    kept.push(center);
                }
            }
        }

        // leaves without a significant candidate may continue straight ahead
        let limit = self.cfg.coast_limit();
        if limit > 0 {
            for (leaf, tip) in tips.iter().enumerate() {
                if cands.iter().any(|c| c.leaf == leaf && c.fate == CandidateFate::Kept) {
                    continue;
                }
                if self.weak_run(&st.tree, leaf) + 1 > limit {
                    continue;
                }
                let Some(init) = predict(tip, &self.cfg).into_iter().next() else { continue };
                if !self.volume.contains(&init.center) || self.intersects(st, &init.center, self.cfg.step_length(tip.radius)) {
                    continue;
                }
                let Ok(lin) = solve_linear(self.volume, &init, &self.window, &self.fit_opts) else { continue };
                let fit = FitResult::from_linear(init, lin, self.fit_opts.score);
                cands.push(Candidate { leaf, init, fit: Some(fit), fate: CandidateFate::Kept, coast: true });
            }
        }
        cands
    }

    fn commit_point(&mut self, st: &mut BranchState, local: &LocalHypothesis) {
        let p = &local.fit.params;
        let index = st.polyline.len();
        st.polyline.push(p.center, p.radius);
        self.index.insert(p.center, p.radius, st.id, index);
    }

    fn run_branch(&mut self, mut st: BranchState) -> Result<Vec<BranchState>> {
        loop {
            if st.steps_taken >= self.cfg.max_steps {
                return Ok(self.finish(st, TerminationReason::MaxSteps));
            }
            if self.cfg.max_fits.is_some_and(|b| self.stats.fits >= b) {
                return Ok(self.finish(st, TerminationReason::Budget));
            }
            let frontier_len = st.tree.frontier().len();
            self.stats.max_frontier = self.stats.max_frontier.max(frontier_len);
            let cands = self.expand(&st);
            self.stats.fits += cands.iter().filter(|c| c.fit.is_some()).count();

            let mut lists: Vec<Vec<FitResult>> = vec![Vec::new(); frontier_len];
            let mut slot = Vec::new();
            for (i, c) in cands.iter().enumerate() {
                if c.fate == CandidateFate::Kept {
                    slot.push((c.leaf, lists[c.leaf].len(), i));
                    lists[c.leaf].push(c.fit.unwrap());
                }
            }
            let trimmed_before = st.tree.trimmed_count();
            let report = st.tree.extend_and_prune(lists)?;
            self.stats.trimmed_leaves += st.tree.trimmed_count() - trimmed_before;

            let mut entries: Vec<CandidateEntry> = cands
                .iter()
                .map(|c| {
                    let p = c.fit.map_or(c.init, |f| f.params);
                    CandidateEntry {
                        leaf: c.leaf,
                        center: [p.center.x, p.center.y, p.center.z],
                        radius: p.radius,
                        raw_score: c.fit.map(|f| f.raw_score),
                        rank_score: None,
                        coast: c.coast,
                        fate: c.fate.clone(),
                    }
                })
                .collect();
            for rec in &report.records {
                if let Some(&(_, _, i)) = slot.iter().find(|(l, k, _)| *l == rec.leaf && *k == rec.index) {
                    entries[i].rank_score = Some(rec.rank_score);
                    entries[i].fate = match rec.status {
                        CandidateStatus::Kept => CandidateFate::Kept,
                        CandidateStatus::PrunedLocal => CandidateFate::PrunedLocal,
                        CandidateStatus::PrunedGlobal => CandidateFate::PrunedGlobal,
                        CandidateStatus::Trimmed => CandidateFate::Trimmed,
                        CandidateStatus::Merged => CandidateFate::Merged,
                    };
                }
            }
            let step_index = st.steps_taken;
            let branch_id = st.id;
            let mut record = |tracker: &mut Self, outcome: &str, committed: Option<[f64; 4]>| {
                tracker.audit.push(AuditRecord::Step {
                    branch: branch_id,
                    step: step_index,
                    frontier: frontier_len,
                    outcome: outcome.into(),
                    candidates: std::mem::take(&mut entries),
                    committed,
                });
            };

            match report.outcome {
                ExtendOutcome::Exhausted => {
                    record(self, "exhausted", None);
                    let reason = if cands.iter().any(|c| c.fate == CandidateFate::Invalid("out-of-volume".into())) {
                        TerminationReason::OutOfVolume
                    } else if cands.iter().any(|c| c.fate == CandidateFate::Invalid("self-intersection".into())) {
                        TerminationReason::SelfIntersection
                    } else {
                        TerminationReason::NoCandidates
                    };
                    if let Some(best) = st.tree.best_leaf() {
                        if st.tree.frontier_depth() > 0 && st.tree.path_score(best) >= self.cfg.global_threshold {
                            let path = st.tree.commit_path(best);
                            let keep = path.iter().rposition(|h| !self.is_weak(&h.fit)).map_or(0, |i| i + 1);
                            for local in &path[..keep] {
                                self.commit_point(&mut st, local);
                            }
                        }
                    }
                    return Ok(self.finish(st, reason));
                }
                ExtendOutcome::Pruned => {
                    record(self, "pruned", None);
                    return Ok(self.finish(st, TerminationReason::EmptyFrontier));
                }
                ExtendOutcome::Extended => {}
            }

            if !st.tree.ready_to_commit() {
                record(self, "extended", None);
                continue;
            }

            // paths coasting on the prediction alone take no part in a split
            let solid: Vec<usize> =
                (0..st.tree.frontier().len()).filter(|&leaf| self.weak_run(&st.tree, leaf) == 0).collect();
            if self.cfg.bifurcation.enabled && solid.len() >= 2 && self.next_id + 2 <= self.cfg.max_branches {
                let leaves: Vec<TemplateParams> =
                    solid.iter().map(|&leaf| st.tree.leaf(st.tree.frontier()[leaf]).fit.params).collect();
                // clusters must separate across the current axis, not along it
                let axis = st.tree.root().fit.params.direction;
                let positions: Vec<Point3> =
                    leaves.iter().map(|p| p.center - axis * p.center.dot(&axis)).collect();
                let mean_r = leaves.iter().map(|p| p.radius).sum::<f64>() / leaves.len() as f64;
                let solid_labels = detect_bifurcation(&positions, mean_r, self.cfg.bifurcation.min_separation * mean_r);
                if solid_labels.iter().any(|&l| l == 1) {
                    let mut labels = vec![UNASSIGNED; st.tree.frontier().len()];
                    for (&leaf, &l) in solid.iter().zip(&solid_labels) {
                        labels[leaf] = l;
                    }
                    record(self, "bifurcation", None);
                    return self.split(st, &labels);
                }
            }

            let local = st.tree.commit_step()?;
            self.commit_point(&mut st, &local);
            st.steps_taken += 1;
            record(self, "committed", Some(point4(&local.fit.params)));
        }
    }

    fn split(&mut self, mut st: BranchState, labels: &[usize]) -> Result<Vec<BranchState>> {
        let groups: [Vec<usize>; 2] =
            [0, 1].map(|g| labels.iter().enumerate().filter(|(_, &l)| l == g).map(|(i, _)| i).collect());
        let (prefix, subtrees) = st.tree.split([&groups[0], &groups[1]])?;
        for local in &prefix {
            self.commit_point(&mut st, local);
        }
        let fork_point = *st.polyline.points.last().expect("branch has its start point");
        let fork_radius = *st.polyline.radii.last().expect("branch has its start point");
        let ids = [self.next_id, self.next_id + 1];
        self.next_id += 2;
        self.stats.bifurcations += 1;
        self.audit.push(AuditRecord::Bifurcation {
            branch: st.id,
            step: st.steps_taken,
            cluster_sizes: [groups[0].len(), groups[1].len()],
            shared_prefix: prefix.len(),
            children: ids,
        });

        let mut children = Vec::with_capacity(2);
        for (id, sub) in ids.into_iter().zip(subtrees) {
            let mut polyline = Branch::new(id, Some(st.id));
            polyline.push(fork_point, fork_radius);
            let (tree, rebuilt) = match self.cfg.mode {
                ScoringMode::Modified => (sub, false),
                ScoringMode::Original => {
                    // fresh tree from the first hypothesis past the fork
                    let best = sub.best_leaf().expect("split groups are non-empty");
                    let first = sub.path_to(best)[0];
                    polyline.push(first.fit.params.center, first.fit.params.radius);
                    (sub.fresh(Vec::new(), first), true)
                }
            };
            let inherited_history = if rebuilt { 0 } else { tree.committed().len() };
            let inherited_nodes = if rebuilt { 0 } else { tree.node_count() - 1 };
            self.audit.push(AuditRecord::BranchStart {
                branch: id,
                parent: Some(st.id),
                start: [fork_point.x, fork_point.y, fork_point.z, fork_radius],
                inherited_history,
                inherited_nodes,
                rebuilt,
            });
            for i in 1..polyline.len() {
                self.index.insert(polyline.points[i], polyline.radii[i], id, i);
            }
            children.push(BranchState {
                id,
                parent_id: Some(st.id),
                tree,
                polyline,
                start: fork_point,
                steps_taken: 0,
            });
        }
        self.finish(st, TerminationReason::Bifurcation);
        Ok(children)
    }

    fn finish(&mut self, st: BranchState, reason: TerminationReason) -> Vec<BranchState> {
        self.audit.push(AuditRecord::Terminate { branch: st.id, reason, points: st.polyline.len() });
        self.terminations.push((st.id, reason));
        self.finished.push(st.polyline);
        Vec::new()
    }
}

/// The 14 trial directions used at the seed: coordinate axes and cube diagonals.
pub fn seed_directions() -> Vec<Point3> {
    let mut dirs = Vec::with_capacity(14);
    for a in 0..3 {
        for s in [1.0, -1.0] {
            let mut v = Point3::zeros();
            v[a] = s;
            dirs.push(v);
        }
    }
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                dirs.push(Point3::new(sx, sy, sz).normalize());
            }
        }
    }
    dirs
}

/// Trial radii geometrically spaced over `[r_min, r_max]`.
pub fn seed_radii(r_min: f64, r_max: f64) -> Vec<f64> {
    if r_min == r_max {
        return vec![r_min];
    }
    (0..4).map(|i| r_min * (r_max / r_min).powf(i as f64 / 3.0)).collect()
}

fn in_volume_run(volume: &Volume, p: &Point3, v: &Point3) -> f64 {
    let (lo, hi) = volume.bounds();
    let mut t = f64::INFINITY;
    for a in 0..3 {
        if v[a] > 0.0 {
            t = t.min((hi[a] - p[a]) / v[a]);
        } else if v[a] < 0.0 {
            t = t.min((lo[a] - p[a]) / v[a]);
        }
    }
    t.max(0.0)
}

/// Fits trial templates at the seed and returns the strongest, oriented
/// towards the longer run inside the volume.
pub fn initialize_seed(volume: &Volume, seed: &Point3, cfg: &TrackerConfig) -> Result<FitResult> {
    if !volume.contains(seed) {
        return Err(Error::param("seed lies outside the volume"));
    }
    let window = cfg.window()?;
    let opts = cfg.fit_options();
    let trials: Vec<TemplateParams> = seed_directions()
        .into_iter()
        .flat_map(|d| {
            seed_radii(cfg.r_min, cfg.r_max)
                .into_iter()
                .map(move |r| TemplateParams::with_gamma(*seed, d, r, cfg.gamma).expect("trial template is valid"))
        })
        .collect();
    let fits: Vec<Option<FitResult>> =
        trials.par_iter().map(|t| fit_template(volume, t, &window, &opts).ok()).collect();
    let mut best: Option<FitResult> = None;
    for fit in fits.into_iter().flatten() {
        let ok = !fit.degenerate
            && fit.k > 0.0
            && fit.raw_score.is_finite()
            && volume.contains(&fit.params.center)
            && (fit.params.center - seed).norm() <= 2.0 * fit.params.radius;
        if ok && best.is_none_or(|b| fit.raw_score > b.raw_score) {
            best = Some(fit);
        }
    }
    let best = best.ok_or(Error::SeedNotOnTube)?;
    let mut params = best.params;
    // start on the fitted axis level with the seed
    let v = params.direction;
    let on_axis = params.center + v * (seed - params.center).dot(&v);
    if volume.contains(&on_axis) {
        params.center = on_axis;
    }
    if in_volume_run(volume, &params.center, &-v) > in_volume_run(volume, &params.center, &v) {
        params.direction = -v;
    }
    let fit = FitResult::from_linear(params, solve_linear(volume, &params, &window, &opts)?, opts.score);
    if fit.degenerate || !(fit.k > 0.0) {
        return Err(Error::SeedNotOnTube);
    }
    Ok(fit)
}

/// Tracks the tree containing `seed`.
pub fn track_tree(volume: &Volume, seed: &Point3, cfg: &TrackerConfig) -> Result<TrackOutput> {
    cfg.validate()?;
    let fit = initialize_seed(volume, seed, cfg)?;
    track_from_fit(volume, *seed, fit, cfg)
}

/// Tracks from a known starting template, along its direction.
pub fn track_from_template(volume: &Volume, start: &TemplateParams, cfg: &TrackerConfig) -> Result<TrackOutput> {
    cfg.validate()?;
    let fit = fit_template(volume, start, &cfg.window()?, &cfg.fit_options())?;
    if fit.degenerate {
        return Err(Error::SeedNotOnTube);
    }
    track_from_fit(volume, start.center, fit, cfg)
}

fn track_from_fit(volume: &Volume, seed: Point3, fit: FitResult, cfg: &TrackerConfig) -> Result<TrackOutput> {
    let root = LocalHypothesis::new(fit, 1.0, 0);
    let tree = HypothesisTree::new(root, cfg.mode, cfg.search_depth, cfg.thresholds(), cfg.rank_scope)?
        .with_frontier_cap(cfg.frontier_cap)
        .with_leaf_merge(cfg.merge_distance);
    let mut tracker = Tracker {
        volume,
        cfg: *cfg,
        window: cfg.window()?,
        fit_opts: cfg.fit_options(),
        index: CommittedIndex::new(cfg.r_max.max(1e-3)),
        audit: Vec::new(),
        terminations: Vec::new(),
        stats: TrackStats::default(),
        finished: Vec::new(),
        next_id: 1,
    };
    let mut polyline = Branch::new(0, None);
    polyline.push(fit.params.center, fit.params.radius);
    tracker.index.insert(fit.params.center, fit.params.radius, 0, 0);
    tracker.audit.push(AuditRecord::BranchStart {
        branch: 0,
        parent: None,
        start: point4(&fit.params),
        inherited_history: 0,
        inherited_nodes: 0,
        rebuilt: false,
    });

    let mut queue: BTreeMap<usize, BranchState> = BTreeMap::new();
    queue.insert(0, BranchState { id: 0, parent_id: None, tree, polyline, start: fit.params.center, steps_taken: 0 });
    while let Some((_, st)) = queue.pop_first() {
        for child in tracker.run_branch(st)? {
            queue.insert(child.id, child);
        }
    }

    let tree = assemble(seed, tracker.finished);
    Ok(TrackOutput { tree, audit: tracker.audit, terminations: tracker.terminations, stats: tracker.stats })
}

/// Orders branches by id, drops branches shorter than two points (re-parenting
/// their children) and rounds coordinates to the output resolution.
fn assemble(seed: Point3, mut branches: Vec<Branch>) -> CenterlineTree {
    branches.sort_by_key(|b| b.id);
    let parents: HashMap<usize, Option<usize>> = branches.iter().map(|b| (b.id, b.parent_id)).collect();
    let kept: HashMap<usize, bool> = branches.iter().map(|b| (b.id, b.len() >= 2)).collect();
    let mut out = CenterlineTree::new(seed);
    for mut b in branches.into_iter().filter(|b| b.len() >= 2) {
        let mut parent = b.parent_id;
        while let Some(p) = parent {
            if kept[&p] {
                break;
            }
            parent = parents[&p];
        }
        b.parent_id = parent;
        for p in b.points.iter_mut() {
            *p = p.map(quantize);
        }
        for r in b.radii.iter_mut() {
            *r = quantize(*r);
        }
        out.branches.push(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_trials() {
        assert_eq!(seed_directions().len(), 14);
        let r = seed_radii(1.0, 8.0);
        assert_eq!(r.len(), 4);
        assert!((r[1] - 2.0).abs() < 1e-12 && (r[3] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize(1.23456789), 1.234568);
    }
}
