//! Hypothesis tree with deferred, depth-`d` commit decisions.
//!
//! The root is the last committed segment; every extension adds one level of
//! scored candidates below the current frontier. Once the frontier reaches the
//! search depth, the best full-depth path decides which root child is
//! committed and every other subtree is discarded.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::FitResult;
use crate::geom::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Raw contrast-SNR scores with local and global thresholds.
    Original,
    /// Rank scores `1/R` with a single global threshold.
    #[default]
    Modified,
}

impl ScoringMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMode::Original => "original",
            ScoringMode::Modified => "modified",
        }
    }
}

/// Which candidates compete for ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankScope {
    /// Candidates predicted from the same frontier leaf.
    #[default]
    PerParent,
    /// All candidates generated at one step, across leaves.
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub local: Option<f64>,
    pub global: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalHypothesis {
    pub fit: FitResult,
    pub raw_score: f64,
    pub rank_score: f64,
    pub step_index: usize,
}

impl LocalHypothesis {
    pub fn new(fit: FitResult, rank_score: f64, step_index: usize) -> Self {
        Self { raw_score: fit.raw_score, fit, rank_score, step_index }
    }

    pub fn score(&self, mode: ScoringMode) -> f64 {
        match mode {
            ScoringMode::Original => self.raw_score,
            ScoringMode::Modified => self.rank_score,
        }
    }
}

/// Rank scores `1/R` where `R` is the position in descending raw-score order.
/// Equal scores keep input order, so the first one seen gets the better rank.
pub fn rank_hypotheses(raw_scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..raw_scores.len()).collect();
    order.sort_by(|&a, &b| descending(raw_scores[a], raw_scores[b]));
    let mut ranks = vec![0.0; raw_scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = 1.0 / (pos + 1) as f64;
    }
    ranks
}

fn descending(a: f64, b: f64) -> Ordering {
    // NaN sorts last
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => b.partial_cmp(&a).unwrap_or(Ordering::Equal),
    }
}

/// Mean score over a path of local hypotheses; 0 for an empty path.
pub fn global_score(path: &[LocalHypothesis], mode: ScoringMode) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    path.iter().map(|h| h.score(mode)).sum::<f64>() / path.len() as f64
}

pub type NodeId = usize;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisNode {
    pub local: LocalHypothesis,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateStatus {
    Kept,
    PrunedLocal,
    PrunedGlobal,
    Trimmed,
    /// Dropped as a near-duplicate of a leaf with a better path score.
    Merged,
}

/// What happened to one candidate during [`HypothesisTree::extend_and_prune`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// Position of the parent leaf in the frontier before the extension.
    pub leaf: usize,
    /// Position of the candidate in that leaf's input list.
    pub index: usize,
    pub raw_score: f64,
    pub rank_score: f64,
    pub status: CandidateStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtendOutcome {
    /// The frontier advanced by one level.
    Extended,
    /// No leaf had a candidate surviving the local stage; the tree is unchanged.
    Exhausted,
    /// Candidates existed but every full-depth path failed the global threshold.
    Pruned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtendReport {
    pub outcome: ExtendOutcome,
    pub records: Vec<CandidateRecord>,
}

pub const DEFAULT_FRONTIER_CAP: usize = 300;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisTree {
    mode: ScoringMode,
    search_depth: usize,
    thresholds: Thresholds,
    rank_scope: RankScope,
    frontier_cap: usize,
    /// Leaves closer than this many radii to a better leaf are merged into it.
    #[serde(default)]
    merge_factor: Option<f64>,
    /// Committed history of this lineage, oldest first; the last entry is the root.
    committed: Vec<LocalHypothesis>,
    nodes: Vec<HypothesisNode>,
    frontier: Vec<NodeId>,
    trimmed: usize,
}

impl HypothesisTree {
    /// New tree rooted at `root`, which counts as already committed.
    pub fn new(
        root: LocalHypothesis,
        mode: ScoringMode,
        search_depth: usize,
        thresholds: Thresholds,
        rank_scope: RankScope,
    ) -> Result<Self> {
        if search_depth == 0 {
            return Err(Error::param("search depth must be at least 1"));
        }
        if mode == ScoringMode::Modified && thresholds.local.is_some() {
            return Err(Error::param("modified mode takes no local threshold"));
        }
        if !thresholds.global.is_finite() || thresholds.local.is_some_and(|t| !t.is_finite()) {
            return Err(Error::param("thresholds must be finite"));
        }
        Ok(Self {
            mode,
            search_depth,
            thresholds,
            rank_scope,
            frontier_cap: DEFAULT_FRONTIER_CAP,
            merge_factor: None,
            committed: vec![root],
            nodes: vec![HypothesisNode { local: root, parent: None, depth: 0, children: Vec::new() }],
            frontier: vec![0],
            trimmed: 0,
        })
    }

    pub fn with_frontier_cap(mut self, cap: usize) -> Self {
        self.frontier_cap = cap.max(1);
        self
    }

    /// Merges new leaves that land within `factor` radii of a leaf with a
    /// better path score, wherever their parents are.
    pub fn with_leaf_merge(mut self, factor: f64) -> Self {
        self.merge_factor = (factor > 0.0).then_some(factor);
        self
    }

    /// Same settings, fresh tree rooted at `root` with `history` as committed lineage.
    pub fn fresh(&self, history: Vec<LocalHypothesis>, root: LocalHypothesis) -> Self {
        let mut committed = history;
        committed.push(root);
        Self {
            committed,
            nodes: vec![HypothesisNode { local: root, parent: None, depth: 0, children: Vec::new() }],
            frontier: vec![0],
            trimmed: 0,
            ..self.clone()
        }
    }

    pub fn mode(&self) -> ScoringMode {
        self.mode
    }

    pub fn search_depth(&self) -> usize {
        self.search_depth
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn committed(&self) -> &[LocalHypothesis] {
        &self.committed
    }

    pub fn root(&self) -> &LocalHypothesis {
        &self.nodes[0].local
    }

    pub fn nodes(&self) -> &[HypothesisNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Live leaves in stable creation order.
    pub fn frontier(&self) -> &[NodeId] {
        &self.frontier
    }

    pub fn is_terminal(&self) -> bool {
        self.frontier.is_empty()
    }

    /// Depth of the frontier below the root.
    pub fn frontier_depth(&self) -> usize {
        self.frontier.first().map_or(0, |&id| self.nodes[id].depth)
    }

    /// Leaves dropped by the frontier cap so far.
    pub fn trimmed_count(&self) -> usize {
        self.trimmed
    }

    pub fn leaf(&self, id: NodeId) -> &LocalHypothesis {
        &self.nodes[id].local
    }

    /// Hypotheses from the root's child down to `id`.
    pub fn path_to(&self, id: NodeId) -> Vec<LocalHypothesis> {
        self.path_ids(id).into_iter().map(|n| self.nodes[n].local).collect()
    }

    fn path_ids(&self, id: NodeId) -> Vec<NodeId> {
        let mut ids = Vec::with_capacity(self.nodes[id].depth);
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            ids.push(cur);
            cur = parent;
        }
        ids.reverse();
        ids
    }

    /// Global score of the path ending at `id`.
    pub fn path_score(&self, id: NodeId) -> f64 {
        global_score(&self.path_to(id), self.mode)
    }

    /// Attaches one level of candidates below the frontier, one list per leaf
    /// in frontier order, then applies the thresholds.
    pub fn extend_and_prune(&mut self, candidates: Vec<Vec<FitResult>>) -> Result<ExtendReport> {
        if self.frontier.is_empty() {
            return Err(Error::Tree("cannot extend a terminal tree".into()));
        }
        if candidates.len() != self.frontier.len() {
            return Err(Error::Tree(format!(
                "{} candidate lists for {} frontier leaves",
                candidates.len(),
                self.frontier.len()
            )));
        }

        let ranks: Vec<Vec<f64>> = match self.rank_scope {
            RankScope::PerParent => candidates
                .iter()
                .map(|c| rank_hypotheses(&c.iter().map(|f| f.raw_score).collect::<Vec<_>>()))
                .collect(),
            RankScope::Step => {
                let flat: Vec<f64> = candidates.iter().flatten().map(|f| f.raw_score).collect();
                let flat_ranks = rank_hypotheses(&flat);
                let mut it = flat_ranks.into_iter();
                candidates.iter().map(|c| it.by_ref().take(c.len()).collect()).collect()
            }
        };

        let mut records = Vec::new();
        let mut survivors: Vec<Vec<(usize, LocalHypothesis)>> = Vec::with_capacity(candidates.len());
        for (leaf_pos, (list, leaf_ranks)) in candidates.iter().zip(&ranks).enumerate() {
            let parent_depth = self.nodes[self.frontier[leaf_pos]].depth;
            let step_index = self.committed.len() + parent_depth;
            let mut kept = Vec::new();
            for (ci, (fit, &rank)) in list.iter().zip(leaf_ranks).enumerate() {
                let local = LocalHypothesis::new(*fit, rank, step_index);
                let passes_local = match (self.mode, self.thresholds.local) {
                    (ScoringMode::Original, Some(t)) => local.raw_score >= t,
                    _ => true,
                };
                records.push(CandidateRecord {
                    leaf: leaf_pos,
                    index: ci,
                    raw_score: local.raw_score,
                    rank_score: rank,
                    status: if passes_local { CandidateStatus::Kept } else { CandidateStatus::PrunedLocal },
                });
                if passes_local {
                    kept.push((records.len() - 1, local));
                }
            }
            survivors.push(kept);
        }

        if survivors.iter().all(|s| s.is_empty()) {
            return Ok(ExtendReport { outcome: ExtendOutcome::Exhausted, records });
        }

        let old_frontier = std::mem::take(&mut self.frontier);
        let mut record_of = Vec::new();
        for (leaf_id, kept) in old_frontier.iter().zip(survivors) {
            for (rec, local) in kept {
                let id = self.nodes.len();
                let depth = self.nodes[*leaf_id].depth + 1;
                self.nodes.push(HypothesisNode { local, parent: Some(*leaf_id), depth, children: Vec::new() });
                self.nodes[*leaf_id].children.push(id);
                self.frontier.push(id);
                record_of.push((id, rec));
            }
        }

        let mut dropped = vec![false; self.nodes.len()];
        if let Some(factor) = self.merge_factor {
            let scores: Vec<f64> = self.frontier.iter().map(|&id| self.path_score(id)).collect();
            let mut order: Vec<usize> = (0..self.frontier.len()).collect();
            order.sort_by(|&a, &b| descending(scores[a], scores[b]).then(a.cmp(&b)));
            let mut kept: Vec<(Point3, f64)> = Vec::new();
            for pos in order {
                let id = self.frontier[pos];
                let p = &self.nodes[id].local.fit.params;
                if kept.iter().any(|(c, r)| (c - p.center).norm() < factor * r) {
                    dropped[id] = true;
                } else {
                    kept.push((p.center, p.radius));
                }
            }
            for &(id, rec) in &record_of {
                if dropped[id] {
                    records[rec].status = CandidateStatus::Merged;
                }
            }
        }
        if self.frontier_depth() >= self.search_depth {
            for &id in &self.frontier {
                if !dropped[id] && self.path_score(id) < self.thresholds.global {
                    dropped[id] = true;
                }
            }
            for &(id, rec) in &record_of {
                if dropped[id] {
                    records[rec].status = CandidateStatus::PrunedGlobal;
                }
            }
        }

        let live: Vec<NodeId> = self.frontier.iter().copied().filter(|&id| !dropped[id]).collect();
        if live.len() > self.frontier_cap {
            let mut order: Vec<NodeId> = live.clone();
            // stable: among equal scores the earlier leaf stays
            order.sort_by(|&a, &b| descending(self.path_score(a), self.path_score(b)));
            for &id in &order[self.frontier_cap..] {
                dropped[id] = true;
                self.trimmed += 1;
            }
            for &(id, rec) in &record_of {
                if dropped[id] && records[rec].status == CandidateStatus::Kept {
                    records[rec].status = CandidateStatus::Trimmed;
                }
            }
        }

        self.frontier.retain(|&id| !dropped[id]);
        let outcome = if self.frontier.is_empty() { ExtendOutcome::Pruned } else { ExtendOutcome::Extended };
        self.compact_to(0);
        Ok(ExtendReport { outcome, records })
    }

    /// Whether the frontier has reached the search depth.
    pub fn ready_to_commit(&self) -> bool {
        !self.frontier.is_empty() && self.frontier_depth() >= self.search_depth
    }

    /// Best frontier leaf: highest path score, then larger raw score of the
    /// root-adjacent ancestor, then frontier order.
    pub fn best_leaf(&self) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64, f64)> = None;
        for &id in &self.frontier {
            let score = self.path_score(id);
            let anchor = self.path_ids(id).first().map_or(f64::NEG_INFINITY, |&a| self.nodes[a].local.raw_score);
            let better = match best {
                None => true,
                Some((_, bs, ba)) => score > bs || (score == bs && anchor > ba),
            };
            if better {
                best = Some((id, score, anchor));
            }
        }
        best.map(|(id, _, _)| id)
    }

    /// Commits the root child on the best full-depth path and discards every
    /// other subtree.
    pub fn commit_step(&mut self) -> Result<LocalHypothesis> {
        if !self.ready_to_commit() {
            return Err(Error::Tree(format!(
                "commit requested at depth {} before search depth {}",
                self.frontier_depth(),
                self.search_depth
            )));
        }
        let best = self.best_leaf().expect("frontier is non-empty");
        let anchor = self.path_ids(best)[0];
        let local = self.nodes[anchor].local;
        self.committed.push(local);
        self.compact_to(anchor);
        Ok(local)
    }

    /// Commits the whole path to `leaf` at once, leaving a tree rooted at it.
    pub fn commit_path(&mut self, leaf: NodeId) -> Vec<LocalHypothesis> {
        let path = self.path_to(leaf);
        self.committed.extend(path.iter().copied());
        self.compact_to(leaf);
        path
    }

    /// Splits the tree between two groups of frontier leaves (given as
    /// frontier positions). Returns the path shared by both groups, which the
    /// caller commits, and one subtree per group rooted at the split point.
    /// Each subtree carries the committed history plus the shared path.
    pub fn split(&self, groups: [&[usize]; 2]) -> Result<(Vec<LocalHypothesis>, [HypothesisTree; 2])> {
        if groups.iter().any(|g| g.is_empty()) {
            return Err(Error::Tree("split needs two non-empty leaf groups".into()));
        }
        let paths: Vec<Vec<NodeId>> = groups
            .iter()
            .flat_map(|g| g.iter())
            .map(|&pos| {
                self.frontier
                    .get(pos)
                    .map(|&id| self.path_ids(id))
                    .ok_or_else(|| Error::Tree(format!("frontier position {pos} out of range")))
            })
            .collect::<Result<_>>()?;
        let mut shared = 0;
        while paths.iter().all(|p| p.len() > shared && p[shared] == paths[0][shared]) {
            shared += 1;
        }
        let prefix_ids = &paths[0][..shared];
        let fork = prefix_ids.last().copied().unwrap_or(0);
        let prefix: Vec<LocalHypothesis> = prefix_ids.iter().map(|&id| self.nodes[id].local).collect();

        let make = |group: &[usize]| {
            let mut keep = vec![false; self.nodes.len()];
            for &pos in group {
                let mut cur = self.frontier[pos];
                loop {
                    keep[cur] = true;
                    match self.nodes[cur].parent {
                        Some(p) if cur != fork => cur = p,
                        _ => break,
                    }
                }
            }
            let mut sub = self.clone();
            sub.committed.extend(prefix.iter().copied());
            sub.frontier = group.iter().map(|&pos| self.frontier[pos]).collect();
            sub.frontier.sort_unstable();
            for (id, node) in sub.nodes.iter_mut().enumerate() {
                node.children.retain(|c| keep[*c]);
                if !keep[id] {
                    node.children.clear();
                }
            }
            sub.trimmed = 0;
            sub.compact_to(fork);
            sub
        };
        let trees = [make(groups[0]), make(groups[1])];
        Ok((prefix, trees))
    }

    /// Rebuilds the arena keeping only `new_root` and its descendants that
    /// still lead to a frontier leaf.
    fn compact_to(&mut self, new_root: NodeId) {
        let n = self.nodes.len();
        let mut alive = vec![false; n];
        for &id in &self.frontier {
            let mut cur = id;
            loop {
                if alive[cur] {
                    break;
                }
                alive[cur] = true;
                if cur == new_root {
                    break;
                }
                match self.nodes[cur].parent {
                    Some(p) => cur = p,
                    None => break,
                }
            }
        }
        alive[new_root] = true;

        let root_depth = self.nodes[new_root].depth;
        let mut remap = vec![usize::MAX; n];
        let mut order = vec![new_root];
        let mut head = 0;
        while head < order.len() {
            let id = order[head];
            head += 1;
            remap[id] = head - 1;
            for &c in &self.nodes[id].children {
                if alive[c] {
                    order.push(c);
                }
            }
        }
        let mut nodes = Vec::with_capacity(order.len());
        for &old in &order {
            let node = &self.nodes[old];
            nodes.push(HypothesisNode {
                local: node.local,
                parent: if old == new_root { None } else { node.parent.map(|p| remap[p]) },
                depth: node.depth - root_depth,
                children: node.children.iter().filter(|&&c| alive[c]).map(|&c| remap[c]).collect(),
            });
        }
        let frontier = self
            .frontier
            .iter()
            .filter(|&&id| remap[id] != usize::MAX)
            .map(|&id| remap[id])
            .collect::<Vec<_>>();
        let mut frontier = frontier;
        frontier.sort_unstable();
        // a tree that is only its root extends from the root
        if frontier.is_empty() && !self.frontier.is_empty() {
            frontier.push(0);
        }
        self.nodes = nodes;
        self.frontier = frontier;
    }
}
