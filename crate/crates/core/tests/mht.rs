use std::collections::HashMap;

use mhtrack::fitting::FitResult;
use mhtrack::mht::{CandidateStatus, ExtendOutcome};
use mhtrack::{global_score, rank_hypotheses, HypothesisTree, LocalHypothesis, Point3, RankScope, ScoringMode, Thresholds};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank by counting: one plus the number of better entries, where an equal
/// entry earlier in the list counts as better.
fn rank_oracle(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let better = xs.iter().enumerate().filter(|&(j, &y)| y > x || (y == x && j < i)).count();
            1.0 / (better + 1) as f64
        })
        .collect()
}

#[test]
fn ranking_law_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..12);
        // coarse values so ties are common
        let xs: Vec<f64> = (0..n).map(|_| (rng.random_range(-3..4) as f64) * 0.5).collect();
        assert_eq!(rank_hypotheses(&xs), rank_oracle(&xs), "{xs:?}");
    }
}

#[test]
fn ranking_examples() {
    assert_eq!(rank_hypotheses(&[0.2, 3.0, 1.0]), vec![1.0 / 3.0, 1.0, 0.5]);
    assert_eq!(rank_hypotheses(&[5.0]), vec![1.0]);
    assert!(rank_hypotheses(&[]).is_empty());
    // NaN never outranks a number
    assert_eq!(rank_hypotheses(&[f64::NAN, -1.0]), vec![0.5, 1.0]);
}

fn local(score: f64, rank: f64) -> LocalHypothesis {
    LocalHypothesis::new(FitResult::synthetic(Point3::zeros(), score), rank, 0)
}

#[test]
fn global_score_examples() {
    let path = [local(9.0, 1.0), local(4.0, 0.5), local(1.0, 1.0 / 3.0)];
    assert!((global_score(&path, ScoringMode::Modified) - 11.0 / 18.0).abs() < 1e-15);
    assert!((global_score(&path, ScoringMode::Original) - 14.0 / 3.0).abs() < 1e-15);
    assert_eq!(global_score(&[], ScoringMode::Modified), 0.0);
}

/// Candidate lists keyed by the index path from the root.
struct Scenario {
    children: HashMap<Vec<usize>, Vec<f64>>,
    ids: HashMap<Vec<usize>, usize>,
    paths: Vec<Vec<usize>>,
}

impl Scenario {
    fn random(rng: &mut ChaCha8Rng, depth: usize, coarse: bool) -> Self {
        let mut s = Scenario { children: HashMap::new(), ids: HashMap::new(), paths: vec![vec![]] };
        s.ids.insert(vec![], 0);
        let mut level = vec![vec![]];
        for _ in 0..depth {
            let mut next = Vec::new();
            for p in &level {
                let n = rng.random_range(0..=3);
                let scores: Vec<f64> = (0..n)
                    .map(|_| if coarse { rng.random_range(0..4) as f64 } else { rng.random_range(0.0..10.0) })
                    .collect();
                for i in 0..n {
                    let mut c: Vec<usize> = p.clone();
                    c.push(i);
                    s.ids.insert(c.clone(), s.paths.len());
                    s.paths.push(c.clone());
                    next.push(c);
                }
                s.children.insert(p.clone(), scores);
            }
            level = next;
        }
        s
    }

    fn fit(&self, path: &[usize]) -> FitResult {
        let (parent, last) = path.split_at(path.len() - 1);
        let score = self.children[parent][last[0]];
        FitResult::synthetic(Point3::new(self.ids[path] as f64 * 10.0, 0.0, 0.0), score)
    }

    fn path_of(&self, fit: &FitResult) -> &Vec<usize> {
        &self.paths[(fit.params.center.x / 10.0).round() as usize]
    }

    /// Local score of the node at `path` under `mode`.
    fn local_score(&self, path: &[usize], mode: ScoringMode) -> f64 {
        let (parent, last) = path.split_at(path.len() - 1);
        let sib = &self.children[parent];
        match mode {
            ScoringMode::Original => sib[last[0]],
            ScoringMode::Modified => rank_oracle(sib)[last[0]],
        }
    }
}

/// Full-depth paths that survive the thresholds, in frontier order, with
/// their global scores.
fn surviving_paths(s: &Scenario, depth: usize, mode: ScoringMode, th: Thresholds) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![vec![]];
    // lexicographic enumeration matches the order leaves are created in
    let mut full = Vec::new();
    while let Some(p) = stack.pop() {
        if p.len() == depth {
            full.push(p);
            continue;
        }
        let n = s.children.get(&p).map_or(0, |c| c.len());
        for i in (0..n).rev() {
            let mut c = p.clone();
            c.push(i);
            let local_ok = match (mode, th.local) {
                (ScoringMode::Original, Some(t)) => s.local_score(&c, mode) >= t,
                _ => true,
            };
            if local_ok {
                stack.push(c);
            }
        }
    }
    for p in full {
        let mut sum = 0.0;
        for l in 1..=depth {
            sum += s.local_score(&p[..l], mode);
        }
        let score = sum / depth as f64;
        if score >= th.global {
            out.push((p, score));
        }
    }
    out
}

fn run_commit_oracle(mode: ScoringMode, th: Thresholds, coarse: bool, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for _ in 0..400 {
        let depth = rng.random_range(1..=4);
        let s = Scenario::random(&mut rng, depth, coarse);
        let root = LocalHypothesis::new(FitResult::synthetic(Point3::zeros(), 1.0), 1.0, 0);
        let mut tree = HypothesisTree::new(root, mode, depth, th, RankScope::PerParent).unwrap();
        let mut outcome = ExtendOutcome::Extended;
        for _ in 0..depth {
            let lists: Vec<Vec<FitResult>> = tree
                .frontier()
                .iter()
                .map(|&id| {
                    let p = if id == 0 { vec![] } else { s.path_of(&tree.leaf(id).fit).clone() };
                    let n = s.children.get(&p).map_or(0, |c| c.len());
                    (0..n)
                        .map(|i| {
                            let mut c = p.clone();
                            c.push(i);
                            s.fit(&c)
                        })
                        .collect()
                })
                .collect();
            let report = tree.extend_and_prune(lists).unwrap();
            outcome = report.outcome;
            if outcome != ExtendOutcome::Extended {
                break;
            }
        }

        let survivors = surviving_paths(&s, depth, mode, th);
        if survivors.is_empty() {
            assert_ne!(outcome, ExtendOutcome::Extended, "tree kept a path the oracle rejects");
            continue;
        }
        assert_eq!(outcome, ExtendOutcome::Extended);
        assert_eq!(tree.frontier().len(), survivors.len());

        // best score, then larger raw score of the first step, then first seen
        let mut best = &survivors[0];
        for cand in &survivors[1..] {
            let anchor = |p: &Vec<usize>| s.local_score(&p[..1], ScoringMode::Original);
            if cand.1 > best.1 || (cand.1 == best.1 && anchor(&cand.0) > anchor(&best.0)) {
                best = cand;
            }
        }
        let committed = tree.commit_step().unwrap();
        assert_eq!(s.path_of(&committed.fit), &best.0[..1].to_vec());
        let under = survivors.iter().filter(|(p, _)| p[0] == best.0[0]).count();
        assert_eq!(tree.frontier().len(), under);
        checked += 1;
    }
    assert!(checked > 50, "only {checked} scenarios reached a commit");
}

#[test]
fn commit_matches_exhaustive_search_modified() {
    run_commit_oracle(ScoringMode::Modified, Thresholds { local: None, global: 0.6 }, true, 1);
}

#[test]
fn commit_matches_exhaustive_search_original() {
    run_commit_oracle(ScoringMode::Original, Thresholds { local: Some(2.0), global: 4.0 }, false, 2);
}

#[test]
fn commit_matches_exhaustive_search_with_ties() {
    run_commit_oracle(ScoringMode::Original, Thresholds { local: Some(1.0), global: 1.5 }, true, 3);
}

#[test]
fn local_threshold_pruning_is_reported() {
    let root = local(1.0, 1.0);
    let th = Thresholds { local: Some(2.0), global: 4.0 };
    let mut tree = HypothesisTree::new(root, ScoringMode::Original, 2, th, RankScope::PerParent).unwrap();
    let fits = vec![
        FitResult::synthetic(Point3::new(0.0, 0.0, 1.0), 1.0),
        FitResult::synthetic(Point3::new(5.0, 0.0, 1.0), 3.0),
    ];
    let report = tree.extend_and_prune(vec![fits]).unwrap();
    let status: Vec<_> = report.records.iter().map(|r| r.status).collect();
    assert_eq!(status, vec![CandidateStatus::PrunedLocal, CandidateStatus::Kept]);
    assert_eq!(tree.frontier().len(), 1);
}

#[test]
fn modified_mode_rejects_local_threshold() {
    let th = Thresholds { local: Some(1.0), global: 0.5 };
    assert!(HypothesisTree::new(local(1.0, 1.0), ScoringMode::Modified, 3, th, RankScope::PerParent).is_err());
}

#[test]
fn leaf_merge_keeps_the_better_path() {
    let th = Thresholds { local: None, global: 0.0 };
    let mut tree = HypothesisTree::new(local(1.0, 1.0), ScoringMode::Original, 3, th, RankScope::PerParent)
        .unwrap()
        .with_leaf_merge(0.5);
    let fits = vec![
        FitResult::synthetic(Point3::new(0.0, 0.0, 1.0), 2.0),
        FitResult::synthetic(Point3::new(0.3, 0.0, 1.0), 5.0),
        FitResult::synthetic(Point3::new(3.0, 0.0, 1.0), 1.0),
    ];
    let report = tree.extend_and_prune(vec![fits]).unwrap();
    let status: Vec<_> = report.records.iter().map(|r| r.status).collect();
    assert_eq!(status, vec![CandidateStatus::Merged, CandidateStatus::Kept, CandidateStatus::Kept]);
}

proptest! {
    #[test]
    fn ranks_are_a_permutation_of_reciprocals(xs in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let mut ranks = rank_hypotheses(&xs);
        ranks.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (i, r) in ranks.iter().enumerate() {
            prop_assert_eq!(*r, 1.0 / (i + 1) as f64);
        }
    }

    #[test]
    fn ranks_are_invariant_to_monotone_maps(xs in prop::collection::vec(-10.0f64..10.0, 1..20), a in 0.1f64..5.0, b in -5.0f64..5.0) {
        let mapped: Vec<f64> = xs.iter().map(|x| (a * x + b).exp()).collect();
        prop_assert_eq!(rank_hypotheses(&xs), rank_hypotheses(&mapped));
    }

    #[test]
    fn best_ranked_is_always_one(xs in prop::collection::vec(-1e6f64..1e6, 1..20), scale in 1e-3f64..1e3) {
        let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
        let r = rank_hypotheses(&scaled);
        let best = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = scaled.iter().position(|&x| x == best).unwrap();
        prop_assert_eq!(r[first], 1.0);
    }

    #[test]
    fn global_score_lies_between_extremes(scores in prop::collection::vec(0.0f64..10.0, 1..10)) {
        let path: Vec<LocalHypothesis> = scores.iter().map(|&s| local(s, 1.0 / (1.0 + s))).collect();
        for mode in [ScoringMode::Original, ScoringMode::Modified] {
            let g = global_score(&path, mode);
            let vals: Vec<f64> = path.iter().map(|h| h.score(mode)).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(g >= lo - 1e-12 && g <= hi + 1e-12);
        }
    }
}
