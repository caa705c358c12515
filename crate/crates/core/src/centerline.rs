//! Branching centerline trees and their JSON form
//! `{seed, branches: [{id, parent_id, points: [[x, y, z, r], ...]}]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: usize,
    pub parent_id: Option<usize>,
    pub points: Vec<Point3>,
    pub radii: Vec<f64>,
}

impl Branch {
    pub fn new(id: usize, parent_id: Option<usize>) -> Self {
        Self { id, parent_id, points: Vec::new(), radii: Vec::new() }
    }

    pub fn push(&mut self, p: Point3, r: f64) {
        self.points.push(p);
        self.radii.push(r);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineTree {
    pub seed: Point3,
    pub branches: Vec<Branch>,
}

#[derive(Serialize, Deserialize)]
struct BranchJson {
    id: usize,
    parent_id: Option<usize>,
    points: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    seed: [f64; 3],
    branches: Vec<BranchJson>,
}

impl Serialize for CenterlineTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TreeJson {
            seed: [self.seed.x, self.seed.y, self.seed.z],
            branches: self
                .branches
                .iter()
                .map(|b| BranchJson {
                    id: b.id,
                    parent_id: b.parent_id,
                    points: b.points.iter().zip(&b.radii).map(|(p, r)| [p.x, p.y, p.z, *r]).collect(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CenterlineTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = TreeJson::deserialize(d)?;
        Ok(CenterlineTree {
            seed: Point3::from(raw.seed),
            branches: raw
                .branches
                .into_iter()
                .map(|b| Branch {
                    id: b.id,
                    parent_id: b.parent_id,
                    points: b.points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
                    radii: b.points.iter().map(|p| p[3]).collect(),
                })
                .collect(),
        })
    }
}

impl CenterlineTree {
    pub fn new(seed: Point3) -> Self {
        Self { seed, branches: Vec::new() }
    }

    pub fn branch(&self, id: usize) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn total_length(&self) -> f64 {
        self.branches.iter().map(Branch::length).sum()
    }

    pub fn point_count(&self) -> usize {
        self.branches.iter().map(Branch::len).sum()
    }

    /// Every point with its radius, branch by branch.
    pub fn points_with_radii(&self) -> impl Iterator<Item = (Point3, f64)> + '_ {
        self.branches.iter().flat_map(|b| b.points.iter().copied().zip(b.radii.iter().copied()))
    }

    /// Checks ids, parent references, point counts and child attachment.
    /// `attach_tol` bounds the distance from a child's first point to the
    /// nearest point of its parent.
    pub fn validate(&self, attach_tol: f64) -> Result<()> {
        let mut ids: Vec<usize> = self.branches.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Centerline("duplicate branch id".into()));
        }
        for b in &self.branches {
            if b.points.len() != b.radii.len() {
                return Err(Error::Centerline(format!("branch {} has mismatched radii", b.id)));
            }
            if b.points.len() < 2 {
                return Err(Error::Centerline(format!("branch {} has fewer than 2 points", b.id)));
            }
            if b.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) || b.radii.iter().any(|r| !(*r >= 0.0)) {
                return Err(Error::Centerline(format!("branch {} has non-finite points or radii", b.id)));
            }
            if let Some(pid) = b.parent_id {
                let parent = self
                    .branch(pid)
                    .ok_or_else(|| Error::Centerline(format!("branch {} references missing parent {pid}", b.id)))?;
                let gap = parent.points.iter().map(|p| (p - b.points[0]).norm()).fold(f64::INFINITY, f64::min);
                if gap > attach_tol {
                    return Err(Error::Centerline(format!(
                        "branch {} starts {gap:.3} mm from its parent {pid}",
                        b.id
                    )));
                }
            }
        }
        // parent chains must terminate
        for b in &self.branches {
            let mut cur = b.parent_id;
            let mut hops = 0;
            while let Some(pid) = cur {
                hops += 1;
                if hops > self.branches.len() {
                    return Err(Error::Centerline("parent references form a cycle".into()));
                }
                cur = self.branch(pid).and_then(|p| p.parent_id);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Centerline(format!("file not found: {}", path.display())),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}
