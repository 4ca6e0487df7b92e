//! Finite point sets in `T^d × R^d`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::export::{self, Scatter};
use crate::model::{norm, torus_distance, Coords};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Coords,
    pub v: Coords,
}

/// Continuous phase-space state; same layout as a set point.
pub type PhaseState = PhasePoint;

impl PhasePoint {
    pub fn new(x: &[f64], v: &[f64]) -> Self {
        Self {
            x: crate::model::pad(x),
            v: crate::model::pad(v),
        }
    }

    fn key(&self) -> [u64; 4] {
        [
            self.x[0].to_bits(),
            self.x[1].to_bits(),
            self.v[0].to_bits(),
            self.v[1].to_bits(),
        ]
    }
}

/// `d((x,v),(x',v')) = |x − x'|_torus + |v − v'|`.
pub fn phase_distance(a: &PhasePoint, b: &PhasePoint) -> f64 {
    let dv = [a.v[0] - b.v[0], a.v[1] - b.v[1]];
    torus_distance(&a.x, &b.x) + norm(&dv)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Mather,
    Aubry,
    Reference,
    Support,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSet {
    pub dim: usize,
    pub kind: SetKind,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub points: Vec<PhasePoint>,
}

impl PhaseSet {
    pub fn new(dim: usize, kind: SetKind, points: Vec<PhasePoint>) -> Self {
        Self {
            dim,
            kind,
            tau: None,
            epsilon: None,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact membership (bitwise coordinates).
    pub fn contains(&self, p: &PhasePoint) -> bool {
        let k = p.key();
        self.points.iter().any(|q| q.key() == k)
    }

    /// Exact point-set inclusion.
    pub fn is_subset_of(&self, other: &PhaseSet) -> bool {
        let mut keys: Vec<[u64; 4]> = other.points.iter().map(PhasePoint::key).collect();
        keys.sort_unstable();
        self.points.iter().all(|p| keys.binary_search(&p.key()).is_ok())
    }

    /// Same points regardless of order and multiplicity.
    pub fn same_points(&self, other: &PhaseSet) -> bool {
        self.is_subset_of(other) && other.is_subset_of(self)
    }

    /// Points sorted by coordinates, duplicates removed.
    pub fn canonical(&self) -> Vec<PhasePoint> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| {
            a.x.iter()
                .chain(&a.v)
                .zip(b.x.iter().chain(&b.v))
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        pts.dedup_by(|a, b| a.key() == b.key());
        pts
    }

    /// CSV with columns `x[,y],v[,w]` in canonical order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim;
        let header = if d == 1 { "x,v" } else { "x,y,vx,vy" };
        writeln!(w, "{header}")?;
        for p in self.canonical() {
            let fields: Vec<String> = p.x[..d].iter().chain(&p.v[..d]).map(|c| c.to_string()).collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Scatter over the `(x, v)` rectangle; only meaningful for `d = 1`.
    pub fn write_svg<W: Write>(&self, w: W, title: &str) -> Result<()> {
        let pts: Vec<(f64, f64)> = self.canonical().iter().map(|p| (p.x[0], p.v[0])).collect();
        export::scatter_svg(
            w,
            title,
            "x",
            "v",
            &[Scatter {
                label: format!("{:?}", self.kind).to_lowercase(),
                points: pts,
            }],
        )
    }
}
