//! Exact planar cells of a power diagram, clipped to a rectangle.
//!
//! Each cell is the bounding box cut by one half-plane per competing site.
//! Power-distance equality between sites `k` and `j` is linear in `z`:
//!
//! ```text
//! 2 (mu_j - mu_k) . z  <=  |mu_j|^2 - |mu_k|^2 - v_j^2 + v_k^2
//! ```
//!
//! so Sutherland-Hodgman clipping of a convex polygon gives the cell
//! directly. Cost is O(K^2) per diagram, which is fine for the class counts
//! this crate targets.

use serde::{Deserialize, Serialize};

use super::{dot, GeometryError, PowerSiteSet, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        let ok = min.iter().chain(&max).all(|c| c.is_finite())
            && max[0] > min[0]
            && max[1] > min[1];
        if ok {
            Ok(Self { min, max })
        } else {
            Err(GeometryError::InvalidBox)
        }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, p: &[f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }

    /// Corners in counterclockwise order starting at `min`.
    pub fn corners(&self) -> Vec<[f64; 2]> {
        vec![
            self.min,
            [self.max[0], self.min[1]],
            self.max,
            [self.min[0], self.max[1]],
        ]
    }

    /// Smallest box containing `points`, padded by `pad` times its extent.
    pub fn around(points: &[[f64; 2]], pad: f64) -> Result<Self> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for i in 0..2 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        let mut out = [min, max];
        for i in 0..2 {
            let extent = (max[i] - min[i]).max(1e-6);
            out[0][i] -= pad * extent;
            out[1][i] += pad * extent;
        }
        Self::new(out[0], out[1])
    }
}

/// One cell of a planar diagram. `vertices` is empty when the cell has no
/// area inside the bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPolygon2D {
    pub cell_index: usize,
    /// Convex, counterclockwise.
    pub vertices: Vec<[f64; 2]>,
    /// The cell reaches the bounding box, so the box truncated it.
    pub clipped: bool,
}

impl CellPolygon2D {
    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Inclusive containment for a convex counterclockwise polygon.
    pub fn contains(&self, p: &[f64; 2]) -> bool {
        if self.is_empty() {
            return false;
        }
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
        })
    }
}

pub(crate) fn polygon_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// Keeps the part of `poly` where `a . z <= b`.
fn clip(poly: &[[f64; 2]], a: [f64; 2], b: f64) -> Vec<[f64; 2]> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    let side = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let sp = side(&p);
        let sq = side(&q);
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    dedup(out)
}

fn dedup(mut v: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    const EPS: f64 = 1e-12;
    let close = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).abs() <= EPS && (a[1] - b[1]).abs() <= EPS;
    v.dedup_by(|a, b| close(a, b));
    while v.len() > 1 && close(&v[0], v.last().unwrap()) {
        v.pop();
    }
    v
}

/// Planar cells of `p` clipped to `bbox`.
pub fn compute_cells_2d(p: &PowerSiteSet, bbox: &BoundingBox) -> Result<Vec<CellPolygon2D>> {
    if p.base.dim() != 2 {
        return Err(GeometryError::NotPlanar(p.base.dim()));
    }
    let sites: Vec<[f64; 2]> = p.base.iter().map(|s| [s[0], s[1]]).collect();
    let w = p.weights_sq();
    let scale = bbox.width().max(bbox.height());
    let on_border = |q: &[f64; 2]| {
        let tol = 1e-9 * scale;
        (q[0] - bbox.min[0]).abs() <= tol
            || (q[0] - bbox.max[0]).abs() <= tol
            || (q[1] - bbox.min[1]).abs() <= tol
            || (q[1] - bbox.max[1]).abs() <= tol
    };

    let mut cells = Vec::with_capacity(sites.len());
    for (k, mk) in sites.iter().enumerate() {
        let mut poly = bbox.corners();
        for (j, mj) in sites.iter().enumerate() {
            if j == k || poly.is_empty() {
                continue;
            }
            let a = [2.0 * (mj[0] - mk[0]), 2.0 * (mj[1] - mk[1])];
            let b = dot(mj, mj) - dot(mk, mk) - w[j] + w[k];
            if a == [0.0, 0.0] {
                // coincident sites: the whole plane goes to one of them
                if b < 0.0 || (b == 0.0 && j < k) {
                    poly.clear();
                }
                continue;
            }
            poly = clip(&poly, a, b);
            if poly.len() < 3 {
                poly.clear();
            }
        }
        let clipped = poly.iter().any(on_border);
        cells.push(CellPolygon2D {
            cell_index: k,
            vertices: poly,
            clipped,
        });
    }
    Ok(cells)
}
