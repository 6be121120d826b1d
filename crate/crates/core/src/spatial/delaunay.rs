//! Incremental Bowyer–Watson Delaunay triangulation.
//!
//! The convex hull is closed with "ghost" triangles that share a single
//! vertex at infinity, so no finite super-triangle can clip hull edges. All
//! geometric decisions go through the adaptive-precision predicates of the
//! `robust` crate, which return exact signs.
//!
//! When four or more points are cocircular several triangulations are valid.
//! A final flip pass makes the result canonical: every cocircular interior
//! edge is replaced by the alternative diagonal whenever that diagonal's
//! sorted endpoint pair is lexicographically smaller.

use std::collections::{HashMap, HashSet};

use robust::Coord;

use crate::error::{Error, Result};

const GHOST: usize = usize::MAX;

/// Counter-clockwise triangles over indices into the input point set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triangulation {
    pub triangles: Vec<[usize; 3]>,
}

impl Triangulation {
    /// Undirected edges as sorted `(lo, hi)` pairs, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        let mut edges: Vec<_> = set.into_iter().collect();
        edges.sort_unstable();
        edges
    }
}

#[inline]
fn coord(p: (f64, f64)) -> Coord<f64> {
    Coord { x: p.0, y: p.1 }
}

/// Sign of the signed area of `(a, b, c)`; positive when counter-clockwise.
#[inline]
pub fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    robust::orient2d(coord(a), coord(b), coord(c))
}

/// Positive when `d` lies strictly inside the circle through the
/// counter-clockwise triangle `(a, b, c)`.
#[inline]
pub fn in_circle(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> f64 {
    robust::incircle(coord(a), coord(b), coord(c), coord(d))
}

struct Builder<'a> {
    pts: &'a [(f64, f64)],
    tris: Vec<[usize; 3]>,
}

impl Builder<'_> {
    /// Whether inserting `p` destroys triangle `t`.
    fn conflicts(&self, t: &[usize; 3], p: (f64, f64)) -> bool {
        match t.iter().position(|&v| v == GHOST) {
            None => in_circle(self.pts[t[0]], self.pts[t[1]], self.pts[t[2]], p) > 0.0,
            Some(g) => {
                // ghost (a, b, ∞): hull edge b → a has the interior on its left
                let a = self.pts[t[(g + 1) % 3]];
                let b = self.pts[t[(g + 2) % 3]];
                let o = orient(a, b, p);
                if o != 0.0 {
                    return o > 0.0;
                }
                // collinear: conflict only strictly inside the segment
                let (lo_x, hi_x) = (a.0.min(b.0), a.0.max(b.0));
                let (lo_y, hi_y) = (a.1.min(b.1), a.1.max(b.1));
                if lo_x != hi_x {
                    lo_x < p.0 && p.0 < hi_x
                } else {
                    lo_y < p.1 && p.1 < hi_y
                }
            }
        }
    }

    fn insert(&mut self, idx: usize) {
        let p = self.pts[idx];
        let (cavity, keep): (Vec<[usize; 3]>, Vec<[usize; 3]>) =
            self.tris.iter().partition(|t| self.conflicts(t, p));
        debug_assert!(!cavity.is_empty(), "every point conflicts with some triangle");

        let directed: HashSet<(usize, usize)> = cavity
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .collect();
        self.tris = keep;
        for &(a, b) in &directed {
            if !directed.contains(&(b, a)) {
                self.tris.push(normalize([a, b, idx]));
            }
        }
    }
}

/// Rotates so the ghost vertex is last, otherwise the smallest index first.
fn normalize(t: [usize; 3]) -> [usize; 3] {
    let k = match t.iter().position(|&v| v == GHOST) {
        Some(g) => (g + 1) % 3,
        None => (0..3).min_by_key(|&k| t[k]).unwrap(),
    };
    [t[k], t[(k + 1) % 3], t[(k + 2) % 3]]
}

/// Delaunay triangulation of a set of distinct points.
pub fn delaunay(points: &[(f64, f64)]) -> Result<Triangulation> {
    if points.len() < 3 {
        return Err(Error::Size(format!(
            "triangulation needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(i) = points.iter().position(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Input(format!("point {i} has a non-finite coordinate")));
    }

    // seed with the first non-degenerate triple in index order
    let (a, b) = (0, 1);
    let c = (2..points.len())
        .find(|&k| orient(points[a], points[b], points[k]) != 0.0)
        .ok_or_else(|| Error::DegenerateGeometry("all points are collinear".into()))?;
    let seed = if orient(points[a], points[b], points[c]) > 0.0 {
        [a, b, c]
    } else {
        [a, c, b]
    };

    let mut builder = Builder {
        pts: points,
        tris: vec![normalize(seed)],
    };
    for k in 0..3 {
        builder
            .tris
            .push(normalize([seed[(k + 1) % 3], seed[k], GHOST]));
    }
    for idx in (2..points.len()).filter(|&k| k != c) {
        builder.insert(idx);
    }

    let mut triangles: Vec<[usize; 3]> = builder
        .tris
        .into_iter()
        .filter(|t| !t.contains(&GHOST))
        .collect();
    canonicalize_cocircular(points, &mut triangles);
    let mut triangles: Vec<_> = triangles.into_iter().map(normalize).collect();
    triangles.sort_unstable();
    Ok(Triangulation { triangles })
}

fn canonicalize_cocircular(pts: &[(f64, f64)], tris: &mut [[usize; 3]]) {
    loop {
        let mut owner: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (ti, t) in tris.iter().enumerate() {
            for k in 0..3 {
                owner.insert((t[k], t[(k + 1) % 3]), (ti, (k + 2) % 3));
            }
        }
        let mut edges: Vec<_> = owner.keys().copied().filter(|&(a, b)| a < b).collect();
        edges.sort_unstable();

        let mut flipped = false;
        for (a, b) in edges {
            let (Some(&(t1, k1)), Some(&(t2, k2))) = (owner.get(&(a, b)), owner.get(&(b, a))) else {
                continue;
            };
            let c = tris[t1][k1];
            let d = tris[t2][k2];
            if in_circle(pts[a], pts[b], pts[c], pts[d]) != 0.0 {
                continue;
            }
            if (c.min(d), c.max(d)) < (a, b) {
                // (a, b, c) and (b, a, d) become (a, d, c) and (d, b, c)
                tris[t1] = [a, d, c];
                tris[t2] = [d, b, c];
                flipped = true;
                break;
            }
        }
        if !flipped {
            return;
        }
    }
}
