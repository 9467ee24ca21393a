//! Bounded closed convex bodies with nonempty interior.
//!
//! Three shapes are supported: Euclidean balls, axis-aligned boxes and
//! H-polytopes `{x : <a_i, x> <= b_i}` with unit normals. Every body knows its
//! metric projection, distance, support function, interior margin and inward
//! normals. Hausdorff distances are computed from support functions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::policy::POLICY;

/// A point (or vector) of `R^m`.
pub type Point = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid convex body: {0}")]
    InvalidBody(String),
    #[error("polytope projection did not converge after {cycles} cycles (residual {residual:e})")]
    ProjectionDiverged { cycles: usize, residual: f64 },
    #[error("point lies outside the body (distance {0:e})")]
    OutsideBody(f64),
    #[error("point is {distance:e} away from the boundary (tolerance {tol:e})")]
    NotOnBoundary { distance: f64, tol: f64 },
    #[error("direction set needs at least {min} directions, got {got}")]
    TooFewDirections { min: usize, got: usize },
}

/// Half-space representation with cached vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    normals: Vec<Point>,
    offsets: Vec<f64>,
    vertices: Vec<Point>,
}

impl Polytope {
    pub fn normals(&self) -> &[Point] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Vertices found by enumeration at construction.
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    fn slacks<'a>(&'a self, x: &'a Point) -> impl Iterator<Item = f64> + 'a {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(move |(a, b)| b - a.dot(x))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Ball { center: Point, radius: f64 },
    Polytope(Polytope),
    Box { lower: Point, upper: Point },
}

/// A validated convex body. Construct through [`ConvexBody::ball`],
/// [`ConvexBody::aligned_box`] or [`ConvexBody::polytope`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexBody {
    shape: Shape,
}

fn check_dim(expected: usize, got: usize) -> Result<(), GeometryError> {
    if expected == got {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch { expected, got })
    }
}

fn finite(v: &Point) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl ConvexBody {
    pub fn ball(center: Point, radius: f64) -> Result<Self, GeometryError> {
        if center.is_empty() {
            return Err(GeometryError::InvalidBody("zero-dimensional ball".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) || !finite(&center) {
            return Err(GeometryError::InvalidBody(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        Ok(Self {
            shape: Shape::Ball { center, radius },
        })
    }

    pub fn aligned_box(lower: Point, upper: Point) -> Result<Self, GeometryError> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(GeometryError::InvalidBody("zero-dimensional box".into()));
        }
        if !finite(&lower) || !finite(&upper) || lower.iter().zip(upper.iter()).any(|(l, u)| l >= u)
        {
            return Err(GeometryError::InvalidBody(
                "box bounds must be finite with lower < upper componentwise".into(),
            ));
        }
        Ok(Self {
            shape: Shape::Box { lower, upper },
        })
    }

    /// Polytope `{x : <a_i, x> <= b_i}`. Normals must have unit length; the
    /// set must be bounded with nonempty interior.
    pub fn polytope(normals: Vec<Point>, offsets: Vec<f64>) -> Result<Self, GeometryError> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(GeometryError::InvalidBody(
                "polytope needs matching nonempty normal and offset lists".into(),
            ));
        }
        let m = normals[0].len();
        if m == 0 {
            return Err(GeometryError::InvalidBody("zero-dimensional polytope".into()));
        }
        for a in &normals {
            check_dim(m, a.len())?;
            if !finite(a) || (a.norm() - 1.0).abs() > POLICY.unit_normal {
                return Err(GeometryError::InvalidBody(format!(
                    "polytope normal {:?} is not a unit vector",
                    a.as_slice()
                )));
            }
        }
        if offsets.iter().any(|b| !b.is_finite()) {
            return Err(GeometryError::InvalidBody("non-finite polytope offset".into()));
        }
        let vertices = enumerate_vertices(&normals, &offsets)?;
        let centroid = vertices.iter().fold(Point::zeros(m), |acc, v| acc + v) / vertices.len() as f64;
        let margin = normals
            .iter()
            .zip(&offsets)
            .map(|(a, b)| b - a.dot(&centroid))
            .fold(f64::INFINITY, f64::min);
        if margin <= POLICY.active_face {
            return Err(GeometryError::InvalidBody("polytope has empty interior".into()));
        }
        Ok(Self {
            shape: Shape::Polytope(Polytope {
                normals,
                offsets,
                vertices,
            }),
        })
    }

    /// Same as [`ConvexBody::polytope`] but rescales each row `(a_i, b_i)` so
    /// that `a_i` has unit length.
    pub fn polytope_normalized(
        normals: Vec<Point>,
        offsets: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        let mut unit = Vec::with_capacity(normals.len());
        let mut scaled = Vec::with_capacity(offsets.len());
        for (a, b) in normals.into_iter().zip(offsets) {
            let n = a.norm();
            if n == 0.0 || !n.is_finite() {
                return Err(GeometryError::InvalidBody("zero polytope normal".into()));
            }
            unit.push(a / n);
            scaled.push(b / n);
        }
        Self::polytope(unit, scaled)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Ball { center, .. } => center.len(),
            Shape::Box { lower, .. } => lower.len(),
            Shape::Polytope(p) => p.normals[0].len(),
        }
    }

    pub fn is_ball(&self) -> bool {
        matches!(self.shape, Shape::Ball { .. })
    }

    /// Whether `dist(x, body) <= tol`.
    pub fn contains(&self, x: &Point, tol: f64) -> Result<bool, GeometryError> {
        check_dim(self.dim(), x.len())?;
        if self.contains_exact(x) {
            return Ok(true);
        }
        Ok(self.distance(x)? <= tol)
    }

    fn contains_exact(&self, x: &Point) -> bool {
        match &self.shape {
            Shape::Ball { center, radius } => (x - center).norm() <= *radius,
            Shape::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (l, u))| l <= v && v <= u),
            Shape::Polytope(p) => p.slacks(x).all(|s| s >= 0.0),
        }
    }

    /// Metric projection. Points of the body are returned unchanged.
    pub fn project(&self, x: &Point) -> Result<Point, GeometryError> {
        check_dim(self.dim(), x.len())?;
        if self.contains_exact(x) {
            return Ok(x.clone());
        }
        match &self.shape {
            Shape::Ball { center, radius } => {
                let offset = x - center;
                let norm = offset.norm();
                Ok(center + offset * (radius / norm))
            }
            Shape::Box { lower, upper } => Ok(Point::from_iterator(
                x.len(),
                x.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(v, (l, u))| v.clamp(*l, *u)),
            )),
            Shape::Polytope(p) => project_polytope(p, x),
        }
    }

    pub fn distance(&self, x: &Point) -> Result<f64, GeometryError> {
        check_dim(self.dim(), x.len())?;
        match &self.shape {
            Shape::Ball { center, radius } => Ok(((x - center).norm() - radius).max(0.0)),
            _ => Ok((x - self.project(x)?).norm()),
        }
    }

    /// Distance from an interior point to the boundary.
    pub fn boundary_margin(&self, a: &Point) -> Result<f64, GeometryError> {
        check_dim(self.dim(), a.len())?;
        if !self.contains_exact(a) {
            return Err(GeometryError::OutsideBody(self.distance(a)?));
        }
        Ok(self.signed_slack(a))
    }

    /// Minimum face slack (positive inside, negative outside). For points
    /// inside this is the distance to the boundary.
    fn signed_slack(&self, a: &Point) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => radius - (a - center).norm(),
            Shape::Box { lower, upper } => a
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(v, (l, u))| (v - l).min(u - v))
                .fold(f64::INFINITY, f64::min),
            Shape::Polytope(p) => p.slacks(a).fold(f64::INFINITY, f64::min),
        }
    }

    /// Distance to the boundary for points on either side of it.
    pub fn boundary_distance(&self, y: &Point) -> Result<f64, GeometryError> {
        check_dim(self.dim(), y.len())?;
        if self.contains_exact(y) {
            Ok(self.signed_slack(y))
        } else {
            self.distance(y)
        }
    }

    /// Support function `h(u) = sup_{x in body} <u, x>`.
    pub fn support(&self, u: &Point) -> Result<f64, GeometryError> {
        check_dim(self.dim(), u.len())?;
        Ok(match &self.shape {
            Shape::Ball { center, radius } => u.dot(center) + radius * u.norm(),
            Shape::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(d, (l, h))| (d * l).max(d * h))
                .sum(),
            Shape::Polytope(p) => p
                .vertices
                .iter()
                .map(|v| u.dot(v))
                .fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// Outward unit normals of the flat faces, in face-index order. Box faces
    /// are ordered axis by axis, lower face first.
    pub fn face_normals(&self) -> Vec<Point> {
        let m = self.dim();
        match &self.shape {
            Shape::Ball { .. } => Vec::new(),
            Shape::Box { .. } => (0..2 * m)
                .map(|f| {
                    let mut n = Point::zeros(m);
                    n[f / 2] = if f % 2 == 0 { -1.0 } else { 1.0 };
                    n
                })
                .collect(),
            Shape::Polytope(p) => p.normals.clone(),
        }
    }

    /// One inward unit normal at a boundary point `y` (within `tol`). At
    /// corners the tight face of lowest index wins.
    pub fn inward_normal(&self, y: &Point, tol: f64) -> Result<Point, GeometryError> {
        let gap = self.boundary_distance(y)?;
        if gap > tol {
            return Err(GeometryError::NotOnBoundary { distance: gap, tol });
        }
        match &self.shape {
            Shape::Ball { center, .. } => {
                let n = center - y;
                Ok(n.normalize())
            }
            Shape::Box { lower, upper } => {
                for k in 0..y.len() {
                    if y[k] - lower[k] <= tol {
                        let mut n = Point::zeros(y.len());
                        n[k] = 1.0;
                        return Ok(n);
                    }
                    if upper[k] - y[k] <= tol {
                        let mut n = Point::zeros(y.len());
                        n[k] = -1.0;
                        return Ok(n);
                    }
                }
                unreachable!("boundary distance within tol implies a tight face")
            }
            Shape::Polytope(p) => p
                .slacks(y)
                .position(|s| s <= tol)
                .map(|i| -&p.normals[i])
                .ok_or(GeometryError::NotOnBoundary { distance: gap, tol }),
        }
    }

    /// Unique `y` with `y + w (y - proj(y)) = target`: the implicit step of
    /// the penalization drift with weight `w = n h`.
    pub fn penalty_resolvent(&self, target: &Point, w: f64) -> Result<Point, GeometryError> {
        debug_assert!(w >= 0.0, "resolvent weight must be nonnegative");
        check_dim(self.dim(), target.len())?;
        if self.contains_exact(target) {
            return Ok(target.clone());
        }
        let p = self.project(target)?;
        Ok((target + p * w) / (1.0 + w))
    }

    /// An interior reference point: the ball center, the box midpoint or the
    /// vertex centroid of a polytope.
    pub fn center(&self) -> Point {
        match &self.shape {
            Shape::Ball { center, .. } => center.clone(),
            Shape::Box { lower, upper } => (lower + upper) * 0.5,
            Shape::Polytope(p) => {
                p.vertices.iter().fold(Point::zeros(self.dim()), |acc, v| acc + v)
                    / p.vertices.len() as f64
            }
        }
    }

    /// Largest distance between two points of the body.
    pub fn diameter(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Box { lower, upper } => (upper - lower).norm(),
            Shape::Polytope(p) => {
                let mut best = 0.0f64;
                for (i, a) in p.vertices.iter().enumerate() {
                    for b in &p.vertices[i + 1..] {
                        best = best.max((a - b).norm());
                    }
                }
                best
            }
        }
    }
}

/// Deterministic set of unit directions in `R^m`: evenly spaced angles in the
/// plane, a Fibonacci lattice on the sphere, and fixed-seed Gaussian
/// directions beyond three dimensions.
pub fn direction_set(m: usize, n_dirs: usize) -> Vec<Point> {
    match m {
        0 => Vec::new(),
        1 => vec![Point::from_element(1, 1.0), Point::from_element(1, -1.0)],
        2 => (0..n_dirs)
            .map(|k| {
                let theta = 2.0 * PI * k as f64 / n_dirs as f64;
                Point::from_vec(vec![theta.cos(), theta.sin()])
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n_dirs)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n_dirs as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    Point::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_D1EC);
            (0..n_dirs)
                .map(|_| loop {
                    let g = Point::from_iterator(m, (0..m).map(|_| StandardNormal.sample(&mut rng)));
                    let n = g.norm();
                    if n > 1e-8 {
                        break g / n;
                    }
                })
                .collect()
        }
    }
}

/// Hausdorff distance between two bodies of equal dimension.
///
/// Exact for two balls. Otherwise the maximum support-function gap over
/// `n_dirs` deterministic directions, the coordinate axes and every face
/// normal of either body; the result is then a lower bound accurate to the
/// resolution of that direction set.
pub fn hausdorff(b1: &ConvexBody, b2: &ConvexBody, n_dirs: usize) -> Result<f64, GeometryError> {
    let m = b1.dim();
    check_dim(m, b2.dim())?;
    if n_dirs < 2 * m {
        return Err(GeometryError::TooFewDirections {
            min: 2 * m,
            got: n_dirs,
        });
    }
    if let (
        Shape::Ball {
            center: c1,
            radius: r1,
        },
        Shape::Ball {
            center: c2,
            radius: r2,
        },
    ) = (&b1.shape, &b2.shape)
    {
        return Ok((c1 - c2).norm() + (r1 - r2).abs());
    }
    let mut dirs = direction_set(m, n_dirs);
    for k in 0..m {
        for s in [1.0, -1.0] {
            let mut e = Point::zeros(m);
            e[k] = s;
            dirs.push(e);
        }
    }
    dirs.extend(b1.face_normals());
    dirs.extend(b2.face_normals());
    let mut best = 0.0f64;
    for u in &dirs {
        best = best.max((b1.support(u)? - b2.support(u)?).abs());
    }
    Ok(best)
}

fn enumerate_vertices(normals: &[Point], offsets: &[f64]) -> Result<Vec<Point>, GeometryError> {
    let m = normals[0].len();
    let r = POLICY.bounding_radius;
    let mut rows: Vec<(Point, f64)> = normals.iter().cloned().zip(offsets.iter().copied()).collect();
    for k in 0..m {
        for s in [1.0, -1.0] {
            let mut e = Point::zeros(m);
            e[k] = s;
            rows.push((e, r));
        }
    }
    let total = rows.len();
    let combos = binomial(total, m);
    if combos > 2_000_000 {
        return Err(GeometryError::InvalidBody(format!(
            "polytope too large for vertex enumeration ({combos} face subsets)"
        )));
    }
    let feasible = |x: &Point| {
        rows.iter()
            .all(|(a, b)| a.dot(x) <= b + POLICY.active_face * (1.0 + b.abs()))
    };
    let mut vertices: Vec<Point> = Vec::new();
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let a = DMatrix::from_fn(m, m, |i, j| rows[idx[i]].0[j]);
        let b = Point::from_iterator(m, idx.iter().map(|&i| rows[i].1));
        if let Some(x) = a.lu().solve(&b) {
            if finite(&x) && feasible(&x) && !vertices.iter().any(|v| (v - &x).norm() <= 1e-9 * (1.0 + x.norm())) {
                vertices.push(x);
            }
        }
        // advance to the next m-subset in lexicographic order
        let mut i = m;
        while i > 0 && idx[i - 1] == i - 1 + total - m {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
    if vertices.is_empty() {
        return Err(GeometryError::InvalidBody("polytope is empty".into()));
    }
    if vertices
        .iter()
        .any(|v| v.iter().any(|c| c.abs() >= r * (1.0 - 1e-9)))
    {
        return Err(GeometryError::InvalidBody(
            "polytope is unbounded (or exceeds the bounding radius)".into(),
        ));
    }
    Ok(vertices)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n.saturating_sub(k));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Dykstra alternating projections onto the face half-spaces, with a KKT
/// polish on the detected active set once the iteration has settled.
fn project_polytope(p: &Polytope, x: &Point) -> Result<Point, GeometryError> {
    let k = p.normals.len();
    let m = x.len();
    let tol = POLICY.geometry;
    let mut y = x.clone();
    let mut incr = vec![Point::zeros(m); k];
    let mut change = f64::INFINITY;
    for cycle in 0..POLICY.dykstra_max_cycles {
        change = 0.0;
        for i in 0..k {
            let a = &p.normals[i];
            let z = &y + &incr[i];
            let slack = p.offsets[i] - a.dot(&z);
            let next = if slack < 0.0 { &z + a * slack } else { z.clone() };
            let new_incr = &z - &next;
            change += (&new_incr - &incr[i]).norm_squared();
            incr[i] = new_incr;
            y = next;
        }
        if change <= 1e-12 || cycle % 64 == 63 {
            if let Some(exact) = polish(p, x, &y) {
                return Ok(exact);
            }
        }
        let violation = p.slacks(&y).fold(0.0f64, |acc, s| acc.max(-s));
        if change.sqrt() <= tol && violation <= tol {
            return Ok(y);
        }
    }
    Err(GeometryError::ProjectionDiverged {
        cycles: POLICY.dykstra_max_cycles,
        residual: change.sqrt(),
    })
}

/// Solve the equality-constrained projection on the faces tight at `approx`
/// and accept it only with a KKT certificate (feasible, nonnegative
/// multipliers).
fn polish(p: &Polytope, x: &Point, approx: &Point) -> Option<Point> {
    let scale = 1.0 + x.norm();
    let active: Vec<usize> = p
        .slacks(approx)
        .enumerate()
        .filter(|(_, s)| *s <= POLICY.active_face * scale)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() || active.len() > x.len() {
        return None;
    }
    let q = active.len();
    let a = DMatrix::from_fn(q, x.len(), |r, c| p.normals[active[r]][c]);
    let gram = &a * a.transpose();
    let rhs = &a * x - Point::from_iterator(q, active.iter().map(|&i| p.offsets[i]));
    let mu = gram.lu().solve(&rhs)?;
    if mu.iter().any(|&v| v < -POLICY.geometry * scale) {
        return None;
    }
    let y = x - a.transpose() * &mu;
    if p.slacks(&y).any(|s| s < -POLICY.geometry * scale) {
        return None;
    }
    if (&y - approx).norm() > 1e-6 * scale {
        return None;
    }
    Some(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn unit_ball() -> ConvexBody {
        ConvexBody::ball(pt(&[0.0, 0.0]), 1.0).unwrap()
    }

    fn square() -> ConvexBody {
        ConvexBody::aligned_box(pt(&[-1.0, -1.0]), pt(&[1.0, 1.0])).unwrap()
    }

    fn wedge() -> ConvexBody {
        let s = 1.0 / 2f64.sqrt();
        ConvexBody::polytope(
            vec![pt(&[s, s]), pt(&[-1.0, 0.0]), pt(&[0.0, -1.0])],
            vec![s, 10.0, 10.0],
        )
        .unwrap()
    }

    #[test]
    fn membership() {
        assert!(unit_ball().contains(&pt(&[0.5, 0.0]), 0.0).unwrap());
        assert!(!unit_ball().contains(&pt(&[2.0, 0.0]), 0.0).unwrap());
        assert!(square().contains(&pt(&[1.0, 1.0]), 0.0).unwrap());
        assert!(unit_ball().contains(&pt(&[1.5, 0.0]), 0.5).unwrap());
        assert!(matches!(
            unit_ball().contains(&pt(&[1.0]), 0.0),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn closed_form_projections() {
        assert_eq!(unit_ball().project(&pt(&[2.0, 0.0])).unwrap(), pt(&[1.0, 0.0]));
        assert_eq!(square().project(&pt(&[2.0, 3.0])).unwrap(), pt(&[1.0, 1.0]));
        let inside = pt(&[0.3, -0.2]);
        assert_eq!(unit_ball().project(&inside).unwrap(), inside);
    }

    /// Brute force: grid search along the face x1 + x2 = 1 for the nearest
    /// point to (1, 1).
    #[test]
    fn wedge_projection_matches_face_search() {
        let target = pt(&[1.0, 1.0]);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=20_000 {
            let s = -9.0 + 20.0 * i as f64 / 20_000.0;
            let cand = pt(&[s, 1.0 - s]);
            let d = (&cand - &target).norm();
            if d < best.0 {
                best = (d, s);
            }
        }
        assert!((best.1 - 0.5).abs() < 1e-3);
        let y = wedge().project(&target).unwrap();
        assert!((y - pt(&[0.5, 0.5])).norm() < 1e-12);
    }

    #[test]
    fn distances() {
        assert_eq!(unit_ball().distance(&pt(&[2.0, 0.0])).unwrap(), 1.0);
        assert_eq!(unit_ball().distance(&pt(&[0.0, 0.0])).unwrap(), 0.0);
        let d = square().distance(&pt(&[2.0, 2.0])).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn margins() {
        let b = ConvexBody::ball(pt(&[0.0, 0.0]), 2.0).unwrap();
        assert_eq!(b.boundary_margin(&pt(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(square().boundary_margin(&pt(&[0.0, 0.0])).unwrap(), 1.0);
        let m = wedge().boundary_margin(&pt(&[0.0, 0.0])).unwrap();
        assert!((m - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            square().boundary_margin(&pt(&[3.0, 0.0])),
            Err(GeometryError::OutsideBody(_))
        ));
    }

    #[test]
    fn supports() {
        assert_eq!(unit_ball().support(&pt(&[1.0, 0.0])).unwrap(), 1.0);
        let shifted = ConvexBody::ball(pt(&[1.0, 0.0]), 1.0).unwrap();
        assert_eq!(shifted.support(&pt(&[1.0, 0.0])).unwrap(), 2.0);
        let s = 1.0 / 2f64.sqrt();
        let h = square().support(&pt(&[s, s])).unwrap();
        assert!((h - 2f64.sqrt()).abs() < 1e-15);
        // polytope support via vertices agrees with the box
        let as_poly = ConvexBody::polytope(
            square().face_normals(),
            vec![1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        assert!((as_poly.support(&pt(&[s, s])).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_examples() {
        let b2 = ConvexBody::ball(pt(&[0.0, 0.0]), 2.0).unwrap();
        assert_eq!(hausdorff(&unit_ball(), &b2, 8).unwrap(), 1.0);
        let moved = ConvexBody::ball(pt(&[1.0, 0.0]), 1.0).unwrap();
        assert_eq!(hausdorff(&unit_ball(), &moved, 8).unwrap(), 1.0);
        let wide = ConvexBody::aligned_box(pt(&[-1.0, -1.0]), pt(&[2.0, 1.0])).unwrap();
        assert!((hausdorff(&square(), &wide, 64).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            hausdorff(&square(), &wide, 3),
            Err(GeometryError::TooFewDirections { .. })
        ));
    }

    #[test]
    fn normals() {
        assert_eq!(unit_ball().inward_normal(&pt(&[1.0, 0.0]), 1e-12).unwrap(), pt(&[-1.0, 0.0]));
        assert_eq!(square().inward_normal(&pt(&[1.0, 0.0]), 1e-12).unwrap(), pt(&[-1.0, 0.0]));
        assert_eq!(square().inward_normal(&pt(&[1.0, 1.0]), 1e-12).unwrap(), pt(&[-1.0, 0.0]));
        assert!(matches!(
            square().inward_normal(&pt(&[0.0, 0.0]), 1e-12),
            Err(GeometryError::NotOnBoundary { .. })
        ));
        let s = 1.0 / 2f64.sqrt();
        let n = wedge().inward_normal(&pt(&[0.5, 0.5]), 1e-12).unwrap();
        assert!((n - pt(&[-s, -s])).norm() < 1e-15);
    }

    /// Oracle: damped fixed-point iteration `y <- (target + w P(y)) / (1 + w)`.
    fn resolvent_oracle(body: &ConvexBody, target: &Point, w: f64) -> Point {
        let mut y = target.clone();
        for _ in 0..10_000 {
            let next = (target + body.project(&y).unwrap() * w) / (1.0 + w);
            if (&next - &y).norm() < 1e-15 {
                return next;
            }
            y = next;
        }
        y
    }

    #[test]
    fn resolvent_examples() {
        let inside = pt(&[0.5, 0.0]);
        assert_eq!(unit_ball().penalty_resolvent(&inside, 7.0).unwrap(), inside);
        let half_line = ConvexBody::aligned_box(pt(&[0.0]), pt(&[1e9])).unwrap();
        assert_eq!(half_line.penalty_resolvent(&pt(&[-1.0]), 1.0).unwrap(), pt(&[-0.5]));
        let target = pt(&[3.0, 0.0]);
        let y = unit_ball().penalty_resolvent(&target, 3.0).unwrap();
        assert!((&y - pt(&[1.5, 0.0])).norm() < 1e-15);
        assert!((&y - resolvent_oracle(&unit_ball(), &target, 3.0)).norm() < 1e-12);
        assert!((unit_ball().distance(&y).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_bodies_rejected() {
        assert!(ConvexBody::ball(pt(&[0.0]), 0.0).is_err());
        assert!(ConvexBody::aligned_box(pt(&[0.0, 1.0]), pt(&[1.0, 1.0])).is_err());
        // not unit
        assert!(ConvexBody::polytope(vec![pt(&[2.0, 0.0])], vec![1.0]).is_err());
        // unbounded half-plane
        assert!(ConvexBody::polytope(vec![pt(&[1.0, 0.0])], vec![1.0]).is_err());
        // empty
        assert!(ConvexBody::polytope(vec![pt(&[1.0]), pt(&[-1.0])], vec![-1.0, -1.0]).is_err());
        // flat
        assert!(ConvexBody::polytope(vec![pt(&[1.0]), pt(&[-1.0])], vec![0.0, 0.0]).is_err());
        let tri = ConvexBody::polytope_normalized(
            vec![pt(&[1.0, 1.0]), pt(&[-1.0, 0.0]), pt(&[0.0, -1.0])],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        if let Shape::Polytope(p) = tri.shape() {
            assert_eq!(p.vertices().len(), 3);
        }
    }

    #[test]
    fn direction_sets_are_unit() {
        for m in 1..=5 {
            for u in direction_set(m, 32) {
                assert!((u.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
