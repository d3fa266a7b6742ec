//! Structured uniform grids, node sets and geometric masks.
//!
//! Nodes are numbered with axis 0 varying fastest. A cell is identified by
//! the index of its lower corner node; cells exist for every node whose
//! multi-index is strictly below the last node on every axis.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether `h` divides an axis length.
const DIVISOR_TOL: f64 = 1e-9;

/// Slack (in units of `h`) applied to closed geometric comparisons so that
/// nodes sitting exactly on a sphere or plane are not lost to rounding.
const GEOM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    min: [f64; 3],
    h: f64,
    counts: [usize; 3],
}

impl Grid {
    /// Builds a grid over `bbox` (one `(min, max)` pair per axis).
    ///
    /// When `h` does not divide every axis length it is snapped down to the
    /// largest spacing that does, and a warning is logged.
    pub fn new(dim: usize, bbox: &[(f64, f64)], h: f64) -> Result<Grid> {
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if bbox.len() != dim {
            return Err(Error::invalid(format!(
                "bounding box has {} axes, expected {dim}",
                bbox.len()
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid(format!("grid spacing must be positive, got {h}")));
        }
        let lengths: Vec<f64> = bbox.iter().map(|(a, b)| b - a).collect();
        if lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid("degenerate bounding box"));
        }
        let spacing = snap_spacing(&lengths, h)?;
        if (spacing - h).abs() > DIVISOR_TOL * h {
            log::warn!("grid spacing {h} does not divide the box; snapped to {spacing}");
        }
        let mut min = [0.0; 3];
        let mut counts = [1; 3];
        for (axis, ((lo, _), len)) in bbox.iter().zip(&lengths).enumerate() {
            min[axis] = *lo;
            counts[axis] = (len / spacing).round() as usize + 1;
            if counts[axis] < 4 {
                return Err(Error::TooFewNodes {
                    axis,
                    count: counts[axis],
                });
            }
        }
        Ok(Grid {
            dim,
            min,
            h: spacing,
            counts,
        })
    }

    /// Cube `[-half, half]^dim` shifted to `center`.
    pub fn centered(dim: usize, center: &[f64], half: f64, h: f64) -> Result<Grid> {
        if center.len() != dim {
            return Err(Error::invalid("center has wrong dimension"));
        }
        let bbox: Vec<(f64, f64)> = center.iter().map(|c| (c - half, c + half)).collect();
        Grid::new(dim, &bbox, h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn min_corner(&self) -> &[f64] {
        &self.min[..self.dim]
    }

    pub fn max_corner(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|a| self.min[a] + (self.counts[a] - 1) as f64 * self.h)
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.counts[..self.dim].iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Number of corners of a cell (`2^dim`).
    pub fn corners_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn strides(&self) -> [usize; 3] {
        [1, self.counts[0], self.counts[0] * self.counts[1]]
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        let s = self.strides();
        (0..self.dim).map(|a| multi[a] * s[a]).sum()
    }

    pub fn multi_index(&self, mut node: usize) -> [usize; 3] {
        let mut m = [0; 3];
        for a in 0..self.dim {
            m[a] = node % self.counts[a];
            node /= self.counts[a];
        }
        m
    }

    /// Coordinates of a node; trailing entries are zero in 2-D.
    pub fn coord(&self, node: usize) -> [f64; 3] {
        let m = self.multi_index(node);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.min[a] + m[a] as f64 * self.h;
        }
        x
    }

    /// Node closest to `point`, clamped into the box.
    pub fn nearest_node(&self, point: &[f64]) -> usize {
        let mut m = [0; 3];
        for a in 0..self.dim {
            let t = ((point[a] - self.min[a]) / self.h).round();
            m[a] = t.clamp(0.0, (self.counts[a] - 1) as f64) as usize;
        }
        self.index(&m)
    }

    /// Node located exactly at `point` (within rounding), if any.
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        let mut m = [0; 3];
        for a in 0..self.dim {
            let t = (point[a] - self.min[a]) / self.h;
            let r = t.round();
            if (t - r).abs() > 1e-6 || r < 0.0 || r > (self.counts[a] - 1) as f64 {
                return None;
            }
            m[a] = r as usize;
        }
        Some(self.index(&m))
    }

    pub fn contains_point(&self, point: &[f64]) -> bool {
        let slack = GEOM_SLACK * self.h;
        (0..self.dim).all(|a| {
            let hi = self.min[a] + (self.counts[a] - 1) as f64 * self.h;
            point[a] >= self.min[a] - slack && point[a] <= hi + slack
        })
    }

    /// True when the closed ball lies inside the grid box.
    pub fn contains_ball(&self, ball: &BallSpec) -> bool {
        let slack = GEOM_SLACK * self.h;
        (0..self.dim).all(|a| {
            let hi = self.min[a] + (self.counts[a] - 1) as f64 * self.h;
            ball.center[a] - ball.radius >= self.min[a] - slack
                && ball.center[a] + ball.radius <= hi + slack
        })
    }

    pub fn cell_count(&self) -> usize {
        (0..self.dim).map(|a| self.counts[a] - 1).product()
    }

    /// Lower-corner node of every cell, in increasing node order.
    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&n| self.is_cell_origin(n))
    }

    pub fn is_cell_origin(&self, node: usize) -> bool {
        let m = self.multi_index(node);
        (0..self.dim).all(|a| m[a] + 1 < self.counts[a])
    }

    /// Corner nodes of the cell whose lower corner is `origin`. Local corner
    /// `a` sits at offset bit `k` of `a` along axis `k`.
    pub fn cell_corners(&self, origin: usize) -> [usize; 8] {
        let s = self.strides();
        let mut out = [usize::MAX; 8];
        for (a, slot) in out.iter_mut().enumerate().take(self.corners_per_cell()) {
            let mut idx = origin;
            for k in 0..self.dim {
                if a >> k & 1 == 1 {
                    idx += s[k];
                }
            }
            *slot = idx;
        }
        out
    }

    pub fn cell_center(&self, origin: usize) -> [f64; 3] {
        let mut x = self.coord(origin);
        for v in x.iter_mut().take(self.dim) {
            *v += 0.5 * self.h;
        }
        x
    }

    /// Cells whose centre lies in the closed ball.
    pub fn cells_in_ball(&self, ball: &BallSpec) -> Vec<usize> {
        let slack = GEOM_SLACK * self.h;
        self.cells()
            .filter(|&c| ball.contains(&self.cell_center(c)[..self.dim], slack))
            .collect()
    }

    /// Nodes in the closed ball.
    pub fn nodes_in_ball(&self, ball: &BallSpec) -> Vec<usize> {
        let slack = GEOM_SLACK * self.h;
        (0..self.node_count())
            .filter(|&n| ball.contains(&self.coord(n)[..self.dim], slack))
            .collect()
    }

    /// Cells having `node` as a corner, paired with the node's local index
    /// within each cell.
    pub fn incident_cells(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.multi_index(node);
        let s = self.strides();
        (0..self.corners_per_cell()).filter_map(move |a| {
            let mut origin = node;
            for k in 0..self.dim {
                let bit = a >> k & 1;
                if bit == 1 {
                    if m[k] == 0 {
                        return None;
                    }
                    origin -= s[k];
                } else if m[k] + 1 >= self.counts[k] {
                    return None;
                }
            }
            Some((origin, a))
        })
    }

    /// Axis neighbours of a node (at most `2 * dim`), and whether any axis
    /// neighbour falls outside the grid.
    pub fn axis_neighbors(&self, node: usize) -> (Vec<usize>, bool) {
        let m = self.multi_index(node);
        let s = self.strides();
        let mut out = Vec::with_capacity(2 * self.dim);
        let mut off_grid = false;
        for a in 0..self.dim {
            if m[a] > 0 {
                out.push(node - s[a]);
            } else {
                off_grid = true;
            }
            if m[a] + 1 < self.counts[a] {
                out.push(node + s[a]);
            } else {
                off_grid = true;
            }
        }
        (out, off_grid)
    }

    /// Aligned sub-grid with the same spacing covering `ball` plus one cell
    /// of margin, clipped to this grid.
    pub fn crop_to_ball(&self, ball: &BallSpec) -> Result<Grid> {
        let mut bbox = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let last = (self.counts[a] - 1) as isize;
            let lo = (((ball.center[a] - ball.radius - self.min[a]) / self.h).floor() as isize - 1)
                .clamp(0, last);
            let hi = (((ball.center[a] + ball.radius - self.min[a]) / self.h).ceil() as isize + 1)
                .clamp(0, last);
            bbox.push((
                self.min[a] + lo as f64 * self.h,
                self.min[a] + hi as f64 * self.h,
            ));
        }
        Grid::new(self.dim, &bbox, self.h)
    }

    /// Grid on the same node lattice covering `ball` plus one cell of margin,
    /// extending past this grid's box where needed.
    pub fn covering_ball(&self, ball: &BallSpec) -> Result<Grid> {
        if ball.center.len() != self.dim {
            return Err(Error::invalid("ball has wrong dimension"));
        }
        let bbox: Vec<(f64, f64)> = (0..self.dim)
            .map(|a| {
                let lo = ((ball.center[a] - ball.radius - self.min[a]) / self.h).floor() - 1.0;
                let hi = ((ball.center[a] + ball.radius - self.min[a]) / self.h).ceil() + 1.0;
                (self.min[a] + lo * self.h, self.min[a] + hi * self.h)
            })
            .collect();
        Grid::new(self.dim, &bbox, self.h)
    }

    /// Maps every node of `sub` to the node of `self` at the same position.
    pub fn embed(&self, sub: &Grid) -> Result<Vec<usize>> {
        if sub.dim != self.dim || (sub.h - self.h).abs() > DIVISOR_TOL * self.h {
            return Err(Error::GridMismatch);
        }
        (0..sub.node_count())
            .map(|n| self.locate(&sub.coord(n)[..self.dim]).ok_or(Error::GridMismatch))
            .collect()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let counts: Vec<String> = self.counts().iter().map(|c| c.to_string()).collect();
        write!(f, "{}D grid h={} nodes={}", self.dim, self.h, counts.join("x"))
    }
}

fn snap_spacing(lengths: &[f64], h: f64) -> Result<f64> {
    let divides = |step: f64| {
        lengths.iter().all(|l| {
            let t = l / step;
            (t - t.round()).abs() <= DIVISOR_TOL * t.max(1.0)
        })
    };
    if divides(h) {
        return Ok(h);
    }
    let first = (lengths[0] / h * (1.0 - DIVISOR_TOL)).ceil().max(1.0) as usize;
    for cells in first..first.saturating_mul(1000).max(first + 1) {
        let step = lengths[0] / cells as f64;
        if step <= h * (1.0 + DIVISOR_TOL) && divides(step) {
            return Ok(step);
        }
    }
    Err(Error::invalid(format!(
        "no spacing below {h} divides all box lengths"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallSpec {
    pub fn new(center: &[f64], radius: f64) -> BallSpec {
        BallSpec {
            center: center.to_vec(),
            radius,
        }
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        dist(&self.center, x) <= self.radius + slack
    }

    pub fn scaled(&self, factor: f64) -> BallSpec {
        BallSpec::new(&self.center, self.radius * factor)
    }

    /// Lebesgue measure of the ball in dimension `dim`.
    pub fn volume(&self, dim: usize) -> f64 {
        unit_ball_volume(dim) * self.radius.powi(dim as i32)
    }
}

pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        _ => unreachable!("dimension checked at grid construction"),
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub type PointPredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Point sets that can be rasterised onto a grid.
#[derive(Clone)]
pub enum Shape {
    Ball(BallSpec),
    /// `inner < |x - center| <= outer`, i.e. `B_outer - B_inner`.
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
    /// `normal . x <= offset`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// Closed axis-aligned box.
    Box { min: Vec<f64>, max: Vec<f64> },
    Complement(Box<Shape>),
    Union(Vec<Shape>),
    Intersection(Vec<Shape>),
    Predicate(PointPredicate),
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Ball(b) => write!(f, "Ball({:?}, {})", b.center, b.radius),
            Shape::Annulus {
                center,
                inner,
                outer,
            } => write!(f, "Annulus({center:?}, {inner}, {outer})"),
            Shape::HalfSpace { normal, offset } => write!(f, "HalfSpace({normal:?}, {offset})"),
            Shape::Box { min, max } => write!(f, "Box({min:?}, {max:?})"),
            Shape::Complement(s) => write!(f, "Complement({s:?})"),
            Shape::Union(v) => write!(f, "Union({v:?})"),
            Shape::Intersection(v) => write!(f, "Intersection({v:?})"),
            Shape::Predicate(_) => write!(f, "Predicate(..)"),
        }
    }
}

impl Shape {
    pub fn ball(center: &[f64], radius: f64) -> Shape {
        Shape::Ball(BallSpec::new(center, radius))
    }

    pub fn complement(self) -> Shape {
        Shape::Complement(Box::new(self))
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            Shape::Ball(b) => finite(&b.center) && b.radius.is_finite() && b.radius >= 0.0,
            Shape::Annulus {
                center,
                inner,
                outer,
            } => finite(center) && inner.is_finite() && outer.is_finite(),
            Shape::HalfSpace { normal, offset } => finite(normal) && offset.is_finite(),
            Shape::Box { min, max } => finite(min) && finite(max),
            Shape::Complement(s) => return s.validate(),
            Shape::Union(v) | Shape::Intersection(v) => {
                return v.iter().try_for_each(Shape::validate)
            }
            Shape::Predicate(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("shape parameters not finite: {self:?}")))
        }
    }

    /// Closed membership test with an absolute slack `eps`.
    pub fn contains(&self, x: &[f64], eps: f64) -> bool {
        match self {
            Shape::Ball(b) => b.contains(x, eps),
            Shape::Annulus {
                center,
                inner,
                outer,
            } => {
                let d = dist(center, x);
                d > inner + eps && d <= outer + eps
            }
            Shape::HalfSpace { normal, offset } => {
                let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let s: f64 = normal.iter().zip(x).map(|(n, v)| n * v).sum();
                s <= offset + eps * norm
            }
            Shape::Box { min, max } => min
                .iter()
                .zip(max)
                .zip(x)
                .all(|((lo, hi), v)| *v >= lo - eps && *v <= hi + eps),
            Shape::Complement(s) => !s.contains(x, -eps),
            Shape::Union(v) => v.iter().any(|s| s.contains(x, eps)),
            Shape::Intersection(v) => v.iter().all(|s| s.contains(x, eps)),
            Shape::Predicate(p) => p(x),
        }
    }
}

/// Sorted set of distinct node indices belonging to one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    grid: Grid,
    indices: Vec<usize>,
}

impl NodeSet {
    pub fn empty(grid: &Grid) -> NodeSet {
        NodeSet {
            grid: grid.clone(),
            indices: Vec::new(),
        }
    }

    pub fn full(grid: &Grid) -> NodeSet {
        NodeSet {
            grid: grid.clone(),
            indices: (0..grid.node_count()).collect(),
        }
    }

    pub fn from_indices(grid: &Grid, mut indices: Vec<usize>) -> Result<NodeSet> {
        indices.sort_unstable();
        indices.dedup();
        if indices.last().is_some_and(|&i| i >= grid.node_count()) {
            return Err(Error::invalid("node index out of range"));
        }
        Ok(NodeSet {
            grid: grid.clone(),
            indices,
        })
    }

    pub fn from_mask(grid: &Grid, mask: &[bool]) -> NodeSet {
        debug_assert_eq!(mask.len(), grid.node_count());
        NodeSet {
            grid: grid.clone(),
            indices: mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect(),
        }
    }

    pub fn single(grid: &Grid, node: usize) -> NodeSet {
        NodeSet {
            grid: grid.clone(),
            indices: vec![node],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.indices.binary_search(&node).is_ok()
    }

    pub fn to_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.grid.node_count()];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }

    fn same_grid(&self, other: &NodeSet) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    fn merge(&self, other: &NodeSet, keep: impl Fn(bool, bool) -> bool) -> Result<NodeSet> {
        self.same_grid(other)?;
        let (a, b) = (&self.indices, &other.indices);
        let mut out = Vec::with_capacity(a.len().max(b.len()));
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let (node, in_a, in_b) = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) if x == y => {
                    i += 1;
                    j += 1;
                    (x, true, true)
                }
                (Some(&x), Some(&y)) if x < y => {
                    i += 1;
                    (x, true, false)
                }
                (Some(_), Some(&y)) => {
                    j += 1;
                    (y, false, true)
                }
                (Some(&x), None) => {
                    i += 1;
                    (x, true, false)
                }
                (None, Some(&y)) => {
                    j += 1;
                    (y, false, true)
                }
                (None, None) => unreachable!(),
            };
            if keep(in_a, in_b) {
                out.push(node);
            }
        }
        Ok(NodeSet {
            grid: self.grid.clone(),
            indices: out,
        })
    }

    pub fn union(&self, other: &NodeSet) -> Result<NodeSet> {
        self.merge(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &NodeSet) -> Result<NodeSet> {
        self.merge(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &NodeSet) -> Result<NodeSet> {
        self.merge(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> NodeSet {
        let mask = self.to_mask();
        NodeSet::from_mask(&self.grid, &mask.iter().map(|m| !m).collect::<Vec<_>>())
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.grid == other.grid && self.indices.iter().all(|&i| other.contains(i))
    }

    /// Nodes having at least one axis neighbour outside the set.
    pub fn boundary(&self) -> NodeSet {
        let mask = self.to_mask();
        let indices = self
            .indices
            .iter()
            .copied()
            .filter(|&n| {
                let (nbrs, off_grid) = self.grid.axis_neighbors(n);
                off_grid || nbrs.iter().any(|&m| !mask[m])
            })
            .collect();
        NodeSet {
            grid: self.grid.clone(),
            indices,
        }
    }

    /// Nodes whose axis neighbours all belong to the set.
    pub fn interior(&self) -> NodeSet {
        self.difference(&self.boundary())
            .expect("boundary shares the grid")
    }

    /// Re-expresses the set on an aligned sub-grid, dropping nodes outside it.
    pub fn crop_to(&self, sub: &Grid) -> Result<NodeSet> {
        let map = self.grid.embed(sub)?;
        let indices = map
            .iter()
            .enumerate()
            .filter_map(|(local, &global)| self.contains(global).then_some(local))
            .collect();
        Ok(NodeSet {
            grid: sub.clone(),
            indices,
        })
    }
}

/// Nodes of `grid` inside `shape` (closed condition).
pub fn mask(grid: &Grid, shape: &Shape) -> Result<NodeSet> {
    shape.validate()?;
    let eps = GEOM_SLACK * grid.spacing();
    let d = grid.dim();
    let indices = (0..grid.node_count())
        .filter(|&n| shape.contains(&grid.coord(n)[..d], eps))
        .collect();
    Ok(NodeSet {
        grid: grid.clone(),
        indices,
    })
}

pub fn boundary_nodes(grid: &Grid, domain: &NodeSet) -> Result<NodeSet> {
    if domain.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if domain.is_empty() {
        return Err(Error::invalid("domain is empty"));
    }
    Ok(domain.boundary())
}
