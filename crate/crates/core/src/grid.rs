//! Cartesian state/control grids and multilinear interpolation over them.
//!
//! Nodes are enumerated in row-major order (axis 0 slowest). A query is
//! located by its lower cell corner (`base`) and one fractional offset per
//! axis; every interpolation in the crate goes through [`CartesianGrid::blend`]
//! so that cached and on-the-fly lookups agree bit for bit.

use crate::error::{Error, Result};

/// Relative slack used when counting nodes, so that `(hi - lo) / d` landing a
/// hair below an integer still produces the expected node count.
const COUNT_EPS: f64 = 1e-9;

/// Queries within this many index units of a node snap onto it.
const SNAP_EPS: f64 = 1e-9;

/// One axis of a Cartesian grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpec {
    lo: f64,
    hi: f64,
    spacing: f64,
    nodes: usize,
    last: f64,
}

impl AxisSpec {
    pub fn new(lo: f64, hi: f64, spacing: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && spacing.is_finite()) {
            return Err(Error::Config(format!(
                "axis bounds must be finite (lo={lo}, hi={hi}, spacing={spacing})"
            )));
        }
        if spacing <= 0.0 {
            return Err(Error::Config(format!("axis spacing must be positive, got {spacing}")));
        }
        if hi < lo {
            return Err(Error::Config(format!("axis upper bound {hi} below lower bound {lo}")));
        }
        let nodes = ((hi - lo) / spacing + COUNT_EPS).floor() as usize + 1;
        if nodes < 2 {
            return Err(Error::Config(format!(
                "axis [{lo}, {hi}] with spacing {spacing} has fewer than two nodes"
            )));
        }
        let last = (lo + (nodes - 1) as f64 * spacing).min(hi);
        Ok(Self { lo, hi, spacing, nodes, last })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `j`. The last node is clipped to `hi`.
    pub fn coord(&self, j: usize) -> f64 {
        if j + 1 == self.nodes {
            self.last
        } else {
            self.lo + j as f64 * self.spacing
        }
    }

    /// Upper end of the interpolation domain (the last node coordinate).
    pub fn upper(&self) -> f64 {
        self.last
    }

    /// Lower cell index and fractional offset in `[0, 1]`, or `None` when
    /// `x` lies outside `[lo, last node]`.
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= self.lo && x <= self.last) {
            return None;
        }
        let mut t = (x - self.lo) / self.spacing;
        let nearest = t.round();
        if (t - nearest).abs() <= SNAP_EPS {
            t = nearest;
        }
        let top = (self.nodes - 1) as f64;
        if t >= top {
            return Some((self.nodes - 2, 1.0));
        }
        let j = t.floor();
        Some((j as usize, (t - j).clamp(0.0, 1.0)))
    }
}

/// Product of per-axis node sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianGrid {
    axes: Vec<AxisSpec>,
    strides: Vec<usize>,
    len: usize,
}

/// Result of locating a query point: lower corner node plus per-axis offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellRef<'a> {
    pub base: usize,
    pub fracs: &'a [f64],
}

/// Explicit corner/weight form of a located cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub corners: Vec<usize>,
    pub weights: Vec<f64>,
}

impl CartesianGrid {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        let mut strides = vec![1usize; axes.len()];
        for a in (0..axes.len() - 1).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].len();
        }
        let len = strides[0] * axes[0].len();
        if len >= u32::MAX as usize {
            return Err(Error::Config(format!("grid with {len} nodes is too large")));
        }
        Ok(Self { axes, strides, len })
    }

    /// Convenience constructor from `(lo, hi, spacing)` triples.
    pub fn from_bounds(bounds: &[(f64, f64, f64)]) -> Result<Self> {
        let axes = bounds
            .iter()
            .map(|&(lo, hi, d)| AxisSpec::new(lo, hi, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.axes.iter().map(AxisSpec::spacing).collect()
    }

    /// Row-major decomposition of a flat node index.
    pub fn node_indices(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.len {
            return Err(Error::Usage(format!(
                "node index {index} out of range for grid with {} nodes",
                self.len
            )));
        }
        Ok(self
            .strides
            .iter()
            .zip(&self.axes)
            .map(|(&s, ax)| (index / s) % ax.len())
            .collect())
    }

    pub fn flat_index(&self, indices: &[usize]) -> usize {
        indices.iter().zip(&self.strides).map(|(&j, &s)| j * s).sum()
    }

    pub fn node_coord(&self, index: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.write_node_coord(index, &mut out)?;
        Ok(out)
    }

    pub(crate) fn write_node_coord(&self, index: usize, out: &mut [f64]) -> Result<()> {
        if index >= self.len {
            return Err(Error::Usage(format!(
                "node index {index} out of range for grid with {} nodes",
                self.len
            )));
        }
        for (a, ax) in self.axes.iter().enumerate() {
            out[a] = ax.coord((index / self.strides[a]) % ax.len());
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .axes
                .iter()
                .zip(x)
                .all(|(ax, &v)| v >= ax.lo && v <= ax.last)
    }

    /// Locates `x`, writing per-axis offsets into `fracs`. Returns the lower
    /// corner node, or `None` when `x` is out of domain.
    pub fn locate_into(&self, x: &[f64], fracs: &mut [f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut base = 0;
        for (a, ax) in self.axes.iter().enumerate() {
            let (j, f) = ax.locate(x[a])?;
            base += j * self.strides[a];
            fracs[a] = f;
        }
        Some(base)
    }

    /// Corner nodes and multilinear weights of the cell containing `x`.
    pub fn locate_cell(&self, x: &[f64]) -> Result<Cell> {
        let mut fracs = vec![0.0; self.dim()];
        let base = self.locate_into(x, &mut fracs).ok_or_else(|| {
            Error::OutOfDomain(format!("query {x:?} lies outside the grid box"))
        })?;
        let n = self.dim();
        let mut corners = Vec::with_capacity(1 << n);
        let mut weights = Vec::with_capacity(1 << n);
        for c in 0..(1usize << n) {
            let (offset, w) = self.corner(c, &fracs);
            corners.push(base + offset);
            weights.push(w);
        }
        Ok(Cell { corners, weights })
    }

    /// Offset from the base node and weight of corner `c`. Bit `n-1-a` of `c`
    /// selects the upper node on axis `a`, so corners come out in ascending
    /// row-major order.
    #[inline]
    fn corner(&self, c: usize, fracs: &[f64]) -> (usize, f64) {
        let n = self.dim();
        let mut offset = 0;
        let mut w = 1.0;
        for a in 0..n {
            if (c >> (n - 1 - a)) & 1 == 1 {
                offset += self.strides[a];
                w *= fracs[a];
            } else {
                w *= 1.0 - fracs[a];
            }
        }
        (offset, w)
    }

    /// Weighted sum of `values` over the cell at `cell`. Zero-weight corners are
    /// skipped; any positively weighted infinite corner yields `+inf`.
    #[inline]
    pub fn blend(&self, values: &[f64], cell: CellRef<'_>) -> f64 {
        if self.dim() == 2 {
            return self.blend2(values, cell);
        }
        let mut acc = 0.0;
        for c in 0..(1usize << self.dim()) {
            let (offset, w) = self.corner(c, cell.fracs);
            if w == 0.0 {
                continue;
            }
            let v = values[cell.base + offset];
            if !v.is_finite() {
                return f64::INFINITY;
            }
            acc += w * v;
        }
        acc
    }

    /// Unrolled two-axis [`blend`](Self::blend); same operations in the same order.
    #[inline]
    fn blend2(&self, values: &[f64], cell: CellRef<'_>) -> f64 {
        let (f0, f1) = (cell.fracs[0], cell.fracs[1]);
        let (g0, g1) = (1.0 - f0, 1.0 - f1);
        let s0 = self.strides[0];
        let b = cell.base;
        let corners = [(g0 * g1, b), (g0 * f1, b + 1), (f0 * g1, b + s0), (f0 * f1, b + s0 + 1)];
        let mut acc = 0.0;
        for (w, k) in corners {
            if w == 0.0 {
                continue;
            }
            let v = values[k];
            if !v.is_finite() {
                return f64::INFINITY;
            }
            acc += w * v;
        }
        acc
    }

    /// Multilinear interpolation of a node field; `+inf` when `x` is out of
    /// domain or touches an infeasible corner.
    pub fn interpolate(&self, field: &NodeField, x: &[f64]) -> f64 {
        debug_assert_eq!(field.len(), self.len);
        let mut fracs = [0.0; 8];
        let mut heap;
        let fracs: &mut [f64] = if self.dim() <= fracs.len() {
            &mut fracs[..self.dim()]
        } else {
            heap = vec![0.0; self.dim()];
            &mut heap
        };
        match self.locate_into(x, fracs) {
            Some(base) => self.blend(field.values(), CellRef { base, fracs }),
            None => f64::INFINITY,
        }
    }
}

/// One value per grid node; `+inf` marks infeasible nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    values: Vec<f64>,
}

impl NodeField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(len: usize, v: f64) -> Self {
        Self { values: vec![v; len] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn is_feasible(&self, k: usize) -> bool {
        self.values[k].is_finite()
    }
}

impl From<Vec<f64>> for NodeField {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}
