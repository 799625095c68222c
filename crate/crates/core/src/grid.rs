//! Time grid and the control-dependent nested spatial grid.
//!
//! The spatial grid is built from the sorted free-boundary samples: a uniform
//! base grid up to the smallest sample, then each strictly larger sample closes
//! a uniformly subdivided gap, and finally a uniform tail reaches `x = l`. Every
//! sample is a node by construction, and the grid for a smaller sample is a
//! prefix of the grid for a larger one.

use std::io::Write;

use crate::error::{Error, Result};
use crate::report::fmt_num;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    n: usize,
    tau: f64,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Precondition("time grid needs n >= 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Precondition(format!(
                "time horizon must be positive, got {horizon}"
            )));
        }
        Ok(TimeGrid {
            n,
            tau: horizon / n as f64,
            horizon,
        })
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `t_j = j * tau`, with `t_n = T` exactly.
    pub fn node(&self, j: usize) -> f64 {
        if j == self.n {
            self.horizon
        } else {
            j as f64 * self.tau
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.node(j)).collect()
    }

    /// Endpoints of the cell `[t_{k-1}, t_k]`, `1 <= k <= n`.
    pub fn cell(&self, k: usize) -> (f64, f64) {
        debug_assert!((1..=self.n).contains(&k));
        (self.node(k - 1), self.node(k))
    }

    /// The layer index `k` with `t_{k-1} < t <= t_k`; `0` for `t <= 0` and `n`
    /// for `t >= T`.
    pub fn layer_at(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        if t >= self.horizon {
            return self.n;
        }
        let k = (t / self.tau).ceil() as usize;
        // guard the division against rounding on either side of a node
        let mut k = k.clamp(1, self.n);
        while k > 1 && t <= self.node(k - 1) {
            k -= 1;
        }
        while k < self.n && t > self.node(k) {
            k += 1;
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    nodes: Vec<f64>,
    /// `m_j`: node index of the j-th smallest boundary sample.
    level_sizes: Vec<usize>,
    /// `p_j`: time index of the j-th smallest boundary sample (stable order).
    permutation: Vec<usize>,
    /// `j_k`: sorted position of time index `k`.
    rank: Vec<usize>,
    base_step: f64,
    tail_step: Option<f64>,
}

/// Samples closer than this fraction of the base step share a node; a
/// sliver cell between them would make the step systems ill-conditioned.
pub const MERGE_FRACTION: f64 = 1e-9;

impl SpatialGrid {
    /// Builds the nested grid for boundary samples `s_0..s_n` on `[0, l]`.
    ///
    /// The base step is `h = s_min / ceil(s_min / (c_h sqrt(tau)))`; gaps between
    /// consecutive distinct sorted samples and the tail `[s_max, l]` are split
    /// uniformly into cells no wider than `h`. A sample within
    /// `MERGE_FRACTION * h` of the previous node is assigned that node.
    pub fn build(s: &[f64], width: f64, tau: f64, c_h: f64) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Grid("no boundary samples".into()));
        }
        if !(c_h.is_finite() && c_h > 0.0) {
            return Err(Error::Grid(format!("c_h must be positive, got {c_h}")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Grid(format!("tau must be positive, got {tau}")));
        }
        if let Some((k, v)) = s
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v.is_finite() && v > 0.0 && v <= width))
        {
            return Err(Error::Grid(format!(
                "boundary sample s_{k} = {v} outside (0, {width}]"
            )));
        }

        let mut permutation: Vec<usize> = (0..s.len()).collect();
        // stable: equal samples keep their time order
        permutation.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
        let mut rank = vec![0; s.len()];
        for (j, &k) in permutation.iter().enumerate() {
            rank[k] = j;
        }

        let smallest = s[permutation[0]];
        let base_cells = (smallest / (c_h * tau.sqrt())).ceil().max(1.0) as usize;
        let h = smallest / base_cells as f64;
        let mut nodes = Vec::with_capacity(base_cells + 1);
        nodes.extend((0..base_cells).map(|i| i as f64 * h));
        nodes.push(smallest);

        let mut level_sizes = Vec::with_capacity(s.len());
        level_sizes.push(base_cells);
        let merge = MERGE_FRACTION * h;
        for &k in &permutation[1..] {
            let last = *nodes.last().expect("grid has nodes");
            if s[k] - last > merge {
                push_uniform(&mut nodes, last, s[k], h);
            }
            level_sizes.push(nodes.len() - 1);
        }

        let last = *nodes.last().expect("grid has nodes");
        let tail_step = if width - last > merge {
            Some(push_uniform(&mut nodes, last, width, h))
        } else {
            *nodes.last_mut().expect("grid has nodes") = width;
            None
        };

        Ok(SpatialGrid {
            nodes,
            level_sizes,
            permutation,
            rank,
            base_step: h,
            tail_step,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Index of the last node, `N`.
    pub fn last_index(&self) -> usize {
        self.nodes.len() - 1
    }

    /// `h_i = x_{i+1} - x_i`.
    pub fn width(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn base_step(&self) -> f64 {
        self.base_step
    }

    pub fn tail_step(&self) -> Option<f64> {
        self.tail_step
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// `m_{j_k}`: the node index holding `s_k`.
    pub fn boundary_index(&self, k: usize) -> usize {
        self.level_sizes[self.rank[k]]
    }

    /// Index `i` of the cell `[x_i, x_{i+1})` containing `x`, clamped to the grid.
    pub fn cell_containing(&self, x: f64) -> usize {
        let last_cell = self.nodes.len() - 2;
        self.nodes
            .partition_point(|&v| v <= x)
            .saturating_sub(1)
            .min(last_cell)
    }

    /// Debug dump with header `i,x_i,h_i`; the last node has an empty width.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,x_i,h_i")?;
        for (i, x) in self.nodes.iter().enumerate() {
            match self.nodes.get(i + 1) {
                Some(next) => writeln!(out, "{i},{},{}", fmt_num(*x), fmt_num(next - x))?,
                None => writeln!(out, "{i},{},", fmt_num(*x))?,
            }
        }
        Ok(())
    }

    /// Level map with header `k,s_k,m_jk`.
    pub fn write_levels_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,s_k,m_jk")?;
        for k in 0..self.rank.len() {
            let m = self.boundary_index(k);
            writeln!(out, "{k},{},{m}", fmt_num(self.nodes[m]))?;
        }
        Ok(())
    }
}

/// Appends nodes splitting `(from, to]` into `ceil((to - from) / h)` uniform
/// cells, the last node being `to` exactly. Returns the cell width.
fn push_uniform(nodes: &mut Vec<f64>, from: f64, to: f64, h: f64) -> f64 {
    let gap = to - from;
    let cells = (gap / h).ceil().max(1.0) as usize;
    let w = gap / cells as f64;
    nodes.extend((1..cells).map(|j| from + j as f64 * w));
    nodes.push(to);
    w
}
