//! Composite Gauss-Legendre quadrature grids and sampled functions on them.
//!
//! Cells are split at caller-supplied points (coefficient breakpoints, interval
//! endpoints) so that every integrand is smooth inside a cell. Kernels that are
//! only C0 across the diagonal x = t are handled by the partial-integral API,
//! which splits the containing cell at the evaluation point.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, SpectralError};

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P_n'(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub a: f64,
    pub b: f64,
    pub first_node: usize,
}

/// A composite Gauss-Legendre grid over an interval.
#[derive(Debug)]
pub struct QuadGrid {
    pub lo: f64,
    pub hi: f64,
    pub order: usize,
    cells: Vec<Cell>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Reference GL nodes on [-1, 1] and barycentric weights for them.
    ref_nodes: Vec<f64>,
    bary_w: Vec<f64>,
}

impl QuadGrid {
    pub fn build(lo: f64, hi: f64, splits: &[f64], max_cell: f64, order: usize) -> Arc<QuadGrid> {
        assert!(hi > lo, "empty quadrature interval");
        let mut bounds = vec![lo, hi];
        for &s in splits {
            if s > lo + 1e-13 && s < hi - 1e-13 {
                bounds.push(s);
            }
        }
        bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bounds.dedup_by(|a, b| (*a - *b).abs() < 1e-13);

        let (ref_nodes, ref_weights) = gauss_legendre(order);
        let bary_w = barycentric_weights(&ref_nodes);

        let mut cells = Vec::new();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            let pieces = ((b - a) / max_cell).ceil().max(1.0) as usize;
            for j in 0..pieces {
                let ca = a + (b - a) * j as f64 / pieces as f64;
                let cb = a + (b - a) * (j + 1) as f64 / pieces as f64;
                let first_node = nodes.len();
                let half = 0.5 * (cb - ca);
                let mid = 0.5 * (ca + cb);
                for i in 0..order {
                    nodes.push(mid + half * ref_nodes[i]);
                    weights.push(half * ref_weights[i]);
                }
                cells.push(Cell {
                    a: ca,
                    b: cb,
                    first_node,
                });
            }
        }
        Arc::new(QuadGrid {
            lo,
            hi,
            order,
            cells,
            nodes,
            weights,
            ref_nodes,
            bary_w,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn integrate(&self, values: &[Complex64]) -> Complex64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// L2 inner product (f, g) = \int f conj(g).
    pub fn inner(&self, f: &[Complex64], g: &[Complex64]) -> Complex64 {
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b.conj() * w)
            .sum()
    }

    pub fn norm(&self, f: &[Complex64]) -> f64 {
        self.inner(f, f).re.max(0.0).sqrt()
    }

    pub fn cell_of(&self, x: f64) -> usize {
        let mut idx = match self
            .cells
            .binary_search_by(|c| c.a.partial_cmp(&x).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if idx >= self.cells.len() {
            idx = self.cells.len() - 1;
        }
        idx
    }

    /// Interpolate sampled values at x using the GL interpolant of the containing cell.
    pub fn interpolate(&self, values: &[Complex64], x: f64) -> Complex64 {
        let cell = &self.cells[self.cell_of(x)];
        self.interp_in_cell(cell, values, x)
    }

    fn interp_in_cell(&self, cell: &Cell, values: &[Complex64], x: f64) -> Complex64 {
        // Map to reference coordinate.
        let t = (2.0 * x - cell.a - cell.b) / (cell.b - cell.a);
        let mut num = Complex64::default();
        let mut den = 0.0;
        for i in 0..self.order {
            let d = t - self.ref_nodes[i];
            if d.abs() < 1e-14 {
                return values[cell.first_node + i];
            }
            let c = self.bary_w[i] / d;
            num += values[cell.first_node + i] * c;
            den += c;
        }
        num / den
    }

    /// Integral of the sampled function over [a, b] (subinterval of the grid).
    pub fn partial_integral(&self, values: &[Complex64], a: f64, b: f64) -> Complex64 {
        if b <= a {
            return Complex64::default();
        }
        let mut total = Complex64::default();
        for cell in &self.cells {
            if cell.b <= a || cell.a >= b {
                continue;
            }
            let lo = a.max(cell.a);
            let hi = b.min(cell.b);
            if lo <= cell.a + 1e-14 && hi >= cell.b - 1e-14 {
                for i in 0..self.order {
                    total += values[cell.first_node + i] * self.weights[cell.first_node + i];
                }
            } else {
                total += self.partial_cell_integral(cell, values, lo, hi);
            }
        }
        total
    }

    fn ref_weight(&self, i: usize) -> f64 {
        // Reference weights recovered from any cell's stored weights.
        let c = &self.cells[0];
        self.weights[c.first_node + i] / (0.5 * (c.b - c.a))
    }

    /// Prefix integrals P[i] = \int_lo^{x_i} of the sampled function, at every node.
    pub fn prefix_at_nodes(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut prefix = Vec::with_capacity(self.len());
        let mut before = Complex64::default();
        for cell in &self.cells {
            for i in 0..self.order {
                let x = self.nodes[cell.first_node + i];
                let inside = self.partial_cell_integral(cell, values, cell.a, x);
                prefix.push(before + inside);
            }
            for i in 0..self.order {
                before += values[cell.first_node + i] * self.weights[cell.first_node + i];
            }
        }
        prefix
    }

    fn partial_cell_integral(
        &self,
        cell: &Cell,
        values: &[Complex64],
        lo: f64,
        hi: f64,
    ) -> Complex64 {
        if hi <= lo {
            return Complex64::default();
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (lo + hi);
        let mut total = Complex64::default();
        for i in 0..self.order {
            let x = mid + half * self.ref_nodes[i];
            total += self.interp_in_cell(cell, values, x) * (half * self.ref_weight(i));
        }
        total
    }
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![1.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[i] /= nodes[i] - nodes[j];
            }
        }
    }
    w
}

/// A function sampled on a quadrature grid, with optional derivative channels.
#[derive(Debug, Clone)]
pub struct GridFn {
    pub grid: Arc<QuadGrid>,
    pub values: Vec<Complex64>,
    pub deriv: Option<Vec<Complex64>>,
    pub deriv2: Option<Vec<Complex64>>,
}

impl GridFn {
    pub fn new(grid: Arc<QuadGrid>, values: Vec<Complex64>) -> Self {
        assert_eq!(grid.len(), values.len());
        GridFn {
            grid,
            values,
            deriv: None,
            deriv2: None,
        }
    }

    pub fn zero(grid: Arc<QuadGrid>) -> Self {
        let n = grid.len();
        GridFn {
            grid,
            values: vec![Complex64::default(); n],
            deriv: Some(vec![Complex64::default(); n]),
            deriv2: Some(vec![Complex64::default(); n]),
        }
    }

    pub fn from_fn(grid: &Arc<QuadGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        GridFn::new(grid.clone(), values)
    }

    pub fn deriv(&self) -> Result<&[Complex64]> {
        self.deriv
            .as_deref()
            .ok_or(SpectralError::MissingDerivativeChannel)
    }

    pub fn deriv2(&self) -> Result<&[Complex64]> {
        self.deriv2
            .as_deref()
            .ok_or(SpectralError::MissingDerivativeChannel)
    }

    pub fn same_grid(&self, other: &GridFn) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.len() == other.grid.len()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }
}
