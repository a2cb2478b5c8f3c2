//! Integration of -(p u')' + q u = lambda u as the first-order flux system
//! (u, p u'), with both fundamental solutions carried in one pass.
//!
//! The integrator is an adaptive Dormand-Prince 5(4) pair on a complex
//! 4-dimensional state. Coefficient breakpoints and requested output points
//! are mandatory step endpoints, so the low-order discontinuities of p and q
//! never sit inside a step.

use std::sync::Arc;

use num_complex::Complex64;

use crate::coeffs::OperatorCoefficients;
use crate::error::{Result, SpectralError};
use crate::quad::{GridFn, QuadGrid};

type State = [Complex64; 4];

const MIN_STEP: f64 = 1e-14;

/// Monodromy entries of the period map in flux coordinates, and the discriminant.
#[derive(Debug, Clone, Copy)]
pub struct MonodromyData {
    pub theta1: Complex64,
    pub theta2: Complex64,
    pub theta1p: Complex64,
    pub theta2p: Complex64,
    pub discriminant: Complex64,
}

/// Fundamental solutions theta1, theta2 (and their derivatives) sampled on a grid.
#[derive(Debug, Clone)]
pub struct ThetaBasis {
    pub lambda: Complex64,
    pub grid: Arc<QuadGrid>,
    pub th1: Vec<Complex64>,
    pub th2: Vec<Complex64>,
    pub th1d: Vec<Complex64>,
    pub th2d: Vec<Complex64>,
}

fn rhs(coeffs: &OperatorCoefficients, lambda: Complex64, x: f64, y: &State) -> State {
    let p = coeffs.p.eval(x);
    let q = Complex64::new(coeffs.q.eval(x), 0.0) - lambda;
    [y[1] / p, q * y[0], y[3] / p, q * y[2]]
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate from `x0` through the sorted `targets` (monotone away from `x0`),
/// recording the state at each target. `tol` controls the local error per step.
fn integrate_to_targets(
    coeffs: &OperatorCoefficients,
    lambda: Complex64,
    x0: f64,
    y0: State,
    targets: &[f64],
    tol: f64,
) -> Result<Vec<State>> {
    let mut out = Vec::with_capacity(targets.len());
    if targets.is_empty() {
        return Ok(out);
    }
    let x_end = *targets.last().unwrap();
    let dir: f64 = if x_end >= x0 { 1.0 } else { -1.0 };

    // Mandatory stop points: coefficient breakpoint images plus the targets.
    let mut stops: Vec<f64> = coeffs
        .breakpoint_images(x0.min(x_end), x0.max(x_end))
        .into_iter()
        .filter(|&b| (b - x0) * dir > 1e-13 && (x_end - b) * dir > -1e-13)
        .collect();
    stops.extend_from_slice(targets);
    stops.sort_by(|a, b| {
        (dir * a).partial_cmp(&(dir * b)).unwrap()
    });
    stops.dedup_by(|a, b| (*a - *b).abs() < 1e-13);

    let mut x = x0;
    let mut y = y0;
    let mut h = 1e-3_f64;
    let mut target_idx = 0;

    for &stop in &stops {
        while (stop - x) * dir > 1e-13 {
            let remaining = (stop - x).abs();
            let step = h.min(remaining);
            let (y_new, err) = dp_step(coeffs, lambda, x, &y, dir * step, tol);
            if err <= 1.0 {
                x = if step >= remaining { stop } else { x + dir * step };
                y = y_new;
                h = (step * (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0)).min(0.5);
            } else {
                h = step * (0.9 * err.powf(-0.2)).max(0.1);
                if h < MIN_STEP {
                    return Err(SpectralError::StepUnderflow { x });
                }
            }
        }
        x = stop;
        // A stop may be both a breakpoint image and a target.
        while target_idx < targets.len() && (targets[target_idx] - stop).abs() < 1e-13 {
            out.push(y);
            target_idx += 1;
        }
    }
    debug_assert_eq!(out.len(), targets.len());
    Ok(out)
}

fn dp_step(
    coeffs: &OperatorCoefficients,
    lambda: Complex64,
    x: f64,
    y: &State,
    h: f64,
    tol: f64,
) -> (State, f64) {
    let mut k = [[Complex64::default(); 4]; 7];
    k[0] = rhs(coeffs, lambda, x, y);
    for s in 1..7 {
        let mut ys = *y;
        for j in 0..s {
            let a = A[s][j];
            if a != 0.0 {
                for d in 0..4 {
                    ys[d] += k[j][d] * (h * a);
                }
            }
        }
        k[s] = rhs(coeffs, lambda, x + C[s] * h, &ys);
    }
    let mut y5 = *y;
    let mut e = [Complex64::default(); 4];
    for s in 0..7 {
        for d in 0..4 {
            y5[d] += k[s][d] * (h * B5[s]);
            e[d] += k[s][d] * (h * (B5[s] - B4[s]));
        }
    }
    let mut err: f64 = 0.0;
    for d in 0..4 {
        let scale = tol * (1.0 + y[d].norm().max(y5[d].norm()));
        err = err.max(e[d].norm() / scale);
    }
    (y5, err)
}

/// State of the fundamental pair at x = 0: theta1 = 1, theta2' = 1 (p(0) = 1).
fn initial_state() -> State {
    [
        Complex64::new(1.0, 0.0),
        Complex64::default(),
        Complex64::default(),
        Complex64::new(1.0, 0.0),
    ]
}

/// Fundamental pair at a single point x (flux coordinates).
pub fn fundamental_at(
    coeffs: &OperatorCoefficients,
    lambda: Complex64,
    x: f64,
    tol: f64,
) -> Result<State> {
    if x == 0.0 {
        return Ok(initial_state());
    }
    let states = integrate_to_targets(coeffs, lambda, 0.0, initial_state(), &[x], tol)?;
    Ok(states[0])
}

/// Period map of the fundamental pair, with a Wronskian consistency check.
pub fn monodromy(
    coeffs: &OperatorCoefficients,
    lambda: Complex64,
    tol: f64,
) -> Result<MonodromyData> {
    let s = fundamental_at(coeffs, lambda, 1.0, tol)?;
    let p1 = coeffs.p.eval(1.0);
    let m = MonodromyData {
        theta1: s[0],
        theta1p: s[1] / p1,
        theta2: s[2],
        theta2p: s[3] / p1,
        discriminant: s[0] + s[3] / p1,
    };
    // det of the flux-coordinate period map must be 1.
    let det = s[0] * s[3] - s[1] * s[2];
    let residual = (det - 1.0).norm();
    let scale = 1.0 + s.iter().map(|v| v.norm()).fold(0.0, f64::max).powi(2);
    if residual > 1e-9 * scale {
        return Err(SpectralError::WronskianDrift { residual });
    }
    Ok(m)
}

/// Hill discriminant D(lambda) = theta1(1) + theta2'(1).
pub fn discriminant(coeffs: &OperatorCoefficients, lambda: Complex64, tol: f64) -> Result<Complex64> {
    Ok(monodromy(coeffs, lambda, tol)?.discriminant)
}

impl ThetaBasis {
    /// Sample both fundamental solutions on every node of `grid`.
    pub fn compute(
        coeffs: &OperatorCoefficients,
        lambda: Complex64,
        grid: &Arc<QuadGrid>,
        tol: f64,
    ) -> Result<Self> {
        let nodes = grid.nodes();
        let n = nodes.len();
        let mut states = vec![initial_state(); n];

        let split = nodes.partition_point(|&x| x < 0.0);
        // Backward sweep over nodes below 0, nearest first.
        if split > 0 {
            let targets: Vec<f64> = nodes[..split].iter().rev().copied().collect();
            let got =
                integrate_to_targets(coeffs, lambda, 0.0, initial_state(), &targets, tol)?;
            for (j, s) in got.into_iter().enumerate() {
                states[split - 1 - j] = s;
            }
        }
        if split < n {
            let targets: Vec<f64> = nodes[split..].to_vec();
            let got =
                integrate_to_targets(coeffs, lambda, 0.0, initial_state(), &targets, tol)?;
            for (j, s) in got.into_iter().enumerate() {
                states[split + j] = s;
            }
        }

        let mut th1 = Vec::with_capacity(n);
        let mut th2 = Vec::with_capacity(n);
        let mut th1d = Vec::with_capacity(n);
        let mut th2d = Vec::with_capacity(n);
        for (i, s) in states.iter().enumerate() {
            let p = coeffs.p.eval(nodes[i]);
            th1.push(s[0]);
            th1d.push(s[1] / p);
            th2.push(s[2]);
            th2d.push(s[3] / p);
        }
        Ok(ThetaBasis {
            lambda,
            grid: grid.clone(),
            th1,
            th2,
            th1d,
            th2d,
        })
    }

    /// Wronskian residual p (theta1 theta2' - theta1' theta2) - 1, max over nodes.
    pub fn wronskian_residual(&self, coeffs: &OperatorCoefficients) -> f64 {
        self.grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let p = coeffs.p.eval(x);
                (p * (self.th1[i] * self.th2d[i] - self.th1d[i] * self.th2[i])
                    - 1.0)
                    .norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Particular solution of -(p v')' + (q - lambda) v = f with v(alpha) = v'(alpha) = 0:
///
///   v(x) = theta1(x) J2(x) - theta2(x) J1(x),  Ji(x) = \int_alpha^x thetai f
///
/// Returns v with first and second derivative channels filled.
pub fn cauchy_apply(
    coeffs: &OperatorCoefficients,
    basis: &ThetaBasis,
    f: &GridFn,
    alpha: f64,
) -> Result<GridFn> {
    if !Arc::ptr_eq(&basis.grid, &f.grid) {
        return Err(SpectralError::GridMismatch);
    }
    let grid = &basis.grid;
    if alpha < grid.lo - 1e-12 || alpha > grid.hi + 1e-12 {
        return Err(SpectralError::InvalidInput(format!(
            "cauchy base point {alpha} outside grid range"
        )));
    }
    let n = grid.len();
    let w1: Vec<Complex64> = (0..n).map(|i| basis.th1[i] * f.values[i]).collect();
    let w2: Vec<Complex64> = (0..n).map(|i| basis.th2[i] * f.values[i]).collect();
    let mut j1 = grid.prefix_at_nodes(&w1);
    let mut j2 = grid.prefix_at_nodes(&w2);
    let j1a = grid.partial_integral(&w1, grid.lo, alpha);
    let j2a = grid.partial_integral(&w2, grid.lo, alpha);
    for i in 0..n {
        j1[i] -= j1a;
        j2[i] -= j2a;
    }

    let mut v = Vec::with_capacity(n);
    let mut vd = Vec::with_capacity(n);
    let mut vdd = Vec::with_capacity(n);
    for i in 0..n {
        let x = grid.nodes()[i];
        let val = basis.th1[i] * j2[i] - basis.th2[i] * j1[i];
        // The diagonal contributions of d/dx J_i cancel, leaving the kernel x-derivative.
        let der = basis.th1d[i] * j2[i] - basis.th2d[i] * j1[i];
        let p = coeffs.p.eval(x);
        let pd = coeffs.p.deriv(x);
        let q = Complex64::new(coeffs.q.eval(x), 0.0);
        let second = ((q - basis.lambda) * val - f.values[i] - pd * der) / p;
        v.push(val);
        vd.push(der);
        vdd.push(second);
    }
    Ok(GridFn {
        grid: grid.clone(),
        values: v,
        deriv: Some(vd),
        deriv2: Some(vdd),
    })
}
