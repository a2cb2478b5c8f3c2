//! Localized perturbations: operators mapping twice-differentiable functions
//! on an interval Q into square-integrable functions supported in Q.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::coeffs::OperatorCoefficients;
use crate::error::{Result, SpectralError};
use crate::func::{Evaluator, FnDescriptor};
use crate::quad::{GridFn, QuadGrid};

/// A complex-valued scalar function built from real part and optional
/// imaginary part.
#[derive(Debug, Clone)]
pub struct ComplexFn {
    pub re: Evaluator,
    pub im: Option<Evaluator>,
}

impl ComplexFn {
    pub fn real(desc: &FnDescriptor) -> Result<Self> {
        Ok(ComplexFn {
            re: desc.build()?,
            im: None,
        })
    }

    pub fn new(re: &FnDescriptor, im: Option<&FnDescriptor>) -> Result<Self> {
        Ok(ComplexFn {
            re: re.build()?,
            im: im.map(|d| d.build()).transpose()?,
        })
    }

    pub fn constant(value: Complex64) -> Self {
        ComplexFn {
            re: Evaluator::Constant(value.re),
            im: Some(Evaluator::Constant(value.im)),
        }
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        Complex64::new(
            self.re.eval(x),
            self.im.as_ref().map_or(0.0, |f| f.eval(x)),
        )
    }
}

/// The perturbation support Q = (q_lo, q_hi) together with an enclosing
/// interval (x0, x1) of integer length used by the full-line constructions.
#[derive(Debug, Clone, Copy)]
pub struct SupportInterval {
    pub q_lo: f64,
    pub q_hi: f64,
    pub x0: f64,
    pub x1: f64,
}

impl SupportInterval {
    pub fn new(q_lo: f64, q_hi: f64, x0: f64, x1: f64) -> Result<Self> {
        if !(q_lo < q_hi) {
            return Err(SpectralError::InvalidInput(
                "support needs q_lo < q_hi".into(),
            ));
        }
        if !(x0 < q_lo && x1 > q_hi) {
            return Err(SpectralError::InvalidInput(
                "enclosing interval must strictly contain Q".into(),
            ));
        }
        let width = x1 - x0;
        if (width - width.round()).abs() > 1e-12 || width.round() < 1.0 {
            return Err(SpectralError::InvalidInput(
                "enclosing interval must have positive integer length".into(),
            ));
        }
        Ok(SupportInterval { q_lo, q_hi, x0, x1 })
    }

    /// Smallest integer-length enclosure with a fixed margin around Q.
    pub fn enclosing(q_lo: f64, q_hi: f64) -> Result<Self> {
        if !(q_lo < q_hi) {
            return Err(SpectralError::InvalidInput(
                "support needs q_lo < q_hi".into(),
            ));
        }
        let x0 = q_lo - 0.25;
        let width = (q_hi + 0.25 - x0).ceil().max(1.0);
        SupportInterval::new(q_lo, q_hi, x0, x0 + width)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.q_lo && x <= self.q_hi
    }
}

/// A bounded functional on twice-differentiable functions.
#[derive(Debug, Clone)]
pub enum Functional {
    /// u(x).
    PointValue { x: f64 },
    /// u'(x).
    PointDerivative { x: f64 },
    /// scale * (u'(b) - u'(a)).
    DerivativeDifference { a: f64, b: f64, scale: f64 },
    /// \int_Q w u.
    Integral { weight: ComplexFn },
}

impl Functional {
    /// Points the quadrature grid must not straddle.
    fn special_points(&self) -> Vec<f64> {
        match self {
            Functional::PointValue { x } | Functional::PointDerivative { x } => vec![*x],
            Functional::DerivativeDifference { a, b, .. } => vec![*a, *b],
            Functional::Integral { .. } => vec![],
        }
    }

    pub fn apply(&self, support: &SupportInterval, u: &GridFn) -> Result<Complex64> {
        let grid = &u.grid;
        match self {
            Functional::PointValue { x } => Ok(grid.interpolate(&u.values, *x)),
            Functional::PointDerivative { x } => Ok(grid.interpolate(u.deriv()?, *x)),
            Functional::DerivativeDifference { a, b, scale } => Ok(*scale
                * (grid.interpolate(u.deriv()?, *b) - grid.interpolate(u.deriv()?, *a))),
            Functional::Integral { weight } => {
                let vals: Vec<Complex64> = grid
                    .nodes()
                    .iter()
                    .zip(&u.values)
                    .map(|(&x, v)| {
                        if support.contains(x) {
                            weight.eval(x) * v
                        } else {
                            Complex64::default()
                        }
                    })
                    .collect();
                Ok(grid.integrate(&vals))
            }
        }
    }
}

/// A sampled kernel L(x, t) on Q x Q, bilinearly interpolated.
#[derive(Debug, Clone)]
pub struct Kernel2d {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// Row-major: vals[i * ts.len() + j] = L(xs[i], ts[j]).
    pub vals: Vec<Complex64>,
}

impl Kernel2d {
    pub fn new(xs: Vec<f64>, ts: Vec<f64>, vals: Vec<Complex64>) -> Result<Self> {
        if xs.len() < 2 || ts.len() < 2 || vals.len() != xs.len() * ts.len() {
            return Err(SpectralError::InvalidInput(
                "kernel needs a full rectangular sample with >= 2 points per axis".into(),
            ));
        }
        for v in xs.windows(2).chain(ts.windows(2)) {
            if v[1] <= v[0] {
                return Err(SpectralError::InvalidInput(
                    "kernel sample coordinates must be strictly increasing".into(),
                ));
            }
        }
        Ok(Kernel2d { xs, ts, vals })
    }

    pub fn from_fn(
        q_lo: f64,
        q_hi: f64,
        n: usize,
        f: impl Fn(f64, f64) -> Complex64,
    ) -> Self {
        let xs: Vec<f64> = (0..n)
            .map(|i| q_lo + (q_hi - q_lo) * i as f64 / (n - 1) as f64)
            .collect();
        let mut vals = Vec::with_capacity(n * n);
        for &x in &xs {
            for &t in &xs {
                vals.push(f(x, t));
            }
        }
        Kernel2d {
            xs: xs.clone(),
            ts: xs,
            vals,
        }
    }

    fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
        let i = match axis.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(axis.len() - 2),
            Err(i) => i.saturating_sub(1).min(axis.len() - 2),
        };
        let w = ((x - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0);
        (i, w)
    }

    pub fn eval(&self, x: f64, t: f64) -> Complex64 {
        let (i, wx) = Self::bracket(&self.xs, x);
        let (j, wt) = Self::bracket(&self.ts, t);
        let m = self.ts.len();
        let v00 = self.vals[i * m + j];
        let v01 = self.vals[i * m + j + 1];
        let v10 = self.vals[(i + 1) * m + j];
        let v11 = self.vals[(i + 1) * m + j + 1];
        v00 * ((1.0 - wx) * (1.0 - wt))
            + v01 * ((1.0 - wx) * wt)
            + v10 * (wx * (1.0 - wt))
            + v11 * (wx * wt)
    }
}

/// Data of the embedded-eigenvalue construction: the perturbation couples a
/// high-frequency profile on Q = (-2 pi, 2 pi) to a derivative-difference
/// functional whose strength grows as the support of the oscillation shrinks.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddedData {
    pub alpha: f64,
    pub epsilon: f64,
    pub nu: f64,
    pub c: f64,
    /// Half-width of the oscillation support: the largest multiple of the
    /// full oscillation period not exceeding 2 pi.
    pub cutoff: f64,
}

impl EmbeddedData {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        if alpha < 2.0 {
            return Err(SpectralError::InvalidInput("alpha must be >= 2".into()));
        }
        if epsilon <= 0.0 || epsilon >= 1.0 {
            return Err(SpectralError::InvalidInput(
                "epsilon must lie in (0, 1)".into(),
            ));
        }
        let h = epsilon.powf(alpha);
        let nu = PI / (2.0 * h);
        if nu < 2.0 {
            return Err(SpectralError::GridTooCoarse(
                "oscillation frequency below 2; epsilon too large".into(),
            ));
        }
        let cutoff = 2.0 * PI * nu.floor() / nu;
        let c = 1.0 / (cutoff - h);
        Ok(EmbeddedData {
            alpha,
            epsilon,
            nu,
            c,
            cutoff,
        })
    }

    pub fn h(&self) -> f64 {
        self.epsilon.powf(self.alpha)
    }

    /// The even oscillating profile, cut off at a whole number of periods.
    pub fn xi(&self, x: f64) -> f64 {
        if x.abs() >= self.cutoff {
            0.0
        } else {
            self.c * (self.nu * x.abs()).sin()
        }
    }
}

#[derive(Debug, Clone)]
pub enum PerturbationKind {
    /// b2 u'' + b1 u' + b0 u.
    Differential {
        b2: Option<ComplexFn>,
        b1: Option<ComplexFn>,
        b0: ComplexFn,
    },
    /// (L u)(x) = \int_Q L(x, t) u(t) dt.
    IntegralKernel { kernel: Kernel2d },
    /// L(x, t) = beta conj(b(x)) b(t).
    RankOneKernel { beta: Complex64, b: ComplexFn },
    /// (L u)(x) = b(x) l(u).
    FunctionalRankOne { b: ComplexFn, l: Functional },
    Embedded(EmbeddedData),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoEmbeddedGuarantee {
    GuaranteedNone,
    NotGuaranteed,
}

#[derive(Debug, Clone)]
pub struct LocalizedPerturbation {
    pub support: SupportInterval,
    pub kind: PerturbationKind,
}

impl LocalizedPerturbation {
    pub fn new(support: SupportInterval, kind: PerturbationKind) -> Self {
        LocalizedPerturbation { support, kind }
    }

    pub fn embedded(alpha: f64, epsilon: f64) -> Result<Self> {
        let data = EmbeddedData::new(alpha, epsilon)?;
        let support = SupportInterval::new(
            -2.0 * PI,
            2.0 * PI,
            -2.0 * PI - 0.5,
            -2.0 * PI - 0.5 + 14.0,
        )?;
        Ok(LocalizedPerturbation {
            support,
            kind: PerturbationKind::Embedded(data),
        })
    }

    /// Grid split points this perturbation requires inside its support.
    pub fn special_points(&self) -> Vec<f64> {
        let mut pts = vec![self.support.q_lo, self.support.q_hi];
        match &self.kind {
            PerturbationKind::FunctionalRankOne { l, .. } => pts.extend(l.special_points()),
            PerturbationKind::Embedded(d) => {
                pts.extend([0.0, d.h(), -d.cutoff, d.cutoff]);
            }
            _ => {}
        }
        pts
    }

    /// Cell-size cap resolving any oscillation the perturbation introduces.
    pub fn max_cell(&self) -> f64 {
        match &self.kind {
            PerturbationKind::Embedded(d) => (1.2 * PI / d.nu).min(0.125),
            _ => 0.125,
        }
    }

    /// The quadrature grid over Q owned by this perturbation.
    pub fn q_grid(&self, coeffs: &OperatorCoefficients) -> Arc<QuadGrid> {
        self.window_grid(coeffs, self.support.q_lo, self.support.q_hi)
    }

    /// A grid over [lo, hi] whose cells respect both the coefficients'
    /// breakpoints and this perturbation's special points.
    pub fn window_grid(
        &self,
        coeffs: &OperatorCoefficients,
        lo: f64,
        hi: f64,
    ) -> Arc<QuadGrid> {
        let mut splits = coeffs.breakpoint_images(lo, hi);
        splits.extend(self.special_points());
        QuadGrid::build(lo, hi, &splits, self.max_cell(), 10)
    }

    /// Apply the perturbation; the result vanishes outside Q.
    pub fn apply(&self, u: &GridFn) -> Result<GridFn> {
        let grid = &u.grid;
        let n = grid.len();
        let mut out = vec![Complex64::default(); n];
        match &self.kind {
            PerturbationKind::Differential { b2, b1, b0 } => {
                let d1 = if b1.is_some() { Some(u.deriv()?) } else { None };
                let d2 = if b2.is_some() { Some(u.deriv2()?) } else { None };
                for (i, &x) in grid.nodes().iter().enumerate() {
                    if !self.support.contains(x) {
                        continue;
                    }
                    let mut v = b0.eval(x) * u.values[i];
                    if let (Some(f), Some(d)) = (b1, d1) {
                        v += f.eval(x) * d[i];
                    }
                    if let (Some(f), Some(d)) = (b2, d2) {
                        v += f.eval(x) * d[i];
                    }
                    out[i] = v;
                }
            }
            PerturbationKind::IntegralKernel { kernel } => {
                // Quadrature in t over Q for each output node in Q.
                let nodes = grid.nodes();
                let weights = grid.weights();
                for (i, &x) in nodes.iter().enumerate() {
                    if !self.support.contains(x) {
                        continue;
                    }
                    let mut acc = Complex64::default();
                    for (j, &t) in nodes.iter().enumerate() {
                        if self.support.contains(t) {
                            acc += kernel.eval(x, t) * u.values[j] * weights[j];
                        }
                    }
                    out[i] = acc;
                }
            }
            PerturbationKind::RankOneKernel { beta, b } => {
                let masked: Vec<Complex64> = grid
                    .nodes()
                    .iter()
                    .zip(&u.values)
                    .map(|(&t, v)| {
                        if self.support.contains(t) {
                            b.eval(t) * v
                        } else {
                            Complex64::default()
                        }
                    })
                    .collect();
                let inner = grid.integrate(&masked);
                for (i, &x) in grid.nodes().iter().enumerate() {
                    if self.support.contains(x) {
                        out[i] = beta * b.eval(x).conj() * inner;
                    }
                }
            }
            PerturbationKind::FunctionalRankOne { b, l } => {
                let lv = l.apply(&self.support, u)?;
                for (i, &x) in grid.nodes().iter().enumerate() {
                    if self.support.contains(x) {
                        out[i] = b.eval(x) * lv;
                    }
                }
            }
            PerturbationKind::Embedded(d) => {
                let h = d.h();
                let du = u.deriv()?;
                let lv = (grid.interpolate(du, h) - grid.interpolate(du, 0.0)) / d.epsilon;
                for (i, &x) in grid.nodes().iter().enumerate() {
                    if self.support.contains(x) {
                        out[i] = 2.0 * d.xi(x) * lv;
                    }
                }
            }
        }
        Ok(GridFn::new(grid.clone(), out))
    }

    /// Whether the absence of embedded eigenvalues is guaranteed for this
    /// perturbation class.
    pub fn classify_no_embedded(&self) -> NoEmbeddedGuarantee {
        match &self.kind {
            PerturbationKind::Differential { .. }
            | PerturbationKind::IntegralKernel { .. }
            | PerturbationKind::RankOneKernel { .. } => NoEmbeddedGuarantee::GuaranteedNone,
            PerturbationKind::FunctionalRankOne { l, .. } => match l {
                Functional::Integral { .. } => NoEmbeddedGuarantee::GuaranteedNone,
                _ => NoEmbeddedGuarantee::NotGuaranteed,
            },
            PerturbationKind::Embedded(_) => NoEmbeddedGuarantee::NotGuaranteed,
        }
    }
}

/// Diagnostics of the embedded-eigenvalue witness.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddedDiagnostics {
    /// |psi'(0)|; should vanish.
    pub dpsi_at_zero: f64,
    /// |psi'(h) - epsilon|; the derivative jump scale.
    pub dpsi_at_h: f64,
    /// |l(psi) - 1|.
    pub functional_value: f64,
    /// sup |psi| outside Q.
    pub outside_sup: f64,
    /// sup of the eigenvalue-equation residual on sample points.
    pub eigen_residual: f64,
}

#[derive(Debug)]
pub struct EmbeddedWitness {
    pub data: EmbeddedData,
    pub lambda: f64,
    pub psi: GridFn,
    pub diagnostics: EmbeddedDiagnostics,
}

/// Construct the eigenvalue lambda = nu^2 embedded in the essential spectrum
/// of the free operator, and its compactly supported eigenfunction
/// psi(x) = -(epsilon/nu) \int_Q sin(nu |x - t|) xi(t) dt.
pub fn embedded_witness(alpha: f64, epsilon: f64) -> Result<EmbeddedWitness> {
    let pert = LocalizedPerturbation::embedded(alpha, epsilon)?;
    let d = match &pert.kind {
        PerturbationKind::Embedded(d) => *d,
        _ => unreachable!(),
    };
    let coeffs = OperatorCoefficients::free();
    let lo = -2.0 * PI - 1.0;
    let hi = 2.0 * PI + 1.0;
    let mut splits = pert.special_points();
    splits.extend([-d.h(), -d.cutoff, d.cutoff]);
    let grid = QuadGrid::build(lo, hi, &splits, pert.max_cell(), 10);
    let _ = coeffs;

    let nu = d.nu;
    let nodes = grid.nodes();
    let n = grid.len();
    // sin(nu |x - t|) factorizes through prefix integrals of xi against
    // sin(nu t) and cos(nu t).
    let ws: Vec<Complex64> = nodes
        .iter()
        .map(|&t| Complex64::new(d.xi(t) * (nu * t).sin(), 0.0))
        .collect();
    let wc: Vec<Complex64> = nodes
        .iter()
        .map(|&t| Complex64::new(d.xi(t) * (nu * t).cos(), 0.0))
        .collect();
    let ps = grid.prefix_at_nodes(&ws);
    let pc = grid.prefix_at_nodes(&wc);
    let ts = grid.integrate(&ws);
    let tc = grid.integrate(&wc);

    let mut psi = Vec::with_capacity(n);
    let mut dpsi = Vec::with_capacity(n);
    let scale = -epsilon / nu;
    for i in 0..n {
        let x = nodes[i];
        let (s, c) = (nu * x).sin_cos();
        // A = \int_{t<x} - \int_{t>x} of cos-weighted xi, B the sin-weighted one.
        let a = 2.0 * pc[i] - tc;
        let b = 2.0 * ps[i] - ts;
        psi.push(scale * (s * a - c * b));
        dpsi.push(scale * nu * (c * a + s * b));
    }
    let psi_fn = GridFn {
        grid: grid.clone(),
        values: psi,
        deriv: Some(dpsi),
        deriv2: None,
    };

    let h = d.h();
    let du = psi_fn.deriv()?;
    let d0 = grid.interpolate(du, 0.0).norm();
    let dh = (grid.interpolate(du, h) - epsilon).norm();
    let lfun = ((grid.interpolate(du, h) - grid.interpolate(du, 0.0)) / epsilon - 1.0).norm();
    let outside_sup = nodes
        .iter()
        .enumerate()
        .filter(|(_, &x)| x.abs() > 2.0 * PI + 1e-9)
        .map(|(i, _)| psi_fn.values[i].norm())
        .fold(0.0, f64::max);
    // Eigenvalue equation -psi'' - nu^2 psi = 2 epsilon xi, second derivative
    // by differencing the derivative channel.
    let mut eigen_residual: f64 = 0.0;
    let fd = 1e-6;
    for &x in &[-4.0, -1.3, 0.7, 2.9, 5.1] {
        let ddd = (grid.interpolate(du, x + fd) - grid.interpolate(du, x - fd)) / (2.0 * fd);
        let res = -ddd
            - nu * nu * grid.interpolate(&psi_fn.values, x)
            - 2.0 * epsilon * d.xi(x);
        eigen_residual = eigen_residual.max(res.norm());
    }

    Ok(EmbeddedWitness {
        data: d,
        lambda: nu * nu,
        psi: psi_fn,
        diagnostics: EmbeddedDiagnostics {
            dpsi_at_zero: d0,
            dpsi_at_h: dh,
            functional_value: lfun,
            outside_sup,
            eigen_residual,
        },
    })
}
