//! Floquet solutions near a band edge, the edge Green operator, its
//! k-dependent counterpart with singular/regular splitting, and the
//! off-spectrum resolvent.
//!
//! All kernels factor into products of the fundamental solutions, so an
//! application costs two prefix integrals instead of a dense double sum,
//! and the diagonal kink never crosses a quadrature cell interior.

use std::sync::Arc;

use num_complex::Complex64;

use crate::band::{self, BandEdge, BandStructure};
use crate::coeffs::OperatorCoefficients;
use crate::error::{Result, SpectralError};
use crate::ode::{self, ThetaBasis};
use crate::quad::{GridFn, QuadGrid};

/// The pair of Floquet solutions at lambda = mu + gap_direction * k^2,
/// normalized like the edge eigenfunction. phi1 gains the factor rho per
/// period, phi2 loses it.
#[derive(Debug, Clone)]
pub struct FloquetPair {
    pub edge: BandEdge,
    pub k: Complex64,
    pub rho: Complex64,
    pub kappa: Complex64,
    pub phi1: GridFn,
    pub phi2: GridFn,
}

pub fn floquet_solutions(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    k: Complex64,
    grid: &Arc<QuadGrid>,
    tol: f64,
) -> Result<FloquetPair> {
    if edge.degenerate {
        return Err(SpectralError::DegenerateEdge);
    }
    let (rho, kappa) = band::edge_multiplier(coeffs, edge, k, tol)?;
    let lambda = Complex64::new(edge.mu, 0.0) + edge.gap_direction() * k * k;
    let m = ode::monodromy(coeffs, lambda, tol)?;
    let basis = ThetaBasis::compute(coeffs, lambda, grid, tol)?;
    let tau = edge.tau();
    let (phi1, phi2) = if edge.theta2_edge.abs() >= edge.theta1p_edge.abs() {
        let c = (tau * m.theta2).sqrt();
        let mk = |r: Complex64| -> GridFn {
            let slope = (r - m.theta1) / m.theta2;
            combine(&basis, c, c * slope)
        };
        (mk(rho), mk(1.0 / rho))
    } else {
        let c = (-tau * m.theta1p).sqrt();
        let mk = |r: Complex64| -> GridFn {
            let lead = c * (r - m.theta2p) / m.theta1p;
            combine(&basis, lead, c)
        };
        (mk(rho), mk(1.0 / rho))
    };
    Ok(FloquetPair {
        edge: *edge,
        k,
        rho,
        kappa,
        phi1,
        phi2,
    })
}

/// a * theta1 + b * theta2 with the derivative channel.
fn combine(basis: &ThetaBasis, a: Complex64, b: Complex64) -> GridFn {
    let n = basis.grid.len();
    let mut v = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        v.push(basis.th1[i] * a + basis.th2[i] * b);
        d.push(basis.th1d[i] * a + basis.th2d[i] * b);
    }
    GridFn {
        grid: basis.grid.clone(),
        values: v,
        deriv: Some(d),
        deriv2: None,
    }
}

/// The edge Green operator (the k = 0 regular part of the resolvent at mu),
/// with its fundamental-solution samples cached for repeated application.
#[derive(Debug, Clone)]
pub struct EdgeGreen {
    pub edge: BandEdge,
    pub basis: ThetaBasis,
}

impl EdgeGreen {
    pub fn new(
        coeffs: &OperatorCoefficients,
        edge: &BandEdge,
        grid: &Arc<QuadGrid>,
        tol: f64,
    ) -> Result<Self> {
        let basis = ThetaBasis::compute(coeffs, Complex64::new(edge.mu, 0.0), grid, tol)?;
        Ok(EdgeGreen {
            edge: *edge,
            basis,
        })
    }

    /// u(x) = 1/2 \int sgn(t-x) (theta1(t) theta2(x) - theta1(x) theta2(t)) f(t) dt.
    pub fn apply(&self, coeffs: &OperatorCoefficients, f: &GridFn) -> Result<GridFn> {
        if !Arc::ptr_eq(&self.basis.grid, &f.grid) {
            return Err(SpectralError::GridMismatch);
        }
        let grid = &self.basis.grid;
        let n = grid.len();
        let w1: Vec<Complex64> = (0..n).map(|i| self.basis.th1[i] * f.values[i]).collect();
        let w2: Vec<Complex64> = (0..n).map(|i| self.basis.th2[i] * f.values[i]).collect();
        let j1 = grid.prefix_at_nodes(&w1);
        let j2 = grid.prefix_at_nodes(&w2);
        let t1 = grid.integrate(&w1);
        let t2 = grid.integrate(&w2);

        let mut v = Vec::with_capacity(n);
        let mut vd = Vec::with_capacity(n);
        let mut vdd = Vec::with_capacity(n);
        for i in 0..n {
            // \int_{t>x} - \int_{t<x} collapses to totals minus doubled prefixes.
            let a = t1 - 2.0 * j1[i];
            let b = t2 - 2.0 * j2[i];
            let val = 0.5 * (self.basis.th2[i] * a - self.basis.th1[i] * b);
            let der = 0.5 * (self.basis.th2d[i] * a - self.basis.th1d[i] * b);
            let x = grid.nodes()[i];
            let p = coeffs.p.eval(x);
            let pd = coeffs.p.deriv(x);
            let q = Complex64::new(coeffs.q.eval(x) - self.edge.mu, 0.0);
            v.push(val);
            vd.push(der);
            vdd.push((q * val - f.values[i] - pd * der) / p);
        }
        Ok(GridFn {
            grid: grid.clone(),
            values: v,
            deriv: Some(vd),
            deriv2: Some(vdd),
        })
    }
}

/// One-shot edge Green application.
pub fn edge_green_apply(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    f: &GridFn,
    tol: f64,
) -> Result<GridFn> {
    EdgeGreen::new(coeffs, edge, &f.grid, tol)?.apply(coeffs, f)
}

/// Result of applying the k-dependent edge Green operator.
#[derive(Debug, Clone)]
pub struct EdgeGreenK {
    pub rho: Complex64,
    pub kappa: Complex64,
    /// The full application.
    pub full: GridFn,
    /// The rank-one coefficient part: the full operator behaves as
    /// singular / k plus a bounded remainder.
    pub singular: GridFn,
    /// full - singular / k.
    pub regular: GridFn,
}

/// Reusable application state for the k-dependent edge Green operator.
#[derive(Debug, Clone)]
pub struct EdgeGreenKOp {
    pub edge: BandEdge,
    pub k: Complex64,
    pub pair: FloquetPair,
    /// The edge eigenfunction with two derivative channels.
    pub phi: GridFn,
}

impl EdgeGreenKOp {
    pub fn new(
        coeffs: &OperatorCoefficients,
        edge: &BandEdge,
        k: Complex64,
        grid: &Arc<QuadGrid>,
        tol: f64,
    ) -> Result<Self> {
        if k.norm() == 0.0 {
            return Err(SpectralError::KZero);
        }
        let pair = floquet_solutions(coeffs, edge, k, grid, tol)?;
        let phi = sampled_edge_eigenfunction(coeffs, edge, grid, tol)?;
        Ok(EdgeGreenKOp {
            edge: *edge,
            k,
            pair,
            phi,
        })
    }

    pub fn apply(&self, coeffs: &OperatorCoefficients, f: &GridFn) -> Result<EdgeGreenK> {
        if !Arc::ptr_eq(&self.phi.grid, &f.grid) {
            return Err(SpectralError::GridMismatch);
        }
        let edge = &self.edge;
        let pair = &self.pair;
        let k = self.k;
        let grid = &f.grid;
        let n = grid.len();
        let w1: Vec<Complex64> =
            (0..n).map(|i| pair.phi1.values[i] * f.values[i]).collect();
        let w2: Vec<Complex64> =
            (0..n).map(|i| pair.phi2.values[i] * f.values[i]).collect();
        let j1 = grid.prefix_at_nodes(&w1);
        let j2 = grid.prefix_at_nodes(&w2);
        let t2 = grid.integrate(&w2);
        let c = edge.tau() / (pair.rho - 1.0 / pair.rho);

        let p1d = pair.phi1.deriv()?;
        let p2d = pair.phi2.deriv()?;
        let mut v = Vec::with_capacity(n);
        let mut vd = Vec::with_capacity(n);
        let mut vdd = Vec::with_capacity(n);
        let lambda = Complex64::new(edge.mu, 0.0) + edge.gap_direction() * k * k;
        for i in 0..n {
            let below = j1[i];
            let above = t2 - j2[i];
            let val = c * (pair.phi2.values[i] * below + pair.phi1.values[i] * above);
            let der = c * (p2d[i] * below + p1d[i] * above);
            let x = grid.nodes()[i];
            let p = coeffs.p.eval(x);
            let pd = coeffs.p.deriv(x);
            let q = Complex64::new(coeffs.q.eval(x), 0.0) - lambda;
            v.push(val);
            vd.push(der);
            vdd.push((q * val - f.values[i] - pd * der) / p);
        }
        let full = GridFn {
            grid: grid.clone(),
            values: v,
            deriv: Some(vd),
            deriv2: Some(vdd),
        };

        let singular = singular_part_with(&self.phi, edge, f);
        let sub = |a: Option<&[Complex64]>, b: Option<&[Complex64]>| -> Option<Vec<Complex64>> {
            match (a, b) {
                (Some(a), Some(b)) => {
                    Some((0..n).map(|i| a[i] - b[i] / k).collect())
                }
                _ => None,
            }
        };
        let regular = GridFn {
            grid: grid.clone(),
            values: (0..n)
                .map(|i| full.values[i] - singular.values[i] / k)
                .collect(),
            deriv: sub(full.deriv.as_deref(), singular.deriv.as_deref()),
            deriv2: sub(full.deriv2.as_deref(), singular.deriv2.as_deref()),
        };
        Ok(EdgeGreenK {
            rho: pair.rho,
            kappa: pair.kappa,
            full,
            singular,
            regular,
        })
    }
}

pub fn edge_green_k(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    k: Complex64,
    f: &GridFn,
    tol: f64,
) -> Result<EdgeGreenK> {
    EdgeGreenKOp::new(coeffs, edge, k, &f.grid, tol)?.apply(coeffs, f)
}

/// The edge eigenfunction sampled with all derivative channels, the second
/// one recovered from the equation it solves.
pub fn sampled_edge_eigenfunction(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    grid: &Arc<QuadGrid>,
    tol: f64,
) -> Result<GridFn> {
    let ef = band::edge_eigenfunction(coeffs, edge)?;
    let mut phi = ef.sample(coeffs, grid, tol)?;
    let n = grid.len();
    let mut dd = Vec::with_capacity(n);
    {
        let d = phi.deriv()?;
        for (i, &x) in grid.nodes().iter().enumerate() {
            let p = coeffs.p.eval(x);
            let pd = coeffs.p.deriv(x);
            let q = coeffs.q.eval(x) - edge.mu;
            dd.push((q * phi.values[i] - pd * d[i]) / p);
        }
    }
    phi.deriv2 = Some(dd);
    Ok(phi)
}

/// The rank-one coefficient of the 1/k pole: +/- (f, phi) phi / (2 sqrt|ddot|),
/// the sign matching the edge side.
pub fn singular_part_with(phi: &GridFn, edge: &BandEdge, f: &GridFn) -> GridFn {
    let side = -edge.gap_direction();
    let coef =
        side * f.grid.inner(&f.values, &phi.values) / (2.0 * edge.ddot.abs().sqrt());
    let n = f.grid.len();
    let scale = |ch: Option<&[Complex64]>| -> Option<Vec<Complex64>> {
        ch.map(|v| v.iter().map(|x| x * coef).collect())
    };
    GridFn {
        grid: f.grid.clone(),
        values: (0..n).map(|i| phi.values[i] * coef).collect(),
        deriv: scale(phi.deriv.as_deref()),
        deriv2: scale(phi.deriv2.as_deref()),
    }
}

pub fn singular_part(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    f: &GridFn,
    tol: f64,
) -> Result<GridFn> {
    let phi = sampled_edge_eigenfunction(coeffs, edge, &f.grid, tol)?;
    Ok(singular_part_with(&phi, edge, f))
}

/// Apply the full-line resolvent at lambda strictly off the spectrum.
/// The kernel is the symmetric four-term combination of the fundamental
/// solutions with prefactor 1/(rho - 1/rho).
pub fn resolvent_apply(
    coeffs: &OperatorCoefficients,
    bands: &BandStructure,
    lambda: Complex64,
    f: &GridFn,
    tol: f64,
) -> Result<GridFn> {
    for l in bands.lacunas.iter().filter(|l| l.degenerate) {
        if (lambda - Complex64::new(l.left, 0.0)).norm() < 1e-6 {
            return Err(SpectralError::DegenerateLacunaPoint);
        }
    }
    let (rho, _) = band::multiplier(coeffs, lambda, tol)?;
    if rho.norm() - 1.0 <= 1e-8 {
        return Err(SpectralError::OnSpectrum);
    }
    let m = ode::monodromy(coeffs, lambda, tol)?;
    let grid = &f.grid;
    let basis = ThetaBasis::compute(coeffs, lambda, grid, tol)?;
    let n = grid.len();
    let w1: Vec<Complex64> = (0..n).map(|i| basis.th1[i] * f.values[i]).collect();
    let w2: Vec<Complex64> = (0..n).map(|i| basis.th2[i] * f.values[i]).collect();
    let j1 = grid.prefix_at_nodes(&w1);
    let j2 = grid.prefix_at_nodes(&w2);
    let t1 = grid.integrate(&w1);
    let t2 = grid.integrate(&w2);

    let c = 1.0 / (rho - 1.0 / rho);
    let a_mid = rho - m.theta2p;
    let b_mid = rho - m.theta1;
    let mut v = Vec::with_capacity(n);
    let mut vd = Vec::with_capacity(n);
    let mut vdd = Vec::with_capacity(n);
    for i in 0..n {
        // theta2(1) th1 th1 - (rho - theta2'(1)) th1(min) th2(max)
        // + (rho - theta1(1)) th1(max) th2(min) - theta1'(1) th2 th2
        let term = m.theta2 * basis.th1[i] * t1 - m.theta1p * basis.th2[i] * t2
            - a_mid * (basis.th2[i] * j1[i] + basis.th1[i] * (t2 - j2[i]))
            + b_mid * (basis.th1[i] * j2[i] + basis.th2[i] * (t1 - j1[i]));
        let term_d = m.theta2 * basis.th1d[i] * t1 - m.theta1p * basis.th2d[i] * t2
            - a_mid * (basis.th2d[i] * j1[i] + basis.th1d[i] * (t2 - j2[i]))
            + b_mid * (basis.th1d[i] * j2[i] + basis.th2d[i] * (t1 - j1[i]));
        let val = c * term;
        let der = c * term_d;
        let x = grid.nodes()[i];
        let p = coeffs.p.eval(x);
        let pd = coeffs.p.deriv(x);
        let q = Complex64::new(coeffs.q.eval(x), 0.0) - lambda;
        v.push(val);
        vd.push(der);
        vdd.push((q * val - f.values[i] - pd * der) / p);
    }
    Ok(GridFn {
        grid: grid.clone(),
        values: v,
        deriv: Some(vd),
        deriv2: Some(vdd),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::{find_band_edges, EdgeSide};
    use crate::coeffs::{PiecewisePeriodicFn, SegmentDescriptor};
    use crate::func::FnDescriptor;
    use num_complex::Complex64 as C;

    fn c(x: f64) -> C {
        C::new(x, 0.0)
    }

    fn step_potential(hi: f64) -> OperatorCoefficients {
        let q = PiecewisePeriodicFn::new(&[
            SegmentDescriptor {
                start: 0.0,
                f: FnDescriptor::Constant { value: hi },
            },
            SegmentDescriptor {
                start: 0.5,
                f: FnDescriptor::Constant { value: 0.0 },
            },
        ])
        .unwrap();
        OperatorCoefficients::with_potential(q)
    }

    fn window_grid(coeffs: &OperatorCoefficients, lo: f64, hi: f64) -> Arc<QuadGrid> {
        QuadGrid::build(lo, hi, &coeffs.breakpoint_images(lo, hi), 0.125, 10)
    }

    #[test]
    fn floquet_pair_free_bottom_edge_is_exponential() {
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 5.0).unwrap();
        let e0 = *bs.edge(0, EdgeSide::Plus).unwrap();
        let grid = window_grid(&coeffs, -1.0, 2.0);
        let k = 0.1;
        let pair = floquet_solutions(&coeffs, &e0, c(k), &grid, 1e-11).unwrap();
        // phi1 = sqrt(sinh k / k) e^{kx}, phi2 the mirror.
        let amp = (k.sinh() / k).sqrt();
        for (i, &x) in grid.nodes().iter().enumerate() {
            assert!((pair.phi1.values[i] - c(amp * (k * x).exp())).norm() < 1e-9);
            assert!((pair.phi2.values[i] - c(amp * (-k * x).exp())).norm() < 1e-9);
        }
    }

    #[test]
    fn floquet_pair_at_k_zero_reduces_to_edge_eigenfunction() {
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let grid = window_grid(&coeffs, 0.0, 2.0);
        for e in bs.edges.iter().filter(|e| !e.degenerate).take(4) {
            let pair = floquet_solutions(&coeffs, e, c(0.0), &grid, 1e-11).unwrap();
            let ef = band::edge_eigenfunction(&coeffs, e).unwrap();
            let phi = ef.sample(&coeffs, &grid, 1e-11).unwrap();
            for i in 0..grid.len() {
                assert!(
                    (pair.phi1.values[i] - phi.values[i]).norm() < 1e-8,
                    "edge n={} side={:?} i={i}: {} vs {}",
                    e.n,
                    e.side,
                    pair.phi1.values[i],
                    phi.values[i]
                );
                assert!((pair.phi2.values[i] - phi.values[i]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn floquet_wronskian_identity() {
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let e = *bs.edge(1, EdgeSide::Minus).unwrap();
        let grid = window_grid(&coeffs, -0.5, 1.5);
        let k = C::new(0.05, 0.01);
        let pair = floquet_solutions(&coeffs, &e, k, &grid, 1e-12).unwrap();
        let want_scale = e.tau() * (1.0 / pair.rho - pair.rho);
        for (i, &x) in grid.nodes().iter().enumerate() {
            let w = pair.phi1.values[i] * pair.phi2.deriv().unwrap()[i]
                - pair.phi1.deriv().unwrap()[i] * pair.phi2.values[i];
            let want = want_scale / coeffs.p.eval(x);
            assert!((w - want).norm() < 1e-8, "x = {x}: {w} vs {want}");
        }
    }

    #[test]
    fn floquet_solutions_solve_shifted_equation() {
        // Residual via centered differences of the derivative channel.
        let coeffs = step_potential(6.0);
        let bs = find_band_edges(&coeffs, 100.0).unwrap();
        let e = *bs.edge(1, EdgeSide::Plus).unwrap();
        let grid = window_grid(&coeffs, 0.0, 1.0);
        let k = c(0.08);
        let lambda = c(e.mu) + e.gap_direction() * k * k;
        let pair = floquet_solutions(&coeffs, &e, k, &grid, 1e-12).unwrap();
        let h = 1e-5;
        for &x in &[0.2, 0.4, 0.7, 0.9] {
            let dd = (grid.interpolate(pair.phi1.deriv().unwrap(), x + h)
                - grid.interpolate(pair.phi1.deriv().unwrap(), x - h))
                / (2.0 * h);
            let u = grid.interpolate(&pair.phi1.values, x);
            let res = -dd + (coeffs.q.eval(x) - lambda) * u;
            assert!(res.norm() < 1e-6, "x = {x}: residual {res}");
        }
    }

    #[test]
    fn edge_green_free_kernel_matches_abs_difference() {
        // At the free bottom edge the kernel is -|x - t| / 2.
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 5.0).unwrap();
        let e0 = *bs.edge(0, EdgeSide::Plus).unwrap();
        let grid = window_grid(&coeffs, -0.5, 1.5);
        // f = 1 on (0,1), 0 elsewhere.
        let f = GridFn::from_fn(&grid, |x| {
            if (0.0..1.0).contains(&x) {
                c(1.0)
            } else {
                c(0.0)
            }
        });
        let u = edge_green_apply(&coeffs, &e0, &f, 1e-11).unwrap();
        for (i, &x) in grid.nodes().iter().enumerate() {
            let want = if (0.0..=1.0).contains(&x) {
                -(x * x + (1.0 - x) * (1.0 - x)) / 4.0
            } else if x > 1.0 {
                -(x - 0.5) / 2.0
            } else {
                -(0.5 - x) / 2.0
            };
            assert!((u.values[i] - c(want)).norm() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn edge_green_solves_equation_at_edge() {
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let e = *bs.edge(1, EdgeSide::Minus).unwrap();
        let grid = window_grid(&coeffs, -1.0, 2.0);
        let f = GridFn::from_fn(&grid, |x| C::new((3.0 * x).sin(), (x * x).cos()));
        let u = edge_green_apply(&coeffs, &e, &f, 1e-11).unwrap();
        // -(u')' + (q - mu) u = f, u'' checked by differencing u'.
        let h = 1e-5;
        for &x in &[-0.6, 0.2, 0.8, 1.6] {
            let dd = (grid.interpolate(u.deriv().unwrap(), x + h)
                - grid.interpolate(u.deriv().unwrap(), x - h))
                / (2.0 * h);
            let res = -dd
                + (coeffs.q.eval(x) - e.mu) * grid.interpolate(&u.values, x)
                - grid.interpolate(&f.values, x);
            assert!(res.norm() < 1e-5, "x = {x}: {res}");
        }
        // And the derivative channel is the derivative of the value channel.
        for &x in &[-0.28, 0.63, 1.21] {
            let du = (grid.interpolate(&u.values, x + h)
                - grid.interpolate(&u.values, x - h))
                / (2.0 * h);
            assert!((du - grid.interpolate(u.deriv().unwrap(), x)).norm() < 1e-6);
        }
    }

    #[test]
    fn edge_green_k_free_matches_exponential_kernel() {
        // Free bottom edge: kernel e^{-k|x-t|} / (2k).
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 5.0).unwrap();
        let e0 = *bs.edge(0, EdgeSide::Plus).unwrap();
        let grid = window_grid(&coeffs, -0.5, 1.5);
        let f = GridFn::from_fn(&grid, |x| {
            if (0.0..1.0).contains(&x) {
                c(1.0)
            } else {
                c(0.0)
            }
        });
        let k = 0.2_f64;
        let res = edge_green_k(&coeffs, &e0, c(k), &f, 1e-11).unwrap();
        for (i, &x) in grid.nodes().iter().enumerate() {
            let want = if (0.0..=1.0).contains(&x) {
                (2.0 - (-k * x).exp() - (-k * (1.0 - x)).exp()) / (2.0 * k * k)
            } else {
                let d = if x > 1.0 { x - 1.0 } else { -x };
                ((-k * d).exp() - (-k * (d + 1.0)).exp()) / (2.0 * k * k)
            };
            assert!(
                (res.full.values[i] - c(want)).norm() < 1e-8,
                "x = {x}: {} vs {want}",
                res.full.values[i]
            );
        }
    }

    #[test]
    fn edge_green_k_splitting_richardson() {
        // (full - singular/k) converges to the edge Green application, with
        // the gap shrinking linearly in k.
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let e = *bs.edge(1, EdgeSide::Plus).unwrap();
        let grid = window_grid(&coeffs, -1.0, 2.0);
        let f = GridFn::from_fn(&grid, |x| {
            if (0.0..1.0).contains(&x) {
                C::new((2.0 * x).cos(), 0.3 * x)
            } else {
                c(0.0)
            }
        });
        let u0 = edge_green_apply(&coeffs, &e, &f, 1e-12).unwrap();
        let mut errs = Vec::new();
        for &k in &[0.04, 0.02, 0.01] {
            let r = edge_green_k(&coeffs, &e, c(k), &f, 1e-12).unwrap();
            let diff: Vec<C> = (0..grid.len())
                .map(|i| r.regular.values[i] - u0.values[i])
                .collect();
            errs.push(grid.norm(&diff));
        }
        assert!(errs[1] < 0.7 * errs[0], "{errs:?}");
        assert!(errs[2] < 0.7 * errs[1], "{errs:?}");
    }

    #[test]
    fn edge_green_k_tail_decay_rate() {
        // |u| on integer shifts outside the support decays like e^{-Re kappa}.
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let e = *bs.edge(1, EdgeSide::Minus).unwrap();
        let grid = window_grid(&coeffs, -1.0, 6.0);
        let f = GridFn::from_fn(&grid, |x| {
            if (0.0..1.0).contains(&x) {
                c(1.0)
            } else {
                c(0.0)
            }
        });
        let k = 0.05;
        let r = edge_green_k(&coeffs, &e, c(k), &f, 1e-12).unwrap();
        let probe = |x: f64| grid.interpolate(&r.full.values, x).norm();
        let ratios: Vec<f64> = (0..3)
            .map(|j| probe(2.3 + (j + 1) as f64) / probe(2.3 + j as f64))
            .collect();
        let want = (-r.kappa.re).exp();
        for ratio in ratios {
            assert!(
                (ratio - want).abs() < 0.01 * want,
                "ratio {ratio} vs {want}"
            );
        }
    }

    #[test]
    fn singular_part_is_projector_scaled() {
        // Applying the rank-one part twice rescales it by
        // side * (phi, phi)_Q / (2 sqrt|ddot|).
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let e = *bs.edge(1, EdgeSide::Minus).unwrap();
        let grid = window_grid(&coeffs, 0.0, 1.0);
        let f = GridFn::from_fn(&grid, |x| C::new(x, -0.2));
        let once = singular_part(&coeffs, &e, &f, 1e-11).unwrap();
        let twice = singular_part(&coeffs, &e, &once, 1e-11).unwrap();
        let ef = band::edge_eigenfunction(&coeffs, &e).unwrap();
        let phi = ef.sample(&coeffs, &grid, 1e-11).unwrap();
        let scale = -e.gap_direction() * grid.inner(&phi.values, &phi.values)
            / (2.0 * e.ddot.abs().sqrt());
        for i in 0..grid.len() {
            assert!((twice.values[i] - scale * once.values[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn resolvent_free_matches_classical_kernel() {
        // lambda = -1: kernel e^{-|x-t|} / 2.
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 5.0).unwrap();
        let grid = window_grid(&coeffs, -1.0, 2.0);
        let f = GridFn::from_fn(&grid, |x| {
            if (0.0..1.0).contains(&x) {
                c(1.0)
            } else {
                c(0.0)
            }
        });
        let v = resolvent_apply(&coeffs, &bs, c(-1.0), &f, 1e-11).unwrap();
        for (i, &x) in grid.nodes().iter().enumerate() {
            // \int_0^1 e^{-|x-t|}/2 dt
            let want = if (0.0..=1.0).contains(&x) {
                (2.0 - (-x).exp() - (x - 1.0).exp()) / 2.0
            } else {
                let d = if x > 1.0 { x - 1.0 } else { -x };
                ((-d).exp() - (-d - 1.0).exp()) / 2.0
            };
            assert!((v.values[i] - c(want)).norm() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn resolvent_shift_identity_and_on_spectrum_refusal() {
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let l1 = bs.lacunas[1];
        let lambda = c(0.5 * (l1.left + l1.right));
        let grid = window_grid(&coeffs, -1.0, 5.0);
        let f = GridFn::from_fn(&grid, |x| {
            if (0.0..1.0).contains(&x) {
                C::new(1.0, 0.5 * x)
            } else {
                c(0.0)
            }
        });
        let v = resolvent_apply(&coeffs, &bs, lambda, &f, 1e-12).unwrap();
        let (rho, _) = band::multiplier(&coeffs, lambda, 1e-12).unwrap();
        // v(x + 1) = v(x) / rho to the right of the support.
        for &x in &[1.3, 2.1, 2.8] {
            let a = grid.interpolate(&v.values, x);
            let b = grid.interpolate(&v.values, x + 1.0);
            assert!((b - a / rho).norm() < 1e-7 * a.norm().max(1.0), "x = {x}");
        }
        // Inside a band the resolvent must refuse.
        let inside_band = c(0.5 * (bs.edges[0].mu + l1.left));
        assert!(matches!(
            resolvent_apply(&coeffs, &bs, inside_band, &f, 1e-12),
            Err(SpectralError::OnSpectrum)
        ));
    }
}
