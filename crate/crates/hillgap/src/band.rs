//! Band edges, lacunas, discriminant derivative, multipliers and edge
//! eigenfunctions of the periodic operator.

use std::sync::Arc;

use num_complex::Complex64;

use crate::coeffs::OperatorCoefficients;
use crate::error::{Result, SpectralError};
use crate::ode::{self, ThetaBasis};
use crate::quad::{GridFn, QuadGrid};

pub const DEFAULT_ODE_TOL: f64 = 1e-11;

/// Which endpoint of its lacuna an edge value is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSide {
    /// Lower endpoint of the lacuna (top of the band below it).
    Minus,
    /// Upper endpoint of the lacuna (bottom of the band above it).
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Periodic,
    Antiperiodic,
}

/// A refined root of D^2 = 4 with the local data needed downstream.
#[derive(Debug, Clone, Copy)]
pub struct BandEdge {
    pub n: usize,
    pub side: EdgeSide,
    pub mu: f64,
    pub parity: Parity,
    /// dD/d(lambda) at mu; 0 for degenerate edges.
    pub ddot: f64,
    pub degenerate: bool,
    /// theta1'(1, mu) and theta2(1, mu).
    pub theta1p_edge: f64,
    pub theta2_edge: f64,
}

impl BandEdge {
    /// (-1)^n.
    pub fn sign(&self) -> f64 {
        if self.n % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// tau = +(-1)^n for a plus edge, -(-1)^n for a minus edge.
    pub fn tau(&self) -> f64 {
        match self.side {
            EdgeSide::Plus => self.sign(),
            EdgeSide::Minus => -self.sign(),
        }
    }

    /// Sign in front of the gap parametrization lambda = mu -/+ k^2:
    /// the gap lies below a plus edge and above a minus edge.
    pub fn gap_direction(&self) -> f64 {
        match self.side {
            EdgeSide::Plus => -1.0,
            EdgeSide::Minus => 1.0,
        }
    }
}

/// A spectral gap. `n = 0` is the semi-infinite gap (-inf, mu_0^+).
#[derive(Debug, Clone, Copy)]
pub struct Lacuna {
    pub n: usize,
    /// -inf for the semi-infinite gap.
    pub left: f64,
    pub right: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct BandStructure {
    pub edges: Vec<BandEdge>,
    pub lacunas: Vec<Lacuna>,
}

impl BandStructure {
    /// The edge with given index and side, if it was found in the scan range.
    pub fn edge(&self, n: usize, side: EdgeSide) -> Option<&BandEdge> {
        self.edges.iter().find(|e| e.n == n && e.side == side)
    }

    /// True if a real lambda lies inside a band [mu_n^+, mu_{n+1}^-].
    pub fn in_band(&self, lambda: f64) -> bool {
        let mut prev_plus: Option<f64> = None;
        for e in &self.edges {
            match e.side {
                EdgeSide::Plus => prev_plus = Some(e.mu),
                EdgeSide::Minus => {
                    if let Some(lo) = prev_plus {
                        if lambda >= lo && lambda <= e.mu {
                            return true;
                        }
                    }
                    prev_plus = None;
                }
            }
        }
        // Half-open last band if the scan ended inside it.
        if let Some(lo) = prev_plus {
            if lambda >= lo {
                return true;
            }
        }
        false
    }
}

/// Hill discriminant D(lambda) = theta1(1) + theta2'(1).
pub fn discriminant(
    coeffs: &OperatorCoefficients,
    lambda: Complex64,
    tol: f64,
) -> Result<Complex64> {
    ode::discriminant(coeffs, lambda, tol)
}

fn disc_real(coeffs: &OperatorCoefficients, lambda: f64, tol: f64) -> Result<f64> {
    Ok(ode::discriminant(coeffs, Complex64::new(lambda, 0.0), tol)?.re)
}

/// Root of D - 2*sigma on a sign-change bracket, bisection with secant steps.
fn refine_edge(
    coeffs: &OperatorCoefficients,
    mut a: f64,
    mut b: f64,
    sigma: f64,
    tol: f64,
) -> Result<f64> {
    let f = |x: f64| -> Result<f64> { Ok(disc_real(coeffs, x, tol)? - 2.0 * sigma) };
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(SpectralError::ScanTooCoarse);
    }
    let mut best = if fa.abs() < fb.abs() { a } else { b };
    let mut best_f = fa.abs().min(fb.abs());
    for it in 0..200 {
        // Alternate secant and bisection; fall back to bisection when the
        // secant step leaves the bracket.
        let mut x = if it % 2 == 0 && (fb - fa).abs() > 0.0 {
            a - fa * (b - a) / (fb - fa)
        } else {
            0.5 * (a + b)
        };
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let fx = f(x)?;
        if fx.abs() < best_f {
            best_f = fx.abs();
            best = x;
        }
        if fx.abs() <= 1e-10 || (b - a) < 1e-14 * (1.0 + a.abs()) {
            return Ok(best);
        }
        if fa * fx < 0.0 {
            b = x;
            fb = fx;
        } else {
            a = x;
            fa = fx;
        }
    }
    if best_f <= 1e-9 {
        Ok(best)
    } else {
        Err(SpectralError::ScanTooCoarse)
    }
}

/// Golden-section maximum of g = D^2 - 4 on [a, b].
fn golden_max(
    coeffs: &OperatorCoefficients,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let g = |x: f64| -> Result<f64> {
        let d = disc_real(coeffs, x, tol)?;
        Ok(d * d - 4.0)
    };
    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut lo = a;
    let mut hi = b;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut g1 = g(x1)?;
    let mut g2 = g(x2)?;
    for _ in 0..120 {
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            break;
        }
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + inv_phi * (hi - lo);
            g2 = g(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - inv_phi * (hi - lo);
            g1 = g(x1)?;
        }
    }
    let xm = 0.5 * (lo + hi);
    Ok((xm, g(xm)?))
}

/// One refined root of D^2 = 4 before index assignment.
#[derive(Debug, Clone, Copy)]
struct RawEdge {
    mu: f64,
    sigma: f64,
    /// A double root (gap numerically closed at one point).
    double: bool,
}

fn scan_raw_edges(
    coeffs: &OperatorCoefficients,
    lo: f64,
    lambda_max: f64,
    points: usize,
    tol: f64,
) -> Result<Vec<RawEdge>> {
    // Uniform grid in sqrt(lambda - lo): edge spacing is asymptotically
    // uniform in that variable.
    let u_max = (lambda_max - lo).sqrt();
    let mut lam = Vec::with_capacity(points + 1);
    let mut dv = Vec::with_capacity(points + 1);
    for j in 0..=points {
        let u = u_max * j as f64 / points as f64;
        let l = lo + u * u;
        lam.push(l);
        dv.push(disc_real(coeffs, l, tol)?);
    }
    let g: Vec<f64> = dv.iter().map(|d| d * d - 4.0).collect();

    let mut raw: Vec<RawEdge> = Vec::new();
    // Simple roots: sign changes of g.
    for j in 0..points {
        if g[j] == 0.0 {
            raw.push(RawEdge {
                mu: lam[j],
                sigma: dv[j].signum(),
                double: false,
            });
        } else if g[j] * g[j + 1] < 0.0 {
            let sigma = if dv[j].abs() >= 2.0 {
                dv[j].signum()
            } else {
                dv[j + 1].signum()
            };
            let mu = refine_edge(coeffs, lam[j], lam[j + 1], sigma, tol)?;
            raw.push(RawEdge {
                mu,
                sigma,
                double: false,
            });
        }
    }
    if g[points] == 0.0 {
        raw.push(RawEdge {
            mu: lam[points],
            sigma: dv[points].signum(),
            double: false,
        });
    }
    // Closed or nearly closed gaps: interior maxima of g that touch 0 from
    // below, or narrow gaps whose two sign changes fall between grid points.
    for j in 1..points {
        if g[j] < 0.0 && g[j] > g[j - 1] && g[j] >= g[j + 1] {
            let (xm, gm) = golden_max(coeffs, lam[j - 1], lam[j + 1], tol)?;
            let sigma = disc_real(coeffs, xm, tol)?.signum();
            if gm > 1e-11 {
                let left = refine_edge(coeffs, lam[j - 1], xm, sigma, tol)?;
                let right = refine_edge(coeffs, xm, lam[j + 1], sigma, tol)?;
                raw.push(RawEdge {
                    mu: left,
                    sigma,
                    double: false,
                });
                raw.push(RawEdge {
                    mu: right,
                    sigma,
                    double: false,
                });
            } else if gm >= -4e-8 {
                raw.push(RawEdge {
                    mu: xm,
                    sigma,
                    double: true,
                });
            }
        }
    }
    raw.sort_by(|a, b| a.mu.partial_cmp(&b.mu).unwrap());
    raw.dedup_by(|a, b| (a.mu - b.mu).abs() < 1e-9 * (1.0 + b.mu.abs()));
    Ok(raw)
}

/// Locate all band edges with lambda <= lambda_max and assemble the lacunas.
pub fn find_band_edges(
    coeffs: &OperatorCoefficients,
    lambda_max: f64,
) -> Result<BandStructure> {
    find_band_edges_with(coeffs, lambda_max, DEFAULT_ODE_TOL)
}

pub fn find_band_edges_with(
    coeffs: &OperatorCoefficients,
    lambda_max: f64,
    tol: f64,
) -> Result<BandStructure> {
    let lo = coeffs.q_min() - 1.0;
    if lambda_max <= lo {
        return Err(SpectralError::InvalidInput(
            "lambda_max must exceed min q".into(),
        ));
    }
    // ~40 scan points per unit of sqrt(lambda) resolves edges separated by
    // pi in that variable; halve the step on interleaving failures.
    let base_points = ((lambda_max - lo).sqrt() * 40.0).ceil().max(60.0) as usize;
    let mut points = base_points;
    for _attempt in 0..4 {
        let raw = scan_raw_edges(coeffs, lo, lambda_max, points, tol)?;
        match assemble(coeffs, &raw, tol) {
            Ok(bs) => return Ok(bs),
            Err(SpectralError::ScanTooCoarse) => {
                points *= 2;
            }
            Err(e) => return Err(e),
        }
    }
    Err(SpectralError::ScanTooCoarse)
}

fn assemble(
    coeffs: &OperatorCoefficients,
    raw: &[RawEdge],
    tol: f64,
) -> Result<BandStructure> {
    if raw.is_empty() {
        return Err(SpectralError::ScanTooCoarse);
    }
    // Expected sigma pattern: +, (-,-), (+,+), (-,-), ... with double roots
    // standing in for a whole pair.
    if raw[0].sigma != 1.0 || raw[0].double {
        return Err(SpectralError::ScanTooCoarse);
    }
    let mut edges: Vec<BandEdge> = Vec::new();
    let mut lacunas: Vec<Lacuna> = vec![Lacuna {
        n: 0,
        left: f64::NEG_INFINITY,
        right: raw[0].mu,
        degenerate: false,
    }];
    edges.push(make_edge(coeffs, 0, EdgeSide::Plus, raw[0].mu, false, tol)?);

    let mut i = 1;
    let mut n = 1;
    while i < raw.len() {
        let expect = if n % 2 == 0 { 1.0 } else { -1.0 };
        if raw[i].sigma != expect {
            return Err(SpectralError::ScanTooCoarse);
        }
        if raw[i].double {
            let mu = raw[i].mu;
            edges.push(make_edge(coeffs, n, EdgeSide::Minus, mu, true, tol)?);
            edges.push(make_edge(coeffs, n, EdgeSide::Plus, mu, true, tol)?);
            lacunas.push(Lacuna {
                n,
                left: mu,
                right: mu,
                degenerate: true,
            });
            i += 1;
        } else if i + 1 < raw.len() && !raw[i + 1].double && raw[i + 1].sigma == expect {
            let (l, r) = (raw[i].mu, raw[i + 1].mu);
            let deg = r - l <= 1e-8 * l.abs().max(1.0);
            edges.push(make_edge(coeffs, n, EdgeSide::Minus, l, deg, tol)?);
            edges.push(make_edge(coeffs, n, EdgeSide::Plus, r, deg, tol)?);
            lacunas.push(Lacuna {
                n,
                left: l,
                right: r,
                degenerate: deg,
            });
            i += 2;
        } else if i + 1 == raw.len() {
            // Scan range ends inside the lacuna: keep the lower edge only.
            edges.push(make_edge(coeffs, n, EdgeSide::Minus, raw[i].mu, false, tol)?);
            i += 1;
        } else {
            return Err(SpectralError::ScanTooCoarse);
        }
        n += 1;
    }
    Ok(BandStructure { edges, lacunas })
}

fn make_edge(
    coeffs: &OperatorCoefficients,
    n: usize,
    side: EdgeSide,
    mu: f64,
    degenerate: bool,
    tol: f64,
) -> Result<BandEdge> {
    let m = ode::monodromy(coeffs, Complex64::new(mu, 0.0), tol)?;
    let mut edge = BandEdge {
        n,
        side,
        mu,
        parity: if n % 2 == 0 {
            Parity::Periodic
        } else {
            Parity::Antiperiodic
        },
        ddot: 0.0,
        degenerate,
        theta1p_edge: m.theta1p.re,
        theta2_edge: m.theta2.re,
    };
    if !degenerate {
        edge.ddot = ddot_at_edge(coeffs, &edge)?;
    }
    Ok(edge)
}

/// dD/d(lambda) at a non-degenerate edge, via the quadrature identity that
/// expresses the derivative as an integral of a squared combination of the
/// fundamental solutions over one period.
pub fn ddot_at_edge(coeffs: &OperatorCoefficients, edge: &BandEdge) -> Result<f64> {
    if edge.degenerate {
        return Err(SpectralError::DegenerateEdge);
    }
    let mu = Complex64::new(edge.mu, 0.0);
    let m = ode::monodromy(coeffs, mu, DEFAULT_ODE_TOL)?;
    let th1 = m.theta1.re;
    let th2 = m.theta2.re;
    let th1p = m.theta1p.re;
    let th2p = m.theta2p.re;
    if th2.abs() < 1e-10 && th1p.abs() < 1e-10 {
        return Err(SpectralError::DegenerateEdge);
    }
    let grid = period_grid(coeffs);
    let basis = ThetaBasis::compute(coeffs, mu, &grid, DEFAULT_ODE_TOL)?;
    let n = grid.len();
    let mut integrand = Vec::with_capacity(n);
    // Use whichever of theta2, theta1' is larger in modulus as the divisor.
    if th2.abs() >= th1p.abs() {
        for i in 0..n {
            let w = 2.0 * th2 * basis.th1[i].re + (th1 - th2p) * basis.th2[i].re;
            integrand.push(Complex64::new(w * w, 0.0));
        }
        Ok(-grid.integrate(&integrand).re / (4.0 * th2))
    } else {
        for i in 0..n {
            let w = 2.0 * th1p * basis.th2[i].re + (th1 - th2p) * basis.th1[i].re;
            integrand.push(Complex64::new(w * w, 0.0));
        }
        Ok(grid.integrate(&integrand).re / (4.0 * th1p))
    }
}

fn period_grid(coeffs: &OperatorCoefficients) -> Arc<QuadGrid> {
    let splits = coeffs.breakpoint_images(0.0, 1.0);
    QuadGrid::build(0.0, 1.0, &splits, 1.0 / 16.0, 12)
}

/// The periodic or antiperiodic eigenfunction attached to a band edge,
/// represented by its initial data at 0: phi = a theta1 + b theta2.
#[derive(Debug, Clone, Copy)]
pub struct EdgeEigenfunction {
    pub edge: BandEdge,
    pub phi0: f64,
    pub dphi0: f64,
}

pub fn edge_eigenfunction(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
) -> Result<EdgeEigenfunction> {
    if edge.degenerate {
        return Err(SpectralError::DegenerateEdge);
    }
    let m = ode::monodromy(coeffs, Complex64::new(edge.mu, 0.0), DEFAULT_ODE_TOL)?;
    let th1 = m.theta1.re;
    let th2 = m.theta2.re;
    let th1p = m.theta1p.re;
    let th2p = m.theta2p.re;
    let tau = edge.tau();
    let sgn = edge.sign();
    if th2.abs() >= th1p.abs() {
        // tau * theta2 > 0 at the edge, so the root is real.
        let c = (tau * th2).sqrt();
        Ok(EdgeEigenfunction {
            edge: *edge,
            phi0: c,
            dphi0: c * (sgn - th1) / th2,
        })
    } else {
        let c = (-tau * th1p).sqrt();
        Ok(EdgeEigenfunction {
            edge: *edge,
            phi0: c * (sgn - th2p) / th1p,
            dphi0: c,
        })
    }
}

impl EdgeEigenfunction {
    /// Sample phi and phi' on a grid.
    pub fn sample(
        &self,
        coeffs: &OperatorCoefficients,
        grid: &Arc<QuadGrid>,
        tol: f64,
    ) -> Result<GridFn> {
        let basis = ThetaBasis::compute(
            coeffs,
            Complex64::new(self.edge.mu, 0.0),
            grid,
            tol,
        )?;
        Ok(self.sample_on_basis(&basis))
    }

    pub fn sample_on_basis(&self, basis: &ThetaBasis) -> GridFn {
        let n = basis.grid.len();
        let mut v = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            v.push(basis.th1[i] * self.phi0 + basis.th2[i] * self.dphi0);
            d.push(basis.th1d[i] * self.phi0 + basis.th2d[i] * self.dphi0);
        }
        GridFn {
            grid: basis.grid.clone(),
            values: v,
            deriv: Some(d),
            deriv2: None,
        }
    }

    /// Normalization constant |phi(0)|^2 + |phi'(0)|^2.
    pub fn normalization(&self) -> f64 {
        self.phi0 * self.phi0 + self.dphi0 * self.dphi0
    }
}

/// Multiplier rho (|rho| >= 1 branch) and quasi-momentum kappa = log rho.
pub fn multiplier(
    coeffs: &OperatorCoefficients,
    lambda: Complex64,
    tol: f64,
) -> Result<(Complex64, Complex64)> {
    let d = ode::discriminant(coeffs, lambda, tol)?;
    let mut s = (d * d - 4.0).sqrt();
    if (d + s).norm() < (d - s).norm() {
        s = -s;
    }
    let rho = (d + s) / 2.0;
    Ok((rho, rho.ln()))
}

/// Square root with the branch cut on the positive real axis:
/// arg of the result lies in [0, pi).
fn sqrt_upper(z: Complex64) -> Complex64 {
    let mut arg = z.arg();
    if arg < 0.0 {
        arg += 2.0 * std::f64::consts::PI;
    }
    Complex64::from_polar(z.norm().sqrt(), 0.5 * arg)
}

/// Multiplier branch attached to a band edge, as a function of the gap
/// parameter k (lambda = mu - tau-direction * k^2). Returns (rho_n, kappa_n)
/// with kappa_n(k) = sqrt(|ddot|) k + O(k^2).
pub fn edge_multiplier(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    k: Complex64,
    tol: f64,
) -> Result<(Complex64, Complex64)> {
    if edge.degenerate {
        return Err(SpectralError::DegenerateEdge);
    }
    if k.norm() == 0.0 {
        // D^2 - 4 at the refined edge is pure roundoff; the limit is exact.
        return Ok((Complex64::new(edge.sign(), 0.0), Complex64::default()));
    }
    let lambda = Complex64::new(edge.mu, 0.0) + edge.gap_direction() * k * k;
    let d = ode::discriminant(coeffs, lambda, tol)?;
    let mut s = sqrt_upper(d * d - 4.0);
    // Branch rule in k: the root flips sign on the lower half of the k-plane
    // so that sqrt(D^2-4) ~ 2 sqrt(|ddot|) k holds identically in k.
    let argk = k.arg();
    if argk < 0.0 || (argk == 0.0 && k.re < 0.0) {
        s = -s;
    }
    let sgn = edge.sign();
    let rho = (d + sgn * s) / 2.0;
    let kappa = (sgn * rho).ln();
    // Sanity: kappa must track its leading-order form.
    let lead = k * edge.ddot.abs().sqrt();
    if k.norm() > 0.0 && (kappa - lead).norm() > 0.5 * lead.norm().max(1e-12) {
        return Err(SpectralError::KTooLarge);
    }
    Ok((rho, kappa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{PiecewisePeriodicFn, SegmentDescriptor};
    use crate::func::FnDescriptor;

    fn cos_potential(amp: f64) -> OperatorCoefficients {
        let q = PiecewisePeriodicFn::new(&[SegmentDescriptor {
            start: 0.0,
            f: FnDescriptor::Cosine {
                amp,
                freq: 1.0,
                phase: 0.0,
                offset: 0.0,
            },
        }])
        .unwrap();
        OperatorCoefficients::with_potential(q)
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

    #[test]
    fn free_operator_edges_are_degenerate_squares() {
        // D = 2 cos sqrt(lambda): mu_0^+ = 0 and double roots at (n pi)^2.
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 100.0).unwrap();
        let e0 = bs.edge(0, EdgeSide::Plus).unwrap();
        assert!(e0.mu.abs() < 1e-8);
        assert!(!e0.degenerate);
        for n in 1..=3 {
            let want = (n as f64 * std::f64::consts::PI).powi(2);
            let em = bs.edge(n, EdgeSide::Minus).unwrap();
            let ep = bs.edge(n, EdgeSide::Plus).unwrap();
            assert!(em.degenerate && ep.degenerate, "n = {n}");
            assert!((em.mu - want).abs() < 1e-5 * want, "n = {n}: {}", em.mu);
            assert!((ep.mu - em.mu).abs() < 1e-6);
        }
        assert!(bs.lacunas[0].left == f64::NEG_INFINITY);
        assert!(bs.lacunas[1..].iter().all(|l| l.degenerate));
    }

    #[test]
    fn constant_potential_shifts_bottom_edge() {
        // q = c shifts the whole band structure by c; bottom edge at c.
        let q = PiecewisePeriodicFn::constant(2.5);
        let coeffs = OperatorCoefficients::with_potential(q);
        let bs = find_band_edges(&coeffs, 30.0).unwrap();
        let e0 = bs.edge(0, EdgeSide::Plus).unwrap();
        assert!((e0.mu - 2.5).abs() < 1e-8);
    }

    #[test]
    fn step_potential_gaps_open_and_interleave() {
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 160.0).unwrap();
        // All open gaps: edges strictly interleave, D hits the right value.
        let mut last = f64::NEG_INFINITY;
        for e in &bs.edges {
            assert!(e.mu >= last - 1e-9);
            last = e.mu;
            let d = disc_real(&coeffs, e.mu, 1e-11).unwrap();
            assert!(
                (d - 2.0 * e.sign()).abs() < 1e-8,
                "edge n={} side={:?}: D = {d}",
                e.n,
                e.side
            );
        }
        // The first internal gap of a step potential this size is open.
        let l1 = &bs.lacunas[1];
        assert!(!l1.degenerate && l1.right - l1.left > 0.1);
    }

    #[test]
    fn ddot_matches_finite_differences() {
        let coeffs = cos_potential(4.0);
        let bs = find_band_edges(&coeffs, 60.0).unwrap();
        for e in bs.edges.iter().filter(|e| !e.degenerate) {
            let h = 1e-5;
            let dp = disc_real(&coeffs, e.mu + h, 1e-12).unwrap();
            let dm = disc_real(&coeffs, e.mu - h, 1e-12).unwrap();
            let fd = (dp - dm) / (2.0 * h);
            assert!(
                (e.ddot - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "n={} side={:?}: quadrature {} vs fd {}",
                e.n,
                e.side,
                e.ddot,
                fd
            );
            // Sign law: -(-1)^n ddot > 0 at plus edges, +(-1)^n ddot > 0 at minus.
            assert!(-e.gap_direction() * e.sign() * e.ddot < 0.0);
        }
    }

    #[test]
    fn free_bottom_edge_ddot_is_minus_one() {
        // d/d(lambda) of 2 cos sqrt(lambda) at 0 is -1.
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 5.0).unwrap();
        let e0 = bs.edge(0, EdgeSide::Plus).unwrap();
        assert!((e0.ddot + 1.0).abs() < 1e-8, "ddot = {}", e0.ddot);
    }

    #[test]
    fn edge_eigenfunction_periodicity_and_normalization() {
        let coeffs = step_potential(8.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let grid = QuadGrid::build(0.0, 2.0, &coeffs.breakpoint_images(0.0, 2.0), 0.1, 10);
        for e in bs.edges.iter().filter(|e| !e.degenerate).take(5) {
            let ef = edge_eigenfunction(&coeffs, e).unwrap();
            // Normalization identity.
            let want = e.theta1p_edge.abs() + e.theta2_edge.abs();
            assert!((ef.normalization() - want).abs() < 1e-8);
            // (Anti)periodic extension.
            let f = ef.sample(&coeffs, &grid, 1e-11).unwrap();
            for &x in &[0.1, 0.45, 0.8] {
                let a = grid.interpolate(&f.values, x);
                let b = grid.interpolate(&f.values, x + 1.0);
                assert!((b - e.sign() * a).norm() < 1e-8, "n={} x={x}", e.n);
            }
        }
    }

    #[test]
    fn free_bottom_eigenfunction_is_constant_one() {
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 5.0).unwrap();
        let ef = edge_eigenfunction(&coeffs, bs.edge(0, EdgeSide::Plus).unwrap()).unwrap();
        assert!((ef.phi0 - 1.0).abs() < 1e-8);
        assert!(ef.dphi0.abs() < 1e-8);
    }

    #[test]
    fn multiplier_modulus_inside_band_and_gap() {
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let l1 = &bs.lacunas[1];
        let inside_gap = 0.5 * (l1.left + l1.right);
        let (rho_gap, _) =
            multiplier(&coeffs, Complex64::new(inside_gap, 0.0), 1e-11).unwrap();
        assert!(rho_gap.norm() > 1.0 + 1e-6);
        let inside_band = 0.5 * (bs.edges[0].mu + l1.left);
        let (rho_band, _) =
            multiplier(&coeffs, Complex64::new(inside_band, 0.0), 1e-11).unwrap();
        assert!((rho_band.norm() - 1.0).abs() < 1e-8);
        // rho + 1/rho = D
        let d = disc_real(&coeffs, inside_gap, 1e-11).unwrap();
        assert!((rho_gap + 1.0 / rho_gap - d).norm() < 1e-9);
    }

    #[test]
    fn free_multiplier_at_minus_one_is_e() {
        let coeffs = OperatorCoefficients::free();
        let (rho, kappa) =
            multiplier(&coeffs, Complex64::new(-1.0, 0.0), 1e-11).unwrap();
        assert!((rho - std::f64::consts::E).norm() < 1e-9);
        assert!((kappa - 1.0).norm() < 1e-9);
    }

    #[test]
    fn free_edge_multiplier_is_exponential_in_k() {
        // Bottom edge of the free operator: rho_0(k) = e^k exactly.
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 5.0).unwrap();
        let e0 = bs.edge(0, EdgeSide::Plus).unwrap();
        let k = Complex64::new(0.1, 0.0);
        let (rho, kappa) = edge_multiplier(&coeffs, e0, k, 1e-11).unwrap();
        assert!((rho - (0.1_f64).exp()).norm() < 1e-9, "rho = {rho}");
        assert!((kappa - k).norm() < 1e-9);
        // Branch continuation upward in arg k.
        let ki = Complex64::new(0.0, 0.1);
        let (_, kappa_i) = edge_multiplier(&coeffs, e0, ki, 1e-11).unwrap();
        assert!((kappa_i - ki).norm() < 1e-9, "kappa = {kappa_i}");
    }

    #[test]
    fn edge_multiplier_first_order_in_k() {
        // |kappa - sqrt(|ddot|) k| shrinks quadratically under halving k.
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let e = bs.edge(1, EdgeSide::Minus).unwrap();
        let s = e.ddot.abs().sqrt();
        let mut errs = Vec::new();
        for &k in &[0.08, 0.04, 0.02] {
            let kk = Complex64::new(k, 0.0);
            let (_, kappa) = edge_multiplier(&coeffs, e, kk, 1e-12).unwrap();
            errs.push((kappa - s * kk).norm());
        }
        assert!(errs[1] < 0.35 * errs[0]);
        assert!(errs[2] < 0.35 * errs[1]);
    }

    #[test]
    fn translation_identity_for_fundamental_solutions() {
        // theta_i(x+1) = theta_i(1) theta1(x) + theta_i'(1) theta2(x).
        let coeffs = cos_potential(3.0);
        let lam = Complex64::new(1.3, 0.4);
        let m = ode::monodromy(&coeffs, lam, 1e-12).unwrap();
        let grid = QuadGrid::build(0.0, 2.0, &[], 0.1, 10);
        let basis = ThetaBasis::compute(&coeffs, lam, &grid, 1e-12).unwrap();
        for &x in &[0.2, 0.55, 0.9] {
            let t1x = grid.interpolate(&basis.th1, x);
            let t2x = grid.interpolate(&basis.th2, x);
            let t1s = grid.interpolate(&basis.th1, x + 1.0);
            let t2s = grid.interpolate(&basis.th2, x + 1.0);
            assert!((t1s - (m.theta1 * t1x + m.theta1p * t2x)).norm() < 1e-8);
            assert!((t2s - (m.theta2 * t1x + m.theta2p * t2x)).norm() < 1e-8);
        }
    }
}
