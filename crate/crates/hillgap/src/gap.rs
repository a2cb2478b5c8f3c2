//! Existence and asymptotics of the eigenvalue emerging from a
//! non-degenerate band edge under the perturbation -(p u')' + q u - eps L u.
//!
//! All quantities are parametrized by k with lambda = mu + d k^2, where d is
//! -1 at the top edge of a gap and +1 at the bottom edge, so the gap side
//! adjacent to the edge corresponds to Re k > 0.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::band::{self, BandEdge};
use crate::coeffs::OperatorCoefficients;
use crate::error::{Result, SpectralError};
use crate::floquet::{self, EdgeGreen, EdgeGreenKOp};
use crate::perturbation::LocalizedPerturbation;
use crate::quad::{GridFn, QuadGrid};

pub const QUAD_TOL: f64 = 1e-10;
const ODE_TOL: f64 = 1e-11;

/// First two expansion coefficients of the gap parameter k in powers of eps.
#[derive(Debug, Clone, Copy)]
pub struct KCoefficients {
    pub edge: BandEdge,
    pub epsilon: f64,
    pub k1: Complex64,
    pub k2: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Existence {
    Yes,
    No,
    Indeterminate,
}

/// Everything computed for one edge and one perturbation strength.
#[derive(Debug, Clone)]
pub struct GapEigenvalueReport {
    pub edge: BandEdge,
    pub epsilon: f64,
    pub exists: Existence,
    /// Verdict from the sign of the second-order coefficient alone.
    pub exists_order2: Existence,
    /// (phi, A(eps, 0) L phi) over Q.
    pub criterion_value: Complex64,
    pub coefficients: KCoefficients,
    /// mu + d (eps k1)^2.
    pub lambda_order1: Complex64,
    /// mu + d (eps (k1 + eps k2))^2.
    pub lambda_order2: Complex64,
    /// mu + d eps^2 (phi, A(eps,0) L phi)^2 / (4 |ddot|).
    pub lambda_from_series: Complex64,
    pub k_exact: Option<Complex64>,
    pub lambda_exact: Option<Complex64>,
    /// Re kappa at k_exact: the exponential decay rate of the eigenfunction.
    pub decay_rate: Option<f64>,
    /// First-order eigenfunction phi + eps G0 L phi on the support grid.
    pub eigenfunction: Option<GridFn>,
}

/// Shared state for one (edge, perturbation) pair on one grid.
pub struct GapContext<'a> {
    pub coeffs: &'a OperatorCoefficients,
    pub edge: BandEdge,
    pub pert: &'a LocalizedPerturbation,
    pub grid: Arc<QuadGrid>,
    green0: EdgeGreen,
    pub phi: GridFn,
    sqrt_dd: f64,
    side: f64,
}

impl<'a> GapContext<'a> {
    pub fn new(
        coeffs: &'a OperatorCoefficients,
        edge: &BandEdge,
        pert: &'a LocalizedPerturbation,
    ) -> Result<Self> {
        let grid = pert.q_grid(coeffs);
        Self::on_grid(coeffs, edge, pert, grid)
    }

    pub fn on_grid(
        coeffs: &'a OperatorCoefficients,
        edge: &BandEdge,
        pert: &'a LocalizedPerturbation,
        grid: Arc<QuadGrid>,
    ) -> Result<Self> {
        if edge.degenerate {
            return Err(SpectralError::DegenerateEdge);
        }
        let green0 = EdgeGreen::new(coeffs, edge, &grid, ODE_TOL)?;
        let phi = floquet::sampled_edge_eigenfunction(coeffs, edge, &grid, ODE_TOL)?;
        Ok(GapContext {
            coeffs,
            edge: *edge,
            pert,
            grid,
            green0,
            phi,
            sqrt_dd: edge.ddot.abs().sqrt(),
            side: -edge.gap_direction(),
        })
    }

    pub fn l_phi(&self) -> Result<GridFn> {
        self.pert.apply(&self.phi)
    }

    /// Solve (I - eps L G0) g = rhs on the support grid.
    pub fn a0_solve(&self, epsilon: f64, rhs: &GridFn) -> Result<GridFn> {
        self.solve_inverse(rhs, |g| {
            let u = self.green0.apply(self.coeffs, g)?;
            scale(self.pert.apply(&u)?, epsilon)
        })
    }

    /// Solve (I - eps L (G(k) - singular/k)) g = rhs using a prepared
    /// k-operator.
    pub fn ak_solve(
        &self,
        op: &EdgeGreenKOp,
        epsilon: f64,
        rhs: &GridFn,
    ) -> Result<GridFn> {
        self.solve_inverse(rhs, |g| {
            let u = op.apply(self.coeffs, g)?.regular;
            scale(self.pert.apply(&u)?, epsilon)
        })
    }

    /// Neumann iteration with a dense collocation fallback.
    fn solve_inverse(
        &self,
        rhs: &GridFn,
        apply_t: impl Fn(&GridFn) -> Result<GridFn>,
    ) -> Result<GridFn> {
        let scale_norm = rhs.l2_norm().max(1.0);
        let mut g = rhs.clone();
        let mut prev_inc = f64::INFINITY;
        let mut growths = 0;
        for _ in 0..80 {
            let tg = apply_t(&g)?;
            let mut next = rhs.clone();
            let mut inc: f64 = 0.0;
            for i in 0..self.grid.len() {
                next.values[i] += tg.values[i];
            }
            let diff: Vec<Complex64> = (0..self.grid.len())
                .map(|i| next.values[i] - g.values[i])
                .collect();
            inc = inc.max(self.grid.norm(&diff));
            g = next;
            if inc <= 1e-12 * scale_norm {
                // Residual check of the defining equation.
                let tg = apply_t(&g)?;
                let res: Vec<Complex64> = (0..self.grid.len())
                    .map(|i| g.values[i] - tg.values[i] - rhs.values[i])
                    .collect();
                if self.grid.norm(&res) <= 1e-9 * scale_norm {
                    return Ok(g);
                }
                break;
            }
            if inc >= prev_inc {
                growths += 1;
                if growths >= 3 {
                    break;
                }
            } else {
                growths = 0;
            }
            prev_inc = inc;
        }
        self.dense_solve(rhs, apply_t)
    }

    fn dense_solve(
        &self,
        rhs: &GridFn,
        apply_t: impl Fn(&GridFn) -> Result<GridFn>,
    ) -> Result<GridFn> {
        let n = self.grid.len();
        if n > 4096 {
            return Err(SpectralError::NotInvertible);
        }
        let mut m = DMatrix::<Complex64>::identity(n, n);
        let mut probe = GridFn::new(self.grid.clone(), vec![Complex64::default(); n]);
        for j in 0..n {
            probe.values[j] = Complex64::new(1.0, 0.0);
            let col = apply_t(&probe)?;
            for i in 0..n {
                m[(i, j)] -= col.values[i];
            }
            probe.values[j] = Complex64::default();
        }
        let lu = m.lu();
        let b = DMatrix::<Complex64>::from_fn(n, 1, |i, _| rhs.values[i]);
        let sol = lu.solve(&b).ok_or(SpectralError::NotInvertible)?;
        let g = GridFn::new(self.grid.clone(), sol.column(0).iter().copied().collect());
        let tg = apply_t(&g)?;
        let res: Vec<Complex64> = (0..n)
            .map(|i| g.values[i] - tg.values[i] - rhs.values[i])
            .collect();
        if self.grid.norm(&res) > 1e-8 * rhs.l2_norm().max(1.0) {
            return Err(SpectralError::NotInvertible);
        }
        Ok(g)
    }

    fn inner_with_phi(&self, f: &GridFn) -> Complex64 {
        // (f, phi) with real phi.
        self.grid.inner(&f.values, &self.phi.values)
    }
}

fn scale(mut f: GridFn, s: f64) -> Result<GridFn> {
    for v in &mut f.values {
        *v *= s;
    }
    if let Some(d) = &mut f.deriv {
        d.iter_mut().for_each(|v| *v *= s);
    }
    if let Some(d) = &mut f.deriv2 {
        d.iter_mut().for_each(|v| *v *= s);
    }
    Ok(f)
}

pub fn k_coefficients(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    pert: &LocalizedPerturbation,
    epsilon: f64,
) -> Result<KCoefficients> {
    let ctx = GapContext::new(coeffs, edge, pert)?;
    k_coefficients_in(&ctx, epsilon)
}

pub fn k_coefficients_in(ctx: &GapContext, epsilon: f64) -> Result<KCoefficients> {
    let lphi = ctx.l_phi()?;
    let k1 = ctx.side * ctx.inner_with_phi(&lphi) / (2.0 * ctx.sqrt_dd);
    let g = ctx.green0.apply(ctx.coeffs, &lphi)?;
    let lg = ctx.pert.apply(&g)?;
    let k2 = ctx.side * ctx.inner_with_phi(&lg) / (2.0 * ctx.sqrt_dd);
    Ok(KCoefficients {
        edge: ctx.edge,
        epsilon,
        k1,
        k2,
    })
}

/// g solving (I - eps L G0) g = rhs.
pub fn resolvent_correction(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    pert: &LocalizedPerturbation,
    epsilon: f64,
    rhs: &GridFn,
) -> Result<GridFn> {
    let ctx = GapContext::on_grid(coeffs, edge, pert, rhs.grid.clone())?;
    ctx.a0_solve(epsilon, rhs)
}

/// Sign test of (phi, A(eps,0) L phi) deciding whether the edge sheds an
/// eigenvalue into the adjacent gap.
pub fn existence_criterion(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    pert: &LocalizedPerturbation,
    epsilon: f64,
) -> Result<(Existence, Complex64)> {
    let ctx = GapContext::new(coeffs, edge, pert)?;
    existence_criterion_in(&ctx, epsilon)
}

pub fn existence_criterion_in(
    ctx: &GapContext,
    epsilon: f64,
) -> Result<(Existence, Complex64)> {
    let lphi = ctx.l_phi()?;
    let g = ctx.a0_solve(epsilon, &lphi)?;
    // (phi, A L phi): conjugate-linear in the second slot; phi is real.
    let value = ctx.inner_with_phi(&g).conj();
    let tau_exist = 1e3 * QUAD_TOL;
    let signed = ctx.side * value.re;
    let verdict = if signed > tau_exist {
        Existence::Yes
    } else if signed < -tau_exist {
        Existence::No
    } else {
        Existence::Indeterminate
    };
    Ok((verdict, value))
}

/// Solve the exact scalar equation k = side * eps (A(eps,k) L phi, phi) / (2 sqrt|ddot|)
/// by damped fixed-point iteration seeded with the second-order expansion.
pub fn solve_k_equation(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    pert: &LocalizedPerturbation,
    epsilon: f64,
) -> Result<Complex64> {
    let ctx = GapContext::new(coeffs, edge, pert)?;
    let kc = k_coefficients_in(&ctx, epsilon)?;
    solve_k_equation_in(&ctx, epsilon, &kc)
}

pub fn solve_k_equation_in(
    ctx: &GapContext,
    epsilon: f64,
    kc: &KCoefficients,
) -> Result<Complex64> {
    let lphi = ctx.l_phi()?;
    let map = |k: Complex64| -> Result<Complex64> {
        let g = if k.norm() < 1e-13 {
            ctx.a0_solve(epsilon, &lphi)?
        } else {
            let op = EdgeGreenKOp::new(ctx.coeffs, &ctx.edge, k, &ctx.grid, ODE_TOL)?;
            ctx.ak_solve(&op, epsilon, &lphi)?
        };
        Ok(ctx.side * epsilon * ctx.inner_with_phi(&g) / (2.0 * ctx.sqrt_dd))
    };
    let mut k = epsilon * (kc.k1 + epsilon * kc.k2);
    let mut prev_res = f64::INFINITY;
    for _ in 0..100 {
        let fk = map(k)?;
        let res = (fk - k).norm();
        if res <= 1e-12 {
            return Ok(fk);
        }
        // Damp when the update stalls; the map is a contraction of rate
        // O(eps) near the solution, so this engages rarely.
        k = if res >= prev_res {
            0.5 * (k + fk)
        } else {
            fk
        };
        prev_res = res;
    }
    Err(SpectralError::NoConvergence { iters: 100 })
}

/// Full report for one edge: criterion, expansion, exact solve, profiles.
pub fn eigenvalue_asymptotics(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    pert: &LocalizedPerturbation,
    epsilon: f64,
) -> Result<GapEigenvalueReport> {
    let ctx = GapContext::new(coeffs, edge, pert)?;
    let kc = k_coefficients_in(&ctx, epsilon)?;
    let (exists, criterion_value) = existence_criterion_in(&ctx, epsilon)?;
    let d = edge.gap_direction();
    let mu = Complex64::new(edge.mu, 0.0);
    let k_order1 = epsilon * kc.k1;
    let k_order2 = epsilon * (kc.k1 + epsilon * kc.k2);
    let lambda_order1 = mu + d * k_order1 * k_order1;
    let lambda_order2 = mu + d * k_order2 * k_order2;
    let series = criterion_value * criterion_value * (epsilon * epsilon)
        / (4.0 * edge.ddot.abs());
    let lambda_from_series = mu + d * ctx.side * ctx.side * series;

    let order2_re = (kc.k1 + epsilon * kc.k2).re;
    let exists_order2 = if order2_re >= epsilon.sqrt() * epsilon {
        Existence::Yes
    } else if order2_re <= -epsilon.sqrt() * epsilon {
        Existence::No
    } else {
        Existence::Indeterminate
    };

    let mut report = GapEigenvalueReport {
        edge: *edge,
        epsilon,
        exists,
        exists_order2,
        criterion_value,
        coefficients: kc,
        lambda_order1,
        lambda_order2,
        lambda_from_series,
        k_exact: None,
        lambda_exact: None,
        decay_rate: None,
        eigenfunction: None,
    };
    if exists == Existence::Yes {
        let k = solve_k_equation_in(&ctx, epsilon, &kc)?;
        report.k_exact = Some(k);
        report.lambda_exact = Some(mu + d * k * k);
        let (_, kappa) = band::edge_multiplier(ctx.coeffs, edge, k, ODE_TOL)?;
        report.decay_rate = Some(kappa.re);
        // First-order eigenfunction phi + eps G0 L phi on the support grid.
        let lphi = ctx.l_phi()?;
        let g = ctx.green0.apply(ctx.coeffs, &lphi)?;
        let n = ctx.grid.len();
        let mut ef = ctx.phi.clone();
        for i in 0..n {
            ef.values[i] += epsilon * g.values[i];
        }
        if let (Some(ed), Ok(gd)) = (ef.deriv.as_mut(), g.deriv()) {
            for i in 0..n {
                ed[i] += epsilon * gd[i];
            }
        }
        ef.deriv2 = None;
        report.eigenfunction = Some(ef);
    }
    Ok(report)
}

/// The eigenfunction eps G(k) A(eps,k) L phi on a window around the support.
pub fn eigenfunction_profile(
    coeffs: &OperatorCoefficients,
    edge: &BandEdge,
    pert: &LocalizedPerturbation,
    epsilon: f64,
    k: Complex64,
    window: (f64, f64),
) -> Result<GridFn> {
    if k.re <= 0.0 {
        return Err(SpectralError::NonDecaying);
    }
    let grid = pert.window_grid(coeffs, window.0, window.1);
    let ctx = GapContext::on_grid(coeffs, edge, pert, grid)?;
    let op = EdgeGreenKOp::new(coeffs, edge, k, &ctx.grid, ODE_TOL)?;
    let lphi = ctx.l_phi()?;
    let g = ctx.ak_solve(&op, epsilon, &lphi)?;
    let psi = op.apply(coeffs, &g)?.full;
    scale(psi, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::{find_band_edges, EdgeSide};
    use crate::coeffs::{PiecewisePeriodicFn, SegmentDescriptor};
    use crate::func::FnDescriptor;
    use crate::perturbation::{ComplexFn, Functional, PerturbationKind, SupportInterval};

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn square_well() -> LocalizedPerturbation {
        LocalizedPerturbation::new(
            SupportInterval::enclosing(-1.0, 1.0).unwrap(),
            PerturbationKind::Differential {
                b2: None,
                b1: None,
                b0: ComplexFn::constant(c(1.0)),
            },
        )
    }

    fn free_bottom_edge() -> (OperatorCoefficients, BandEdge) {
        let coeffs = OperatorCoefficients::free();
        let bs = find_band_edges(&coeffs, 5.0).unwrap();
        let e = *bs.edge(0, EdgeSide::Plus).unwrap();
        (coeffs, e)
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
    fn square_well_expansion_coefficients() {
        // phi = 1, |ddot| = 1: k1 = |Q|/2 = 1 and k2 = -(1/4) \iint |x-t| = -2/3.
        let (coeffs, e) = free_bottom_edge();
        let pert = square_well();
        let kc = k_coefficients(&coeffs, &e, &pert, 0.1).unwrap();
        assert!((kc.k1 - c(1.0)).norm() < 1e-8, "k1 = {}", kc.k1);
        assert!((kc.k2 - c(-2.0 / 3.0)).norm() < 1e-8, "k2 = {}", kc.k2);
    }

    #[test]
    fn rank_one_first_coefficient_closed_form() {
        // k1 = side * beta |(b, phi)|^2 / (2 sqrt|ddot|).
        let (coeffs, e) = free_bottom_edge();
        let beta = Complex64::new(0.8, 0.3);
        let pert = LocalizedPerturbation::new(
            SupportInterval::enclosing(-1.0, 1.0).unwrap(),
            PerturbationKind::RankOneKernel {
                beta,
                b: ComplexFn::real(&FnDescriptor::Polynomial {
                    coeffs: vec![1.0, 0.5],
                })
                .unwrap(),
            },
        );
        let kc = k_coefficients(&coeffs, &e, &pert, 0.05).unwrap();
        // (b, phi) with phi = 1: \int_{-1}^{1} (1 + x/2) = 2.
        let want = beta * 4.0 / 2.0;
        assert!((kc.k1 - want).norm() < 1e-8, "k1 = {} want {want}", kc.k1);
    }

    #[test]
    fn resolvent_correction_identity_and_first_order() {
        let (coeffs, e) = free_bottom_edge();
        let pert = square_well();
        let grid = pert.q_grid(&coeffs);
        let rhs = GridFn::from_fn(&grid, |x| Complex64::new((1.3 * x).cos(), 0.2 * x));
        // eps = 0: identity.
        let g0 = resolvent_correction(&coeffs, &e, &pert, 0.0, &rhs).unwrap();
        for i in 0..grid.len() {
            assert!((g0.values[i] - rhs.values[i]).norm() < 1e-12);
        }
        // First-order consistency under halving eps.
        let ctx = GapContext::on_grid(&coeffs, &e, &pert, grid.clone()).unwrap();
        let mut errs = Vec::new();
        for &eps in &[0.1, 0.05] {
            let g = ctx.a0_solve(eps, &rhs).unwrap();
            let u = ctx.green0.apply(&coeffs, &rhs).unwrap();
            let lu = pert.apply(&u).unwrap();
            let diff: Vec<Complex64> = (0..grid.len())
                .map(|i| g.values[i] - rhs.values[i] - eps * lu.values[i])
                .collect();
            errs.push(grid.norm(&diff));
        }
        assert!(errs[1] < 0.3 * errs[0], "{errs:?}");
    }

    #[test]
    fn functional_rank_one_closed_form_solution() {
        // A(eps,0) L phi has the closed form b * l(phi) / (1 - eps l(G0 b)).
        let (coeffs, e) = free_bottom_edge();
        let pert = LocalizedPerturbation::new(
            SupportInterval::enclosing(-1.0, 1.0).unwrap(),
            PerturbationKind::FunctionalRankOne {
                b: ComplexFn::real(&FnDescriptor::Cosine {
                    amp: 1.0,
                    freq: 0.25,
                    phase: 0.0,
                    offset: 0.2,
                })
                .unwrap(),
                l: Functional::Integral {
                    weight: ComplexFn::constant(c(1.0)),
                },
            },
        );
        let eps = 0.15;
        let ctx = GapContext::new(&coeffs, &e, &pert).unwrap();
        let lphi = ctx.l_phi().unwrap();
        let g = ctx.a0_solve(eps, &lphi).unwrap();

        // Oracle: evaluate the scalar geometric series directly.
        let grid = &ctx.grid;
        let bfun = GridFn::from_fn(grid, |x| {
            c((0.5 * std::f64::consts::PI * x).cos() + 0.2)
        });
        let l_of = |f: &GridFn| grid.integrate(&f.values);
        let l_phi_scalar = l_of(&ctx.phi);
        let g0b = ctx.green0.apply(&coeffs, &bfun).unwrap();
        let l_g0b = l_of(&g0b);
        let coef = l_phi_scalar / (1.0 - eps * l_g0b);
        for i in 0..grid.len() {
            let want = bfun.values[i] * coef;
            assert!(
                (g.values[i] - want).norm() < 1e-8,
                "node {i}: {} vs {want}",
                g.values[i]
            );
        }
    }

    #[test]
    fn criterion_side_selection_for_nonnegative_potential() {
        // Nonnegative multiplicative perturbation: eigenvalues emerge at the
        // top edges of gaps only, and flipping the sign swaps the verdicts.
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let mk = |sign: f64| {
            LocalizedPerturbation::new(
                SupportInterval::enclosing(-0.9, 0.9).unwrap(),
                PerturbationKind::Differential {
                    b2: None,
                    b1: None,
                    b0: ComplexFn::constant(c(sign)),
                },
            )
        };
        let eps = 0.05;
        for (n, side) in [(0, EdgeSide::Plus), (1, EdgeSide::Minus), (1, EdgeSide::Plus)] {
            let e = bs.edge(n, side).unwrap();
            let (pos, _) = existence_criterion(&coeffs, e, &mk(1.0), eps).unwrap();
            let (neg, _) = existence_criterion(&coeffs, e, &mk(-1.0), eps).unwrap();
            let want_pos = if side == EdgeSide::Plus {
                Existence::Yes
            } else {
                Existence::No
            };
            let want_neg = if side == EdgeSide::Plus {
                Existence::No
            } else {
                Existence::Yes
            };
            assert_eq!(pos, want_pos, "n={n} side={side:?} +");
            assert_eq!(neg, want_neg, "n={n} side={side:?} -");
        }
    }

    #[test]
    fn zero_perturbation_gives_indeterminate_and_zero_k() {
        let (coeffs, e) = free_bottom_edge();
        let pert = LocalizedPerturbation::new(
            SupportInterval::enclosing(-1.0, 1.0).unwrap(),
            PerturbationKind::Differential {
                b2: None,
                b1: None,
                b0: ComplexFn::constant(c(0.0)),
            },
        );
        let (verdict, value) = existence_criterion(&coeffs, &e, &pert, 0.1).unwrap();
        assert_eq!(verdict, Existence::Indeterminate);
        assert!(value.norm() < 1e-12);
        let k = solve_k_equation(&coeffs, &e, &pert, 0.1).unwrap();
        assert!(k.norm() < 1e-12);
    }

    #[test]
    fn exact_k_satisfies_shooting_relation() {
        // Free operator with an attractive square well of depth eps on
        // (-1, 1): the bound state obeys omega tan(omega) = k with
        // omega = sqrt(eps - k^2). Entirely independent of the k-equation.
        let (coeffs, e) = free_bottom_edge();
        let pert = square_well();
        let eps = 0.1;
        let k = solve_k_equation(&coeffs, &e, &pert, eps).unwrap();
        assert!(k.im.abs() < 1e-10);
        let k = k.re;
        let omega = (eps - k * k).sqrt();
        let shoot = omega * omega.tan() - k;
        assert!(shoot.abs() < 1e-9, "k = {k}, residual {shoot}");
    }

    #[test]
    fn exact_k_matches_expansion_to_third_order() {
        let (coeffs, e) = free_bottom_edge();
        let pert = square_well();
        let mut ratios = Vec::new();
        for &eps in &[0.1, 0.05, 0.025] {
            let kc = k_coefficients(&coeffs, &e, &pert, eps).unwrap();
            let k = solve_k_equation(&coeffs, &e, &pert, eps).unwrap();
            let err = (k - eps * kc.k1 - eps * eps * kc.k2).norm();
            ratios.push(err / (eps * eps * eps));
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max < 4.0 * min.max(1e-3), "{ratios:?}");
    }

    #[test]
    fn report_orders_agree_and_scale() {
        let (coeffs, e) = free_bottom_edge();
        let pert = square_well();
        let mut diffs = Vec::new();
        for &eps in &[0.1, 0.05] {
            let r = eigenvalue_asymptotics(&coeffs, &e, &pert, eps).unwrap();
            assert_eq!(r.exists, Existence::Yes);
            // (mu - lambda)/eps^2 -> k1^2 = 1.
            let scaled = (r.lambda_exact.unwrap() - e.mu).norm() / (eps * eps);
            assert!((scaled - 1.0).abs() < 0.2, "eps = {eps}: {scaled}");
            // lambda_order2 ~ -eps^2 (1 - 2 eps / 3)^2.
            let want = -eps * eps * (1.0 - 2.0 * eps / 3.0) * (1.0 - 2.0 * eps / 3.0);
            assert!((r.lambda_order2 - c(want)).norm() < 1e-8);
            diffs.push((r.lambda_from_series - r.lambda_order2).norm() / eps.powi(4));
        }
        // The two second-order forms differ by O(eps^4).
        assert!(diffs[1] < 4.0 * diffs[0].max(1e-6), "{diffs:?}");
        // Decay rate is kappa(k) ~ k at the free bottom edge.
        let r = eigenvalue_asymptotics(&coeffs, &e, &pert, 0.1).unwrap();
        let k = r.k_exact.unwrap();
        assert!((r.decay_rate.unwrap() - k.re).abs() < 1e-9);
    }

    #[test]
    fn eigenfunction_profile_decays_and_matches_first_order() {
        let coeffs = step_potential(10.0);
        let bs = find_band_edges(&coeffs, 120.0).unwrap();
        let e = bs.edge(1, EdgeSide::Plus).unwrap();
        let pert = LocalizedPerturbation::new(
            SupportInterval::enclosing(-0.9, 0.9).unwrap(),
            PerturbationKind::Differential {
                b2: None,
                b1: None,
                b0: ComplexFn::constant(c(1.0)),
            },
        );
        let eps = 0.08;
        let k = solve_k_equation(&coeffs, e, &pert, eps).unwrap();
        assert!(k.re > 0.0);
        let window = (-6.0, 6.0);
        let psi = eigenfunction_profile(&coeffs, e, &pert, eps, k, window).unwrap();
        let grid = &psi.grid;

        // Tail decay right of the support matches Re kappa within 2%.
        let (_, kappa) = band::edge_multiplier(&coeffs, e, k, 1e-11).unwrap();
        let probe = |x: f64| grid.interpolate(&psi.values, x).norm();
        for j in 0..2 {
            let x = 2.4 + j as f64;
            let ratio = probe(x + 1.0) / probe(x);
            let want = (-kappa.re).exp();
            assert!((ratio - want).abs() < 0.02 * want, "x = {x}: {ratio} vs {want}");
        }

        // psi - phi - eps G0 L phi shrinks like eps^2 on the window.
        let mut errs = Vec::new();
        for &ee in &[0.08, 0.04] {
            let kk = solve_k_equation(&coeffs, e, &pert, ee).unwrap();
            let pp = eigenfunction_profile(&coeffs, e, &pert, ee, kk, window).unwrap();
            let ctx = GapContext::on_grid(&coeffs, e, &pert, pp.grid.clone()).unwrap();
            let lphi = ctx.l_phi().unwrap();
            let g = ctx.green0.apply(&coeffs, &lphi).unwrap();
            let diff: Vec<Complex64> = (0..pp.grid.len())
                .map(|i| pp.values[i] - ctx.phi.values[i] - ee * g.values[i])
                .collect();
            errs.push(pp.grid.norm(&diff));
        }
        assert!(errs[1] < 0.35 * errs[0], "{errs:?}");

        // Residual of the full eigenvalue equation at sample points.
        let lambda = c(e.mu) + e.gap_direction() * k * k;
        let lpsi = pert.apply(&psi).unwrap();
        let h = 1e-5;
        for &x in &[-1.7, -0.4, 0.3, 1.9] {
            let dd = (grid.interpolate(psi.deriv().unwrap(), x + h)
                - grid.interpolate(psi.deriv().unwrap(), x - h))
                / (2.0 * h);
            let res = -dd + (coeffs.q.eval(x) - lambda) * grid.interpolate(&psi.values, x)
                - eps * grid.interpolate(&lpsi.values, x);
            assert!(res.norm() < 1e-6, "x = {x}: {res}");
        }
    }

    #[test]
    fn profile_requires_decaying_k() {
        let (coeffs, e) = free_bottom_edge();
        let pert = square_well();
        assert!(matches!(
            eigenfunction_profile(&coeffs, &e, &pert, 0.1, c(-0.05), (-3.0, 3.0)),
            Err(SpectralError::NonDecaying)
        ));
    }
}
