//! Deterministic CSV and text output.
//!
//! Every number is written in scientific notation with 17 significant digits
//! so that identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::band::{BandStructure, EdgeSide};
use crate::coeffs::OperatorCoefficients;
use crate::error::{Result, SpectralError};
use crate::gap::{Existence, GapEigenvalueReport};
use crate::ode;
use crate::oracle::ConvergenceStudy;
use crate::quad::GridFn;

/// 17 significant digits, locale-independent.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_c(z: Complex64) -> String {
    format!("{},{}", fmt(z.re), fmt(z.im))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| SpectralError::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

/// Discriminant samples over [lo, hi]: lambda, Re D, Im D, in_band.
pub fn band_diagram_csv(
    coeffs: &OperatorCoefficients,
    bands: &BandStructure,
    lo: f64,
    hi: f64,
    samples: usize,
    tol: f64,
) -> Result<String> {
    let mut out = String::from("lambda,re_d,im_d,in_band\n");
    let n = samples.max(2);
    for i in 0..n {
        let lambda = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let d = ode::discriminant(coeffs, Complex64::new(lambda, 0.0), tol)?;
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt(lambda),
            fmt(d.re),
            fmt(d.im),
            u8::from(bands.in_band(lambda))
        );
    }
    Ok(out)
}

/// Edge table: gap index, side, mu, parity, d2D/dlambda2-slope data.
pub fn edge_table_csv(bands: &BandStructure) -> String {
    let mut out = String::from("n,side,mu,ddot,degenerate\n");
    for e in &bands.edges {
        let side = match e.side {
            EdgeSide::Minus => "-",
            EdgeSide::Plus => "+",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.n,
            side,
            fmt(e.mu),
            fmt(e.ddot),
            u8::from(e.degenerate)
        );
    }
    out
}

fn existence_str(e: Existence) -> &'static str {
    match e {
        Existence::Yes => "yes",
        Existence::No => "no",
        Existence::Indeterminate => "indeterminate",
    }
}

/// One gap-eigenvalue report as a key,value CSV.
pub fn gap_report_csv(r: &GapEigenvalueReport) -> String {
    let mut out = String::from("key,re,im\n");
    let mut row = |k: &str, z: Complex64| {
        let _ = writeln!(out, "{k},{}", fmt_c(z));
    };
    row("mu", Complex64::new(r.edge.mu, 0.0));
    row("epsilon", Complex64::new(r.epsilon, 0.0));
    row("criterion", r.criterion_value);
    row("k1", r.coefficients.k1);
    row("k2", r.coefficients.k2);
    row("lambda_order1", r.lambda_order1);
    row("lambda_order2", r.lambda_order2);
    row("lambda_series", r.lambda_from_series);
    if let Some(k) = r.k_exact {
        row("k_exact", k);
    }
    if let Some(l) = r.lambda_exact {
        row("lambda_exact", l);
    }
    if let Some(d) = r.decay_rate {
        row("decay_rate", Complex64::new(d, 0.0));
    }
    let _ = writeln!(out, "exists,{},", existence_str(r.exists));
    let _ = writeln!(out, "exists_order2,{},", existence_str(r.exists_order2));
    out
}

/// Sampled function: x, re, im (+ derivative channel when present).
pub fn function_csv(f: &GridFn) -> String {
    let with_deriv = f.deriv.is_some();
    let mut out = String::from(if with_deriv {
        "x,re,im,re_d,im_d\n"
    } else {
        "x,re,im\n"
    });
    for (i, &x) in f.grid.nodes().iter().enumerate() {
        let v = f.values[i];
        if let Some(d) = &f.deriv {
            let _ = writeln!(out, "{},{},{}", fmt(x), fmt_c(v), fmt_c(d[i]));
        } else {
            let _ = writeln!(out, "{},{}", fmt(x), fmt_c(v));
        }
    }
    out
}

/// Oracle convergence table: R, h, Re lambda, Im lambda, residual.
pub fn convergence_csv(study: &ConvergenceStudy) -> String {
    let mut out = String::from("r,h,re_lambda,im_lambda,residual\n");
    for row in &study.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt(row.r),
            fmt(row.h),
            fmt_c(row.lambda),
            fmt(row.residual)
        );
    }
    let _ = writeln!(
        out,
        "extrapolated,,{},{}",
        fmt_c(study.extrapolated),
        fmt(study.observed_order)
    );
    out
}

/// Dump a 2d kernel back out in the x,t,re,im sample format.
pub fn kernel_csv(k: &crate::perturbation::Kernel2d) -> String {
    let mut out = String::from("x,t,re,im\n");
    for (i, &x) in k.xs.iter().enumerate() {
        for (j, &t) in k.ts.iter().enumerate() {
            let v = k.vals[i * k.ts.len() + j];
            let _ = writeln!(out, "{},{},{},{}", fmt(x), fmt(t), fmt(v.re), fmt(v.im));
        }
    }
    out
}
