//! Problem descriptions loaded from TOML, plus the CSV kernel format.
//!
//! A config has four sections: `[coefficients]` (periodic p and q),
//! `[perturbation]` (support Q and the perturbation variant), `[run]`
//! (epsilon list, edge selection, spectral ceiling), and `[oracle]`
//! (truncation radius and step for the finite-difference cross-check).

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use crate::coeffs::{OperatorCoefficients, PiecewisePeriodicFn, SegmentDescriptor};
use crate::error::{Result, SpectralError};
use crate::func::FnDescriptor;
use crate::perturbation::{
    ComplexFn, Functional, Kernel2d, LocalizedPerturbation, PerturbationKind, SupportInterval,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub coefficients: CoefficientsConfig,
    pub perturbation: Option<PerturbationConfig>,
    pub run: RunConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    /// Segments of the 1-periodic p; omitted means p = 1.
    pub p: Option<Vec<SegmentDescriptor>>,
    /// Segments of the 1-periodic q; omitted means q = 0.
    pub q: Option<Vec<SegmentDescriptor>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PerturbationConfig {
    pub q_lo: f64,
    pub q_hi: f64,
    #[serde(flatten)]
    pub descriptor: PerturbationDescriptor,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PerturbationDescriptor {
    /// Multiplication by b0 (optionally complex), restricted to Q.
    Potential {
        b0: FnDescriptor,
        b0_im: Option<FnDescriptor>,
    },
    /// b2 u'' + b1 u' + b0 u on Q.
    Differential {
        b0: Option<FnDescriptor>,
        b0_im: Option<FnDescriptor>,
        b1: Option<FnDescriptor>,
        b1_im: Option<FnDescriptor>,
        b2: Option<FnDescriptor>,
        b2_im: Option<FnDescriptor>,
    },
    /// Integral operator with a kernel sampled in a CSV file (x,t,re,im).
    IntegralKernel { kernel_csv: PathBuf },
    /// beta * conj(b(x)) * \int_Q b u.
    RankOne {
        beta_re: f64,
        #[serde(default)]
        beta_im: f64,
        b: FnDescriptor,
        b_im: Option<FnDescriptor>,
    },
    /// b(x) * l(u) for a point/derivative/integral functional l.
    Functional {
        b: FnDescriptor,
        b_im: Option<FnDescriptor>,
        functional: FunctionalConfig,
    },
    /// The compactly-supported construction with an eigenvalue embedded in
    /// the continuous spectrum; Q is fixed to (-2*pi, 2*pi).
    Embedded { alpha: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionalConfig {
    PointValue {
        x: f64,
    },
    PointDerivative {
        x: f64,
    },
    DerivativeDifference {
        a: f64,
        b: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Integral {
        weight: FnDescriptor,
        weight_im: Option<FnDescriptor>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epsilons: Vec<f64>,
    /// Scan bands and edges up to this spectral parameter.
    pub lambda_max: f64,
    /// "all", or explicit entries like ["0+", "1-"].
    #[serde(default)]
    pub edges: EdgeSelection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EdgeSelection {
    All(String),
    List(Vec<String>),
}

impl Default for EdgeSelection {
    fn default() -> Self {
        EdgeSelection::All("all".into())
    }
}

impl EdgeSelection {
    /// Parsed (gap index, is_upper_edge) pairs, or None for "all".
    pub fn parsed(&self) -> Result<Option<Vec<(usize, bool)>>> {
        match self {
            EdgeSelection::All(s) if s == "all" => Ok(None),
            EdgeSelection::All(s) => Err(SpectralError::InvalidInput(format!(
                "edge selection must be \"all\" or a list, got {s:?}"
            ))),
            EdgeSelection::List(items) => {
                let mut out = Vec::new();
                for item in items {
                    let (num, side) = item.split_at(item.len().saturating_sub(1));
                    let n: usize = num.parse().map_err(|_| {
                        SpectralError::InvalidInput(format!("bad edge selector {item:?}"))
                    })?;
                    let upper = match side {
                        "+" => true,
                        "-" => false,
                        _ => {
                            return Err(SpectralError::InvalidInput(format!(
                                "edge selector {item:?} must end in + or -"
                            )))
                        }
                    };
                    out.push((n, upper));
                }
                Ok(Some(out))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Truncation half-width; derived from the expected decay rate if absent.
    pub r: Option<f64>,
    /// Grid step.
    pub h: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            r: None,
            h: 1.0 / 64.0,
        }
    }
}

/// A parsed and validated problem, ready to run.
pub struct LoadedProblem {
    pub config: ProblemConfig,
    pub coeffs: OperatorCoefficients,
    pub perturbation: Option<LocalizedPerturbation>,
}

impl ProblemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| SpectralError::InvalidInput(format!("config parse error: {e}")))
    }
}

pub fn load(path: &Path) -> Result<LoadedProblem> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpectralError::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let config = ProblemConfig::from_toml_str(&text)?;
    realize(config, path.parent().unwrap_or(Path::new(".")))
}

/// Build the validated operator and perturbation from a parsed config.
/// `base_dir` anchors relative paths (the kernel CSV).
pub fn realize(config: ProblemConfig, base_dir: &Path) -> Result<LoadedProblem> {
    let p = match &config.coefficients.p {
        Some(segs) => PiecewisePeriodicFn::new(segs)?,
        None => PiecewisePeriodicFn::constant(1.0),
    };
    let q = match &config.coefficients.q {
        Some(segs) => PiecewisePeriodicFn::new(segs)?,
        None => PiecewisePeriodicFn::constant(0.0),
    };
    // The flux normalization p(0) = 1 is checked here so a config error is
    // reported at load time rather than deep in the band scan.
    let coeffs = OperatorCoefficients::new(p, q)?;

    if !config.run.epsilons.iter().all(|&e| e.is_finite() && e >= 0.0) {
        return Err(SpectralError::InvalidInput(
            "epsilons must be finite and nonnegative".into(),
        ));
    }
    if !config.run.lambda_max.is_finite() {
        return Err(SpectralError::InvalidInput("lambda_max must be finite".into()));
    }
    config.run.edges.parsed()?;
    if !(config.oracle.h.is_finite() && config.oracle.h > 0.0) {
        return Err(SpectralError::InvalidInput("oracle step must be positive".into()));
    }

    let perturbation = match &config.perturbation {
        None => None,
        // The embedded construction depends on epsilon and is built per run.
        Some(PerturbationConfig {
            descriptor: PerturbationDescriptor::Embedded { alpha },
            ..
        }) => {
            if *alpha < 2.0 {
                return Err(SpectralError::InvalidInput(
                    "embedded construction needs alpha >= 2".into(),
                ));
            }
            None
        }
        Some(pc) => Some(build_perturbation(pc, base_dir)?),
    };
    Ok(LoadedProblem {
        config,
        coeffs,
        perturbation,
    })
}

fn complex_fn(re: &FnDescriptor, im: Option<&FnDescriptor>) -> Result<ComplexFn> {
    ComplexFn::new(re, im)
}

fn optional_complex_fn(
    re: Option<&FnDescriptor>,
    im: Option<&FnDescriptor>,
) -> Result<Option<ComplexFn>> {
    match (re, im) {
        (None, None) => Ok(None),
        (Some(r), i) => Ok(Some(ComplexFn::new(r, i)?)),
        (None, Some(i)) => Ok(Some(ComplexFn::new(&FnDescriptor::Constant { value: 0.0 }, Some(i))?)),
    }
}

fn build_perturbation(pc: &PerturbationConfig, base_dir: &Path) -> Result<LocalizedPerturbation> {
    let support = SupportInterval::enclosing(pc.q_lo, pc.q_hi)?;
    let kind = match &pc.descriptor {
        PerturbationDescriptor::Potential { b0, b0_im } => PerturbationKind::Differential {
            b2: None,
            b1: None,
            b0: complex_fn(b0, b0_im.as_ref())?,
        },
        PerturbationDescriptor::Differential {
            b0,
            b0_im,
            b1,
            b1_im,
            b2,
            b2_im,
        } => {
            let b0 = optional_complex_fn(b0.as_ref(), b0_im.as_ref())?
                .unwrap_or_else(|| ComplexFn::constant(Complex64::default()));
            PerturbationKind::Differential {
                b2: optional_complex_fn(b2.as_ref(), b2_im.as_ref())?,
                b1: optional_complex_fn(b1.as_ref(), b1_im.as_ref())?,
                b0,
            }
        }
        PerturbationDescriptor::IntegralKernel { kernel_csv } => {
            let path = if kernel_csv.is_absolute() {
                kernel_csv.clone()
            } else {
                base_dir.join(kernel_csv)
            };
            let text = std::fs::read_to_string(&path).map_err(|e| {
                SpectralError::InvalidInput(format!("cannot read {}: {e}", path.display()))
            })?;
            PerturbationKind::IntegralKernel {
                kernel: parse_kernel_csv(&text)?,
            }
        }
        PerturbationDescriptor::RankOne {
            beta_re,
            beta_im,
            b,
            b_im,
        } => PerturbationKind::RankOneKernel {
            beta: Complex64::new(*beta_re, *beta_im),
            b: complex_fn(b, b_im.as_ref())?,
        },
        PerturbationDescriptor::Functional { b, b_im, functional } => {
            let l = match functional {
                FunctionalConfig::PointValue { x } => Functional::PointValue { x: *x },
                FunctionalConfig::PointDerivative { x } => Functional::PointDerivative { x: *x },
                FunctionalConfig::DerivativeDifference { a, b, scale } => {
                    Functional::DerivativeDifference {
                        a: *a,
                        b: *b,
                        scale: *scale,
                    }
                }
                FunctionalConfig::Integral { weight, weight_im } => Functional::Integral {
                    weight: complex_fn(weight, weight_im.as_ref())?,
                },
            };
            PerturbationKind::FunctionalRankOne {
                b: complex_fn(b, b_im.as_ref())?,
                l,
            }
        }
        PerturbationDescriptor::Embedded { .. } => unreachable!("handled in realize"),
    };
    Ok(LocalizedPerturbation::new(support, kind))
}

impl LoadedProblem {
    /// The embedded construction depends on epsilon; build it on demand.
    pub fn embedded_for(&self, epsilon: f64) -> Result<Option<LocalizedPerturbation>> {
        match &self.config.perturbation {
            Some(PerturbationConfig {
                descriptor: PerturbationDescriptor::Embedded { alpha },
                ..
            }) => Ok(Some(LocalizedPerturbation::embedded(*alpha, epsilon)?)),
            _ => Ok(None),
        }
    }

    pub fn is_embedded(&self) -> bool {
        matches!(
            self.config.perturbation,
            Some(PerturbationConfig {
                descriptor: PerturbationDescriptor::Embedded { .. },
                ..
            })
        )
    }

    /// The fixed (non-embedded) perturbation, if any.
    pub fn fixed_perturbation(&self) -> Option<&LocalizedPerturbation> {
        self.perturbation.as_ref()
    }
}

/// Parse a kernel sample table: header `x,t,re,im`, one sample per line, laid
/// out as the full tensor grid of its distinct x and t values.
pub fn parse_kernel_csv(text: &str) -> Result<Kernel2d> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i, l),
            None => return Err(SpectralError::InvalidInput("empty kernel CSV".into())),
        }
    };
    let cols: Vec<&str> = header.1.split(',').map(str::trim).collect();
    if cols != ["x", "t", "re", "im"] {
        return Err(SpectralError::InvalidInput(format!(
            "kernel CSV header must be x,t,re,im (line {})",
            header.0 + 1
        )));
    }
    let mut rows: Vec<(f64, f64, Complex64)> = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(SpectralError::InvalidInput(format!(
                "kernel CSV line {} has {} fields, expected 4",
                i + 1,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 4];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f.parse().map_err(|_| {
                SpectralError::InvalidInput(format!(
                    "kernel CSV line {}: bad number {f:?}",
                    i + 1
                ))
            })?;
            if !vals[k].is_finite() {
                return Err(SpectralError::InvalidInput(format!(
                    "kernel CSV line {}: non-finite value",
                    i + 1
                )));
            }
        }
        rows.push((vals[0], vals[1], Complex64::new(vals[2], vals[3])));
    }
    let mut xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut ts: Vec<f64> = rows.iter().map(|r| r.1).collect();
    for v in [&mut xs, &mut ts] {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| *a == *b);
    }
    if xs.len() < 2 || ts.len() < 2 {
        return Err(SpectralError::InvalidInput(
            "kernel CSV needs at least a 2x2 grid".into(),
        ));
    }
    if rows.len() != xs.len() * ts.len() {
        return Err(SpectralError::InvalidInput(format!(
            "kernel CSV has {} samples but the grid is {}x{}",
            rows.len(),
            xs.len(),
            ts.len()
        )));
    }
    let mut vals = vec![Complex64::default(); xs.len() * ts.len()];
    let mut seen = vec![false; vals.len()];
    for (x, t, v) in rows {
        let i = xs.partition_point(|&a| a < x);
        let j = ts.partition_point(|&a| a < t);
        let idx = i * ts.len() + j;
        if seen[idx] {
            return Err(SpectralError::InvalidInput(format!(
                "kernel CSV repeats the sample at ({x}, {t})"
            )));
        }
        seen[idx] = true;
        vals[idx] = v;
    }
    Kernel2d::new(xs, ts, vals)
}
