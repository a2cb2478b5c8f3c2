//! Scalar function descriptors: closed-form segments and cubic-interpolated samples.
//!
//! Used both for the 1-periodic coefficients and for perturbation data on Q.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpectralError};

/// A smooth real-valued function on an interval, described in a config-friendly way.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FnDescriptor {
    Constant {
        value: f64,
    },
    /// Coefficients in ascending powers of x (absolute coordinate).
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// amp * cos(2*pi*freq*x + phase) + offset
    Cosine {
        amp: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Smooth bump exp(-1/(1-t^2)) scaled to [center-width, center+width], zero outside.
    Bump {
        amp: f64,
        center: f64,
        width: f64,
    },
    /// Sampled values, cubic-interpolated. `xs` must be strictly increasing.
    Sampled {
        xs: Vec<f64>,
        ys: Vec<f64>,
    },
}

impl FnDescriptor {
    pub fn build(&self) -> Result<Evaluator> {
        match self {
            FnDescriptor::Constant { value } => Ok(Evaluator::Constant(*value)),
            FnDescriptor::Polynomial { coeffs } => {
                if coeffs.is_empty() {
                    return Err(SpectralError::InvalidInput(
                        "polynomial needs at least one coefficient".into(),
                    ));
                }
                Ok(Evaluator::Polynomial(coeffs.clone()))
            }
            FnDescriptor::Cosine {
                amp,
                freq,
                phase,
                offset,
            } => Ok(Evaluator::Cosine {
                amp: *amp,
                omega: 2.0 * std::f64::consts::PI * freq,
                phase: *phase,
                offset: *offset,
            }),
            FnDescriptor::Bump { amp, center, width } => {
                if *width <= 0.0 {
                    return Err(SpectralError::InvalidInput("bump width must be > 0".into()));
                }
                Ok(Evaluator::Bump {
                    amp: *amp,
                    center: *center,
                    width: *width,
                })
            }
            FnDescriptor::Sampled { xs, ys } => {
                let spline = CubicSpline::natural(xs, ys)?;
                Ok(Evaluator::Spline(spline))
            }
        }
    }
}

/// Compiled form of a [`FnDescriptor`].
#[derive(Debug, Clone)]
pub enum Evaluator {
    Constant(f64),
    Polynomial(Vec<f64>),
    Cosine {
        amp: f64,
        omega: f64,
        phase: f64,
        offset: f64,
    },
    Bump {
        amp: f64,
        center: f64,
        width: f64,
    },
    Spline(CubicSpline),
}

impl Evaluator {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Evaluator::Constant(c) => *c,
            Evaluator::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &a| acc * x + a),
            Evaluator::Cosine {
                amp,
                omega,
                phase,
                offset,
            } => amp * (omega * x + phase).cos() + offset,
            Evaluator::Bump { amp, center, width } => {
                let t = (x - center) / width;
                if t.abs() >= 1.0 {
                    0.0
                } else {
                    amp * (-1.0 / (1.0 - t * t)).exp()
                }
            }
            Evaluator::Spline(s) => s.eval(x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Evaluator::Constant(_) => 0.0,
            Evaluator::Polynomial(c) => {
                let mut acc = 0.0;
                for (i, &a) in c.iter().enumerate().skip(1).rev() {
                    acc = acc * x + a * i as f64;
                }
                acc
            }
            Evaluator::Cosine {
                amp, omega, phase, ..
            } => -amp * omega * (omega * x + phase).sin(),
            Evaluator::Bump { amp, center, width } => {
                let t = (x - center) / width;
                if t.abs() >= 1.0 {
                    0.0
                } else {
                    let d = 1.0 - t * t;
                    amp * (-1.0 / d).exp() * (-2.0 * t / (d * d)) / width
                }
            }
            Evaluator::Spline(s) => s.deriv(x),
        }
    }
}

/// Natural cubic spline on strictly increasing nodes.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the nodes.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(SpectralError::InvalidInput(
                "spline needs >= 2 matched samples".into(),
            ));
        }
        for w in xs.windows(2) {
            if w[1] <= w[0] {
                return Err(SpectralError::InvalidInput(
                    "spline abscissae must be strictly increasing".into(),
                ));
            }
        }
        // Tridiagonal solve for the second derivatives, natural end conditions.
        let mut m = vec![0.0; n];
        if n > 2 {
            let mut diag = vec![0.0; n - 2];
            let mut rhs = vec![0.0; n - 2];
            let mut sub = vec![0.0; n - 2];
            let mut sup = vec![0.0; n - 2];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                sub[i - 1] = h0;
                sup[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            // Thomas algorithm.
            for i in 1..n - 2 {
                let w = sub[i] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[n - 2] = rhs[n - 3] / diag[n - 3];
            for i in (1..n - 2).rev() {
                m[i] = (rhs[i - 1] - sup[i - 1] * m[i + 1]) / diag[i - 1];
            }
        }
        Ok(CubicSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    fn segment(&self, x: f64) -> usize {
        match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0
    }
}
