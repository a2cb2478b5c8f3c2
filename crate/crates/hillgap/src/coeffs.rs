//! 1-periodic operator coefficients (p, q) with breakpoint structure.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpectralError};
use crate::func::{Evaluator, FnDescriptor};

/// One smooth piece of a 1-periodic function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentDescriptor {
    /// Left endpoint of the segment, in [0, 1).
    pub start: f64,
    #[serde(flatten)]
    pub f: FnDescriptor,
}

/// A 1-periodic piecewise-smooth real function.
///
/// Segment `i` covers `[breakpoints[i], breakpoints[i+1])`, the last segment
/// wrapping around to `breakpoints[0] + 1`. Evaluation reduces x mod 1.
#[derive(Debug, Clone)]
pub struct PiecewisePeriodicFn {
    breakpoints: Vec<f64>,
    segments: Vec<Evaluator>,
}

impl PiecewisePeriodicFn {
    pub fn new(descriptors: &[SegmentDescriptor]) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(SpectralError::InvalidInput(
                "periodic function needs at least one segment".into(),
            ));
        }
        let mut breakpoints = Vec::with_capacity(descriptors.len());
        let mut segments = Vec::with_capacity(descriptors.len());
        for d in descriptors {
            if !(0.0..1.0).contains(&d.start) {
                return Err(SpectralError::InvalidInput(format!(
                    "segment start {} outside [0, 1)",
                    d.start
                )));
            }
            if let Some(&last) = breakpoints.last() {
                if d.start <= last {
                    return Err(SpectralError::InvalidInput(
                        "segment starts must be strictly increasing".into(),
                    ));
                }
            }
            breakpoints.push(d.start);
            segments.push(d.f.build()?);
        }
        if breakpoints[0] != 0.0 {
            return Err(SpectralError::InvalidInput(
                "first segment must start at 0".into(),
            ));
        }
        Ok(PiecewisePeriodicFn {
            breakpoints,
            segments,
        })
    }

    pub fn constant(value: f64) -> Self {
        PiecewisePeriodicFn {
            breakpoints: vec![0.0],
            segments: vec![Evaluator::Constant(value)],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    fn reduce(&self, x: f64) -> (f64, usize) {
        let t = x - x.floor();
        let idx = match self
            .breakpoints
            .binary_search_by(|v| v.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (t, idx)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (t, i) = self.reduce(x);
        self.segments[i].eval(t)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let (t, i) = self.reduce(x);
        self.segments[i].deriv(t)
    }

    /// All breakpoint images `b + m` (m integer) inside `[lo, hi]`, sorted.
    pub fn breakpoint_images(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let m0 = lo.floor() as i64;
        let m1 = hi.ceil() as i64;
        for m in m0..=m1 {
            for &b in &self.breakpoints {
                let x = b + m as f64;
                if x >= lo && x <= hi {
                    out.push(x);
                }
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }
}

/// The 1-periodic coefficient pair of the operator -(p u')' + q u.
#[derive(Debug, Clone)]
pub struct OperatorCoefficients {
    pub p: PiecewisePeriodicFn,
    pub q: PiecewisePeriodicFn,
    /// Sampled lower bound of p; must stay strictly positive.
    pub p_floor: f64,
}

impl OperatorCoefficients {
    pub fn new(p: PiecewisePeriodicFn, q: PiecewisePeriodicFn) -> Result<Self> {
        let p0 = p.eval(0.0);
        if (p0 - 1.0).abs() > 1e-12 {
            return Err(SpectralError::PNotNormalized { value: p0 });
        }
        let mut p_floor = f64::INFINITY;
        let n = 4096;
        for i in 0..n {
            let x = i as f64 / n as f64;
            let v = p.eval(x);
            if v <= 0.0 {
                return Err(SpectralError::NonPositiveP { x, value: v });
            }
            p_floor = p_floor.min(v);
        }
        // p must be continuous across the seam and at breakpoints; q may jump.
        let eps = 1e-9;
        for &b in p.breakpoints() {
            let left = p.eval(if b == 0.0 { 1.0 - eps } else { b - eps });
            let right = p.eval(b + eps);
            if (left - right).abs() > 1e-6 {
                return Err(SpectralError::InvalidInput(format!(
                    "p is discontinuous at breakpoint {b}: {left} vs {right}"
                )));
            }
        }
        Ok(OperatorCoefficients { p, q, p_floor })
    }

    /// Free operator: p = 1, q = 0.
    pub fn free() -> Self {
        OperatorCoefficients {
            p: PiecewisePeriodicFn::constant(1.0),
            q: PiecewisePeriodicFn::constant(0.0),
            p_floor: 1.0,
        }
    }

    /// p = 1 with an arbitrary periodic potential.
    pub fn with_potential(q: PiecewisePeriodicFn) -> Self {
        OperatorCoefficients {
            p: PiecewisePeriodicFn::constant(1.0),
            q,
            p_floor: 1.0,
        }
    }

    /// Breakpoint images of both coefficients inside `[lo, hi]`.
    pub fn breakpoint_images(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut v = self.p.breakpoint_images(lo, hi);
        v.extend(self.q.breakpoint_images(lo, hi));
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        v
    }

    /// Sampled minimum of q over one period.
    pub fn q_min(&self) -> f64 {
        let n = 2048;
        (0..n)
            .map(|i| self.q.eval(i as f64 / n as f64))
            .fold(f64::INFINITY, f64::min)
    }
}
