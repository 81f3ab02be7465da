//! Diagnostics for throughput curves: a rational-function fit of the
//! saturating throughput trend, and a dense-scan audit of how far
//! piecewise-linear interpolation on the sampled grid strays from a
//! reference curve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::compute::interpolate_throughput;
use crate::error::{Error, Result};
use crate::linalg::lstsq_min_norm;
use crate::types::ThroughputCurve;

const MAX_GN_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `d` fixed to 1.
    UnitConstant,
    /// `c` fixed to 1.
    UnitSlope,
}

/// `y = (a·x + b) / (c·x + d)` with a denominator positive over the fitted
/// range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationalFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub normalization: Normalization,
    pub rms_rel_err: f64,
}

impl RationalFit {
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) / (self.c * x + self.d)
    }

    fn from_free(p: [f64; 3], norm: Normalization) -> Self {
        let (a, b, c, d) = match norm {
            Normalization::UnitConstant => (p[0], p[1], p[2], 1.0),
            Normalization::UnitSlope => (p[0], p[1], 1.0, p[2]),
        };
        RationalFit {
            a,
            b,
            c,
            d,
            normalization: norm,
            rms_rel_err: f64::NAN,
        }
    }

    fn free(&self) -> [f64; 3] {
        match self.normalization {
            Normalization::UnitConstant => [self.a, self.b, self.c],
            Normalization::UnitSlope => [self.a, self.b, self.d],
        }
    }

    fn denominator_positive(&self, lo: f64, hi: f64) -> bool {
        self.c * lo + self.d > 0.0 && self.c * hi + self.d > 0.0
    }
}

fn rel_sse(fit: &RationalFit, samples: &[(f64, f64)]) -> f64 {
    samples
        .iter()
        .map(|(x, y)| {
            let r = fit.eval(*x) / y - 1.0;
            r * r
        })
        .sum()
}

fn linearized(samples: &[(f64, f64)], norm: Normalization) -> Option<RationalFit> {
    // y·(c·x + d) = a·x + b, rows divided by y so residuals are relative.
    let n = samples.len();
    let a = DMatrix::from_fn(n, 3, |i, j| {
        let (x, y) = samples[i];
        match (norm, j) {
            (_, 0) => x / y,
            (_, 1) => 1.0 / y,
            (Normalization::UnitConstant, _) => -x,
            (Normalization::UnitSlope, _) => -1.0,
        }
    });
    let rhs = DVector::from_iterator(
        n,
        samples.iter().map(|(x, _)| match norm {
            Normalization::UnitConstant => 1.0,
            Normalization::UnitSlope => *x,
        }),
    );
    let p = lstsq_min_norm(&a, &rhs)?;
    Some(RationalFit::from_free([p[0], p[1], p[2]], norm))
}

/// Gauss-Newton on relative residuals, with step halving that keeps the
/// denominator positive over `[lo, hi]`.
fn refine(mut fit: RationalFit, samples: &[(f64, f64)], lo: f64, hi: f64) -> RationalFit {
    let n = samples.len();
    let mut sse = rel_sse(&fit, samples);
    for _ in 0..MAX_GN_STEPS {
        let mut jac = DMatrix::zeros(n, 3);
        let mut res = DVector::zeros(n);
        for (i, &(x, y)) in samples.iter().enumerate() {
            let den = fit.c * x + fit.d;
            let f = (fit.a * x + fit.b) / den;
            res[i] = -(f / y - 1.0);
            jac[(i, 0)] = x / den / y;
            jac[(i, 1)] = 1.0 / den / y;
            jac[(i, 2)] = match fit.normalization {
                Normalization::UnitConstant => -x * f / den / y,
                Normalization::UnitSlope => -f / den / y,
            };
        }
        let Some(step) = lstsq_min_norm(&jac, &res) else {
            break;
        };
        let p = fit.free();
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = RationalFit::from_free(
                [
                    p[0] + scale * step[0],
                    p[1] + scale * step[1],
                    p[2] + scale * step[2],
                ],
                fit.normalization,
            );
            if cand.denominator_positive(lo, hi) {
                let cand_sse = rel_sse(&cand, samples);
                if cand_sse.is_finite() && cand_sse < sse {
                    let gain = sse - cand_sse;
                    fit = cand;
                    improved = gain > sse * 1e-15;
                    sse = cand_sse;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    fit
}

fn finish(mut fit: RationalFit, samples: &[(f64, f64)]) -> RationalFit {
    fit.rms_rel_err = (rel_sse(&fit, samples) / samples.len() as f64).sqrt();
    fit
}

/// Above this ratio of `c·x` to `d = 1` the constant term is numerically
/// irrelevant and the fit is reported with `c = 1` instead.
const D_NEGLIGIBLE: f64 = 1e8;

/// Fits `y = (a·x + b)/(c·x + d)` to positive samples: a linearized
/// least-squares start followed by Gauss-Newton refinement on relative
/// residuals.
pub fn fit_rational(samples: &[(f64, f64)]) -> Result<RationalFit> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData {
            got: samples.len(),
            need: 4,
        });
    }
    if samples
        .iter()
        .any(|(x, y)| !x.is_finite() || !(y.is_finite() && *y > 0.0))
    {
        return Err(Error::invalid(
            "rational fit",
            "samples need finite x and positive y",
        ));
    }
    let mut sorted: Vec<(f64, f64)> = samples.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::SingularSystem("duplicate x values".into()));
    }
    let lo = sorted[0].0;
    let hi = sorted[sorted.len() - 1].0;

    let unit_constant = fit_normalized(&sorted, Normalization::UnitConstant, lo, hi);
    let unit_slope = fit_normalized(&sorted, Normalization::UnitSlope, lo, hi);
    let fit = match (unit_constant, unit_slope) {
        (Ok(dc), Ok(sl)) => {
            let (e_dc, e_sl) = (rel_sse(&dc, &sorted), rel_sse(&sl, &sorted));
            // d = 1 unless the data needs d -> 0, which that form can only
            // approach with c -> infinity.
            let d_negligible = dc.c.abs() * lo.abs().max(hi.abs()) > D_NEGLIGIBLE;
            if d_negligible || (e_dc > 1e-24 && e_sl < 0.5 * e_dc) {
                sl
            } else {
                dc
            }
        }
        (Ok(f), Err(_)) | (Err(_), Ok(f)) => f,
        (Err(e), Err(_)) => return Err(e),
    };
    if !(fit.a.is_finite() && fit.b.is_finite() && fit.c.is_finite() && fit.d.is_finite()) {
        return Err(Error::SingularSystem("non-finite coefficients".into()));
    }
    Ok(finish(fit, &sorted))
}

fn fit_normalized(
    sorted: &[(f64, f64)],
    norm: Normalization,
    lo: f64,
    hi: f64,
) -> Result<RationalFit> {
    let mut start =
        linearized(sorted, norm).ok_or_else(|| Error::SingularSystem("linearized system".into()))?;
    if !start.denominator_positive(lo, hi) {
        let (den_lo, den_hi) = (start.c * lo + start.d, start.c * hi + start.d);
        if den_lo < 0.0 && den_hi < 0.0 {
            // Negative throughout: same function, other normalization.
            start = match start.normalization {
                Normalization::UnitConstant => RationalFit::from_free(
                    [start.a / start.c, start.b / start.c, start.d / start.c],
                    Normalization::UnitSlope,
                ),
                Normalization::UnitSlope => RationalFit::from_free(
                    [start.a / start.d, start.b / start.d, start.c / start.d],
                    Normalization::UnitConstant,
                ),
            };
        } else {
            // Pole inside the range. Restart from the affine fit and keep it
            // only if a pole-free rational explains the data as well.
            let pole_sse = rel_sse(&start, sorted);
            let (a, b) = linearized_affine(sorted)
                .ok_or_else(|| Error::SingularSystem("affine start".into()))?;
            let affine = RationalFit::from_free([a, b, 0.0], Normalization::UnitConstant);
            let refined = refine(affine, sorted, lo, hi);
            if rel_sse(&refined, sorted) > pole_sse {
                return Err(Error::PoleInRange { lo, hi });
            }
            return Ok(refined);
        }
    }
    Ok(refine(start, sorted, lo, hi))
}

fn linearized_affine(samples: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = samples.len();
    let a = DMatrix::from_fn(n, 2, |i, j| {
        let (x, y) = samples[i];
        if j == 0 {
            x / y
        } else {
            1.0 / y
        }
    });
    let rhs = DVector::from_element(n, 1.0);
    let p = lstsq_min_norm(&a, &rhs)?;
    Some((p[0], p[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalError {
    pub lo: u64,
    pub hi: u64,
    pub max_rel_err: f64,
    pub argmax_dim: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridErrorReport {
    pub max_rel_err: f64,
    pub argmax_dim: u64,
    pub intervals: Vec<IntervalError>,
}

/// Scans `[min sample, ref_dim_value]` every `stride` dims (both end points
/// of every interval always included) and compares the curve's
/// piecewise-linear throughput with `oracle`.
pub fn grid_error_report_strided(
    curve: &ThroughputCurve,
    oracle: impl Fn(u64) -> f64,
    stride: u64,
) -> GridErrorReport {
    let stride = stride.max(1);
    let mut intervals = Vec::with_capacity(curve.samples.len() - 1);
    for w in curve.samples.windows(2) {
        let (lo, hi) = (w[0].dim_value, w[1].dim_value);
        let mut worst = IntervalError {
            lo,
            hi,
            max_rel_err: 0.0,
            argmax_dim: lo,
        };
        let mut dim = lo;
        loop {
            let truth = oracle(dim);
            let (interp, _) = interpolate_throughput(curve, dim);
            let err = ((interp - truth) / truth).abs();
            if err > worst.max_rel_err {
                worst.max_rel_err = err;
                worst.argmax_dim = dim;
            }
            if dim == hi {
                break;
            }
            dim = (dim + stride).min(hi);
        }
        intervals.push(worst);
    }
    let top = intervals
        .iter()
        .fold(None::<&IntervalError>, |best, iv| match best {
            Some(b) if b.max_rel_err >= iv.max_rel_err => Some(b),
            _ => Some(iv),
        })
        .expect("curves have at least one interval");
    GridErrorReport {
        max_rel_err: top.max_rel_err,
        argmax_dim: top.argmax_dim,
        intervals,
    }
}

/// Dense scan at every integer dimension.
pub fn grid_error_report(curve: &ThroughputCurve, oracle: impl Fn(u64) -> f64) -> GridErrorReport {
    grid_error_report_strided(curve, oracle, 1)
}
