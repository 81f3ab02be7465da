//! Error reports in the layout of the evaluation figures: signed relative
//! errors, per-bin maxima over an input axis, and a 5%-bucket histogram.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;
pub const HISTOGRAM_BUCKETS: usize = 20;
pub const HISTOGRAM_WIDTH: f64 = 0.05;

/// `(predicted − measured) / measured`.
pub fn relative_error(measured_us: f64, predicted_us: f64) -> Result<f64> {
    if !measured_us.is_finite() || measured_us <= 0.0 {
        return Err(Error::ZeroMeasured(measured_us));
    }
    Ok((predicted_us - measured_us) / measured_us)
}

/// One measured case as read from disk. `axis` defaults to the measured
/// latency when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub measured_us: f64,
    pub predicted_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub case_id: String,
    pub measured_us: f64,
    pub predicted_us: f64,
    pub signed_rel_err: f64,
    pub axis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub records: Vec<ErrorRecord>,
    pub mean_abs_rel_err: f64,
    pub axis_min: f64,
    pub axis_max: f64,
    /// Max |error| per equal-width bin; `None` for empty bins.
    pub binned_max: Vec<Option<f64>>,
    /// Counts of |error| in 5%-wide buckets; the last bucket is `>= 95%`.
    pub histogram: Vec<u64>,
}

/// Bin of `x` among `bins` equal-width bins over `[lo, hi]`. The top edge
/// belongs to the last bin; a zero-width range puts everything in bin 0.
pub fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let t = ((x - lo) / (hi - lo) * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

pub fn histogram_bucket(abs_err: f64) -> usize {
    ((abs_err / HISTOGRAM_WIDTH).floor() as usize).min(HISTOGRAM_BUCKETS - 1)
}

pub fn build_error_report(
    cases: &[Case],
    axis: impl Fn(&Case) -> f64,
    bins: usize,
) -> Result<ErrorReport> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("error report needs at least one case".into()));
    }
    if bins == 0 {
        return Err(Error::invalid("error report", "bins must be >= 1"));
    }
    let mut records = Vec::with_capacity(cases.len());
    for (i, c) in cases.iter().enumerate() {
        let x = axis(c);
        if !x.is_finite() {
            return Err(Error::invalid(
                format!("case {i} ({})", c.case_id),
                "axis value is not finite",
            ));
        }
        let e = relative_error(c.measured_us, c.predicted_us).map_err(|e| {
            Error::invalid(format!("case {i} ({})", c.case_id), e.to_string())
        })?;
        records.push(ErrorRecord {
            case_id: c.case_id.clone(),
            measured_us: c.measured_us,
            predicted_us: c.predicted_us,
            signed_rel_err: e,
            axis: x,
        });
    }
    let lo = records.iter().map(|r| r.axis).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.axis).fold(f64::NEG_INFINITY, f64::max);
    let mut binned_max: Vec<Option<f64>> = vec![None; bins];
    let mut histogram = vec![0u64; HISTOGRAM_BUCKETS];
    let mut abs_sum = 0.0;
    for r in &records {
        let a = r.signed_rel_err.abs();
        abs_sum += a;
        let slot = &mut binned_max[bin_index(r.axis, lo, hi, bins)];
        *slot = Some(slot.map_or(a, |m| m.max(a)));
        histogram[histogram_bucket(a)] += 1;
    }
    Ok(ErrorReport {
        mean_abs_rel_err: abs_sum / records.len() as f64,
        records,
        axis_min: lo,
        axis_max: hi,
        binned_max,
        histogram,
    })
}

/// Default axis: the case's own `axis` value, else its measured latency.
pub fn case_axis(c: &Case) -> f64 {
    c.axis.unwrap_or(c.measured_us)
}

impl ErrorReport {
    /// `case_id,measured_us,predicted_us,rel_err` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::invalid("csv", e.to_string());
        w.write_record(["case_id", "measured_us", "predicted_us", "rel_err"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.case_id.clone(),
                r.measured_us.to_string(),
                r.predicted_us.to_string(),
                r.signed_rel_err.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid("csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
