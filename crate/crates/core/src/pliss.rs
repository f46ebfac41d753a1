//! Hyperbolic times along finite sequences of center log-derivatives, and a
//! numeric check that such times carry contracting fiber intervals.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{SkewProductModel, Word};

/// Sequences up to this length are cross-checked against the quadratic scan
/// in debug builds.
const CROSS_CHECK_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlissSelection {
    pub lambda0: f64,
    pub lambda1: f64,
    /// Ascending indices `n` such that every window `a[n..=t']` has average
    /// at most `lambda1`.
    pub times: Vec<usize>,
}

impl PlissSelection {
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check_params(a: &[f64], lambda0: f64, lambda1: f64) -> Result<()> {
    if !(lambda0 < lambda1) {
        return Err(LabError::Parameter(format!(
            "need lambda0 < lambda1, got {lambda0} and {lambda1}"
        )));
    }
    if a.is_empty() {
        return Err(LabError::Parameter("empty sequence".into()));
    }
    Ok(())
}

/// All hyperbolic times of `a` for the threshold `lambda1`.
///
/// Runs in O(t) via the maximal suffix-window sum `R_n = b_n + max(0, R_{n+1})`
/// with `b = a - lambda1`; `n` is selected iff `R_n <= 0`.
pub fn pliss_times(a: &[f64], lambda0: f64, lambda1: f64) -> Result<PlissSelection> {
    check_params(a, lambda0, lambda1)?;
    let mut times = Vec::new();
    let mut running = f64::NEG_INFINITY;
    for n in (0..a.len()).rev() {
        let b = a[n] - lambda1;
        running = b + running.max(0.0);
        if running <= 0.0 {
            times.push(n);
        }
    }
    times.reverse();
    let selection = PlissSelection {
        lambda0,
        lambda1,
        times,
    };
    if cfg!(debug_assertions) && a.len() <= CROSS_CHECK_LEN {
        debug_assert_eq!(
            selection.times,
            pliss_times_quadratic(a, lambda0, lambda1)?.times,
            "fast path disagrees with window scan"
        );
    }
    Ok(selection)
}

/// Direct O(t²) evaluation of the window condition
/// `Σ_{j=n}^{t'} a_j <= (t' - n + 1) · lambda1` for all `t' >= n`.
pub fn pliss_times_quadratic(a: &[f64], lambda0: f64, lambda1: f64) -> Result<PlissSelection> {
    check_params(a, lambda0, lambda1)?;
    let times = (0..a.len())
        .filter(|&n| {
            let mut sum = 0.0;
            (n..a.len()).all(|t| {
                sum += a[t] - lambda1;
                sum <= 0.0
            })
        })
        .collect();
    Ok(PlissSelection {
        lambda0,
        lambda1,
        times,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContractionVerdict {
    Stable,
    NotContracting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `diameters[n]` is the arc length of the image of `[x - eps, x + eps]`
    /// after `n` steps, capped at 1.
    pub diameters: Vec<f64>,
    pub verdict: ContractionVerdict,
}

/// Iterate the fiber interval `[x - eps, x + eps]` along `word^∞` for
/// `n_steps` steps and decide whether it shrinks.
///
/// The verdict is stable when the final diameter is below a tenth of the
/// initial one and the diameters sampled at whole word periods are
/// non-increasing over the second half of the run.
pub fn verify_contraction(
    model: &SkewProductModel,
    word: &Word,
    x: f64,
    eps: f64,
    n_steps: usize,
) -> Result<ContractionReport> {
    model.check_word(word)?;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(LabError::Parameter(format!("eps must be in (0, 1/2), got {eps}")));
    }
    let syms = word.symbols();
    let (mut lo, mut hi) = (x - eps, x + eps);
    let mut diameters = Vec::with_capacity(n_steps + 1);
    diameters.push((hi - lo).min(1.0));
    for step in 0..n_steps {
        let f = model.map(syms[step % syms.len()]);
        lo = f.lift(lo);
        hi = f.lift(hi);
        let shift = lo.floor();
        lo -= shift;
        hi -= shift;
        if hi - lo >= 1.0 {
            // the image covers the circle; keep it from growing without bound
            hi = lo + 1.0;
        }
        diameters.push((hi - lo).clamp(0.0, 1.0));
    }

    let period = syms.len();
    let sampled: Vec<f64> = diameters.iter().step_by(period).copied().collect();
    let tail = &sampled[sampled.len() / 2..];
    let monotone = tail.windows(2).all(|p| p[1] <= p[0]);
    let shrunk = diameters[n_steps] < diameters[0] / 10.0;
    let verdict = if shrunk && monotone {
        ContractionVerdict::Stable
    } else {
        ContractionVerdict::NotContracting
    };
    Ok(ContractionReport { diameters, verdict })
}

/// Largest half-width (found by bisection on `(0, 1/2)`) for which
/// [`verify_contraction`] still reports a stable interval.
pub fn largest_contracting_eps(
    model: &SkewProductModel,
    word: &Word,
    x: f64,
    n_steps: usize,
) -> Result<Option<f64>> {
    let stable = |eps: f64| -> Result<bool> {
        Ok(verify_contraction(model, word, x, eps, n_steps)?.verdict == ContractionVerdict::Stable)
    };
    let mut lo = 1e-6;
    if !stable(lo)? {
        return Ok(None);
    }
    let mut hi = 0.5 - 1e-9;
    if stable(hi)? {
        return Ok(Some(hi));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// Reads a sequence from CSV: one value per record, optional header `value`.
pub fn read_sequence_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let Some(field) = rec.get(0) else { continue };
        let field = field.trim();
        if field.is_empty() || field == "value" {
            continue;
        }
        out.push(
            field
                .parse::<f64>()
                .map_err(|e| LabError::Parameter(format!("bad value {field:?}: {e}")))?,
        );
    }
    Ok(out)
}

pub fn write_sequence_csv<W: Write>(writer: W, a: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["value"])?;
    for v in a {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `index,value` rows for the selected times.
pub fn write_selection_csv<W: Write>(writer: W, a: &[f64], sel: &PlissSelection) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "value"])?;
    for &n in &sel.times {
        w.write_record([n.to_string(), a[n].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_selection_csv<R: Read>(reader: R) -> Result<Vec<usize>> {
    #[derive(Deserialize)]
    struct Row {
        index: usize,
    }
    csv::Reader::from_reader(reader)
        .deserialize::<Row>()
        .map(|r| r.map(|row| row.index).map_err(LabError::from))
        .collect()
}
