//! The set of central exponents of periodic orbits, its gaps, and exponent
//! pairs for products of two fiber families.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{SkewProductModel, Word};
use crate::orbits::{
    enumerate_periodic_orbits, find_fiber_fixed_points, lyndon_words, OrbitSummary,
    PeriodicOrbit,
};

/// Share of the span trimmed at each end before looking for gaps.
pub const GAP_TRIM: f64 = 0.05;
pub const DEFAULT_GAP_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub cap: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub max_period: usize,
    /// Sorted by exponent.
    pub entries: Vec<OrbitSummary>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Trimmed window in which gaps are measured.
    pub window: (f64, f64),
    pub largest_interior_gap: f64,
    pub gap_location: (f64, f64),
    /// Largest gap inside the same window for every period cap.
    pub gap_curve: Vec<GapPoint>,
    /// No periodic orbit was found.
    pub empty: bool,
    pub caveat: String,
}

impl SpectrumReport {
    pub fn span(&self) -> f64 {
        self.lambda_max - self.lambda_min
    }

    /// Whether the largest interior gap is at most `threshold` times the span.
    pub fn looks_connected(&self, threshold: f64) -> bool {
        !self.empty && self.largest_interior_gap <= threshold * self.span()
    }

    pub fn write_gap_curve_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.gap_curve {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_gap_curve_csv<R: std::io::Read>(reader: R) -> Result<Vec<GapPoint>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(LabError::from))
        .collect()
}

/// Largest subinterval of `[lo, hi]` containing none of `values` (sorted).
fn largest_gap(values: &[f64], lo: f64, hi: f64) -> (f64, (f64, f64)) {
    if !(hi > lo) {
        return (0.0, (lo, lo));
    }
    let mut prev = lo;
    let mut best = (0.0, (lo, lo));
    for &v in values.iter().filter(|&&v| v > lo && v < hi).chain(std::iter::once(&hi)) {
        if v - prev > best.0 {
            best = (v - prev, (prev, v));
        }
        prev = v;
    }
    best
}

pub fn exponent_spectrum(model: &SkewProductModel, max_period: usize) -> Result<SpectrumReport> {
    if max_period == 0 {
        return Err(LabError::Parameter("max_period must be at least 1".into()));
    }
    let e = enumerate_periodic_orbits(model, max_period);
    Ok(spectrum_from_orbits(&e.orbits, max_period, e.caveat()))
}

/// Aggregate already enumerated orbits into a report.
pub fn spectrum_from_orbits(
    orbits: &[PeriodicOrbit],
    max_period: usize,
    caveat: String,
) -> SpectrumReport {
    let mut entries: Vec<OrbitSummary> = orbits.iter().map(|o| o.summary()).collect();
    entries.sort_by(|a, b| {
        a.lambda_c
            .total_cmp(&b.lambda_c)
            .then(a.period.cmp(&b.period))
            .then_with(|| a.word.cmp(&b.word))
    });
    if entries.is_empty() {
        return SpectrumReport {
            max_period,
            entries,
            lambda_min: f64::NAN,
            lambda_max: f64::NAN,
            window: (f64::NAN, f64::NAN),
            largest_interior_gap: 0.0,
            gap_location: (f64::NAN, f64::NAN),
            gap_curve: (1..=max_period).map(|cap| GapPoint { cap, gap: 0.0 }).collect(),
            empty: true,
            caveat,
        };
    }
    let lambda_min = entries[0].lambda_c;
    let lambda_max = entries[entries.len() - 1].lambda_c;
    let span = lambda_max - lambda_min;
    let window = (lambda_min + GAP_TRIM * span, lambda_max - GAP_TRIM * span);
    let values: Vec<f64> = entries.iter().map(|e| e.lambda_c).collect();
    let (largest_interior_gap, gap_location) = largest_gap(&values, window.0, window.1);
    let gap_curve = (1..=max_period)
        .map(|cap| {
            let v: Vec<f64> = entries
                .iter()
                .filter(|e| e.period <= cap)
                .map(|e| e.lambda_c)
                .collect();
            GapPoint {
                cap,
                gap: largest_gap(&v, window.0, window.1).0,
            }
        })
        .collect();
    SpectrumReport {
        max_period,
        entries,
        lambda_min,
        lambda_max,
        window,
        largest_interior_gap,
        gap_location,
        gap_curve,
        empty: false,
        caveat,
    }
}

/// Two fiber families over the same base; the second coordinate's exponent
/// is offset by `log_shift` (a uniform extra expansion along it), which is
/// what makes the splitting dominated.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub first: SkewProductModel,
    pub second: SkewProductModel,
    pub log_shift: f64,
}

#[derive(Deserialize)]
struct PairFile {
    first: serde_json::Value,
    second: serde_json::Value,
    #[serde(default)]
    log_shift: f64,
}

impl ModelPair {
    pub fn new(first: SkewProductModel, second: SkewProductModel, log_shift: f64) -> Result<Self> {
        if first.k() != second.k() {
            return Err(LabError::Configuration(format!(
                "coordinates use different alphabets ({} and {} symbols)",
                first.k(),
                second.k()
            )));
        }
        if !log_shift.is_finite() {
            return Err(LabError::Configuration("log_shift must be finite".into()));
        }
        let pair = Self {
            first,
            second,
            log_shift,
        };
        let margin = pair.margin();
        if !(margin > 0.0) {
            return Err(LabError::Configuration(format!(
                "domination margin {margin} is not positive"
            )));
        }
        Ok(pair)
    }

    /// `min log f'` along the second coordinate (shifted) minus `max log f'`
    /// along the first.
    pub fn margin(&self) -> f64 {
        self.second.min_log_derivative() + self.log_shift - self.first.max_log_derivative()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PairFile = serde_json::from_str(text)?;
        let first = SkewProductModel::from_json(&file.first.to_string())?;
        let second = SkewProductModel::from_json(&file.second.to_string())?;
        Self::new(first, second, file.log_shift)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    pub word: String,
    pub x1: f64,
    pub x2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Slack for rounding in the domination check: the bound is attained with
/// equality when both coordinates sit at their extreme derivatives.
const DOMINATION_SLACK: f64 = 1e-12;

/// Exponent pairs of all periodic orbits of the product up to `max_period`:
/// for every base necklace, every pair of fiber fixed points, one per
/// coordinate.
pub fn exponent_pairs_2d(pair: &ModelPair, max_period: usize) -> Result<Vec<ExponentPair>> {
    if max_period == 0 {
        return Err(LabError::Parameter("max_period must be at least 1".into()));
    }
    let margin = pair.margin();
    let mut out = Vec::new();
    for w in lyndon_words(pair.first.k(), max_period) {
        let orbits = |m: &SkewProductModel, w: &Word| -> Vec<PeriodicOrbit> {
            find_fiber_fixed_points(m, w)
                .unwrap_or_default()
                .into_iter()
                .filter_map(|x| PeriodicOrbit::from_fixed_point(m, w.clone(), x).ok())
                .collect()
        };
        let first = orbits(&pair.first, &w);
        let second = orbits(&pair.second, &w);
        for a in &first {
            for b in &second {
                let p = ExponentPair {
                    word: w.to_string(),
                    x1: a.fiber_x,
                    x2: b.fiber_x,
                    lambda1: a.lambda_c,
                    lambda2: b.lambda_c + pair.log_shift,
                };
                if p.lambda1 + margin > p.lambda2 + DOMINATION_SLACK {
                    return Err(LabError::Precondition(format!(
                        "pair over {} violates domination: {} + {margin} > {}",
                        p.word, p.lambda1, p.lambda2
                    )));
                }
                out.push(p);
            }
        }
    }
    Ok(out)
}

pub fn write_pairs_csv<W: Write>(writer: W, pairs: &[ExponentPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_csv<R: std::io::Read>(reader: R) -> Result<Vec<ExponentPair>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(LabError::from))
        .collect()
}

const SVG_SIZE: f64 = 480.0;
const SVG_PAD: f64 = 48.0;

fn svg_frame(title: &str, x_label: &str, y_label: &str, body: &str) -> String {
    let s = SVG_SIZE;
    let p = SVG_PAD;
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">
<rect width="100%" height="100%" fill="white"/>
<text x="{cx}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>
<line x1="{p}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{p}" y1="{p}" x2="{p}" y2="{b}" stroke="black"/>
<text x="{cx}" y="{xl}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>
<text x="14" y="{cy}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {cy})">{y_label}</text>
{body}</svg>
"##,
        cx = s / 2.0,
        cy = s / 2.0,
        b = s - p,
        r = s - p,
        xl = s - 12.0,
    )
}

fn scale(v: f64, lo: f64, hi: f64, flip: bool) -> f64 {
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let span = SVG_SIZE - 2.0 * SVG_PAD;
    if flip {
        SVG_SIZE - SVG_PAD - t * span
    } else {
        SVG_PAD + t * span
    }
}

fn bounds(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = v.clone().fold(f64::INFINITY, f64::min);
    let hi = v.fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-9);
    (lo - pad, hi + pad)
}

/// Scatter of `(λ1, λ2)` with the diagonal for reference.
pub fn pairs_svg(pairs: &[ExponentPair]) -> String {
    let all = pairs.iter().flat_map(|p| [p.lambda1, p.lambda2]);
    let (lo, hi) = if pairs.is_empty() { (0.0, 1.0) } else { bounds(all) };
    let mut body = String::new();
    let _ = writeln!(
        body,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        scale(lo, lo, hi, false),
        scale(lo, lo, hi, true),
        scale(hi, lo, hi, false),
        scale(hi, lo, hi, true)
    );
    for p in pairs {
        let _ = writeln!(
            body,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f77b4"/>"##,
            scale(p.lambda1, lo, hi, false),
            scale(p.lambda2, lo, hi, true)
        );
    }
    svg_frame("central exponent pairs", "lambda1", "lambda2", &body)
}

/// Largest interior gap against the period cap.
pub fn gap_curve_svg(report: &SpectrumReport) -> String {
    let pts = &report.gap_curve;
    let (xlo, xhi) = (1.0, report.max_period.max(2) as f64);
    let (ylo, yhi) = if pts.is_empty() {
        (0.0, 1.0)
    } else {
        (0.0, pts.iter().map(|p| p.gap).fold(0.0, f64::max).max(1e-9) * 1.05)
    };
    let path: Vec<String> = pts
        .iter()
        .map(|p| {
            format!(
                "{:.2},{:.2}",
                scale(p.cap as f64, xlo, xhi, false),
                scale(p.gap, ylo, yhi, true)
            )
        })
        .collect();
    let body = format!(
        "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"{}\"/>\n",
        path.join(" ")
    );
    svg_frame("largest interior gap", "period cap", "gap", &body)
}
