//! Periodic orbits of the skew product.
//!
//! A periodic orbit is a primitive necklace `w` together with a fixed point
//! of the fiber composition `F_w`. Its central exponent is the Birkhoff
//! average of `log f'` along the fiber orbit, i.e. `log|F_w'(x)| / |w|`.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{circle_distance, wrap, SkewProductModel, Symbol, Word};

pub const DEFAULT_SCAN_RESOLUTION: usize = 4096;
pub const NEUTRAL_TOLERANCE: f64 = 1e-8;
/// Closure tolerance for a computed orbit (arc distance).
pub const FIXED_POINT_TOLERANCE: f64 = 1e-9;
const BISECTION_TOLERANCE: f64 = 1e-12;
const DEGENERACY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitIndex {
    Attracting,
    Repelling,
    Neutral,
}

impl OrbitIndex {
    pub fn classify(lambda: f64) -> Self {
        if lambda > NEUTRAL_TOLERANCE {
            OrbitIndex::Repelling
        } else if lambda < -NEUTRAL_TOLERANCE {
            OrbitIndex::Attracting
        } else {
            OrbitIndex::Neutral
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OrbitIndex::Attracting => "attracting",
            OrbitIndex::Repelling => "repelling",
            OrbitIndex::Neutral => "neutral",
        }
    }
}

impl std::str::FromStr for OrbitIndex {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attracting" => Ok(OrbitIndex::Attracting),
            "repelling" => Ok(OrbitIndex::Repelling),
            "neutral" => Ok(OrbitIndex::Neutral),
            other => Err(LabError::Parameter(format!("unknown index {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub word: Word,
    pub fiber_x: f64,
    pub period: usize,
    pub lambda_c: f64,
    pub index: OrbitIndex,
    points: Vec<f64>,
}

impl PeriodicOrbit {
    /// Build the orbit of `(word^∞, x)` where `x` is (numerically) fixed by the
    /// word composition.
    ///
    /// The fiber orbit is computed in whichever direction closes up better:
    /// forward images for contracting cycles, inverse images for expanding
    /// ones. Long expanding cycles cannot be followed forward in floating point.
    pub fn from_fixed_point(model: &SkewProductModel, word: Word, x: f64) -> Result<Self> {
        model.check_word(&word)?;
        let x = wrap(x);
        let syms = word.symbols();
        let n = syms.len();

        let mut forward = Vec::with_capacity(n);
        let mut y = x;
        for &s in syms {
            forward.push(y);
            y = model.map(s).eval(y);
        }
        let closure_forward = circle_distance(y, x);

        let mut backward = vec![0.0; n];
        let mut y = x;
        for i in (0..n).rev() {
            y = model.map(syms[i]).inverse(y);
            backward[i] = y;
        }
        let closure_backward = circle_distance(y, x);
        backward[0] = x;

        let (points, closure) = if closure_forward <= closure_backward {
            (forward, closure_forward)
        } else {
            (backward, closure_backward)
        };
        if closure > FIXED_POINT_TOLERANCE {
            return Err(LabError::NotPeriodic(format!(
                "x = {x} is not fixed by word of length {n} (closure error {closure:e})"
            )));
        }
        let sum: f64 = syms
            .iter()
            .zip(&points)
            .map(|(&s, &p)| model.map(s).log_derivative(p))
            .sum();
        let lambda_c = sum / n as f64;
        Ok(Self {
            word,
            fiber_x: x,
            period: n,
            lambda_c,
            index: OrbitIndex::classify(lambda_c),
            points,
        })
    }

    /// Fiber coordinates of the orbit, `points()[i]` sitting over the base
    /// sequence `word^∞` read from position `i`.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        self.points[i % self.period]
    }

    #[inline]
    pub fn symbol(&self, i: usize) -> Symbol {
        self.word.symbols()[i % self.period]
    }

    /// Per-step center log-derivatives along one period.
    pub fn log_derivatives(&self, model: &SkewProductModel) -> Vec<f64> {
        self.word
            .symbols()
            .iter()
            .zip(&self.points)
            .map(|(&s, &p)| model.map(s).log_derivative(p))
            .collect()
    }

    /// Largest one-step mismatch `|f(x_i) - x_{i+1}|` around the cycle.
    pub fn step_residual(&self, model: &SkewProductModel) -> f64 {
        (0..self.period)
            .map(|i| {
                let next = model.map(self.symbol(i)).eval(self.point(i));
                circle_distance(next, self.point(i + 1))
            })
            .fold(0.0, f64::max)
    }

    /// Rotate the orbit by one step: the word is rotated and the fiber
    /// point advanced.
    pub fn advanced(&self, model: &SkewProductModel, steps: usize) -> Result<Self> {
        let r = steps % self.period;
        let word = self.word.rotated(r);
        let mut points = self.points[r..].to_vec();
        points.extend_from_slice(&self.points[..r]);
        let lambda_c = word
            .symbols()
            .iter()
            .zip(&points)
            .map(|(&s, &p)| model.map(s).log_derivative(p))
            .sum::<f64>()
            / self.period as f64;
        Ok(Self {
            word,
            fiber_x: points[0],
            period: self.period,
            lambda_c,
            index: OrbitIndex::classify(lambda_c),
            points,
        })
    }

    pub fn summary(&self) -> OrbitSummary {
        OrbitSummary {
            period: self.period,
            word: self.word.to_string(),
            fiber_x: self.fiber_x,
            lambda_c: self.lambda_c,
            index: self.index,
        }
    }
}

/// Serializable view of a periodic orbit (one CSV row of a spectrum dump).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSummary {
    pub period: usize,
    pub word: String,
    pub fiber_x: f64,
    pub lambda_c: f64,
    pub index: OrbitIndex,
}

impl OrbitSummary {
    pub fn to_orbit(&self, model: &SkewProductModel) -> Result<PeriodicOrbit> {
        PeriodicOrbit::from_fixed_point(model, self.word.parse()?, self.fiber_x)
    }
}

/// All Lyndon words (primitive necklaces) of length `1..=max_len` over
/// `k` symbols, in lexicographic order (Duval's generator).
pub fn lyndon_words(k: usize, max_len: usize) -> Vec<Word> {
    let mut out = Vec::new();
    if k == 0 || max_len == 0 {
        return out;
    }
    let mut w: Vec<i32> = vec![-1];
    while let Some(last) = w.last_mut() {
        *last += 1;
        out.push(Word(w.iter().map(|&s| s as Symbol).collect()));
        let m = w.len();
        while w.len() < max_len {
            let s = w[w.len() - m];
            w.push(s);
        }
        while w.last() == Some(&(k as i32 - 1)) {
            w.pop();
        }
    }
    out
}

/// Fixed points of the fiber composition of `word`, i.e. the solutions of
/// `F(x) - x ∈ Z` on `[0, 1)` for the lift `F`.
pub fn find_fiber_fixed_points(model: &SkewProductModel, word: &Word) -> Result<Vec<f64>> {
    find_fiber_fixed_points_with(model, word, DEFAULT_SCAN_RESOLUTION)
}

pub fn find_fiber_fixed_points_with(
    model: &SkewProductModel,
    word: &Word,
    resolution: usize,
) -> Result<Vec<f64>> {
    model.check_word(word)?;
    if resolution == 0 {
        return Err(LabError::Parameter("scan resolution must be positive".into()));
    }
    let syms = word.symbols();
    let disp = |x: f64| model.lift_displacement(syms, x, 0);
    let grid: Vec<f64> = (0..=resolution)
        .map(|j| disp(j as f64 / resolution as f64))
        .collect();

    let mut roots = Vec::new();
    for j in 0..resolution {
        let (x0, x1) = (
            j as f64 / resolution as f64,
            (j + 1) as f64 / resolution as f64,
        );
        let (g0, g1) = (grid[j], grid[j + 1]);
        let lo = g0.min(g1).ceil() as i64;
        let hi = g0.max(g1).floor() as i64;
        for shift in lo..=hi {
            let n = shift as f64;
            let gm = disp(0.5 * (x0 + x1));
            if (g0 - n).abs() < DEGENERACY_TOLERANCE
                && (g1 - n).abs() < DEGENERACY_TOLERANCE
                && (gm - n).abs() < DEGENERACY_TOLERANCE
            {
                return Err(LabError::OrbitContinuum {
                    word: word.to_string(),
                    degenerate: true,
                });
            }
            if g0 == n {
                roots.push(x0);
                continue;
            }
            if g1 == n {
                // picked up as the left endpoint of the next cell (or x = 0)
                continue;
            }
            roots.push(bisect_shift(model, syms, x0, x1, shift));
        }
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<f64> = Vec::with_capacity(roots.len());
    for r in roots {
        let r = wrap(r);
        if out.last().is_none_or(|&p| circle_distance(p, r) > 1e-10) {
            out.push(r);
        }
    }
    if out.len() > 1 && circle_distance(out[0], *out.last().unwrap()) <= 1e-10 {
        out.pop();
    }
    Ok(out)
}

/// Bisection for `lift(x) - x = shift` on a bracket where the sign changes.
pub(crate) fn bisect_shift(
    model: &SkewProductModel,
    syms: &[Symbol],
    mut lo: f64,
    mut hi: f64,
    shift: i64,
) -> f64 {
    let f_lo = model.lift_displacement(syms, lo, shift);
    let neg_lo = f_lo < 0.0;
    while hi - lo > BISECTION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = model.lift_displacement(syms, mid, shift);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fixed point of the word composition nearest to `guess`, found by growing
/// a bracket around it. Intended for long words where a full scan is too
/// expensive.
pub fn fixed_point_near(model: &SkewProductModel, word: &Word, guess: f64) -> Result<f64> {
    model.check_word(word)?;
    let syms = word.symbols();
    let x0 = wrap(guess);
    let (whole, frac) = model.word_lift(syms, x0);
    let d0 = (frac - x0).round() as i64;
    let shift = whole + d0;
    if model.lift_displacement(syms, x0, shift) == 0.0 {
        return Ok(x0);
    }
    let mut h = 1e-12;
    while h <= 0.5 {
        for candidate in [shift, shift - 1, shift + 1] {
            let a = model.lift_displacement(syms, x0 - h, candidate);
            let b = model.lift_displacement(syms, x0 + h, candidate);
            if a == 0.0 {
                return Ok(wrap(x0 - h));
            }
            if b == 0.0 {
                return Ok(wrap(x0 + h));
            }
            if (a < 0.0) != (b < 0.0) {
                return Ok(wrap(bisect_shift(model, syms, x0 - h, x0 + h, candidate)));
            }
        }
        h *= 4.0;
    }
    Err(LabError::Realization(format!(
        "no fiber fixed point for word of length {} (rotation-number obstruction)",
        word.len()
    )))
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub orbits: Vec<PeriodicOrbit>,
    /// Words whose composition is identity-like; skipped.
    pub degenerate: Vec<Word>,
    pub resolution: usize,
}

impl Enumeration {
    pub fn caveat(&self) -> String {
        format!(
            "fixed points located by sign changes at resolution 1/{}; pairs of roots inside one cell can be missed; {} degenerate word(s) skipped",
            self.resolution,
            self.degenerate.len()
        )
    }
}

pub fn enumerate_periodic_orbits(model: &SkewProductModel, max_period: usize) -> Enumeration {
    enumerate_periodic_orbits_with(model, max_period, DEFAULT_SCAN_RESOLUTION)
}

pub fn enumerate_periodic_orbits_with(
    model: &SkewProductModel,
    max_period: usize,
    resolution: usize,
) -> Enumeration {
    let words = lyndon_words(model.k(), max_period);
    let per_word: Vec<(Word, Option<Vec<PeriodicOrbit>>)> = words
        .into_par_iter()
        .map(|w| match find_fiber_fixed_points_with(model, &w, resolution) {
            Ok(xs) => {
                let orbits = xs
                    .into_iter()
                    .filter_map(|x| PeriodicOrbit::from_fixed_point(model, w.clone(), x).ok())
                    .collect();
                (w, Some(orbits))
            }
            Err(_) => (w, None),
        })
        .collect();

    let mut orbits = Vec::new();
    let mut degenerate = Vec::new();
    for (w, res) in per_word {
        match res {
            Some(o) => orbits.extend(o),
            None => degenerate.push(w),
        }
    }
    orbits.sort_by(|a, b| {
        a.period
            .cmp(&b.period)
            .then_with(|| a.word.cmp(&b.word))
            .then_with(|| a.fiber_x.total_cmp(&b.fiber_x))
    });
    Enumeration {
        orbits,
        degenerate,
        resolution,
    }
}

/// `(Σ_j log f'_{w_j}(x_j)) / π` recomputed from the model.
pub fn center_exponent(model: &SkewProductModel, orbit: &PeriodicOrbit) -> f64 {
    orbit.log_derivatives(model).iter().sum::<f64>() / orbit.period as f64
}

/// Cells `(base cylinder of length depth) × (fiber bin)` of the phase space.
/// Fiber bin `j` is centered at `j / bins`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub depth: usize,
    pub bins: usize,
}

impl SampleGrid {
    pub fn new(depth: usize, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(LabError::Parameter("fiber bins must be positive".into()));
        }
        if depth > 20 {
            return Err(LabError::Parameter(format!("base depth {depth} too large")));
        }
        Ok(Self { depth, bins })
    }

    #[inline]
    pub fn bin_of(&self, x: f64) -> usize {
        ((wrap(x) * self.bins as f64).round() as usize) % self.bins
    }

    #[inline]
    pub fn bin_center(&self, j: usize) -> f64 {
        j as f64 / self.bins as f64
    }

    pub fn cylinder_count(&self, k: usize) -> usize {
        k.pow(self.depth as u32)
    }

    pub fn cell_count(&self, k: usize) -> usize {
        self.cylinder_count(k) * self.bins
    }

    /// Base-k code of the first `len` symbols of `word^∞` from position `i`.
    pub fn cylinder_code(k: usize, word: &Word, i: usize, len: usize) -> usize {
        (0..len).fold(0usize, |acc, t| {
            acc * k + word.symbols()[(i + t) % word.len()] as usize
        })
    }

    /// Cell id of orbit point `i`: `cylinder * bins + bin`.
    pub fn cell_of(&self, k: usize, orbit: &PeriodicOrbit, i: usize) -> usize {
        Self::cylinder_code(k, &orbit.word, i, self.depth) * self.bins + self.bin_of(orbit.point(i))
    }
}

/// Covering radius of the orbit over the grid: the largest distance from a
/// cell center to the nearest orbit point.
///
/// A cell center shares its first `depth` symbols with the cylinder; an orbit
/// point whose forward symbols first disagree at index `m < depth` is at base
/// distance `2^{-m}`, one agreeing on all of them at `2^{-depth}`.
pub fn orbit_density_radius(
    model: &SkewProductModel,
    orbit: &PeriodicOrbit,
    grid: &SampleGrid,
) -> f64 {
    let k = model.k();
    let d = grid.depth;
    // prefix_sets[len][code] = sorted fiber coordinates of points with that prefix
    let mut prefix_sets: Vec<HashMap<usize, Vec<f64>>> = vec![HashMap::new(); d + 1];
    for i in 0..orbit.period {
        let x = orbit.point(i);
        let mut code = 0usize;
        prefix_sets[0].entry(0).or_default().push(x);
        for (len, set) in prefix_sets.iter_mut().enumerate().skip(1) {
            code = code * k + orbit.symbol(i + len - 1) as usize;
            set.entry(code).or_default().push(x);
        }
    }
    for set in prefix_sets.iter_mut() {
        for v in set.values_mut() {
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
        }
    }

    let cylinders = grid.cylinder_count(k);
    (0..cylinders)
        .into_par_iter()
        .map(|cyl| {
            let prefixes: Vec<usize> = (0..=d).map(|len| cyl / k.pow((d - len) as u32)).collect();
            (0..grid.bins)
                .map(|j| {
                    let y = grid.bin_center(j);
                    (0..=d)
                        .filter_map(|len| {
                            let set = prefix_sets[len].get(&prefixes[len])?;
                            let base = 0.5f64.powi(len as i32);
                            Some(base.max(nearest_on_circle(set, y)))
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Arc distance from `y` to the nearest element of a sorted slice of circle points.
pub(crate) fn nearest_on_circle(sorted: &[f64], y: f64) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    let pos = sorted.partition_point(|&v| v < y);
    let a = sorted[pos % sorted.len()];
    let b = sorted[(pos + sorted.len() - 1) % sorted.len()];
    circle_distance(a, y).min(circle_distance(b, y))
}

/// CSV with columns `period, word, fiber_x, lambda_c, index`.
pub fn write_spectrum_csv<W: Write>(writer: W, orbits: &[PeriodicOrbit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in orbits {
        w.serialize(o.summary())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrum_csv<R: Read>(reader: R) -> Result<Vec<OrbitSummary>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(LabError::from))
        .collect()
}
