//! Step skew products over the full shift with circle fibers.
//!
//! A model is a finite alphabet `0..k` together with one circle
//! diffeomorphism per symbol,
//!
//! ```text
//! f_i(x) = x + a_i + (b_i / 2π) sin(2πx)   (mod 1),   |b_i| < 1
//! ```
//!
//! acting on the fiber while the base is shifted. Only the fiber derivative
//! is dynamical along the center direction; the symbolic base plays the role
//! of the strong stable and unstable bundles.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A symbol of the base alphabet.
pub type Symbol = u8;

/// Number of symbols compared on each side when measuring the distance between
/// two base sequences. Sequences that agree on `[-BASE_HORIZON, BASE_HORIZON]`
/// are reported at distance zero.
pub const BASE_HORIZON: usize = 64;

/// Reduce a real number to the circle `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Arc distance on the circle `R/Z`, in `[0, 1/2]`.
#[inline]
pub fn circle_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberMap {
    pub a: f64,
    pub b: f64,
}

impl FiberMap {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(LabError::InvalidModel(format!(
                "non-finite fiber map parameters a={a}, b={b}"
            )));
        }
        if b.abs() >= 1.0 {
            return Err(LabError::InvalidModel(format!(
                "|b| must be < 1 for a circle diffeomorphism, got b={b}"
            )));
        }
        Ok(Self { a: wrap(a), b })
    }

    /// The lift `x + a + (b/2π) sin(2πx)` on the real line.
    #[inline]
    pub fn lift(&self, x: f64) -> f64 {
        x + self.a + self.b / TAU * (TAU * x).sin()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        wrap(self.lift(x))
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        1.0 + self.b * (TAU * x).cos()
    }

    #[inline]
    pub fn log_derivative(&self, x: f64) -> f64 {
        self.derivative(x).ln()
    }

    /// Inverse on the circle. Newton on the monotone lift, with a bisection
    /// fallback on the bracket `[x - a - |b|/2π, x - a + |b|/2π]`.
    pub fn inverse(&self, x: f64) -> f64 {
        let target = x - self.a;
        let amp = self.b.abs() / TAU;
        let (mut lo, mut hi) = (target - amp, target + amp);
        let mut y = target;
        for _ in 0..60 {
            let r = y + self.b / TAU * (TAU * y).sin() - target;
            if r == 0.0 {
                return wrap(y);
            }
            if r > 0.0 {
                hi = hi.min(y);
            } else {
                lo = lo.max(y);
            }
            let step = r / self.derivative(y);
            let next = y - step;
            y = if next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
            if step.abs() < 1e-17 || hi - lo < 1e-16 {
                break;
            }
        }
        wrap(y)
    }

    /// `max(|log(1 - |b|)|, |log(1 + |b|)|)`: bound on the per-step log-derivative.
    pub fn log_derivative_bound(&self) -> f64 {
        let b = self.b.abs();
        (1.0 - b).ln().abs().max((1.0 + b).ln().abs())
    }

    /// Bound on `|d/dx log f'(x)|`, attained where `cos(2πx) = -b`.
    pub fn log_derivative_slope_bound(&self) -> f64 {
        TAU * self.b.abs() / (1.0 - self.b * self.b).sqrt()
    }
}

/// A word over the base alphabet. Text form uses base-36 digits, one per symbol.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(pub Vec<Symbol>);

impl Word {
    pub fn new(symbols: Vec<Symbol>) -> Self {
        Self(symbols)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    /// Symbol at position `i` of the periodic extension.
    #[inline]
    pub fn at(&self, i: i64) -> Symbol {
        self.0[i.rem_euclid(self.0.len() as i64) as usize]
    }

    pub fn rotated(&self, r: usize) -> Word {
        let n = self.len();
        if n == 0 {
            return self.clone();
        }
        let r = r % n;
        let mut v = self.0[r..].to_vec();
        v.extend_from_slice(&self.0[..r]);
        Word(v)
    }

    pub fn repeated(&self, times: usize) -> Word {
        Word(self.0.repeat(times))
    }

    pub fn concat(parts: &[&Word]) -> Word {
        let mut v = Vec::with_capacity(parts.iter().map(|w| w.len()).sum());
        for p in parts {
            v.extend_from_slice(&p.0);
        }
        Word(v)
    }

    /// Not a proper power of a shorter word.
    pub fn is_primitive(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return false;
        }
        (1..n)
            .filter(|d| n.is_multiple_of(*d))
            .all(|d| (0..n).any(|i| self.0[i] != self.0[i % d]))
    }

    /// Index of the lexicographically least rotation.
    pub fn least_rotation_index(&self) -> usize {
        let n = self.len();
        (0..n)
            .min_by(|&i, &j| {
                (0..n)
                    .map(|t| self.0[(i + t) % n])
                    .cmp((0..n).map(|t| self.0[(j + t) % n]))
            })
            .unwrap_or(0)
    }

    pub fn is_necklace(&self) -> bool {
        let n = self.len();
        (1..n).all(|r| {
            (0..n)
                .map(|t| self.0[(r + t) % n])
                .cmp(self.0.iter().copied())
                != std::cmp::Ordering::Less
        })
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            let c = std::char::from_digit(s as u32, 36).unwrap_or('?');
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| {
                c.to_digit(36)
                    .map(|d| d as Symbol)
                    .ok_or_else(|| LabError::InvalidWord(format!("bad symbol {c:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Word)
    }
}

/// A point of the skew product restricted to periodic base sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub base_word_rotation: usize,
    pub fiber_x: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    name: String,
    k: usize,
    maps: Vec<FiberMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewProductModel {
    pub name: String,
    maps: Vec<FiberMap>,
}

impl SkewProductModel {
    pub fn new(name: impl Into<String>, maps: Vec<FiberMap>) -> Result<Self> {
        if maps.is_empty() {
            return Err(LabError::InvalidModel("model needs at least one symbol".into()));
        }
        if maps.len() > 36 {
            return Err(LabError::InvalidModel(format!(
                "at most 36 symbols are supported, got {}",
                maps.len()
            )));
        }
        let maps = maps
            .into_iter()
            .map(|m| FiberMap::new(m.a, m.b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.into(),
            maps,
        })
    }

    /// Convenience constructor from `(a, b)` pairs.
    pub fn from_params(name: impl Into<String>, params: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            name,
            params.iter().map(|&(a, b)| FiberMap { a, b }).collect(),
        )
    }

    /// The two-map model used throughout the tests: a north-south map and a
    /// half-turn perturbation of it.
    pub fn reference() -> Self {
        Self::from_params("reference", &[(0.0, 0.5), (0.5, 0.5)]).expect("valid parameters")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.k != file.maps.len() {
            return Err(LabError::InvalidModel(format!(
                "k = {} but {} maps were given",
                file.k,
                file.maps.len()
            )));
        }
        Self::new(file.name, file.maps)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            name: self.name.clone(),
            k: self.k(),
            maps: self.maps.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn k(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[FiberMap] {
        &self.maps
    }

    #[inline]
    pub fn map(&self, s: Symbol) -> &FiberMap {
        &self.maps[s as usize]
    }

    /// Closed-form bound `M` on `|log f_i'(x)|` over symbols and fiber points.
    pub fn log_derivative_bound(&self) -> f64 {
        self.maps
            .iter()
            .map(FiberMap::log_derivative_bound)
            .fold(0.0, f64::max)
    }

    pub fn min_log_derivative(&self) -> f64 {
        self.maps
            .iter()
            .map(|m| (1.0 - m.b.abs()).ln())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_log_derivative(&self) -> f64 {
        self.maps
            .iter()
            .map(|m| (1.0 + m.b.abs()).ln())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn log_derivative_slope_bound(&self) -> f64 {
        self.maps
            .iter()
            .map(FiberMap::log_derivative_slope_bound)
            .fold(0.0, f64::max)
    }

    pub fn check_word(&self, word: &Word) -> Result<()> {
        if word.is_empty() {
            return Err(LabError::InvalidWord("empty word".into()));
        }
        if let Some(&s) = word.symbols().iter().find(|&&s| s as usize >= self.k()) {
            return Err(LabError::InvalidWord(format!(
                "symbol {s} out of range for k = {}",
                self.k()
            )));
        }
        Ok(())
    }

    /// Composition `f_{w_{n-1}} ∘ … ∘ f_{w_0}` applied to `x`, with the
    /// log-derivative Birkhoff sum along the fiber orbit.
    pub fn word_eval(&self, word: &Word, x: f64) -> Result<(f64, f64)> {
        self.check_word(word)?;
        let mut y = wrap(x);
        let mut sum = 0.0;
        for &s in word.symbols() {
            let m = self.map(s);
            sum += m.log_derivative(y);
            y = m.eval(y);
        }
        Ok((y, sum))
    }

    /// Lift of the word composition evaluated at `x`, returned as
    /// `(integer part, fractional part)` so long words keep full precision.
    pub fn word_lift(&self, word: &[Symbol], x: f64) -> (i64, f64) {
        let fl = x.floor();
        let mut whole = fl as i64;
        let mut frac = x - fl;
        for &s in word {
            let y = self.map(s).lift(frac);
            let fl = y.floor();
            whole += fl as i64;
            frac = y - fl;
        }
        (whole, frac)
    }

    /// `lift(x) - x - shift` for the word composition, computed without
    /// cancellation in the integer part.
    pub fn lift_displacement(&self, word: &[Symbol], x: f64, shift: i64) -> f64 {
        let (whole, frac) = self.word_lift(word, x);
        (whole - shift) as f64 + (frac - x)
    }
}

/// Distance `2^{-m}` between two base sequences given by index functions,
/// where `m` is the smallest `|i|` with disagreement.
pub fn base_distance(left: impl Fn(i64) -> Symbol, right: impl Fn(i64) -> Symbol) -> f64 {
    for m in 0..=BASE_HORIZON as i64 {
        if left(m) != right(m) || left(-m) != right(-m) {
            return 0.5f64.powi(m as i32);
        }
    }
    0.0
}

/// Base distance between the periodic sequences `a^∞` read from position
/// `shift_a` and `b^∞` read from `shift_b`.
pub fn periodic_base_distance(a: &Word, shift_a: usize, b: &Word, shift_b: usize) -> f64 {
    base_distance(
        |i| a.at(shift_a as i64 + i),
        |i| b.at(shift_b as i64 + i),
    )
}

/// Product metric on points with periodic base: `max(base distance, arc distance)`.
pub fn point_distance(a: &Word, pa: &OrbitPoint, b: &Word, pb: &OrbitPoint) -> f64 {
    periodic_base_distance(a, pa.base_word_rotation, b, pb.base_word_rotation)
        .max(circle_distance(pa.fiber_x, pb.fiber_x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn ns() -> FiberMap {
        FiberMap::new(0.0, 0.5).unwrap()
    }

    #[test]
    fn fiber_eval_examples() {
        let rot = FiberMap::new(0.25, 0.0).unwrap();
        assert_eq!(rot.eval(0.0), 0.25);
        assert_eq!(ns().eval(0.0), 0.0);
        let expected = 0.25 + 0.5 / TAU;
        assert!(close(ns().eval(0.25), expected, 1e-15));
        assert!(close(ns().eval(0.25), 0.329_577, 1e-6));
    }

    #[test]
    fn log_derivative_examples() {
        assert!(close(ns().log_derivative(0.0), 1.5f64.ln(), 1e-15));
        assert!(close(ns().log_derivative(0.5), 0.5f64.ln(), 1e-15));
        let rot = FiberMap::new(0.3, 0.0).unwrap();
        for x in [0.0, 0.1, 0.77] {
            assert_eq!(rot.log_derivative(x), 0.0);
        }
    }

    #[test]
    fn word_eval_examples() {
        let single = SkewProductModel::from_params("ns", &[(0.0, 0.5)]).unwrap();
        let (y, s) = single.word_eval(&"0".parse().unwrap(), 0.0).unwrap();
        assert_eq!(y, 0.0);
        assert!(close(s, 0.405_465, 1e-6));
        let (y, s) = single.word_eval(&"00".parse().unwrap(), 0.5).unwrap();
        assert!(close(y, 0.5, 1e-15));
        assert!(close(s, -1.386_294, 1e-6));

        let two = SkewProductModel::from_params("two", &[(0.0, 0.5), (0.25, 0.0)]).unwrap();
        let (y, s) = two.word_eval(&"01".parse().unwrap(), 0.0).unwrap();
        assert_eq!(y, 0.25);
        assert!(close(s, 0.405_465, 1e-6));
        assert!(matches!(
            two.word_eval(&"02".parse().unwrap(), 0.0),
            Err(LabError::InvalidWord(_))
        ));
    }

    #[test]
    fn loader_rejects_large_b() {
        let text = r#"{"name":"bad","k":1,"maps":[{"a":0.1,"b":1.0}]}"#;
        assert!(matches!(
            SkewProductModel::from_json(text),
            Err(LabError::InvalidModel(_))
        ));
        let text = r#"{"name":"bad","k":2,"maps":[{"a":0.1,"b":0.2}]}"#;
        assert!(SkewProductModel::from_json(text).is_err());
        let m = SkewProductModel::reference();
        assert_eq!(SkewProductModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn bound_closed_form() {
        let m = SkewProductModel::reference();
        assert!(close(m.log_derivative_bound(), 2f64.ln(), 1e-15));
    }

    #[test]
    fn word_helpers() {
        let w: Word = "0101".parse().unwrap();
        assert!(!w.is_primitive());
        assert!(w.is_necklace());
        let w: Word = "011".parse().unwrap();
        assert!(w.is_primitive());
        assert_eq!(w.rotated(1).to_string(), "110");
        assert_eq!(w.rotated(1).least_rotation_index(), 2);
        assert!(!w.rotated(1).is_necklace());
        assert_eq!(w.at(-1), 1);
    }

    #[test]
    fn base_metric() {
        let a: Word = "0".parse().unwrap();
        let b: Word = "1".parse().unwrap();
        assert_eq!(periodic_base_distance(&a, 0, &b, 0), 1.0);
        assert_eq!(periodic_base_distance(&a, 0, &a, 0), 0.0);
        let c: Word = "0001".parse().unwrap();
        // 0001 read from position 1: ...1 0 0 1 0 0 0 1...; nearest mismatch with 0^∞ at +2
        assert_eq!(periodic_base_distance(&c, 1, &a, 0), 0.25);
    }
}
