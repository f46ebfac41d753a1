//! Concatenation of periodic orbits into successive good approximations.
//!
//! Stage `n` glues `t_n` turns around a saddle `p_n` (exponent on the far
//! side of the target) to `s_n` turns around the previous orbit `q_{n-1}`,
//! with short bridge words in between. The realized periodic orbit `q_n` has
//! exponent squeezed towards the target while most of its points keep
//! tracking `q_{n-1}`, which is what makes the empirical measures converge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{balanced, tracking_errors, GoodApproxCertificate};
use crate::error::{LabError, Result};
use crate::model::{circle_distance, SkewProductModel, Symbol, Word, BASE_HORIZON};
use crate::orbits::{
    enumerate_periodic_orbits, fixed_point_near, orbit_density_radius, OrbitIndex, PeriodicOrbit,
    SampleGrid,
};

pub const DEFAULT_M_CAP: usize = 8;
/// Default `c` in the planning floor `χ_n >= 1 - c / 2^n`.
pub const DEFAULT_C_TARGET: f64 = 8.0;
pub const RETRY_CAP: usize = 4;
const T_MAX: u64 = 1 << 16;
const S_MAX: u64 = 1 << 24;
/// Longest word tried when blending saddles for a dense one.
const BLEND_MAX_LEN: usize = 4096;
/// Preferred position of the prediction inside the sandwich, as fractions
/// of its width measured from the target. Staying in the upper part keeps
/// the `p` share, and with it the period growth, moderate.
const PREFERRED_BAND: (f64, f64) = (0.5, 0.875);

/// Number of base symbols `r` with `2^{-r} < eps`.
pub fn tracking_depth(eps: f64) -> usize {
    (1.0 / eps).log2().floor().max(0.0) as usize + 1
}

/// The numeric core of a plan: everything the integer search needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanProblem {
    pub lambda_p: f64,
    pub period_p: usize,
    pub lambda_q: f64,
    pub period_q: usize,
    /// Bridge length bound `m_n`.
    pub m: usize,
    /// `|bridge_in| + |bridge_out|`.
    pub bridge_total: usize,
    /// Bound on `|log f'|` over the model.
    pub big_m: f64,
    pub s_target: f64,
    pub eps_n: f64,
    pub stage: u32,
    pub c_target: Option<f64>,
}

impl PlanProblem {
    fn sign(&self) -> f64 {
        if self.s_target >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Weighted average with the bridges charged at the worst-case rate `M`.
    pub fn predicted_lambda(&self, t: u64, s: u64) -> f64 {
        let tp = t as f64 * self.period_p as f64;
        let sq = s as f64 * self.period_q as f64;
        let br = 2.0 * self.m as f64;
        (tp * self.lambda_p + sq * self.lambda_q + br * self.sign() * self.big_m) / (tp + sq + br)
    }

    /// Share of the bridges in the exponent sum.
    pub fn bridge_ratio(&self, t: u64, s: u64) -> f64 {
        if self.m == 0 {
            return 0.0;
        }
        let tp = t as f64 * self.period_p as f64;
        let sq = s as f64 * self.period_q as f64;
        let br = 2.0 * self.m as f64 * self.big_m;
        br / (tp * self.lambda_p + sq * self.lambda_q + self.sign() * br).abs()
    }

    /// Open interval the predicted exponent must fall in.
    pub fn sandwich(&self) -> (f64, f64) {
        let mid = 0.5 * (self.s_target + self.lambda_q);
        if self.sign() > 0.0 {
            (self.s_target, mid)
        } else {
            (mid, self.s_target)
        }
    }

    pub fn period(&self, t: u64, s: u64) -> u64 {
        t * self.period_p as u64 + s * self.period_q as u64 + self.bridge_total as u64
    }

    /// Fraction of points in the `q` block that can track `q` for a full
    /// period, after losing one period and the boundary layers.
    pub fn predicted_chi(&self, t: u64, s: u64) -> f64 {
        let r = tracking_depth(self.eps_n) as f64;
        let sq = s as f64 * self.period_q as f64;
        (sq - self.period_q as f64 - 2.0 * (r + 1.0)) / self.period(t, s) as f64
    }

    pub fn chi_floor(&self) -> Option<f64> {
        self.c_target
            .map(|c| 1.0 - c / 2f64.powi(self.stage as i32))
    }

    fn min_block(&self) -> u64 {
        2 * (tracking_depth(self.eps_n) as u64 + 1)
    }

    fn chi_ok(&self, t: u64, s: u64) -> bool {
        let chi = self.predicted_chi(t, s);
        chi > 0.0 && self.chi_floor().is_none_or(|f| chi >= f)
    }

    /// `Ok` if `(t, s)` meets every constraint, otherwise the name of the
    /// first one violated.
    pub fn check(&self, t: u64, s: u64) -> std::result::Result<(), &'static str> {
        if t == 0 || s == 0 {
            return Err("counts");
        }
        let min_block = self.min_block();
        if t * (self.period_p as u64) < min_block || s * (self.period_q as u64) < min_block {
            return Err("block-length");
        }
        let pred = self.predicted_lambda(t, s);
        let (lo, hi) = self.sandwich();
        if !(pred > lo && pred < hi) {
            return Err("sandwich");
        }
        if !(self.bridge_ratio(t, s) < self.eps_n) {
            return Err("bridge-ratio");
        }
        if !self.chi_ok(t, s) {
            return Err("chi-schedule");
        }
        Ok(())
    }

    fn check_straddle(&self) -> Result<()> {
        let s = self.s_target;
        let ok = if self.sign() > 0.0 {
            self.lambda_p < s && s < self.lambda_q
        } else {
            self.lambda_q < s && s < self.lambda_p
        };
        if !ok {
            return Err(LabError::Precondition(format!(
                "exponents must strictly straddle the target: lambda_p = {}, s = {s}, lambda_q = {}",
                self.lambda_p, self.lambda_q
            )));
        }
        if !(self.eps_n > 0.0) {
            return Err(LabError::Parameter(format!("eps_n must be positive, got {}", self.eps_n)));
        }
        if self.period_p == 0 || self.period_q == 0 {
            return Err(LabError::Parameter("orbit periods must be positive".into()));
        }
        Ok(())
    }
}

/// Smallest `x` in `[lo, hi]` with `pred(x)`, for a predicate that is
/// monotone false-then-true.
fn first_true(lo: u64, hi: u64, pred: impl Fn(u64) -> bool) -> Option<u64> {
    if lo > hi || !pred(hi) {
        return None;
    }
    let (mut a, mut b) = (lo, hi);
    while a < b {
        let mid = a + (b - a) / 2;
        if pred(mid) {
            b = mid;
        } else {
            a = mid + 1;
        }
    }
    Some(a)
}

/// Integer search for `(t, s)`: smallest `t` first, and for each `t` the
/// smallest `s` meeting every constraint. Pairs whose prediction lies in
/// [`PREFERRED_BAND`] are preferred over the rest of the sandwich.
pub fn solve_counts(pr: &PlanProblem) -> Result<(u64, u64)> {
    pr.check_straddle()?;
    let sigma = pr.sign();
    let (lo, hi) = pr.sandwich();
    let (lo, hi) = if sigma > 0.0 { (lo, hi) } else { (-hi, -lo) };
    let bands = [
        (lo + PREFERRED_BAND.0 * (hi - lo), lo + PREFERRED_BAND.1 * (hi - lo)),
        (lo, hi),
    ];
    let min_block = pr.min_block();
    let t_min = min_block.div_ceil(pr.period_p as u64).max(1);
    let s_floor = min_block.div_ceil(pr.period_q as u64).max(1);
    let mut binding = "sandwich";
    for (a, b) in bands {
        for t in t_min..=T_MAX {
            // σ·pred grows with s
            let key = |s: u64| sigma * pr.predicted_lambda(t, s);
            let Some(s_enter) = first_true(s_floor, S_MAX, |s| key(s) > a) else {
                binding = "search-bound";
                continue;
            };
            let Some(s_chi) = first_true(s_floor, S_MAX, |s| pr.chi_ok(t, s)) else {
                binding = "chi-schedule";
                continue;
            };
            let Some(s_ratio) = first_true(s_floor, S_MAX, |s| pr.bridge_ratio(t, s) < pr.eps_n) else {
                binding = "bridge-ratio";
                continue;
            };
            let s = s_enter.max(s_chi).max(s_ratio);
            if !(key(s) < b) {
                binding = if s == s_enter {
                    "sandwich"
                } else if s == s_chi {
                    "chi-schedule"
                } else {
                    "bridge-ratio"
                };
                continue;
            }
            match pr.check(t, s) {
                Ok(()) => return Ok((t, s)),
                Err(c) => binding = c,
            }
        }
    }
    Err(LabError::PlanInfeasible {
        constraint: binding.to_string(),
        detail: format!(
            "no (t, s) with t <= {T_MAX}, s <= {S_MAX} at stage {} (eps_n = {:e}, m = {})",
            pr.stage, pr.eps_n, pr.m
        ),
    })
}

/// Greedy bridge from fiber point `from` towards `to`: each symbol is the one
/// bringing the next point closest to `to` (ties to the smaller symbol), and
/// the shortest prefix achieving the smallest gap is kept.
pub fn greedy_bridge(model: &SkewProductModel, from: f64, to: f64, m_cap: usize) -> Word {
    let mut best_gap = circle_distance(from, to);
    let mut best_len = 0;
    let mut z = from;
    let mut syms = Vec::with_capacity(m_cap);
    for len in 1..=m_cap {
        if best_gap < 1e-12 {
            break;
        }
        let (s, next) = (0..model.k() as Symbol)
            .map(|s| (s, model.map(s).eval(z)))
            .min_by(|x, y| circle_distance(x.1, to).total_cmp(&circle_distance(y.1, to)))
            .expect("nonempty alphabet");
        syms.push(s);
        z = next;
        let gap = circle_distance(z, to);
        if gap < best_gap {
            best_gap = gap;
            best_len = len;
        }
    }
    syms.truncate(best_len);
    Word::new(syms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub stage: u32,
    pub m_cap: usize,
    pub c_target: Option<f64>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            stage: 1,
            m_cap: DEFAULT_M_CAP,
            c_target: Some(DEFAULT_C_TARGET),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConcatenationPlan<'a> {
    pub p: &'a PeriodicOrbit,
    pub q_prev: &'a PeriodicOrbit,
    /// `p` enters the word rotated by this many steps.
    pub p_rotation: usize,
    pub t: u64,
    pub s: u64,
    pub bridge_in: Word,
    pub bridge_out: Word,
    pub problem: PlanProblem,
}

/// Offsets of the blocks inside one period of the concatenated word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    /// End of the `p` block.
    a: usize,
    /// Start of the `q` block.
    b: usize,
    /// End of the `q` block.
    e: usize,
    len: usize,
}

impl<'a> ConcatenationPlan<'a> {
    pub fn predicted_lambda(&self) -> f64 {
        self.problem.predicted_lambda(self.t, self.s)
    }

    pub fn m(&self) -> usize {
        self.problem.m
    }

    pub fn eps_n(&self) -> f64 {
        self.problem.eps_n
    }

    pub fn period(&self) -> usize {
        self.problem.period(self.t, self.s) as usize
    }

    fn layout(&self) -> Layout {
        let a = self.t as usize * self.p.period;
        let b = a + self.bridge_in.len();
        let e = b + self.s as usize * self.q_prev.period;
        Layout {
            a,
            b,
            e,
            len: e + self.bridge_out.len(),
        }
    }

    /// `word(p)^t · bridge_in · word(q_prev)^s · bridge_out`.
    pub fn word(&self) -> Word {
        let p_word = self.p.word.rotated(self.p_rotation).repeated(self.t as usize);
        let q_word = self.q_prev.word.repeated(self.s as usize);
        Word::concat(&[&p_word, &self.bridge_in, &q_word, &self.bridge_out])
    }

    pub fn record(&self) -> PlanRecord {
        PlanRecord {
            stage: self.problem.stage,
            t: self.t,
            s: self.s,
            m: self.m(),
            bridge_in: self.bridge_in.to_string(),
            bridge_out: self.bridge_out.to_string(),
            p_word: self.p.word.rotated(self.p_rotation).to_string(),
            p_period: self.p.period,
            lambda_p: self.p.lambda_c,
            q_prev_period: self.q_prev.period,
            lambda_q_prev: self.q_prev.lambda_c,
            eps_n: self.eps_n(),
            predicted_lambda: self.predicted_lambda(),
            period: self.period(),
        }
    }
}

/// Serializable summary of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub stage: u32,
    pub t: u64,
    pub s: u64,
    pub m: usize,
    pub bridge_in: String,
    pub bridge_out: String,
    pub p_word: String,
    pub p_period: usize,
    pub lambda_p: f64,
    pub q_prev_period: usize,
    pub lambda_q_prev: f64,
    pub eps_n: f64,
    pub predicted_lambda: f64,
    pub period: usize,
}

/// Rotation of `p` whose point is closest to `target` (first one on ties).
fn best_rotation(p: &PeriodicOrbit, target: f64) -> usize {
    (0..p.period)
        .min_by(|&i, &j| {
            circle_distance(p.point(i), target).total_cmp(&circle_distance(p.point(j), target))
        })
        .unwrap_or(0)
}

pub fn plan_concatenation<'a>(
    model: &SkewProductModel,
    p: &'a PeriodicOrbit,
    q_prev: &'a PeriodicOrbit,
    s_target: f64,
    eps_n: f64,
    opts: &PlanOptions,
) -> Result<ConcatenationPlan<'a>> {
    if !s_target.is_finite() {
        return Err(LabError::Parameter(format!("target must be finite, got {s_target}")));
    }
    let q_entry = q_prev.point(0);
    let p_rotation = best_rotation(p, q_entry);
    let p_entry = p.point(p_rotation);
    let bridge_in = greedy_bridge(model, p_entry, q_entry, opts.m_cap);
    let bridge_out = greedy_bridge(model, q_entry, p_entry, opts.m_cap);
    let problem = PlanProblem {
        lambda_p: p.lambda_c,
        period_p: p.period,
        lambda_q: q_prev.lambda_c,
        period_q: q_prev.period,
        m: bridge_in.len().max(bridge_out.len()),
        bridge_total: bridge_in.len() + bridge_out.len(),
        big_m: model.log_derivative_bound(),
        s_target,
        eps_n,
        stage: opts.stage,
        c_target: opts.c_target,
    };
    let (t, s) = solve_counts(&problem)?;
    Ok(ConcatenationPlan {
        p,
        q_prev,
        p_rotation,
        t,
        s,
        bridge_in,
        bridge_out,
        problem,
    })
}

#[derive(Debug, Clone)]
pub struct StageRecord {
    pub plan: PlanRecord,
    pub orbit: PeriodicOrbit,
    /// Largest distance between the realized orbit and the pseudo-orbit.
    pub gamma: f64,
    /// Good-approximation certificate of `q_prev` by the realized orbit
    /// (absent when the plan has no `q` block).
    pub certificate: Option<GoodApproxCertificate>,
    pub chi: f64,
    pub retries: usize,
    pub density_radius: Option<f64>,
}

/// Largest distance from the realized orbit to the heteroclinic pseudo-orbit
/// `… p p p · bridge_in · q q q …` over the first half of the period and to
/// `… q q q · bridge_out · p p p …` over the second.
///
/// Each heteroclinic fiber orbit is computed in its stable direction:
/// backwards from the destination block when the source block repels,
/// forwards from the source block otherwise.
fn shadowing_error(
    model: &SkewProductModel,
    plan: &ConcatenationPlan,
    w: &[Symbol],
    orbit: &PeriodicOrbit,
) -> f64 {
    let lay = plan.layout();
    let (p, q) = (plan.p, plan.q_prev);
    let rot = plan.p_rotation as i64;
    let pp = p.period as i64;
    let pq = q.period as i64;
    let p_sym = |v: i64| p.word.symbols()[(rot + v).rem_euclid(pp) as usize];
    let p_pt = |v: i64| p.point((rot + v).rem_euclid(pp) as usize);
    let q_sym = |v: i64| q.word.symbols()[v.rem_euclid(pq) as usize];
    let w_at = |v: i64| w[v.rem_euclid(lay.len as i64) as usize];
    let (a, b, e, len) = (lay.a as i64, lay.b as i64, lay.e as i64, lay.len as i64);

    if plan.s == 0 {
        // degenerate plan: the pseudo-orbit is p itself
        return (0..lay.len)
            .map(|u| circle_distance(orbit.point(u), p_pt(u as i64)))
            .fold(0.0, f64::max);
    }

    let fiber_path = |lo: i64,
                      hi: i64,
                      backward_from: Option<(i64, f64)>,
                      forward_from: Option<(i64, f64)>,
                      anchor: &dyn Fn(i64) -> Option<f64>|
     -> Vec<f64> {
        let mut x = vec![0.0; (hi - lo) as usize];
        for u in lo..hi {
            if let Some(v) = anchor(u) {
                x[(u - lo) as usize] = v;
            }
        }
        if let Some((start, x0)) = backward_from {
            let mut y = x0;
            for u in (lo..start.min(hi)).rev() {
                y = model.map(w_at(u)).inverse(y);
                x[(u - lo) as usize] = y;
            }
        }
        if let Some((start, x0)) = forward_from {
            let mut y = x0;
            for u in start.max(lo)..hi {
                if u > start {
                    y = model.map(w_at(u - 1)).eval(y);
                }
                if u >= start {
                    x[(u - lo) as usize] = y;
                }
            }
        }
        x
    };

    // p -> q over [a/2, b + (e - b)/2)
    let x_lo = a / 2;
    let x_hi = b + (e - b) / 2;
    let x_sym = |v: i64| {
        if v < a {
            p_sym(v)
        } else if v < b {
            plan.bridge_in.symbols()[(v - a) as usize]
        } else {
            q_sym(v - b)
        }
    };
    let x_fiber = if p.lambda_c > 0.0 {
        fiber_path(x_lo, x_hi, Some((b, q.point(0))), None, &|u| {
            (u >= b).then(|| q.point((u - b) as usize))
        })
    } else {
        fiber_path(x_lo, x_hi, None, Some((a, p_pt(0))), &|u| (u <= a).then(|| p_pt(u)))
    };

    // q -> p over [b + (e - b)/2, len + a/2)
    let y_lo = x_hi;
    let y_hi = len + a / 2;
    let y_sym = |v: i64| {
        if v < e {
            q_sym(v - b)
        } else if v < len {
            plan.bridge_out.symbols()[(v - e) as usize]
        } else {
            p_sym(v - len)
        }
    };
    let y_fiber = if q.lambda_c > 0.0 {
        fiber_path(y_lo, y_hi, Some((len, p_pt(0))), None, &|u| {
            (u >= len).then(|| p_pt(u - len))
        })
    } else {
        fiber_path(y_lo, y_hi, None, Some((e, q.point(0))), &|u| {
            (u <= e).then(|| q.point((u - b) as usize))
        })
    };

    let segment = |lo: i64, hi: i64, het: &dyn Fn(i64) -> Symbol, fiber: &[f64]| -> f64 {
        let h = BASE_HORIZON as i64;
        let start = lo - h - 1;
        let span = (hi - lo + 2 * h + 2) as usize;
        let mismatch: Vec<bool> = (0..span as i64).map(|j| het(start + j) != w_at(start + j)).collect();
        let cap = h + 1;
        let mut near = vec![cap; span];
        let mut last: Option<usize> = None;
        for j in 0..span {
            if mismatch[j] {
                last = Some(j);
            }
            if let Some(l) = last {
                near[j] = ((j - l) as i64).min(cap);
            }
        }
        last = None;
        for j in (0..span).rev() {
            if mismatch[j] {
                last = Some(j);
            }
            if let Some(l) = last {
                near[j] = near[j].min(((l - j) as i64).min(cap));
            }
        }
        (lo..hi)
            .map(|u| {
                let m = near[(u - start) as usize];
                let base = if m > h { 0.0 } else { 0.5f64.powi(m as i32) };
                let fib = circle_distance(orbit.point(u.rem_euclid(len) as usize), fiber[(u - lo) as usize]);
                base.max(fib)
            })
            .fold(0.0, f64::max)
    };

    segment(x_lo, x_hi, &x_sym, &x_fiber).max(segment(y_lo, y_hi, &y_sym, &y_fiber))
}

/// Block-aligned certificate: points of the `q` block matched to `q_prev`
/// in phase, kept if they track for a full period within `gamma`.
fn block_certificate(
    plan: &ConcatenationPlan,
    orbit: &PeriodicOrbit,
    gamma: f64,
) -> Option<GoodApproxCertificate> {
    if plan.s == 0 {
        return None;
    }
    let lay = plan.layout();
    let py = plan.q_prev.period;
    let phi = lay.b % py;
    let errors = tracking_errors(orbit, plan.q_prev, phi);
    let assignment: Vec<(usize, usize)> = (lay.b..lay.e)
        .filter(|&i| errors[i] < gamma)
        .map(|i| (i, phi))
        .collect();
    let (gamma_subset, projection, per_target_count) = balanced(&assignment, py);
    if gamma_subset.is_empty() {
        return None;
    }
    let chi = gamma_subset.len() as f64 / orbit.period as f64;
    Some(GoodApproxCertificate {
        gamma,
        chi,
        gamma_subset,
        projection,
        per_target_count,
    })
}

/// Realize the plan as a genuine periodic orbit and measure how well it
/// shadows the pseudo-orbit. Block counts are doubled (up to
/// [`RETRY_CAP`] times) while the shadowing error exceeds `eps_n`.
pub fn realize_orbit(model: &SkewProductModel, plan: ConcatenationPlan) -> Result<StageRecord> {
    let mut plan = plan;
    let mut best_gamma = f64::INFINITY;
    for retries in 0..=RETRY_CAP {
        let w = plan.word();
        let guess = plan.p.point(plan.p_rotation);
        let x = fixed_point_near(model, &w, guess)?;
        let orbit = PeriodicOrbit::from_fixed_point(model, w, x)
            .map_err(|e| LabError::Realization(e.to_string()))?;
        let gamma = shadowing_error(model, &plan, orbit.word.symbols(), &orbit);
        if gamma <= plan.eps_n() {
            let certificate = block_certificate(&plan, &orbit, plan.eps_n());
            let chi = certificate.as_ref().map_or(0.0, |c| c.chi);
            return Ok(StageRecord {
                plan: plan.record(),
                orbit,
                gamma,
                certificate,
                chi,
                retries,
                density_radius: None,
            });
        }
        best_gamma = best_gamma.min(gamma);
        plan.t *= 2;
        plan.s *= 2;
    }
    Err(LabError::ShadowingFailure {
        best_gamma,
        eps: plan.eps_n(),
    })
}

#[derive(Debug, Clone)]
pub struct DenseSearch {
    pub orbit: PeriodicOrbit,
    pub radius: f64,
    pub dlambda: f64,
    /// Whether the radius bound was met.
    pub dense: bool,
}

/// Periodic orbit of `first · bridge · hi^r · bridge`, looked for near
/// `entry`, the fiber point where `first` is started.
fn blend(
    model: &SkewProductModel,
    first: &Word,
    entry: f64,
    hi: &PeriodicOrbit,
    r: usize,
    m_cap: usize,
) -> Option<PeriodicOrbit> {
    let (exit, _) = model.word_eval(first, entry).ok()?;
    let b_in = greedy_bridge(model, exit, hi.point(0), m_cap);
    let b_out = greedy_bridge(model, hi.point(0), entry, m_cap);
    let w = Word::concat(&[first, &b_in, &hi.word.repeated(r), &b_out]);
    let x = fixed_point_near(model, &w, entry).ok()?;
    PeriodicOrbit::from_fixed_point(model, w, x).ok()
}

/// De Bruijn sequence of order `n` over `k` symbols.
fn de_bruijn(k: usize, n: usize) -> Vec<Symbol> {
    fn rec(t: usize, p: usize, k: usize, n: usize, a: &mut Vec<usize>, out: &mut Vec<Symbol>) {
        if t > n {
            if n.is_multiple_of(p) {
                out.extend(a[1..=p].iter().map(|&x| x as Symbol));
            }
            return;
        }
        a[t] = a[t - p];
        rec(t + 1, p, k, n, a, out);
        for j in a[t - p] + 1..k {
            a[t] = j;
            rec(t + 1, t, k, n, a, out);
        }
    }
    let mut a = vec![0; n + 1];
    let mut out = Vec::new();
    rec(1, 1, k, n, &mut a, &mut out);
    out
}

/// Symbol-rich base words: de Bruijn sequences of small orders, plain and
/// doubled with a marker symbol so each window is also read in a second
/// fiber context.
fn tour_words(k: usize, depth: usize) -> Vec<Word> {
    let mut out = Vec::new();
    for order in 2..=depth.clamp(2, 6) {
        if k.pow(order as u32) > 512 {
            break;
        }
        let d = de_bruijn(k, order);
        out.push(Word::new(d.clone()));
        if k > 1 {
            let mut twice = d.clone();
            twice.push(1);
            twice.extend_from_slice(&d);
            twice.push(1);
            out.push(Word::new(twice));
        }
    }
    out
}

/// Repetition counts `r` for which `first · hi^r` has average exponent
/// closest to `target`, given the estimate `lambda_first` for `first`.
fn blend_counts(len_first: usize, lambda_first: f64, hi: &PeriodicOrbit, target: f64) -> Vec<usize> {
    if !((lambda_first - target) * (hi.lambda_c - target) < 0.0) {
        return Vec::new();
    }
    let exact = len_first as f64 * (target - lambda_first)
        / (hi.period as f64 * (hi.lambda_c - target));
    let mut out: Vec<usize> = [exact.floor(), exact.ceil()]
        .iter()
        .map(|&r| r.max(1.0) as usize)
        .filter(|&r| len_first + r * hi.period <= BLEND_MAX_LEN)
        .collect();
    out.dedup();
    out
}

/// A saddle of the requested index with exponent within `delta` of the
/// target, as dense as possible. Candidates are the pool orbits themselves
/// and blends of a pool orbit below the target with one above it.
///
/// Returns the best candidate meeting the exponent window, flagged by
/// whether it also meets `eps_dense`; errors with not-found if no candidate
/// meets the exponent window.
pub fn search_dense_saddle(
    model: &SkewProductModel,
    pool: &[PeriodicOrbit],
    lambda_target: f64,
    eps_dense: f64,
    delta: f64,
    index: OrbitIndex,
    grid: &SampleGrid,
) -> Result<DenseSearch> {
    let same: Vec<&PeriodicOrbit> = pool.iter().filter(|o| o.index == index).collect();
    let lo_end = same.iter().map(|o| o.lambda_c).fold(f64::INFINITY, f64::min);
    let hi_end = same.iter().map(|o| o.lambda_c).fold(f64::NEG_INFINITY, f64::max);
    if !(lambda_target > lo_end && lambda_target < hi_end) {
        return Err(LabError::Precondition(format!(
            "target {lambda_target} is not inside the observed {} spectrum [{lo_end}, {hi_end}]",
            index.as_str()
        )));
    }
    if !(delta > 0.0 && eps_dense > 0.0) {
        return Err(LabError::Parameter("delta and eps_dense must be positive".into()));
    }

    let radii: Vec<f64> = same
        .par_iter()
        .map(|o| orbit_density_radius(model, o, grid))
        .collect();
    let pick = |below: bool| -> Vec<usize> {
        let side: Vec<usize> = (0..same.len())
            .filter(|&i| (same[i].lambda_c < lambda_target) == below)
            .collect();
        let mut by_radius = side.clone();
        by_radius.sort_by(|&i, &j| radii[i].total_cmp(&radii[j]).then(i.cmp(&j)));
        let mut by_gap = side.clone();
        by_gap.sort_by(|&i, &j| {
            (same[i].lambda_c - lambda_target)
                .abs()
                .total_cmp(&(same[j].lambda_c - lambda_target).abs())
                .then(i.cmp(&j))
        });
        let mut by_far = side;
        by_far.sort_by(|&i, &j| {
            (same[j].lambda_c - lambda_target)
                .abs()
                .total_cmp(&(same[i].lambda_c - lambda_target).abs())
                .then(i.cmp(&j))
        });
        let mut out: Vec<usize> = by_radius.into_iter().take(3).collect();
        out.extend(by_gap.into_iter().take(2));
        out.extend(by_far.into_iter().take(1));
        let mut seen = std::collections::BTreeSet::new();
        out.retain(|i| seen.insert(*i));
        out
    };
    let lows = pick(true);
    let highs = pick(false);

    let mut candidates: Vec<PeriodicOrbit> = same.iter().map(|&o| o.clone()).collect();
    // (first word, entry point, corrector, repetitions)
    let mut jobs: Vec<(Word, f64, usize, usize)> = Vec::new();
    for &i in &lows {
        for &j in &highs {
            let (lo, hi) = (same[i], same[j]);
            let mut options: Vec<(f64, usize, usize)> = Vec::new();
            for u in 1..=32usize {
                for r in blend_counts(u * lo.period, lo.lambda_c, hi, lambda_target) {
                    let (lu, lr) = (u as f64 * lo.period as f64, r as f64 * hi.period as f64);
                    let pred = (lu * lo.lambda_c + lr * hi.lambda_c) / (lu + lr);
                    options.push(((pred - lambda_target).abs(), u, r));
                }
            }
            options.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            for &(_, u, r) in options.iter().take(2) {
                let rot = best_rotation(lo, hi.point(0));
                jobs.push((lo.word.rotated(rot).repeated(u), lo.point(rot), j, r));
            }
        }
    }
    for tour in tour_words(model.k(), grid.depth) {
        for &j in lows.iter().chain(&highs) {
            let c = same[j];
            let entry = c.point(0);
            let Ok((_, sum)) = model.word_eval(&tour, entry) else { continue };
            for r in blend_counts(tour.len(), sum / tour.len() as f64, c, lambda_target) {
                jobs.push((tour.clone(), entry, j, r));
            }
        }
    }
    let blends: Vec<Option<PeriodicOrbit>> = jobs
        .par_iter()
        .map(|(first, entry, j, r)| blend(model, first, *entry, same[*j], *r, DEFAULT_M_CAP))
        .collect();
    candidates.extend(blends.into_iter().flatten());

    let scored: Vec<(f64, f64, usize)> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let dl = (o.lambda_c - lambda_target).abs();
            let valid = o.index == index && dl < delta;
            let radius = if valid {
                orbit_density_radius(model, o, grid)
            } else {
                f64::INFINITY
            };
            (radius, dl, i)
        })
        .collect();

    let best = scored
        .iter()
        .filter(|s| s.0.is_finite())
        .min_by(|x, y| {
            x.0.total_cmp(&y.0)
                .then(candidates[x.2].period.cmp(&candidates[y.2].period))
                .then(x.1.total_cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });
    match best {
        Some(&(radius, dlambda, i)) => Ok(DenseSearch {
            orbit: candidates[i].clone(),
            radius,
            dlambda,
            dense: radius <= eps_dense,
        }),
        None => Err(LabError::NotFound {
            radius: f64::INFINITY,
            dlambda: scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min),
        }),
    }
}

/// Like [`search_dense_saddle`] but insists on the radius bound.
pub fn find_dense_saddle(
    model: &SkewProductModel,
    pool: &[PeriodicOrbit],
    lambda_target: f64,
    eps_dense: f64,
    delta: f64,
    index: OrbitIndex,
    grid: &SampleGrid,
) -> Result<PeriodicOrbit> {
    let found = search_dense_saddle(model, pool, lambda_target, eps_dense, delta, index, grid)?;
    if found.dense {
        Ok(found.orbit)
    } else {
        Err(LabError::NotFound {
            radius: found.radius,
            dlambda: found.dlambda,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiknOptions {
    pub grid: SampleGrid,
    pub m_cap: usize,
    pub c_target: Option<f64>,
    /// Period cap of the saddle pool used to pick the `p_n`.
    pub pool_max_period: usize,
}

impl Default for GiknOptions {
    fn default() -> Self {
        Self {
            grid: SampleGrid { depth: 4, bins: 32 },
            m_cap: DEFAULT_M_CAP,
            c_target: Some(DEFAULT_C_TARGET),
            pool_max_period: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: u32,
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone)]
pub struct StageSaddle {
    pub orbit: PeriodicOrbit,
    pub radius: f64,
    pub dense: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `λ^c` of `q_0, …, q_N`.
    pub lambdas: Vec<f64>,
    pub predicted: Vec<f64>,
    pub gammas: Vec<f64>,
    pub chis: Vec<f64>,
    pub radii: Vec<f64>,
    /// `λ^c_{q_n} - s < (λ^c_{q_{n-1}} - s)/2` (mirrored for negative targets) at every stage.
    pub sandwich_ok: bool,
    /// `γ_n <= eps / 2^n` at every stage.
    pub gamma_schedule_ok: bool,
    /// Largest relative deviation of the realized exponent from the prediction.
    pub max_prediction_error: f64,
    /// `max_n 2^n (1 - χ_n)`.
    pub fitted_c: f64,
    /// The same fit without the last stage.
    pub fitted_c_previous: Option<f64>,
    pub chi_product: f64,
    /// Stages whose `p_n` and `q_n` met the density radius `eps / 2^n`.
    pub density_met: Vec<bool>,
    /// `|λ^c_{q_N} - s| / |λ^c_{q_0} - s|`.
    pub contraction: f64,
    /// The target 0 is not a hyperbolic exponent.
    pub nonhyperbolic_target: bool,
}

#[derive(Debug, Clone)]
pub struct GiknRun {
    pub s_target: f64,
    pub eps: f64,
    pub stages: u32,
    pub q0: PeriodicOrbit,
    /// `p_0` followed by the saddle chosen at each stage.
    pub saddles: Vec<StageSaddle>,
    pub records: Vec<StageRecord>,
    pub summary: RunSummary,
    pub failure: Option<StageFailure>,
}

impl GiknRun {
    pub fn orbits(&self) -> Vec<&PeriodicOrbit> {
        std::iter::once(&self.q0)
            .chain(self.records.iter().map(|r| &r.orbit))
            .collect()
    }
}

fn fitted_c(chis: &[f64]) -> f64 {
    chis.iter()
        .enumerate()
        .map(|(i, c)| 2f64.powi(i as i32 + 1) * (1.0 - c))
        .fold(0.0, f64::max)
}

fn summarize(run_s: f64, eps: f64, q0: &PeriodicOrbit, saddles: &[StageSaddle], records: &[StageRecord]) -> RunSummary {
    let sigma = if run_s >= 0.0 { 1.0 } else { -1.0 };
    let mut lambdas = vec![q0.lambda_c];
    lambdas.extend(records.iter().map(|r| r.orbit.lambda_c));
    let sandwich_ok = lambdas.windows(2).all(|w| {
        let (prev, cur) = (sigma * (w[0] - run_s), sigma * (w[1] - run_s));
        cur > 0.0 && cur < prev / 2.0
    });
    let gammas: Vec<f64> = records.iter().map(|r| r.gamma).collect();
    let gamma_schedule_ok = gammas
        .iter()
        .enumerate()
        .all(|(i, g)| *g <= eps / 2f64.powi(i as i32 + 1));
    let chis: Vec<f64> = records.iter().map(|r| r.chi).collect();
    let radii: Vec<f64> = records.iter().map(|r| r.density_radius.unwrap_or(f64::NAN)).collect();
    let predicted: Vec<f64> = records.iter().map(|r| r.plan.predicted_lambda).collect();
    let max_prediction_error = records
        .iter()
        .map(|r| ((r.orbit.lambda_c - r.plan.predicted_lambda) / r.plan.predicted_lambda).abs())
        .fold(0.0, f64::max);
    let density_met = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let eps_n = eps / 2f64.powi(i as i32 + 1);
            saddles.get(i + 1).is_some_and(|p| p.dense) && r.density_radius.is_some_and(|d| d <= eps_n)
        })
        .collect();
    let last = *lambdas.last().expect("q0 present");
    RunSummary {
        fitted_c: fitted_c(&chis),
        fitted_c_previous: (chis.len() > 1).then(|| fitted_c(&chis[..chis.len() - 1])),
        chi_product: chis.iter().product(),
        lambdas,
        predicted,
        gammas,
        chis,
        radii,
        sandwich_ok,
        gamma_schedule_ok,
        max_prediction_error,
        density_met,
        contraction: (last - run_s).abs() / (q0.lambda_c - run_s).abs(),
        nonhyperbolic_target: run_s == 0.0,
    }
}

/// Run `stages` concatenation stages from the seeds `p0`, `q0`.
///
/// Precondition problems are errors. A stage that fails ends the run early;
/// the completed stages are returned together with the failure.
pub fn run_gikn(
    model: &SkewProductModel,
    s_target: f64,
    stages: u32,
    eps: f64,
    p0: &PeriodicOrbit,
    q0: &PeriodicOrbit,
    opts: &GiknOptions,
) -> Result<GiknRun> {
    if !s_target.is_finite() {
        return Err(LabError::Parameter(format!("target must be finite, got {s_target}")));
    }
    if stages == 0 {
        return Err(LabError::Parameter("at least one stage is required".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(LabError::Parameter(format!("eps must be in (0, 1], got {eps}")));
    }
    if p0.index != q0.index {
        return Err(LabError::Precondition(format!(
            "seed orbits have different indices ({} and {})",
            p0.index.as_str(),
            q0.index.as_str()
        )));
    }
    let sigma = if s_target >= 0.0 { 1.0 } else { -1.0 };
    if !(sigma * p0.lambda_c < sigma * s_target && sigma * s_target < sigma * q0.lambda_c) {
        return Err(LabError::Precondition(format!(
            "target {s_target} is not strictly between the seed exponents {} and {}",
            p0.lambda_c, q0.lambda_c
        )));
    }
    let grid = opts.grid;
    let pool: Vec<PeriodicOrbit> = enumerate_periodic_orbits(model, opts.pool_max_period)
        .orbits
        .into_iter()
        .filter(|o| o.index == p0.index)
        .collect();

    let mut saddles = vec![StageSaddle {
        orbit: p0.clone(),
        radius: orbit_density_radius(model, p0, &grid),
        dense: false,
    }];
    let mut records: Vec<StageRecord> = Vec::new();
    let mut failure = None;

    for n in 1..=stages {
        let eps_n = eps / 2f64.powi(n as i32);
        let stage = (|| -> Result<(StageSaddle, StageRecord)> {
            let p_prev = &saddles.last().expect("seed saddle").orbit;
            let window = 0.5 * (s_target - p_prev.lambda_c).abs();
            let target = p_prev.lambda_c + sigma * 0.25 * window;
            let found = search_dense_saddle(
                model,
                &pool,
                target,
                eps_n,
                0.25 * window,
                p0.index,
                &grid,
            )?;
            let saddle = StageSaddle {
                orbit: found.orbit,
                radius: found.radius,
                dense: found.dense,
            };
            let q_prev = records.last().map_or(q0, |r| &r.orbit);
            let plan = plan_concatenation(
                model,
                &saddle.orbit,
                q_prev,
                s_target,
                eps_n,
                &PlanOptions {
                    stage: n,
                    m_cap: opts.m_cap,
                    c_target: opts.c_target,
                },
            )?;
            let mut record = realize_orbit(model, plan)?;
            let lam = sigma * (record.orbit.lambda_c - s_target);
            let prev = sigma * (q_prev.lambda_c - s_target);
            if !(lam > 0.0 && lam < prev / 2.0) {
                return Err(LabError::Realization(format!(
                    "realized exponent {} left the window between {s_target} and {}",
                    record.orbit.lambda_c,
                    0.5 * (s_target + q_prev.lambda_c)
                )));
            }
            if record.certificate.is_none() {
                return Err(LabError::Realization(
                    "no point of the realized orbit tracks the previous orbit".into(),
                ));
            }
            record.density_radius = Some(orbit_density_radius(model, &record.orbit, &grid));
            Ok((saddle, record))
        })();
        match stage {
            Ok((saddle, record)) => {
                saddles.push(saddle);
                records.push(record);
            }
            Err(e) => {
                failure = Some(StageFailure {
                    stage: n,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                    exit_code: e.exit_code(),
                });
                break;
            }
        }
    }

    let summary = summarize(s_target, eps, q0, &saddles, &records);
    Ok(GiknRun {
        s_target,
        eps,
        stages,
        q0: q0.clone(),
        saddles,
        records,
        summary,
        failure,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub depth: usize,
    pub bins: usize,
    /// Sorted cell ids `cylinder * bins + bin`.
    pub cells: Vec<usize>,
    pub fraction: f64,
}

/// Finite-resolution support of the limit measure: for each `k`, the cells
/// touched by the orbits `X_l`, `l >= k`, dilated by one fiber bin within
/// their cylinder; intersected over `k`.
pub fn support_estimate(
    model: &SkewProductModel,
    orbits: &[&PeriodicOrbit],
    grid: &SampleGrid,
) -> Result<SupportEstimate> {
    if orbits.is_empty() {
        return Err(LabError::Parameter("support estimate needs at least one orbit".into()));
    }
    let k = model.k();
    let total = grid.cell_count(k);
    let g = grid.bins;
    let dilate = |cells: &[bool]| -> Vec<bool> {
        let mut out = cells.to_vec();
        for (c, &on) in cells.iter().enumerate() {
            if on && g > 1 {
                let (cyl, bin) = (c / g, c % g);
                out[cyl * g + (bin + 1) % g] = true;
                out[cyl * g + (bin + g - 1) % g] = true;
            }
        }
        out
    };
    let touched: Vec<Vec<bool>> = orbits
        .par_iter()
        .map(|o| {
            let mut cells = vec![false; total];
            for i in 0..o.period {
                cells[grid.cell_of(k, o, i)] = true;
            }
            cells
        })
        .collect();
    let mut union = vec![false; total];
    let mut support = vec![true; total];
    for cells in touched.iter().rev() {
        for (u, &c) in union.iter_mut().zip(cells) {
            *u |= c;
        }
        for (s, d) in support.iter_mut().zip(dilate(&union)) {
            *s &= d;
        }
    }
    let cells: Vec<usize> = (0..total).filter(|&c| support[c]).collect();
    Ok(SupportEstimate {
        depth: grid.depth,
        bins: grid.bins,
        fraction: cells.len() as f64 / total as f64,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::verify_certificate;

    fn problem() -> PlanProblem {
        PlanProblem {
            lambda_p: 0.2,
            period_p: 2,
            lambda_q: 0.6,
            period_q: 3,
            m: 2,
            bridge_total: 4,
            big_m: 1.0,
            s_target: 0.4,
            eps_n: 0.1,
            stage: 1,
            c_target: None,
        }
    }

    #[test]
    fn hand_checked_plan_is_feasible() {
        let pr = problem();
        let pred = pr.predicted_lambda(30, 20);
        assert!((pred - 52.0 / 124.0).abs() < 1e-12);
        assert!((pr.bridge_ratio(30, 20) - 4.0 / 52.0).abs() < 1e-12);
        assert_eq!(pr.check(30, 20), Ok(()));
    }

    #[test]
    fn search_returns_a_feasible_pair() {
        let pr = problem();
        let (t, s) = solve_counts(&pr).unwrap();
        assert_eq!(pr.check(t, s), Ok(()));
        // brute force: no smaller t puts the prediction in the preferred band
        let (lo, hi) = pr.sandwich();
        let mid = |x: f64| x > lo + PREFERRED_BAND.0 * (hi - lo) && x < lo + PREFERRED_BAND.1 * (hi - lo);
        for t2 in 1..t {
            assert!((1..2000).all(|s2| pr.check(t2, s2).is_err() || !mid(pr.predicted_lambda(t2, s2))));
        }
    }

    #[test]
    fn equal_exponents_violate_the_straddle() {
        let mut pr = problem();
        pr.lambda_p = 0.4;
        pr.lambda_q = 0.4;
        assert!(matches!(solve_counts(&pr), Err(LabError::Precondition(_))));
    }

    #[test]
    fn tiny_eps_is_infeasible() {
        let mut pr = problem();
        pr.eps_n = 1e-9;
        match solve_counts(&pr) {
            Err(LabError::PlanInfeasible { constraint, .. }) => {
                assert!(constraint == "bridge-ratio" || constraint == "search-bound", "{constraint}")
            }
            other => panic!("expected infeasible plan, got {other:?}"),
        }
    }

    #[test]
    fn negative_targets_mirror() {
        let pr = PlanProblem {
            lambda_p: -0.2,
            lambda_q: -0.6,
            s_target: -0.4,
            ..problem()
        };
        let (t, s) = solve_counts(&pr).unwrap();
        let pred = pr.predicted_lambda(t, s);
        assert!(pred < -0.4 && pred > -0.5, "{pred}");
    }

    #[test]
    fn identity_concatenation() {
        let m = SkewProductModel::reference();
        let p = PeriodicOrbit::from_fixed_point(&m, "0011".parse().unwrap(), 0.0).unwrap();
        let plan = ConcatenationPlan {
            p: &p,
            q_prev: &p,
            p_rotation: 0,
            t: 1,
            s: 0,
            bridge_in: Word::new(vec![]),
            bridge_out: Word::new(vec![]),
            problem: PlanProblem {
                lambda_p: p.lambda_c,
                period_p: p.period,
                lambda_q: p.lambda_c,
                period_q: p.period,
                m: 0,
                bridge_total: 0,
                big_m: m.log_derivative_bound(),
                s_target: 0.0,
                eps_n: 0.1,
                stage: 1,
                c_target: None,
            },
        };
        let rec = realize_orbit(&m, plan).unwrap();
        assert_eq!(rec.gamma, 0.0);
        assert_eq!(rec.orbit.word, p.word);
        assert_eq!(rec.orbit.points(), p.points());
    }

    #[test]
    fn bridges_close_fiber_gaps_greedily() {
        let m = SkewProductModel::reference();
        // symbol 1 sends 0 to 1/2 exactly
        assert_eq!(greedy_bridge(&m, 0.0, 0.5, 4).to_string(), "1");
        assert!(greedy_bridge(&m, 0.25, 0.25, 4).is_empty());
        assert!(greedy_bridge(&m, 0.0, 0.5, 0).is_empty());
    }

    #[test]
    fn stage_one_on_the_reference_model() {
        let m = SkewProductModel::reference();
        let e = enumerate_periodic_orbits(&m, 10);
        let q0 = e
            .orbits
            .iter()
            .find(|o| o.word.to_string() == "0" && o.fiber_x == 0.0)
            .unwrap();
        let p = e
            .orbits
            .iter()
            .filter(|o| o.index == OrbitIndex::Repelling && o.lambda_c < 0.35)
            .max_by(|a, b| a.lambda_c.total_cmp(&b.lambda_c))
            .unwrap();
        let plan = plan_concatenation(&m, p, q0, 0.4, 0.2, &PlanOptions::default()).unwrap();
        let pred = plan.predicted_lambda();
        let period = plan.period();
        let expected_len = plan.t as usize * p.period
            + plan.s as usize * q0.period
            + plan.bridge_in.len()
            + plan.bridge_out.len();
        let rec = realize_orbit(&m, plan).unwrap();
        assert_eq!(rec.orbit.period, period);
        assert_eq!(rec.orbit.period, expected_len);
        assert!(((rec.orbit.lambda_c - pred) / pred).abs() < 0.05);
        assert!(rec.orbit.lambda_c > 0.4 && rec.orbit.lambda_c < 0.5 * (0.4 + q0.lambda_c));
        assert!(rec.gamma <= 0.2);
        let cert = rec.certificate.as_ref().unwrap();
        assert!(verify_certificate(&m, &rec.orbit, q0, cert).unwrap().valid);
    }

    #[test]
    fn dense_saddle_examples() {
        let m = SkewProductModel::reference();
        let pool = enumerate_periodic_orbits(&m, 8).orbits;
        let grid = SampleGrid::new(4, 32).unwrap();
        let o = find_dense_saddle(&m, &pool, 0.3, 0.25, 0.05, OrbitIndex::Repelling, &grid).unwrap();
        assert!(orbit_density_radius(&m, &o, &grid) <= 0.25);
        let recomputed = crate::orbits::center_exponent(&m, &o);
        assert!((recomputed - 0.3).abs() < 0.05);

        let any = find_dense_saddle(&m, &pool, 0.05, 1.0, 1.0, OrbitIndex::Repelling, &grid).unwrap();
        assert_eq!(any.index, OrbitIndex::Repelling);

        assert!(matches!(
            find_dense_saddle(&m, &pool, 2.0, 0.25, 0.05, OrbitIndex::Repelling, &grid),
            Err(LabError::Precondition(_))
        ));
    }

    #[test]
    fn support_of_a_repeated_stage() {
        let m = SkewProductModel::reference();
        let o = PeriodicOrbit::from_fixed_point(&m, "0".parse().unwrap(), 0.0).unwrap();
        let grid = SampleGrid::new(2, 8).unwrap();
        let est = support_estimate(&m, &[&o, &o, &o], &grid).unwrap();
        // cylinder "00", bin 0 and its two fiber neighbours
        assert_eq!(est.cells, vec![0, 1, 7]);
        assert!((est.fraction - 3.0 / 32.0).abs() < 1e-15);

        let coarse = SampleGrid::new(0, 1).unwrap();
        let est = support_estimate(&m, &[&o], &coarse).unwrap();
        assert_eq!(est.fraction, 1.0);
    }

    #[test]
    fn run_preconditions() {
        let m = SkewProductModel::reference();
        let e = enumerate_periodic_orbits(&m, 6);
        let q0 = e.orbits.iter().find(|o| o.word.to_string() == "0" && o.fiber_x == 0.0).unwrap();
        let p0 = e
            .orbits
            .iter()
            .find(|o| o.index == OrbitIndex::Repelling && o.lambda_c < 0.35)
            .unwrap();
        let opts = GiknOptions::default();
        assert!(matches!(
            run_gikn(&m, 0.5, 1, 0.4, p0, q0, &opts),
            Err(LabError::Precondition(_))
        ));
        assert!(run_gikn(&m, 0.4, 0, 0.4, p0, q0, &opts).is_err());
        assert!(run_gikn(&m, 0.4, 1, 0.0, p0, q0, &opts).is_err());
    }

    #[test]
    fn single_stage_run() {
        let m = SkewProductModel::reference();
        let e = enumerate_periodic_orbits(&m, 10);
        let q0 = e.orbits.iter().find(|o| o.word.to_string() == "0" && o.fiber_x == 0.0).unwrap();
        let p0 = e
            .orbits
            .iter()
            .filter(|o| o.index == OrbitIndex::Repelling)
            .min_by(|a, b| (a.lambda_c - 0.3).abs().total_cmp(&(b.lambda_c - 0.3).abs()))
            .unwrap();
        let run = run_gikn(&m, 0.4, 1, 0.4, p0, q0, &GiknOptions::default()).unwrap();
        assert!(run.failure.is_none(), "{:?}", run.failure);
        let l1 = run.records[0].orbit.lambda_c;
        assert!(l1 > 0.4 && l1 < 0.5 * (0.4 + q0.lambda_c));
        assert!(run.summary.sandwich_ok);
    }
}
