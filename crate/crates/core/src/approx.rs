//! Good approximations between periodic orbits.
//!
//! `X` is a `(γ, χ)`-good approximation of `Y` when a subset `Γ` of the
//! points of `X` with `|Γ| / π(X) >= χ` admits a projection `ρ: Γ → Y` such
//! that `d(f^j x, f^j ρ(x)) < γ` for `0 <= j < π(Y)` and every point of `Y`
//! has the same number of preimages.
//!
//! Tracking is decided per phase offset: if `ρ(i) = (i - φ) mod π(Y)`, the
//! pairs compared along the orbit are the unrolled positions `u` of `X`
//! matched with `u - φ` on `Y`, and the condition for `x_i` is a window
//! maximum of the pointwise distance over `u ∈ [i, i + π(Y))`.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{circle_distance, SkewProductModel, BASE_HORIZON};
use crate::orbits::PeriodicOrbit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodApproxCertificate {
    pub gamma: f64,
    pub chi: f64,
    /// Indices of the points of `X` in `Γ`, ascending.
    pub gamma_subset: Vec<usize>,
    /// `projection[r]` is the index in `Y` of `ρ(gamma_subset[r])`.
    pub projection: Vec<usize>,
    pub per_target_count: usize,
}

impl GoodApproxCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    Tracking {
        x: usize,
        y: usize,
        step: usize,
        distance: f64,
    },
    Fraction {
        achieved: f64,
        claimed: f64,
    },
    UnequalCount {
        y: usize,
        count: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub valid: bool,
    pub violation: Option<Violation>,
}

/// Pointwise distances `D(u)` between `X` at unrolled position `u` and `Y`
/// at `u - phi`, for `u ∈ [0, len)`.
fn pointwise_distances(x: &PeriodicOrbit, y: &PeriodicOrbit, phi: usize, len: usize) -> Vec<f64> {
    let h = BASE_HORIZON as i64;
    let px = x.period as i64;
    let py = y.period as i64;
    let xs = x.word.symbols();
    let ys = y.word.symbols();
    let span = len as i64 + 2 * h + 2;
    let mismatch: Vec<bool> = (0..span)
        .map(|v| {
            let u = v - h - 1;
            xs[u.rem_euclid(px) as usize] != ys[(u - phi as i64).rem_euclid(py) as usize]
        })
        .collect();
    // distance to the nearest mismatch, capped at h + 1
    let cap = h + 1;
    let mut left = vec![cap; span as usize];
    let mut last: Option<i64> = None;
    for v in 0..span {
        if mismatch[v as usize] {
            last = Some(v);
        }
        if let Some(l) = last {
            left[v as usize] = (v - l).min(cap);
        }
    }
    let mut right = vec![cap; span as usize];
    let mut next: Option<i64> = None;
    for v in (0..span).rev() {
        if mismatch[v as usize] {
            next = Some(v);
        }
        if let Some(n) = next {
            right[v as usize] = (n - v).min(cap);
        }
    }
    (0..len)
        .map(|u| {
            let v = u + h as usize + 1;
            let m = left[v].min(right[v]);
            let base = if m > h { 0.0 } else { 0.5f64.powi(m as i32) };
            let fiber = circle_distance(
                x.point(u),
                y.point((u as i64 - phi as i64).rem_euclid(py) as usize),
            );
            base.max(fiber)
        })
        .collect()
}

/// Sliding maximum of `values` over windows of length `w`; entry `i` covers
/// `values[i..i + w]`.
fn window_max(values: &[f64], w: usize) -> Vec<f64> {
    let n = values.len() + 1 - w;
    let mut out = Vec::with_capacity(n);
    let mut dq: VecDeque<usize> = VecDeque::new();
    for (i, &v) in values.iter().enumerate() {
        while dq.back().is_some_and(|&j| values[j] <= v) {
            dq.pop_back();
        }
        dq.push_back(i);
        if dq[0] + w <= i {
            dq.pop_front();
        }
        if i + 1 >= w {
            out.push(values[dq[0]]);
        }
    }
    out
}

/// For phase offset `phi`, the worst distance over `π(Y)` steps for each
/// starting point of `X`.
pub fn tracking_errors(x: &PeriodicOrbit, y: &PeriodicOrbit, phi: usize) -> Vec<f64> {
    let len = x.period + y.period - 1;
    let d = pointwise_distances(x, y, phi, len);
    window_max(&d, y.period)
}

fn offset_of(i: usize, target: usize, py: usize) -> usize {
    (i as i64 - target as i64).rem_euclid(py as i64) as usize
}

fn validate(
    model: &SkewProductModel,
    x: &PeriodicOrbit,
    y: &PeriodicOrbit,
    cert: &GoodApproxCertificate,
) -> Result<()> {
    model.check_word(&x.word)?;
    model.check_word(&y.word)?;
    let bad = |msg: String| Err(LabError::MalformedCertificate(msg));
    if !(cert.gamma > 0.0) || !cert.gamma.is_finite() {
        return bad(format!("gamma must be positive, got {}", cert.gamma));
    }
    if !(cert.chi > 0.0 && cert.chi <= 1.0) {
        return bad(format!("chi must be in (0, 1], got {}", cert.chi));
    }
    if cert.gamma_subset.len() != cert.projection.len() {
        return bad("gamma_subset and projection differ in length".into());
    }
    if cert.gamma_subset.windows(2).any(|p| p[0] >= p[1]) {
        return bad("gamma_subset must be strictly ascending".into());
    }
    if let Some(&i) = cert.gamma_subset.iter().find(|&&i| i >= x.period) {
        return bad(format!("index {i} outside X (period {})", x.period));
    }
    if let Some(&j) = cert.projection.iter().find(|&&j| j >= y.period) {
        return bad(format!("target {j} outside Y (period {})", y.period));
    }
    Ok(())
}

/// Checks the three defining conditions literally. Malformed input is an
/// error; a well-formed certificate that fails a condition yields
/// `valid = false` with the first violation found.
pub fn verify_certificate(
    model: &SkewProductModel,
    x: &PeriodicOrbit,
    y: &PeriodicOrbit,
    cert: &GoodApproxCertificate,
) -> Result<Verification> {
    validate(model, x, y, cert)?;
    let fail = |v: Violation| {
        Ok(Verification {
            valid: false,
            violation: Some(v),
        })
    };

    let mut by_offset: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (&i, &j) in cert.gamma_subset.iter().zip(&cert.projection) {
        by_offset
            .entry(offset_of(i, j, y.period))
            .or_default()
            .push((i, j));
    }
    for (&phi, members) in &by_offset {
        let errors = tracking_errors(x, y, phi);
        if let Some(&(i, j)) = members.iter().find(|&&(i, _)| !(errors[i] < cert.gamma)) {
            let d = pointwise_distances(x, y, phi, i + y.period);
            let step = (0..y.period).find(|&s| !(d[i + s] < cert.gamma)).unwrap_or(0);
            return fail(Violation::Tracking {
                x: i,
                y: j,
                step,
                distance: d[i + step],
            });
        }
    }

    let achieved = cert.gamma_subset.len() as f64 / x.period as f64;
    if achieved < cert.chi {
        return fail(Violation::Fraction {
            achieved,
            claimed: cert.chi,
        });
    }

    let mut counts = vec![0usize; y.period];
    for &j in &cert.projection {
        counts[j] += 1;
    }
    if let Some((j, &c)) = counts
        .iter()
        .enumerate()
        .find(|&(_, &c)| c != cert.per_target_count)
    {
        return fail(Violation::UnequalCount {
            y: j,
            count: c,
            expected: cert.per_target_count,
        });
    }
    Ok(Verification {
        valid: true,
        violation: None,
    })
}

/// Equal-count certificate from an assignment `i -> offset`; each target keeps
/// its `min count` smallest preimages.
pub(crate) fn balanced(assignment: &[(usize, usize)], py: usize) -> (Vec<usize>, Vec<usize>, usize) {
    let mut per_target: Vec<Vec<usize>> = vec![Vec::new(); py];
    for &(i, phi) in assignment {
        per_target[(i as i64 - phi as i64).rem_euclid(py as i64) as usize].push(i);
    }
    let count = per_target.iter().map(Vec::len).min().unwrap_or(0);
    let mut pairs: Vec<(usize, usize)> = per_target
        .iter_mut()
        .enumerate()
        .flat_map(|(j, v)| {
            v.sort_unstable();
            v.iter().take(count).map(move |&i| (i, j)).collect::<Vec<_>>()
        })
        .collect();
    pairs.sort_unstable();
    let (gs, ps) = pairs.into_iter().unzip();
    (gs, ps, count)
}

/// Points of `X` that track `Y` at some phase offset, per offset.
pub fn tracking_sets(x: &PeriodicOrbit, y: &PeriodicOrbit, gamma: f64) -> Vec<Vec<usize>> {
    (0..y.period)
        .into_par_iter()
        .map(|phi| {
            tracking_errors(x, y, phi)
                .iter()
                .enumerate()
                .filter(|(_, &e)| e < gamma)
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

/// Search for a certificate with `χ >= chi_min`. Phase classes are filled
/// greedily (largest tracking set first) and then each target's preimage
/// list is truncated to the common minimum; the best single phase class is
/// tried as well and the larger `Γ` wins.
pub fn search_certificate(
    model: &SkewProductModel,
    x: &PeriodicOrbit,
    y: &PeriodicOrbit,
    gamma: f64,
    chi_min: f64,
) -> Result<Option<GoodApproxCertificate>> {
    if !(gamma > 0.0) {
        return Err(LabError::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    if !(chi_min > 0.0 && chi_min <= 1.0) {
        return Err(LabError::Parameter(format!("chi_min must be in (0, 1], got {chi_min}")));
    }
    model.check_word(&x.word)?;
    model.check_word(&y.word)?;
    let py = y.period;
    let sets = tracking_sets(x, y, gamma);

    let mut order: Vec<usize> = (0..py).collect();
    order.sort_by(|&a, &b| sets[b].len().cmp(&sets[a].len()).then(a.cmp(&b)));
    let mut taken = vec![false; x.period];
    let mut greedy = Vec::new();
    for &phi in &order {
        for &i in &sets[phi] {
            if !taken[i] {
                taken[i] = true;
                greedy.push((i, phi));
            }
        }
    }
    let mut best = balanced(&greedy, py);
    if let Some(&phi) = order.first() {
        let single: Vec<(usize, usize)> = sets[phi].iter().map(|&i| (i, phi)).collect();
        let candidate = balanced(&single, py);
        if candidate.0.len() > best.0.len() {
            best = candidate;
        }
    }
    let (gamma_subset, projection, per_target_count) = best;
    if gamma_subset.is_empty() {
        return Ok(None);
    }
    let chi = gamma_subset.len() as f64 / x.period as f64;
    if chi < chi_min {
        return Ok(None);
    }
    Ok(Some(GoodApproxCertificate {
        gamma,
        chi,
        gamma_subset,
        projection,
        per_target_count,
    }))
}

/// Upper bound on any achievable `χ`: fraction of points tracking at some phase.
pub fn chi_upper_bound(x: &PeriodicOrbit, y: &PeriodicOrbit, gamma: f64) -> f64 {
    let mut any = vec![false; x.period];
    for set in tracking_sets(x, y, gamma) {
        for i in set {
            any[i] = true;
        }
    }
    any.iter().filter(|&&b| b).count() as f64 / x.period as f64
}
