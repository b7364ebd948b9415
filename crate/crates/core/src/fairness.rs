//! Held-out fairness estimators, interval scoring and one-dimensional
//! distribution distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LossSpec, Params, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Di,
    Dm,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Di => "di",
            Criterion::Dm => "dm",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HeldoutCounts {
    pub n0: usize,
    pub n1: usize,
    pub n0minus: usize,
    pub n1minus: usize,
}

impl HeldoutCounts {
    pub fn from_samples(dtilde: &[Sample]) -> Self {
        let mut c = Self::default();
        for s in dtilde {
            let neg = s.y == -1;
            if s.z == 0 {
                c.n0 += 1;
                c.n0minus += usize::from(neg);
            } else {
                c.n1 += 1;
                c.n1minus += usize::from(neg);
            }
        }
        c
    }

    pub fn check(&self, criterion: Criterion) -> Result<()> {
        let (a, b, la, lb) = match criterion {
            Criterion::Di => (self.n0, self.n1, "z=0", "z=1"),
            Criterion::Dm => (self.n0minus, self.n1minus, "z=0,y=-1", "z=1,y=-1"),
        };
        if a == 0 {
            return Err(Error::EmptyGroup(la.into()));
        }
        if b == 0 {
            return Err(Error::EmptyGroup(lb.into()));
        }
        Ok(())
    }
}

fn group_gap<'a>(
    theta: &Params,
    rows: impl Iterator<Item = &'a Sample>,
    spec: &LossSpec,
) -> Result<f64> {
    let mut pos = [0usize; 2];
    let mut tot = [0usize; 2];
    for s in rows {
        let g = usize::from(s.z);
        tot[g] += 1;
        if spec.decision_value(theta, &s.x)? > 0.0 {
            pos[g] += 1;
        }
    }
    let r0 = pos[0] as f64 / tot[0] as f64;
    let r1 = pos[1] as f64 / tot[1] as f64;
    Ok((r0 - r1).abs())
}

/// Absolute gap in positive-prediction rates between the two sensitive groups.
pub fn phi_di_hat(theta: &Params, dtilde: &[Sample], spec: &LossSpec) -> Result<f64> {
    HeldoutCounts::from_samples(dtilde).check(Criterion::Di)?;
    group_gap(theta, dtilde.iter(), spec)
}

/// Absolute gap in false-positive rates, computed over the `y = −1` rows.
pub fn phi_dm_hat(theta: &Params, dtilde: &[Sample], spec: &LossSpec) -> Result<f64> {
    HeldoutCounts::from_samples(dtilde).check(Criterion::Dm)?;
    group_gap(theta, dtilde.iter().filter(|s| s.y == -1), spec)
}

pub fn phi_hat(criterion: Criterion, theta: &Params, dtilde: &[Sample], spec: &LossSpec) -> Result<f64> {
    match criterion {
        Criterion::Di => phi_di_hat(theta, dtilde, spec),
        Criterion::Dm => phi_dm_hat(theta, dtilde, spec),
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `1 + (n−1)p`). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput("quantile sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", "must lie in [0, 1]"));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    quantile_sorted(&sorted_copy(values)?, p)
}

fn sorted_copy(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("sample values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Mean interval score of `[lower, upper]` against `samples` at level `alpha`.
pub fn mis(lower: f64, upper: f64, samples: &[f64], alpha: f64) -> Result<f64> {
    if lower > upper {
        return Err(Error::invalid("lower", "must not exceed upper"));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("interval score sample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    let mut over = 0.0;
    let mut under = 0.0;
    for &s in samples {
        if s > upper {
            over += s - upper;
        } else if s < lower {
            under += lower - s;
        }
    }
    let scale = 2.0 / (samples.len() as f64 * alpha);
    Ok(upper - lower + scale * (over + under))
}

/// Quantile function at level `p` using mid-point plotting positions: level
/// `(i − 0.5)/n` maps exactly onto the i-th order statistic, with linear
/// interpolation in between and clamping at the ends.
fn midpoint_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 * p - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Wasserstein-2 distance between two empirical distributions on the line.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("w2 sample"));
    }
    let a = sorted_copy(a)?;
    let b = sorted_copy(b)?;
    let sum: f64 = if a.len() == b.len() {
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum()
    } else {
        let m = a.len().max(b.len());
        (1..=m)
            .map(|i| {
                let p = (i as f64 - 0.5) / m as f64;
                (midpoint_quantile(&a, p) - midpoint_quantile(&b, p)).powi(2)
            })
            .sum()
    };
    Ok((sum / a.len().max(b.len()) as f64).sqrt())
}

/// Kolmogorov-Smirnov distance `sup |F_a − F_b|` between empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("ks sample"));
    }
    let a = sorted_copy(a)?;
    let b = sorted_copy(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}
