//! Weighted Sturm–Liouville eigenvalues `−((cos θ)^a Θ′)′ = μ (cos θ)^a Θ`
//! on `(0, π/2)` and their truncations.
//!
//! The problem is discretized in `s = π/2 − θ` (weight `sin^a s`) with
//! linear finite elements. Near a Dirichlet end at `s = δ → 0` the
//! eigenvalue depends on `δ` only through `log δ`, so the mesh is geometric
//! there and uniform elsewhere.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

pub const DEFAULT_POINTS: usize = 2000;
/// Graded part of the mesh ends here.
const GRADING_END: f64 = 0.05;
const MAX_INVERSE_ITERATIONS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// `Θ(δ) = 0`, natural condition at `π/2`.
    OneSided,
    /// `Θ(δ) = Θ(π/2 − δ) = 0`.
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighResult {
    pub a: f64,
    pub delta: f64,
    pub boundary: Boundary,
    pub mu: f64,
    /// Nodes in `θ`, ascending.
    pub theta: Vec<f64>,
    /// Eigenfunction at `theta`, positive, maximum 1.
    pub values: Vec<f64>,
}

/// Mesh on `[lo, hi]` in `s`, geometric from `lo` when `lo` is small.
fn mesh(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if lo <= 0.0 || lo >= 0.25 * GRADING_END {
        return (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    }
    let graded = points / 2;
    let uniform = points - graded;
    let ratio = (GRADING_END / lo).powf(1.0 / graded as f64);
    let mut s: Vec<f64> = (0..graded).map(|i| lo * ratio.powi(i as i32)).collect();
    s.extend((0..uniform).map(|i| GRADING_END + (hi - GRADING_END) * i as f64 / (uniform - 1) as f64));
    s
}

/// Tridiagonal `(lower, diag, upper)` stiffness and mass matrices.
struct Tridiagonal {
    k: (Vec<f64>, Vec<f64>, Vec<f64>),
    m: (Vec<f64>, Vec<f64>, Vec<f64>),
}

fn assemble(s: &[f64], a: f64) -> Tridiagonal {
    let n = s.len();
    let (gx, gw) = gauss_legendre(4);
    let mut k = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut m = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for e in 0..n - 1 {
        let (s0, s1) = (s[e], s[e + 1]);
        let len = s1 - s0;
        let (mut w0, mut m00, mut m01, mut m11) = (0.0, 0.0, 0.0, 0.0);
        for (x, w) in gx.iter().zip(&gw) {
            let t = 0.5 * (x + 1.0);
            let weight = (s0 + t * len).sin().powf(a) * 0.5 * w * len;
            w0 += weight;
            m00 += weight * (1.0 - t) * (1.0 - t);
            m01 += weight * (1.0 - t) * t;
            m11 += weight * t * t;
        }
        let kk = w0 / (len * len);
        k.1[e] += kk;
        k.1[e + 1] += kk;
        k.2[e] -= kk;
        k.0[e + 1] -= kk;
        m.1[e] += m00;
        m.1[e + 1] += m11;
        m.2[e] += m01;
        m.0[e + 1] += m01;
    }
    Tridiagonal { k, m }
}

fn tri_apply(t: &(Vec<f64>, Vec<f64>, Vec<f64>), x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut v = t.1[i] * x[i];
            if i > 0 {
                v += t.0[i] * x[i - 1];
            }
            if i + 1 < n {
                v += t.2[i] * x[i + 1];
            }
            v
        })
        .collect()
}

/// Thomas algorithm; the stiffness matrix is SPD once a Dirichlet node is
/// removed.
fn tri_solve(t: &(Vec<f64>, Vec<f64>, Vec<f64>), rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = t.2[0] / t.1[0];
    d[0] = rhs[0] / t.1[0];
    for i in 1..n {
        let den = t.1[i] - t.0[i] * c[i - 1];
        c[i] = t.2[i] / den;
        d[i] = (rhs[i] - t.0[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn restrict(t: &(Vec<f64>, Vec<f64>, Vec<f64>), keep: std::ops::Range<usize>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = (t.0[keep.clone()].to_vec(), t.1[keep.clone()].to_vec(), t.2[keep].to_vec());
    out.0[0] = 0.0;
    let last = out.2.len() - 1;
    out.2[last] = 0.0;
    out
}

/// Smallest eigenvalue by inverse iteration with `points` mesh nodes.
pub fn rayleigh_min_with(a: f64, delta: f64, boundary: Boundary, points: usize) -> Result<RayleighResult> {
    if !(0.0..0.5).contains(&delta) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta = {delta} outside [0, 0.5)")));
    }
    if !(a >= 0.0) {
        return Err(Error::InvalidArgument(format!("weight exponent {a} must be nonnegative")));
    }
    if points < 10 {
        return Err(Error::InvalidArgument("at least 10 mesh points required".into()));
    }
    // s = π/2 − θ; Θ(θ = δ) = 0 sits at s = π/2 − δ
    let (lo, hi) = match boundary {
        Boundary::OneSided => (0.0, FRAC_PI_2 - delta),
        Boundary::TwoSided => {
            if delta == 0.0 {
                return Err(Error::InvalidArgument("two-sided truncation needs delta > 0".into()));
            }
            (delta, FRAC_PI_2 - delta)
        }
    };
    let s = mesh(lo, hi, points);
    let full = assemble(&s, a);
    let first = if boundary == Boundary::TwoSided { 1 } else { 0 };
    let keep = first..s.len() - 1;
    let k = restrict(&full.k, keep.clone());
    let m = restrict(&full.m, keep.clone());
    let n = keep.len();
    let mut v = vec![1.0; n];
    let mut mu = f64::INFINITY;
    for _ in 0..MAX_INVERSE_ITERATIONS {
        let mv = tri_apply(&m, &v);
        let mut x = tri_solve(&k, &mv);
        let norm = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        x.iter_mut().for_each(|t| *t /= norm);
        let kx = tri_apply(&k, &x);
        let mx = tri_apply(&m, &x);
        let next = dot(&x, &kx) / dot(&x, &mx);
        v = x;
        let done = (next - mu).abs() <= 1e-15 * next;
        mu = next;
        if done {
            break;
        }
    }
    if !mu.is_finite() {
        return Err(Error::Rejected(format!("eigenvalue iteration broke down at delta = {delta:e}")));
    }
    let mut values = vec![0.0; s.len()];
    values[keep].copy_from_slice(&v);
    let sign = if values.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let peak = values.iter().map(|t| t * sign).fold(f64::MIN, f64::max);
    values.iter_mut().for_each(|t| *t *= sign / peak);
    // ascending θ
    let theta: Vec<f64> = s.iter().rev().map(|x| FRAC_PI_2 - x).collect();
    values.reverse();
    Ok(RayleighResult { a, delta, boundary, mu, theta, values })
}

pub fn rayleigh_min(a: f64, delta: f64, boundary: Boundary) -> Result<RayleighResult> {
    rayleigh_min_with(a, delta, boundary, DEFAULT_POINTS)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `μ_α = (n − m + α/4)(1 + α/4)` with `n − m = a + 1`.
pub fn perturbed_target(a: f64, alpha: f64) -> f64 {
    (a + 1.0 + alpha / 4.0) * (1.0 + alpha / 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSearch {
    pub target: f64,
    pub delta: f64,
    pub mu: f64,
    pub bisections: usize,
}

/// Two-sided truncation `δ` with `μ(δ) = target`, by bisection in `log δ`
/// over `[delta_min, delta_max]`.
pub fn delta_for_eigenvalue(a: f64, target: f64, delta_min: f64, delta_max: f64, tol_mu: f64) -> Result<DeltaSearch> {
    let mu_at = |ld: f64| rayleigh_min(a, ld.exp(), Boundary::TwoSided).map(|r| r.mu);
    let (mut lo, mut hi) = (delta_min.ln(), delta_max.ln());
    let (mu_lo, mu_hi) = (mu_at(lo)?, mu_at(hi)?);
    if !(mu_lo < target && target < mu_hi) {
        return Err(Error::InvalidBracket(format!(
            "μ({delta_min:e}) = {mu_lo}, μ({delta_max:e}) = {mu_hi} do not bracket {target}"
        )));
    }
    let mut bisections = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        let mu = mu_at(mid)?;
        bisections += 1;
        if (mu - target).abs() <= tol_mu || bisections >= 200 {
            return Ok(DeltaSearch { target, delta: mid.exp(), mu, bisections });
        }
        if mu < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sided_eigenpair_is_two_and_sine() {
        let r = rayleigh_min(1.0, 0.0, Boundary::OneSided).unwrap();
        assert!((r.mu - 2.0).abs() < 1e-6, "{}", r.mu);
        let err = r.theta.iter().zip(&r.values).map(|(t, v)| (v - t.sin()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
        assert!(r.values[1..].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn one_sided_value_is_n_minus_m() {
        // Θ = sin θ gives ∫cos^{a+2}/∫cos^a sin² = a + 1
        for a in [2.0, 3.0] {
            let r = rayleigh_min(a, 0.0, Boundary::OneSided).unwrap();
            assert!((r.mu - (a + 1.0)).abs() < 1e-5, "{a}: {}", r.mu);
        }
    }

    #[test]
    fn two_sided_decreases_toward_two() {
        let mus: Vec<f64> =
            [0.2, 0.1, 0.05, 0.025].iter().map(|&d| rayleigh_min(1.0, d, Boundary::TwoSided).unwrap().mu).collect();
        assert!(mus.windows(2).all(|w| w[1] < w[0]), "{mus:?}");
        assert!(mus.iter().all(|&m| m > 2.0));
    }

    #[test]
    fn mesh_refinement_is_second_order() {
        let mu = |n| rayleigh_min_with(1.0, 0.1, Boundary::TwoSided, n).unwrap().mu;
        let (a, b, c) = (mu(250), mu(500), mu(1000));
        let ratio = (a - b) / (b - c);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn perturbed_eigenvalue_has_a_truncation() {
        let target = perturbed_target(1.0, 0.1);
        assert!((target - 2.075625).abs() < 1e-12);
        let found = delta_for_eigenvalue(1.0, target, (-200f64).exp(), 0.2, 1e-5).unwrap();
        assert!((found.mu - target).abs() < 1e-4);
        // μ − 2 ~ c / log(1/δ): the truncation is exponentially small
        assert!(found.delta < 1e-10 && found.delta > 1e-30, "{}", found.delta);
    }

    #[test]
    fn rejects_bad_truncation() {
        assert!(rayleigh_min(1.0, 0.5, Boundary::TwoSided).is_err());
        assert!(rayleigh_min(1.0, 0.0, Boundary::TwoSided).is_err());
    }
}
