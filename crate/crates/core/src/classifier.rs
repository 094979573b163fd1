//! Contact sets, free boundaries and blow-up classification of free
//! boundary points.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::{least_squares, KernelStratum, QuadraticBlowup};
use crate::grid::{BoxDomain, GridField, Probe, RELIABLE_RADIUS_CELLS};
use crate::monotonicity::{radial_profile, radius_schedule, RadialProfile, RADIUS_RATIO};
use crate::solver::contact_threshold;

/// Anomalous iff `λ_* < 3 − ANOMALOUS_SLACK`.
pub const ANOMALOUS_SLACK: f64 = 0.1;
/// Largest slope/plateau disagreement accepted by `estimate_frequency`.
pub const MAX_DISAGREEMENT: f64 = 0.2;
/// Relative residual above which a blow-up model is rejected.
pub const FIT_REJECT: f64 = 0.2;
/// Residuals within this relative margin are decided by contact density.
pub const TIE_MARGIN: f64 = 0.1;
pub const COARSE_ANGLES_2D: usize = 720;
pub const COARSE_POINTS_3D: usize = 1024;
pub const NEWTON_STEPS: usize = 10;

/// Nodes with `u ≤ ε` on the grid of `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMask {
    pub domain: BoxDomain,
    pub h: f64,
    pub extents: Vec<usize>,
    pub strides: Vec<usize>,
    pub marked: Vec<bool>,
}

pub fn contact_mask(u: &GridField, eps: f64) -> ContactMask {
    ContactMask {
        domain: u.domain().clone(),
        h: u.h(),
        extents: u.extents().to_vec(),
        strides: u.strides().to_vec(),
        marked: u.values().iter().map(|&v| v <= eps).collect(),
    }
}

impl ContactMask {
    pub fn count(&self) -> usize {
        self.marked.iter().filter(|&&m| m).count()
    }

    fn node(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut x = vec![0.0; self.extents.len()];
        for a in 0..self.extents.len() {
            let i = rem / self.strides[a];
            rem %= self.strides[a];
            x[a] = self.domain.lower()[a] + (i as f64 + 0.5) * self.h;
        }
        x
    }

    /// Centers of marked nodes.
    pub fn marked_points(&self) -> Vec<Vec<f64>> {
        (0..self.marked.len()).filter(|&i| self.marked[i]).map(|i| self.node(i)).collect()
    }
}

/// Midpoints of the faces separating marked from unmarked nodes.
pub fn free_boundary_points(mask: &ContactMask) -> Result<Vec<Vec<f64>>> {
    let count = mask.count();
    if count == 0 || count == mask.marked.len() {
        return Err(Error::Rejected("no free boundary: contact mask is empty or full".into()));
    }
    let d = mask.extents.len();
    let mut out = Vec::new();
    for i in 0..mask.marked.len() {
        let mut rem = i;
        for a in 0..d {
            let ia = rem / mask.strides[a];
            rem %= mask.strides[a];
            if ia + 1 < mask.extents[a] {
                let j = i + mask.strides[a];
                if mask.marked[i] != mask.marked[j] {
                    let mut x = mask.node(i);
                    x[a] += 0.5 * mask.h;
                    out.push(x);
                }
            }
        }
    }
    Ok(out)
}

/// Blow-up data `r^{-2} u(x0 + r ω)` on the probe's sphere samples.
struct BlowupData {
    dirs: Vec<Vec<f64>>,
    weights: Vec<f64>,
    values: Vec<f64>,
    norm: f64,
}

/// `x0` padded with zeros to the probe dimension.
fn ball_center(probe: &dyn Probe, x0: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; probe.dim()];
    for (a, v) in x0.iter().enumerate().take(probe.dim()) {
        c[a] = *v;
    }
    c
}

fn sample_scaled(probe: &dyn Probe, u: &GridField, x0: &[f64], r: f64, power: i32) -> Result<BlowupData> {
    probe.check(x0, r)?;
    let c = ball_center(probe, x0);
    let samples = probe.samples();
    let mut x = vec![0.0; probe.dim()];
    let mut values = Vec::with_capacity(samples.len());
    for dir in samples.directions() {
        for a in 0..x.len() {
            x[a] = c[a] + r * dir[a];
        }
        values.push(probe.value(u, &x)? / r.powi(power));
    }
    let weights = samples.weights().to_vec();
    let norm = weights.iter().zip(&values).map(|(w, v)| w * v * v).sum::<f64>().sqrt();
    Ok(BlowupData { dirs: samples.directions().to_vec(), weights, values, norm })
}

impl BlowupData {
    /// `‖data − model‖ / ‖data‖` in the quadrature norm.
    fn relative_residual(&self, model: impl Fn(&[f64]) -> f64) -> f64 {
        let err: f64 = self
            .dirs
            .iter()
            .zip(&self.weights)
            .zip(&self.values)
            .map(|((d, w), v)| {
                let e = v - model(d);
                w * e * e
            })
            .sum();
        if self.norm == 0.0 {
            return if err == 0.0 { 0.0 } else { f64::INFINITY };
        }
        err.sqrt() / self.norm
    }

    fn halfspace_residual(&self, e: &[f64]) -> f64 {
        self.relative_residual(|w| {
            let s: f64 = w.iter().zip(e).map(|(a, b)| a * b).sum();
            0.5 * s.max(0.0).powi(2)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceFit {
    pub e: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: QuadraticBlowup,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Halfspace,
    Quadratic,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupFit {
    pub r_fit: f64,
    pub halfspace: HalfspaceFit,
    pub quadratic: QuadraticFit,
    pub best: Model,
}

/// Unit directions for the coarse search: a circle or a spherical spiral.
fn coarse_directions(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        2 => (0..COARSE_ANGLES_2D)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / COARSE_ANGLES_2D as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let n = COARSE_POINTS_3D;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    let mut v = vec![rho * t.cos(), rho * t.sin(), z];
                    v.resize(dim, 0.0);
                    v
                })
                .collect()
        }
    }
}

/// Orthonormal tangent basis at the unit vector `e`.
fn tangent_basis(e: &[f64]) -> Vec<Vec<f64>> {
    let d = e.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..d {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        let mut proj: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
        for (vi, ei) in v.iter_mut().zip(e) {
            *vi -= proj * ei;
        }
        for b in &basis {
            proj = v.iter().zip(b).map(|(a, b)| a * b).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= proj * bi;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
        if basis.len() == d - 1 {
            break;
        }
    }
    basis
}

/// Exponential map on the sphere at `e` along `Σ t_k b_k`.
fn sphere_step(e: &[f64], basis: &[Vec<f64>], t: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; e.len()];
    for (tk, b) in t.iter().zip(basis) {
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi += tk * bi;
        }
    }
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len == 0.0 {
        return e.to_vec();
    }
    e.iter().zip(&v).map(|(ei, vi)| ei * len.cos() + vi / len * len.sin()).collect()
}

fn fit_halfspace(data: &BlowupData, dim: usize) -> HalfspaceFit {
    let mut best_e = vec![0.0; dim];
    let mut best = f64::INFINITY;
    for e in coarse_directions(dim) {
        let r = data.halfspace_residual(&e);
        if r < best {
            best = r;
            best_e = e;
        }
    }
    // Newton on the squared residual in tangent coordinates, with
    // difference quotients and a backtracking guard
    let step = 1e-4;
    let objective = |e: &[f64]| data.halfspace_residual(e).powi(2);
    for _ in 0..NEWTON_STEPS {
        let basis = tangent_basis(&best_e);
        let k = basis.len();
        let f0 = objective(&best_e);
        let mut grad = vec![0.0; k];
        let mut hess = vec![vec![0.0; k]; k];
        let at = |t: &[f64]| objective(&sphere_step(&best_e, &basis, t));
        for i in 0..k {
            let mut t = vec![0.0; k];
            t[i] = step;
            let fp = at(&t);
            t[i] = -step;
            let fm = at(&t);
            grad[i] = (fp - fm) / (2.0 * step);
            hess[i][i] = (fp - 2.0 * f0 + fm) / (step * step);
            for j in 0..i {
                let mut acc = 0.0;
                for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    let mut t = vec![0.0; k];
                    t[i] = si * step;
                    t[j] = sj * step;
                    acc += sign * at(&t);
                }
                hess[i][j] = acc / (4.0 * step * step);
                hess[j][i] = hess[i][j];
            }
        }
        let delta = match solve_small(&hess, &grad) {
            Some(d) => d.iter().map(|x| -x).collect::<Vec<_>>(),
            None => break,
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let t: Vec<f64> = delta.iter().map(|x| x * scale).collect();
            let cand = sphere_step(&best_e, &basis, &t);
            if objective(&cand) < f0 {
                best_e = cand;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let residual = data.halfspace_residual(&best_e);
    HalfspaceFit { e: best_e, residual }
}

/// Dense solve for tiny symmetric systems; `None` when singular.
fn solve_small(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let v = nalgebra::DVector::from_column_slice(b);
    m.lu().solve(&v).map(|x| x.iter().copied().collect())
}

/// Least squares for `½ ω·Aω` with `tr A = 1` eliminated through
/// `A_dd = 1 − Σ_{i<d} A_ii`.
fn fit_quadratic(data: &BlowupData, dim: usize) -> Result<QuadraticFit> {
    let d = dim;
    let mut rows = Vec::with_capacity(data.dirs.len());
    let mut rhs = Vec::with_capacity(data.dirs.len());
    for ((w, sw), y) in data.dirs.iter().zip(&data.weights).zip(&data.values) {
        let s = sw.sqrt();
        let mut row = Vec::new();
        for i in 0..d - 1 {
            row.push(s * 0.5 * (w[i] * w[i] - w[d - 1] * w[d - 1]));
        }
        for i in 0..d {
            for j in i + 1..d {
                row.push(s * w[i] * w[j]);
            }
        }
        rows.push(row);
        rhs.push(s * (y - 0.5 * w[d - 1] * w[d - 1]));
    }
    let coef = least_squares(&rows, &rhs).ok_or_else(|| Error::Rejected("quadratic fit is singular".into()))?;
    let mut e = vec![0.0; d * d];
    let mut trace = 0.0;
    for i in 0..d - 1 {
        e[i * d + i] = coef[i];
        trace += coef[i];
    }
    e[(d - 1) * d + d - 1] = 1.0 - trace;
    let mut k = d - 1;
    for i in 0..d {
        for j in i + 1..d {
            e[i * d + j] = coef[k];
            e[j * d + i] = coef[k];
            k += 1;
        }
    }
    let a = QuadraticBlowup::unchecked(d, e)?;
    let residual = data.relative_residual(|w| a.eval(w));
    Ok(QuadraticFit { a, residual })
}

/// Fits both blow-up models to `r^{-2} u(x0 + r ω)`.
pub fn fit_blowup(probe: &dyn Probe, u: &GridField, x0: &[f64], r_fit: f64) -> Result<BlowupFit> {
    let data = sample_scaled(probe, u, x0, r_fit, 2)?;
    let dim = probe.dim();
    let halfspace = fit_halfspace(&data, dim);
    let quadratic = fit_quadratic(&data, dim)?;
    let best = if halfspace.residual > FIT_REJECT && quadratic.residual > FIT_REJECT {
        Model::Neither
    } else if halfspace.residual < quadratic.residual {
        Model::Halfspace
    } else {
        Model::Quadratic
    };
    Ok(BlowupFit { r_fit, halfspace, quadratic, best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyMethod {
    Slope,
    Plateau,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    pub value: f64,
    pub method: FrequencyMethod,
    pub window: (f64, f64),
    /// RMS residual of the log-log line fit.
    pub residual: f64,
    pub disagreement: f64,
    pub slope: f64,
    pub plateau: f64,
    /// Set when the two estimators disagree by more than `MAX_DISAGREEMENT`.
    pub unresolved: bool,
}

/// Least-squares line `y = a + b x`; returns `(b, rms residual)`.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Rejected("degenerate abscissae".into()));
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let rms = (xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok((b, rms))
}

/// `λ_*` from a profile built with `w = u − p_*`: half the log-log slope of
/// `H` and the mean of `φ` over `window` (default: the smallest decade of
/// valid radii).
pub fn estimate_frequency(profile: &RadialProfile, window: Option<(f64, f64)>) -> Result<FrequencyEstimate> {
    let valid: Vec<_> = profile.valid_rows().filter(|r| r.h.is_some() && r.phi.is_some()).collect();
    if valid.len() < 8 {
        return Err(Error::WindowTooShort(valid.len()));
    }
    let (lo, hi) = window.unwrap_or_else(|| {
        let r_min = valid.iter().map(|r| r.r).fold(f64::INFINITY, f64::min);
        (r_min, 10.0 * r_min)
    });
    let rows: Vec<_> = valid.into_iter().filter(|r| r.r >= lo * (1.0 - 1e-9) && r.r <= hi * (1.0 + 1e-9)).collect();
    if rows.len() < 4 {
        return Err(Error::WindowTooShort(rows.len()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.r.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.h.unwrap().ln()).collect();
    let (b, residual) = line_fit(&xs, &ys)?;
    let slope = 0.5 * b;
    let plateau = rows.iter().map(|r| r.phi.unwrap()).sum::<f64>() / rows.len() as f64;
    let disagreement = (slope - plateau).abs();
    let unresolved = disagreement > MAX_DISAGREEMENT;
    Ok(FrequencyEstimate {
        value: plateau,
        method: FrequencyMethod::Combined,
        window: (lo, hi),
        residual,
        disagreement,
        slope,
        plateau,
        unresolved,
    })
}

/// Radii `[lo, hi]` over which `fine` and `coarse` (the same problem at
/// spacings `h` and `2h`) agree: starting from the largest radius both
/// carry, rows are accepted while `|φ_fine − φ_coarse| ≤ tol`. Radii are
/// matched to a relative `1e-9`; `None` when fewer than four rows agree.
pub fn resolved_window(fine: &RadialProfile, coarse: &RadialProfile, tol: f64) -> Option<(f64, f64)> {
    let mut accepted = Vec::new();
    for row in fine.valid_rows() {
        let Some(twin) = coarse.valid_rows().find(|c| (c.r - row.r).abs() <= 1e-9 * row.r) else {
            if accepted.is_empty() {
                continue;
            }
            break;
        };
        match (row.phi, twin.phi) {
            (Some(a), Some(b)) if (a - b).abs() <= tol => accepted.push(row.r),
            _ => break,
        }
    }
    (accepted.len() >= 4).then(|| (accepted[accepted.len() - 1], accepted[0]))
}

/// Log-log slope of the contact density against `r`, or `+∞` when the
/// density vanishes at every radius.
pub fn density_exponent(profile: &RadialProfile, window: Option<(f64, f64)>) -> Result<f64> {
    let (lo, hi) = window.unwrap_or((0.0, f64::INFINITY));
    let pts: Vec<(f64, f64)> = profile
        .rows
        .iter()
        .filter(|r| r.r >= lo * (1.0 - 1e-9) && r.r <= hi * (1.0 + 1e-9))
        .filter_map(|r| r.density.map(|d| (r.r, d)))
        .collect();
    let nonzero: Vec<(f64, f64)> = pts.iter().copied().filter(|&(_, d)| d > 0.0).collect();
    if nonzero.is_empty() && !pts.is_empty() {
        return Ok(f64::INFINITY);
    }
    if nonzero.len() < 3 {
        return Err(Error::TooFewPoints(nonzero.len()));
    }
    let xs: Vec<f64> = nonzero.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = nonzero.iter().map(|p| p.1.ln()).collect();
    Ok(line_fit(&xs, &ys)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Generic,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Regular,
    Singular,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub halfspace: f64,
    pub quadratic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointClassification {
    pub x0: Vec<f64>,
    pub kind: Kind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<f64>>,
    #[serde(rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<FrequencyEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub residuals: Residuals,
    #[serde(skip)]
    pub stratum: Option<KernelStratum>,
    #[serde(skip)]
    pub profile: Option<RadialProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Fit radius; defaults to the smallest reliable radius `4h`.
    pub r_fit: Option<f64>,
    /// Largest profile radius for the frequency estimate.
    pub r_max: f64,
    pub frequency_window: Option<(f64, f64)>,
    /// Kernel directions not represented in the probe geometry (the
    /// `m − 1` trivial coordinates of an axisymmetric reduction).
    pub extra_kernel_dims: usize,
    pub eigen_threshold: f64,
    /// Blow-up to measure the frequency against; defaults to the fit.
    pub reference: Option<QuadraticBlowup>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            r_fit: None,
            r_max: 0.4,
            frequency_window: None,
            extra_kernel_dims: 0,
            eigen_threshold: crate::fixtures::KERNEL_EIGEN_THRESHOLD,
            reference: None,
        }
    }
}

/// Regular / singular decision, stratum and `λ_*` at `x0`.
pub fn classify_point(probe: &dyn Probe, u: &GridField, x0: &[f64], cfg: &ClassifyConfig) -> Result<PointClassification> {
    let h = u.h();
    let r_fit = cfg.r_fit.unwrap_or(RELIABLE_RADIUS_CELLS * h);
    let fit = fit_blowup(probe, u, x0, r_fit)?;
    let residuals = Residuals { halfspace: fit.halfspace.residual, quadratic: fit.quadratic.residual };
    let mut out = PointClassification {
        x0: x0.to_vec(),
        kind: Kind::Unresolved,
        e: None,
        a: None,
        m: None,
        lambda_star: None,
        label: None,
        reason: None,
        residuals,
        stratum: None,
        profile: None,
    };
    let (hs, qd) = (fit.halfspace.residual, fit.quadratic.residual);
    let model = if fit.best == Model::Neither {
        out.reason = Some(format!("both blow-up residuals above {FIT_REJECT}"));
        return Ok(out);
    } else if (hs - qd).abs() <= TIE_MARGIN * hs.max(qd) {
        let density = crate::monotonicity::contact_density(probe, u, x0, r_fit, contact_threshold(h))?;
        if (0.3..=0.7).contains(&density) {
            Model::Halfspace
        } else if density < 0.1 {
            Model::Quadratic
        } else {
            out.reason = Some(format!("tied residuals and contact density {density:.3}"));
            return Ok(out);
        }
    } else {
        fit.best
    };
    if model == Model::Halfspace {
        out.kind = Kind::Regular;
        out.e = Some(fit.halfspace.e);
        return Ok(out);
    }
    let a = fit.quadratic.a;
    let stratum = a.kernel_with(cfg.eigen_threshold);
    out.kind = Kind::Singular;
    out.m = Some(stratum.m + cfg.extra_kernel_dims);
    out.a = Some((0..a.dim()).map(|i| (0..a.dim()).map(|j| a.get(i, j)).collect()).collect());
    out.stratum = Some(stratum);
    let radii = radius_schedule(cfg.r_max, RADIUS_RATIO, h);
    let center = ball_center(probe, x0);
    let pa = cfg.reference.clone().unwrap_or_else(|| a.clone());
    let p = move |x: &[f64]| pa.eval(x);
    let profile = profile_on_probe(probe, u, &p, &center, x0, &radii)?;
    match estimate_frequency(&profile, cfg.frequency_window) {
        Ok(est) => {
            if est.unresolved {
                out.kind = Kind::Unresolved;
                out.reason = Some(format!("frequency estimators disagree by {:.3}", est.disagreement));
            } else {
                out.label = Some(if est.value < 3.0 - ANOMALOUS_SLACK { Label::Anomalous } else { Label::Generic });
            }
            out.lambda_star = Some(est);
        }
        Err(e) => {
            out.kind = Kind::Unresolved;
            out.reason = Some(e.to_string());
        }
    }
    out.profile = Some(profile);
    Ok(out)
}

/// Profile about `x0` with `p` given in ball coordinates. For reduced
/// probes the deviation is formed on the meridian grid, where the ball
/// point `(z, y)` corresponds to the node `(z, |y|)`.
fn profile_on_probe(
    probe: &dyn Probe,
    u: &GridField,
    p: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    x0: &[f64],
    radii: &[f64],
) -> Result<RadialProfile> {
    if probe.dim() == u.dim() {
        return radial_profile(probe, u, Some(p), center, radii);
    }
    let d = probe.dim();
    let meridian = move |x: &[f64]| {
        let mut y = vec![0.0; d];
        y[0] = x[0];
        y[1] = x[1];
        p(&y)
    };
    radial_profile(probe, u, Some(&meridian), x0, radii)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThirdOrderFit {
    /// Coefficient of `3 s² y − y³` in coordinates `s` along `L`, `y` normal.
    pub coefficient: f64,
    pub normal: Vec<f64>,
    pub tangent: Vec<f64>,
    pub residual: f64,
    /// Set when the fit residual exceeded one half and `q` was zeroed.
    pub rejected: bool,
    /// `(r, H₃(r, v))`, radii descending.
    pub h3: Vec<(f64, f64)>,
    /// Most negative `ΔH₃ / Δr` over adjacent radii (0 if none).
    pub worst_negative_slope: f64,
}

impl ThirdOrderFit {
    /// `q(x)` in the original coordinates relative to `x0`.
    pub fn q(&self, x: &[f64]) -> f64 {
        let s = x[0] * self.tangent[0] + x[1] * self.tangent[1];
        let y = x[0] * self.normal[0] + x[1] * self.normal[1];
        self.coefficient * (3.0 * s * s * y - y * y * y)
    }
}

/// Cubic blow-up fit of `(u − p_*)` at `x0` in 2D and the `H₃(r, v)`
/// profile of `v = u − p_* − q` along `radii`.
pub fn third_order_fit(
    probe: &dyn Probe,
    u: &GridField,
    p_star: &QuadraticBlowup,
    x0: &[f64],
    r_fit: f64,
    radii: &[f64],
) -> Result<ThirdOrderFit> {
    if u.dim() != 2 || probe.dim() != 2 {
        return Err(Error::InvalidArgument("third-order fit is two-dimensional".into()));
    }
    let stratum = p_star.kernel();
    if stratum.m != 1 {
        return Err(Error::InvalidArgument(format!("third-order fit needs m = 1, got m = {}", stratum.m)));
    }
    let tangent = stratum.kernel_basis[0].clone();
    let normal = stratum.complement_basis[0].clone();
    let v = crate::monotonicity::deviation(u, x0, &|x| p_star.eval(x));
    let data = sample_scaled(probe, &v, x0, r_fit, 3)?;
    let basis = |w: &[f64]| {
        let s = w[0] * tangent[0] + w[1] * tangent[1];
        let y = w[0] * normal[0] + w[1] * normal[1];
        3.0 * s * s * y - y * y * y
    };
    let (mut num, mut den) = (0.0, 0.0);
    for ((w, sw), y) in data.dirs.iter().zip(&data.weights).zip(&data.values) {
        let b = basis(w);
        num += sw * b * y;
        den += sw * b * b;
    }
    let mut coefficient = num / den;
    let residual = data.relative_residual(|w| coefficient * basis(w));
    let rejected = residual > 0.5;
    if rejected {
        coefficient = 0.0;
    }
    let mut fit = ThirdOrderFit { coefficient, normal, tangent, residual, rejected, h3: Vec::new(), worst_negative_slope: 0.0 };
    let vq = {
        let f = fit.clone();
        v.map_with_position(|x, val| val - f.q(&[x[0] - x0[0], x[1] - x0[1]]))
    };
    for &r in radii {
        let surface = probe.sphere(&vq, x0, r, &|t| t * t)?;
        fit.h3.push((r, r.powi(1 - 2 - 6) * surface));
    }
    for pair in fit.h3.windows(2) {
        let ((rb, hb), (rs, hs)) = (pair[0], pair[1]);
        let slope = (hb - hs) / (rb - rs);
        fit.worst_negative_slope = fit.worst_negative_slope.min(slope);
    }
    Ok(fit)
}

/// Largest distance from `L + x0` among contact nodes in `B_r(x0)`, for
/// each radius: `(r, max dist)`.
pub fn contact_tube(mask: &ContactMask, x0: &[f64], stratum: &KernelStratum, radii: &[f64]) -> Vec<(f64, f64)> {
    let pts = mask.marked_points();
    radii
        .iter()
        .map(|&r| {
            let worst = pts
                .iter()
                .filter_map(|x| {
                    let rel: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
                    let dist = rel.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (dist < r).then(|| stratum.distance_to_kernel(&rel))
                })
                .fold(0.0, f64::max);
            (r, worst)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{halfspace_solution, homogeneous_harmonic};
    use crate::grid::CartesianProbe;

    fn sampled(h: f64, f: impl Fn(&[f64]) -> f64) -> GridField {
        GridField::build(BoxDomain::cube(2, 1.0).unwrap(), h, f).unwrap()
    }

    fn phi_profile(phis: &[(f64, Option<f64>)]) -> RadialProfile {
        let rows = phis
            .iter()
            .map(|&(r, phi)| crate::monotonicity::ProfileRow {
                r,
                h: phi.map(|_| 1.0),
                d: None,
                phi,
                weiss: None,
                h2: None,
                h3: None,
                w_lambda: [None; 4],
                density: None,
                error: None,
            })
            .collect();
        RadialProfile { center: vec![0.0, 0.0], dim: 2, has_polynomial: true, rows }
    }

    #[test]
    fn resolved_window_stops_at_first_disagreement() {
        let fine = phi_profile(&[(0.4, Some(3.0)), (0.3, Some(3.01)), (0.2, Some(3.0)), (0.1, Some(2.99)), (0.05, Some(2.5)), (0.03, Some(3.0))]);
        let coarse = phi_profile(&[(0.4, Some(3.02)), (0.3, Some(3.0)), (0.2, Some(3.03)), (0.1, Some(3.0)), (0.05, Some(3.0)), (0.03, Some(3.0))]);
        assert_eq!(resolved_window(&fine, &coarse, 0.05), Some((0.1, 0.4)));
        assert_eq!(resolved_window(&fine, &coarse, 0.001), None);
        let short = phi_profile(&[(0.4, Some(3.0)), (0.3, None), (0.2, Some(3.0))]);
        assert_eq!(resolved_window(&short, &coarse, 0.05), None);
    }

    #[test]
    fn masks_of_simple_fields() {
        let h = 1.0 / 32.0;
        let zero = sampled(h, |_| 0.0);
        let m = contact_mask(&zero, contact_threshold(h));
        assert_eq!(m.count(), m.marked.len());
        assert!(free_boundary_points(&m).is_err());
        let hs = halfspace_solution(&[1.0, 0.0]).unwrap();
        let u = sampled(h, hs);
        let m = contact_mask(&u, contact_threshold(h));
        for x in m.marked_points() {
            assert!(x[0] <= h);
        }
        let fb = free_boundary_points(&m).unwrap();
        assert!(fb.iter().all(|x| x[0].abs() <= h));
        let a = QuadraticBlowup::diag(&[0.5, 0.5]).unwrap();
        let u = sampled(h, |x| a.eval(x));
        let m = contact_mask(&u, contact_threshold(h));
        assert!(m.marked_points().iter().all(|x| x[0].abs() <= h && x[1].abs() <= h));
    }

    #[test]
    fn halfspace_blowup() {
        let h = 1.0 / 128.0;
        let e0 = [0.6f64.cos(), 0.6f64.sin()];
        let u = sampled(h, halfspace_solution(&e0).unwrap());
        let probe = CartesianProbe::new(&u);
        let fit = fit_blowup(&probe, &u, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(fit.best, Model::Halfspace);
        let err = ((fit.halfspace.e[0] - e0[0]).powi(2) + (fit.halfspace.e[1] - e0[1]).powi(2)).sqrt();
        assert!(err < 1e-3, "{err}");
        assert!(fit.halfspace.residual < 1e-3, "{}", fit.halfspace.residual);
    }

    #[test]
    fn quadratic_blowup_with_cubic_perturbation() {
        let h = 1.0 / 256.0;
        let a0 = QuadraticBlowup::new(2, vec![0.3, 0.1, 0.1, 0.7]).unwrap();
        let q = homogeneous_harmonic(2, 3, 0).unwrap();
        let scale = (std::f64::consts::PI).sqrt();
        let u = sampled(h, |x| a0.eval(x) + 0.01 * scale * q.eval(x));
        let probe = CartesianProbe::new(&u);
        let fit = fit_blowup(&probe, &u, &[0.0, 0.0], 0.05).unwrap();
        assert_eq!(fit.best, Model::Quadratic);
        assert!(fit.quadratic.a.frobenius_distance(&a0) < 5e-3);
        assert!((fit.quadratic.a.trace() - 1.0).abs() < 1e-10);
        let exact = sampled(h, |x| a0.eval(x));
        let fit = fit_blowup(&probe, &exact, &[0.0, 0.0], 0.05).unwrap();
        assert!(fit.quadratic.a.frobenius_distance(&a0) < 1e-3);
    }

    #[test]
    fn frequency_of_exact_homogeneous_deviation() {
        let h = 1.0 / 128.0;
        let a = QuadraticBlowup::diag(&[0.0, 1.0]).unwrap();
        for k in [2usize, 3] {
            let q = homogeneous_harmonic(2, k, 0).unwrap();
            let u = sampled(h, |x| a.eval(x) + 0.1 * q.eval(x));
            let probe = CartesianProbe::new(&u);
            let radii = radius_schedule(0.4, RADIUS_RATIO, h);
            let pf = |x: &[f64]| a.eval(x);
            let profile = radial_profile(&probe, &u, Some(&pf), &[0.0, 0.0], &radii).unwrap();
            let est = estimate_frequency(&profile, None).unwrap();
            assert!((est.slope - k as f64).abs() < 0.02);
            assert!((est.plateau - k as f64).abs() < 0.02);
            assert!(est.disagreement < 0.02);
        }
    }

    #[test]
    fn density_exponent_sentinel_and_constant() {
        let h = 1.0 / 128.0;
        let a = QuadraticBlowup::diag(&[0.3, 0.7]).unwrap();
        let u = sampled(h, |x| a.eval(x));
        let probe = CartesianProbe::new(&u);
        let radii = radius_schedule(0.4, RADIUS_RATIO, 2.0 * h);
        let profile = radial_profile(&probe, &u, None, &[0.0, 0.0], &radii).unwrap();
        assert_eq!(density_exponent(&profile, None).unwrap(), f64::INFINITY);
        let u = sampled(h, halfspace_solution(&[1.0, 0.0]).unwrap());
        let profile = radial_profile(&probe, &u, None, &[0.0, 0.0], &radii).unwrap();
        assert!(density_exponent(&profile, None).unwrap().abs() < 0.05);
        for row in &profile.rows {
            assert!((row.density.unwrap() - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn third_order_recovers_constructed_cubic() {
        let h = 1.0 / 128.0;
        let t = 0.4f64;
        let n = [t.cos(), t.sin()];
        let p = QuadraticBlowup::rank_one(&n).unwrap();
        let tangent = [-n[1], n[0]];
        let c0 = 0.3;
        let u = sampled(h, |x| {
            let s = x[0] * tangent[0] + x[1] * tangent[1];
            let y = x[0] * n[0] + x[1] * n[1];
            p.eval(x) + c0 * (3.0 * s * s * y - y * y * y)
        });
        let probe = CartesianProbe::new(&u);
        let radii = radius_schedule(0.4, RADIUS_RATIO, h);
        let fit = third_order_fit(&probe, &u, &p, &[0.0, 0.0], 4.0 * h, &radii).unwrap();
        let sign = fit.normal.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>().signum()
            * fit.tangent.iter().zip(&tangent).map(|(a, b)| a * b).sum::<f64>().signum().powi(2);
        assert!((fit.coefficient * sign - c0).abs() < 1e-3, "{}", fit.coefficient);
        assert!(fit.h3.iter().all(|&(_, v)| v <= 1e-8));
    }

    #[test]
    fn classification_of_fixtures() {
        let h = 1.0 / 128.0;
        let u = sampled(h, halfspace_solution(&[0.0, 1.0]).unwrap());
        let probe = CartesianProbe::new(&u);
        let c = classify_point(&probe, &u, &[0.0, 0.0], &ClassifyConfig::default()).unwrap();
        assert_eq!(c.kind, Kind::Regular);
        let a = QuadraticBlowup::diag(&[0.3, 0.7]).unwrap();
        let u = sampled(h, |x| a.eval(x));
        let c = classify_point(&probe, &u, &[0.0, 0.0], &ClassifyConfig::default()).unwrap();
        assert_eq!(c.kind, Kind::Unresolved);
        assert_eq!(c.m, Some(0));
    }
}
