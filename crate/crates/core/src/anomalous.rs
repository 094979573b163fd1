//! Axisymmetric construction of solutions with an anomalous singular point
//! at the origin: `u(x) = u⋆(x_m, |(x_{m+1}, …, x_n)|)` where `u⋆` solves
//! `div(r^a ∇u) = k r^a χ_{u>0}` on `(−1, 1) × (0, 1)`, `a = n − m − 1`,
//! with `u(±1, r) = 0`, `u(z, 1) = φ(z)`, and `k = k⋆` is the first forcing
//! at which the contact set reaches the origin.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{
    classify_point, density_exponent, estimate_frequency, line_fit, ClassifyConfig, FrequencyEstimate, Kind, Label,
    PointClassification,
};
use crate::error::{Error, Result};
use crate::fixtures::QuadraticBlowup;
use crate::grid::{AxisymProbe, BoxDomain, GridField};
use crate::monotonicity::{radial_profile, radius_schedule, RadialProfile, RADIUS_RATIO};
use crate::solver::{contact_threshold, solve_psor, ObstacleProblem, PsorOptions, SolveReport, SweepOrder};

/// Default solver tolerance of the weighted problem. The residual is divided
/// by the node weight `r^a`, so round-off near the axis grows like `h^{-2-a}`
/// and `DEFAULT_TOL` is out of reach at `h = 1/512`.
pub const AXISYM_TOL: f64 = 1e-8;

/// Even, nonincreasing on `(0, 1)`, vanishing at `±1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryProfile {
    /// `1 − z²`.
    Parabola,
    /// `cos(π z / 2)`.
    Cosine,
}

impl BoundaryProfile {
    pub fn eval(self, z: f64) -> f64 {
        if z.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            Self::Parabola => 1.0 - z * z,
            Self::Cosine => (std::f64::consts::FRAC_PI_2 * z).cos(),
        }
    }
}

/// How `touch_predicate` decides that the contact set has reached the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "half_width")]
pub enum TouchRule {
    /// Contact at one of the first-row nodes nearest `z = 0`.
    Origin,
    /// Contact at some first-row node with `|z| ≤ half_width`.
    Window(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisymSpec {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub profile: BoundaryProfile,
    pub touch: TouchRule,
    /// Solver tolerance (operator units).
    pub tol: f64,
}

impl AxisymSpec {
    pub fn new(n: usize, m: usize, h: f64) -> Self {
        Self { n, m, h, profile: BoundaryProfile::Parabola, touch: TouchRule::Origin, tol: AXISYM_TOL }
    }

    pub fn weight_exponent(&self) -> usize {
        self.n - self.m - 1
    }

    /// Dimension of the nontrivial coordinates `(x_m, …, x_n)`.
    pub fn ball_dim(&self) -> usize {
        self.n - self.m + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.n < self.m + 2 {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ m ≤ n − 2 so that the weight exponent is ≥ 1 (n = {}, m = {})",
                self.n, self.m
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
        }
        if let TouchRule::Window(w) = self.touch {
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::InvalidArgument(format!("touch window {w} outside (0, 1)")));
            }
        }
        GridField::zeros(self.domain(), self.h)?;
        Ok(())
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 1.0]).expect("fixed meridian box")
    }

    pub fn problem(&self, k: f64) -> ObstacleProblem {
        let profile = self.profile;
        ObstacleProblem {
            domain: self.domain(),
            h: self.h,
            weight_exponent: self.weight_exponent() as f64,
            forcing: k,
            // ghost nodes above r = 1 carry φ; the r = 0 face has zero weight
            boundary: Arc::new(move |x: &[f64]| if x[1] > 1.0 { profile.eval(x[0]) } else { 0.0 }),
        }
    }

    fn at_spacing(&self, h: f64) -> Self {
        Self { h, ..self.clone() }
    }
}

/// PSOR in mirror order at the grid's optimal ω.
pub fn solve_axisym(spec: &AxisymSpec, k: f64, initial: Option<&GridField>) -> Result<(GridField, SolveReport)> {
    let problem = spec.problem(k);
    let opts = PsorOptions {
        omega: PsorOptions::optimal_omega(&problem)?,
        tol: spec.tol,
        order: SweepOrder::MirrorFirstAxis,
        ..Default::default()
    };
    let (u, rep) = solve_psor(&problem, &opts, initial)?;
    if !rep.converged {
        return Err(Error::NotConverged { iterations: rep.iterations, residual: rep.comp_residual });
    }
    Ok((u, rep))
}

pub fn touch_predicate(u: &GridField, rule: TouchRule) -> bool {
    let eps = contact_threshold(u.h());
    let nz = u.extents()[0];
    let first_row = |i: usize| u.values()[u.index(&[i, 0])];
    match rule {
        TouchRule::Origin => {
            let mid = nz / 2;
            let nearest = if nz % 2 == 0 { vec![mid - 1, mid] } else { vec![mid] };
            nearest.into_iter().any(|i| first_row(i) <= eps)
        }
        TouchRule::Window(w) => (0..nz).any(|i| u.coord(0, i).abs() <= w && first_row(i) <= eps),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: f64,
    pub touched: bool,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStarSearch {
    pub h: f64,
    pub k_star: f64,
    pub bracket: (f64, f64),
    pub bisections: usize,
    pub trace: Vec<TraceEntry>,
    /// Whether the predicate, sorted by `k`, reads false…false, true…true.
    pub monotone: bool,
    #[serde(skip)]
    pub touching: Option<GridField>,
}

/// Whether `touched` sorted by `k` switches from false to true once.
pub fn trace_is_monotone(trace: &[TraceEntry]) -> bool {
    let mut sorted: Vec<&TraceEntry> = trace.iter().collect();
    sorted.sort_by(|a, b| a.k.total_cmp(&b.k));
    sorted.windows(2).all(|w| !(w[0].touched && !w[1].touched))
}

/// Symmetrized in `z`, so that mirror-order sweeps keep exact symmetry.
fn symmetrize(u: &GridField) -> GridField {
    let nz = u.extents()[0];
    let mut out = u.clone();
    let v = u.values();
    for (flat, slot) in out.values_mut().iter_mut().enumerate() {
        let mut idx = u.multi_index(flat);
        idx[0] = nz - 1 - idx[0];
        *slot = 0.5 * (v[flat] + v[u.index(&idx)]);
    }
    out
}

/// Coarse solution sampled on the fine grid (nodes outside the coarse node
/// hull are clamped onto it).
fn prolong(coarse: &GridField, fine_h: f64) -> Result<GridField> {
    let dom = coarse.domain().clone();
    let (lo, hi) = (dom.lower().to_vec(), dom.upper().to_vec());
    let ch = coarse.h();
    let fine = GridField::build(dom, fine_h, |x| {
        let z = x[0].clamp(lo[0] + 0.5 * ch, hi[0] - 0.5 * ch);
        let r = x[1].min(hi[1] - 0.5 * ch);
        coarse.interpolate_even_last(&[z, r]).unwrap_or(0.0).max(0.0)
    })?;
    Ok(symmetrize(&fine))
}

struct Solved {
    k: f64,
    u: GridField,
}

/// Bisection for `k⋆` at the spacing of `spec`. The bracket is widened
/// (lower end halved, upper end doubled) until the predicate separates.
/// `warm` seeds the first solve.
pub fn find_k_star(spec: &AxisymSpec, bracket: (f64, f64), tol_k: f64, warm: Option<&GridField>) -> Result<KStarSearch> {
    spec.validate()?;
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && tol_k > 0.0) {
        return Err(Error::InvalidBracket(format!("[{lo}, {hi}] with tol {tol_k}")));
    }
    let mut trace = Vec::new();
    let mut cache: Vec<Solved> = Vec::new();
    let mut seed = warm.cloned();
    let mut eval = |k: f64, trace: &mut Vec<TraceEntry>, cache: &mut Vec<Solved>| -> Result<bool> {
        let nearest = cache.iter().min_by(|a, b| (a.k - k).abs().total_cmp(&(b.k - k).abs())).map(|s| &s.u);
        let (u, rep) = solve_axisym(spec, k, nearest.or(seed.as_ref()))?;
        seed = None;
        let touched = touch_predicate(&u, spec.touch);
        trace.push(TraceEntry { k, touched, sweeps: rep.iterations });
        cache.retain(|s| (s.k - k).abs() > 0.0);
        cache.push(Solved { k, u });
        // the bracket ends are the only warm starts worth keeping
        if cache.len() > 2 {
            cache.remove(0);
        }
        Ok(touched)
    };
    const MAX_WIDENINGS: usize = 30;
    let mut widen = 0;
    while eval(lo, &mut trace, &mut cache)? {
        lo *= 0.5;
        widen += 1;
        if widen > MAX_WIDENINGS {
            return Err(Error::InvalidBracket("predicate true at every lower end tried".into()));
        }
    }
    widen = 0;
    while !eval(hi, &mut trace, &mut cache)? {
        lo = hi;
        hi *= 2.0;
        widen += 1;
        if widen > MAX_WIDENINGS {
            return Err(Error::InvalidBracket("predicate false at every upper end tried".into()));
        }
    }
    let mut bisections = 0;
    while hi - lo > tol_k {
        let mid = 0.5 * (lo + hi);
        if eval(mid, &mut trace, &mut cache)? {
            hi = mid;
        } else {
            lo = mid;
        }
        bisections += 1;
    }
    let monotone = trace_is_monotone(&trace);
    if !monotone {
        // continue with the smallest touching k
        hi = trace.iter().filter(|t| t.touched).map(|t| t.k).fold(f64::INFINITY, f64::min);
        lo = trace.iter().filter(|t| !t.touched && t.k < hi).map(|t| t.k).fold(0.0, f64::max);
    }
    let touching = cache.into_iter().find(|s| s.k == hi).map(|s| s.u);
    Ok(KStarSearch { h: spec.h, k_star: 0.5 * (lo + hi), bracket: (lo, hi), bisections, trace, monotone, touching })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuspFit {
    pub beta: f64,
    pub residual: f64,
    pub window: (f64, f64),
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step3Check {
    /// `max r / |(z, r)|^{3/2}` over the outer part of the branch.
    pub c_outer: f64,
    /// The same ratio over the inner part.
    pub inner_max: f64,
    pub split: f64,
    /// Inner points exceed the outer bound.
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyChecks {
    pub max_asymmetry: f64,
    pub even: bool,
    /// Smallest `−∂_z u` on `{z > 0, u > 0}` (centered differences).
    pub min_minus_dz: f64,
    pub monotone_in_z: bool,
    pub slices_are_intervals: bool,
}

impl PropertyChecks {
    pub fn all(&self) -> bool {
        self.even && self.monotone_in_z && self.slices_are_intervals
    }
}

pub fn property_checks(u: &GridField) -> PropertyChecks {
    let h = u.h();
    let (nz, nr) = (u.extents()[0], u.extents()[1]);
    let v = |i: usize, j: usize| u.values()[u.index(&[i, j])];
    let mut max_asymmetry = 0.0f64;
    let mut min_minus_dz = f64::INFINITY;
    let mut slices_are_intervals = true;
    let eps = contact_threshold(h);
    for j in 0..nr {
        let mut runs = 0;
        let mut inside = false;
        for i in 0..nz {
            max_asymmetry = max_asymmetry.max((v(i, j) - v(nz - 1 - i, j)).abs());
            let positive = v(i, j) > eps;
            if positive && !inside {
                runs += 1;
            }
            inside = positive;
            if u.coord(0, i) > 0.0 && v(i, j) > 0.0 {
                let dz = if i + 1 < nz { (v(i + 1, j) - v(i - 1, j)) / (2.0 * h) } else { (v(i, j) - v(i - 1, j)) / h };
                min_minus_dz = min_minus_dz.min(-dz);
            }
        }
        slices_are_intervals &= runs <= 1;
    }
    PropertyChecks {
        max_asymmetry,
        even: max_asymmetry <= 1e-10,
        min_minus_dz,
        monotone_in_z: min_minus_dz >= -5.0 * h,
        slices_are_intervals,
    }
}

/// `u(r)` for `(r^a u′)′ = k r^a u` on `(f, ∞)` with `u(f) = u′(f) = 0`.
fn radial_model(r: f64, f: f64, k: f64, a: f64) -> f64 {
    if f <= 0.0 {
        return k * r * r / (2.0 * (a + 1.0));
    }
    let tail = if (a - 1.0).abs() < 1e-12 { (r / f).ln() } else { (r.powf(1.0 - a) - f.powf(1.0 - a)) / (1.0 - a) };
    k / (a + 1.0) * (0.5 * (r * r - f * f) - f.powf(a + 1.0) * tail)
}

/// Height of the free boundary above each column with contact on the axis:
/// `(z, f)` where `f` inverts the one-dimensional radial profile through
/// the first node above the contact run. `k` and `a` are the forcing and
/// weight exponent of the problem `u` solves.
pub fn free_boundary_branch(u: &GridField, k: f64, a: f64) -> Vec<(f64, f64)> {
    let eps = contact_threshold(u.h());
    let (nz, nr) = (u.extents()[0], u.extents()[1]);
    let v = |i: usize, j: usize| u.values()[u.index(&[i, j])];
    let mut out = Vec::new();
    for i in 0..nz {
        if v(i, 0) > eps {
            continue;
        }
        let Some(j) = (1..nr).find(|&j| v(i, j) > eps) else { continue };
        let (r, target) = (u.coord(1, j), v(i, j));
        // the model decreases in f from k r²/(2(a+1)) at f = 0 to 0 at f = r
        let (mut lo, mut hi) = (0.0, r);
        if radial_model(r, 0.0, k, a) <= target {
            hi = 0.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if radial_model(r, mid, k, a) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push((u.coord(0, i), 0.5 * (lo + hi)));
    }
    out
}

/// Volume fraction of `{|y| < f(z)}` in the ball of radius `rho` of
/// `R^dim` about the origin, with `f` linear between branch samples
/// (mirrored to `z < 0`).
pub fn branch_density(branch: &[(f64, f64)], rho: f64, dim: usize) -> f64 {
    let mut pts: Vec<(f64, f64)> = branch.iter().filter(|p| p.0 > 0.0).copied().collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.is_empty() {
        return 0.0;
    }
    let f_at = |z: f64| -> f64 {
        let z = z.abs();
        match pts.iter().position(|p| p.0 >= z) {
            Some(0) => pts[0].1,
            Some(k) => {
                let (a, b) = (pts[k - 1], pts[k]);
                a.1 + (b.1 - a.1) * (z - a.0) / (b.0 - a.0)
            }
            None => f64::NAN,
        }
    };
    // (dim − 1)-ball cross-sections integrated in z by Gauss–Legendre
    let (x, w) = crate::quadrature::gauss_legendre_on(400, -rho, rho);
    let cross = crate::quadrature::unit_ball_volume(dim - 1);
    let mut vol = 0.0;
    for (z, wz) in x.iter().zip(&w) {
        let f = f_at(*z);
        if f.is_nan() {
            return f64::NAN;
        }
        let reach = (rho * rho - z * z).max(0.0).sqrt();
        vol += wz * cross * f.min(reach).powi(dim as i32 - 1);
    }
    vol / (crate::quadrature::unit_ball_volume(dim) * rho.powi(dim as i32))
}

/// Log-log slope of `branch_density` over the profile radii in `window`.
pub fn branch_density_exponent(
    branch: &[(f64, f64)],
    profile: &RadialProfile,
    window: (f64, f64),
    dim: usize,
) -> Result<f64> {
    let pts: Vec<(f64, f64)> = profile
        .rows
        .iter()
        .map(|row| row.r)
        .filter(|&r| r >= window.0 * (1.0 - 1e-9) && r <= window.1 * (1.0 + 1e-9))
        .map(|r| (r, branch_density(branch, r, dim)))
        .filter(|p| p.1 > 0.0 && p.1.is_finite())
        .collect();
    if pts.len() < 3 {
        return Err(Error::TooFewPoints(pts.len()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    Ok(line_fit(&xs, &ys)?.0)
}

/// Slope of `log r` against `log z` along the branch `z ∈ window`, `z > 0`.
pub fn cusp_exponent(branch: &[(f64, f64)], window: (f64, f64)) -> Result<CuspFit> {
    let pts: Vec<(f64, f64)> =
        branch.iter().copied().filter(|&(z, r)| z > window.0 && z < window.1 && r > 0.0).collect();
    if pts.len() < 10 {
        return Err(Error::TooFewPoints(pts.len()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (beta, residual) = line_fit(&xs, &ys)?;
    Ok(CuspFit { beta, residual, window, points: pts.len() })
}

/// If the origin were in the stratum of frequency `≥ 3` the branch would
/// satisfy `r ≤ C |(z, r)|^{3/2}`. `C` is taken from `ρ ∈ [split, top)` and
/// tested on `ρ ∈ (bottom, split)`.
pub fn step3_check(branch: &[(f64, f64)], bottom: f64, split: f64, top: f64) -> Result<Step3Check> {
    let ratios: Vec<(f64, f64)> = branch
        .iter()
        .filter(|p| p.0 > 0.0)
        .map(|&(z, r)| {
            let rho = z.hypot(r);
            (rho, r / rho.powf(1.5))
        })
        .collect();
    let outer: Vec<f64> = ratios.iter().filter(|p| p.0 >= split && p.0 < top).map(|p| p.1).collect();
    let inner: Vec<f64> = ratios.iter().filter(|p| p.0 > bottom && p.0 < split).map(|p| p.1).collect();
    if outer.is_empty() || inner.is_empty() {
        return Err(Error::TooFewPoints(outer.len().min(inner.len())));
    }
    let c_outer = outer.iter().copied().fold(0.0, f64::max);
    let inner_max = inner.iter().copied().fold(0.0, f64::max);
    Ok(Step3Check { c_outer, inner_max, split, violated: inner_max > c_outer })
}

/// `u(x) = u⋆(x_m, |(x_{m+1}, …, x_n)|)` (1-based `m`).
pub fn embedded_value(u: &GridField, m: usize, x: &[f64]) -> Result<f64> {
    let r = x[m..].iter().map(|v| v * v).sum::<f64>().sqrt();
    u.interpolate_even_last(&[x[m - 1], r])
}

/// `p_* = |(x_{m+1}, …, x_n)|² / (2(n − m))` in ball coordinates
/// `(x_m, x_{m+1}, …, x_n)`.
pub fn p_star(spec: &AxisymSpec) -> QuadraticBlowup {
    let d = spec.ball_dim();
    let mut diag = vec![1.0 / (d - 1) as f64; d];
    diag[0] = 0.0;
    QuadraticBlowup::diag(&diag).expect("trace one, semidefinite")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalousConfig {
    pub spec: AxisymSpec,
    pub bracket: (f64, f64),
    pub tol_k: f64,
    /// Bisection starts on this spacing and is refined by halving.
    pub coarsest_h: f64,
    pub frequency_window: Option<(f64, f64)>,
    pub cusp_window: Option<(f64, f64)>,
}

impl AnomalousConfig {
    pub fn new(spec: AxisymSpec) -> Self {
        Self { spec, bracket: (0.1, 200.0), tol_k: 1e-4, coarsest_h: 1.0 / 64.0, frequency_window: None, cusp_window: None }
    }

    fn frequency_window(&self) -> (f64, f64) {
        self.frequency_window.unwrap_or((8.0 * self.spec.h, 0.2))
    }

    fn cusp_window(&self) -> (f64, f64) {
        self.cusp_window.unwrap_or((4.0 * self.spec.h, 0.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalousRun {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub k_star: f64,
    pub bisection: Vec<KStarSearch>,
    pub solve: SolveReport,
    pub lambda_star: Option<FrequencyEstimate>,
    pub classification: PointClassification,
    /// Log-log slope of the contact density at the origin, with the
    /// density measured below the reconstructed free-boundary branch.
    pub density_exponent: Option<f64>,
    /// The same slope from node-counted contact density.
    pub density_exponent_nodes: Option<f64>,
    pub beta: Option<CuspFit>,
    pub step3: Option<Step3Check>,
    pub properties: PropertyChecks,
    /// Failures of individual diagnostics.
    pub notes: Vec<String>,
    /// `u⋆ / k⋆`, which solves the normalized problem.
    #[serde(skip)]
    pub field: Option<GridField>,
    #[serde(skip)]
    pub profile: Option<RadialProfile>,
    #[serde(skip)]
    pub free_boundary: Vec<(f64, f64)>,
}

impl AnomalousRun {
    pub fn is_anomalous(&self) -> bool {
        self.classification.kind == Kind::Singular && self.classification.label == Some(Label::Anomalous)
    }
}

/// Bisection for `k⋆` on successively halved grids, each level warm-started
/// from the previous one, then diagnostics at the origin.
pub fn construct_anomalous(cfg: &AnomalousConfig) -> Result<AnomalousRun> {
    let spec = &cfg.spec;
    spec.validate()?;
    let mut levels = vec![spec.h];
    while levels[levels.len() - 1] * 2.0 <= cfg.coarsest_h * (1.0 + 1e-12) {
        let next = levels[levels.len() - 1] * 2.0;
        if GridField::zeros(spec.domain(), next).is_err() {
            break;
        }
        levels.push(next);
    }
    levels.reverse();
    let mut bisection: Vec<KStarSearch> = Vec::new();
    for (level, &h) in levels.iter().enumerate() {
        let level_spec = spec.at_spacing(h);
        let last = level + 1 == levels.len();
        let tol = if last { cfg.tol_k } else { cfg.tol_k.max(1e-3) };
        let search = match bisection.last() {
            None => find_k_star(&level_spec, cfg.bracket, tol, None)?,
            Some(prev) => {
                let warm = prev.touching.as_ref().map(|u| prolong(u, h)).transpose()?;
                let k = prev.k_star;
                // k⋆ moves by O(h) under refinement
                let half = (0.05 * k).max(4.0 * (prev.bracket.1 - prev.bracket.0));
                find_k_star(&level_spec, ((k - half).max(1e-3), k + half), tol, warm.as_ref())?
            }
        };
        if let Some(prev) = bisection.last_mut() {
            prev.touching = None;
        }
        bisection.push(search);
    }
    let fine = bisection.last().expect("at least one level");
    let k_star = fine.k_star;
    let (u, solve) = solve_axisym(spec, k_star, fine.touching.as_ref())?;
    let properties = property_checks(&u);
    let scaled = u.with_values(u.values().iter().map(|v| v / k_star).collect());
    let probe = AxisymProbe::new(&scaled, spec.ball_dim())?;
    let p = p_star(spec);
    let window = cfg.frequency_window();
    let mut notes = Vec::new();
    let ccfg = ClassifyConfig {
        r_max: window.1,
        frequency_window: Some(window),
        extra_kernel_dims: spec.m - 1,
        reference: Some(p.clone()),
        ..Default::default()
    };
    let mut classification = classify_point(&probe, &scaled, &[0.0, 0.0], &ccfg)?;
    let profile = match classification.profile.take() {
        Some(pf) => pf,
        None => {
            let radii = radius_schedule(window.1, RADIUS_RATIO, spec.h);
            let pp = p.clone();
            let meridian = move |x: &[f64]| {
                let mut y = vec![0.0; pp.dim()];
                y[0] = x[0];
                y[1] = x[1];
                pp.eval(&y)
            };
            radial_profile(&probe, &scaled, Some(&meridian), &[0.0, 0.0], &radii)?
        }
    };
    let lambda_star = match &classification.lambda_star {
        Some(est) => Some(est.clone()),
        None => match estimate_frequency(&profile, Some(window)) {
            Ok(est) => Some(est),
            Err(e) => {
                notes.push(format!("frequency: {e}"));
                None
            }
        },
    };
    let density_exponent_nodes = match density_exponent(&profile, Some(window)) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("node density exponent: {e}"));
            None
        }
    };
    let branch = free_boundary_branch(&u, k_star, spec.weight_exponent() as f64);
    let density_exponent = match branch_density_exponent(&branch, &profile, window, spec.ball_dim()) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("density exponent: {e}"));
            None
        }
    };
    let beta = match cusp_exponent(&branch, cfg.cusp_window()) {
        Ok(fit) => Some(fit),
        Err(e) => {
            notes.push(format!("cusp exponent: {e}"));
            None
        }
    };
    let (bottom, top) = cfg.cusp_window();
    let step3 = match step3_check(&branch, bottom, 0.5 * top, top) {
        Ok(s) => Some(s),
        Err(e) => {
            notes.push(format!("step-3 check: {e}"));
            None
        }
    };
    let bisection = bisection
        .into_iter()
        .map(|mut s| {
            s.touching = None;
            s
        })
        .collect();
    Ok(AnomalousRun {
        n: spec.n,
        m: spec.m,
        h: spec.h,
        k_star,
        bisection,
        solve,
        lambda_star,
        classification,
        density_exponent,
        density_exponent_nodes,
        beta,
        step3,
        properties,
        notes,
        field: Some(scaled),
        profile: Some(profile),
        free_boundary: branch,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn coarse_spec() -> AxisymSpec {
        AxisymSpec::new(3, 1, 1.0 / 32.0)
    }

    #[test]
    fn predicate_extremes() {
        let spec = coarse_spec();
        let (small, _) = solve_axisym(&spec, 0.01, None).unwrap();
        assert!(!touch_predicate(&small, TouchRule::Origin));
        let (large, _) = solve_axisym(&spec, 100.0, None).unwrap();
        assert!(touch_predicate(&large, TouchRule::Origin));
        assert!(touch_predicate(&large, TouchRule::Window(0.5)));
        let positive = GridField::build(spec.domain(), spec.h, |_| 1.0).unwrap();
        assert!(!touch_predicate(&positive, TouchRule::Origin));
        assert!(!touch_predicate(&positive, TouchRule::Window(0.5)));
    }

    #[test]
    fn bisection_trace_is_monotone() {
        let spec = coarse_spec();
        let s = find_k_star(&spec, (0.1, 200.0), 1e-3, None).unwrap();
        assert!(s.monotone);
        assert!(s.bracket.1 - s.bracket.0 <= 1e-3);
        assert!(s.bisections <= 18);
        let touched_at = |k: f64| {
            let (u, _) = solve_axisym(&spec, k, None).unwrap();
            touch_predicate(&u, spec.touch)
        };
        assert!(!touched_at(s.bracket.0));
        assert!(touched_at(s.bracket.1));
    }

    #[test]
    fn axisymmetric_solution_properties() {
        let spec = coarse_spec();
        let (u, _) = solve_axisym(&spec, 3.0, None).unwrap();
        let p = property_checks(&u);
        assert!(p.all(), "{p:?}");
        assert_eq!(p.max_asymmetry, 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(AxisymSpec::new(3, 2, 1.0 / 32.0).validate().is_err());
        assert!(AxisymSpec::new(3, 0, 1.0 / 32.0).validate().is_err());
        assert!(AxisymSpec::new(4, 1, 1.0 / 32.0).validate().is_ok());
        let mut spec = coarse_spec();
        spec.touch = TouchRule::Window(1.5);
        assert!(spec.validate().is_err());
        assert!(find_k_star(&coarse_spec(), (5.0, 1.0), 1e-3, None).is_err());
    }

    #[test]
    fn cusp_rejects_straight_or_missing_branches() {
        // classical half-space solutions with the straight free boundary z = 0
        let dom = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let h = 1.0 / 64.0;
        for sign in [1.0, -1.0] {
            let u = GridField::build(dom.clone(), h, |x| 0.5 * (sign * x[0]).max(0.0).powi(2)).unwrap();
            let fit = cusp_exponent(&free_boundary_branch(&u, 1.0, 0.0), (4.0 * h, 0.1));
            assert!(matches!(fit, Err(Error::TooFewPoints(_))), "{fit:?}");
        }
    }

    #[test]
    fn branch_of_a_power_cusp() {
        // u = ½ (r − z^{1.3})₊² has its free boundary on r = z^{1.3}
        let dom = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let h = 1.0 / 256.0;
        let u = GridField::build(dom, h, |x| 0.5 * (x[1] - x[0].abs().powf(1.3)).max(0.0).powi(2)).unwrap();
        let branch = free_boundary_branch(&u, 1.0, 0.0);
        let fit = cusp_exponent(&branch, (4.0 * h, 0.1)).unwrap();
        assert!((fit.beta - 1.3).abs() < 0.01, "{fit:?}");
        assert!(fit.residual < 1e-3);
        let s3 = step3_check(&branch, 4.0 * h, 0.05, 0.1).unwrap();
        assert!(s3.violated);
    }

    #[test]
    fn radial_model_inversion_is_exact_for_cylinders() {
        // u = radial profile with f = 0.01 in every column, a = 1
        let dom = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let h = 1.0 / 128.0;
        let f0 = 0.013;
        let u = GridField::build(dom, h, |x| if x[1] <= f0 { 0.0 } else { radial_model(x[1], f0, 2.0, 1.0) }).unwrap();
        let branch = free_boundary_branch(&u, 2.0, 1.0);
        assert_eq!(branch.len(), u.extents()[0]);
        assert!(branch.iter().all(|p| (p.1 - f0).abs() < 1e-12));
        // cylinder of radius f0 in the unit-free ball of R^3
        let rho = 0.1;
        let exact = {
            let (x, w) = crate::quadrature::gauss_legendre_on(2000, -rho, rho);
            x.iter().zip(&w).map(|(z, wz)| wz * PI * f0.min((rho * rho - z * z).sqrt()).powi(2)).sum::<f64>()
                / (4.0 / 3.0 * PI * rho.powi(3))
        };
        assert!((branch_density(&branch, rho, 3) - exact).abs() < 1e-4 * exact);
    }

    #[test]
    fn embedding_and_p_star() {
        let spec = AxisymSpec::new(3, 1, 1.0 / 32.0);
        let p = p_star(&spec);
        assert!((p.trace() - 1.0).abs() < 1e-15);
        assert_eq!(p.kernel().m, 1);
        let dom = spec.domain();
        let u = GridField::build(dom, spec.h, |x| x[1] * x[1] / 4.0).unwrap();
        let v = embedded_value(&u, 1, &[0.1, 0.3, 0.4]).unwrap();
        assert!((v - p.eval(&[0.1, 0.3, 0.4])).abs() < 1e-12);
    }
}
