//! Discrete obstacle problem as a linear complementarity system
//!
//! ```text
//! u ≥ 0,   L u ≤ k w,   u · (L u − k w) = 0,
//! ```
//!
//! where `L = div(r^a ∇·)` in conservative flux form (the plain Laplacian for
//! `a = 0`) and `w = r^a` is the node weight. Dirichlet data are imposed on
//! ghost nodes half a cell outside the box by evaluating the boundary
//! function there. For `a > 0` the faces on `r = 0` carry zero weight and
//! need no data.
//!
//! Residuals are reported in operator units, divided by the node weight:
//! `|min(D_i u_i, k w_i − (Lu)_i)| / w_i` with `D_i` the diagonal of `−L`.

use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::PointFn;
use crate::grid::{BoxDomain, GridField};

/// Complementarity tolerance in operator units.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_OMEGA: f64 = 1.8;

/// Contact threshold `ε_c = 0.1 h²`.
pub fn contact_threshold(h: f64) -> f64 {
    0.1 * h * h
}

#[derive(Clone)]
pub struct ObstacleProblem {
    pub domain: BoxDomain,
    pub h: f64,
    /// Exponent `a` of the weight `r^a`; `r` is the last coordinate.
    pub weight_exponent: f64,
    /// Forcing `k` on the right-hand side `k r^a χ_{u>0}`.
    pub forcing: f64,
    pub boundary: PointFn,
}

impl std::fmt::Debug for ObstacleProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObstacleProblem")
            .field("domain", &self.domain)
            .field("h", &self.h)
            .field("weight_exponent", &self.weight_exponent)
            .field("forcing", &self.forcing)
            .finish()
    }
}

impl ObstacleProblem {
    /// Classical problem `Δu = χ_{u>0}` with boundary data `g`.
    pub fn classical(domain: BoxDomain, h: f64, boundary: PointFn) -> Self {
        Self { domain, h, weight_exponent: 0.0, forcing: 1.0, boundary }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.forcing > 0.0) {
            return Err(Error::InvalidArgument("forcing must be positive".into()));
        }
        if self.weight_exponent < 0.0 {
            return Err(Error::InvalidArgument("weight exponent must be >= 0".into()));
        }
        if self.weight_exponent > 0.0 && (self.domain.dim() != 2 || self.domain.lower()[1] != 0.0) {
            return Err(Error::InvalidArgument("weighted problems live on a (z, r) rectangle with r >= 0".into()));
        }
        Ok(())
    }
}

/// Flux-form operator: per node, coefficients to the `2 dim` neighbours
/// (zero across the boundary), the diagonal of `−L`, the node weight and
/// the right-hand side with ghost contributions moved over.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub extents: Vec<usize>,
    pub strides: Vec<usize>,
    pub h: f64,
    /// `coef[2 d i + 2 a]` toward `-e_a`, `coef[2 d i + 2 a + 1]` toward `+e_a`.
    pub coef: Vec<f64>,
    pub diag: Vec<f64>,
    pub node_weight: Vec<f64>,
    /// `k w_i − (ghost contributions)_i`.
    pub rhs: Vec<f64>,
    /// Ghost contributions alone.
    pub boundary_flux: Vec<f64>,
    pub forcing: f64,
}

pub fn assemble_stencil(problem: &ObstacleProblem) -> Result<Stencil> {
    problem.validate()?;
    let template = GridField::zeros(problem.domain.clone(), problem.h)?;
    let d = template.dim();
    let h = problem.h;
    let a = problem.weight_exponent;
    let ext = template.extents().to_vec();
    let strides = template.strides().to_vec();
    let n = template.len();
    let last = d - 1;
    let r_lower = problem.domain.lower()[last];
    let weight_at = |r: f64| if a == 0.0 { 1.0 } else { r.max(0.0).powf(a) };
    let nr = ext[last];
    let row_weight: Vec<f64> = (0..nr).map(|j| weight_at(template.coord(last, j))).collect();
    // face j sits between rows j-1 and j, at r_lower + j h
    let face_weight: Vec<f64> = (0..=nr).map(|j| weight_at(r_lower + j as f64 * h)).collect();
    let inv_h2 = 1.0 / (h * h);

    let mut coef = vec![0.0; 2 * d * n];
    let mut diag = vec![0.0; n];
    let mut node_weight = vec![0.0; n];
    let mut boundary_flux = vec![0.0; n];
    let mut x = vec![0.0; d];
    for i in 0..n {
        let multi = template.multi_index(i);
        let j = multi[last];
        node_weight[i] = row_weight[j];
        for ax in 0..d {
            let (c_lo, c_hi) = if ax == last {
                (face_weight[j] * inv_h2, face_weight[j + 1] * inv_h2)
            } else {
                (row_weight[j] * inv_h2, row_weight[j] * inv_h2)
            };
            for (side, c) in [(0usize, c_lo), (1usize, c_hi)] {
                if c == 0.0 {
                    continue;
                }
                diag[i] += c;
                let at_edge = if side == 0 { multi[ax] == 0 } else { multi[ax] + 1 == ext[ax] };
                if at_edge {
                    template.position_into(i, &mut x);
                    x[ax] += if side == 0 { -h } else { h };
                    boundary_flux[i] += c * (problem.boundary)(&x);
                } else {
                    coef[2 * d * i + 2 * ax + side] = c;
                }
            }
        }
    }
    let rhs = (0..n).map(|i| problem.forcing * node_weight[i] - boundary_flux[i]).collect();
    Ok(Stencil { extents: ext, strides, h, coef, diag, node_weight, rhs, boundary_flux, forcing: problem.forcing })
}

impl Stencil {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn dim(&self) -> usize {
        self.extents.len()
    }

    /// `Σ_nb c u_nb` over interior neighbours.
    #[inline]
    fn neighbour_sum(&self, u: &[f64], i: usize) -> f64 {
        let d = self.dim();
        let base = 2 * d * i;
        let mut acc = 0.0;
        for ax in 0..d {
            let s = self.strides[ax];
            let lo = self.coef[base + 2 * ax];
            let hi = self.coef[base + 2 * ax + 1];
            let mut pair = 0.0;
            if lo != 0.0 {
                pair += lo * u[i - s];
            }
            if hi != 0.0 {
                pair += hi * u[i + s];
            }
            acc += pair;
        }
        acc
    }

    /// `(Lu)_i` including ghost values.
    pub fn apply(&self, u: &[f64], i: usize) -> f64 {
        self.neighbour_sum(u, i) + self.boundary_flux[i] - self.diag[i] * u[i]
    }

    /// Multiplier `k w_i − (Lu)_i`.
    pub fn multiplier(&self, u: &[f64], i: usize) -> f64 {
        self.forcing * self.node_weight[i] - self.apply(u, i)
    }

    /// `max_i |min(D_i u_i, λ_i)| / w_i`.
    pub fn complementarity_residual(&self, u: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| {
                let lam = self.multiplier(u, i);
                (self.diag[i] * u[i]).min(lam).abs() / self.node_weight[i]
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SweepOrder {
    #[default]
    Lexicographic,
    /// Columns of a 2D grid visited in mirror pairs `(j, n−1−j)` from the
    /// outside in, both members of a pair relaxed from the same state. The
    /// iterates of z-symmetric data stay bitwise symmetric.
    MirrorFirstAxis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsorOptions {
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub order: SweepOrder,
    pub record_history: bool,
}

impl Default for PsorOptions {
    fn default() -> Self {
        Self { omega: DEFAULT_OMEGA, tol: DEFAULT_TOL, max_iter: 200_000, order: SweepOrder::Lexicographic, record_history: false }
    }
}

impl PsorOptions {
    /// Relaxation factor from the Jacobi spectral radius of the grid.
    pub fn optimal_omega(problem: &ObstacleProblem) -> Result<f64> {
        let template = GridField::zeros(problem.domain.clone(), problem.h)?;
        let d = template.dim();
        let rho: f64 = template
            .extents()
            .iter()
            .enumerate()
            .map(|(ax, &n)| {
                // the weighted axis has a natural condition at r = 0
                let n_eff = if problem.weight_exponent > 0.0 && ax == d - 1 { 2 * n } else { n };
                (std::f64::consts::PI / (n_eff as f64 + 1.0)).cos()
            })
            .sum::<f64>()
            / d as f64;
        Ok(2.0 / (1.0 + (1.0 - rho * rho).sqrt()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub comp_residual: f64,
    pub pde_residual: f64,
    pub min_u: f64,
    #[serde(skip)]
    pub converged: bool,
    /// Max violation of `u ≥ 0`.
    #[serde(skip)]
    pub positivity_violation: f64,
    /// Max violation of `Lu − k w ≤ 0` on the contact set, operator units.
    #[serde(skip)]
    pub contact_violation: f64,
    /// Per-sweep surrogate residuals (PSOR only, when requested).
    #[serde(skip)]
    pub history: Vec<f64>,
    /// Whether the active-set solver fell back to PSOR.
    #[serde(skip)]
    pub fell_back: bool,
}

/// Reports the complementarity violations of `u` for `problem`.
pub fn complementarity_check(u: &GridField, problem: &ObstacleProblem) -> Result<SolveReport> {
    let st = assemble_stencil(problem)?;
    Ok(check_with_stencil(u.values(), &st, 0))
}

fn check_with_stencil(u: &[f64], st: &Stencil, iterations: usize) -> SolveReport {
    let eps = contact_threshold(st.h);
    let mut rep = SolveReport { iterations, min_u: f64::INFINITY, ..Default::default() };
    for i in 0..st.len() {
        let lam = st.multiplier(u, i) / st.node_weight[i];
        rep.min_u = rep.min_u.min(u[i]);
        rep.positivity_violation = rep.positivity_violation.max(-u[i]);
        if u[i] <= eps {
            rep.contact_violation = rep.contact_violation.max(-lam);
        } else {
            rep.pde_residual = rep.pde_residual.max(lam.abs());
        }
    }
    rep.comp_residual = st.complementarity_residual(u);
    rep
}

#[inline]
fn relax(st: &Stencil, u: &[f64], i: usize, omega: f64) -> (f64, f64) {
    let gs = (st.neighbour_sum(u, i) - st.rhs[i]) / st.diag[i];
    let cur = u[i];
    // operator-unit complementarity of the current value
    let res = ((cur - gs) * st.diag[i]).min(st.diag[i] * cur).abs() / st.node_weight[i];
    ((cur + omega * (gs - cur)).max(0.0), res)
}

fn sweep(st: &Stencil, u: &mut [f64], omega: f64, order: SweepOrder) -> f64 {
    let mut worst = 0.0f64;
    match order {
        SweepOrder::Lexicographic => {
            for i in 0..u.len() {
                let (v, r) = relax(st, u, i, omega);
                u[i] = v;
                worst = worst.max(r);
            }
        }
        SweepOrder::MirrorFirstAxis => {
            let nz = st.extents[0];
            let nr: usize = st.extents[1..].iter().product();
            for p in 0..nz.div_ceil(2) {
                let ja = p;
                let jb = nz - 1 - p;
                for k in 0..nr {
                    let ia = ja * nr + k;
                    let ib = jb * nr + k;
                    let (va, ra) = relax(st, u, ia, omega);
                    if ia != ib {
                        let (vb, rb) = relax(st, u, ib, omega);
                        u[ib] = vb;
                        worst = worst.max(rb);
                    }
                    u[ia] = va;
                    worst = worst.max(ra);
                }
            }
        }
    }
    worst
}

/// Initial iterate: the warm start if given, else zero.
fn initial_values(st: &Stencil, initial: Option<&GridField>) -> Result<Vec<f64>> {
    match initial {
        Some(f) if f.len() == st.len() => Ok(f.values().iter().map(|v| v.max(0.0)).collect()),
        Some(_) => Err(Error::InvalidArgument("warm start has the wrong size".into())),
        None => Ok(vec![0.0; st.len()]),
    }
}

/// Projected successive over-relaxation.
///
/// Stops once a sweep's surrogate residual and then the exact residual both
/// drop below `tol`; hitting `max_iter` returns the last iterate with
/// `converged = false`.
pub fn solve_psor(
    problem: &ObstacleProblem,
    opts: &PsorOptions,
    initial: Option<&GridField>,
) -> Result<(GridField, SolveReport)> {
    let st = assemble_stencil(problem)?;
    let mut u = initial_values(&st, initial)?;
    let (iters, converged, history) = psor_loop(&st, &mut u, opts)?;
    let mut rep = check_with_stencil(&u, &st, iters);
    rep.converged = converged;
    rep.history = history;
    let field = GridField::from_values(problem.domain.clone(), problem.h, u)?;
    Ok((field, rep))
}

/// Sweeps without halving the best residual before the relaxation is
/// reduced, once that residual is within `ROUNDOFF_BAND · tol`.
const STAGNATION_SWEEPS: usize = 100;
const ROUNDOFF_BAND: f64 = 1e4;

fn psor_loop(st: &Stencil, u: &mut [f64], opts: &PsorOptions) -> Result<(usize, bool, Vec<f64>)> {
    if !(opts.omega > 0.0 && opts.omega < 2.0) {
        return Err(Error::InvalidArgument(format!("relaxation {} outside (0, 2)", opts.omega)));
    }
    let mut history = Vec::new();
    let mut omega = opts.omega;
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    let mut it = 0;
    // optimal-ω SOR halves the error only every O(1/h) sweeps
    let stall = STAGNATION_SWEEPS.max(st.extents.iter().copied().max().unwrap_or(0));
    while it < opts.max_iter {
        let r = sweep(st, u, omega, opts.order);
        it += 1;
        if opts.record_history {
            history.push(r);
        }
        if !r.is_finite() {
            return Err(Error::NaN(it));
        }
        if r < opts.tol && st.complementarity_residual(u) < opts.tol {
            return Ok((it, true, history));
        }
        if r < 0.5 * best {
            best = r;
            best_at = it;
        } else if omega > 1.0 && best < ROUNDOFF_BAND * opts.tol && it - best_at > stall {
            // over-relaxation amplifies round-off by ~1/(2 − ω)
            omega = (2.0 - 2.0 * (2.0 - omega)).max(1.0);
            best_at = it;
        }
    }
    Ok((it, false, history))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActiveSetOptions {
    pub tol: f64,
    pub max_outer: usize,
    /// Fallback PSOR settings used on cycling.
    pub fallback: PsorOptions,
}

impl Default for ActiveSetOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_outer: 60, fallback: PsorOptions::default() }
    }
}

/// Outcome details beyond the report.
#[derive(Debug, Clone, Default)]
pub struct ActiveSetTrace {
    /// Size of the active set after each outer iteration.
    pub active_sizes: Vec<usize>,
}

/// Primal-dual active-set (semismooth Newton) iteration on the same
/// complementarity system. Starts from the unconstrained solve; each outer
/// step solves the Dirichlet problem on the inactive set by Jacobi-
/// preconditioned conjugate gradients and re-selects
/// `A = {i : λ_i > D_i u_i}`.
pub fn solve_active_set(
    problem: &ObstacleProblem,
    opts: &ActiveSetOptions,
    initial: Option<&GridField>,
) -> Result<(GridField, SolveReport, ActiveSetTrace)> {
    let st = assemble_stencil(problem)?;
    let n = st.len();
    let coarse = match initial {
        Some(_) => None,
        None => coarse_guess(problem, opts)?,
    };
    let mut u = initial_values(&st, initial.or(coarse.as_ref()))?;
    let mut active: Vec<bool> = match initial.or(coarse.as_ref()) {
        Some(_) => u.iter().map(|&v| v <= 0.0).collect(),
        None => vec![false; n],
    };
    let mut seen = HashSet::new();
    let mut trace = ActiveSetTrace::default();
    let mut outer = 0;
    let mut fell_back = false;
    loop {
        inner_solve(&st, &active, &mut u, opts.tol * 1e-3)?;
        outer += 1;
        let next: Vec<bool> = (0..n)
            .map(|i| {
                let lam = st.multiplier(&u, i);
                lam > st.diag[i] * u[i]
            })
            .collect();
        trace.active_sizes.push(next.iter().filter(|&&b| b).count());
        let done = next == active && u.iter().all(|&v| v >= 0.0);
        if done {
            break;
        }
        let key = fingerprint(&next);
        if !seen.insert(key) || outer >= opts.max_outer {
            fell_back = true;
            for v in u.iter_mut() {
                *v = v.max(0.0);
            }
            let (_, conv, _) = psor_loop(&st, &mut u, &opts.fallback)?;
            if !conv {
                return Err(Error::ActiveSet("fallback PSOR did not converge".into()));
            }
            break;
        }
        active = next;
    }
    for v in u.iter_mut() {
        *v = v.max(0.0);
    }
    // Gauss-Seidel polish removes the round-off left by the Krylov recurrence
    if !fell_back && st.complementarity_residual(&u) >= opts.tol {
        let polish = PsorOptions { omega: 1.0, tol: opts.tol, max_iter: 200, ..opts.fallback.clone() };
        psor_loop(&st, &mut u, &polish)?;
    }
    let mut rep = check_with_stencil(&u, &st, outer);
    rep.converged = rep.comp_residual < opts.tol * 10.0;
    rep.fell_back = fell_back;
    let field = GridField::from_values(problem.domain.clone(), problem.h, u)?;
    Ok((field, rep, trace))
}

/// Solution on the grid of spacing `2h` injected into the fine cells, when
/// the coarse grid keeps at least the minimum resolution.
fn coarse_guess(problem: &ObstacleProblem, opts: &ActiveSetOptions) -> Result<Option<GridField>> {
    let fine = GridField::zeros(problem.domain.clone(), problem.h)?;
    let coarse_problem = ObstacleProblem { h: 2.0 * problem.h, ..problem.clone() };
    let coarse_template = match GridField::zeros(problem.domain.clone(), coarse_problem.h) {
        Ok(t) => t,
        Err(_) => return Ok(None),
    };
    if fine.extents().iter().zip(coarse_template.extents()).any(|(&f, &c)| f != 2 * c) {
        return Ok(None);
    }
    let (coarse, _, _) = solve_active_set(&coarse_problem, opts, None)?;
    let d = fine.dim();
    let values = (0..fine.len())
        .map(|i| {
            let mut m = fine.multi_index(i);
            for a in m.iter_mut().take(d) {
                *a /= 2;
            }
            let flat: usize = m.iter().zip(coarse.strides()).map(|(a, s)| a * s).sum();
            coarse.values()[flat]
        })
        .collect();
    Ok(Some(GridField::from_values(problem.domain.clone(), problem.h, values)?))
}

fn fingerprint(mask: &[bool]) -> u64 {
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    mask.hash(&mut hasher);
    hasher.finish()
}

/// Solves `(Lu)_i = k w_i` on inactive nodes with `u = 0` on active ones.
fn inner_solve(st: &Stencil, active: &[bool], u: &mut [f64], tol: f64) -> Result<()> {
    let n = st.len();
    // A = −L restricted, b = −rhs  (−Σ c u_nb + D u = −rhs)
    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = if active[i] { 0.0 } else { st.diag[i] * x[i] - st.neighbour_sum(x, i) };
        }
    };
    for i in 0..n {
        if active[i] {
            u[i] = 0.0;
        }
    }
    let mut r = vec![0.0; n];
    apply(u, &mut r);
    for i in 0..n {
        r[i] = if active[i] { 0.0 } else { -st.rhs[i] - r[i] };
    }
    let inv_d: Vec<f64> = st.diag.iter().map(|d| 1.0 / d).collect();
    let scaled_norm = |r: &[f64]| (0..n).map(|i| r[i].abs() / st.node_weight[i]).fold(0.0, f64::max);
    if scaled_norm(&r) < tol {
        return Ok(());
    }
    let mut z: Vec<f64> = (0..n).map(|i| r[i] * inv_d[i]).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_it = 20 * n.max(100);
    for _ in 0..max_it {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::ActiveSet("inner operator not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if scaled_norm(&r) < tol {
            return Ok(());
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::ActiveSet("inner conjugate-gradient solve did not converge".into()))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fixtures::{fixture, halfspace_solution};

    fn square_problem(h: f64, g: PointFn) -> ObstacleProblem {
        ObstacleProblem::classical(BoxDomain::cube(2, 1.0).unwrap(), h, g)
    }

    #[test]
    fn classical_stencil_is_five_point() {
        let p = square_problem(1.0 / 16.0, Arc::new(|_| 0.0));
        let st = assemble_stencil(&p).unwrap();
        let i = 5 * 32 + 7;
        assert!(st.coef[4 * i..4 * i + 4].iter().all(|&c| c == 256.0));
        assert_eq!(st.diag[i], 1024.0);
        assert_eq!(st.node_weight[i], 1.0);
    }

    #[test]
    fn weighted_faces_at_axis() {
        let h = 1.0 / 16.0;
        let p = ObstacleProblem {
            domain: BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap(),
            h,
            weight_exponent: 1.0,
            forcing: 1.0,
            boundary: Arc::new(|_| 0.0),
        };
        let st = assemble_stencil(&p).unwrap();
        let i = 10 * 16; // row r = h/2
        assert_eq!(st.coef[4 * i + 2], 0.0);
        assert!((st.coef[4 * i + 3] * h * h - h).abs() < 1e-15);
        assert!((st.node_weight[i] - h / 2.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_stencil_consistency() {
        // u = r² : div(r ∇u) = (r · 2r)_r = 4r
        for h in [1.0 / 32.0, 1.0 / 64.0] {
            let p = ObstacleProblem {
                domain: BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap(),
                h,
                weight_exponent: 1.0,
                forcing: 1.0,
                boundary: Arc::new(|x: &[f64]| x[1] * x[1]),
            };
            let st = assemble_stencil(&p).unwrap();
            let u = GridField::build(p.domain.clone(), h, |x| x[1] * x[1]).unwrap();
            let mut worst = 0.0f64;
            for i in 0..st.len() {
                let r = u.position(i)[1];
                worst = worst.max((st.apply(u.values(), i) - 4.0 * r).abs());
            }
            // the flux form is exact on r² with midpoint face weights
            assert!(worst < 1e-9, "{worst}");
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let p = square_problem(1.0 / 16.0, Arc::new(|_| 0.0));
        let (u, rep) = solve_psor(&p, &PsorOptions::default(), None).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 1);
        let (u, _, trace) = solve_active_set(&p, &ActiveSetOptions::default(), None).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert_eq!(trace.active_sizes[0], u.len());
    }

    #[test]
    fn polynomial_data_is_reproduced() {
        let f = fixture("poly-diag-0.3-0.7").unwrap();
        let h = 1.0 / 32.0;
        let p = square_problem(h, f.f.clone());
        let (u, rep) = solve_psor(&p, &PsorOptions::default(), None).unwrap();
        assert!(rep.converged);
        let exact = GridField::build(p.domain.clone(), h, |x| f.eval(x)).unwrap();
        let err = u.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 5.0 * h * h);
        let (v, _, trace) = solve_active_set(&p, &ActiveSetOptions::default(), None).unwrap();
        assert!(trace.active_sizes.iter().all(|&s| s <= 1));
        let diff = u.values().iter().zip(v.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 10.0 * DEFAULT_TOL, "{diff}");
    }

    #[test]
    fn halfspace_free_boundary() {
        let h = 1.0 / 32.0;
        let g = halfspace_solution(&[1.0, 0.0]).unwrap();
        let p = square_problem(h, Arc::new(g));
        let (u, rep) = solve_active_set(&p, &ActiveSetOptions::default(), None).map(|(u, r, _)| (u, r)).unwrap();
        assert!(rep.comp_residual < 10.0 * DEFAULT_TOL);
        let eps = contact_threshold(h);
        for i in 0..u.len() {
            let x = u.position(i)[0];
            if u.values()[i] <= eps {
                assert!(x <= h, "contact at x = {x}");
            } else {
                assert!(x >= -h, "positive at x = {x}");
            }
        }
    }

    #[test]
    fn check_reports_constructed_failure() {
        let h = 1.0 / 16.0;
        let p = square_problem(h, Arc::new(|_| 0.0));
        let u = GridField::build(p.domain.clone(), h, |_| -h).unwrap();
        let rep = complementarity_check(&u, &p).unwrap();
        assert!((rep.positivity_violation - h).abs() < 1e-15);
        let f = fixture("poly-diag-0.5-0.5").unwrap();
        let p = square_problem(h, f.f.clone());
        let u = GridField::build(p.domain.clone(), h, |x| f.eval(x)).unwrap();
        let rep = complementarity_check(&u, &p).unwrap();
        assert!(rep.positivity_violation <= 5.0 * h * h);
        assert!(rep.contact_violation <= 5.0 * h * h);
        assert!(rep.pde_residual <= 5.0 * h * h);
    }

    #[test]
    fn mirror_order_keeps_symmetry() {
        let h = 1.0 / 32.0;
        let p = ObstacleProblem {
            domain: BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap(),
            h,
            weight_exponent: 1.0,
            forcing: 3.0,
            boundary: Arc::new(|x: &[f64]| if x[1] > 1.0 && x[0].abs() < 1.0 { 1.0 - x[0] * x[0] } else { 0.0 }),
        };
        let opts = PsorOptions { order: SweepOrder::MirrorFirstAxis, omega: 1.9, ..Default::default() };
        let (u, rep) = solve_psor(&p, &opts, None).unwrap();
        assert!(rep.converged);
        let (nz, nr) = (u.extents()[0], u.extents()[1]);
        for i in 0..nz {
            for j in 0..nr {
                assert_eq!(u.values()[i * nr + j], u.values()[(nz - 1 - i) * nr + j]);
            }
        }
    }

    #[test]
    fn rejects_bad_relaxation() {
        let p = square_problem(1.0 / 16.0, Arc::new(|_| 0.0));
        let opts = PsorOptions { omega: 2.0, ..Default::default() };
        assert!(solve_psor(&p, &opts, None).is_err());
    }
}
