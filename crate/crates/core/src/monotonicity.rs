//! Monotone quantities of the obstacle problem along radius sequences.
//!
//! For `w = u − p` and balls of dimension `d`:
//!
//! ```text
//! H(r)   = r^{1−d} ∫_{∂B_r} w²          D(r) = r^{2−d} ∫_{B_r} |∇w|²
//! φ(r)   = D / H                         H_λ  = r^{−2λ} H
//! W_λ(r) = r^{−2λ} (D − λ H) = (φ − λ) H_λ
//! W(r,u) = r^{−(d+2)} ∫_{B_r} (|∇u|² + 2u) − 2 r^{−(d+3)} ∫_{∂B_r} u²
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, Probe, RELIABLE_RADIUS_CELLS};
use crate::solver::{assemble_stencil, contact_threshold, ObstacleProblem};

/// Relative size of `⨍ w²` against `‖u‖²_∞` below which `w` counts as zero.
pub const H_FLOOR: f64 = 1e-14;
/// Geometric ratio of successive radii.
pub const RADIUS_RATIO: f64 = 0.840_896_415_253_714_5; // 2^{-1/4}
/// Default per-pair relative tolerance at `h = 1/256`.
pub const DEFAULT_TOL_REL: f64 = 0.05;
/// The `λ` values carried by every profile row.
pub const PROFILE_LAMBDAS: [f64; 4] = [2.0, 2.5, 3.0, 4.0];

/// `w = u − p(· − x0)` sampled at the nodes.
pub fn deviation(u: &GridField, x0: &[f64], p: &dyn Fn(&[f64]) -> f64) -> GridField {
    let d = u.dim();
    u.map_with_position(|x, v| {
        let mut rel = [0.0f64; 3];
        for a in 0..d {
            rel[a] = x[a] - x0[a];
        }
        v - p(&rel[..d])
    })
}

/// Raw integrals behind `H` and `D` at one radius. The Dirichlet energy
/// is taken in Green's form `∫_{∂B} w ∂_ν w − ∫_B w Δw`, whose surface part
/// inherits the accuracy of the sphere quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    pub r: f64,
    pub dim: usize,
    /// `∫_{∂B_r} w²`
    pub surface: f64,
    /// `∫_{∂B_r} w ∂_ν w`
    pub flux: f64,
    /// `∫_{B_r} w Δw`
    pub bulk: f64,
    /// `|∂B_r|`, to normalize the floor test.
    pub sphere_area: f64,
}

impl Energies {
    pub fn measure(probe: &dyn Probe, w: &GridField, x0: &[f64], r: f64) -> Result<Self> {
        let surface = probe.sphere(w, x0, r, &|v| v * v)?;
        let flux = probe.sphere_flux(w, x0, r)?;
        let bulk = probe.ball(w, x0, r, &|l| l.value * l.laplacian)?;
        let sphere_area = probe.sphere(w, x0, r, &|_| 1.0)?;
        Ok(Self { r, dim: probe.dim(), surface, flux, bulk, sphere_area })
    }

    /// `∫_{B_r} |∇w|²`
    pub fn dirichlet(&self) -> f64 {
        self.flux - self.bulk
    }

    pub fn h(&self) -> f64 {
        self.r.powi(1 - self.dim as i32) * self.surface
    }

    pub fn d(&self) -> f64 {
        self.r.powi(2 - self.dim as i32) * self.dirichlet()
    }

    /// Errors when `⨍_{∂B_r} w²` is below `H_FLOOR · ‖u‖²_∞`.
    pub fn check_floor(&self, u_sup: f64) -> Result<()> {
        let mean = self.surface / self.sphere_area;
        if !(mean > H_FLOOR * u_sup * u_sup) {
            return Err(Error::HBelowFloor { r: self.r, h_value: self.h() });
        }
        Ok(())
    }

    pub fn phi(&self) -> f64 {
        self.d() / self.h()
    }

    pub fn h_lambda(&self, lambda: f64) -> f64 {
        self.h() * self.r.powf(-2.0 * lambda)
    }

    /// `W_λ` from its definition, cross-checked against `(φ − λ) H_λ`.
    pub fn w_lambda(&self, lambda: f64) -> Result<f64> {
        let scale = self.r.powf(-2.0 * lambda);
        let direct = scale * (self.d() - lambda * self.h());
        let via_phi = (self.phi() - lambda) * self.h_lambda(lambda);
        let size = scale * (self.d().abs() + lambda * self.h().abs());
        if (direct - via_phi).abs() > 1e-10 * size {
            return Err(Error::Rejected(format!("W_λ identity off by {:e} at r = {}", direct - via_phi, self.r)));
        }
        Ok(direct)
    }
}

/// `∫_{B_r} |∇w|²` by direct quadrature of the gradient, for cross-checks
/// of the Green form.
pub fn dirichlet_direct(probe: &dyn Probe, w: &GridField, x0: &[f64], r: f64) -> Result<f64> {
    probe.ball(w, x0, r, &|l| l.grad2)
}

/// Weiss energy `W(r, u)` about `x0`.
pub fn weiss(probe: &dyn Probe, u: &GridField, x0: &[f64], r: f64) -> Result<f64> {
    let d = probe.dim() as i32;
    let bulk = probe.ball(u, x0, r, &|l| l.grad2 + 2.0 * l.value)?;
    let surface = probe.sphere(u, x0, r, &|v| v * v)?;
    Ok(r.powi(-(d + 2)) * bulk - 2.0 * r.powi(-(d + 3)) * surface)
}

/// Almgren frequency `φ(r, w)`; `u_sup` sets the floor.
pub fn frequency(probe: &dyn Probe, w: &GridField, u_sup: f64, x0: &[f64], r: f64) -> Result<f64> {
    let e = Energies::measure(probe, w, x0, r)?;
    e.check_floor(u_sup)?;
    Ok(e.phi())
}

/// `H_λ(r, w)`.
pub fn h_lambda(probe: &dyn Probe, w: &GridField, u_sup: f64, x0: &[f64], r: f64, lambda: f64) -> Result<f64> {
    let surface = probe.sphere(w, x0, r, &|v| v * v)?;
    let area = probe.sphere(w, x0, r, &|_| 1.0)?;
    if !(surface / area > H_FLOOR * u_sup * u_sup) {
        let h = r.powi(1 - probe.dim() as i32) * surface;
        return Err(Error::HBelowFloor { r, h_value: h });
    }
    Ok(r.powf(1.0 - probe.dim() as f64 - 2.0 * lambda) * surface)
}

/// `W_λ(r, w)`.
pub fn modified_weiss(probe: &dyn Probe, w: &GridField, u_sup: f64, x0: &[f64], r: f64, lambda: f64) -> Result<f64> {
    let e = Energies::measure(probe, w, x0, r)?;
    e.check_floor(u_sup)?;
    e.w_lambda(lambda)
}

/// `|{u ≤ ε} ∩ B_r| / |B_r|` in the probe's measure.
pub fn contact_density(probe: &dyn Probe, u: &GridField, x0: &[f64], r: f64, eps: f64) -> Result<f64> {
    let contact = probe.ball(u, x0, r, &|l| if l.node <= eps { 1.0 } else { 0.0 })?;
    let volume = probe.ball(u, x0, r, &|_| 1.0)?;
    Ok(contact / volume)
}

/// Geometric radii `r_max θ^j` down to the reliable floor `4h`.
pub fn radius_schedule(r_max: f64, theta: f64, h: f64) -> Vec<f64> {
    let floor = RELIABLE_RADIUS_CELLS * h;
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= floor * (1.0 - 1e-12) {
        out.push(r);
        r *= theta;
    }
    out
}

/// One radius of a profile. Quantities that need `w` are `None` when no
/// polynomial was given or `H` fell below the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub r: f64,
    pub h: Option<f64>,
    pub d: Option<f64>,
    pub phi: Option<f64>,
    pub weiss: Option<f64>,
    pub h2: Option<f64>,
    /// Reserved for the third-order quantity `H₃(r, v)`.
    pub h3: Option<f64>,
    /// `W_λ` for `PROFILE_LAMBDAS`.
    pub w_lambda: [Option<f64>; 4],
    pub density: Option<f64>,
    pub error: Option<String>,
}

impl ProfileRow {
    fn empty(r: f64) -> Self {
        Self { r, h: None, d: None, phi: None, weiss: None, h2: None, h3: None, w_lambda: [None; 4], density: None, error: None }
    }

    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub center: Vec<f64>,
    pub dim: usize,
    pub has_polynomial: bool,
    pub rows: Vec<ProfileRow>,
}

/// Columns of a profile that the theory says are nondecreasing in `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    H,
    D,
    Phi,
    Weiss,
    H2,
    W2,
    W25,
    W3,
    W4,
    Density,
}

impl Column {
    pub const ALL: [Column; 10] =
        [Column::H, Column::D, Column::Phi, Column::Weiss, Column::H2, Column::W2, Column::W25, Column::W3, Column::W4, Column::Density];

    /// Columns claimed monotone for `w = u − p` with `p ∈ 𝒫`.
    pub const MONOTONE: [Column; 7] = [Column::Weiss, Column::Phi, Column::H2, Column::W2, Column::W25, Column::W3, Column::W4];

    pub fn name(self) -> &'static str {
        match self {
            Column::H => "H",
            Column::D => "D",
            Column::Phi => "phi",
            Column::Weiss => "W",
            Column::H2 => "H2",
            Column::W2 => "W2",
            Column::W25 => "W25",
            Column::W3 => "W3",
            Column::W4 => "W4",
            Column::Density => "density",
        }
    }

    pub fn get(self, row: &ProfileRow) -> Option<f64> {
        match self {
            Column::H => row.h,
            Column::D => row.d,
            Column::Phi => row.phi,
            Column::Weiss => row.weiss,
            Column::H2 => row.h2,
            Column::W2 => row.w_lambda[0],
            Column::W25 => row.w_lambda[1],
            Column::W3 => row.w_lambda[2],
            Column::W4 => row.w_lambda[3],
            Column::Density => row.density,
        }
    }
}

impl RadialProfile {
    pub fn column(&self, c: Column) -> Vec<(f64, Option<f64>)> {
        self.rows.iter().map(|row| (row.r, c.get(row))).collect()
    }

    pub fn valid_rows(&self) -> impl Iterator<Item = &ProfileRow> {
        self.rows.iter().filter(|r| r.is_valid())
    }

    /// CSV with header `r,H,D,phi,W,H2,W2,W25,W3,W4,density`; missing
    /// values are written as `nan`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let names: Vec<&str> = Column::ALL.iter().map(|c| c.name()).collect();
        writeln!(out, "r,{}", names.join(","))?;
        for row in &self.rows {
            let mut line = format_real(row.r);
            for c in Column::ALL {
                line.push(',');
                line.push_str(&c.get(row).map(format_real).unwrap_or_else(|| "nan".into()));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Evaluates every diagnostic at each radius of `radii` (descending).
/// Failures are recorded per row.
pub fn radial_profile(
    probe: &dyn Probe,
    u: &GridField,
    p: Option<&dyn Fn(&[f64]) -> f64>,
    x0: &[f64],
    radii: &[f64],
) -> Result<RadialProfile> {
    if radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("radii must be strictly decreasing".into()));
    }
    let u_sup = u.max_abs();
    let eps = contact_threshold(u.h());
    let w = p.map(|p| deviation(u, x0, p));
    let rows = radii
        .iter()
        .map(|&r| {
            let mut row = ProfileRow::empty(r);
            let result: Result<()> = (|| {
                row.weiss = Some(weiss(probe, u, x0, r)?);
                row.density = Some(contact_density(probe, u, x0, r, eps)?);
                if let Some(w) = &w {
                    let e = Energies::measure(probe, w, x0, r)?;
                    row.h = Some(e.h());
                    row.d = Some(e.d());
                    e.check_floor(u_sup)?;
                    row.phi = Some(e.phi());
                    row.h2 = Some(e.h_lambda(2.0));
                    for (slot, &lam) in row.w_lambda.iter_mut().zip(&PROFILE_LAMBDAS) {
                        *slot = Some(e.w_lambda(lam)?);
                    }
                }
                Ok(())
            })();
            if let Err(e) = result {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect();
    Ok(RadialProfile { center: x0.to_vec(), dim: probe.dim(), has_polynomial: w.is_some(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub column: String,
    /// Largest `(value(r_small) − value(r_big)) / max|value|`, floored at 0.
    pub worst_violation: f64,
    /// Radius pairs `(r_big, r_small)` whose violation exceeds the tolerance.
    pub violating_pairs: Vec<(f64, f64)>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub tol_rel: f64,
    pub columns: Vec<ColumnReport>,
    pub pass: bool,
}

impl MonotonicityReport {
    pub fn column(&self, name: &str) -> Option<&ColumnReport> {
        self.columns.iter().find(|c| c.column == name)
    }
}

/// Checks that each column in `columns` is nondecreasing in `r`, pairing
/// adjacent rows that both carry a value.
pub fn monotonicity_report(profile: &RadialProfile, columns: &[Column], tol_rel: f64) -> Result<MonotonicityReport> {
    if profile.rows.len() < 6 {
        return Err(Error::TooFewPoints(profile.rows.len()));
    }
    let mut reports = Vec::new();
    for &c in columns {
        let values: Vec<(f64, f64)> = profile.rows.iter().filter_map(|row| c.get(row).map(|v| (row.r, v))).collect();
        let scale = values.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
        let mut worst = 0.0f64;
        let mut pairs = Vec::new();
        if scale > 0.0 {
            for pair in values.windows(2) {
                let ((r_big, v_big), (r_small, v_small)) = (pair[0], pair[1]);
                let viol = ((v_small - v_big) / scale).max(0.0);
                worst = worst.max(viol);
                if viol > tol_rel {
                    pairs.push((r_big, r_small));
                }
            }
        }
        reports.push(ColumnReport { column: c.name().into(), worst_violation: worst, pass: pairs.is_empty(), violating_pairs: pairs });
    }
    let pass = reports.iter().all(|r| r.pass);
    Ok(MonotonicityReport { tol_rel, columns: reports, pass })
}

/// Smallest node value of `w_i ((Lu)_i − k w_i)` over the contact set, the
/// discrete counterpart of `w Δw = p χ_{u=0} ≥ 0`.
pub fn contact_sign_minimum(u: &GridField, w: &GridField, problem: &ObstacleProblem) -> Result<f64> {
    let st = assemble_stencil(problem)?;
    let eps = contact_threshold(u.h());
    let mut worst = f64::INFINITY;
    for i in 0..u.len() {
        if u.values()[i] <= eps {
            let lam = st.multiplier(u.values(), i) / st.node_weight[i];
            worst = worst.min(-w.values()[i] * lam);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::fixtures::{homogeneous_harmonic, QuadraticBlowup};
    use crate::grid::{BoxDomain, CartesianProbe};

    fn sampled(dim: usize, h: f64, f: impl Fn(&[f64]) -> f64) -> GridField {
        GridField::build(BoxDomain::cube(dim, 1.0).unwrap(), h, f).unwrap()
    }

    #[test]
    fn weiss_of_quadratic_2d() {
        let a = QuadraticBlowup::diag(&[0.3, 0.7]).unwrap();
        let u = sampled(2, 1.0 / 256.0, |x| a.eval(x));
        let probe = CartesianProbe::new(&u);
        for r in [0.1, 0.2, 0.4] {
            let w = weiss(&probe, &u, &[0.0, 0.0], r).unwrap();
            assert!((w / (PI / 8.0) - 1.0).abs() < 0.02, "r = {r}: {w}");
        }
    }

    #[test]
    fn weiss_of_zero() {
        let u = sampled(2, 1.0 / 64.0, |_| 0.0);
        let probe = CartesianProbe::new(&u);
        assert_eq!(weiss(&probe, &u, &[0.0, 0.0], 0.3).unwrap(), 0.0);
    }

    #[test]
    fn frequency_of_homogeneous_harmonics() {
        let h = 1.0 / 128.0;
        for k in [2usize, 3] {
            let q = homogeneous_harmonic(2, k, 0).unwrap();
            let w = sampled(2, h, |x| q.eval(x));
            let probe = CartesianProbe::new(&w);
            for r in radius_schedule(0.4, RADIUS_RATIO, h) {
                let phi = frequency(&probe, &w, 1.0, &[0.0, 0.0], r).unwrap();
                assert!((phi - k as f64).abs() < 0.02, "k = {k}, r = {r}: {phi}");
            }
        }
    }

    #[test]
    fn h_lambda_scaling() {
        let h = 1.0 / 128.0;
        let q = homogeneous_harmonic(2, 3, 1).unwrap();
        let w = sampled(2, h, |x| q.eval(x));
        let probe = CartesianProbe::new(&w);
        let vals: Vec<f64> =
            [0.1, 0.2, 0.4].iter().map(|&r| h_lambda(&probe, &w, 1.0, &[0.0, 0.0], r, 3.0).unwrap()).collect();
        for v in &vals {
            assert!((v / vals[0] - 1.0).abs() < 0.01);
        }
        let w2 = w.with_values(w.values().iter().map(|v| 3.0 * v).collect());
        let scaled = h_lambda(&probe, &w2, 1.0, &[0.0, 0.0], 0.2, 3.0).unwrap();
        assert!((scaled / vals[1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn w_lambda_vanishes_at_the_homogeneity() {
        let h = 1.0 / 128.0;
        let q = homogeneous_harmonic(2, 2, 0).unwrap();
        let w = sampled(2, h, |x| q.eval(x));
        let probe = CartesianProbe::new(&w);
        let e = Energies::measure(&probe, &w, &[0.0, 0.0], 0.3).unwrap();
        let w2 = e.w_lambda(2.0).unwrap();
        assert!(w2.abs() <= 1e-2 * e.h_lambda(2.0));
        let w0 = e.w_lambda(0.0).unwrap();
        assert!((w0 - e.d()).abs() <= 1e-14 * e.d());
    }

    #[test]
    fn floor_rejects_zero_deviation() {
        let h = 1.0 / 64.0;
        let a = QuadraticBlowup::diag(&[0.5, 0.5]).unwrap();
        let u = sampled(2, h, |x| a.eval(x));
        let w = deviation(&u, &[0.0, 0.0], &|x| a.eval(x));
        let probe = CartesianProbe::new(&u);
        assert!(matches!(frequency(&probe, &w, u.max_abs(), &[0.0, 0.0], 0.3), Err(Error::HBelowFloor { .. })));
    }

    #[test]
    fn schedule_is_geometric_and_reliable() {
        let h = 1.0 / 256.0;
        let radii = radius_schedule(0.4, RADIUS_RATIO, h);
        assert!(radii.iter().all(|&r| r >= 4.0 * h * (1.0 - 1e-12)));
        for w in radii.windows(2) {
            assert!((w[1] / w[0] - RADIUS_RATIO).abs() < 1e-12);
        }
        assert!(radii.last().unwrap() * RADIUS_RATIO < 4.0 * h);
    }

    #[test]
    fn corrupted_profile_is_caught() {
        let h = 1.0 / 128.0;
        let q = homogeneous_harmonic(2, 2, 0).unwrap();
        let a = QuadraticBlowup::diag(&[0.5, 0.5]).unwrap();
        let u = sampled(2, h, |x| a.eval(x) + 0.01 * q.eval(x));
        let probe = CartesianProbe::new(&u);
        let radii = radius_schedule(0.4, RADIUS_RATIO, h);
        let pf = |x: &[f64]| a.eval(x);
        let mut profile = radial_profile(&probe, &u, Some(&pf), &[0.0, 0.0], &radii).unwrap();
        let report = monotonicity_report(&profile, &Column::MONOTONE, 1e-6).unwrap();
        assert!(report.column("phi").unwrap().pass);
        assert!(report.column("H2").unwrap().pass);
        let k = 5;
        profile.rows[k].h2 = profile.rows[k].h2.map(|v| v * 1.1);
        let report = monotonicity_report(&profile, &[Column::H2], 0.05).unwrap();
        assert!(!report.pass);
        assert_eq!(report.columns[0].violating_pairs, vec![(radii[k - 1], radii[k])]);
    }

    #[test]
    fn csv_header_and_digits() {
        let h = 1.0 / 64.0;
        let u = sampled(2, h, |x| 0.5 * x[0] * x[0]);
        let probe = CartesianProbe::new(&u);
        let profile = radial_profile(&probe, &u, None, &[0.0, 0.0], &[0.4, 0.3]).unwrap();
        let mut buf = Vec::new();
        profile.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "r,H,D,phi,W,H2,W2,W25,W3,W4,density");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "4.0000000000000002e-1");
        assert_eq!(first[1], "nan");
    }
}
