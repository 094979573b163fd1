//! Closed-form solutions and blow-up models: quadratic blow-ups `½ x·Ax`,
//! the half-space solution, homogeneous harmonic polynomials and the
//! admissible frequency sets. Fixtures are addressable by name.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Eigenvalues below this (relative to `tr A = 1`) count toward the kernel.
pub const KERNEL_EIGEN_THRESHOLD: f64 = 0.05;

/// Symmetric `A ⪰ 0` with `tr A = 1`; the blow-up `p(x) = ½ x·Ax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBlowup {
    dim: usize,
    /// Row-major entries.
    entries: Vec<f64>,
}

impl QuadraticBlowup {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        let q = Self::unchecked(dim, entries)?;
        q.validate()?;
        Ok(q)
    }

    /// Builds the matrix without enforcing `A ⪰ 0`; used for fitted matrices.
    pub fn unchecked(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim || dim == 0 {
            return Err(Error::InvalidMatrix(format!("expected {} entries", dim * dim)));
        }
        for i in 0..dim {
            for j in 0..i {
                if (entries[i * dim + j] - entries[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::InvalidMatrix("matrix is not symmetric".into()));
                }
            }
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        Ok(Self { dim, entries })
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let mut e = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            e[i * n + i] = *v;
        }
        Self::new(n, e)
    }

    /// `½ (e·x)²`, the quadratic matching a half-space direction.
    pub fn rank_one(e: &[f64]) -> Result<Self> {
        let n = e.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = e[i] * e[j];
            }
        }
        Self::new(n, m)
    }

    pub fn validate(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMatrix(format!("trace {tr} != 1")));
        }
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -1e-12 {
            return Err(Error::InvalidMatrix(format!("negative eigenvalue {min}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    /// `½ x·Ax`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.entries[i * n + j] * x[j];
            }
            acc += x[i] * row;
        }
        0.5 * acc
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(self.matrix()).eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Kernel `L = {p = 0}` using the default eigenvalue threshold.
    pub fn kernel(&self) -> KernelStratum {
        self.kernel_with(KERNEL_EIGEN_THRESHOLD)
    }

    pub fn kernel_with(&self, threshold: f64) -> KernelStratum {
        let eig = SymmetricEigen::new(self.matrix());
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..self.dim)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (kernel, perp): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(l, _)| *l < threshold);
        KernelStratum {
            m: kernel.len(),
            kernel_basis: kernel.into_iter().map(|(_, v)| v).collect(),
            complement_basis: perp.into_iter().map(|(_, v)| v).collect(),
        }
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// `P A Pᵀ` for a signed permutation `P` given as (source axis, sign) per
    /// target axis.
    pub fn conjugate_signed_permutation(&self, perm: &[(usize, f64)]) -> Self {
        let n = self.dim;
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (si, gi) = perm[i];
                let (sj, gj) = perm[j];
                e[i * n + j] = gi * gj * self.get(si, sj);
            }
        }
        Self { dim: n, entries: e }
    }
}

/// Dimension of `L = ker A` with orthonormal bases of `L` and `L^⊥`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStratum {
    pub m: usize,
    pub kernel_basis: Vec<Vec<f64>>,
    pub complement_basis: Vec<Vec<f64>>,
}

impl KernelStratum {
    /// Euclidean distance from `x` to the subspace `L`.
    pub fn distance_to_kernel(&self, x: &[f64]) -> f64 {
        self.complement_basis
            .iter()
            .map(|b| {
                let c: f64 = b.iter().zip(x).map(|(b, x)| b * x).sum();
                c * c
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// `p(x) = ½ x·Ax`, which solves the obstacle problem on all of R^n.
pub fn polynomial_solution(a: &QuadraticBlowup) -> Result<impl Fn(&[f64]) -> f64 + Clone + Send + Sync> {
    a.validate()?;
    let a = a.clone();
    Ok(move |x: &[f64]| a.eval(x))
}

/// `u(x) = ½ max(e·x, 0)²`.
pub fn halfspace_solution(e: &[f64]) -> Result<impl Fn(&[f64]) -> f64 + Clone + Send + Sync> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::NotUnit(norm));
    }
    let e = e.to_vec();
    Ok(move |x: &[f64]| {
        let s: f64 = e.iter().zip(x).map(|(a, b)| a * b).sum();
        0.5 * s.max(0.0).powi(2)
    })
}

/// Homogeneous harmonic polynomial with unit `L²(∂B₁)` norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicPolynomial {
    pub dim: usize,
    pub degree: usize,
    pub index: usize,
    scale: f64,
}

impl HarmonicPolynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.scale * raw_harmonic(self.dim, self.degree, self.index, x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        // fourth-order central differences are exact for degree <= 4
        let eps = 1e-3;
        (0..x.len())
            .map(|a| {
                let mut p = x.to_vec();
                let mut f = |t: f64| {
                    p[a] = x[a] + t;
                    self.eval(&p)
                };
                (-f(2.0 * eps) + 8.0 * f(eps) - 8.0 * f(-eps) + f(-2.0 * eps)) / (12.0 * eps)
            })
            .collect()
    }
}

fn complex_power(x: f64, y: f64, k: usize) -> (f64, f64) {
    let (mut re, mut im) = (1.0, 0.0);
    for _ in 0..k {
        let nr = re * x - im * y;
        im = re * y + im * x;
        re = nr;
    }
    (re, im)
}

fn raw_harmonic(dim: usize, k: usize, index: usize, x: &[f64]) -> f64 {
    match dim {
        2 => {
            let (re, im) = complex_power(x[0], x[1], k);
            if index == 0 {
                re
            } else {
                im
            }
        }
        _ => {
            let (a, b, c) = (x[0], x[1], x[2]);
            match (k, index) {
                (2, 0) => a * b,
                (2, 1) => b * c,
                (2, 2) => a * c,
                (2, 3) => a * a - b * b,
                (2, 4) => 2.0 * c * c - a * a - b * b,
                (3, 0) => a * b * c,
                (3, 1) => a * a * a - 3.0 * a * b * b,
                (3, 2) => 3.0 * a * a * b - b * b * b,
                (3, 3) => c * (a * a - b * b),
                (3, 4) => c * (2.0 * c * c - 3.0 * a * a - 3.0 * b * b),
                (3, 5) => a * (4.0 * c * c - a * a - b * b),
                (3, 6) => b * (4.0 * c * c - a * a - b * b),
                _ => f64::NAN,
            }
        }
    }
}

/// `(dim, degree, index)` selects the basis element; 2D supports any degree
/// (index 0: `Re (x₁+ix₂)^k`, index 1: `Im`), 3D degrees 2 and 3.
pub fn homogeneous_harmonic(dim: usize, degree: usize, index: usize) -> Result<HarmonicPolynomial> {
    let err = Error::UnsupportedHarmonic { dim, degree, index };
    let ok = match dim {
        2 => degree >= 1 && index < 2,
        3 => (degree == 2 && index < 5) || (degree == 3 && index < 7),
        _ => false,
    };
    if !ok {
        return Err(err);
    }
    let norm2 = match dim {
        2 => PI,
        _ => {
            // product Gauss rule, exact for degree <= 6 polynomials on S^2
            let (c, w) = gauss_legendre(8);
            let nphi = 16;
            let mut acc = 0.0;
            for (ci, wi) in c.iter().zip(&w) {
                let s = (1.0 - ci * ci).sqrt();
                for j in 0..nphi {
                    let phi = 2.0 * PI * j as f64 / nphi as f64;
                    let v = raw_harmonic(3, degree, index, &[s * phi.cos(), s * phi.sin(), *ci]);
                    acc += wi * 2.0 * PI / nphi as f64 * v * v;
                }
            }
            acc
        }
    };
    Ok(HarmonicPolynomial { dim, degree, index, scale: 1.0 / norm2.sqrt() })
}

/// Admissible values of `λ_* = φ(0⁺, u − p_*)` for a singular point in the
/// stratum `Σ_m` of R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleFrequencySet {
    pub n: usize,
    pub m: usize,
    /// Isolated admissible values below the arithmetic tails.
    pub values: Vec<f64>,
    /// `(start, step)` tails `start + j·step`, `j ≥ 0`.
    pub tails: Vec<(f64, f64)>,
}

impl AdmissibleFrequencySet {
    pub fn new(n: usize, m: usize) -> Self {
        if m + 1 == n {
            // top stratum: homogeneities of the thin-obstacle blow-ups
            Self { n, m, values: vec![], tails: vec![(3.0, 1.0), (3.5, 2.0)] }
        } else {
            Self { n, m, values: vec![], tails: vec![(2.0, 1.0)] }
        }
    }

    pub fn distance(&self, lambda: f64) -> f64 {
        let mut best = self.values.iter().map(|v| (v - lambda).abs()).fold(f64::INFINITY, f64::min);
        for &(start, step) in &self.tails {
            let d = if lambda <= start {
                start - lambda
            } else {
                let j = ((lambda - start) / step).round();
                (lambda - (start + j * step)).abs()
            };
            best = best.min(d);
        }
        best
    }

    pub fn contains(&self, lambda: f64, tol: f64) -> bool {
        self.distance(lambda) <= tol
    }
}

pub fn admissible_set_distance(n: usize, m: usize, lambda: f64) -> f64 {
    AdmissibleFrequencySet::new(n, m).distance(lambda)
}

pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A named boundary-data / oracle function.
#[derive(Clone)]
pub struct Fixture {
    pub name: String,
    pub dim: usize,
    pub f: PointFn,
    /// Known blow-up at the origin, when the fixture has one.
    pub blowup: Option<QuadraticBlowup>,
    /// Whether `f` itself solves the obstacle problem.
    pub exact: bool,
}

impl std::fmt::Debug for Fixture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fixture").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl Fixture {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

fn parse_floats(parts: &[&str], name: &str) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad number in fixture {name}"))))
        .collect()
}

/// Resolves a fixture id.
///
/// * `zero-2d`, `zero-3d`
/// * `halfspace-e1` / `-e2` / `-e3` (2D unless `-3d` suffix), `halfspace-angle-<radians>`
/// * `poly-diag-a-b[-c]`, `poly-sym-a11-a12-a22`
/// * `sing-k<K>-t<T>`: `max(½x₂² + T·Re((x₁+ix₂)^K), 0)` in 2D;
///   `sing-im<K>-t<T>` uses `Im`; further `k<K>-t<T>` / `im<K>-t<T>` pairs
///   add terms, e.g. `sing-im3-t0.05-k4-t0.05`
/// * `touch-k<K>`: `(1 − x₁²)₊/K` where `|x₂| ≥ 1`, zero elsewhere, in 2D. On
///   `[-1, 1]²` the contact set is a lens around the `x₁` axis that reaches the
///   origin near `K = 1.5174` (`h = 1/256`); larger `K` widens it.
pub fn fixture(name: &str) -> Result<Fixture> {
    let bad = || Error::InvalidArgument(format!("unknown fixture {name}"));
    let parts: Vec<&str> = name.split('-').collect();
    match parts.as_slice() {
        ["zero", d] => {
            let dim = match *d {
                "2d" => 2,
                "3d" => 3,
                _ => return Err(bad()),
            };
            Ok(Fixture { name: name.into(), dim, f: Arc::new(|_| 0.0), blowup: None, exact: true })
        }
        ["halfspace", "angle", t] => {
            let t: f64 = t.parse().map_err(|_| bad())?;
            let e = [t.cos(), t.sin()];
            let f = halfspace_solution(&e)?;
            Ok(Fixture { name: name.into(), dim: 2, f: Arc::new(f), blowup: None, exact: true })
        }
        ["halfspace", axis, rest @ ..] => {
            let dim = match rest {
                [] => 2,
                ["3d"] => 3,
                _ => return Err(bad()),
            };
            let k: usize = axis.strip_prefix('e').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if k == 0 || k > dim {
                return Err(bad());
            }
            let mut e = vec![0.0; dim];
            e[k - 1] = 1.0;
            let f = halfspace_solution(&e)?;
            Ok(Fixture { name: name.into(), dim, f: Arc::new(f), blowup: None, exact: true })
        }
        ["poly", "diag", vals @ ..] => {
            let v = parse_floats(vals, name)?;
            let a = QuadraticBlowup::diag(&v)?;
            let f = polynomial_solution(&a)?;
            Ok(Fixture { name: name.into(), dim: v.len(), f: Arc::new(f), blowup: Some(a), exact: true })
        }
        ["poly", "sym", a11, a12, a22] => {
            let v = parse_floats(&[a11, a12, a22], name)?;
            let a = QuadraticBlowup::new(2, vec![v[0], v[1], v[1], v[2]])?;
            let f = polynomial_solution(&a)?;
            Ok(Fixture { name: name.into(), dim: 2, f: Arc::new(f), blowup: Some(a), exact: true })
        }
        ["sing", terms @ ..] if !terms.is_empty() && terms.len() % 2 == 0 => {
            let mut parsed = Vec::new();
            for pair in terms.chunks(2) {
                let (imaginary, k) = match (pair[0].strip_prefix("im"), pair[0].strip_prefix('k')) {
                    (Some(rest), _) => (true, rest),
                    (None, Some(rest)) => (false, rest),
                    _ => return Err(bad()),
                };
                let k: usize = k.parse().map_err(|_| bad())?;
                let t: f64 = pair[1].strip_prefix('t').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                parsed.push((imaginary, k, t));
            }
            let f = move |x: &[f64]| {
                let mut v = 0.5 * x[1] * x[1];
                for &(imaginary, k, t) in &parsed {
                    let (re, im) = complex_power(x[0], x[1], k);
                    v += t * if imaginary { im } else { re };
                }
                v.max(0.0)
            };
            Ok(Fixture {
                name: name.into(),
                dim: 2,
                f: Arc::new(f),
                blowup: Some(QuadraticBlowup::diag(&[0.0, 1.0])?),
                exact: false,
            })
        }
        ["touch", k] => {
            let k: f64 = k.strip_prefix('k').and_then(|s| s.parse().ok()).filter(|k: &f64| *k > 0.0).ok_or_else(bad)?;
            let f = move |x: &[f64]| if x[1].abs() >= 1.0 { (1.0 - x[0] * x[0]).max(0.0) / k } else { 0.0 };
            Ok(Fixture {
                name: name.into(),
                dim: 2,
                f: Arc::new(f),
                blowup: Some(QuadraticBlowup::diag(&[0.0, 1.0])?),
                exact: false,
            })
        }
        _ => Err(bad()),
    }
}

/// Least-squares solve helper shared by the fits.
pub(crate) fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<DVector<f64>> {
    let ncol = rows.first()?.len();
    let a = DMatrix::from_fn(rows.len(), ncol, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(rhs);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    ata.cholesky().map(|c| c.solve(&atb))
}
