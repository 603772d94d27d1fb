//! Small dense linear-algebra helpers: closed-form eigenvalues for 2×2 and
//! 3×3 matrices, stability labels, real eigenvectors and bordered solves.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;

/// Eigenvalues with `|Re λ|` at or below this are treated as on the imaginary axis.
pub const HYPERBOLICITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    StableNode,
    StableFocus,
    Saddle,
    UnstableNode,
    UnstableFocus,
    NonHyperbolic,
}

impl Stability {
    pub fn is_stable(self) -> bool {
        matches!(self, Stability::StableNode | Stability::StableFocus)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stability::StableNode => "stable-node",
            Stability::StableFocus => "stable-focus",
            Stability::Saddle => "saddle",
            Stability::UnstableNode => "unstable-node",
            Stability::UnstableFocus => "unstable-focus",
            Stability::NonHyperbolic => "non-hyperbolic",
        }
    }
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stability label from eigenvalues.
pub fn stability_of(eigs: &[Complex64]) -> Stability {
    if eigs.iter().any(|e| e.re.abs() <= HYPERBOLICITY_TOL) {
        return Stability::NonHyperbolic;
    }
    let complex = eigs.iter().any(|e| e.im != 0.0);
    let neg = eigs.iter().filter(|e| e.re < 0.0).count();
    match (neg, complex) {
        (n, false) if n == eigs.len() => Stability::StableNode,
        (n, true) if n == eigs.len() => Stability::StableFocus,
        (0, false) => Stability::UnstableNode,
        (0, true) => Stability::UnstableFocus,
        _ => Stability::Saddle,
    }
}

fn sort_eigs(v: &mut [Complex64]) {
    v.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Roots of `λ² − t λ + d`.
pub fn eig2(trace: f64, det: f64) -> [Complex64; 2] {
    let half = trace / 2.0;
    let disc = half * half - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // avoid cancellation in the smaller root
        let big = if half >= 0.0 { half + s } else { half - s };
        let small = if big != 0.0 { det / big } else { 0.0 };
        let (a, b) = if big >= small { (big, small) } else { (small, big) };
        [Complex64::new(a, 0.0), Complex64::new(b, 0.0)]
    } else {
        let w = (-disc).sqrt();
        [Complex64::new(half, w), Complex64::new(half, -w)]
    }
}

/// Roots of the monic cubic `λ³ + a λ² + b λ + c`, closed form then one
/// Newton polish per root.
pub fn cubic_roots(a: f64, b: f64, c: f64) -> [Complex64; 3] {
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let shift = -a / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        let t1 = u + v;
        let re = -t1 / 2.0;
        let im = 3f64.sqrt() / 2.0 * (u - v);
        [
            Complex64::new(t1 + shift, 0.0),
            Complex64::new(re + shift, im.abs()),
            Complex64::new(re + shift, -im.abs()),
        ]
    } else if p == 0.0 {
        [Complex64::new(shift, 0.0); 3]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        let tau = 2.0 * std::f64::consts::PI / 3.0;
        [
            Complex64::new(r * phi.cos() + shift, 0.0),
            Complex64::new(r * (phi - tau).cos() + shift, 0.0),
            Complex64::new(r * (phi - 2.0 * tau).cos() + shift, 0.0),
        ]
    };
    for z in roots.iter_mut() {
        let f = ((*z + a) * *z + b) * *z + c;
        let df = (3.0 * *z + 2.0 * a) * *z + b;
        if df.norm() > 1e-12 {
            let next = *z - f / df;
            let fn_ = ((next + a) * next + b) * next + c;
            if fn_.norm() < f.norm() {
                *z = if z.im == 0.0 { Complex64::new(next.re, 0.0) } else { next };
            }
        }
    }
    roots
}

/// Eigenvalues of a small square matrix: closed form for `N ≤ 3`, Schur
/// decomposition otherwise. Sorted by descending real part.
pub fn eigenvalues<const N: usize>(m: &SMatrix<f64, N, N>) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = match N {
        1 => vec![Complex64::new(m[(0, 0)], 0.0)],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            eig2(tr, det).to_vec()
        }
        3 => {
            let (a, b, c) = char_poly3(m);
            cubic_roots(a, b, c).to_vec()
        }
        _ => DMatrix::from_fn(N, N, |i, j| m[(i, j)]).complex_eigenvalues().iter().copied().collect(),
    };
    sort_eigs(&mut out);
    out
}

/// Coefficients `(a, b, c)` of `λ³ + a λ² + b λ + c = det(λI − M)` for 3×3 `M`.
pub fn char_poly3<const N: usize>(m: &SMatrix<f64, N, N>) -> (f64, f64, f64) {
    debug_assert_eq!(N, 3);
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)]);
    (-tr, minors, -det)
}

/// Eigenvalues and stability label of a Jacobian.
pub fn classify_point<const N: usize>(j: &SMatrix<f64, N, N>) -> (Vec<Complex64>, Stability) {
    let e = eigenvalues(j);
    let s = stability_of(&e);
    (e, s)
}

/// Hopf test function: the trace in 2D, the Hurwitz quantity `a₁a₂ − a₃` in
/// 3D (zero when a pair `±iω` exists).
pub fn hopf_test<const N: usize>(j: &SMatrix<f64, N, N>) -> f64 {
    match N {
        2 => j[(0, 0)] + j[(1, 1)],
        3 => {
            let (a, b, c) = char_poly3(j);
            // a = -tr; Hurwitz: a b - c; negate so the sign matches the trace convention
            -(a * b - c)
        }
        _ => {
            // largest real part among complex pairs
            let e = eigenvalues(j);
            e.iter().filter(|z| z.im != 0.0).map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Frequency `ω` of an imaginary pair at a Hopf point, if it exists.
pub fn hopf_frequency<const N: usize>(j: &SMatrix<f64, N, N>) -> Option<f64> {
    let w2 = match N {
        2 => det(j),
        3 => char_poly3(j).1,
        _ => return None,
    };
    (w2 > 0.0).then(|| w2.sqrt())
}

/// Unit-norm real null vector of `M − λI` via SVD.
pub fn real_eigenvector<const N: usize>(m: &SMatrix<f64, N, N>, lambda: f64) -> SVector<f64, N> {
    let a = DMatrix::from_fn(N, N, |i, j| m[(i, j)] - if i == j { lambda } else { 0.0 });
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let k = (0..N)
        .min_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]))
        .unwrap();
    SVector::<f64, N>::from_fn(|i, _| vt[(k, i)])
}

/// Determinant of a small square matrix (closed form up to 3×3).
pub fn det<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    match N {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        3 => -char_poly3(m).2,
        _ => DMatrix::from_fn(N, N, |i, j| m[(i, j)]).determinant(),
    }
}

/// Solves `m x = b` for a small square system.
pub fn solve_small<const N: usize>(m: &SMatrix<f64, N, N>, b: &SVector<f64, N>) -> Result<SVector<f64, N>, SolveError> {
    let a = DMatrix::from_fn(N, N, |i, j| m[(i, j)]);
    let x = solve(a, &DVector::from_iterator(N, b.iter().copied()))?;
    Ok(SVector::<f64, N>::from_fn(|i, _| x[i]))
}

pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
    let lu = a.lu();
    let x = lu.solve(b).ok_or(SolveError::Singular)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(SolveError::Singular)
    }
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
