//! The finite model of a II₁ factor.
//!
//! Elements are `n × n` complex matrices with the normalized trace
//! `τ = tr / n`. The distinguished masa is the algebra of diagonal matrices and
//! the conditional expectation onto it keeps the diagonal.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{descending_order, BorelCellSet, StepProfile};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// An element of the matrix model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct FactorElement {
    m: CMatrix,
}

/// Wire format `{"n": .., "re": [[..]], "im": [[..]]}`, rows first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Option<Vec<Vec<f64>>>,
}

impl TryFrom<MatrixJson> for FactorElement {
    type Error = Error;

    fn try_from(j: MatrixJson) -> Result<Self> {
        let n = j.n;
        let rows_ok = |rows: &Vec<Vec<f64>>| rows.len() == n && rows.iter().all(|r| r.len() == n);
        if !rows_ok(&j.re) || !j.im.as_ref().is_none_or(rows_ok) {
            return Err(Error::InvalidInput(format!("matrix rows do not form an {n}x{n} grid")));
        }
        let m = CMatrix::from_fn(n, n, |r, c| {
            let im = j.im.as_ref().map_or(0.0, |im| im[r][c]);
            C64::new(j.re[r][c], im)
        });
        FactorElement::new(m)
    }
}

impl From<FactorElement> for MatrixJson {
    fn from(e: FactorElement) -> Self {
        let n = e.n();
        let rows = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
            (0..n).map(|r| (0..n).map(|c| f(&e.m[(r, c)])).collect()).collect()
        };
        MatrixJson {
            n,
            re: rows(|z| z.re),
            im: Some(rows(|z| z.im)),
        }
    }
}

impl FactorElement {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self { m })
    }

    pub fn from_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|x| C64::new(x, 0.0)))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: CMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m: CMatrix::zeros(n, n),
        }
    }

    pub fn from_diagonal(d: &[C64]) -> Result<Self> {
        Self::new(CMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Result<Self> {
        let d: Vec<C64> = d.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diagonal(&d)
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        Self { m: self.m.adjoint() }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self { m: &self.m * &other.m }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { m: &self.m * C64::new(c, 0.0) }
    }

    /// Normalized trace `tr / n`.
    pub fn trace(&self) -> C64 {
        self.m.trace() / self.n() as f64
    }

    /// Operator norm, the largest singular value.
    pub fn op_norm(&self) -> f64 {
        singular_values(self)[0]
    }

    /// Normalized 2-norm `√τ(X*X)`.
    pub fn norm2(&self) -> f64 {
        self.m.norm() / (self.n() as f64).sqrt()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Frobenius norm of `T - T*`.
    pub fn asymmetry(&self) -> f64 {
        (&self.m - self.m.adjoint()).norm()
    }

    /// The self-adjointness gate: asymmetry at most `n·tol` relative to the
    /// entry scale.
    pub fn self_adjoint_threshold(&self, tol: f64) -> f64 {
        self.n() as f64 * tol * self.max_abs_entry().max(1.0)
    }

    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        self.asymmetry() <= self.self_adjoint_threshold(tol)
    }

    fn require_self_adjoint(&self, tol: f64) -> Result<()> {
        let asymmetry = self.asymmetry();
        let threshold = self.self_adjoint_threshold(tol);
        if asymmetry > threshold {
            return Err(Error::NotSelfAdjoint {
                asymmetry,
                threshold,
            });
        }
        Ok(())
    }

    /// Exactly diagonal (all off-diagonal entries are zero).
    pub fn is_diagonal(&self) -> bool {
        let n = self.n();
        (0..n).all(|r| (0..n).all(|c| r == c || self.m[(r, c)] == ZERO))
    }

    pub fn diagonal(&self) -> Vec<C64> {
        self.m.diagonal().iter().copied().collect()
    }

    /// Operator norm of `U*U - I`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.n();
        let g = FactorElement {
            m: self.m.adjoint() * &self.m - CMatrix::identity(n, n),
        };
        g.op_norm()
    }
}

/// An element of the diagonal masa, stored as its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagonalElement {
    #[serde(with = "complex_pairs")]
    diag: Vec<C64>,
}

mod complex_pairs {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[C64], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}

impl DiagonalElement {
    pub fn new(diag: Vec<C64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidInput("empty diagonal".into()));
        }
        if diag.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("diagonal has non-finite entries".into()));
        }
        Ok(Self { diag })
    }

    pub fn from_real(d: &[f64]) -> Result<Self> {
        Self::new(d.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn entries(&self) -> &[C64] {
        &self.diag
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.diag.iter().map(|z| z.norm()).collect()
    }

    /// Sorted profile of the moduli, i.e. `μ(A)`.
    pub fn singular_profile(&self) -> StepProfile {
        let mut m = self.moduli();
        m.sort_by(|a, b| b.total_cmp(a));
        StepProfile::new(m).expect("moduli are finite")
    }

    pub fn to_element(&self) -> FactorElement {
        FactorElement::from_diagonal(&self.diag).expect("entries are finite")
    }
}

/// Sorted eigen-data of a self-adjoint element.
#[derive(Debug, Clone)]
pub struct SpectralResolution {
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is an eigenvector for `eigenvalues[k]`.
    pub frame: CMatrix,
}

impl SpectralResolution {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The spectral cell `[k/n, (k+1)/n)` carried by sorted position `k`.
    pub fn cell_of_index(&self, k: usize) -> (f64, f64) {
        let n = self.n() as f64;
        (k as f64 / n, (k + 1) as f64 / n)
    }

    /// `frame · diag(eigenvalues) · frame*`.
    pub fn reconstruct(&self) -> CMatrix {
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.n(),
            self.eigenvalues.iter().map(|&x| C64::new(x, 0.0)),
        ));
        &self.frame * d * self.frame.adjoint()
    }

    /// Projection onto the eigenvectors at the sorted positions in `x`.
    pub fn projection(&self, x: &BorelCellSet) -> Result<FactorElement> {
        if x.resolution() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.resolution(),
            });
        }
        let n = self.n();
        let mut p = CMatrix::zeros(n, n);
        for k in x.iter() {
            let v = self.frame.column(k);
            p += v * v.adjoint();
        }
        FactorElement::new(p)
    }
}

fn permutation_frame(order: &[usize]) -> CMatrix {
    let n = order.len();
    let mut f = CMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        f[(i, k)] = ONE;
    }
    f
}

/// Sorted spectral resolution of a self-adjoint element. Diagonal inputs get
/// an exact permutation frame; others are symmetrized before the
/// eigensolver.
pub fn spectral_resolution(t: &FactorElement, tol: f64) -> Result<SpectralResolution> {
    t.require_self_adjoint(tol)?;
    if t.is_diagonal() {
        let d: Vec<f64> = t.m.diagonal().iter().map(|z| z.re).collect();
        let order = descending_order(&d);
        return Ok(SpectralResolution {
            eigenvalues: order.iter().map(|&i| d[i]).collect(),
            frame: permutation_frame(&order),
        });
    }
    let h = (&t.m + t.m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let order = descending_order(&vals);
    let n = t.n();
    let frame = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SpectralResolution {
        eigenvalues: order.iter().map(|&i| vals[i]).collect(),
        frame,
    })
}

/// Singular value decomposition `T = u · diag(s) · v_t` with `s`
/// non-increasing.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v_t: CMatrix,
}

pub fn sorted_svd(t: &FactorElement) -> SortedSvd {
    let n = t.n();
    if t.is_diagonal() {
        let d = t.diagonal();
        let moduli: Vec<f64> = d.iter().map(|z| z.norm()).collect();
        let order = descending_order(&moduli);
        let perm = permutation_frame(&order);
        let phase = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            d.iter().map(|z| if z.norm() > 0.0 { z / z.norm() } else { ONE }),
        ));
        return SortedSvd {
            u: phase * &perm,
            s: order.iter().map(|&i| moduli[i]).collect(),
            v_t: perm.adjoint(),
        };
    }
    let svd = SVD::new(t.m.clone(), true, true);
    SortedSvd {
        u: svd.u.expect("u requested"),
        s: svd.singular_values.iter().copied().collect(),
        v_t: svd.v_t.expect("v_t requested"),
    }
}

pub fn singular_values(t: &FactorElement) -> Vec<f64> {
    if t.is_diagonal() {
        let mut s: Vec<f64> = t.m.diagonal().iter().map(|z| z.norm()).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        return s;
    }
    let mut s: Vec<f64> = t.m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `μ(T)`: singular values, non-increasing.
pub fn singular_profile(t: &FactorElement) -> StepProfile {
    StepProfile::new(singular_values(t)).expect("singular values are finite")
}

/// `λ(T)` of a self-adjoint element.
pub fn eigenvalue_profile(t: &FactorElement, tol: f64) -> Result<StepProfile> {
    StepProfile::new(spectral_resolution(t, tol)?.eigenvalues)
}

/// The spectral projection `e_T(X)` for a cell set on sorted positions.
pub fn spectral_projection(t: &FactorElement, x: &BorelCellSet, tol: f64) -> Result<FactorElement> {
    spectral_resolution(t, tol)?.projection(x)
}

/// The conditional expectation onto the diagonal masa.
pub fn expect_diagonal(t: &FactorElement) -> DiagonalElement {
    DiagonalElement::new(t.diagonal()).expect("entries are finite")
}

/// Polar decomposition `T = W·P` with `W` unitary and `P = |T|`.
pub fn polar(t: &FactorElement) -> (FactorElement, FactorElement) {
    let svd = sorted_svd(t);
    polar_from_svd(&svd)
}

pub fn polar_from_svd(svd: &SortedSvd) -> (FactorElement, FactorElement) {
    let n = svd.s.len();
    let w = &svd.u * &svd.v_t;
    let sigma = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        svd.s.iter().map(|&x| C64::new(x, 0.0)),
    ));
    let p = svd.v_t.adjoint() * sigma * &svd.v_t;
    (FactorElement { m: w }, FactorElement { m: p })
}

fn same_dimension(s: &FactorElement, t: &FactorElement) -> Result<()> {
    if s.n() != t.n() {
        return Err(Error::DimensionMismatch {
            expected: t.n(),
            got: s.n(),
        });
    }
    Ok(())
}

fn max_cell_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest cellwise gap between the singular profiles.
pub fn singular_profile_gap(s: &FactorElement, t: &FactorElement) -> Result<f64> {
    same_dimension(s, t)?;
    Ok(max_cell_gap(&singular_values(s), &singular_values(t)))
}

/// Membership in the two-sided orbit: equal singular profiles.
pub fn in_two_sided_orbit(s: &FactorElement, t: &FactorElement, tol: f64) -> Result<bool> {
    Ok(singular_profile_gap(s, t)? <= tol)
}

/// Membership in the unitary orbit of a self-adjoint element: equal
/// eigenvalue profiles.
pub fn in_unitary_orbit(s: &FactorElement, t: &FactorElement, tol: f64) -> Result<bool> {
    same_dimension(s, t)?;
    let ls = spectral_resolution(s, tol)?.eigenvalues;
    let lt = spectral_resolution(t, tol)?.eigenvalues;
    Ok(max_cell_gap(&ls, &lt) <= tol)
}

/// If `S` has the singular values and the trace of the positive `T`, checks
/// that `S` is positive. Returns `Ok(false)` when the hypotheses fail and an
/// invariant error when they hold but `S` is not positive.
pub fn positivity_from_trace_check(s: &FactorElement, t: &FactorElement, tol: f64) -> Result<bool> {
    same_dimension(s, t)?;
    let n = s.n() as f64;
    let same_sv = singular_profile_gap(s, t)? <= n * tol * t.op_norm().max(1.0);
    let same_trace = (s.trace() - t.trace()).norm() <= n * tol;
    if !(same_sv && same_trace) {
        return Ok(false);
    }
    let asym = s.asymmetry();
    let h = FactorElement {
        m: (&s.m + s.m.adjoint()) * C64::new(0.5, 0.0),
    };
    let min_eig = *spectral_resolution(&h, tol)?
        .eigenvalues
        .last()
        .expect("non-empty");
    let bound = n * tol * t.op_norm().max(1.0);
    if asym > bound || min_eig < -bound {
        return Err(Error::Invariant(format!(
            "equal singular values and trace but not positive (asymmetry {asym:.3e}, min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(true)
}
