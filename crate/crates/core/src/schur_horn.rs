//! Finite Schur-Horn construction by Givens rotations.
//!
//! Starting from `diag(λ)` with `λ` non-increasing, each rotation in a plane
//! `(k, j)` with `d_k ≥ α ≥ d_j` sets `d_k = α` and moves the surplus to
//! `d_j`. The entries not yet fixed always form a diagonal block, so `n - 1`
//! rotations finish the job.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::matrix_model::{spectral_resolution, CMatrix, DiagonalElement, FactorElement, C64};
use crate::profile::descending_order;

const REORTHO_EVERY: usize = 64;

/// Schur-Horn feasibility for sorted `λ` and `α`: dominated partial sums and
/// equal totals.
pub fn feasible_schur_horn(lambda: &[f64], alpha: &[f64], tol: f64) -> Result<bool> {
    if lambda.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: lambda.len(),
            got: alpha.len(),
        });
    }
    let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] >= w[1]);
    if !sorted(lambda) || !sorted(alpha) {
        return Err(Error::InvalidInput("feasible_schur_horn expects sorted input".into()));
    }
    Ok(schur_horn_margin(lambda, alpha) >= -tol && (total(lambda) - total(alpha)).abs() <= tol)
}

fn total(v: &[f64]) -> f64 {
    v.iter().sum()
}

/// Smallest partial-sum margin `Σ_{j≤k} λ_j - α_j` over sorted data.
fn schur_horn_margin(lambda: &[f64], alpha: &[f64]) -> f64 {
    let mut run = 0.0;
    let mut worst = f64::INFINITY;
    for (l, a) in lambda.iter().zip(alpha) {
        run += l - a;
        worst = worst.min(run);
    }
    worst
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Where the source operator comes from.
#[derive(Debug, Clone)]
pub enum Source {
    Element(FactorElement),
    /// Treated as the diagonal matrix with these entries.
    Eigenvalues(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SchurHornInstance {
    pub target: Vec<f64>,
    pub source: Source,
}

#[derive(Debug, Clone)]
pub struct SchurHornRealization {
    pub u: FactorElement,
    /// `U·T·U*`.
    pub s: FactorElement,
    pub rotations: usize,
}

/// Real orthogonal `O` with `diag(O · diag(λ) · Oᵀ) = α` entrywise.
///
/// `λ` must be non-increasing; `α` may come in any order. Returns `O` and the
/// number of rotations used.
pub fn givens_realize(lambda: &[f64], alpha: &[f64], tol: f64) -> Result<(DMatrix<f64>, usize)> {
    let n = lambda.len();
    if alpha.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: alpha.len(),
        });
    }
    if !feasible_schur_horn(lambda, &sorted_desc(alpha), tol * n as f64 * scale(lambda))? {
        return Err(precondition(
            "schur-horn",
            format!(
                "target is not majorized by the spectrum (margin {:.3e}, trace gap {:.3e})",
                schur_horn_margin(lambda, &sorted_desc(alpha)),
                total(lambda) - total(alpha)
            ),
        ));
    }

    let mut o = DMatrix::<f64>::identity(n, n);
    let mut d = lambda.to_vec();
    // Active positions, kept in non-increasing order of `d`.
    let mut active: Vec<usize> = (0..n).collect();
    // holder[i] = row of `o` that ends up carrying target i.
    let mut holder = vec![usize::MAX; n];
    let mut rotations = 0;

    for &i in &descending_order(alpha) {
        let target = alpha[i];
        if active.len() == 1 {
            holder[i] = active[0];
            break;
        }
        let slot = active
            .windows(2)
            .position(|w| d[w[0]] >= target && target >= d[w[1]])
            .unwrap_or(if target > d[active[0]] { 0 } else { active.len() - 2 });
        let (k, j) = (active[slot], active[slot + 1]);
        let spread = d[k] - d[j];
        let c2 = if spread > 0.0 {
            ((target - d[j]) / spread).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let (c, s) = (c2.sqrt(), (1.0 - c2).sqrt());
        // Rows k, j of o ← G · o with G = [[c, -s], [s, c]].
        for col in 0..n {
            let (rk, rj) = (o[(k, col)], o[(j, col)]);
            o[(k, col)] = c * rk - s * rj;
            o[(j, col)] = s * rk + c * rj;
        }
        d[j] = d[k] + d[j] - target;
        d[k] = target;
        active.remove(slot);
        holder[i] = k;
        rotations += 1;
        if rotations % REORTHO_EVERY == 0 {
            reorthonormalize_rows(&mut o);
        }
    }
    if rotations != n.saturating_sub(1) {
        return Err(Error::Invariant(format!(
            "Givens construction used {rotations} rotations for n = {n}"
        )));
    }
    let placed = DMatrix::from_fn(n, n, |i, col| o[(holder[i], col)]);
    Ok((placed, rotations))
}

fn scale(v: &[f64]) -> f64 {
    v.iter().fold(1.0f64, |m, x| m.max(x.abs()))
}

fn reorthonormalize_rows(o: &mut DMatrix<f64>) {
    let n = o.nrows();
    for i in 0..n {
        for p in 0..i {
            let dot = o.row(i).dot(&o.row(p));
            let prev = o.row(p).clone_owned();
            let cur = o.row(i) - prev * dot;
            o.set_row(i, &cur);
        }
        let norm = o.row(i).norm();
        o.row_mut(i).unscale_mut(norm);
    }
}

fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

/// Builds `U` with `diag(U·T·U*) = α` for a self-adjoint source `T`.
pub fn realize_schur_horn(inst: &SchurHornInstance, tol: f64) -> Result<SchurHornRealization> {
    let t = match &inst.source {
        Source::Element(t) => t.clone(),
        Source::Eigenvalues(l) => FactorElement::from_real_diagonal(l)?,
    };
    let n = t.n();
    if inst.target.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: inst.target.len(),
        });
    }
    let res = spectral_resolution(&t, tol)?;
    let (o, rotations) = givens_realize(&res.eigenvalues, &inst.target, tol)?;

    let already = t
        .diagonal()
        .iter()
        .zip(&inst.target)
        .all(|(z, a)| (z.re - a).abs() <= n as f64 * tol);
    let u = if already {
        FactorElement::identity(n)
    } else {
        FactorElement::new(complexify(&o) * res.frame.adjoint())?
    };
    let s = u.mul(&t).mul(&u.adjoint());
    Ok(SchurHornRealization { u, s, rotations })
}

/// A self-adjoint unitary with prescribed diagonal.
#[derive(Debug, Clone)]
pub struct SignExpectation {
    /// Real symmetric orthogonal matrix with eigenvalues ±1.
    pub u: DMatrix<f64>,
    /// Number of `+1` eigenvalues.
    pub plus: usize,
    /// The diagonal actually realized.
    pub realized: Vec<f64>,
    /// `realized - requested`, entrywise.
    pub perturbation: Vec<f64>,
}

/// `β` with `τ(B) = 2β - 1`.
pub fn sign_beta(b: &[f64]) -> f64 {
    (total(b) / b.len() as f64 + 1.0) / 2.0
}

/// Self-adjoint unitary `U` with `diag(U) = B`.
///
/// When `nβ` is not an integer the ±1 spectrum cannot carry the trace of `B`
/// exactly; `nβ` is rounded and `B` is moved by at most `1` in total `ℓ¹`
/// mass, so `τ(B)` changes by at most `1/n`. Entries with the smallest
/// `weights` absorb the change first.
pub fn realize_sign_expectation_weighted(b: &[f64], weights: &[f64], tol: f64) -> Result<SignExpectation> {
    let n = b.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty diagonal".into()));
    }
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if let Some(k) = b.iter().position(|x| !(-1.0 - tol..=1.0 + tol).contains(x)) {
        return Err(Error::InvalidInput(format!(
            "entry {k} = {} lies outside [-1, 1]",
            b[k]
        )));
    }
    let clamped: Vec<f64> = b.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    let n_beta = n as f64 * sign_beta(&clamped);
    let plus = (n_beta.round() as usize).min(n);
    let mut need = 2.0 * plus as f64 - n as f64 - total(&clamped);
    let mut realized = clamped.clone();
    if need.abs() > tol {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| weights[i].total_cmp(&weights[j]).then(i.cmp(&j)));
        for i in order {
            let room = if need > 0.0 { 1.0 - realized[i] } else { -1.0 - realized[i] };
            let step = if need > 0.0 { need.min(room) } else { need.max(room) };
            realized[i] += step;
            need -= step;
            if need.abs() <= tol {
                break;
            }
        }
    }
    let mut spectrum = vec![1.0; plus];
    spectrum.resize(n, -1.0);
    let (o, _) = givens_realize(&spectrum, &realized, tol)?;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spectrum));
    let u = &o * d * o.transpose();
    let perturbation = realized.iter().zip(b).map(|(r, x)| r - x).collect();
    Ok(SignExpectation {
        u,
        plus,
        realized,
        perturbation,
    })
}

/// Self-adjoint unitary `U` with `diag(U) = B` for a real contraction
/// diagonal `B` and `β` satisfying `τ(B) = 2β - 1`.
pub fn realize_sign_expectation(b: &DiagonalElement, beta: f64, tol: f64) -> Result<(FactorElement, SignExpectation)> {
    if b.entries().iter().any(|z| z.im.abs() > tol) {
        return Err(Error::InvalidInput("B must be real".into()));
    }
    let re: Vec<f64> = b.entries().iter().map(|z| z.re).collect();
    if (sign_beta(&re) - beta).abs() > tol.max(1e-12) {
        return Err(Error::InvalidInput(format!(
            "β = {beta} does not satisfy τ(B) = 2β - 1 (expected {})",
            sign_beta(&re)
        )));
    }
    let sign = realize_sign_expectation_weighted(&re, &vec![1.0; re.len()], tol)?;
    Ok((FactorElement::new(complexify(&sign.u))?, sign))
}

/// Summary of a Schur-Horn solve, for logs and result files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchurHornReport {
    pub rotations: usize,
    pub diag_residual: f64,
    pub spectrum_drift: f64,
}

impl SchurHornRealization {
    /// Diagonal residual against `target` and the largest eigenvalue gap
    /// between `S` and the source.
    pub fn report(&self, inst: &SchurHornInstance, tol: f64) -> Result<SchurHornReport> {
        let diag_residual = self
            .s
            .diagonal()
            .iter()
            .zip(&inst.target)
            .map(|(z, a)| (z - a).norm())
            .fold(0.0, f64::max);
        let source = match &inst.source {
            Source::Element(t) => spectral_resolution(t, tol)?.eigenvalues,
            Source::Eigenvalues(l) => sorted_desc(l),
        };
        let hermitian = FactorElement::new((self.s.matrix() + self.s.matrix().adjoint()) * C64::new(0.5, 0.0))?;
        let realized = spectral_resolution(&hermitian, tol)?.eigenvalues;
        let spectrum_drift = realized.iter().zip(&source).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        Ok(SchurHornReport {
            rotations: self.rotations,
            diag_residual,
            spectrum_drift,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_model::{eigenvalue_profile, in_unitary_orbit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-9;

    fn diag_of(m: &DMatrix<f64>) -> Vec<f64> {
        m.diagonal().iter().copied().collect()
    }

    #[test]
    fn feasibility_examples() {
        assert!(feasible_schur_horn(&[1.0, 0.0], &[0.5, 0.5], TOL).unwrap());
        assert!(!feasible_schur_horn(&[1.0, 0.0], &[2.0, -1.0], TOL).unwrap());
        assert!(feasible_schur_horn(&[3.0, 1.0, -2.0], &[3.0, 1.0, -2.0], TOL).unwrap());
        assert!(feasible_schur_horn(&[1.0], &[1.0, 0.0], TOL).is_err());
    }

    #[test]
    fn two_by_two_averaging() {
        let inst = SchurHornInstance {
            target: vec![0.5, 0.5],
            source: Source::Eigenvalues(vec![1.0, 0.0]),
        };
        let r = realize_schur_horn(&inst, TOL).unwrap();
        let d = r.s.diagonal();
        assert!((d[0].re - 0.5).abs() < 1e-15 && (d[1].re - 0.5).abs() < 1e-15);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.u.matrix()[(0, 0)].re.abs() - c).abs() < 1e-15);
        assert_eq!(r.rotations, 1);
    }

    #[test]
    fn existing_diagonal_gives_identity() {
        let t = FactorElement::from_real_diagonal(&[2.0, -1.0, 0.5]).unwrap();
        let inst = SchurHornInstance {
            target: vec![2.0, -1.0, 0.5],
            source: Source::Element(t),
        };
        let r = realize_schur_horn(&inst, TOL).unwrap();
        assert_eq!(r.u, FactorElement::identity(3));
    }

    #[test]
    fn infeasible_rejected_before_work() {
        let inst = SchurHornInstance {
            target: vec![2.0, -1.0],
            source: Source::Eigenvalues(vec![1.0, 0.0]),
        };
        assert!(matches!(
            realize_schur_horn(&inst, TOL),
            Err(Error::Precondition { .. })
        ));
    }

    #[test]
    fn sign_expectation_examples() {
        let b = DiagonalElement::from_real(&[1.0, 1.0, 1.0]).unwrap();
        let (u, s) = realize_sign_expectation(&b, 1.0, TOL).unwrap();
        assert!((u.matrix() - CMatrix::identity(3, 3)).norm() < 1e-15);
        assert_eq!(s.plus, 3);

        let b = DiagonalElement::from_real(&[0.0, 0.0]).unwrap();
        let (u, _) = realize_sign_expectation(&b, 0.5, TOL).unwrap();
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((u.matrix().map(|z| z.re) - swap).norm() < 1e-15);

        let b = DiagonalElement::from_real(&[0.5, -0.5]).unwrap();
        let (u, _) = realize_sign_expectation(&b, 0.5, TOL).unwrap();
        let r3 = 3f64.sqrt() / 2.0;
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, r3, r3, -0.5]);
        assert!((u.matrix().map(|z| z.re) - expect).norm() < 1e-15);

        let b = DiagonalElement::from_real(&[1.5, 0.0]).unwrap();
        assert!(realize_sign_expectation(&b, 1.25, TOL).is_err());
        let b = DiagonalElement::from_real(&[0.5, 0.5]).unwrap();
        assert!(realize_sign_expectation(&b, 0.5, TOL).is_err());
    }

    #[test]
    fn sign_expectation_quantizes_the_trace() {
        // nβ = 2.7 rounds to 3.
        let b = [0.6, 0.2, -0.4, 0.0, 0.0];
        let s = realize_sign_expectation_weighted(&b, &[5.0, 4.0, 3.0, 2.0, 1.0], TOL).unwrap();
        assert_eq!(s.plus, 3);
        let moved: f64 = s.perturbation.iter().map(|x| x.abs()).sum();
        assert!((moved - 0.6).abs() < 1e-12);
        assert!((s.perturbation[4] - 0.6).abs() < 1e-12);
        let u = &s.u;
        assert!((u * u.transpose() - DMatrix::identity(5, 5)).norm() < 1e-12);
        assert!((u - u.transpose()).norm() < 1e-12);
        for (x, y) in diag_of(u).iter().zip(&s.realized) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn random_hermitian(n: usize, seed: u64) -> FactorElement {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        FactorElement::new((&x + x.adjoint()) * C64::new(0.5, 0.0)).unwrap()
    }

    fn random_unitary(n: usize, seed: u64) -> FactorElement {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        FactorElement::new(x.qr().q()).unwrap()
    }

    #[test]
    fn random_hermitian_8x8() {
        let t = random_hermitian(8, 1);
        let v = random_unitary(8, 2);
        let target: Vec<f64> = v.mul(&t).mul(&v.adjoint()).diagonal().iter().map(|z| z.re).collect();
        let lambda = eigenvalue_profile(&t, TOL).unwrap();
        assert!(feasible_schur_horn(lambda.values(), &sorted_desc(&target), 1e-12).unwrap());
        let inst = SchurHornInstance {
            target: target.clone(),
            source: Source::Element(t.clone()),
        };
        let r = realize_schur_horn(&inst, TOL).unwrap();
        for (z, a) in r.s.diagonal().iter().zip(&target) {
            assert!((z.re - a).abs() < 1e-8);
        }
        assert!(in_unitary_orbit(&r.s, &t, 8.0 * TOL).unwrap());
    }

    #[test]
    fn reorthonormalization_keeps_large_frames_orthogonal() {
        let n = 200;
        let lambda: Vec<f64> = (0..n).rev().map(|k| k as f64 / n as f64).collect();
        let alpha = vec![total(&lambda) / n as f64; n];
        let (o, rotations) = givens_realize(&lambda, &alpha, TOL).unwrap();
        assert_eq!(rotations, n - 1);
        assert!((&o * o.transpose() - DMatrix::identity(n, n)).norm() < 1e-10);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda));
        for x in diag_of(&(&o * d * o.transpose())) {
            assert!((x - alpha[0]).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn givens_hits_every_majorized_target(
            (lambda, mix) in (1usize..24).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(0.0f64..1.0, n * n),
            ))
        ) {
            // Target: diagonal of a doubly stochastic average, which is majorized.
            let n = lambda.len();
            let lambda = sorted_desc(&lambda);
            let mut rows = DMatrix::from_row_slice(n, n, &mix).map(|x| x + 1e-3);
            for _ in 0..50 {
                for mut r in rows.row_iter_mut() { let s = r.sum(); r /= s; }
                for mut c in rows.column_iter_mut() { let s = c.sum(); c /= s; }
            }
            let alpha: Vec<f64> = (0..n).map(|i| (0..n).map(|j| rows[(i, j)] * lambda[j]).sum()).collect();
            let tight: f64 = total(&lambda) - total(&alpha);
            let mut alpha = alpha;
            alpha[0] += tight;
            prop_assume!(feasible_schur_horn(&lambda, &sorted_desc(&alpha), 1e-9).unwrap());
            let (o, rotations) = givens_realize(&lambda, &alpha, 1e-9).unwrap();
            prop_assert_eq!(rotations, n - 1);
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda.clone()));
            let got = diag_of(&(&o * d * o.transpose()));
            for (x, y) in got.iter().zip(&alpha) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn contraction_diagonals_are_majorized_by_sign_spectrum(b in prop::collection::vec(-1.0f64..1.0, 1..40)) {
            let s = realize_sign_expectation_weighted(&b, &vec![1.0; b.len()], TOL).unwrap();
            let mut spectrum = vec![1.0; s.plus];
            spectrum.resize(b.len(), -1.0);
            prop_assert!(feasible_schur_horn(&spectrum, &sorted_desc(&s.realized), 1e-9).unwrap());
            let moved: f64 = s.perturbation.iter().map(|x| x.abs()).sum();
            prop_assert!(moved <= 1.0 + 1e-9);
        }
    }
}
