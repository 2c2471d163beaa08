//! The staged construction of unitaries `U`, `V` with `diag(UTV) = A`.
//!
//! Every solver reduces to positive data, moves to rank coordinates (see
//! `cells`), builds real orthogonal factors there and conjugates back.

mod cells;
mod trace;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::matrix_model::{
    polar_from_svd, singular_profile, singular_profile_gap, sorted_svd, spectral_resolution, CMatrix,
    DiagonalElement, FactorElement, C64,
};
use crate::profile::{descending_order, submajorizes, StepProfile};

pub use trace::{StageKind, StageRecord, StageTrace};

use cells::{Block, Ctx};

/// A target diagonal together with the operator it should come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThompsonInstance {
    #[serde(rename = "A")]
    pub a: DiagonalElement,
    #[serde(rename = "T")]
    pub t: FactorElement,
}

/// How the dominance stage is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Gap bands, each solved by strict dominance.
    #[default]
    Partition,
    /// One self-adjoint unitary with diagonal `a / s`.
    Multiplicative,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partition" => Ok(Self::Partition),
            "multiplicative" => Ok(Self::Multiplicative),
            other => Err(Error::InvalidInput(format!("unknown strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Partition => "partition",
            Self::Multiplicative => "multiplicative",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizationResult {
    #[serde(rename = "U")]
    pub u: FactorElement,
    #[serde(rename = "V")]
    pub v: FactorElement,
    /// `U·T·V`.
    #[serde(rename = "S")]
    pub s: FactorElement,
    /// `max_k |S_kk - A_k|`.
    pub diag_residual: f64,
    /// Largest cell gap between `μ(S)` and `μ(T)`.
    pub sv_drift: f64,
    /// Diagonal defect declared by the construction, summed over cells.
    pub truncation_error: f64,
    pub trace: StageTrace,
}

impl RealizationResult {
    pub fn summary_line(&self) -> String {
        format!(
            "realized: residual={:.3e}, truncation={:.3e}, stages={}",
            self.diag_residual,
            self.truncation_error,
            self.trace.len()
        )
    }

    /// `max(‖U*U - I‖, ‖V*V - I‖)`.
    pub fn unitarity_defect(&self) -> f64 {
        self.u.unitarity_defect().max(self.v.unitarity_defect())
    }

    /// Increments `(level, ‖I - U_step‖₂)` of the first halving iteration.
    pub fn halving_increments(&self) -> Vec<(usize, f64)> {
        self.trace
            .of_kind(StageKind::Complete)
            .filter_map(|r| Some((r.level?, r.increment_l2?)))
            .collect()
    }
}

/// Positive data together with what is needed to undo the reduction.
#[derive(Debug, Clone)]
pub struct PositiveReduction {
    /// `|A|`.
    pub a: DiagonalElement,
    /// `|T|`.
    pub t: FactorElement,
    /// Diagonal unitary with `A = phase · |A|`.
    pub phase: DiagonalElement,
    /// `T = W·|T|`.
    pub w: FactorElement,
    /// Sorted eigenframe of `|T|`.
    frame: CMatrix,
    /// `μ(T)`.
    s: Vec<f64>,
    /// `order[k]` is the position of the `k`-th largest `|A_j|`.
    order: Vec<usize>,
}

impl PositiveReduction {
    /// Turns a solution `(U', V')` of the positive problem into one of the
    /// original problem.
    pub fn lift(&self, u: &FactorElement, v: &FactorElement) -> (FactorElement, FactorElement) {
        let u = self.phase.to_element().mul(u).mul(&self.w.adjoint());
        (u, v.clone())
    }

    /// `|A|` in non-increasing order.
    pub fn rank_targets(&self) -> Vec<f64> {
        let m = self.a.moduli();
        self.order.iter().map(|&i| m[i]).collect()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    fn ctx(&self, tol: f64) -> Ctx {
        Ctx::new(self.s.len(), tol, self.s[0])
    }

    /// `(U', V')` for the positive problem from rank-coordinate factors.
    fn unrank(&self, left: &DMatrix<f64>, right: &DMatrix<f64>) -> (FactorElement, FactorElement) {
        let n = self.s.len();
        let mut pi = CMatrix::zeros(n, n);
        for (k, &i) in self.order.iter().enumerate() {
            pi[(i, k)] = C64::new(1.0, 0.0);
        }
        let l = left.map(|x| C64::new(x, 0.0));
        let r = right.map(|x| C64::new(x, 0.0));
        let u = &pi * l * self.frame.adjoint();
        let v = &self.frame * r * pi.transpose();
        (
            FactorElement::new(u).expect("finite"),
            FactorElement::new(v).expect("finite"),
        )
    }
}

fn check_dims(a: &DiagonalElement, t: &FactorElement) -> Result<()> {
    if a.n() != t.n() {
        return Err(Error::DimensionMismatch {
            expected: t.n(),
            got: a.n(),
        });
    }
    Ok(())
}

/// Replaces `A` by `|A|` and `T` by `|T|`.
pub fn reduce_to_positive(a: &DiagonalElement, t: &FactorElement) -> Result<PositiveReduction> {
    check_dims(a, t)?;
    let svd = sorted_svd(t);
    let (w, abs_t) = polar_from_svd(&svd);
    let phase = DiagonalElement::new(
        a.entries()
            .iter()
            .map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) })
            .collect(),
    )?;
    let moduli = a.moduli();
    Ok(PositiveReduction {
        a: DiagonalElement::from_real(&moduli)?,
        t: abs_t,
        phase,
        w,
        frame: svd.v_t.adjoint(),
        s: svd.s,
        order: descending_order(&moduli),
    })
}

fn finish(
    red: &PositiveReduction,
    a: &DiagonalElement,
    t: &FactorElement,
    block: Block,
    tol: f64,
) -> Result<RealizationResult> {
    let (u1, v1) = red.unrank(&block.left, &block.right);
    let (u, v) = red.lift(&u1, &v1);
    let s = u.mul(t).mul(&v);
    let diag_residual = s
        .diagonal()
        .iter()
        .zip(a.entries())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    let sv_drift = singular_profile_gap(&s, t)?;

    let mut trace = StageTrace::default();
    let flipped = red.phase.entries().iter().filter(|z| (*z - C64::new(1.0, 0.0)).norm() > tol).count();
    trace.push(
        StageRecord::new(StageKind::Reduce, 0, t.n())
            .with_cells("A", red.order.clone())
            .note(format!("{flipped} target phases removed")),
    );
    for r in block.records {
        trace.push(r);
    }
    Ok(RealizationResult {
        u,
        v,
        s,
        diag_residual,
        sv_drift,
        truncation_error: block.defect,
        trace,
    })
}

/// Fails with [`Error::Infeasible`] unless `|A| ≺_w μ(T)`. The reported cell
/// is the last cell of the worst prefix.
pub fn check_feasible(a: &DiagonalElement, t: &FactorElement, tol: f64) -> Result<()> {
    check_dims(a, t)?;
    let report = submajorizes(&a.singular_profile(), &singular_profile(t), tol)?;
    if !report.submajorized {
        let (k, margin) = report.worst_margin();
        return Err(Error::Infeasible { cell: k - 1, margin });
    }
    Ok(())
}

/// Full pipeline: feasibility, reduction, split at `t₀`, Schur-Horn on `Z`
/// and dominance on the rest.
pub fn general_solve(a: &DiagonalElement, t: &FactorElement, strategy: Strategy, tol: f64) -> Result<RealizationResult> {
    check_feasible(a, t, tol)?;
    let red = reduce_to_positive(a, t)?;
    let block = cells::general_solve(&red.rank_targets(), &red.s, strategy, &red.ctx(tol))?;
    finish(&red, a, t, block, tol)
}

/// Requires `μ(A) ≤ μ(T)` cellwise.
pub fn dominance_solve(a: &DiagonalElement, t: &FactorElement, strategy: Strategy, tol: f64) -> Result<RealizationResult> {
    let red = reduce_to_positive(a, t)?;
    let n = t.n();
    let cells: Vec<usize> = (0..n).collect();
    let block = cells::dominance_solve(&red.rank_targets(), &red.s, strategy, &cells, 0, &red.ctx(tol))?;
    finish(&red, a, t, block, tol)
}

/// Requires `μ(A) + δ ≤ μ(T)` cellwise.
pub fn strict_dominance_solve(a: &DiagonalElement, t: &FactorElement, delta: f64, tol: f64) -> Result<RealizationResult> {
    let red = reduce_to_positive(a, t)?;
    let n = t.n();
    let cells: Vec<usize> = (0..n).collect();
    let block = cells::strict_solve(&red.rank_targets(), &red.s, delta, &cells, 0, &red.ctx(tol))?;
    finish(&red, a, t, block, tol)
}

/// Requires `max μ(A) ≤ min μ(T)`.
pub fn complete_dominance_solve(a: &DiagonalElement, t: &FactorElement, tol: f64) -> Result<RealizationResult> {
    let red = reduce_to_positive(a, t)?;
    let n = t.n();
    let cells: Vec<usize> = (0..n).collect();
    let block = cells::complete_solve(&red.rank_targets(), &red.s, &cells, 0, &red.ctx(tol))?;
    finish(&red, a, t, block, tol)
}

/// Disjoint cell intervals covering the grid on each of which
/// `max a ≤ min t`, for sorted profiles with `a + δ ≤ t`.
pub fn good_interval_partition(a: &StepProfile, t: &StepProfile, delta: f64, tol: f64) -> Result<Vec<Range<usize>>> {
    if !a.is_sorted() || !t.is_sorted() {
        return Err(Error::InvalidInput("good_interval_partition expects sorted profiles".into()));
    }
    cells::good_intervals(a.values(), t.values(), delta, tol)
}

/// One halving step, in matrix coordinates.
#[derive(Debug, Clone)]
pub struct CompleteDominanceStep {
    /// Diagonal projection onto the cells of the largest half of `A`.
    pub p: FactorElement,
    /// Spectral projection of `T` onto its smallest half.
    pub q: FactorElement,
    /// Unitary with `W·Q·W* = P`.
    pub w: FactorElement,
    /// `W·T·W*`.
    pub s: FactorElement,
    /// The block unitary built from `H = A·S⁻¹` on `P`.
    pub v: FactorElement,
    /// Diagonal of `H` at the cells of `P`, in ascending cell order.
    pub h: Vec<f64>,
    /// Cells of `P⊥`, ascending.
    pub residual_cells: Vec<usize>,
    /// `A` on `P⊥`.
    pub a2: Vec<f64>,
    /// The compression of `V·S` to `P⊥`.
    pub t2: FactorElement,
}

impl CompleteDominanceStep {
    /// Largest entry of `P·V·S·P - A·P`.
    pub fn compression_defect(&self, a: &DiagonalElement) -> f64 {
        let vs = self.v.mul(&self.s);
        let pvsp = self.p.mul(&vs).mul(&self.p);
        let ap = a.to_element().mul(&self.p);
        (pvsp.matrix() - ap.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `min μ(T₂) - max A₂`; non-negative when complete dominance survives.
    pub fn residual_slack(&self) -> f64 {
        let min_t2 = singular_profile(&self.t2).min();
        let max_a2 = self.a2.iter().copied().fold(0.0, f64::max);
        min_t2 - max_a2
    }
}

/// A single halving step on positive `A` and positive invertible `T` under
/// complete dominance.
pub fn complete_dominance_step(a: &DiagonalElement, t: &FactorElement, tol: f64) -> Result<CompleteDominanceStep> {
    check_dims(a, t)?;
    let n = t.n();
    if !n.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("halving needs an even dimension, got {n}")));
    }
    if a.entries().iter().any(|z| z.re < -tol || z.im.abs() > tol) {
        return Err(Error::InvalidInput("A must be positive".into()));
    }
    let av: Vec<f64> = a.entries().iter().map(|z| z.re.max(0.0)).collect();
    let res = spectral_resolution(t, tol)?;
    let ctx = Ctx::new(n, tol, res.eigenvalues[0].abs());
    let min_s = *res.eigenvalues.last().expect("non-empty");
    if min_s <= ctx.invertibility_gate() {
        return Err(precondition(
            "complete-dominance",
            format!("T is not invertible (smallest eigenvalue {min_s:.3e}); use zero_diagonal"),
        ));
    }
    let max_a = av.iter().copied().fold(0.0, f64::max);
    if max_a > min_s + ctx.atol() {
        return Err(precondition(
            "complete-dominance",
            format!("max A = {max_a:.6e} exceeds min μ(T) = {min_s:.6e}"),
        ));
    }
    let step = cells::halving_step(&av, &res.eigenvalues, &ctx)?;

    let complex = |m: &DMatrix<f64>| FactorElement::new(m.map(|x| C64::new(x, 0.0))).expect("finite");
    let mut wperm = DMatrix::<f64>::zeros(n, n);
    for (i, &wi) in step.w.iter().enumerate() {
        wperm[(wi, i)] = 1.0;
    }
    let w = FactorElement::new(wperm.map(|x| C64::new(x, 0.0)) * res.frame.adjoint())?;
    let s = w.mul(t).mul(&w.adjoint());
    let mut pd = vec![0.0; n];
    for &i in &step.p {
        pd[i] = 1.0;
    }
    let p = FactorElement::from_real_diagonal(&pd)?;
    let q = res.projection(&crate::profile::BorelCellSet::new(n, step.q.clone())?)?;
    let v = complex(&step.v);
    let vs = v.mul(&s);
    let r = &step.residual;
    let t2 = FactorElement::new(CMatrix::from_fn(r.len(), r.len(), |i, j| vs.matrix()[(r[i], r[j])]))?;
    let mut h: Vec<(usize, f64)> = step.pairs.iter().map(|pr| (pr.p, pr.h)).collect();
    h.sort_by_key(|&(i, _)| i);
    Ok(CompleteDominanceStep {
        p,
        q,
        w,
        s,
        v,
        h: h.into_iter().map(|(_, x)| x).collect(),
        residual_cells: r.clone(),
        a2: r.iter().map(|&i| av[i]).collect(),
        t2,
    })
}

/// Unitaries `(U, V)` with `diag(U·T·V) = 0` for positive `T` of even
/// dimension.
pub fn zero_diagonal(t: &FactorElement, tol: f64) -> Result<(FactorElement, FactorElement)> {
    let n = t.n();
    if !n.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("zero diagonal needs an even dimension, got {n}")));
    }
    let res = spectral_resolution(t, tol)?;
    let h = n / 2;
    let mut swap = CMatrix::zeros(n, n);
    for k in 0..h {
        swap[(k, h + k)] = C64::new(1.0, 0.0);
        swap[(h + k, k)] = C64::new(1.0, 0.0);
    }
    let u = FactorElement::new(swap * res.frame.adjoint())?;
    let v = FactorElement::new(res.frame.clone())?;
    Ok((u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_model::{in_two_sided_orbit, polar};

    const TOL: f64 = 1e-9;

    fn real(v: &[f64]) -> DiagonalElement {
        DiagonalElement::from_real(v).unwrap()
    }

    fn diag(v: &[f64]) -> FactorElement {
        FactorElement::from_real_diagonal(v).unwrap()
    }

    fn check(r: &RealizationResult, t: &FactorElement) {
        let n = t.n() as f64;
        assert!(r.unitarity_defect() <= n * TOL);
        assert!(r.sv_drift <= n * TOL * t.op_norm().max(1.0));
        assert!(r.diag_residual <= r.truncation_error + n * TOL, "{}", r.summary_line());
        assert!(in_two_sided_orbit(&r.s, t, 1e-8).unwrap());
    }

    #[test]
    fn reduction_examples() {
        let a = DiagonalElement::new(vec![C64::new(-1.0, 0.0), C64::new(0.0, 2.0)]).unwrap();
        let t = diag(&[3.0, 1.0]);
        let red = reduce_to_positive(&a, &t).unwrap();
        assert_eq!(red.phase.entries(), &[C64::new(-1.0, 0.0), C64::new(0.0, 1.0)]);
        assert_eq!(red.a.moduli(), vec![1.0, 2.0]);
        assert_eq!(red.rank_targets(), vec![2.0, 1.0]);

        let a = real(&[0.5, 0.25]);
        let red = reduce_to_positive(&a, &t).unwrap();
        assert_eq!(red.phase.entries(), &[C64::new(1.0, 0.0); 2]);
        assert_eq!(red.w, FactorElement::identity(2));
        assert_eq!(red.t, t);
    }

    #[test]
    fn complete_dominance_step_examples() {
        let st = complete_dominance_step(&real(&[0.0, 0.0]), &FactorElement::identity(2), TOL).unwrap();
        assert_eq!(st.h, vec![0.0]);
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(st.v.matrix().map(|z| z.re), swap);
        assert_eq!(st.compression_defect(&real(&[0.0, 0.0])), 0.0);

        // Boundary: A = c·I with c = min μ(T).
        let t = diag(&[2.0, 1.5, 1.0, 1.0]);
        let a = real(&[1.0; 4]);
        let st = complete_dominance_step(&a, &t, TOL).unwrap();
        assert!(st.h.iter().all(|&h| (h - 1.0).abs() < 1e-15));
        assert!(st.compression_defect(&a) < 1e-14);
        assert!(st.residual_slack() >= -1e-12);

        assert!(complete_dominance_step(&real(&[0.0; 3]), &FactorElement::identity(3), TOL).is_err());
        let singular = diag(&[1.0, 0.0]);
        assert!(matches!(
            complete_dominance_step(&real(&[0.0, 0.0]), &singular, TOL),
            Err(Error::Precondition { .. })
        ));
    }

    #[test]
    fn zero_diagonal_examples() {
        for t in [FactorElement::identity(4), diag(&[2.0, 2.0, 0.0, 0.0])] {
            let (u, v) = zero_diagonal(&t, TOL).unwrap();
            let s = u.mul(&t).mul(&v);
            assert!(s.diagonal().iter().all(|z| z.norm() < 1e-14));
        }
        assert!(zero_diagonal(&FactorElement::identity(3), TOL).is_err());
    }

    #[test]
    fn complete_dominance_examples() {
        let t = diag(&[3.0, 2.0, 2.0, 1.0]);
        let r = complete_dominance_solve(&real(&[0.0; 4]), &t, TOL).unwrap();
        check(&r, &t);
        assert_eq!(r.truncation_error, 0.0);

        let t = diag(&[0.7; 4]);
        let r = complete_dominance_solve(&real(&[0.7; 4]), &t, TOL).unwrap();
        check(&r, &t);
        assert!(r.diag_residual < 1e-12);
    }

    #[test]
    fn strict_dominance_examples() {
        let t = diag(&[4.0, 2.0]);
        let r = strict_dominance_solve(&real(&[3.0, 1.0]), &t, 1.0, TOL).unwrap();
        check(&r, &t);
        let strict = r.trace.of_kind(StageKind::Strict).next().unwrap();
        assert_eq!(strict.cells.len(), 2);

        let r = strict_dominance_solve(&real(&[1.5, 0.5]), &t, 0.5, TOL).unwrap();
        let strict = r.trace.of_kind(StageKind::Strict).next().unwrap();
        assert_eq!(strict.cells.len(), 1);
    }

    #[test]
    fn dominance_examples() {
        let t = diag(&[3.0, 2.0, 1.0, 0.5]);
        for strategy in [Strategy::Partition, Strategy::Multiplicative] {
            let r = dominance_solve(&real(&[0.5, 1.0, 2.0, 3.0]), &t, strategy, TOL).unwrap();
            check(&r, &t);
            assert!(r.diag_residual < 1e-12);

            let r = dominance_solve(&real(&[0.0; 4]), &t, strategy, TOL).unwrap();
            check(&r, &t);
        }
        assert!(dominance_solve(&real(&[4.0, 0.0, 0.0, 0.0]), &t, Strategy::Partition, TOL).is_err());
    }

    #[test]
    fn general_solve_routes() {
        let t = diag(&[4.0, 2.0, 1.0, 1.0]);
        let r = general_solve(&real(&[2.0, 2.0, 2.0, 2.0]), &t, Strategy::Partition, TOL).unwrap();
        check(&r, &t);
        assert_eq!(r.trace.count(StageKind::SchurHorn), 1);
        assert_eq!(r.trace.count(StageKind::Dominance), 0);
        assert!(r.diag_residual < 1e-12);
        // Positive and self-adjoint output.
        let (w, _) = polar(&r.s);
        assert!((w.matrix() - CMatrix::identity(4, 4)).norm() < 1e-9);

        let r = general_solve(&real(&[0.5, 0.5, 0.5, 0.5]), &t, Strategy::Partition, TOL).unwrap();
        check(&r, &t);
        assert_eq!(r.trace.count(StageKind::SchurHorn), 0);
        let split = r.trace.of_kind(StageKind::GeneralSplit).next().unwrap();
        assert_eq!(split.t0, Some(0.0));

        let err = general_solve(&real(&[2.0, 0.0]), &diag(&[1.0, 1.0]), Strategy::Partition, TOL).unwrap_err();
        assert!(matches!(err, Error::Infeasible { cell: 0, margin } if (margin + 0.5).abs() < 1e-15));
    }

    #[test]
    fn complex_data_round_trip() {
        let a = DiagonalElement::new(vec![C64::new(0.0, 1.0), C64::new(-0.5, 0.0), C64::new(0.3, -0.4)]).unwrap();
        let t = FactorElement::new(CMatrix::from_fn(3, 3, |i, j| C64::new((i + 2 * j) as f64 * 0.3, (i as f64) - (j as f64)))).unwrap();
        let r = general_solve(&a, &t, Strategy::Partition, TOL).unwrap();
        check(&r, &t);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("partition".parse::<Strategy>().unwrap(), Strategy::Partition);
        assert_eq!(Strategy::Multiplicative.to_string(), "multiplicative");
        assert!("other".parse::<Strategy>().is_err());
    }
}
