//! Seeded instance generators and brute-force checks that do not share code
//! paths with the solver.

pub mod suite;

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_model::{
    polar, singular_values, spectral_resolution, CMatrix, DiagonalElement, FactorElement, C64,
};
use crate::profile::{submajorizes, StepProfile};
use crate::thompson::{general_solve, Strategy, ThompsonInstance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries `(x + iy)/√2` with `x, y` standard normal.
pub fn gaussian_matrix<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    })
}

/// Haar unitary: QR of a complex Gaussian matrix with the phases of the
/// diagonal of `R` moved into `Q`.
pub fn haar_unitary<R: Rng>(rng: &mut R, n: usize) -> FactorElement {
    let qr = gaussian_matrix(rng, n).qr();
    let r = qr.r();
    let phases = CMatrix::from_diagonal(&r.diagonal().map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) }));
    FactorElement::new(qr.q() * phases).expect("finite")
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn with_spectrum<R: Rng>(rng: &mut R, sigma: &[f64], positive: bool) -> FactorElement {
    let n = sigma.len();
    let d = FactorElement::from_real_diagonal(sigma).expect("finite");
    let u = haar_unitary(rng, n);
    let v = if positive { u.adjoint() } else { haar_unitary(rng, n) };
    u.mul(&d).mul(&v)
}

fn random_phase<R: Rng>(rng: &mut R) -> C64 {
    C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
}

fn shuffled<R: Rng>(rng: &mut R, v: &[f64]) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut out = v.to_vec();
    out.shuffle(rng);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    /// `A = diag(UTV)` for random `T`, `U`, `V`.
    ExpectationGenerated,
    /// Prescribed singular values with cellwise dominance.
    SpectralPrescribed,
    /// Complete dominance with the given gap.
    Boundary,
    /// One target entry pushed beyond `‖T‖`.
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub seed: u64,
    pub n: usize,
    pub kind: InstanceKind,
    #[serde(default)]
    pub gap: Option<f64>,
}

impl InstanceSpec {
    pub fn generate(&self) -> ThompsonInstance {
        match self.kind {
            InstanceKind::ExpectationGenerated => gen_feasible(self.seed, self.n),
            InstanceKind::SpectralPrescribed => gen_dominance(self.seed, self.n),
            InstanceKind::Boundary => gen_complete_dominance(self.seed, self.n, self.gap.unwrap_or(0.1)),
            InstanceKind::Infeasible => gen_infeasible(self.seed, self.n),
        }
    }
}

/// Random `T` with `‖T‖` of order one and `A = diag(UTV)`; feasible because
/// the expectation of any element is submajorized by it.
pub fn gen_feasible(seed: u64, n: usize) -> ThompsonInstance {
    let mut rng = rng(seed);
    let t = FactorElement::new(gaussian_matrix(&mut rng, n) / C64::new((n as f64).sqrt(), 0.0)).expect("finite");
    let u = haar_unitary(&mut rng, n);
    let v = haar_unitary(&mut rng, n);
    let a = DiagonalElement::new(u.mul(&t).mul(&v).diagonal()).expect("finite");
    ThompsonInstance { a, t }
}

/// Positive `T` with spectrum in `[1, 2]` and positive `A` with entries in
/// `[0, 1 - gap]`, in random order.
pub fn gen_complete_dominance(seed: u64, n: usize, gap: f64) -> ThompsonInstance {
    let mut rng = rng(seed);
    let sigma = sorted_desc((0..n).map(|_| rng.random_range(1.0..2.0)).collect());
    let t = with_spectrum(&mut rng, &sigma, true);
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..(1.0 - gap))).collect();
    ThompsonInstance {
        a: DiagonalElement::from_real(&a).expect("finite"),
        t,
    }
}

/// `μ_k(A) = c_k μ_k(T)` with `c_k ∈ [0, 1]`, complex phases and random
/// positions.
pub fn gen_dominance(seed: u64, n: usize) -> ThompsonInstance {
    let mut rng = rng(seed);
    let sigma = sorted_desc((0..n).map(|_| rng.random_range(0.05..2.0)).collect());
    let t = with_spectrum(&mut rng, &sigma, false);
    let moduli: Vec<f64> = sigma.iter().map(|s| s * rng.random_range(0.0..1.0)).collect();
    let moduli = shuffled(&mut rng, &moduli);
    let a = moduli.iter().map(|&m| random_phase(&mut rng) * m).collect();
    ThompsonInstance {
        a: DiagonalElement::new(a).expect("finite"),
        t,
    }
}

/// Positive `T` and the real diagonal of a unitary conjugate, so `A ≺ T`
/// with equal traces.
pub fn gen_schur_horn(seed: u64, n: usize) -> ThompsonInstance {
    let mut rng = rng(seed);
    let lambda = sorted_desc((0..n).map(|_| rng.random_range(0.0..2.0)).collect());
    let t = with_spectrum(&mut rng, &lambda, true);
    let v = haar_unitary(&mut rng, n);
    let conj = v.mul(&t).mul(&v.adjoint());
    let a = DiagonalElement::from_real(&conj.diagonal().iter().map(|z| z.re).collect::<Vec<_>>()).expect("finite");
    ThompsonInstance { a, t }
}

/// A feasible instance with `|A_0|` raised to `1.1 ‖T‖`.
pub fn gen_infeasible(seed: u64, n: usize) -> ThompsonInstance {
    let mut inst = gen_feasible(seed, n);
    let top = singular_values(&inst.t)[0];
    let mut a = inst.a.entries().to_vec();
    let phase = if a[0].norm() > 0.0 { a[0] / a[0].norm() } else { C64::new(1.0, 0.0) };
    a[0] = phase * (1.1 * top);
    inst.a = DiagonalElement::new(a).expect("finite");
    inst
}

/// `max τ(|T|P)` over `samples` random rank-`k` projections and the
/// projection onto the top `k` singular vectors.
pub fn kyfan_bruteforce(t: &FactorElement, k: usize, samples: usize, seed: u64) -> Result<f64> {
    let n = t.n();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("rank {k} outside 1..={n}")));
    }
    let (_, abs_t) = polar(t);
    let frame = spectral_resolution(&abs_t, crate::DEFAULT_TOL)?.frame;
    let value = |basis: &CMatrix| -> f64 {
        let cols = basis.columns(0, k);
        let p = cols * cols.adjoint();
        (abs_t.matrix() * p).trace().re / n as f64
    };
    let mut rng = rng(seed);
    let mut best = value(&frame);
    for _ in 0..samples {
        let u = haar_unitary(&mut rng, n);
        best = best.max(value(u.matrix()));
    }
    Ok(best)
}

/// Both finite conditions for a `2 × 2` matrix with singular values `σ` and
/// diagonal `α`.
pub fn thompson_predicate_2x2(sigma: [f64; 2], alpha: [C64; 2], tol: f64) -> bool {
    let a = StepProfile::new(vec![alpha[0].norm(), alpha[1].norm()]).expect("finite");
    let s = StepProfile::new(sigma.to_vec()).expect("finite");
    submajorizes(&a, &s, tol).expect("same size").finite_feasible()
}

/// Moduli of `diag(R(θ₁)·diag(σ₁, σ₂e^{iφ})·R(θ₂))`.
///
/// Phases on the outside of a `2 × 2` product never change the moduli of its
/// diagonal, so three angles reach every attainable pair.
fn diagonal_moduli(sigma: [f64; 2], t1: f64, t2: f64, phi: f64) -> [f64; 2] {
    let (c1, s1) = (t1.cos(), t1.sin());
    let (c2, s2) = (t2.cos(), t2.sin());
    let e = C64::from_polar(1.0, phi);
    let d0 = C64::new(c1 * c2 * sigma[0], 0.0) - e * (s1 * s2 * sigma[1]);
    let d1 = C64::new(s1 * s2 * sigma[0], 0.0) - e * (c1 * c2 * sigma[1]);
    [d0.norm(), d1.norm()]
}

fn grid_angles(grid: usize) -> (Vec<f64>, Vec<f64>) {
    let theta = (0..grid).map(|k| std::f64::consts::PI * k as f64 / grid as f64).collect();
    let phi = (0..grid).map(|k| std::f64::consts::TAU * k as f64 / grid as f64).collect();
    (theta, phi)
}

/// Grid tolerance for a search at `grid` points per angle: the largest move
/// of a diagonal modulus between neighbouring grid points, plus margin.
pub fn grid_tolerance(sigma: [f64; 2], grid: usize) -> f64 {
    2.5 * (sigma[0] + sigma[1]) * std::f64::consts::PI / grid as f64
}

/// Searches a `grid³` lattice of unitary pairs for a diagonal within the grid
/// tolerance of `|α|`.
pub fn feasibility_search_2x2(sigma: [f64; 2], alpha: [C64; 2], grid: usize) -> bool {
    let target = [alpha[0].norm(), alpha[1].norm()];
    let eps = grid_tolerance(sigma, grid) / 2.0;
    let (theta, phi) = grid_angles(grid);
    theta.par_iter().any(|&t1| {
        theta.iter().any(|&t2| {
            phi.iter().any(|&p| {
                let d = diagonal_moduli(sigma, t1, t2, p);
                (d[0] - target[0]).abs() <= eps && (d[1] - target[1]).abs() <= eps
            })
        })
    })
}

/// Occupancy grid of attainable diagonal moduli for fixed `σ`, for answering
/// many search queries at once.
#[derive(Debug, Clone)]
pub struct AttainableGrid {
    width: f64,
    bins: usize,
    hit: Vec<bool>,
}

impl AttainableGrid {
    pub fn build(sigma: [f64; 2], grid: usize) -> Self {
        let width = grid_tolerance(sigma, grid) / 2.0;
        let bins = ((sigma[0] + sigma[1]) / width).ceil() as usize + 2;
        let (theta, phi) = grid_angles(grid);
        let hit = theta
            .par_iter()
            .map(|&t1| {
                let mut local = vec![false; bins * bins];
                for &t2 in &theta {
                    for &p in &phi {
                        let d = diagonal_moduli(sigma, t1, t2, p);
                        let (i, j) = ((d[0] / width) as usize, (d[1] / width) as usize);
                        local[i.min(bins - 1) * bins + j.min(bins - 1)] = true;
                    }
                }
                local
            })
            .reduce(
                || vec![false; bins * bins],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x |= y);
                    a
                },
            );
        Self { width, bins, hit }
    }

    /// A sample lies in the bin of `|α|` or one of its neighbours.
    pub fn attains(&self, alpha: [C64; 2]) -> bool {
        let i = (alpha[0].norm() / self.width) as isize;
        let j = (alpha[1].norm() / self.width) as isize;
        let b = self.bins as isize;
        (-1..=1).any(|di| {
            (-1..=1).any(|dj| {
                let (x, y) = (i + di, j + dj);
                (0..b).contains(&x) && (0..b).contains(&y) && self.hit[(x * b + y) as usize]
            })
        })
    }

    /// Distance below which a query is too close to the boundary to judge.
    pub fn ambiguity(&self) -> f64 {
        2.5 * self.width
    }
}

/// Signed sup-norm distance from `|α|` to the boundary of the finite feasible
/// region; positive inside.
pub fn predicate_margin_2x2(sigma: [f64; 2], alpha: [C64; 2]) -> f64 {
    let (x, y) = (alpha[0].norm(), alpha[1].norm());
    let slacks = [
        (sigma[0] + sigma[1] - x - y) / 2.0,
        ((sigma[0] - sigma[1]).abs() - (x - y).abs()) / 2.0,
        x,
        y,
    ];
    let worst = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    if worst >= 0.0 {
        worst
    } else {
        slacks.iter().copied().filter(|s| *s < 0.0).fold(0.0, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: usize,
    pub excluded: usize,
    pub disagreements: usize,
}

/// Compares the predicate with the grid search on `sigmas × per_sigma`
/// random points. Points within the grid tolerance of the boundary are
/// excluded.
pub fn sweep_2x2(sigmas: usize, per_sigma: usize, grid: usize, seed: u64) -> SweepReport {
    let mut rng = rng(seed);
    let mut report = SweepReport {
        points: 0,
        excluded: 0,
        disagreements: 0,
    };
    for _ in 0..sigmas {
        let s1: f64 = rng.random_range(0.2..2.0);
        let s2: f64 = rng.random_range(0.0..s1);
        let sigma = [s1, s2];
        let attainable = AttainableGrid::build(sigma, grid);
        for _ in 0..per_sigma {
            let alpha = [
                random_phase(&mut rng) * rng.random_range(0.0..1.2 * s1),
                random_phase(&mut rng) * rng.random_range(0.0..1.2 * s1),
            ];
            report.points += 1;
            if predicate_margin_2x2(sigma, alpha).abs() <= attainable.ambiguity() {
                report.excluded += 1;
                continue;
            }
            if thompson_predicate_2x2(sigma, alpha, 0.0) != attainable.attains(alpha) {
                report.disagreements += 1;
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub residual: f64,
    pub truncation: f64,
    pub seconds: f64,
}

/// Replicates the patterns to each resolution, runs the full pipeline on
/// the diagonal data and tabulates the outcome.
pub fn resolution_convergence(
    a_pattern: &[f64],
    t_pattern: &[f64],
    resolutions: &[usize],
    strategy: Strategy,
    tol: f64,
) -> Result<Vec<ConvergenceRow>> {
    let m = a_pattern.len();
    if m == 0 || t_pattern.len() != m {
        return Err(Error::InvalidInput("patterns must be non-empty and of equal length".into()));
    }
    resolutions
        .iter()
        .map(|&n| {
            if n == 0 || n % m != 0 {
                return Err(Error::InvalidInput(format!(
                    "resolution {n} is not a multiple of the pattern length {m}"
                )));
            }
            let a = StepProfile::new(a_pattern.to_vec())?.refine(n / m)?;
            let t = StepProfile::new(t_pattern.to_vec())?.refine(n / m)?;
            let a = DiagonalElement::from_real(a.values())?;
            let t = FactorElement::from_real_diagonal(t.values())?;
            let start = Instant::now();
            let r = general_solve(&a, &t, strategy, tol)?;
            Ok(ConvergenceRow {
                n,
                residual: r.diag_residual,
                truncation: r.truncation_error,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Real part of a complex matrix, for the Gram checks in tests.
pub fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}
