//! Property suites, one per acceptance criterion. Each runs a fixed set of
//! seeded instances and reports a verdict with the worst observed quantity.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::*;
use crate::matrix_model::{expect_diagonal, in_unitary_orbit, singular_profile, spectral_resolution};
use crate::profile::{partial_integral, rearrange};
use crate::thompson::{complete_dominance_solve, complete_dominance_step, dominance_solve, StageKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {}: {} ({:.1}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn timed(id: usize, name: &str, budget: Duration, body: impl FnOnce() -> (bool, String)) -> CriterionOutcome {
    let start = Instant::now();
    let (ok, mut detail) = body();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    if !in_time {
        detail.push_str(&format!("; over budget of {}s", budget.as_secs()));
    }
    CriterionOutcome {
        id,
        name: name.to_string(),
        passed: ok && in_time,
        detail,
        seconds: elapsed.as_secs_f64(),
    }
}

fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

pub const KYFAN_TOL: f64 = 1e-9;
pub const EXPECTATION_MARGIN: f64 = -1e-9;
pub const STEP_TOL: f64 = 1e-8;
pub const HALVING_TOL: f64 = 1e-8;
pub const ORBIT_TOL: f64 = 1e-7;
pub const POSITIVITY_TOL: f64 = 1e-7;
pub const SOLVER_TOL: f64 = 1e-9;

fn random_profile<R: Rng>(rng: &mut R, n: usize) -> StepProfile {
    // Small integer values produce ties, which exercise stability.
    let values = if rng.random_bool(0.3) {
        (0..n).map(|_| rng.random_range(0..5) as f64).collect()
    } else {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    StepProfile::new(values).expect("finite")
}

/// A profile submajorized by `t`: a cellwise contraction of `|t|`, shuffled.
fn dominated<R: Rng>(rng: &mut R, t: &StepProfile) -> StepProfile {
    let mut v: Vec<f64> = t.values().iter().map(|x| x.abs() * rng.random_range(0.0..=1.0)).collect();
    use rand::seq::SliceRandom;
    v.shuffle(rng);
    StepProfile::new(v).expect("finite")
}

/// Rearrangement, transitivity of submajorization and the Ky Fan identity.
pub fn rearrangement(seed: u64) -> CriterionOutcome {
    timed(1, "rearrangement and majorization", Duration::from_secs(60), || {
        let failures: usize = (0..1000u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng(seed ^ (i << 8));
                let n = rng.random_range(1..=256);
                let f = random_profile(&mut rng, n);
                let r = rearrange(&f);
                let mut counted = f.values().to_vec();
                counted.sort_by(|a, b| b.total_cmp(a));
                let mut bad = usize::from(r.values() != counted.as_slice() || rearrange(&r) != r);

                let c = f;
                let b = if rng.random_bool(0.5) { dominated(&mut rng, &c) } else { random_profile(&mut rng, n) };
                let a = if rng.random_bool(0.5) { dominated(&mut rng, &b) } else { random_profile(&mut rng, n) };
                let ab = submajorizes(&a, &b, KYFAN_TOL).expect("same size").submajorized;
                let bc = submajorizes(&b, &c, KYFAN_TOL).expect("same size").submajorized;
                let ac = submajorizes(&a, &c, 2.0 * KYFAN_TOL).expect("same size").submajorized;
                if ab && bc && !ac {
                    bad += 1;
                }
                bad
            })
            .sum();

        let kyfan: Vec<f64> = (0..200u64)
            .into_par_iter()
            .map(|i| {
                let mut r = rng(seed.wrapping_add(1_000_000 + i));
                let n = r.random_range(1..=32);
                let k = r.random_range(1..=n);
                let t = gen_feasible(r.random(), n).t;
                let exact = partial_integral(&singular_profile(&t), k as f64 / n as f64).expect("sorted");
                let brute = kyfan_bruteforce(&t, k, 16, r.random()).expect("valid rank");
                (brute - exact).abs()
            })
            .collect();
        let kyfan_worst = worst(kyfan);
        (
            failures == 0 && kyfan_worst <= KYFAN_TOL,
            format!("profile failures={failures}, max |kyfan - partial integral|={kyfan_worst:.2e}"),
        )
    })
}

/// `E(T) ≺_w T` for random matrices and for random corner compressions.
pub fn expectation(seed: u64) -> CriterionOutcome {
    timed(2, "expectation submajorization", Duration::from_secs(60), || {
        let margins: Vec<f64> = (0..1000u64)
            .into_par_iter()
            .map(|i| {
                let mut r = rng(seed.wrapping_add(i));
                let n = r.random_range(1..=64);
                let mut t = gen_feasible(r.random(), n).t;
                if i >= 500 {
                    let keep: Vec<usize> = (0..n).filter(|_| r.random_bool(0.5)).collect();
                    let keep = if keep.is_empty() { vec![0] } else { keep };
                    let m = t.matrix();
                    t = FactorElement::new(CMatrix::from_fn(keep.len(), keep.len(), |a, b| m[(keep[a], keep[b])]))
                        .expect("finite");
                }
                let e = expect_diagonal(&t).singular_profile();
                let rep = submajorizes(&e, &singular_profile(&t), 0.0).expect("same size");
                rep.margins.iter().copied().fold(f64::INFINITY, f64::min)
            })
            .collect();
        let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
        (min >= EXPECTATION_MARGIN, format!("min margin={min:.2e} over {} cases", margins.len()))
    })
}

/// One halving step: unitarity, the compression identity and surviving
/// dominance.
pub fn halving_step(seed: u64) -> CriterionOutcome {
    timed(3, "single halving step", Duration::from_secs(60), || {
        let rows: Vec<Option<(f64, f64, f64)>> = (0..200u64)
            .into_par_iter()
            .map(|i| {
                let n = [4, 8, 16, 32][(i % 4) as usize];
                let inst = gen_complete_dominance(seed.wrapping_add(i), n, 0.1);
                let step = complete_dominance_step(&inst.a, &inst.t, SOLVER_TOL).ok()?;
                Some((step.v.unitarity_defect(), step.compression_defect(&inst.a), step.residual_slack()))
            })
            .collect();
        let errors = rows.iter().filter(|r| r.is_none()).count();
        let ok: Vec<_> = rows.into_iter().flatten().collect();
        let unit = worst(ok.iter().map(|r| r.0));
        let comp = worst(ok.iter().map(|r| r.1));
        let slack = ok.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        (
            errors == 0 && unit <= STEP_TOL && comp <= STEP_TOL && slack >= -STEP_TOL,
            format!("errors={errors}, unitarity={unit:.2e}, compression={comp:.2e}, min slack={slack:.2e}"),
        )
    })
}

/// Measurements of the halving iteration on one instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalvingMeasurement {
    /// `(level, ‖I - U_step‖₂, bound)`.
    pub increments: Vec<(usize, f64, f64)>,
    /// `(level, τ(|I - U_step|))`.
    pub trace_increments: Vec<(usize, f64)>,
    pub residual: f64,
    pub truncation: f64,
    pub truncation_bound: f64,
}

pub fn measure_halving(seed: u64, n: usize) -> Result<HalvingMeasurement> {
    let inst = gen_complete_dominance(seed, n, 0.1);
    let r = complete_dominance_solve(&inst.a, &inst.t, SOLVER_TOL)?;
    let norm = inst.t.op_norm();
    Ok(HalvingMeasurement {
        increments: r
            .halving_increments()
            .into_iter()
            .map(|(level, inc)| (level, inc, 2f64.powi(1 - level as i32)))
            .collect(),
        trace_increments: r
            .trace
            .of_kind(StageKind::Complete)
            .filter_map(|s| Some((s.level?, s.increment_l1?)))
            .collect(),
        residual: r.diag_residual,
        truncation: r.truncation_error,
        truncation_bound: norm * 2f64.powi(1 - n.ilog2() as i32),
    })
}

/// The halving iteration at `n = 64`: increments, residual and truncation.
pub fn halving_iteration(seed: u64) -> CriterionOutcome {
    timed(4, "halving iteration", Duration::from_secs(120), || {
        let rows: Vec<Result<HalvingMeasurement>> =
            (0..100u64).into_par_iter().map(|i| measure_halving(seed.wrapping_add(i), 64)).collect();
        let errors = rows.iter().filter(|r| r.is_err()).count();
        let rows: Vec<_> = rows.into_iter().flatten().collect();
        let mut inc_violations = 0;
        let mut worst_excess = f64::NEG_INFINITY;
        let mut worst_level = 0;
        for m in &rows {
            for &(level, inc, bound) in &m.increments {
                let excess = inc - bound;
                if excess > HALVING_TOL {
                    inc_violations += 1;
                }
                if excess > worst_excess {
                    worst_excess = excess;
                    worst_level = level;
                }
            }
        }
        // Reported only: the trace-norm increments against the same bound.
        let l1_excess = worst(rows.iter().flat_map(|m| m.trace_increments.iter().map(|&(l, x)| x - 2f64.powi(1 - l as i32))));
        let res_excess = worst(rows.iter().map(|m| m.residual - m.truncation));
        let trunc_ratio = worst(rows.iter().map(|m| m.truncation / m.truncation_bound));
        (
            errors == 0 && inc_violations == 0 && res_excess <= HALVING_TOL && trunc_ratio <= 1.0,
            format!(
                "errors={errors}, increment violations={inc_violations} (worst excess {worst_excess:.3} at level {worst_level}), \
                 max residual-truncation={res_excess:.2e}, max truncation/bound={trunc_ratio:.3}, trace-norm increment excess={l1_excess:.2e}"
            ),
        )
    })
}

/// The full pipeline on feasible instances and the verdict on infeasible ones.
pub fn end_to_end(seed: u64) -> CriterionOutcome {
    timed(5, "end-to-end realization", Duration::from_secs(300), || {
        let rows: Vec<std::result::Result<(bool, f64), String>> = (0..300u64)
            .into_par_iter()
            .map(|i| {
                let n = [8, 16, 32, 64][(i % 4) as usize];
                let inst = gen_feasible(seed.wrapping_add(i), n);
                let r = general_solve(&inst.a, &inst.t, Strategy::Partition, SOLVER_TOL).map_err(|e| e.to_string())?;
                let orbit = crate::matrix_model::in_two_sided_orbit(&r.s, &inst.t, ORBIT_TOL).map_err(|e| e.to_string())?;
                Ok((orbit, r.diag_residual - r.truncation_error))
            })
            .collect();
        let errors: Vec<&String> = rows.iter().filter_map(|r| r.as_ref().err()).collect();
        let ok: Vec<(bool, f64)> = rows.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let off_orbit = ok.iter().filter(|r| !r.0).count();
        let excess = worst(ok.iter().map(|r| r.1));

        let uncertified = (0..100u64)
            .into_par_iter()
            .filter(|&i| {
                let n = [8, 16, 32, 64][(i % 4) as usize];
                let inst = gen_infeasible(seed.wrapping_add(10_000 + i), n);
                match general_solve(&inst.a, &inst.t, Strategy::Partition, SOLVER_TOL) {
                    Err(Error::Infeasible { margin, .. }) => margin >= -10.0 * SOLVER_TOL,
                    _ => true,
                }
            })
            .count();
        (
            errors.is_empty() && off_orbit == 0 && excess <= ORBIT_TOL && uncertified == 0,
            format!(
                "errors={} {}, off orbit={off_orbit}, max residual-truncation={excess:.2e}, uncertified infeasible={uncertified}",
                errors.len(),
                errors.first().map(|s| s.as_str()).unwrap_or("")
            ),
        )
    })
}

/// Partition and multiplicative dominance agree up to their declared
/// defects and one cell of `‖T‖`.
pub fn strategy_agreement(seed: u64) -> CriterionOutcome {
    timed(6, "strategy agreement", Duration::from_secs(120), || {
        let rows: Vec<std::result::Result<f64, String>> = (0..100u64)
            .into_par_iter()
            .map(|i| {
                let n = [8, 16, 32, 64][(i % 4) as usize];
                let inst = gen_dominance(seed.wrapping_add(i), n);
                let p = dominance_solve(&inst.a, &inst.t, Strategy::Partition, SOLVER_TOL).map_err(|e| e.to_string())?;
                let m = dominance_solve(&inst.a, &inst.t, Strategy::Multiplicative, SOLVER_TOL).map_err(|e| e.to_string())?;
                let gap = p
                    .s
                    .diagonal()
                    .iter()
                    .zip(m.s.diagonal())
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
                let allowed = p.truncation_error + m.truncation_error + 2.0 * inst.t.op_norm() / n as f64;
                Ok(gap - allowed)
            })
            .collect();
        let errors = rows.iter().filter(|r| r.is_err()).count();
        let excess = worst(rows.iter().filter_map(|r| r.as_ref().ok().copied()));
        (errors == 0 && excess <= 0.0, format!("errors={errors}, max gap-allowance={excess:.2e}"))
    })
}

/// Positive self-adjoint data with `A ≺ T` yields a positive `S` in the
/// unitary orbit of `T`.
pub fn schur_horn_reduction(seed: u64) -> CriterionOutcome {
    timed(7, "positive realization of majorized data", Duration::from_secs(60), || {
        let rows: Vec<std::result::Result<(f64, bool), String>> = (0..100u64)
            .into_par_iter()
            .map(|i| {
                let n = [4, 8, 16, 32][(i % 4) as usize];
                let inst = gen_schur_horn(seed.wrapping_add(i), n);
                let r = general_solve(&inst.a, &inst.t, Strategy::Partition, SOLVER_TOL).map_err(|e| e.to_string())?;
                let hermitian = FactorElement::new((r.s.matrix() + r.s.matrix().adjoint()) * C64::new(0.5, 0.0))
                    .map_err(|e| e.to_string())?;
                let asym = r.s.asymmetry() / n as f64;
                let min_eig = *spectral_resolution(&hermitian, SOLVER_TOL)
                    .map_err(|e| e.to_string())?
                    .eigenvalues
                    .last()
                    .expect("non-empty");
                let orbit = asym <= POSITIVITY_TOL && in_unitary_orbit(&hermitian, &inst.t, ORBIT_TOL).map_err(|e| e.to_string())?;
                Ok((min_eig, orbit))
            })
            .collect();
        let errors = rows.iter().filter(|r| r.is_err()).count();
        let ok: Vec<_> = rows.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let min_eig = ok.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        let off = ok.iter().filter(|r| !r.1).count();
        (
            errors == 0 && min_eig >= -POSITIVITY_TOL && off == 0,
            format!("errors={errors}, min eigenvalue={min_eig:.2e}, off orbit={off}"),
        )
    })
}

pub const WITNESS_RESOLUTIONS: [usize; 4] = [4, 16, 64, 256];

/// The 2×2 predicate against grid search, the witness, and the convergence
/// table on the witness pattern.
pub fn finite_gap(seed: u64) -> CriterionOutcome {
    timed(8, "finite versus continuous feasibility", Duration::from_secs(180), || {
        let sweep = sweep_2x2(10, 100, 200, seed);
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let witness = StepProfile::new(vec![1.0, 0.0]).expect("finite");
        let report = submajorizes(&witness, &StepProfile::constant(1.0, 2).expect("finite"), SOLVER_TOL).expect("same size");
        let witness_ok = report.submajorized
            && !report.thompson_finite_ok
            && !thompson_predicate_2x2([1.0, 1.0], [one, zero], SOLVER_TOL)
            && !feasibility_search_2x2([1.0, 1.0], [one, zero], 200);
        let table = resolution_convergence(&[1.0, 0.0], &[1.0, 1.0], &WITNESS_RESOLUTIONS, Strategy::Partition, SOLVER_TOL);
        let (monotone, residuals) = match &table {
            Ok(rows) => (
                rows.windows(2).all(|w| w[1].residual <= w[0].residual + SOLVER_TOL),
                rows.iter().map(|r| format!("{:.2e}", r.residual)).collect::<Vec<_>>().join(","),
            ),
            Err(e) => (false, e.to_string()),
        };
        (
            sweep.disagreements == 0 && witness_ok && monotone,
            format!(
                "sweep points={} excluded={} disagreements={}, witness ok={witness_ok}, residuals=[{residuals}]",
                sweep.points, sweep.excluded, sweep.disagreements
            ),
        )
    })
}

pub fn run_all(seed: u64) -> Vec<CriterionOutcome> {
    vec![
        rearrangement(seed),
        expectation(seed),
        halving_step(seed),
        halving_iteration(seed),
        end_to_end(seed),
        strategy_agreement(seed),
        schur_horn_reduction(seed),
        finite_gap(seed),
    ]
}

pub fn run_one(id: usize, seed: u64) -> Option<CriterionOutcome> {
    Some(match id {
        1 => rearrangement(seed),
        2 => expectation(seed),
        3 => halving_step(seed),
        4 => halving_iteration(seed),
        5 => end_to_end(seed),
        6 => strategy_agreement(seed),
        7 => schur_horn_reduction(seed),
        8 => finite_gap(seed),
        _ => return None,
    })
}
