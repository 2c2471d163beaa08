//! The solver in rank coordinates.
//!
//! After reduction, cell `k` carries `a_k`, the `k`-th largest modulus of the
//! target, and `s_k`, the `k`-th singular value of `T`. Every routine here
//! returns real orthogonal `L`, `R` on its block with
//! `diag(L · diag(s) · R) = a` up to the defect it declares.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::trace::{StageKind, StageRecord};
use super::Strategy;
use crate::error::{precondition, Error, Result};
use crate::profile::descending_order;
use crate::schur_horn::{givens_realize, realize_sign_expectation_weighted};

pub(crate) type RMatrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ctx {
    /// Global resolution, used to normalize traces and norms.
    pub n: usize,
    pub tol: f64,
    /// `‖T‖`.
    pub norm: f64,
}

impl Ctx {
    pub fn new(n: usize, tol: f64, norm: f64) -> Self {
        Self { n, tol, norm }
    }

    /// Slack for cellwise comparisons of values on the scale of `‖T‖`.
    pub fn atol(&self) -> f64 {
        self.tol * self.norm.max(1.0)
    }

    /// Below this singular value `T` counts as non-invertible.
    pub fn invertibility_gate(&self) -> f64 {
        self.tol.sqrt() * self.norm
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub left: RMatrix,
    pub right: RMatrix,
    /// Declared `ℓ¹` diagonal defect.
    pub defect: f64,
    pub records: Vec<StageRecord>,
}

impl Block {
    fn identity(b: usize) -> Self {
        Self {
            left: RMatrix::identity(b, b),
            right: RMatrix::identity(b, b),
            defect: 0.0,
            records: Vec::new(),
        }
    }

    /// Direct sum of blocks living on the given local positions.
    fn direct_sum(b: usize, parts: Vec<(Vec<usize>, Block)>) -> Self {
        let mut out = Self::identity(b);
        for (idx, part) in parts {
            for (i, &gi) in idx.iter().enumerate() {
                for (j, &gj) in idx.iter().enumerate() {
                    out.left[(gi, gj)] = part.left[(i, j)];
                    out.right[(gi, gj)] = part.right[(i, j)];
                }
            }
            out.defect += part.defect;
            out.records.extend(part.records);
        }
        out
    }
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn pick_cells(cells: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| cells[i]).collect()
}

fn permutation_matrix(w: &[usize]) -> RMatrix {
    let b = w.len();
    let mut m = RMatrix::zeros(b, b);
    for (i, &wi) in w.iter().enumerate() {
        m[(wi, i)] = 1.0;
    }
    m
}

fn apply_left(total: &mut RMatrix, idx: &[usize], step: &RMatrix) {
    let rows = total.select_rows(idx);
    let new = step * rows;
    for (r, &i) in idx.iter().enumerate() {
        total.set_row(i, &new.row(r));
    }
}

fn apply_right(total: &mut RMatrix, idx: &[usize], step: &RMatrix) {
    let cols = total.select_columns(idx);
    let new = cols * step;
    for (c, &j) in idx.iter().enumerate() {
        total.set_column(j, &new.column(c));
    }
}

/// One pair of the block unitary: `p ∈ P` coupled to `partner ∈ P⊥`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Pair {
    pub p: usize,
    pub partner: usize,
    /// The conjugator exchanges `p` and `partner`.
    pub swapped: bool,
    /// Entry of the contraction `H` at `p`.
    pub h: f64,
}

/// One halving step on a diagonal block, in local coordinates.
#[derive(Debug, Clone)]
pub(crate) struct HalvingStep {
    /// Positions of the largest `⌊b/2⌋` targets.
    pub p: Vec<usize>,
    /// Positions of the smallest `⌊b/2⌋` diagonal values.
    pub q: Vec<usize>,
    /// The conjugating permutation, `W e_i = e_{w[i]}`; it maps `Q` onto `P`.
    pub w: Vec<usize>,
    pub pairs: Vec<Pair>,
    pub unpaired: Option<usize>,
    /// `[[H, √(1-H²)], [√(1-H²), -H]]` in pair coordinates.
    pub v: RMatrix,
    pub left: RMatrix,
    pub right: RMatrix,
    /// `P⊥`, ascending.
    pub residual: Vec<usize>,
    /// Positive diagonal of the residual block on `P⊥`.
    pub residual_d: Vec<f64>,
}

/// Moves the largest half of the targets onto the smallest half of `d` and
/// couples each such position with one from the other half.
///
/// The conjugator keeps as many positions fixed as it can. Fixed pairs get
/// their sign correction on the left and exchanged pairs on the right, so
/// that both give a plane rotation in the left factor.
pub(crate) fn halving_step(a: &[f64], d: &[f64], ctx: &Ctx) -> Result<HalvingStep> {
    let b = a.len();
    let h = b / 2;
    let order_a = descending_order(a);
    let order_d = descending_order(d);
    let mut in_p = vec![false; b];
    let mut in_q = vec![false; b];
    for &i in &order_a[..h] {
        in_p[i] = true;
    }
    for &i in &order_d[b - h..] {
        in_q[i] = true;
    }
    let select = |f: &dyn Fn(usize) -> bool| -> Vec<usize> { (0..b).filter(|&i| f(i)).collect() };
    let p = select(&|i| in_p[i]);
    let q = select(&|i| in_q[i]);
    let fixed_p = select(&|i| in_p[i] && in_q[i]);
    let fixed_partner = select(&|i| !in_p[i] && !in_q[i]);
    let p_only = select(&|i| in_p[i] && !in_q[i]);
    let q_only = select(&|i| !in_p[i] && in_q[i]);

    let mut w: Vec<usize> = (0..b).collect();
    for (&pp, &qq) in p_only.iter().zip(&q_only) {
        w[qq] = pp;
        w[pp] = qq;
    }

    let mut pairs = Vec::with_capacity(h);
    let contraction = |p: usize, denom: f64| -> Result<f64> {
        if denom <= 0.0 {
            return Err(Error::Invariant(format!("zero diagonal value paired with cell {p}")));
        }
        let hv = a[p] / denom;
        if hv > 1.0 {
            if a[p] - denom <= ctx.atol() {
                return Ok(1.0);
            }
            return Err(precondition(
                "complete-dominance",
                format!("contraction entry {hv:.6e} exceeds 1 at cell {p}"),
            ));
        }
        Ok(hv)
    };
    for (&pp, &m) in fixed_p.iter().zip(&fixed_partner) {
        pairs.push(Pair {
            p: pp,
            partner: m,
            swapped: false,
            h: contraction(pp, d[pp])?,
        });
    }
    for (&pp, &qq) in p_only.iter().zip(&q_only) {
        pairs.push(Pair {
            p: pp,
            partner: qq,
            swapped: true,
            h: contraction(pp, d[qq])?,
        });
    }
    let unpaired = fixed_partner.get(fixed_p.len()).copied();
    debug_assert_eq!(fixed_partner.len(), fixed_p.len() + b % 2);

    let mut v = RMatrix::identity(b, b);
    let mut sign_l = RMatrix::identity(b, b);
    let mut sign_r = RMatrix::identity(b, b);
    for pr in &pairs {
        let r = (1.0 - pr.h * pr.h).max(0.0).sqrt();
        v[(pr.p, pr.p)] = pr.h;
        v[(pr.p, pr.partner)] = r;
        v[(pr.partner, pr.p)] = r;
        v[(pr.partner, pr.partner)] = -pr.h;
        if pr.swapped {
            sign_r[(pr.partner, pr.partner)] = -1.0;
        } else {
            sign_l[(pr.partner, pr.partner)] = -1.0;
        }
    }
    let wm = permutation_matrix(&w);
    let left = sign_l * &v * &wm;
    let right = wm.transpose() * sign_r;

    let residual = select(&|i| !in_p[i]);
    let mut new_d = d.to_vec();
    for pr in &pairs {
        // The conjugated diagonal at `partner` is d[w⁻¹(partner)].
        let source = if pr.swapped { pr.p } else { pr.partner };
        new_d[pr.partner] = pr.h * d[source];
    }
    let residual_d = pick(&new_d, &residual);

    Ok(HalvingStep {
        p,
        q,
        w,
        pairs,
        unpaired,
        v,
        left,
        right,
        residual,
        residual_d,
    })
}

/// Closed-form two-by-two solve of `diag(U · diag(sa, sb) · V) = (x, y)`.
///
/// Returns `(U, V, realized, feasible)`. When the finite two-cell condition
/// fails, the targets are moved to the nearest realizable pair in the
/// `(x + y, x - y)` coordinates.
pub(crate) fn terminal_pair(x: f64, y: f64, sa: f64, sb: f64) -> (RMatrix, RMatrix, [f64; 2], bool) {
    let sum = sa + sb;
    let diff = sa - sb;
    let (u0, v0) = (x + y, x - y);
    let u = u0.clamp(-sum, sum);
    let v = v0.clamp(-diff.abs(), diff.abs());
    let feasible = u == u0 && v == v0;
    let alpha = if sum > 0.0 { (u / sum).clamp(-1.0, 1.0).acos() } else { 0.0 };
    let beta = if diff != 0.0 {
        (v / diff).clamp(-1.0, 1.0).acos()
    } else {
        alpha
    };
    let (t1, t2) = ((alpha + beta) / 2.0, (beta - alpha) / 2.0);
    let (c1, s1) = (t1.cos(), t1.sin());
    let (c2, s2) = (t2.cos(), t2.sin());
    let left = RMatrix::from_row_slice(2, 2, &[c1, -s1, s1, c1]);
    let right = RMatrix::from_row_slice(2, 2, &[c2, s2, -s2, c2]);
    let realized = if feasible { [x, y] } else { [(u + v) / 2.0, (u - v) / 2.0] };
    (left, right, realized, feasible)
}

fn increment_norms(step: &RMatrix, n: usize) -> (f64, f64) {
    let b = step.nrows();
    let diff = RMatrix::identity(b, b) - step;
    let l2 = diff.norm() / (n as f64).sqrt();
    let l1 = diff.singular_values().sum() / n as f64;
    (l2, l1)
}

/// Drives `diag(s)` to the zero diagonal by pairing the largest half of `d`
/// with the smallest half and exchanging each pair.
fn zero_diagonal_block(
    a: &[f64],
    d: &[f64],
    cells: &[usize],
    depth: usize,
    ctx: &Ctx,
) -> Result<(RMatrix, f64, StageRecord)> {
    let m = a.len();
    let worst = a.iter().copied().fold(0.0, f64::max);
    if worst > ctx.invertibility_gate() + ctx.atol() {
        return Err(precondition(
            "zero-diagonal",
            format!(
                "singular block carries a target of {worst:.3e} above the gate {:.3e}",
                ctx.invertibility_gate()
            ),
        ));
    }
    let order = descending_order(d);
    let h = m / 2;
    let mut step = RMatrix::identity(m, m);
    let mut defect = 0.0;
    for k in 0..h {
        let (i, j) = (order[k], order[h + k]);
        step[(i, i)] = 0.0;
        step[(j, j)] = 0.0;
        step[(i, j)] = 1.0;
        step[(j, i)] = 1.0;
        defect += a[i] + a[j];
    }
    let mut rec = StageRecord::new(StageKind::ZeroDiag, depth, m)
        .with_cells("Q", pick_cells(cells, &order[..h]))
        .with_cells("Qc", pick_cells(cells, &order[h..]));
    rec.projection_traces.insert("Q".into(), h as f64 / ctx.n as f64);
    if m % 2 == 1 {
        let last = order[m - 1];
        defect += (d[last] - a[last]).abs();
        rec = rec.note(format!("odd block: cell {} left on the diagonal", cells[last]));
    }
    rec.truncation = defect;
    Ok((step, defect, rec))
}

/// Complete dominance: `max a ≤ min s` on the block.
pub(crate) fn complete_solve(a: &[f64], s: &[f64], cells: &[usize], depth: usize, ctx: &Ctx) -> Result<Block> {
    let b = a.len();
    let mut out = Block::identity(b);
    if b == 0 {
        return Ok(out);
    }
    let max_a = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_s = s.iter().copied().fold(f64::INFINITY, f64::min);
    if max_a > min_s + ctx.atol() {
        return Err(precondition(
            "complete-dominance",
            format!("max target {max_a:.6e} exceeds min singular value {min_s:.6e}"),
        ));
    }
    out.records.push(
        StageRecord::new(StageKind::Complete, depth, b)
            .with_cells("I", cells.to_vec())
            .note(format!("slack {:.3e}", min_s - max_a)),
    );

    let mut active: Vec<usize> = (0..b).collect();
    let mut cur = s.to_vec();
    let mut level = 0;
    loop {
        let m = active.len();
        let aa = pick(a, &active);
        let dd = pick(&cur, &active);
        let local_cells = pick_cells(cells, &active);
        let min_d = dd.iter().copied().fold(f64::INFINITY, f64::min);
        if m >= 2 && min_d <= ctx.invertibility_gate() {
            let (step, defect, rec) = zero_diagonal_block(&aa, &dd, &local_cells, depth + 1, ctx)?;
            apply_left(&mut out.left, &active, &step);
            out.defect += defect;
            out.records.push(rec);
            break;
        }
        if m == 1 {
            let defect = (dd[0] - aa[0]).abs();
            out.defect += defect;
            let mut rec = StageRecord::new(StageKind::Terminal, depth + 1, 1)
                .with_cells("I", local_cells)
                .note("single cell");
            rec.truncation = defect;
            out.records.push(rec);
            break;
        }
        if m == 2 {
            let (l, r, got, feasible) = terminal_pair(aa[0], aa[1], dd[0], dd[1]);
            apply_left(&mut out.left, &active, &l);
            apply_right(&mut out.right, &active, &r);
            let defect = (got[0] - aa[0]).abs() + (got[1] - aa[1]).abs();
            out.defect += defect;
            let mut rec = StageRecord::new(StageKind::Terminal, depth + 1, 2).with_cells("I", local_cells);
            rec.truncation = defect;
            rec.level = Some(level);
            rec = rec.note(if feasible {
                "finite two-cell condition holds"
            } else {
                "finite two-cell condition fails; nearest realizable diagonal used"
            });
            out.records.push(rec);
            break;
        }

        let step = halving_step(&aa, &dd, ctx)?;
        apply_left(&mut out.left, &active, &step.left);
        apply_right(&mut out.right, &active, &step.right);
        let (l2, l1) = increment_norms(&step.left, ctx.n);
        let mut rec = StageRecord::new(StageKind::Complete, depth + 1, m)
            .with_cells("P", pick_cells(&local_cells, &step.p))
            .with_cells("Q", pick_cells(&local_cells, &step.q))
            .with_cells("Pc", pick_cells(&local_cells, &step.residual));
        rec.projection_traces.insert("P".into(), step.p.len() as f64 / ctx.n as f64);
        rec.projection_traces.insert("Pc".into(), step.residual.len() as f64 / ctx.n as f64);
        rec.level = Some(level);
        rec.increment_l2 = Some(l2);
        rec.increment_l1 = Some(l1);
        if let Some(u) = step.unpaired {
            rec = rec.note(format!("odd block: cell {} passes through", local_cells[u]));
        }
        out.records.push(rec);

        for (&i, &v) in step.residual.iter().zip(&step.residual_d) {
            cur[active[i]] = v;
        }
        active = step.residual.iter().map(|&i| active[i]).collect();
        level += 1;
    }
    Ok(out)
}

/// Greedy partition of the cells into maximal intervals on which
/// `max a ≤ min t`.
pub(crate) fn good_intervals(a: &[f64], t: &[f64], delta: f64, atol: f64) -> Result<Vec<Range<usize>>> {
    if a.len() != t.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            got: a.len(),
        });
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidInput(format!("δ = {delta} must be positive")));
    }
    if let Some(k) = (0..a.len()).find(|&k| a[k] + delta > t[k] + atol) {
        return Err(precondition(
            "strict-dominance",
            format!("cell {k}: {} + δ exceeds {}", a[k], t[k]),
        ));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < a.len() {
        let (mut hi, mut lo) = (a[start], t[start]);
        let mut end = start + 1;
        while end < a.len() {
            let (h2, l2) = (hi.max(a[end]), lo.min(t[end]));
            if h2 > l2 {
                break;
            }
            (hi, lo) = (h2, l2);
            end += 1;
        }
        out.push(start..end);
        start = end;
    }
    Ok(out)
}

pub(crate) fn strict_solve(
    a: &[f64],
    s: &[f64],
    delta: f64,
    cells: &[usize],
    depth: usize,
    ctx: &Ctx,
) -> Result<Block> {
    let intervals = good_intervals(a, s, delta, ctx.atol())?;
    let parts = intervals
        .par_iter()
        .map(|r| {
            let idx: Vec<usize> = r.clone().collect();
            complete_solve(&a[r.clone()], &s[r.clone()], &cells[r.clone()], depth + 1, ctx).map(|b| (idx, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rec = StageRecord::new(StageKind::Strict, depth, a.len()).note(format!("δ = {delta:.6e}"));
    for (k, r) in intervals.iter().enumerate() {
        rec = rec.with_cells(&format!("I{k}"), cells[r.clone()].to_vec());
        rec.projection_traces.insert(format!("I{k}"), r.len() as f64 / ctx.n as f64);
    }
    let mut out = Block::direct_sum(a.len(), parts);
    out.records.insert(0, rec);
    Ok(out)
}

fn check_dominance(a: &[f64], s: &[f64], ctx: &Ctx) -> Result<()> {
    if let Some(k) = (0..a.len()).find(|&k| a[k] > s[k] + ctx.atol()) {
        return Err(precondition(
            "dominance",
            format!("cell {k}: target {} exceeds singular value {}", a[k], s[k]),
        ));
    }
    Ok(())
}

pub(crate) fn dominance_solve(
    a: &[f64],
    s: &[f64],
    strategy: Strategy,
    cells: &[usize],
    depth: usize,
    ctx: &Ctx,
) -> Result<Block> {
    check_dominance(a, s, ctx)?;
    match strategy {
        Strategy::Partition => dominance_partition(a, s, cells, depth, ctx),
        Strategy::Multiplicative => dominance_multiplicative(a, s, cells, depth, ctx),
    }
}

fn dominance_partition(a: &[f64], s: &[f64], cells: &[usize], depth: usize, ctx: &Ctx) -> Result<Block> {
    let b = a.len();
    let cap = ctx.n;
    let mut x0 = Vec::new();
    let mut bands: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..b {
        let gap = s[k] - a[k];
        if gap <= ctx.atol() {
            x0.push(k);
        } else {
            let j = ((ctx.norm / gap).floor() as usize).clamp(1, cap);
            bands.entry(j).or_default().push(k);
        }
    }
    let merged = bands
        .get(&cap)
        .is_some_and(|idx| idx.iter().any(|&k| s[k] - a[k] <= ctx.norm / (cap + 1) as f64));

    let work: Vec<(usize, Vec<usize>)> = bands.into_iter().collect();
    let parts = work
        .par_iter()
        .map(|(j, idx)| {
            let (sa, ss) = (pick(a, idx), pick(s, idx));
            let delta = if *j == cap {
                sa.iter().zip(&ss).map(|(x, y)| y - x).fold(f64::INFINITY, f64::min)
            } else {
                ctx.norm / (*j + 1) as f64
            };
            strict_solve(&sa, &ss, delta, &pick_cells(cells, idx), depth + 1, ctx).map(|blk| (idx.clone(), blk))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rec = StageRecord::new(StageKind::Dominance, depth, b)
        .note("partition")
        .with_cells("X0", pick_cells(cells, &x0));
    rec.projection_traces.insert("X0".into(), x0.len() as f64 / ctx.n as f64);
    for (j, idx) in &work {
        rec = rec.with_cells(&format!("X{j}"), pick_cells(cells, idx));
        rec.projection_traces.insert(format!("X{j}"), idx.len() as f64 / ctx.n as f64);
    }
    if merged {
        rec = rec.note(format!("bands beyond index {cap} merged into X{cap}"));
    }
    let eq_defect: f64 = x0.iter().map(|&k| (s[k] - a[k]).abs()).sum();
    rec.truncation = eq_defect;

    let mut out = Block::direct_sum(b, parts);
    out.defect += eq_defect;
    out.records.insert(0, rec);
    Ok(out)
}

fn dominance_multiplicative(a: &[f64], s: &[f64], cells: &[usize], depth: usize, ctx: &Ctx) -> Result<Block> {
    let b = a.len();
    let contraction: Vec<f64> = a
        .iter()
        .zip(s)
        .map(|(&x, &y)| if y <= ctx.tol { 0.0 } else { (x / y).min(1.0) })
        .collect();
    let sign = realize_sign_expectation_weighted(&contraction, s, ctx.tol)?;
    let defect: f64 = (0..b).map(|k| (sign.realized[k] * s[k] - a[k]).abs()).sum();
    let mut rec = StageRecord::new(StageKind::Dominance, depth, b)
        .note("multiplicative")
        .note(format!("{} of {} sign eigenvalues are +1", sign.plus, b))
        .with_cells("I", cells.to_vec());
    rec.truncation = defect;
    Ok(Block {
        left: sign.u,
        right: RMatrix::identity(b, b),
        defect,
        records: vec![rec],
    })
}

/// Where the splitting function first reaches zero.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Split {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
    pub rest: Vec<usize>,
    /// `f` at the grid points `k/n`.
    pub f: Vec<f64>,
    pub t0: f64,
    /// Cell whose target is raised so that `Z` carries equal totals.
    pub adjusted: Option<(usize, f64)>,
}

/// Locates the leftmost zero of
/// `f(t) = ∫_X (s - a) + ∫_{Y ∩ [0,t)} (s - a)` by a scan over breakpoints.
pub(crate) fn split(a: &[f64], s: &[f64], ctx: &Ctx) -> Result<Split> {
    let n = a.len();
    let nf = n as f64;
    let gap: Vec<f64> = s.iter().zip(a).map(|(x, y)| x - y).collect();
    let in_x: Vec<bool> = gap.iter().map(|&g| g <= ctx.atol()).collect();
    let x: Vec<usize> = (0..n).filter(|&k| in_x[k]).collect();
    let y: Vec<usize> = (0..n).filter(|&k| !in_x[k]).collect();

    // Raw partial sums, i.e. n·f(k/n).
    let mut raw = Vec::with_capacity(n + 1);
    raw.push(x.iter().map(|&k| gap[k]).sum::<f64>());
    for k in 0..n {
        let prev = raw[k];
        raw.push(if in_x[k] { prev } else { prev + gap[k] });
    }
    let f: Vec<f64> = raw.iter().map(|v| v / nf).collect();
    let slack = ctx.atol() * nf;

    let (cutoff, t0, adjusted) = if raw[0] >= -slack {
        let adjusted = x.last().map(|&k| (k, raw[0]));
        (0, 0.0, adjusted)
    } else {
        let c = y.iter().copied().find(|&c| raw[c + 1] >= -slack).ok_or(Error::Infeasible {
            cell: n - 1,
            margin: f[n],
        })?;
        let frac = (-raw[c] / gap[c]).clamp(0.0, 1.0);
        (c + 1, (c as f64 + frac) / nf, Some((c, raw[c + 1])))
    };
    let z: Vec<usize> = (0..n).filter(|&k| in_x[k] || k < cutoff).collect();
    let rest: Vec<usize> = (0..n).filter(|&k| !in_x[k] && k >= cutoff).collect();
    Ok(Split {
        x,
        y,
        z,
        rest,
        f,
        t0,
        adjusted: adjusted.filter(|(_, v)| *v != 0.0),
    })
}

pub(crate) fn general_solve(a: &[f64], s: &[f64], strategy: Strategy, ctx: &Ctx) -> Result<Block> {
    let n = a.len();
    let cells: Vec<usize> = (0..n).collect();
    let sp = split(a, s, ctx)?;

    let mut rec = StageRecord::new(StageKind::GeneralSplit, 0, n)
        .with_cells("X", sp.x.clone())
        .with_cells("Y", sp.y.clone())
        .with_cells("Z", sp.z.clone())
        .with_cells("Zc", sp.rest.clone());
    rec.t0 = Some(sp.t0);
    rec.projection_traces.insert("Z".into(), sp.z.len() as f64 / n as f64);
    rec = rec.note(format!("f(0) = {:.6e}, f(1) = {:.6e}", sp.f[0], sp.f[n]));

    let mut parts = Vec::new();
    let mut defect = 0.0;
    if !sp.z.is_empty() {
        let lambda = pick(s, &sp.z);
        let mut alpha = pick(a, &sp.z);
        if let Some((cell, surplus)) = sp.adjusted {
            let at = sp.z.iter().position(|&k| k == cell).expect("adjusted cell lies in Z");
            alpha[at] += surplus;
            defect += surplus.abs();
            rec = rec.note(format!("target at cell {cell} moved by {surplus:.6e} to close the trace"));
        }
        let (o, rotations) = givens_realize(&lambda, &alpha, ctx.tol)?;
        let mut sh = StageRecord::new(StageKind::SchurHorn, 1, sp.z.len())
            .with_cells("Z", sp.z.clone())
            .note(format!("{rotations} rotations"));
        sh.truncation = defect;
        let block = Block {
            right: o.transpose(),
            left: o,
            defect,
            records: vec![sh],
        };
        parts.push((sp.z.clone(), block));
    }
    if !sp.rest.is_empty() {
        let block = dominance_solve(
            &pick(a, &sp.rest),
            &pick(s, &sp.rest),
            strategy,
            &pick_cells(&cells, &sp.rest),
            1,
            ctx,
        )?;
        parts.push((sp.rest.clone(), block));
    }
    rec.truncation = defect;
    let mut out = Block::direct_sum(n, parts);
    out.records.insert(0, rec);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assume, proptest, ProptestConfig, Strategy as _};

    fn realized(blk: &Block, s: &[f64]) -> Vec<f64> {
        let d = RMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(s));
        (&blk.left * d * &blk.right).diagonal().iter().copied().collect()
    }

    fn assert_block(blk: &Block, a: &[f64], s: &[f64]) {
        let b = a.len();
        let id = RMatrix::identity(b, b);
        assert!((&blk.left * blk.left.transpose() - &id).norm() < 1e-10);
        assert!((&blk.right * blk.right.transpose() - &id).norm() < 1e-10);
        let got = realized(blk, s);
        let miss: f64 = got.iter().zip(a).map(|(x, y)| (x - y).abs()).sum();
        assert!(miss <= blk.defect + 1e-9, "miss {miss} defect {}", blk.defect);
    }

    fn ctx(n: usize, norm: f64) -> Ctx {
        Ctx::new(n, 1e-9, norm)
    }

    #[test]
    fn halving_step_couples_halves() {
        let a = [0.9, 0.1, 0.5, 0.3];
        let d = [2.0, 1.0, 3.0, 4.0];
        let st = halving_step(&a, &d, &ctx(4, 4.0)).unwrap();
        assert_eq!(st.p, vec![0, 2]);
        assert_eq!(st.q, vec![0, 1]);
        assert_eq!(st.w, vec![0, 2, 1, 3]);
        let m = RMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
        let out = &st.left * m * &st.right;
        assert!((out[(0, 0)] - 0.9).abs() < 1e-15);
        assert!((out[(2, 2)] - 0.5).abs() < 1e-15);
        for (&i, &v) in st.residual.iter().zip(&st.residual_d) {
            assert!((out[(i, i)] - v).abs() < 1e-15);
            assert!(v >= 0.5);
        }
        assert_eq!(out[(1, 3)], 0.0);
    }

    #[test]
    fn zero_target_on_identity_swaps() {
        let st = halving_step(&[0.0, 0.0], &[1.0, 1.0], &ctx(2, 1.0)).unwrap();
        assert_eq!(st.v, RMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn terminal_pair_closed_form() {
        let (l, r, got, ok) = terminal_pair(1.5, 1.2, 2.0, 1.0);
        assert!(ok);
        let out = &l * RMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0])) * &r;
        assert!((out[(0, 0)] - 1.5).abs() < 1e-14 && (out[(1, 1)] - 1.2).abs() < 1e-14);
        assert_eq!(got, [1.5, 1.2]);

        let (_, _, got, ok) = terminal_pair(1.0, 0.0, 1.0, 1.0);
        assert!(!ok);
        assert_eq!(got, [0.5, 0.5]);
    }

    #[test]
    fn greedy_intervals() {
        assert_eq!(good_intervals(&[1.0; 3], &[2.0; 3], 0.5, 0.0).unwrap(), vec![0..3]);
        assert_eq!(good_intervals(&[2.0, 1.0], &[4.0, 2.0], 1.0, 0.0).unwrap(), vec![0..2]);
        assert_eq!(good_intervals(&[3.0, 1.0], &[4.0, 2.0], 1.0, 0.0).unwrap(), vec![0..1, 1..2]);
        assert_eq!(good_intervals(&[1.5, 0.5], &[4.0, 2.0], 0.5, 0.0).unwrap(), vec![0..2]);
        let err = good_intervals(&[3.0, 1.5], &[4.0, 2.0], 1.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("cell 1"));
    }

    #[test]
    fn complete_solve_small() {
        let a = [0.9, 0.8, 0.3, 0.1, 0.05];
        let s = [2.0, 1.5, 1.2, 1.0, 1.0];
        let blk = complete_solve(&a, &s, &[0, 1, 2, 3, 4], 0, &ctx(5, 2.0)).unwrap();
        assert_block(&blk, &a, &s);
    }

    #[test]
    fn singular_block_goes_through_zero_diagonal() {
        let a = [0.0, 0.0, 0.0];
        let s = [1.0, 0.5, 0.0];
        let blk = complete_solve(&a, &s, &[0, 1, 2], 0, &ctx(3, 1.0)).unwrap();
        assert_block(&blk, &a, &s);
        assert!(blk.records.iter().any(|r| r.kind == StageKind::ZeroDiag));
        assert_eq!(blk.defect, 0.0);
    }

    #[test]
    fn split_routes() {
        let c = ctx(4, 4.0);
        let sp = split(&[1.0; 4], &[4.0, 2.0, 1.0, 1.0], &c).unwrap();
        assert_eq!(sp.x, vec![2, 3]);
        assert_eq!(sp.z, vec![2, 3]);
        assert_eq!(sp.t0, 0.0);
        let sp = split(&[2.0; 4], &[4.0, 2.0, 1.0, 1.0], &c).unwrap();
        assert_eq!(sp.z, vec![0, 1, 2, 3]);
        let sp = split(&[0.5; 4], &[4.0, 2.0, 1.0, 1.0], &c).unwrap();
        assert!(sp.z.is_empty());
        assert_eq!(sp.t0, 0.0);
        // f reaches zero exactly at the end of cell 0.
        let sp = split(&[3.0, 2.0, 2.0, 1.0], &[4.0, 3.0, 1.0, 1.0], &c).unwrap();
        assert_eq!(sp.z, vec![0, 2, 3]);
        assert_eq!(sp.t0, 0.25);
        assert_eq!(sp.adjusted, None);
        // Zero halfway through cell 0: the cell joins Z with its target raised.
        let sp = split(&[3.0, 2.0, 2.0, 1.0], &[5.0, 3.0, 1.0, 1.0], &c).unwrap();
        assert_eq!(sp.z, vec![0, 2, 3]);
        assert_eq!(sp.t0, 0.125);
        assert_eq!(sp.adjusted, Some((0, 1.0)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn complete_solve_declares_its_defect(
            (s, frac) in (2usize..40).prop_flat_map(|n| (
                prop::collection::vec(1.0f64..3.0, n),
                prop::collection::vec(0.0f64..1.0, n),
            ))
        ) {
            let mut s = s;
            s.sort_by(|x, y| y.total_cmp(x));
            let floor = *s.last().unwrap();
            let mut a: Vec<f64> = frac.iter().map(|f| f * floor).collect();
            a.sort_by(|x, y| y.total_cmp(x));
            let cells: Vec<usize> = (0..s.len()).collect();
            let blk = complete_solve(&a, &s, &cells, 0, &ctx(s.len(), s[0])).unwrap();
            assert_block(&blk, &a, &s);
        }

        #[test]
        fn general_solve_declares_its_defect(
            (s, frac, strategy) in (1usize..40).prop_flat_map(|n| (
                prop::collection::vec(0.0f64..3.0, n),
                prop::collection::vec(0.0f64..1.2, n),
                prop::bool::ANY,
            ))
        ) {
            let mut s = s;
            s.sort_by(|x, y| y.total_cmp(x));
            let mut a: Vec<f64> = s.iter().zip(&frac).map(|(x, f)| x * f).collect();
            a.sort_by(|x, y| y.total_cmp(x));
            let total_s: f64 = s.iter().sum();
            let mut run = 0.0;
            let feasible = a.iter().zip(&s).all(|(x, y)| { run += y - x; run >= 0.0 });
            prop_assume!(feasible && total_s > 0.0);
            let strategy = if strategy { super::Strategy::Partition } else { super::Strategy::Multiplicative };
            let blk = general_solve(&a, &s, strategy, &ctx(s.len(), s[0])).unwrap();
            assert_block(&blk, &a, &s);
        }
    }
}
