//! Piecewise-constant functions on `[0, 1)`.
//!
//! A [`StepProfile`] with `n` values represents the function that equals
//! `values[k]` on the cell `[k/n, (k+1)/n)`. Every integral over such a
//! function is a finite sum, so the identities of the rearrangement calculus
//! hold exactly rather than approximately.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real step function on a uniform grid of `n` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StepProfile {
    values: Vec<f64>,
}

impl StepProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("a profile needs at least one cell".into()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("cell {k} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn constant(value: f64, n: usize) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Grid resolution.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Non-increasing values (the discrete form of a right-continuous
    /// non-increasing function).
    pub fn is_sorted(&self) -> bool {
        self.values.windows(2).all(|w| w[0] >= w[1])
    }

    pub fn abs(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }

    /// Mean value, i.e. the integral over `[0, 1)`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Refines the grid by replicating every cell `factor` times. The result
    /// is equidistributed with `self`.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidInput("refinement factor must be positive".into()));
        }
        let values = self
            .values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, factor))
            .collect();
        Ok(Self { values })
    }
}

impl TryFrom<Vec<f64>> for StepProfile {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<StepProfile> for Vec<f64> {
    fn from(p: StepProfile) -> Self {
        p.values
    }
}

/// A union of grid cells, the discrete stand-in for a Borel subset of `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BorelCellSet {
    n: usize,
    cells: BTreeSet<usize>,
}

impl BorelCellSet {
    pub fn new(n: usize, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let cells: BTreeSet<usize> = cells.into_iter().collect();
        if let Some(&bad) = cells.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidInput(format!(
                "cell {bad} outside a grid of {n} cells"
            )));
        }
        Ok(Self { n, cells })
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            cells: (0..n).collect(),
        }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            cells: BTreeSet::new(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.contains(&cell)
    }

    /// Cells in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().copied()
    }

    /// Lebesgue measure of the set.
    pub fn measure(&self) -> f64 {
        self.cells.len() as f64 / self.n as f64
    }

    pub fn complement(&self) -> Self {
        Self {
            n: self.n,
            cells: (0..self.n).filter(|c| !self.cells.contains(c)).collect(),
        }
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.cells.iter().copied().collect()
    }

    /// Parses the JSON form, an array of cell indices.
    pub fn from_json(n: usize, json: &str) -> Result<Self> {
        let cells: Vec<usize> = serde_json::from_str(json)?;
        Self::new(n, cells)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_vec()).expect("cell indices always serialize")
    }
}

/// Positions of `values` ordered by non-increasing value; ties keep ascending
/// original index.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    order
}

/// Non-increasing rearrangement.
pub fn rearrange(f: &StepProfile) -> StepProfile {
    let values = descending_order(&f.values)
        .into_iter()
        .map(|i| f.values[i])
        .collect();
    StepProfile { values }
}

/// Integral of a sorted profile over `[0, t)`.
pub fn partial_integral(f: &StepProfile, t: f64) -> Result<f64> {
    if !f.is_sorted() {
        return Err(Error::InvalidInput("partial_integral expects a sorted profile".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} lies outside [0, 1]")));
    }
    let n = f.len();
    let scaled = t * n as f64;
    let full = (scaled.floor() as usize).min(n);
    let mut total: f64 = f.values[..full].iter().sum();
    if full < n {
        total += (scaled - full as f64) * f.values[full];
    }
    Ok(total / n as f64)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Brings two profiles to the common resolution `lcm(n, m)`.
pub fn common_refinement(a: &StepProfile, b: &StepProfile) -> Result<(StepProfile, StepProfile)> {
    let (n, m) = (a.len(), b.len());
    let l = n / gcd(n, m) * m;
    Ok((a.refine(l / n)?, b.refine(l / m)?))
}

/// Outcome of comparing two profiles under (sub)majorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorizationReport {
    /// `a ≺_w t`: every partial integral of `|t|* - |a|*` is non-negative.
    pub submajorized: bool,
    /// Submajorized with equal total mass.
    pub majorized: bool,
    /// `margins[k-1]` is the integral of `|t|* - |a|*` over `[0, k/n)`.
    pub margins: Vec<f64>,
    /// `mean(|t|) - mean(|a|)`.
    pub trace_gap: f64,
    /// The extra finite-dimensional condition
    /// `Σ_{j<n} |α_j| - |α_n| <= Σ_{j<n} σ_j - σ_n` on the sorted data.
    pub thompson_finite_ok: bool,
}

impl MajorizationReport {
    /// Most negative margin and the grid index `k` (1-based) where it occurs.
    pub fn worst_margin(&self) -> (usize, f64) {
        self.margins
            .iter()
            .enumerate()
            .fold((1, f64::INFINITY), |(bk, bm), (k, &m)| {
                if m < bm {
                    (k + 1, m)
                } else {
                    (bk, bm)
                }
            })
    }

    /// Both finite-matrix conditions: submajorization and the extra
    /// last-entry inequality.
    pub fn finite_feasible(&self) -> bool {
        self.submajorized && self.thompson_finite_ok
    }
}

/// Tests `a ≺_w t` on absolute values. Profiles at different resolutions are
/// compared on their common refinement.
pub fn submajorizes(a: &StepProfile, t: &StepProfile, tol: f64) -> Result<MajorizationReport> {
    let (a, t) = common_refinement(a, t)?;
    let a = rearrange(&a.abs());
    let t = rearrange(&t.abs());
    let n = a.len();
    let inv = 1.0 / n as f64;

    let mut running = 0.0;
    let margins: Vec<f64> = a
        .values
        .iter()
        .zip(&t.values)
        .map(|(x, y)| {
            running += (y - x) * inv;
            running
        })
        .collect();
    let submajorized = margins.iter().all(|&m| m >= -tol);
    let trace_gap = *margins.last().expect("profiles are non-empty");
    let majorized = submajorized && trace_gap.abs() <= tol;

    let head = |v: &[f64]| v[..n - 1].iter().sum::<f64>() - v[n - 1];
    let thompson_finite_ok = (head(&a.values) - head(&t.values)) * inv <= tol;

    Ok(MajorizationReport {
        submajorized,
        majorized,
        margins,
        trace_gap,
        thompson_finite_ok,
    })
}

/// The profile on `|X|` cells whose values are `f*` restricted to `X`.
///
/// This is the restriction of `f` to the cells that the rearranging map sends
/// onto `X`, read on its own renormalized domain.
pub fn restrict_equidistributed(f: &StepProfile, x: &BorelCellSet) -> Result<StepProfile> {
    if x.is_empty() {
        return Err(Error::InvalidInput("cannot restrict to an empty cell set".into()));
    }
    if x.resolution() != f.len() {
        return Err(Error::DimensionMismatch {
            expected: f.len(),
            got: x.resolution(),
        });
    }
    let sorted = rearrange(f);
    StepProfile::new(x.iter().map(|k| sorted.values[k]).collect())
}

/// Splits `f*` into its top and bottom halves, each rescaled to `[0, 1)`.
pub fn compress_halves(f: &StepProfile) -> Result<(StepProfile, StepProfile)> {
    let n = f.len();
    if !n.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("cannot halve an odd grid of {n} cells")));
    }
    let sorted = rearrange(f).values;
    let (top, bottom) = sorted.split_at(n / 2);
    Ok((StepProfile::new(top.to_vec())?, StepProfile::new(bottom.to_vec())?))
}
