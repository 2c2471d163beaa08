//! Problem and result files.
//!
//! Numbers are written with shortest round-trip formatting, so a file read
//! back reproduces every `f64` bit for bit.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_model::{DiagonalElement, FactorElement};
use crate::schur_horn::SchurHornReport;
use crate::thompson::{RealizationResult, Strategy};
use crate::DEFAULT_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Check,
    #[default]
    Realize,
    SchurHorn,
    Convergence,
    Suite,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidInput(format!("unknown mode {s:?}")))
    }
}

/// Replicated cell patterns for a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub a: Vec<f64>,
    pub t: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<DiagonalElement>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<FactorElement>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<PatternSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolutions: Option<Vec<usize>>,
}

impl ProblemFile {
    pub fn instance(a: DiagonalElement, t: FactorElement) -> Self {
        Self {
            a: Some(a),
            t: Some(t),
            strategy: Strategy::default(),
            tol: None,
            mode: None,
            pattern: None,
            resolutions: None,
        }
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(DEFAULT_TOL)
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or_default()
    }

    /// The instance, for the modes that need one.
    pub fn pair(&self) -> Result<(&DiagonalElement, &FactorElement)> {
        match (&self.a, &self.t) {
            (Some(a), Some(t)) => Ok((a, t)),
            _ => Err(Error::InvalidInput("problem needs both \"A\" and \"T\"".into())),
        }
    }

    /// Checks the fields the selected mode relies on.
    pub fn validate(&self) -> Result<()> {
        let tol = self.tol();
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
        }
        match self.mode() {
            Mode::Check | Mode::Realize | Mode::SchurHorn => {
                let (a, t) = self.pair()?;
                if a.n() != t.n() {
                    return Err(Error::DimensionMismatch {
                        expected: t.n(),
                        got: a.n(),
                    });
                }
            }
            Mode::Convergence => {
                let p = self
                    .pattern
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("convergence needs \"pattern\"".into()))?;
                if p.a.is_empty() || p.a.len() != p.t.len() {
                    return Err(Error::InvalidInput("pattern \"a\" and \"t\" must be non-empty and of equal length".into()));
                }
                if p.a.iter().chain(&p.t).any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInput("pattern values must be finite".into()));
                }
                if let Some(r) = &self.resolutions {
                    validate_resolutions(r)?;
                }
            }
            Mode::Suite => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Resolutions for convergence tables: non-empty, powers of two.
pub fn validate_resolutions(r: &[usize]) -> Result<()> {
    if r.is_empty() {
        return Err(Error::InvalidInput("no resolutions given".into()));
    }
    if let Some(bad) = r.iter().find(|n| !n.is_power_of_two()) {
        return Err(Error::InvalidInput(format!("resolution {bad} is not a power of two")));
    }
    Ok(())
}

/// Output of a Schur-Horn solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchurHornResult {
    #[serde(rename = "U")]
    pub u: FactorElement,
    #[serde(rename = "S")]
    pub s: FactorElement,
    #[serde(flatten)]
    pub report: SchurHornReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResultFile {
    Thompson(RealizationResult),
    SchurHorn(SchurHornResult),
}

impl ResultFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Largest entry of `U·T·V - S` (with `V = U*` for Schur-Horn results).
    pub fn product_defect(&self, t: &FactorElement) -> Result<f64> {
        let (u, v, s) = match self {
            Self::Thompson(r) => (&r.u, r.v.clone(), &r.s),
            Self::SchurHorn(r) => (&r.u, r.u.adjoint(), &r.s),
        };
        if u.n() != t.n() {
            return Err(Error::DimensionMismatch {
                expected: u.n(),
                got: t.n(),
            });
        }
        let d = u.mul(t).mul(&v).matrix() - s.matrix();
        Ok(d.iter().map(|z| z.norm()).fold(0.0, f64::max))
    }
}
