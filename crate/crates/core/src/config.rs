//! Solver configuration and the tunable-parameter vocabulary.
//!
//! Parameter names match SparTen's option names; defaults are SparTen's.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    /// Damped Newton row solver.
    Pdnr,
    /// Limited-memory quasi-Newton row solver.
    Pqnr,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pdnr => "PDNR",
            Method::Pqnr => "PQNR",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdnr" => Ok(Method::Pdnr),
            "pqnr" => Ok(Method::Pqnr),
            _ => Err(Error::Config(format!("unknown method `{s}` (expected pdnr or pqnr)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub max_backtrack_steps: u32,
    pub min_variable_nonzero_tolerance: f64,
    pub step_reduction_factor: f64,
    pub suff_decrease_tolerance: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            max_backtrack_steps: 10,
            min_variable_nonzero_tolerance: 1e-7,
            step_reduction_factor: 0.5,
            suff_decrease_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericalConfig {
    pub eps_div_zero_grad: f64,
    pub log_zero_safeguard: f64,
    pub eps_active_set: f64,
}

impl NumericalConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            eps_div_zero_grad: 1e-10,
            log_zero_safeguard: 1e-16,
            eps_active_set: match method {
                Method::Pdnr => 1e-3,
                Method::Pqnr => 1e-8,
            },
        }
    }
}

impl Default for NumericalConfig {
    fn default() -> Self {
        Self::for_method(Method::Pdnr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdnrConfig {
    pub mu_initial: f64,
    pub damping_increase_factor: f64,
    pub damping_decrease_factor: f64,
    pub damping_increase_tolerance: f64,
    pub damping_decrease_tolerance: f64,
}

impl Default for PdnrConfig {
    fn default() -> Self {
        Self {
            mu_initial: 1e-5,
            damping_increase_factor: 3.5,
            damping_decrease_factor: 2.0 / 7.0,
            damping_increase_tolerance: 0.25,
            damping_decrease_tolerance: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqnrConfig {
    #[serde(rename = "size_LBFGS")]
    pub size_lbfgs: usize,
}

impl Default for PqnrConfig {
    fn default() -> Self {
        Self { size_lbfgs: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub rank: usize,
    /// KKT tolerance.
    pub tau: f64,
    pub max_outer_iterations: u64,
    pub max_inner_iterations: u32,
    #[serde(flatten)]
    pub line_search: LineSearchConfig,
    #[serde(flatten)]
    pub pdnr: PdnrConfig,
    #[serde(flatten)]
    pub pqnr: PqnrConfig,
    #[serde(flatten)]
    pub numerical: NumericalConfig,
    /// Wall-clock budget in seconds; `None` is unlimited.
    pub time_limit: Option<f64>,
    /// Threads for the per-mode row map. Results do not depend on it.
    pub workers: usize,
}

impl SolverConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            rank: 5,
            tau: 1e-4,
            max_outer_iterations: 100_000,
            max_inner_iterations: 20,
            line_search: LineSearchConfig::default(),
            pdnr: PdnrConfig::default(),
            pqnr: PqnrConfig::default(),
            numerical: NumericalConfig::for_method(method),
            time_limit: None,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.rank == 0 {
            return Err(Error::ZeroRank);
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let Some(t) = self.time_limit {
            if !(t >= 0.0) {
                return bad(format!("time_limit must be nonnegative, got {t}"));
            }
        }
        for p in Parameter::ALL {
            p.check(p.get(self))?;
        }
        if self.pdnr.damping_increase_tolerance >= self.pdnr.damping_decrease_tolerance {
            return bad(format!(
                "damping_increase_tolerance ({}) must be below damping_decrease_tolerance ({})",
                self.pdnr.damping_increase_tolerance, self.pdnr.damping_decrease_tolerance
            ));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::new(Method::Pdnr)
    }
}

/// A tunable solver parameter, listed in canonical table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parameter {
    MaxOuterIterations,
    MaxInnerIterations,
    MaxBacktrackSteps,
    MinVariableNonzeroTolerance,
    StepReductionFactor,
    SuffDecreaseTolerance,
    MuInitial,
    DampingIncreaseFactor,
    DampingDecreaseFactor,
    DampingIncreaseTolerance,
    DampingDecreaseTolerance,
    SizeLbfgs,
    EpsDivZeroGrad,
    LogZeroSafeguard,
    EpsActiveSet,
}

enum Domain {
    /// Integer `>= min`.
    Integer(u64),
    Positive,
    OpenUnit,
    GreaterThanOne,
}

impl Parameter {
    pub const ALL: [Parameter; 15] = [
        Parameter::MaxOuterIterations,
        Parameter::MaxInnerIterations,
        Parameter::MaxBacktrackSteps,
        Parameter::MinVariableNonzeroTolerance,
        Parameter::StepReductionFactor,
        Parameter::SuffDecreaseTolerance,
        Parameter::MuInitial,
        Parameter::DampingIncreaseFactor,
        Parameter::DampingDecreaseFactor,
        Parameter::DampingIncreaseTolerance,
        Parameter::DampingDecreaseTolerance,
        Parameter::SizeLbfgs,
        Parameter::EpsDivZeroGrad,
        Parameter::LogZeroSafeguard,
        Parameter::EpsActiveSet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::MaxOuterIterations => "max_outer_iterations",
            Parameter::MaxInnerIterations => "max_inner_iterations",
            Parameter::MaxBacktrackSteps => "max_backtrack_steps",
            Parameter::MinVariableNonzeroTolerance => "min_variable_nonzero_tolerance",
            Parameter::StepReductionFactor => "step_reduction_factor",
            Parameter::SuffDecreaseTolerance => "suff_decrease_tolerance",
            Parameter::MuInitial => "mu_initial",
            Parameter::DampingIncreaseFactor => "damping_increase_factor",
            Parameter::DampingDecreaseFactor => "damping_decrease_factor",
            Parameter::DampingIncreaseTolerance => "damping_increase_tolerance",
            Parameter::DampingDecreaseTolerance => "damping_decrease_tolerance",
            Parameter::SizeLbfgs => "size_LBFGS",
            Parameter::EpsDivZeroGrad => "eps_div_zero_grad",
            Parameter::LogZeroSafeguard => "log_zero_safeguard",
            Parameter::EpsActiveSet => "eps_active_set",
        }
    }

    /// Position in the canonical table order.
    pub fn table_position(self) -> usize {
        Self::ALL.iter().position(|&p| p == self).unwrap()
    }

    fn domain(self) -> Domain {
        use Parameter::*;
        match self {
            MaxOuterIterations | MaxInnerIterations | SizeLbfgs => Domain::Integer(1),
            MaxBacktrackSteps => Domain::Integer(0),
            StepReductionFactor | SuffDecreaseTolerance | DampingDecreaseFactor
            | DampingIncreaseTolerance | DampingDecreaseTolerance => Domain::OpenUnit,
            DampingIncreaseFactor => Domain::GreaterThanOne,
            MinVariableNonzeroTolerance | MuInitial | EpsDivZeroGrad | LogZeroSafeguard
            | EpsActiveSet => Domain::Positive,
        }
    }

    /// Checks `value` against the parameter's legal domain.
    pub fn check(self, value: f64) -> Result<()> {
        let reason = match self.domain() {
            _ if !value.is_finite() => Some("must be finite".to_string()),
            Domain::Integer(min) => (value.fract() != 0.0 || value < min as f64 || value > u32::MAX as f64)
                .then(|| format!("must be an integer >= {min}")),
            Domain::Positive => (value <= 0.0).then(|| "must be positive".to_string()),
            Domain::OpenUnit => (value <= 0.0 || value >= 1.0).then(|| "must lie in (0, 1)".to_string()),
            Domain::GreaterThanOne => (value <= 1.0).then(|| "must exceed 1".to_string()),
        };
        match reason {
            Some(reason) => Err(Error::InvalidParameterValue {
                parameter: self.name().to_string(),
                value,
                reason,
            }),
            None => Ok(()),
        }
    }

    pub fn get(self, cfg: &SolverConfig) -> f64 {
        use Parameter::*;
        match self {
            MaxOuterIterations => cfg.max_outer_iterations as f64,
            MaxInnerIterations => cfg.max_inner_iterations as f64,
            MaxBacktrackSteps => cfg.line_search.max_backtrack_steps as f64,
            MinVariableNonzeroTolerance => cfg.line_search.min_variable_nonzero_tolerance,
            StepReductionFactor => cfg.line_search.step_reduction_factor,
            SuffDecreaseTolerance => cfg.line_search.suff_decrease_tolerance,
            MuInitial => cfg.pdnr.mu_initial,
            DampingIncreaseFactor => cfg.pdnr.damping_increase_factor,
            DampingDecreaseFactor => cfg.pdnr.damping_decrease_factor,
            DampingIncreaseTolerance => cfg.pdnr.damping_increase_tolerance,
            DampingDecreaseTolerance => cfg.pdnr.damping_decrease_tolerance,
            SizeLbfgs => cfg.pqnr.size_lbfgs as f64,
            EpsDivZeroGrad => cfg.numerical.eps_div_zero_grad,
            LogZeroSafeguard => cfg.numerical.log_zero_safeguard,
            EpsActiveSet => cfg.numerical.eps_active_set,
        }
    }

    /// Overrides this parameter in `cfg` after checking its domain.
    pub fn set(self, cfg: &mut SolverConfig, value: f64) -> Result<()> {
        use Parameter::*;
        self.check(value)?;
        match self {
            MaxOuterIterations => cfg.max_outer_iterations = value as u64,
            MaxInnerIterations => cfg.max_inner_iterations = value as u32,
            MaxBacktrackSteps => cfg.line_search.max_backtrack_steps = value as u32,
            MinVariableNonzeroTolerance => cfg.line_search.min_variable_nonzero_tolerance = value,
            StepReductionFactor => cfg.line_search.step_reduction_factor = value,
            SuffDecreaseTolerance => cfg.line_search.suff_decrease_tolerance = value,
            MuInitial => cfg.pdnr.mu_initial = value,
            DampingIncreaseFactor => cfg.pdnr.damping_increase_factor = value,
            DampingDecreaseFactor => cfg.pdnr.damping_decrease_factor = value,
            DampingIncreaseTolerance => cfg.pdnr.damping_increase_tolerance = value,
            DampingDecreaseTolerance => cfg.pdnr.damping_decrease_tolerance = value,
            SizeLbfgs => cfg.pqnr.size_lbfgs = value as usize,
            EpsDivZeroGrad => cfg.numerical.eps_div_zero_grad = value,
            LogZeroSafeguard => cfg.numerical.log_zero_safeguard = value,
            EpsActiveSet => cfg.numerical.eps_active_set = value,
        }
        Ok(())
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Parameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Parameter::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownParameter(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_table() {
        let c = SolverConfig::new(Method::Pdnr);
        assert_eq!(c.max_outer_iterations, 100_000);
        assert_eq!(c.max_inner_iterations, 20);
        assert_eq!(c.line_search.max_backtrack_steps, 10);
        assert_eq!(c.line_search.min_variable_nonzero_tolerance, 1e-7);
        assert_eq!(c.line_search.step_reduction_factor, 0.5);
        assert_eq!(c.line_search.suff_decrease_tolerance, 1e-4);
        assert_eq!(c.pdnr.mu_initial, 1e-5);
        assert_eq!(c.pdnr.damping_increase_factor, 3.5);
        assert_eq!(c.pdnr.damping_decrease_factor, 2.0 / 7.0);
        assert_eq!(c.pdnr.damping_increase_tolerance, 0.25);
        assert_eq!(c.pdnr.damping_decrease_tolerance, 0.75);
        assert_eq!(c.pqnr.size_lbfgs, 3);
        assert_eq!(c.numerical.eps_div_zero_grad, 1e-10);
        assert_eq!(c.numerical.log_zero_safeguard, 1e-16);
        assert_eq!(c.numerical.eps_active_set, 1e-3);
        assert_eq!(c.tau, 1e-4);
        assert_eq!(SolverConfig::new(Method::Pqnr).numerical.eps_active_set, 1e-8);
        c.validate().unwrap();
    }

    #[test]
    fn parameter_names_round_trip() {
        for p in Parameter::ALL {
            assert_eq!(p.name().parse::<Parameter>().unwrap(), p);
        }
        assert!(matches!("nope".parse::<Parameter>(), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn parameter_domains() {
        let mut c = SolverConfig::default();
        Parameter::MuInitial.set(&mut c, 1e-2).unwrap();
        assert_eq!(c.pdnr.mu_initial, 1e-2);
        assert!(Parameter::MuInitial.set(&mut c, 0.0).is_err());
        assert!(Parameter::SizeLbfgs.set(&mut c, 2.5).is_err());
        assert!(Parameter::SizeLbfgs.set(&mut c, 0.0).is_err());
        assert!(Parameter::StepReductionFactor.set(&mut c, 1.0).is_err());
        assert!(Parameter::DampingIncreaseFactor.set(&mut c, 1.0).is_err());
        Parameter::MaxBacktrackSteps.set(&mut c, 0.0).unwrap();
        assert!(Parameter::MaxOuterIterations.set(&mut c, f64::NAN).is_err());
    }

    #[test]
    fn validate_catches_inverted_damping_tolerances() {
        let mut c = SolverConfig::default();
        c.pdnr.damping_increase_tolerance = 0.8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn serializes_flat_with_table_names() {
        let v = serde_json::to_value(SolverConfig::new(Method::Pqnr)).unwrap();
        assert_eq!(v["method"], "PQNR");
        assert_eq!(v["size_LBFGS"], 3);
        assert_eq!(v["eps_active_set"], 1e-8);
        let back: SolverConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, SolverConfig::new(Method::Pqnr));
    }
}
