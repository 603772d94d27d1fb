//! Run configuration shared by every subcommand.

use std::path::PathBuf;

use clap::ValueEnum;
use pacemaker_core::diagram::DiagramOptions;
use pacemaker_core::integrate::Budget;
use pacemaker_core::model::{DimensionalParams, DimlessModel, DimlessParams, FullModel, Model, ReducedModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Full,
    Reduced,
    Dimless,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Full => "full",
            ModelKind::Reduced => "reduced",
            ModelKind::Dimless => "dimless",
        }
    }

    /// Parameters that `continue` may free.
    pub fn free_handles(self) -> &'static [&'static str] {
        match self {
            ModelKind::Dimless => &["v1b", "v3b", "vLb"],
            ModelKind::Full | ModelKind::Reduced => &["v1"],
        }
    }

    /// Default continuation window of a free parameter.
    pub fn default_range(self, handle: &str) -> Option<(f64, f64)> {
        match (self, handle) {
            (ModelKind::Dimless, "v1b") => Some((-0.5, -0.125)),
            (ModelKind::Dimless, "v3b") => Some((-0.4, 0.5)),
            (ModelKind::Dimless, "vLb") => Some((-1.5, -0.5)),
            (_, "v1") => Some((-40.0, -10.0)),
            _ => None,
        }
    }
}

/// `name=value`.
pub fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok((k.trim().to_string(), v))
}

/// `lo:hi` with `lo < hi`.
pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("`{a}` is not a number"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("`{b}` is not a number"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("range `{s}` must satisfy lo < hi"));
    }
    Ok((lo, hi))
}

/// A comma-separated list of numbers given as one argument.
#[derive(Debug, Clone, PartialEq)]
pub struct Floats(pub Vec<f64>);

pub fn parse_vector(s: &str) -> Result<Floats, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"))).collect::<Result<_, _>>().map(Floats)
}

pub fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("`{s}` must be a positive number")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub overrides: Vec<(String, f64)>,
    pub out: PathBuf,
    pub jobs: usize,
    /// Integration step in the model's own time unit.
    pub step: Option<f64>,
    /// Corrector tolerance.
    pub tol: Option<f64>,
}

impl RunConfig {
    pub fn dimensional(&self) -> CliResult<DimensionalParams> {
        let mut p = DimensionalParams::default();
        for (k, v) in &self.overrides {
            p.set(k, *v)?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn dimless_params(&self) -> CliResult<DimlessParams> {
        let mut p = DimlessParams::default();
        for (k, v) in &self.overrides {
            p.set(k, *v)?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn full(&self) -> CliResult<FullModel> {
        Ok(FullModel::new(self.dimensional()?))
    }

    pub fn reduced(&self) -> CliResult<ReducedModel> {
        Ok(ReducedModel::new(self.dimensional()?))
    }

    pub fn dimless(&self) -> CliResult<DimlessModel> {
        Ok(DimlessModel::new(self.dimless_params()?))
    }

    pub fn require(&self, kind: ModelKind, what: &str) -> CliResult<()> {
        if self.model != kind {
            return Err(CliError::config(format!("{what} requires --model {}", kind.as_str())));
        }
        Ok(())
    }

    /// Classifier windows in the time unit of `m`; a degenerate time scale
    /// (for instance `gK = 0`) falls back to the default one.
    pub fn budget<const N: usize, M: Model<N>>(&self, m: &M) -> Budget {
        let mut b = Budget::scaled(safe_time_scale(m));
        if let Some(h) = self.step {
            b.step = h;
        }
        b
    }

    pub fn diagram_options<const N: usize, M: Model<N>>(&self, m: &M, range: (f64, f64)) -> DiagramOptions {
        let mut o = DiagramOptions::for_model(m, range);
        o.budget = self.budget(m);
        if let Some(h) = self.step {
            o.cycle.step = h;
        }
        if let Some(t) = self.tol {
            o.branch.settings.tol = t;
            o.cycle.settings.tol = t;
        }
        o
    }
}

pub fn safe_time_scale<const N: usize, M: Model<N>>(m: &M) -> f64 {
    let ts = m.time_scale();
    if ts.is_finite() && ts > 0.0 {
        ts
    } else {
        DimensionalParams::default().time_scale()
    }
}

/// Runs `$body` with `$m` bound to the configured model.
#[macro_export]
macro_rules! with_model {
    ($cfg:expr, $m:ident => $body:expr) => {
        match $cfg.model {
            $crate::config::ModelKind::Full => {
                let $m = $cfg.full()?;
                $body
            }
            $crate::config::ModelKind::Reduced => {
                let $m = $cfg.reduced()?;
                $body
            }
            $crate::config::ModelKind::Dimless => {
                let $m = $cfg.dimless()?;
                $body
            }
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_arguments() {
        assert_eq!(parse_assignment("v3b=-0.047").unwrap(), ("v3b".into(), -0.047));
        assert!(parse_assignment("v3b").is_err());
        assert!(parse_assignment("v3b=x").is_err());
        assert_eq!(parse_range("-40:-10").unwrap(), (-40.0, -10.0));
        assert!(parse_range("1:0").is_err());
        assert_eq!(parse_vector("0, 0.5,1").unwrap(), Floats(vec![0.0, 0.5, 1.0]));
        assert!(parse_positive("0").is_err());
    }

    #[test]
    fn overrides_reach_the_model() {
        let cfg = RunConfig {
            model: ModelKind::Dimless,
            overrides: vec![("v3b".into(), -0.26)],
            out: PathBuf::from("."),
            jobs: 0,
            step: None,
            tol: None,
        };
        assert_eq!(cfg.dimless().unwrap().param("v3b").unwrap(), -0.26);
        let bad = RunConfig { overrides: vec![("nope".into(), 1.0)], ..cfg };
        assert_eq!(bad.dimless().unwrap_err().code, crate::error::CONFIG);
    }

    #[test]
    fn blocked_potassium_keeps_a_usable_budget() {
        let cfg = RunConfig {
            model: ModelKind::Full,
            overrides: vec![("gK".into(), 0.0)],
            out: PathBuf::from("."),
            jobs: 0,
            step: None,
            tol: None,
        };
        let m = cfg.full().unwrap();
        let b = cfg.budget(&m);
        assert!(b.step.is_finite() && b.step > 0.0);
    }
}
