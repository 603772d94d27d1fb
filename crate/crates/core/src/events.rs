//! Tagged bifurcation events shared by every analysis module.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    /// Saddle-node of equilibria.
    SN,
    /// Andronov–Hopf.
    HB,
    /// Saddle-node on an invariant circle.
    SNIC,
    /// Saddle-node of periodic orbits.
    SNC,
    /// Homoclinic to a hyperbolic saddle.
    HC,
    /// Bogdanov–Takens.
    BT,
    /// Cusp.
    CP,
    /// Generalised Hopf (Bautin).
    GH,
    /// Non-central saddle-node homoclinic.
    NSH,
    /// Resonant homoclinic (neutral saddle quantity).
    RHom,
    /// Period blow-up that could not be attributed to a saddle or fold.
    Blowup,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SN => "SN",
            EventKind::HB => "HB",
            EventKind::SNIC => "SNIC",
            EventKind::SNC => "SNC",
            EventKind::HC => "HC",
            EventKind::BT => "BT",
            EventKind::CP => "CP",
            EventKind::GH => "GH",
            EventKind::NSH => "NSH",
            EventKind::RHom => "RHom",
            EventKind::Blowup => "Blowup",
        }
    }

    pub fn is_codim2(self) -> bool {
        matches!(self, EventKind::BT | EventKind::CP | EventKind::GH | EventKind::NSH | EventKind::RHom)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationEvent {
    pub kind: EventKind,
    /// One value for codim-1 events on a branch, two on a two-parameter locus.
    pub params: Vec<f64>,
    pub state: Vec<f64>,
    /// Kind-specific scalars, e.g. `omega`, `l1`, `sigma`, `trace`.
    pub diagnostics: BTreeMap<String, f64>,
    /// Optional finer label such as `SN1` or `HB2`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    /// Which computation produced the event, e.g. `equilibria:v1b:det`.
    pub source: String,
}

impl BifurcationEvent {
    pub fn new(kind: EventKind, params: Vec<f64>, state: Vec<f64>, source: impl Into<String>) -> Self {
        Self { kind, params, state, diagnostics: BTreeMap::new(), label: None, source: source.into() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn diag(&self, key: &str) -> Option<f64> {
        self.diagnostics.get(key).copied()
    }

    pub fn param(&self) -> f64 {
        self.params[0]
    }
}

/// Kinds of `events` ordered by decreasing first parameter.
pub fn kinds_by_decreasing_param(events: &[BifurcationEvent]) -> Vec<EventKind> {
    let mut ev: Vec<&BifurcationEvent> = events.iter().collect();
    ev.sort_by(|a, b| b.param().total_cmp(&a.param()));
    ev.iter().map(|e| e.kind).collect()
}
