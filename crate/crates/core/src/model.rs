//! The pacemaker model in its three variants.
//!
//! * [`FullModel`]: membrane potential, open K⁺ fraction and cytosolic calcium,
//!   in dimensional units (mV, nM, seconds).
//! * [`ReducedModel`]: the calcium-free planar system obtained by pinning the
//!   K⁺ half-activation voltage to its upper bound `v6 + v5/2`.
//! * [`DimlessModel`]: the reduced system rescaled by `Q_v = vCa` and
//!   `Q_t = C / gK`.
//!
//! All systems expose an analytic Jacobian and string-named parameter
//! handles so the continuation code can free any scalar parameter.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub type Vector<const N: usize> = SVector<f64, N>;
pub type Matrix<const N: usize> = SMatrix<f64, N, N>;

/// An autonomous vector field `x' = f(x)`.
pub trait VectorField<const N: usize>: Sync {
    fn eval(&self, x: &Vector<N>) -> Vector<N>;

    /// Characteristic magnitude of each state component, used for scaled norms.
    fn state_scale(&self) -> Vector<N> {
        Vector::<N>::repeat(1.0)
    }
}

/// A parameterised vector field with an analytic Jacobian.
pub trait Model<const N: usize>: VectorField<N> + Clone + Send + Sync {
    fn jacobian(&self, x: &Vector<N>) -> Matrix<N>;

    fn state_names(&self) -> [&'static str; N];

    /// Characteristic time of the model in its own time unit.
    fn time_scale(&self) -> f64 {
        1.0
    }

    fn param_names(&self) -> &'static [&'static str];

    /// Starting points for equilibrium searches; empty means "use a generic grid".
    fn equilibrium_guesses(&self) -> Vec<Vector<N>> {
        Vec::new()
    }

    /// Whether a state lies in the physically meaningful region.
    fn admissible(&self, _x: &Vector<N>) -> bool {
        true
    }

    /// Newton tolerance on the time- and state-scaled residual.
    fn residual_tol(&self) -> f64 {
        1e-12
    }

    fn param(&self, name: &str) -> Result<f64, ModelError>;

    fn set_param(&mut self, name: &str, value: f64) -> Result<(), ModelError>;

    /// Magnitude used to scale a parameter inside arclength norms.
    fn param_scale(&self, _name: &str) -> f64 {
        1.0
    }

    fn with_param(&self, name: &str, value: f64) -> Result<Self, ModelError> {
        let mut m = self.clone();
        m.set_param(name, value)?;
        Ok(m)
    }

    /// `∂f/∂p` by central differences.
    fn param_derivative(&self, x: &Vector<N>, name: &str) -> Result<Vector<N>, ModelError> {
        let p = self.param(name)?;
        let h = 1e-6 * p.abs().max(self.param_scale(name));
        let fp = self.with_param(name, p + h)?.eval(x);
        let fm = self.with_param(name, p - h)?.eval(x);
        Ok((fp - fm) / (2.0 * h))
    }
}

fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    1.0 / (c * c)
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Dimensional parameters of the full model (mV, nM, s, C).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionalParams {
    pub v1: f64,
    pub v2: f64,
    pub v4: f64,
    pub v5: f64,
    pub v6: f64,
    pub ca3: f64,
    pub ca4: f64,
    pub kd: f64,
    pub bt: f64,
    pub phi_n: f64,
    pub v_l: f64,
    pub v_k: f64,
    pub v_ca: f64,
    pub c: f64,
    pub g_l: f64,
    pub g_k: f64,
    pub g_ca: f64,
    pub alpha: f64,
    pub k_ca: f64,
}

impl Default for DimensionalParams {
    fn default() -> Self {
        Self {
            v1: -22.5,
            v2: 25.0,
            v4: 14.5,
            v5: 8.0,
            v6: -15.0,
            ca3: 400.0,
            ca4: 150.0,
            kd: 1.0e3,
            bt: 1.0e5,
            phi_n: 2.664,
            v_l: -70.0,
            v_k: -90.0,
            v_ca: 80.0,
            c: 1.9635e-14,
            g_l: 7.854e-14,
            g_k: 3.1416e-13,
            g_ca: 1.57e-13,
            alpha: 7.9976e15,
            k_ca: 1.3567537e2,
        }
    }
}

pub const DIMENSIONAL_NAMES: &[&str] = &[
    "v1", "v2", "v4", "v5", "v6", "Ca3", "Ca4", "Kd", "BT", "phi_n", "vL", "vK", "vCa", "C", "gL",
    "gK", "gCa", "alpha", "kCa",
];

impl DimensionalParams {
    fn slot(&mut self, name: &str) -> Result<&mut f64, ModelError> {
        Ok(match name {
            "v1" => &mut self.v1,
            "v2" => &mut self.v2,
            "v4" => &mut self.v4,
            "v5" => &mut self.v5,
            "v6" => &mut self.v6,
            "Ca3" => &mut self.ca3,
            "Ca4" => &mut self.ca4,
            "Kd" => &mut self.kd,
            "BT" => &mut self.bt,
            "phi_n" => &mut self.phi_n,
            "vL" => &mut self.v_l,
            "vK" => &mut self.v_k,
            "vCa" => &mut self.v_ca,
            "C" => &mut self.c,
            "gL" => &mut self.g_l,
            "gK" => &mut self.g_k,
            "gCa" => &mut self.g_ca,
            "alpha" => &mut self.alpha,
            "kCa" => &mut self.k_ca,
            _ => return Err(ModelError::UnknownParameter(name.to_string())),
        })
    }

    pub fn get(&self, name: &str) -> Result<f64, ModelError> {
        let mut copy = *self;
        copy.slot(name).map(|v| *v)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        *self.slot(name)? = value;
        Ok(())
    }

    /// Checks the admissibility constraints of the parameter record.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name: &str, reason: &str| {
            Err(ModelError::InvalidValue { name: name.into(), reason: reason.into() })
        };
        for (name, v) in DIMENSIONAL_NAMES.iter().map(|n| (*n, self.get(n).unwrap())) {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        if self.g_l < 0.0 || self.g_k < 0.0 || self.g_ca < 0.0 {
            return bad("g", "conductances must be non-negative");
        }
        if self.c <= 0.0 {
            return bad("C", "must be positive");
        }
        if self.kd <= 0.0 {
            return bad("Kd", "must be positive");
        }
        if self.bt < 0.0 {
            return bad("BT", "must be non-negative");
        }
        if self.ca4 == 0.0 {
            return bad("Ca4", "must be non-zero");
        }
        if self.v2 == 0.0 {
            return bad("v2", "must be non-zero");
        }
        if self.v4 == 0.0 {
            return bad("v4", "must be non-zero");
        }
        Ok(())
    }

    /// Upper bound of `v3(Ca_i)`, used as the pinned value in the reduced model.
    pub fn v3_star(&self) -> f64 {
        self.v6 + self.v5 / 2.0
    }

    /// Characteristic time `C / gK`.
    pub fn time_scale(&self) -> f64 {
        self.c / self.g_k
    }

    pub fn from_kv_text(text: &str) -> Result<Self, ModelError> {
        let mut p = Self::default();
        for (line, name, value) in parse_kv(text)? {
            p.set(&name, value).map_err(|e| ModelError::Parse { line, reason: e.to_string() })?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_kv_text(&self) -> String {
        DIMENSIONAL_NAMES
            .iter()
            .map(|n| format!("{n} = {}\n", crate::io::fmt_num(self.get(n).unwrap())))
            .collect()
    }
}

/// Parameters of the dimensionless planar model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimlessParams {
    pub v1b: f64,
    pub v2b: f64,
    pub v3b: f64,
    pub v4b: f64,
    pub v_lb: f64,
    pub v_kb: f64,
    pub g_lb: f64,
    pub g_kb: f64,
    pub g_cab: f64,
    pub psi: f64,
}

impl Default for DimlessParams {
    /// Values obtained by rescaling the default dimensional parameters.
    fn default() -> Self {
        nondimensionalise(&DimensionalParams::default()).expect("default parameters are admissible")
    }
}

pub const DIMLESS_NAMES: &[&str] =
    &["v1b", "v2b", "v3b", "v4b", "vLb", "vKb", "gLb", "gKb", "gCab", "psi"];

impl DimlessParams {
    /// The rounded values as printed in the published table, including its
    /// negative `v4b` and `v3b = -0.1380`.
    pub fn printed_table() -> Self {
        Self {
            v1b: -0.2813,
            v2b: 0.3125,
            v3b: -0.1380,
            v4b: -0.1812,
            v_lb: -0.875,
            v_kb: -1.125,
            g_lb: 0.25,
            g_kb: 1.0,
            g_cab: 0.4997,
            psi: 0.1665,
        }
    }

    fn slot(&mut self, name: &str) -> Result<&mut f64, ModelError> {
        Ok(match name {
            "v1b" => &mut self.v1b,
            "v2b" => &mut self.v2b,
            "v3b" => &mut self.v3b,
            "v4b" => &mut self.v4b,
            "vLb" => &mut self.v_lb,
            "vKb" => &mut self.v_kb,
            "gLb" => &mut self.g_lb,
            "gKb" => &mut self.g_kb,
            "gCab" => &mut self.g_cab,
            "psi" => &mut self.psi,
            _ => return Err(ModelError::UnknownParameter(name.to_string())),
        })
    }

    pub fn get(&self, name: &str) -> Result<f64, ModelError> {
        let mut copy = *self;
        copy.slot(name).map(|v| *v)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        *self.slot(name)? = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name: &str, reason: &str| {
            Err(ModelError::InvalidValue { name: name.into(), reason: reason.into() })
        };
        for name in DIMLESS_NAMES {
            if !self.get(name).unwrap().is_finite() {
                return bad(name, "must be finite");
            }
        }
        if self.psi <= 0.0 {
            return bad("psi", "must be positive");
        }
        if self.v2b == 0.0 {
            return bad("v2b", "must be non-zero");
        }
        if self.v4b == 0.0 {
            return bad("v4b", "must be non-zero");
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self, ModelError> {
        let mut p = Self::default();
        for (line, name, value) in parse_kv(text)? {
            p.set(&name, value).map_err(|e| ModelError::Parse { line, reason: e.to_string() })?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_kv_text(&self) -> String {
        DIMLESS_NAMES
            .iter()
            .map(|n| format!("{n} = {}\n", crate::io::fmt_num(self.get(n).unwrap())))
            .collect()
    }
}

/// Scale factors of the transform `v = V·Q_v`, `t = τ·Q_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub voltage: f64,
    pub time: f64,
}

pub fn scales(p: &DimensionalParams) -> Result<Scales, ModelError> {
    if p.g_k == 0.0 {
        return Err(ModelError::InvalidValue { name: "gK".into(), reason: "must be non-zero".into() });
    }
    if p.v_ca == 0.0 {
        return Err(ModelError::InvalidValue { name: "vCa".into(), reason: "must be non-zero".into() });
    }
    Ok(Scales { voltage: p.v_ca, time: p.c / p.g_k })
}

/// Rescales the reduced dimensional model into dimensionless form.
pub fn nondimensionalise(p: &DimensionalParams) -> Result<DimlessParams, ModelError> {
    let s = scales(p)?;
    let out = DimlessParams {
        v1b: p.v1 / s.voltage,
        v2b: p.v2 / s.voltage,
        v3b: p.v3_star() / s.voltage,
        v4b: p.v4 / s.voltage,
        v_lb: p.v_l / s.voltage,
        v_kb: p.v_k / s.voltage,
        g_lb: p.g_l / p.g_k,
        g_kb: 1.0,
        g_cab: p.g_ca / p.g_k,
        psi: p.c * p.phi_n / p.g_k,
    };
    Ok(out)
}

fn parse_kv(text: &str) -> Result<Vec<(usize, String, f64)>, ModelError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| ModelError::Parse { line, reason: "expected `name = value`".into() })?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| ModelError::Parse { line, reason: format!("bad number `{}`", v.trim()) })?;
        out.push((line, k.trim().to_string(), value));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Auxiliary functions
// ---------------------------------------------------------------------------

/// Steady-state open fraction of Ca²⁺ channels.
pub fn m_inf(v: f64, p: &DimensionalParams) -> f64 {
    0.5 * (1.0 + ((v - p.v1) / p.v2).tanh())
}

/// Calcium-dependent half-activation voltage of the K⁺ channel.
pub fn v3_of_ca(ca: f64, p: &DimensionalParams) -> f64 {
    -p.v5 / 2.0 * ((ca - p.ca3) / p.ca4).tanh() + p.v6
}

pub fn n_inf_full(v: f64, ca: f64, p: &DimensionalParams) -> f64 {
    0.5 * (1.0 + ((v - v3_of_ca(ca, p)) / p.v4).tanh())
}

pub fn lambda_n_full(v: f64, ca: f64, p: &DimensionalParams) -> f64 {
    p.phi_n * ((v - v3_of_ca(ca, p)) / (2.0 * p.v4)).cosh()
}

/// Calcium buffering factor.
pub fn rho(ca: f64, p: &DimensionalParams) -> f64 {
    let s = (p.kd + ca) * (p.kd + ca);
    s / (s + p.kd * p.bt)
}

fn rho_prime(ca: f64, p: &DimensionalParams) -> f64 {
    let u = p.kd + ca;
    let den = u * u + p.kd * p.bt;
    2.0 * u * p.kd * p.bt / (den * den)
}

// ---------------------------------------------------------------------------
// Systems
// ---------------------------------------------------------------------------

/// Brackets sign changes of `dv` along a one-dimensional curve of candidate
/// equilibria `v ↦ state(v)` and returns the midpoint of each bracket.
fn curve_guesses<const N: usize>(
    lo: f64,
    hi: f64,
    state: impl Fn(f64) -> Vector<N>,
    dv: impl Fn(&Vector<N>) -> f64,
) -> Vec<Vector<N>> {
    const SAMPLES: usize = 801;
    let vs: Vec<f64> = (0..SAMPLES).map(|i| lo + (hi - lo) * i as f64 / (SAMPLES - 1) as f64).collect();
    let g: Vec<f64> = vs.iter().map(|v| dv(&state(*v))).collect();
    (1..SAMPLES)
        .filter(|&i| g[i - 1] == 0.0 || g[i - 1].signum() != g[i].signum())
        .map(|i| state(0.5 * (vs[i - 1] + vs[i])))
        .collect()
}

/// Three-variable model: state `(v, n, Ca_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FullModel {
    pub p: DimensionalParams,
}

impl FullModel {
    pub fn new(p: DimensionalParams) -> Self {
        Self { p }
    }
}

impl VectorField<3> for FullModel {
    fn eval(&self, x: &Vector<3>) -> Vector<3> {
        let p = &self.p;
        let (v, n, ca) = (x[0], x[1], x[2]);
        let m = m_inf(v, p);
        let i_ca = p.g_ca * m * (v - p.v_ca);
        let dv = (-p.g_l * (v - p.v_l) - p.g_k * n * (v - p.v_k) - i_ca) / p.c;
        let dn = lambda_n_full(v, ca, p) * (n_inf_full(v, ca, p) - n);
        let dca = (-p.alpha * i_ca - p.k_ca * ca) * rho(ca, p);
        Vector::<3>::new(dv, dn, dca)
    }

    fn state_scale(&self) -> Vector<3> {
        Vector::<3>::new(self.p.v_ca.abs(), 1.0, self.p.kd)
    }
}

impl Model<3> for FullModel {
    fn jacobian(&self, x: &Vector<3>) -> Matrix<3> {
        let p = &self.p;
        let (v, n, ca) = (x[0], x[1], x[2]);
        let xm = (v - p.v1) / p.v2;
        let m = 0.5 * (1.0 + xm.tanh());
        let dm = 0.5 * sech2(xm) / p.v2;

        let zc = (ca - p.ca3) / p.ca4;
        let v3 = -p.v5 / 2.0 * zc.tanh() + p.v6;
        let dv3 = -p.v5 / 2.0 * sech2(zc) / p.ca4;
        let u = (v - v3) / p.v4;
        let ninf = 0.5 * (1.0 + u.tanh());
        let dninf_du = 0.5 * sech2(u);
        let lam = p.phi_n * (u / 2.0).cosh();
        let dlam_du = p.phi_n * 0.5 * (u / 2.0).sinh();
        let dn_du = dlam_du * (ninf - n) + lam * dninf_du;
        let du_dv = 1.0 / p.v4;
        let du_dca = -dv3 / p.v4;

        let r = rho(ca, p);
        let g = -p.alpha * p.g_ca * m * (v - p.v_ca) - p.k_ca * ca;

        let mut j = Matrix::<3>::zeros();
        j[(0, 0)] = -(p.g_l + p.g_k * n + p.g_ca * (dm * (v - p.v_ca) + m)) / p.c;
        j[(0, 1)] = -p.g_k * (v - p.v_k) / p.c;
        j[(1, 0)] = dn_du * du_dv;
        j[(1, 1)] = -lam;
        j[(1, 2)] = dn_du * du_dca;
        j[(2, 0)] = -p.alpha * p.g_ca * (dm * (v - p.v_ca) + m) * r;
        j[(2, 2)] = -p.k_ca * r + g * rho_prime(ca, p);
        j
    }

    fn state_names(&self) -> [&'static str; 3] {
        ["v", "n", "Ca_i"]
    }

    fn time_scale(&self) -> f64 {
        self.p.time_scale()
    }

    fn param_names(&self) -> &'static [&'static str] {
        DIMENSIONAL_NAMES
    }

    fn param(&self, name: &str) -> Result<f64, ModelError> {
        self.p.get(name)
    }

    fn set_param(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        self.p.set(name, value)
    }

    fn param_scale(&self, name: &str) -> f64 {
        dimensional_param_scale(&self.p, name)
    }

    fn residual_tol(&self) -> f64 {
        1e-10
    }

    fn equilibrium_guesses(&self) -> Vec<Vector<3>> {
        let p = self.p;
        // on the n- and Ca-nullclines, parameterised by v
        let state = move |v: f64| {
            let ca = (-p.alpha * p.g_ca * m_inf(v, &p) * (v - p.v_ca) / p.k_ca).max(0.0);
            Vector::<3>::new(v, n_inf_full(v, ca, &p), ca)
        };
        let s = 1.2 * p.v_ca.abs();
        curve_guesses(-s, s, state, |x| self.eval(x)[0])
    }

    fn admissible(&self, x: &Vector<3>) -> bool {
        x[2] >= 0.0
    }
}

fn dimensional_param_scale(p: &DimensionalParams, name: &str) -> f64 {
    match name {
        "v1" | "v2" | "v4" | "v5" | "v6" | "vL" | "vK" | "vCa" => p.v_ca.abs(),
        _ => p.get(name).map(f64::abs).ok().filter(|v| *v > 0.0).unwrap_or(1.0),
    }
}

/// Planar dimensional model with `v3` pinned to `v6 + v5/2`: state `(v, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReducedModel {
    pub p: DimensionalParams,
}

impl ReducedModel {
    pub fn new(p: DimensionalParams) -> Self {
        Self { p }
    }
}

impl VectorField<2> for ReducedModel {
    fn eval(&self, x: &Vector<2>) -> Vector<2> {
        let p = &self.p;
        let (v, n) = (x[0], x[1]);
        let u = (v - p.v3_star()) / p.v4;
        let dv = (-p.g_l * (v - p.v_l) - p.g_k * n * (v - p.v_k) - p.g_ca * m_inf(v, p) * (v - p.v_ca))
            / p.c;
        let dn = p.phi_n * (u / 2.0).cosh() * (0.5 * (1.0 + u.tanh()) - n);
        Vector::<2>::new(dv, dn)
    }

    fn state_scale(&self) -> Vector<2> {
        Vector::<2>::new(self.p.v_ca.abs(), 1.0)
    }
}

impl Model<2> for ReducedModel {
    fn jacobian(&self, x: &Vector<2>) -> Matrix<2> {
        let p = &self.p;
        let (v, n) = (x[0], x[1]);
        let xm = (v - p.v1) / p.v2;
        let m = 0.5 * (1.0 + xm.tanh());
        let dm = 0.5 * sech2(xm) / p.v2;
        let u = (v - p.v3_star()) / p.v4;
        let ninf = 0.5 * (1.0 + u.tanh());
        let lam = p.phi_n * (u / 2.0).cosh();
        let dlam = p.phi_n * 0.5 * (u / 2.0).sinh() / p.v4;
        let dninf = 0.5 * sech2(u) / p.v4;
        Matrix::<2>::new(
            -(p.g_l + p.g_k * n + p.g_ca * (dm * (v - p.v_ca) + m)) / p.c,
            -p.g_k * (v - p.v_k) / p.c,
            dlam * (ninf - n) + lam * dninf,
            -lam,
        )
    }

    fn state_names(&self) -> [&'static str; 2] {
        ["v", "n"]
    }

    fn time_scale(&self) -> f64 {
        self.p.time_scale()
    }

    fn param_names(&self) -> &'static [&'static str] {
        DIMENSIONAL_NAMES
    }

    fn param(&self, name: &str) -> Result<f64, ModelError> {
        self.p.get(name)
    }

    fn set_param(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        self.p.set(name, value)
    }

    fn param_scale(&self, name: &str) -> f64 {
        dimensional_param_scale(&self.p, name)
    }

    fn residual_tol(&self) -> f64 {
        1e-10
    }

    fn equilibrium_guesses(&self) -> Vec<Vector<2>> {
        let p = self.p;
        let state = move |v: f64| Vector::<2>::new(v, 0.5 * (1.0 + ((v - p.v3_star()) / p.v4).tanh()));
        let s = 1.2 * p.v_ca.abs();
        curve_guesses(-s, s, state, |x| self.eval(x)[0])
    }
}

/// Dimensionless planar model: state `(V, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DimlessModel {
    pub p: DimlessParams,
}

impl DimlessModel {
    pub fn new(p: DimlessParams) -> Self {
        Self { p }
    }

    pub fn m_inf(&self, v: f64) -> f64 {
        0.5 * (1.0 + ((v - self.p.v1b) / self.p.v2b).tanh())
    }

    pub fn n_inf(&self, v: f64) -> f64 {
        0.5 * (1.0 + ((v - self.p.v3b) / self.p.v4b).tanh())
    }

    pub fn lambda(&self, v: f64) -> f64 {
        ((v - self.p.v3b) / (2.0 * self.p.v4b)).cosh()
    }

    /// `V'` restricted to the `N`-nullcline; its zeros are the equilibria.
    pub fn nullcline_residual(&self, v: f64) -> f64 {
        let p = &self.p;
        -p.g_lb * (v - p.v_lb) - p.g_kb * self.n_inf(v) * (v - p.v_kb) - p.g_cab * self.m_inf(v) * (v - 1.0)
    }

    /// `N` on the `V`-nullcline, i.e. where `V' = 0` (undefined at `V = vKb`).
    pub fn v_nullcline(&self, v: f64) -> f64 {
        let p = &self.p;
        (-p.g_lb * (v - p.v_lb) - p.g_cab * self.m_inf(v) * (v - 1.0)) / (p.g_kb * (v - p.v_kb))
    }
}

impl VectorField<2> for DimlessModel {
    fn eval(&self, x: &Vector<2>) -> Vector<2> {
        let p = &self.p;
        let (v, n) = (x[0], x[1]);
        let dv = -p.g_lb * (v - p.v_lb) - p.g_kb * n * (v - p.v_kb) - p.g_cab * self.m_inf(v) * (v - 1.0);
        let dn = p.psi * self.lambda(v) * (self.n_inf(v) - n);
        Vector::<2>::new(dv, dn)
    }
}

impl Model<2> for DimlessModel {
    fn jacobian(&self, x: &Vector<2>) -> Matrix<2> {
        let p = &self.p;
        let (v, n) = (x[0], x[1]);
        let xm = (v - p.v1b) / p.v2b;
        let m = 0.5 * (1.0 + xm.tanh());
        let dm = 0.5 * sech2(xm) / p.v2b;
        let y = (v - p.v3b) / p.v4b;
        let ninf = 0.5 * (1.0 + y.tanh());
        let dninf = 0.5 * sech2(y) / p.v4b;
        let lam = (y / 2.0).cosh();
        let dlam = 0.5 * (y / 2.0).sinh() / p.v4b;
        Matrix::<2>::new(
            -p.g_lb - p.g_kb * n - p.g_cab * (dm * (v - 1.0) + m),
            -p.g_kb * (v - p.v_kb),
            p.psi * (dlam * (ninf - n) + lam * dninf),
            -p.psi * lam,
        )
    }

    fn state_names(&self) -> [&'static str; 2] {
        ["V", "N"]
    }

    fn param_names(&self) -> &'static [&'static str] {
        DIMLESS_NAMES
    }

    fn equilibrium_guesses(&self) -> Vec<Vector<2>> {
        curve_guesses(-1.2, 1.2, |v| Vector::<2>::new(v, self.n_inf(v)), |x| self.eval(x)[0])
    }

    fn param(&self, name: &str) -> Result<f64, ModelError> {
        self.p.get(name)
    }

    fn set_param(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        self.p.set(name, value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_jacobian<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>) -> Matrix<N> {
        let s = m.state_scale();
        let mut j = Matrix::<N>::zeros();
        for k in 0..N {
            let h = 1e-6 * s[k];
            let mut xp = *x;
            let mut xm = *x;
            xp[k] += h;
            xm[k] -= h;
            j.set_column(k, &((m.eval(&xp) - m.eval(&xm)) / (2.0 * h)));
        }
        j
    }

    fn assert_jacobian_matches<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>) {
        let a = m.jacobian(x);
        let f = fd_jacobian(m, x);
        // column-scaled comparison so entries of very different magnitude are comparable
        let s = m.state_scale();
        for c in 0..N {
            let col_norm = (0..N).map(|r| f[(r, c)].abs()).fold(0.0, f64::max).max(1e-300);
            for r in 0..N {
                let err = (a[(r, c)] - f[(r, c)]).abs() / col_norm;
                assert!(err <= 1e-5, "J[{r},{c}] analytic {} vs fd {} (scale {})", a[(r, c)], f[(r, c)], s[c]);
            }
        }
    }

    #[test]
    fn m_inf_examples() {
        let p = DimensionalParams::default();
        assert_eq!(m_inf(p.v1, &p), 0.5);
        assert_relative_eq!(m_inf(2.5, &p), 0.5 * (1.0 + 1f64.tanh()), epsilon = 1e-15);
        assert_relative_eq!(m_inf(2.5, &p), 0.880797077977882, epsilon = 1e-12);
        assert!(m_inf(1e4, &p) > 1.0 - 1e-12);
        assert!(m_inf(-1e4, &p) < 1e-12);
    }

    #[test]
    fn v3_examples() {
        let p = DimensionalParams::default();
        assert_eq!(v3_of_ca(400.0, &p), -15.0);
        assert_relative_eq!(v3_of_ca(-1e9, &p), -11.0, epsilon = 1e-12);
        assert_relative_eq!(v3_of_ca(550.0, &p), -15.0 - 4.0 * 1f64.tanh(), epsilon = 1e-12);
        assert_relative_eq!(v3_of_ca(550.0, &p), -18.0463766, epsilon = 1e-6);
        assert_eq!(p.v3_star(), -11.0);
    }

    #[test]
    fn n_inf_and_lambda_examples() {
        let p = DimensionalParams::default();
        let ca = 321.0;
        let v3 = v3_of_ca(ca, &p);
        assert_relative_eq!(n_inf_full(v3, ca, &p), 0.5, epsilon = 1e-15);
        assert_relative_eq!(lambda_n_full(v3, ca, &p), 2.664, epsilon = 1e-15);
        assert_relative_eq!(n_inf_full(v3 + p.v4, ca, &p), 0.880797077977882, epsilon = 1e-12);
        for d in [0.3, 5.0, 40.0] {
            assert_relative_eq!(
                lambda_n_full(v3 + d, ca, &p),
                lambda_n_full(v3 - d, ca, &p),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn rho_examples() {
        let mut p = DimensionalParams::default();
        assert_relative_eq!(rho(0.0, &p), 1e6 / (1e6 + 1e8), epsilon = 1e-15);
        assert_relative_eq!(rho(0.0, &p), 0.00990099, epsilon = 1e-8);
        assert_relative_eq!(rho(9000.0, &p), 0.5, epsilon = 1e-15);
        p.bt = 0.0;
        assert_eq!(rho(123.0, &p), 1.0);
    }

    #[test]
    fn full_model_single_channel_limit() {
        let p = DimensionalParams { g_ca: 0.0, g_k: 0.0, ..Default::default() };
        let m = FullModel::new(p);
        let x = Vector::<3>::new(-20.0, 0.3, 200.0);
        assert_relative_eq!(m.eval(&x)[0], -(p.g_l / p.c) * (-20.0 - p.v_l), max_relative = 1e-14);
    }

    #[test]
    fn reduced_matches_full_when_v3_pinned() {
        // Ca -> -inf pins v3 at its upper bound; use a finite Ca deep in saturation
        // and compare against the formal limit with a looser tolerance.
        let p = DimensionalParams::default();
        let mut q = p;
        q.ca3 = 1e9; // tanh(-huge) = -1 exactly in f64
        let full = FullModel::new(q);
        let red = ReducedModel::new(q);
        assert_eq!(v3_of_ca(0.0, &q), q.v3_star());
        for &(v, n) in &[(-40.0, 0.1), (-10.0, 0.7), (15.0, 0.4)] {
            let f = full.eval(&Vector::<3>::new(v, n, 0.0));
            let r = red.eval(&Vector::<2>::new(v, n));
            assert_relative_eq!(f[0], r[0], max_relative = 1e-14);
            assert_relative_eq!(f[1], r[1], max_relative = 1e-14);
        }
    }

    #[test]
    fn nondimensionalise_defaults() {
        let p = DimensionalParams::default();
        let s = scales(&p).unwrap();
        assert_relative_eq!(s.time, 0.0625, epsilon = 1e-4);
        let d = nondimensionalise(&p).unwrap();
        assert_relative_eq!(d.psi, 0.1665, epsilon = 5e-5);
        assert_relative_eq!(d.g_cab, 0.4997, epsilon = 5e-5);
        assert_relative_eq!(d.v_lb, -0.875, epsilon = 1e-15);
        assert_relative_eq!(d.v_kb, -1.125, epsilon = 1e-15);
        assert_relative_eq!(d.v1b, -0.28125, epsilon = 1e-15);
        assert_relative_eq!(d.v3b, -0.1375, epsilon = 1e-15);
        assert_relative_eq!(d.v4b, 0.18125, epsilon = 1e-15);
        assert_relative_eq!(d.g_lb, 0.25, epsilon = 1e-12);
        assert_eq!(d.g_kb, 1.0);
        assert_eq!(DimlessParams::default(), d);
    }

    #[test]
    fn nondimensionalise_rejects_degenerate_scales() {
        assert!(nondimensionalise(&DimensionalParams { g_k: 0.0, ..Default::default() }).is_err());
        assert!(nondimensionalise(&DimensionalParams { v_ca: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn dimless_centered_values() {
        let m = DimlessModel::default();
        assert_eq!(m.m_inf(m.p.v1b), 0.5);
        assert_eq!(m.n_inf(m.p.v3b), 0.5);
        assert_eq!(m.lambda(m.p.v3b), 1.0);
    }

    #[test]
    fn dn_dn_entry_is_negative() {
        let m = DimlessModel::default();
        for v in [-1.0, -0.3, 0.0, 0.8] {
            let j = m.jacobian(&Vector::<2>::new(v, 0.4));
            assert!(j[(1, 1)] < 0.0);
            assert_relative_eq!(j[(1, 1)], -m.p.psi * m.lambda(v), max_relative = 1e-15);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        assert_jacobian_matches(&DimlessModel::default(), &Vector::<2>::new(-0.3, 0.2));
        assert_jacobian_matches(&DimlessModel::new(DimlessParams::printed_table()), &Vector::<2>::new(0.1, 0.6));
        assert_jacobian_matches(&ReducedModel::default(), &Vector::<2>::new(-25.0, 0.3));
        assert_jacobian_matches(&FullModel::default(), &Vector::<3>::new(-25.0, 0.3, 350.0));
    }

    #[test]
    fn param_file_parsing() {
        let p = DimlessParams::from_kv_text("# comment\nv1b = -0.3  # trailing\n\n  psi=0.2\n").unwrap();
        assert_eq!(p.v1b, -0.3);
        assert_eq!(p.psi, 0.2);
        assert_eq!(p.v3b, DimlessParams::default().v3b);
        assert!(matches!(
            DimlessParams::from_kv_text("bogus = 1"),
            Err(ModelError::Parse { line: 1, .. })
        ));
        assert!(DimlessParams::from_kv_text("v1b = abc").is_err());
        assert!(DimlessParams::from_kv_text("v1b -0.3").is_err());
        assert!(DimlessParams::from_kv_text("psi = -1").is_err());
        let d = DimensionalParams::from_kv_text("gK = 0\n").unwrap();
        assert_eq!(d.g_k, 0.0);
        let round = DimensionalParams::from_kv_text(&DimensionalParams::default().to_kv_text()).unwrap();
        assert_eq!(round, DimensionalParams::default());
    }

    #[test]
    fn handles_round_trip() {
        let mut m = DimlessModel::default();
        for name in DIMLESS_NAMES {
            let v = m.param(name).unwrap();
            m.set_param(name, v + 1.0).unwrap();
            assert_eq!(m.param(name).unwrap(), v + 1.0);
        }
        assert!(m.param("v1").is_err());
        let full = FullModel::default();
        for name in DIMENSIONAL_NAMES {
            assert!(full.param(name).is_ok());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn jacobians_agree_across_state_space(v in -80.0f64..40.0, n in 0.0f64..1.0, ca in 0.0f64..1000.0) {
                assert_jacobian_matches(&FullModel::default(), &Vector::<3>::new(v, n, ca));
                assert_jacobian_matches(&ReducedModel::default(), &Vector::<2>::new(v, n));
                assert_jacobian_matches(&DimlessModel::default(), &Vector::<2>::new(v / 80.0, n));
            }

            #[test]
            fn gating_stays_in_the_unit_interval(v in -2.0f64..2.0) {
                let m = DimlessModel::default();
                for g in [m.m_inf(v), m.n_inf(v)] {
                    prop_assert!((0.0..=1.0).contains(&g));
                }
                prop_assert!(m.lambda(v) >= 1.0);
            }

            #[test]
            fn v_nullcline_zeroes_the_voltage_equation(v in -0.9f64..0.9) {
                let m = DimlessModel::default();
                prop_assume!((v - m.p.v_kb).abs() > 1e-2);
                let f = m.eval(&Vector::<2>::new(v, m.v_nullcline(v)));
                prop_assert!(f[0].abs() < 1e-10);
                // and the N-nullcline residual is V' there
                let g = m.eval(&Vector::<2>::new(v, m.n_inf(v)));
                prop_assert!((g[0] - m.nullcline_residual(v)).abs() < 1e-12);
            }

            #[test]
            fn v3_stays_within_its_band(ca in -1e6f64..1e6) {
                let p = DimensionalParams::default();
                let v3 = v3_of_ca(ca, &p);
                prop_assert!((v3 - p.v6).abs() <= p.v5.abs() / 2.0 + 1e-12);
            }

            #[test]
            fn reduced_and_dimless_flows_coincide(v0 in -60.0f64..10.0, n0 in 0.0f64..1.0) {
                use crate::integrate::rk4_integrate;
                let p = DimensionalParams::default();
                let s = scales(&p).unwrap();
                let h = 0.05;
                let red = rk4_integrate(&ReducedModel::new(p), &Vector::<2>::new(v0, n0), 0.0, 20.0 * s.time, h * s.time).unwrap();
                let dim = DimlessModel::new(nondimensionalise(&p).unwrap());
                let nd = rk4_integrate(&dim, &Vector::<2>::new(v0 / s.voltage, n0), 0.0, 20.0, h).unwrap();
                prop_assert_eq!(red.len(), nd.len());
                for (a, b) in red.states.iter().zip(&nd.states) {
                    prop_assert!((a[0] / s.voltage - b[0]).abs() <= 1e-6 * b[0].abs().max(1e-3));
                    prop_assert!((a[1] - b[1]).abs() <= 1e-6);
                }
            }

            #[test]
            fn parameters_round_trip(k in 0usize..DIMLESS_NAMES.len(), x in -1.0f64..1.0) {
                let name = DIMLESS_NAMES[k];
                let m = DimlessModel::default().with_param(name, x).unwrap();
                prop_assert_eq!(m.param(name).unwrap(), x);
            }
        }
    }
}
