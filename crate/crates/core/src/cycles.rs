//! Periodic orbits: single shooting, Floquet multipliers, one-parameter
//! continuation with saddle-node-of-cycles detection, and classification of
//! period blow-up at the end of a branch.

use std::cell::{Cell, RefCell};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::continuation::{self, correct_fixed, Point, Problem, Settings, Stop};
use crate::equilibria::{eig_pairs, newton_equilibrium, seed_equilibria, EquilibriumBranch};
use crate::error::{Result, SolveError};
use crate::events::{BifurcationEvent, EventKind};
use crate::integrate::{Trajectory, DEFAULT_STEP};
use crate::io::{fmt_num, Csv};
use crate::linalg::{self, Stability};
use crate::model::{Matrix, Model, Vector};

// ---------------------------------------------------------------------------
// Flow with variational equations
// ---------------------------------------------------------------------------

/// The time-`T` map and its derivatives, computed on the rescaled interval
/// `s ∈ [0, 1]` with `dx/ds = T f(x)` and a fixed number of RK4 steps.
#[derive(Debug, Clone)]
pub struct Flow<const N: usize> {
    pub end: Vector<N>,
    pub monodromy: Matrix<N>,
    /// `∂x(T)/∂p`, zero when no parameter is freed.
    pub dparam: Vector<N>,
    /// `∫₀ᵀ tr J dt`, integrated alongside the orbit.
    pub trace_integral: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Grid states including both ends, when requested.
    pub path: Option<Vec<Vector<N>>>,
}

pub fn flow<const N: usize, M: Model<N>>(
    m: &M,
    handle: Option<&str>,
    x0: &Vector<N>,
    period: f64,
    steps: usize,
    keep_path: bool,
) -> Result<Flow<N>> {
    if !(period > 0.0 && period.is_finite()) || steps == 0 {
        return Err(SolveError::Degenerate(format!("bad period {period}")));
    }
    let h = 1.0 / steps as f64;
    let fp = |y: &Vector<N>| -> Result<Vector<N>> {
        match handle {
            Some(name) => Ok(m.param_derivative(y, name)?),
            None => Ok(Vector::<N>::zeros()),
        }
    };
    // derivative of the augmented state (y, Φ, ψ, z)
    let rhs = |y: &Vector<N>, phi: &Matrix<N>, psi: &Vector<N>| -> Result<(Vector<N>, Matrix<N>, Vector<N>, f64)> {
        let j = m.jacobian(y);
        Ok((m.eval(y) * period, j * phi * period, (j * psi + fp(y)?) * period, j.trace() * period))
    };
    let mut y = *x0;
    let mut phi = Matrix::<N>::identity();
    let mut psi = Vector::<N>::zeros();
    let mut z = 0.0;
    let (mut v_min, mut v_max) = (y[0], y[0]);
    let mut path = keep_path.then(|| {
        let mut v = Vec::with_capacity(steps + 1);
        v.push(y);
        v
    });
    for k in 0..steps {
        let (a1, b1, c1, d1) = rhs(&y, &phi, &psi)?;
        let (a2, b2, c2, d2) = rhs(&(y + a1 * (h / 2.0)), &(phi + b1 * (h / 2.0)), &(psi + c1 * (h / 2.0)))?;
        let (a3, b3, c3, d3) = rhs(&(y + a2 * (h / 2.0)), &(phi + b2 * (h / 2.0)), &(psi + c2 * (h / 2.0)))?;
        let (a4, b4, c4, d4) = rhs(&(y + a3 * h), &(phi + b3 * h), &(psi + c3 * h))?;
        y += (a1 + (a2 + a3) * 2.0 + a4) * (h / 6.0);
        phi += (b1 + (b2 + b3) * 2.0 + b4) * (h / 6.0);
        psi += (c1 + (c2 + c3) * 2.0 + c4) * (h / 6.0);
        z += (d1 + 2.0 * (d2 + d3) + d4) * (h / 6.0);
        if !y.iter().all(|v| v.is_finite()) || !phi.iter().all(|v| v.is_finite()) {
            return Err(crate::error::IntegrateError::BlowUp { time: (k + 1) as f64 * h * period }.into());
        }
        v_min = v_min.min(y[0]);
        v_max = v_max.max(y[0]);
        if let Some(p) = path.as_mut() {
            p.push(y);
        }
    }
    Ok(Flow { end: y, monodromy: phi, dparam: psi, trace_integral: z, v_min, v_max, path })
}

// ---------------------------------------------------------------------------
// Cycle data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleStability {
    Stable,
    Unstable,
}

impl CycleStability {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleStability::Stable => "stable",
            CycleStability::Unstable => "unstable",
        }
    }
}

/// A converged periodic orbit. One period of states is available through
/// [`sample_orbit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSolution {
    pub param: f64,
    pub period: f64,
    /// Point of the orbit on the section `f₁ = 0` (maximum of the first component).
    pub anchor: Vec<f64>,
    pub v_min: f64,
    pub v_max: f64,
    /// `[re, im]` pairs, the trivial multiplier first.
    pub multipliers: Vec<[f64; 2]>,
    /// `|μ₀ − 1|` for the multiplier closest to one.
    pub trivial_error: f64,
    /// Relative mismatch between `det M` and `exp ∮ tr J`.
    pub liouville_error: f64,
    /// Scaled return-map residual `‖x(T) − x(0)‖∞`.
    pub residual: f64,
    pub stability: CycleStability,
    pub event: Option<EventKind>,
}

impl CycleSolution {
    pub fn anchor<const N: usize>(&self) -> Vector<N> {
        Vector::<N>::from_iterator(self.anchor.iter().copied())
    }

    /// Largest nontrivial multiplier modulus.
    pub fn nontrivial_modulus(&self) -> f64 {
        self.multipliers[1..].iter().map(|m| m[0].hypot(m[1])).fold(0.0, f64::max)
    }

    /// Nontrivial multipliers.
    pub fn nontrivial(&self) -> &[[f64; 2]] {
        &self.multipliers[1..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOptions {
    pub settings: Settings,
    /// RK4 step in the model's own time unit.
    pub step: f64,
    /// Period (model time) beyond which the branch is declared to approach a homoclinic orbit.
    pub t_max: f64,
    /// Scaled amplitude below which the branch is declared to end at a Hopf point.
    pub amp_min: f64,
    pub locate_tol: f64,
    /// Parameter window of the continuation.
    pub range: (f64, f64),
}

impl CycleOptions {
    /// Defaults expressed in the time unit of `m`.
    pub fn for_model<const N: usize, M: Model<N>>(m: &M, range: (f64, f64)) -> Self {
        let ts = m.time_scale();
        Self {
            settings: Settings { tol: 1e-10, h_init: 1e-3, h_min: 1e-7, h_max: 0.05, max_steps: 4000, ..Settings::default() },
            step: DEFAULT_STEP * ts,
            t_max: 1e3 * ts,
            amp_min: 1e-3,
            locate_tol: 1e-6,
            range: (range.0.min(range.1), range.0.max(range.1)),
        }
    }
}

const MIN_STEPS: usize = 200;

/// Slack (scaled) allowed between the anchor and the sampled maximum.
const ANCHOR_TOL: f64 = 1e-8;

pub(crate) fn steps_for(period: f64, step: f64) -> usize {
    ((period / step).ceil() as usize).max(MIN_STEPS)
}

// ---------------------------------------------------------------------------
// Shooting problem
// ---------------------------------------------------------------------------

/// Unknowns `(x₀, ln T, p)`; residual `(x(T) − x₀, f₁(x₀))`, state-scaled.
pub struct CycleProblem<'a, const N: usize, M: Model<N>> {
    pub model: &'a M,
    pub handle: &'a str,
    step: f64,
    steps: Cell<usize>,
    log: RefCell<Vec<Record>>,
}

/// Diagnostics of an accepted point, evaluated with the step count in force
/// when it was accepted.
#[derive(Debug, Clone)]
pub struct Record {
    pub solution: CycleSolution,
    pub fold_test: f64,
    pub steps: usize,
}

impl<'a, const N: usize, M: Model<N>> CycleProblem<'a, N, M> {
    pub fn new(model: &'a M, handle: &'a str, period: f64, step: f64) -> Self {
        Self { model, handle, step, steps: Cell::new(steps_for(period, step)), log: RefCell::new(Vec::new()) }
    }

    pub fn pack(x0: &Vector<N>, period: f64, p: f64) -> DVector<f64> {
        DVector::from_iterator(N + 2, x0.iter().copied().chain([period.ln(), p]))
    }

    pub fn unpack(u: &DVector<f64>) -> (Vector<N>, f64, f64) {
        (Vector::<N>::from_fn(|i, _| u[i]), u[N].exp(), u[N + 1])
    }

    pub fn model_at(&self, u: &DVector<f64>) -> Result<M> {
        Ok(self.model.with_param(self.handle, u[N + 1])?)
    }

    pub fn steps(&self) -> usize {
        self.steps.get()
    }

    pub fn set_steps(&self, steps: usize) {
        self.steps.set(steps);
    }

    fn flow_at(&self, u: &DVector<f64>, with_param: bool, keep_path: bool) -> Result<(M, Flow<N>)> {
        let m = self.model_at(u)?;
        let (x0, t, _) = Self::unpack(u);
        let fl = flow(&m, with_param.then_some(self.handle), &x0, t, self.steps(), keep_path)?;
        Ok((m, fl))
    }

    /// Determinant of the shooting Jacobian with respect to `(x₀, ln T)`;
    /// vanishes at folds of the cycle branch.
    pub fn fold_test(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(fold_determinant::<N>(&self.jacobian(u)?))
    }

    /// Full diagnostics of the cycle at `u`.
    pub fn solution(&self, u: &DVector<f64>) -> Result<CycleSolution> {
        Ok(self.evaluate(u)?.solution)
    }

    /// Solution diagnostics and fold test from a single integration.
    pub fn evaluate(&self, u: &DVector<f64>) -> Result<Record> {
        let (m, fl) = self.flow_at(u, true, false)?;
        let (x0, t, p) = Self::unpack(u);
        let j = self.jacobian_from_flow(&m, u, &fl)?;
        Ok(Record { solution: solution_from_flow(&m, &x0, t, p, &fl), fold_test: fold_determinant::<N>(&j), steps: self.steps() })
    }

    /// Residual, fold test and solution diagnostics from one integration.
    pub fn residual_and_fold(&self, u: &DVector<f64>) -> Result<(DVector<f64>, f64, CycleSolution)> {
        let (m, fl) = self.flow_at(u, true, false)?;
        let (x0, t, p) = Self::unpack(u);
        let j = self.jacobian_from_flow(&m, u, &fl)?;
        let s = m.state_scale();
        let mut r = DVector::zeros(N + 1);
        for i in 0..N {
            r[i] = (fl.end[i] - x0[i]) / s[i];
        }
        r[N] = m.eval(&x0)[0] * m.time_scale() / s[0];
        Ok((r, fold_determinant::<N>(&j), solution_from_flow(&m, &x0, t, p, &fl)))
    }

    /// Diagnostics recorded for each accepted point, in order.
    pub fn take_log(&self) -> Vec<Record> {
        self.log.take()
    }

    fn jacobian_from_flow(&self, m: &M, u: &DVector<f64>, fl: &Flow<N>) -> Result<DMatrix<f64>> {
        let (x0, t, _) = Self::unpack(u);
        let s = m.state_scale();
        let ts = m.time_scale();
        let f_end = m.eval(&fl.end);
        let mut j = DMatrix::zeros(N + 1, N + 2);
        for i in 0..N {
            for c in 0..N {
                j[(i, c)] = (fl.monodromy[(i, c)] - if i == c { 1.0 } else { 0.0 }) / s[i];
            }
            j[(i, N)] = t * f_end[i] / s[i];
            j[(i, N + 1)] = fl.dparam[i] / s[i];
        }
        let jx = m.jacobian(&x0);
        for c in 0..N {
            j[(N, c)] = jx[(0, c)] * ts / s[0];
        }
        j[(N, N + 1)] = m.param_derivative(&x0, self.handle)?[0] * ts / s[0];
        Ok(j)
    }
}

fn fold_determinant<const N: usize>(j: &DMatrix<f64>) -> f64 {
    j.columns(0, N + 1).into_owned().determinant()
}

fn solution_from_flow<const N: usize, M: Model<N>>(m: &M, x0: &Vector<N>, t: f64, p: f64, fl: &Flow<N>) -> CycleSolution {
    let mut mult = linalg::eigenvalues(&fl.monodromy);
    let k = (0..mult.len())
        .min_by(|&a, &b| (mult[a] - 1.0).norm().total_cmp(&(mult[b] - 1.0).norm()))
        .unwrap_or(0);
    let trivial = mult.remove(k);
    let trivial_error = (trivial - 1.0).norm();
    let stable = mult.iter().all(|z| z.norm() < 1.0);
    let mut all = vec![trivial];
    all.extend(mult);
    let det = linalg::det(&fl.monodromy);
    let liou = fl.trace_integral.exp();
    let s = m.state_scale();
    CycleSolution {
        param: p,
        period: t,
        anchor: x0.iter().copied().collect(),
        v_min: fl.v_min,
        v_max: fl.v_max,
        multipliers: eig_pairs(&all),
        trivial_error,
        liouville_error: (det - liou).abs() / liou.max(1e-300).max(det.abs()).max(1e-300),
        residual: (fl.end - x0).component_div(&s).amax(),
        stability: if stable { CycleStability::Stable } else { CycleStability::Unstable },
        event: None,
    }
}

impl<const N: usize, M: Model<N>> Problem for CycleProblem<'_, N, M> {
    fn dim(&self) -> usize {
        N + 2
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, fl) = self.flow_at(u, false, false)?;
        let (x0, _, _) = Self::unpack(u);
        let s = m.state_scale();
        let mut r = DVector::zeros(N + 1);
        for i in 0..N {
            r[i] = (fl.end[i] - x0[i]) / s[i];
        }
        r[N] = m.eval(&x0)[0] * m.time_scale() / s[0];
        Ok(r)
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (m, fl) = self.flow_at(u, true, false)?;
        self.jacobian_from_flow(&m, u, &fl)
    }

    fn scale(&self) -> DVector<f64> {
        let s = self.model.state_scale();
        DVector::from_iterator(N + 2, s.iter().copied().chain([1.0, self.model.param_scale(self.handle)]))
    }

    /// The anchor must remain the global maximum of the first component.
    fn admissible(&self, u: &DVector<f64>) -> bool {
        self.flow_at(u, false, false).is_ok_and(|(m, fl)| u[0] >= fl.v_max - ANCHOR_TOL * m.state_scale()[0])
    }

    fn accepted(&self, u: &DVector<f64>) {
        if let Ok(r) = self.evaluate(u) {
            self.log.borrow_mut().push(r);
        }
        let want = steps_for(u[N].exp(), self.step);
        let have = self.steps.get();
        if want * 2 > have * 3 || want * 2 < have {
            self.steps.set(want);
        }
    }
}

// ---------------------------------------------------------------------------
// Finding a single cycle
// ---------------------------------------------------------------------------

/// Anchor guess on a simulated orbit: the maximum of the first component over
/// the last `period` of the trajectory.
fn anchor_guess<const N: usize>(traj: &Trajectory<N>, period: f64) -> Vector<N> {
    let t_end = *traj.times.last().unwrap();
    traj.times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= t_end - period)
        .max_by(|a, b| a.1[0].total_cmp(&b.1[0]))
        .map(|(_, x)| *x)
        .unwrap_or_else(|| *traj.states.last().unwrap())
}

/// Refines a periodic orbit by single shooting, starting from a simulated
/// trajectory that covers at least one period.
pub fn find_cycle<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    seed: &Trajectory<N>,
    period_guess: f64,
    opts: &CycleOptions,
) -> Result<CycleSolution> {
    let x0 = anchor_guess(seed, period_guess);
    refine_cycle(model, handle, &x0, period_guess, opts)
}

/// Single-shooting Newton at fixed parameter from an anchor guess.
pub fn refine_cycle<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    x0: &Vector<N>,
    period_guess: f64,
    opts: &CycleOptions,
) -> Result<CycleSolution> {
    let p = model.param(handle)?;
    let prob = CycleProblem::new(model, handle, period_guess, opts.step);
    let u0 = CycleProblem::<N, M>::pack(x0, period_guess, p);
    let (u, _) = correct_fixed(&prob, &u0, N + 1, opts.settings.tol, 30)?;
    let sol = prob.solution(&u)?;
    if sol.v_max - sol.v_min < 1e-6 * model.state_scale()[0] {
        return Err(SolveError::Degenerate("shooting collapsed onto an equilibrium".into()));
    }
    Ok(sol)
}

/// One period of the orbit at `samples` equally spaced times (endpoint excluded).
pub fn sample_orbit<const N: usize, M: Model<N>>(m: &M, cycle: &CycleSolution, samples: usize, step: f64) -> Result<Vec<Vector<N>>> {
    let per = steps_for(cycle.period, step).div_ceil(samples).max(1);
    let fl = flow(m, None, &cycle.anchor(), cycle.period, per * samples, true)?;
    let path = fl.path.unwrap();
    Ok((0..samples).map(|k| path[k * per]).collect())
}

/// Orbit dump: `t,<state names>` for one period at `samples` points.
pub fn orbit_csv<const N: usize, M: Model<N>>(m: &M, cycle: &CycleSolution, samples: usize, step: f64) -> Result<String> {
    let pts = sample_orbit(m, cycle, samples, step)?;
    let traj = Trajectory {
        times: (0..samples).map(|k| cycle.period * k as f64 / samples as f64).collect(),
        states: pts,
        step: cycle.period / samples as f64,
    };
    Ok(traj.to_csv(&m.state_names()))
}

// ---------------------------------------------------------------------------
// Continuation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    /// The end where a single-direction run started.
    Seed,
    ParamLimit,
    /// Period exceeded the blow-up threshold.
    LargePeriod,
    /// Amplitude shrank to zero; `param` is the extrapolated Hopf location.
    Hopf { param: f64 },
    /// The shooting corrector failed (typically near a homoclinic orbit).
    StepFailure,
    /// A nontrivial multiplier exceeded [`MAX_MULTIPLIER`].
    IllConditioned,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleBranch {
    pub handle: String,
    pub points: Vec<CycleSolution>,
    pub events: Vec<BifurcationEvent>,
    /// How the branch ends at its first and last point.
    pub ends: [Termination; 2],
}

impl CycleBranch {
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::with_header(&["param", "period", "v_min", "v_max", "mult_re", "mult_im", "stability", "event"]);
        for c in &self.points {
            // dominant nontrivial multiplier
            let m = c.nontrivial().iter().max_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1]))).copied().unwrap_or([f64::NAN, 0.0]);
            csv.row_str(&[
                fmt_num(c.param),
                fmt_num(c.period),
                fmt_num(c.v_min),
                fmt_num(c.v_max),
                fmt_num(m[0]),
                fmt_num(m[1]),
                c.stability.as_str().to_string(),
                c.event.map(|k| k.as_str().to_string()).unwrap_or_default(),
            ]);
        }
        csv.into_string()
    }

    pub fn last(&self) -> &CycleSolution {
        self.points.last().expect("branches are never empty")
    }

    /// Parameter interval covered by the branch.
    pub fn param_span(&self) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.param), b.max(c.param)))
    }
}

/// Largest nontrivial multiplier modulus accepted before single shooting is
/// declared too ill-conditioned to continue.
pub const MAX_MULTIPLIER: f64 = 1e8;

/// Parameter drift (relative to the parameter scale) over eight accepted
/// points below which a growing-period branch is taken to have converged
/// onto a homoclinic orbit.
pub const STALL_PARAM: f64 = 1e-8;

/// Squared scaled amplitude.
pub(crate) fn amplitude_sq(c: &CycleSolution, v_scale: f64) -> f64 {
    ((c.v_max - c.v_min) / v_scale).powi(2)
}

/// Parameter where the squared amplitude extrapolates to zero, quadratic in
/// the last three points.
fn extrapolate_hopf(amps: &[(f64, f64)]) -> f64 {
    match amps {
        [.., (p0, q0), (p1, q1), (p2, q2)] if q0 != q1 && q1 != q2 && q0 != q2 => {
            // Lagrange interpolation of p(q) at q = 0
            p0 * q1 * q2 / ((q0 - q1) * (q0 - q2)) + p1 * q0 * q2 / ((q1 - q0) * (q1 - q2)) + p2 * q0 * q1 / ((q2 - q0) * (q2 - q1))
        }
        [.., (p1, q1), (p2, q2)] if q1 != q2 => p2 - q2 * (p2 - p1) / (q2 - q1),
        [.., (p, _)] => *p,
        [] => f64::NAN,
    }
}

/// Continues a cycle in one parameter (direction by sign), stopping at the
/// parameter limits, at a period blow-up, at a vanishing amplitude or when
/// the shooting corrector fails.
pub fn continue_cycle<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    start: &CycleSolution,
    direction: f64,
    opts: &CycleOptions,
) -> Result<CycleBranch> {
    let m0 = model.with_param(handle, start.param)?;
    let prob = CycleProblem::new(&m0, handle, start.period, opts.step);
    let u0 = CycleProblem::<N, M>::pack(&start.anchor(), start.period, start.param);
    let (lo, hi) = opts.range;
    let v_scale = model.state_scale()[0];
    let p_scale = model.param_scale(handle);
    let mut hint = DVector::zeros(N + 2);
    hint[N + 1] = direction.signum();
    let mut records = vec![prob.evaluate(&u0)?];
    let mut amps = vec![(start.param, amplitude_sq(&records[0].solution, v_scale))];
    let mut reason = None;
    let run = continuation::trace(&prob, &u0, &hint, &opts.settings, |pt| {
        let (_, t, p) = CycleProblem::<N, M>::unpack(&pt.u);
        if p < lo || p > hi {
            reason = Some(Termination::ParamLimit);
            return true;
        }
        if t > opts.t_max {
            reason = Some(Termination::LargePeriod);
            return true;
        }
        let log = prob.log.borrow();
        let Some(rec) = log.last() else { return false };
        if rec.solution.nontrivial_modulus() > MAX_MULTIPLIER {
            reason = Some(Termination::IllConditioned);
            return true;
        }
        let q = amplitude_sq(&rec.solution, v_scale);
        amps.push((p, q));
        if let [.., (a, _), _, _, _, _, _, _, (b, _)] = amps.as_slice() {
            if (b - a).abs() < STALL_PARAM * p_scale && t > 2.0 * start.period {
                reason = Some(Termination::LargePeriod);
                return true;
            }
        }
        if q < opts.amp_min * opts.amp_min {
            reason = Some(Termination::Hopf { param: extrapolate_hopf(&amps) });
            return true;
        }
        false
    })?;
    let log = prob.take_log();
    if log.len() + 1 != run.points.len() {
        return Err(SolveError::Degenerate("cycle diagnostics failed at an accepted point".into()));
    }
    let mut points = run.points;
    records.extend(log);
    let termination = match (run.stop, reason) {
        (Stop::Requested, Some(r)) => r,
        (Stop::StepFailure, _) => Termination::StepFailure,
        _ => Termination::MaxSteps,
    };
    if matches!(termination, Termination::ParamLimit | Termination::IllConditioned) && points.len() >= 2 {
        let beyond = points.pop().unwrap();
        records.pop();
        if termination == Termination::ParamLimit {
            let limit = if beyond.u[N + 1] > hi { hi } else { lo };
            if let Some((pt, rec)) = run_last_beyond(&prob, &points, limit, opts) {
                points.push(pt);
                records.push(rec);
            }
        }
    }
    assemble_cycle_branch(&prob, &points, &records, termination, opts)
}

/// Re-runs the final step to the parameter limit `limit` and pins it there.
fn run_last_beyond<const N: usize, M: Model<N>>(
    prob: &CycleProblem<'_, N, M>,
    points: &[Point],
    limit: f64,
    opts: &CycleOptions,
) -> Option<(Point, Record)> {
    let a = points.last()?;
    let mut u = a.u.clone();
    u[N + 1] = limit;
    let (u, _) = correct_fixed(prob, &u, N + 1, opts.settings.tol, 30).ok()?;
    let rec = prob.evaluate(&u).ok()?;
    Some((Point { u, tangent: a.tangent.clone(), iterations: 0 }, rec))
}

fn assemble_cycle_branch<const N: usize, M: Model<N>>(
    prob: &CycleProblem<'_, N, M>,
    points: &[Point],
    records: &[Record],
    termination: Termination,
    opts: &CycleOptions,
) -> Result<CycleBranch> {
    let mut out = Vec::with_capacity(points.len());
    let mut events = Vec::new();
    for i in 0..points.len() {
        out.push(records[i].solution.clone());
        let Some(next) = records.get(i + 1) else { break };
        let (ga, gb) = (records[i].fold_test, next.fold_test);
        if ga == 0.0 || ga.signum() == gb.signum() {
            continue;
        }
        prob.steps.set(records[i].steps);
        let Ok(loc) = continuation::locate(prob, &points[i], &points[i + 1], |u| prob.fold_test(u), N + 1, opts.locate_tol, &opts.settings) else {
            continue;
        };
        let mut sol = prob.solution(&loc.u)?;
        sol.event = Some(EventKind::SNC);
        let mu = sol.nontrivial().iter().min_by(|a, b| (a[0] - 1.0).hypot(a[1]).total_cmp(&(b[0] - 1.0).hypot(b[1]))).copied();
        let mut ev = BifurcationEvent::new(EventKind::SNC, vec![sol.param], sol.anchor.clone(), format!("cycles:{}:fold", prob.handle))
            .with("period", sol.period)
            .with("amplitude", sol.v_max - sol.v_min);
        if let Some(mu) = mu {
            ev = ev.with("multiplier_re", mu[0]).with("multiplier_im", mu[1]);
        }
        events.push(ev);
        out.push(sol);
    }
    Ok(CycleBranch { handle: prob.handle.to_string(), points: out, events, ends: [Termination::Seed, termination] })
}

/// Continues in both directions from `start` and joins the two runs into one
/// branch ordered along the curve.
pub fn continue_cycle_both<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    start: &CycleSolution,
    opts: &CycleOptions,
) -> Result<CycleBranch> {
    let fwd = continue_cycle(model, handle, start, 1.0, opts)?;
    let bwd = continue_cycle(model, handle, start, -1.0, opts)?;
    let mut points: Vec<CycleSolution> = bwd.points.into_iter().rev().collect();
    points.extend(fwd.points.into_iter().skip(1));
    let mut events = bwd.events;
    events.extend(fwd.events);
    Ok(CycleBranch { handle: handle.to_string(), points, events, ends: [bwd.ends[1], fwd.ends[1]] })
}

// ---------------------------------------------------------------------------
// Termination analysis
// ---------------------------------------------------------------------------

/// Parameter tolerance, relative to the parameter scale, for matching a
/// period blow-up with a fold.
pub const SNIC_PARAM_TOL: f64 = 1e-4;
/// State distance (scaled) within which the orbit must pass the saddle-node.
pub const SNIC_DIST_TOL: f64 = 1e-3;

/// Smallest scaled distance between an orbit and a state.
pub fn orbit_distance<const N: usize, M: Model<N>>(m: &M, cycle: &CycleSolution, x: &Vector<N>, step: f64) -> Result<f64> {
    let s = m.state_scale();
    let fl = flow(m, None, &cycle.anchor(), cycle.period, steps_for(cycle.period, step).max(2000), true)?;
    Ok(fl.path.unwrap().iter().map(|y| (y - x).component_div(&s).norm()).fold(f64::INFINITY, f64::min))
}

/// Classifies the large-period end of a cycle branch: SNIC when a fold of the
/// equilibrium branches lies within [`SNIC_PARAM_TOL`] and the orbit passes
/// the saddle-node, HC when the orbit approaches a hyperbolic saddle, and an
/// unclassified blow-up otherwise. The HC parameter is refined by the
/// splitting function in the planar case.
pub fn detect_homoclinic_termination<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    tail: &CycleSolution,
    equilibria: &[EquilibriumBranch],
    opts: &CycleOptions,
) -> Result<BifurcationEvent> {
    let m = model.with_param(handle, tail.param)?;
    let source = format!("cycles:{handle}:blowup");
    let param_tol = SNIC_PARAM_TOL * model.param_scale(handle);
    for b in equilibria {
        for ev in b.events_of(EventKind::SN) {
            if (ev.param() - tail.param).abs() <= param_tol {
                let x = Vector::<N>::from_iterator(ev.state.iter().copied());
                let d = orbit_distance(&m, tail, &x, opts.step)?;
                if d <= SNIC_DIST_TOL {
                    let mut out = ev.clone();
                    out.kind = EventKind::SNIC;
                    out.source = source;
                    return Ok(out.with("orbit_distance", d).with("period", tail.period));
                }
            }
        }
    }
    // nearest saddle to the orbit
    let orbit = sample_orbit(&m, tail, 2048, opts.step)?;
    let s = m.state_scale();
    let mut best: Option<(f64, Vector<N>)> = None;
    for x in seed_equilibria(&m) {
        let (_, st) = linalg::classify_point(&m.jacobian(&x));
        if st != Stability::Saddle {
            continue;
        }
        let d = orbit.iter().map(|y| (y - x).component_div(&s).norm()).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, x));
        }
    }
    let Some((d, saddle)) = best else {
        return Ok(BifurcationEvent::new(EventKind::Blowup, vec![tail.param], tail.anchor.clone(), source)
            .with("period", tail.period));
    };
    let mut param = tail.param;
    let mut refined = 0.0;
    if N == 2 {
        if let Ok(p) = crate::homoclinic::refine_homoclinic(model, handle, tail, &saddle, opts) {
            param = p;
            refined = 1.0;
        }
    }
    let ms = model.with_param(handle, param)?;
    let saddle = newton_equilibrium(&ms, &saddle).map(|r| r.state).unwrap_or(saddle);
    let (sigma, lu, ls) = saddle_quantity(&ms, &saddle);
    Ok(BifurcationEvent::new(EventKind::HC, vec![param], saddle.iter().copied().collect(), source)
        .with("sigma", sigma)
        .with("lambda_u", lu)
        .with("lambda_s", ls)
        .with("orbit_distance", d)
        .with("period", tail.period)
        .with("splitting_refined", refined))
}

/// Least-squares slope of `ln T` against `ln |p − p_c|` over the branch
/// points whose period exceeds `min_ratio` times the branch minimum, i.e.
/// the blow-up tail near a SNIC or homoclinic point `p_c`. Returns the slope
/// and the number of points used.
pub fn period_scaling_exponent(branch: &CycleBranch, p_c: f64, min_ratio: f64) -> Option<(f64, usize)> {
    let t_min = branch.points.iter().map(|c| c.period).fold(f64::INFINITY, f64::min);
    let (xs, ys): (Vec<f64>, Vec<f64>) = branch
        .points
        .iter()
        .filter(|c| c.period > min_ratio * t_min && c.param != p_c)
        .map(|c| ((c.param - p_c).abs().ln(), c.period.ln()))
        .unzip();
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| (sxy / sxx, n))
}

/// Saddle quantity `σ = λᵤ + λₛ` (leading stable eigenvalue) in scaled time,
/// with the two eigenvalues.
pub fn saddle_quantity<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>) -> (f64, f64, f64) {
    let e = linalg::eigenvalues(&crate::equilibria::scaled_jacobian(m, x));
    let lu = e.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let ls = e.iter().map(|z| z.re).filter(|r| *r < 0.0).fold(f64::NEG_INFINITY, f64::max);
    (lu + ls, lu, ls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ModelError;
    use crate::integrate::{classify_with_window, Budget, Classification};
    use crate::model::{DimlessModel, VectorField};

    /// Hopf normal form with radius √β and angular speed ω: the limit cycle
    /// has period 2π/ω exactly.
    #[derive(Clone)]
    struct Harmonic {
        beta: f64,
        omega: f64,
    }
    impl VectorField<2> for Harmonic {
        fn eval(&self, x: &Vector<2>) -> Vector<2> {
            let r2 = x.norm_squared();
            Vector::<2>::new(x[0] * (self.beta - r2) - self.omega * x[1], x[1] * (self.beta - r2) + self.omega * x[0])
        }
    }
    impl Model<2> for Harmonic {
        fn jacobian(&self, x: &Vector<2>) -> Matrix<2> {
            let (a, b) = (x[0], x[1]);
            let r2 = a * a + b * b;
            Matrix::<2>::new(self.beta - r2 - 2.0 * a * a, -2.0 * a * b - self.omega, -2.0 * a * b + self.omega, self.beta - r2 - 2.0 * b * b)
        }
        fn state_names(&self) -> [&'static str; 2] {
            ["x", "y"]
        }
        fn param_names(&self) -> &'static [&'static str] {
            &["beta"]
        }
        fn param(&self, name: &str) -> std::result::Result<f64, ModelError> {
            match name {
                "beta" => Ok(self.beta),
                _ => Err(ModelError::UnknownParameter(name.into())),
            }
        }
        fn set_param(&mut self, name: &str, value: f64) -> std::result::Result<(), ModelError> {
            match name {
                "beta" => {
                    self.beta = value;
                    Ok(())
                }
                _ => Err(ModelError::UnknownParameter(name.into())),
            }
        }
    }

    #[test]
    fn harmonic_cycle_period_is_exact() {
        let m = Harmonic { beta: 1.0, omega: 2.0 };
        let opts = CycleOptions { step: 0.005, ..CycleOptions::for_model(&m, (0.0, 2.0)) };
        let c = refine_cycle(&m, "beta", &Vector::<2>::new(1.05, 0.1), 3.0, &opts).unwrap();
        assert!((c.period - std::f64::consts::PI).abs() < 1e-8, "{}", c.period);
        assert!(c.trivial_error < 1e-6);
        // nontrivial multiplier exp(-2β T)
        let mu = c.nontrivial()[0][0];
        assert!((mu - (-2.0 * std::f64::consts::PI).exp()).abs() < 1e-6, "{mu}");
        assert_eq!(c.stability, CycleStability::Stable);
        assert!(c.residual < 1e-8);
    }

    #[test]
    fn harmonic_branch_ends_at_hopf() {
        let m = Harmonic { beta: 1.0, omega: 1.0 };
        let opts = CycleOptions { step: 0.01, ..CycleOptions::for_model(&m, (-1.0, 2.0)) };
        let c = refine_cycle(&m, "beta", &Vector::<2>::new(1.0, 0.0), 6.0, &opts).unwrap();
        let b = continue_cycle(&m, "beta", &c, -1.0, &opts).unwrap();
        match b.ends[1] {
            Termination::Hopf { param } => assert!(param.abs() < 1e-4, "{param}"),
            t => panic!("{t:?}"),
        }
    }

    #[test]
    fn default_cycle_matches_simulation() {
        let m = DimlessModel::default();
        let (rep, win) = classify_with_window(&m, &Vector::<2>::zeros(), &Budget::default());
        assert_eq!(rep.classification, Classification::Periodic);
        let opts = CycleOptions::for_model(&m, (-0.7, 0.1));
        let c = find_cycle(&m, "v1b", &win.unwrap(), rep.period.unwrap(), &opts).unwrap();
        assert!((c.period / rep.period.unwrap() - 1.0).abs() < 5e-3, "{} vs {:?}", c.period, rep.period);
        assert!(c.residual <= 1e-8);
        assert!(c.trivial_error <= 1e-4, "{}", c.trivial_error);
        assert!(c.liouville_error <= 1e-6, "{}", c.liouville_error);
        let mu = c.nontrivial()[0][0];
        assert!(mu > 0.0 && mu < 1.0);
    }
}
