//! Equilibria: Newton solves, one-parameter continuation, stability labels and
//! localisation of folds and Hopf points.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::continuation::{self, correct_fixed, Point, Problem, Settings, Stop};
use crate::error::{Result, SolveError};
use crate::events::{BifurcationEvent, EventKind};
use crate::io::{fmt_num, Csv};
use crate::linalg::{self, Stability};
use crate::model::{Matrix, Model, Vector};

/// `f` divided by the state scale and multiplied by the model time scale.
pub fn scaled_rhs<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>) -> Vector<N> {
    m.eval(x).component_div(&m.state_scale()) * m.time_scale()
}

/// Jacobian of the dimensionless system `x̃' = ts·D⁻¹ f(D x̃)`; similar to the
/// raw Jacobian up to the factor `ts`.
pub fn scaled_jacobian<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>) -> Matrix<N> {
    let s = m.state_scale();
    let ts = m.time_scale();
    let j = m.jacobian(x);
    Matrix::<N>::from_fn(|r, c| j[(r, c)] * s[c] / s[r] * ts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport<const N: usize> {
    pub state: Vector<N>,
    pub iterations: usize,
    /// Scaled residual `‖·‖∞` before the first and after every iteration.
    pub residuals: Vec<f64>,
}

pub const NEWTON_MAX_ITER: usize = 50;

/// Damped Newton on `f(x) = 0` with the analytic Jacobian.
pub fn newton_equilibrium<const N: usize, M: Model<N>>(m: &M, guess: &Vector<N>) -> Result<NewtonReport<N>> {
    let tol = m.residual_tol();
    let norm = |x: &Vector<N>| scaled_rhs(m, x).amax();
    let mut x = *guess;
    let mut r = norm(&x);
    let mut residuals = vec![r];
    for it in 0..=NEWTON_MAX_ITER {
        if r <= tol {
            return Ok(NewtonReport { state: x, iterations: it, residuals });
        }
        if it == NEWTON_MAX_ITER || !r.is_finite() {
            break;
        }
        let s = m.state_scale();
        let j = scaled_jacobian(m, &x);
        let dz = linalg::solve_small(&j, &(-scaled_rhs(m, &x)))?;
        if !dz.iter().all(|v| v.is_finite()) {
            return Err(SolveError::Singular);
        }
        let dx = dz.component_mul(&s);
        let mut lambda = 1.0;
        let mut trial = x + dx;
        let mut rt = norm(&trial);
        for _ in 0..12 {
            if rt.is_finite() && rt < r {
                break;
            }
            lambda /= 2.0;
            trial = x + dx * lambda;
            rt = norm(&trial);
        }
        x = trial;
        r = rt;
        residuals.push(r);
    }
    Err(SolveError::NoConvergence { iterations: NEWTON_MAX_ITER, residual: r })
}

/// Initial guesses spanning the physiological box: the first component over
/// ±1.2 of its scale, gating variables over (0, 1), calcium over [0, 3·Kd].
fn seed_grid<const N: usize>(scale: &Vector<N>) -> Vec<Vector<N>> {
    let v: Vec<f64> = (0..49).map(|i| (-1.2 + 2.4 * i as f64 / 48.0) * scale[0]).collect();
    let n = [0.02, 0.5, 0.98];
    let ca = [0.0, 0.1, 0.3, 1.0, 3.0];
    let mut out = Vec::new();
    for &vi in &v {
        for &ni in &n {
            if N == 2 {
                out.push(Vector::<N>::from_fn(|k, _| if k == 0 { vi } else { ni }));
            } else {
                for &c in &ca {
                    out.push(Vector::<N>::from_fn(|k, _| match k {
                        0 => vi,
                        1 => ni,
                        _ => c * scale[k],
                    }));
                }
            }
        }
    }
    out
}

fn scaled_dist<const N: usize>(a: &Vector<N>, b: &Vector<N>, s: &Vector<N>) -> f64 {
    (a - b).component_div(s).amax()
}

/// All equilibria reachable from the model's guesses (or a coarse grid of
/// Newton starts), restricted to admissible states, deduplicated
/// at scaled distance 10⁻⁶ and sorted by the first state component.
pub fn seed_equilibria<const N: usize, M: Model<N>>(m: &M) -> Vec<Vector<N>> {
    let s = m.state_scale();
    let mut guesses = m.equilibrium_guesses();
    if guesses.is_empty() {
        guesses = seed_grid(&s);
    }
    let mut out: Vec<Vector<N>> = Vec::new();
    for g in guesses {
        if let Ok(rep) = newton_equilibrium(m, &g) {
            if m.admissible(&rep.state) && !out.iter().any(|x| scaled_dist(x, &rep.state, &s) < 1e-6) {
                out.push(rep.state);
            }
        }
    }
    out.sort_by(|a, b| a[0].total_cmp(&b[0]));
    out
}

// ---------------------------------------------------------------------------
// Branch data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub param: f64,
    pub state: Vec<f64>,
    /// `[re, im]` pairs sorted by descending real part.
    pub eigenvalues: Vec<[f64; 2]>,
    pub stability: Stability,
    /// `det J` of the scaled Jacobian.
    pub fold_test: f64,
    /// Trace (2D) or Hurwitz quantity (3D) of the scaled Jacobian.
    pub hopf_test: f64,
    pub event: Option<EventKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumBranch {
    pub handle: String,
    pub state_names: Vec<String>,
    pub points: Vec<BranchPoint>,
    pub events: Vec<BifurcationEvent>,
    /// True when the corrector failed before reaching the parameter limits.
    pub truncated: bool,
}

impl EquilibriumBranch {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &BifurcationEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let n = self.state_names.len();
        let mut header = vec!["param".to_string()];
        header.extend(self.state_names.iter().cloned());
        for k in 1..=n {
            header.push(format!("re_eig{k}"));
            header.push(format!("im_eig{k}"));
        }
        header.push("stability".into());
        header.push("event".into());
        let mut csv = Csv::with_header(&header);
        for p in &self.points {
            let mut row = vec![fmt_num(p.param)];
            row.extend(p.state.iter().map(|v| fmt_num(*v)));
            for e in &p.eigenvalues {
                row.push(fmt_num(e[0]));
                row.push(fmt_num(e[1]));
            }
            row.push(p.stability.as_str().to_string());
            row.push(p.event.map(|k| k.as_str().to_string()).unwrap_or_default());
            csv.row_str(&row);
        }
        csv.into_string()
    }
}

pub(crate) fn eig_pairs(e: &[Complex64]) -> Vec<[f64; 2]> {
    e.iter().map(|z| [z.re, z.im]).collect()
}

/// Builds a branch point (eigenvalues, label, test functions) at `(x, p)`.
pub fn branch_point<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>, param: f64) -> BranchPoint {
    let (eigs, stability) = linalg::classify_point(&m.jacobian(x));
    let js = scaled_jacobian(m, x);
    BranchPoint {
        param,
        state: x.iter().copied().collect(),
        eigenvalues: eig_pairs(&eigs),
        stability,
        fold_test: linalg::det(&js),
        hopf_test: linalg::hopf_test(&js),
        event: None,
    }
}

// ---------------------------------------------------------------------------
// Continuation problem
// ---------------------------------------------------------------------------

/// `f(x; p) = 0` in the unknowns `(x, p)`.
pub struct EquilibriumProblem<'a, const N: usize, M: Model<N>> {
    pub model: &'a M,
    pub handle: &'a str,
}

impl<const N: usize, M: Model<N>> EquilibriumProblem<'_, N, M> {
    pub fn model_at(&self, u: &DVector<f64>) -> Result<M> {
        Ok(self.model.with_param(self.handle, u[N])?)
    }

    pub fn state(u: &DVector<f64>) -> Vector<N> {
        Vector::<N>::from_fn(|i, _| u[i])
    }

    pub fn pack(x: &Vector<N>, p: f64) -> DVector<f64> {
        DVector::from_iterator(N + 1, x.iter().copied().chain(std::iter::once(p)))
    }
}

impl<const N: usize, M: Model<N>> Problem for EquilibriumProblem<'_, N, M> {
    fn dim(&self) -> usize {
        N + 1
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.model_at(u)?;
        let r = scaled_rhs(&m, &Self::state(u));
        Ok(DVector::from_iterator(N, r.iter().copied()))
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = self.model_at(u)?;
        let x = Self::state(u);
        let s = m.state_scale();
        let ts = m.time_scale();
        let j = m.jacobian(&x);
        let fp = m.param_derivative(&x, self.handle)?;
        Ok(DMatrix::from_fn(N, N + 1, |r, c| if c < N { j[(r, c)] } else { fp[r] } * ts / s[r]))
    }

    fn scale(&self) -> DVector<f64> {
        let s = self.model.state_scale();
        DVector::from_iterator(N + 1, s.iter().copied().chain(std::iter::once(self.model.param_scale(self.handle))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchOptions {
    pub settings: Settings,
    /// Bracket width in the free parameter for localised events.
    pub locate_tol: f64,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self { settings: Settings::default(), locate_tol: 1e-8 }
    }
}

impl BranchOptions {
    fn for_model<const N: usize, M: Model<N>>(&self, m: &M) -> Settings {
        Settings { tol: self.settings.tol.max(m.residual_tol()), ..self.settings }
    }
}

/// `|trace|` below which a fold is flagged as a Bogdanov–Takens candidate.
pub const BT_TRACE_TOL: f64 = 1e-6;

fn fold_test<const N: usize, M: Model<N>>(prob: &EquilibriumProblem<'_, N, M>, u: &DVector<f64>) -> Result<f64> {
    let m = prob.model_at(u)?;
    Ok(linalg::det(&scaled_jacobian(&m, &EquilibriumProblem::<N, M>::state(u))))
}

fn hopf_fn<const N: usize, M: Model<N>>(prob: &EquilibriumProblem<'_, N, M>, u: &DVector<f64>) -> Result<f64> {
    let m = prob.model_at(u)?;
    Ok(linalg::hopf_test(&scaled_jacobian(&m, &EquilibriumProblem::<N, M>::state(u))))
}

/// Builds the event record for a located fold or Hopf point; `None` for a
/// neutral saddle (trace zero with real eigenvalues).
pub fn classify_located<const N: usize, M: Model<N>>(
    prob: &EquilibriumProblem<'_, N, M>,
    u: &DVector<f64>,
    kind: EventKind,
    source: &str,
) -> Result<Option<BifurcationEvent>> {
    let m = prob.model_at(u)?;
    let x = EquilibriumProblem::<N, M>::state(u);
    let js = scaled_jacobian(&m, &x);
    let state: Vec<f64> = x.iter().copied().collect();
    match kind {
        EventKind::SN => {
            let tr = js.trace();
            let mut ev = BifurcationEvent::new(EventKind::SN, vec![u[N]], state, source)
                .with("trace", tr)
                .with("det", linalg::det(&js));
            if tr.abs() < BT_TRACE_TOL {
                ev = ev.with("bt_candidate", 1.0);
            }
            Ok(Some(ev))
        }
        EventKind::HB => {
            let Some(w) = linalg::hopf_frequency(&js) else {
                return Ok(None);
            };
            let mut ev = BifurcationEvent::new(EventKind::HB, vec![u[N]], state, source)
                .with("omega", w / m.time_scale())
                .with("omega_scaled", w);
            if let Ok(l1) = lyapunov_coefficient(&m, &x) {
                ev = ev.with("l1", l1);
            }
            Ok(Some(ev))
        }
        _ => Err(SolveError::Degenerate(format!("{kind} is not an equilibrium test-function event"))),
    }
}

/// Continues the equilibrium through `start` (at the model's current value
/// of `handle`) in the direction `sign(direction)` of the parameter, until
/// the parameter leaves `range`.
pub fn continue_equilibrium<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    start: &Vector<N>,
    direction: f64,
    range: (f64, f64),
    opts: &BranchOptions,
) -> Result<EquilibriumBranch> {
    let run = trace_equilibrium(model, handle, start, direction, range, opts)?;
    let prob = EquilibriumProblem { model, handle };
    assemble_branch(&prob, &[run], opts)
}

/// One traced run together with its stop reason.
pub struct RawRun {
    pub points: Vec<Point>,
    pub stop: Stop,
}

fn trace_equilibrium<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    start: &Vector<N>,
    direction: f64,
    range: (f64, f64),
    opts: &BranchOptions,
) -> Result<RawRun> {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let settings = opts.for_model(model);
    let prob = EquilibriumProblem { model, handle };
    let mut p0 = model.param(handle)?;
    let mut u0 = EquilibriumProblem::<N, M>::pack(start, p0);
    let (mut u, _) = correct_fixed(&prob, &u0, N, settings.tol, NEWTON_MAX_ITER)?;
    if fold_test(&prob, &u)?.abs() < 1e-10 {
        // sitting on a fold: nudge the parameter so the tangent is well defined
        p0 += 1e-6 * model.param_scale(handle) * direction.signum();
        u0 = u.clone();
        u0[N] = p0;
        u = correct_fixed(&prob, &u0, N, settings.tol, NEWTON_MAX_ITER)?.0;
    }
    let mut hint = DVector::zeros(N + 1);
    hint[N] = if direction < 0.0 { -1.0 } else { 1.0 };
    let run = continuation::trace(&prob, &u, &hint, &settings, |pt| pt.u[N] < lo || pt.u[N] > hi)?;
    let mut points = run.points;
    if run.stop == Stop::Requested && points.len() >= 2 {
        // replace the overshooting point by the point exactly on the limit
        let b = points.pop().unwrap();
        let a = points.last().unwrap().clone();
        let limit = if b.u[N] > hi { hi } else { lo };
        if let Ok(pt) = continuation::locate(&prob, &a, &b, |u| Ok(u[N] - limit), N, 1e-12, &settings) {
            let mut pt = pt;
            pt.u[N] = limit;
            if let Ok((uc, _)) = correct_fixed(&prob, &pt.u, N, settings.tol, NEWTON_MAX_ITER) {
                pt.u = uc;
            }
            points.push(pt);
        }
    }
    Ok(RawRun { points, stop: run.stop })
}

/// Locates test-function zeros along traced runs and builds the branch.
fn assemble_branch<const N: usize, M: Model<N>>(
    prob: &EquilibriumProblem<'_, N, M>,
    runs: &[RawRun],
    opts: &BranchOptions,
) -> Result<EquilibriumBranch> {
    let settings = opts.for_model(prob.model);
    let source_fold = format!("equilibria:{}:det", prob.handle);
    let source_hopf = format!("equilibria:{}:hopf", prob.handle);
    let mut points = Vec::new();
    let mut events = Vec::new();
    let mut truncated = false;
    for run in runs {
        truncated |= run.stop == Stop::StepFailure;
        let tests: Vec<(f64, f64)> =
            run.points.iter().map(|pt| Ok((fold_test(prob, &pt.u)?, hopf_fn(prob, &pt.u)?))).collect::<Result<_>>()?;
        for (i, pt) in run.points.iter().enumerate() {
            let m = prob.model_at(&pt.u)?;
            points.push(branch_point(&m, &EquilibriumProblem::<N, M>::state(&pt.u), pt.u[N]));
            if i + 1 == run.points.len() {
                break;
            }
            let (a, b) = (pt, &run.points[i + 1]);
            let mut found: Vec<(f64, BranchPoint, BifurcationEvent)> = Vec::new();
            let checks = [
                (tests[i].0, tests[i + 1].0, EventKind::SN),
                (tests[i].1, tests[i + 1].1, EventKind::HB),
            ];
            for (ga, gb, kind) in checks {
                if ga.signum() == gb.signum() || ga == 0.0 {
                    continue;
                }
                let test = |u: &DVector<f64>| if kind == EventKind::SN { fold_test(prob, u) } else { hopf_fn(prob, u) };
                let loc = continuation::locate(prob, a, b, test, N, opts.locate_tol, &settings)?;
                let source = if kind == EventKind::SN { &source_fold } else { &source_hopf };
                if let Some(ev) = classify_located(prob, &loc.u, kind, source)? {
                    let sc = prob.scale();
                    let pos = a.tangent.dot(&(&loc.u - &a.u).component_div(&sc));
                    let m = prob.model_at(&loc.u)?;
                    let mut bp = branch_point(&m, &EquilibriumProblem::<N, M>::state(&loc.u), loc.u[N]);
                    bp.event = Some(kind);
                    found.push((pos, bp, ev));
                }
            }
            // a fold and a Hopf zero at the same point are a codim-2 candidate
            if found.len() == 2 && (found[0].1.param - found[1].1.param).abs() < 1e-6 {
                let (_, mut bp, ev) = found.remove(0);
                bp.event = Some(EventKind::BT);
                let mut ev = ev;
                ev.kind = EventKind::BT;
                found = vec![(0.0, bp, ev)];
            }
            found.sort_by(|x, y| x.0.total_cmp(&y.0));
            for (_, bp, ev) in found {
                points.push(bp);
                events.push(ev);
            }
        }
    }
    Ok(EquilibriumBranch {
        handle: prob.handle.to_string(),
        state_names: prob.model.state_names().iter().map(|s| s.to_string()).collect(),
        points,
        events,
        truncated,
    })
}

/// Every equilibrium branch crossing the parameter window, seeded from grid
/// Newton starts at both ends of `range`.
pub fn equilibrium_branches<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    range: (f64, f64),
    opts: &BranchOptions,
) -> Result<Vec<EquilibriumBranch>> {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let mut branches: Vec<EquilibriumBranch> = Vec::new();
    let s = model.state_scale();
    let mut any_seed = false;
    for end in [lo, hi] {
        let m = model.with_param(handle, end)?;
        for seed in seed_equilibria(&m) {
            any_seed = true;
            let known = branches.iter().any(|b| {
                b.points.iter().any(|p| {
                    (p.param - end).abs() <= 1e-9 * model.param_scale(handle).max(end.abs())
                        && scaled_dist(&Vector::<N>::from_iterator(p.state.iter().copied()), &seed, &s) < 1e-6
                })
            });
            if known {
                continue;
            }
            let fwd = trace_equilibrium(&m, handle, &seed, 1.0, (lo, hi), opts)?;
            let bwd = trace_equilibrium(&m, handle, &seed, -1.0, (lo, hi), opts)?;
            // join as one run ordered from the backward end to the forward end
            let mut pts: Vec<Point> = bwd
                .points
                .into_iter()
                .rev()
                .map(|mut p| {
                    p.tangent = -p.tangent;
                    p
                })
                .collect();
            pts.extend(fwd.points.into_iter().skip(1));
            let stop = if bwd.stop == Stop::StepFailure { Stop::StepFailure } else { fwd.stop };
            let prob = EquilibriumProblem { model: &m, handle };
            branches.push(assemble_branch(&prob, &[RawRun { points: pts, stop }], opts)?);
        }
    }
    if !any_seed {
        return Err(SolveError::Degenerate(format!("no equilibrium found at the ends of the {handle} range")));
    }
    Ok(branches)
}

// ---------------------------------------------------------------------------
// First Lyapunov coefficient
// ---------------------------------------------------------------------------

/// Unit null vector of a complex square matrix (smallest singular value).
fn complex_null(a: DMatrix<Complex64>) -> DVector<Complex64> {
    let n = a.ncols();
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V^H");
    let k = (0..n).min_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y])).unwrap();
    vt.row(k).adjoint()
}

/// First Lyapunov coefficient of `x' = g(x)` at a Hopf point with Jacobian
/// `a`, derivatives by central differences (step `h`) with one Richardson
/// refinement. Negative means supercritical.
pub fn lyapunov_coefficient_of(g: &dyn Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, a: &DMatrix<f64>, h: f64) -> Result<f64> {
    let n = x.len();
    let eigs = {
        let mut e: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
        e.retain(|z| z.im.abs() > 0.0);
        e.sort_by(|p, q| p.re.abs().total_cmp(&q.re.abs()));
        e
    };
    let omega = eigs.first().map(|z| z.im.abs()).ok_or_else(|| SolveError::Degenerate("no complex pair".into()))?;
    let i = Complex64::i();
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let eye = DMatrix::<Complex64>::identity(n, n);
    let mut q = complex_null(&ac - &eye * (i * omega));
    q /= Complex64::new(q.norm(), 0.0);
    let mut p = complex_null(ac.transpose() + &eye * (i * omega));
    let c = p.dotc(&q);
    p /= c.conj();

    let d2 = |u: &DVector<f64>, h: f64| (g(&(x + u * h)) - g(x) * 2.0 + g(&(x - u * h))) / (h * h);
    let d3 = |u: &DVector<f64>, h: f64| {
        (g(&(x + u * (2.0 * h))) - g(&(x + u * h)) * 2.0 + g(&(x - u * h)) * 2.0 - g(&(x - u * (2.0 * h)))) / (2.0 * h * h * h)
    };
    let b2 = |u: &DVector<f64>| (d2(u, h / 2.0) * 4.0 - d2(u, h)) / 3.0;
    let c3 = |u: &DVector<f64>| (d3(u, h / 2.0) * 4.0 - d3(u, h)) / 3.0;
    let bil = |u: &DVector<f64>, v: &DVector<f64>| (b2(&(u + v)) - b2(&(u - v))) / 4.0;

    let re = q.map(|z| z.re);
    let im = q.map(|z| z.im);
    let cplx = |r: DVector<f64>, s: DVector<f64>| DVector::from_fn(n, |k, _| Complex64::new(r[k], s[k]));

    // B(q, q̄) and B(q, q)
    let b_aa = b2(&re);
    let b_bb = b2(&im);
    let b_ab = bil(&re, &im);
    let b_qqbar = &b_aa + &b_bb;
    let b_qq = cplx(&b_aa - &b_bb, &b_ab * 2.0);

    // C(q, q, q̄)
    let c_aaa = c3(&re);
    let c_bbb = c3(&im);
    let c_p = c3(&(&re + &im));
    let c_m = c3(&(&re - &im));
    let c_aab = (&c_p - &c_m - &c_bbb * 2.0) / 6.0;
    let c_abb = (&c_p + &c_m - &c_aaa * 2.0) / 6.0;
    let c_qqq = cplx(&c_aaa + &c_abb, &c_aab + &c_bbb);

    let r = a.clone().lu().solve(&b_qqbar).ok_or(SolveError::Singular)?;
    let b_qr = cplx(bil(&re, &r), bil(&im, &r));
    let w = (&eye * (i * (2.0 * omega)) - &ac).lu().solve(&b_qq).ok_or(SolveError::Singular)?;
    let (wc, wd) = (w.map(|z| z.re), w.map(|z| z.im));
    let b_qbar_w = cplx(bil(&re, &wc) + bil(&im, &wd), bil(&re, &wd) - bil(&im, &wc));

    let total = c_qqq - b_qr * Complex64::new(2.0, 0.0) + b_qbar_w;
    Ok(p.dotc(&total).re / (2.0 * omega))
}

/// Step, in scaled state units, of the finite differences inside
/// [`lyapunov_coefficient`].
pub const LYAPUNOV_FD_STEP: f64 = 1e-4;

/// `|ℓ₁|` below which a Hopf point is flagged as degenerate.
pub const LYAPUNOV_DEGENERATE: f64 = 1e-6;

/// First Lyapunov coefficient of a model at a Hopf equilibrium, computed in
/// scaled state and time units.
pub fn lyapunov_coefficient<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>) -> Result<f64> {
    let s = m.state_scale();
    let g = |z: &DVector<f64>| {
        let xs = Vector::<N>::from_fn(|k, _| z[k] * s[k]);
        let r = scaled_rhs(m, &xs);
        DVector::from_iterator(N, r.iter().copied())
    };
    let z = DVector::from_fn(N, |k, _| x[k] / s[k]);
    let js = scaled_jacobian(m, x);
    let a = DMatrix::from_fn(N, N, |r, c| js[(r, c)]);
    lyapunov_coefficient_of(&g, &z, &a, LYAPUNOV_FD_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DimlessModel, VectorField};

    #[derive(Clone)]
    struct FoldNormalForm {
        p: f64,
    }
    impl VectorField<2> for FoldNormalForm {
        fn eval(&self, x: &Vector<2>) -> Vector<2> {
            Vector::<2>::new(self.p - x[0] * x[0], -x[1])
        }
    }
    impl Model<2> for FoldNormalForm {
        fn jacobian(&self, x: &Vector<2>) -> Matrix<2> {
            Matrix::<2>::new(-2.0 * x[0], 0.0, 0.0, -1.0)
        }
        fn state_names(&self) -> [&'static str; 2] {
            ["V", "N"]
        }
        fn param_names(&self) -> &'static [&'static str] {
            &["p"]
        }
        fn param(&self, name: &str) -> std::result::Result<f64, crate::error::ModelError> {
            match name {
                "p" => Ok(self.p),
                _ => Err(crate::error::ModelError::UnknownParameter(name.into())),
            }
        }
        fn set_param(&mut self, name: &str, value: f64) -> std::result::Result<(), crate::error::ModelError> {
            match name {
                "p" => {
                    self.p = value;
                    Ok(())
                }
                _ => Err(crate::error::ModelError::UnknownParameter(name.into())),
            }
        }
    }

    #[test]
    fn newton_converges_quadratically() {
        let m = DimlessModel::default();
        let rep = newton_equilibrium(&m, &Vector::<2>::new(-0.2, 0.3)).unwrap();
        assert!(scaled_rhs(&m, &rep.state).amax() <= 1e-12);
        let r = &rep.residuals;
        // once in the basin, the residual at least squares (up to a constant)
        let k = r.iter().position(|v| *v < 1e-3).unwrap();
        if k + 1 < r.len() && r[k + 1] > 1e-15 {
            assert!(r[k + 1] <= 10.0 * r[k] * r[k], "{r:?}");
        }
    }

    #[test]
    fn fold_of_normal_form_is_at_zero() {
        let m = FoldNormalForm { p: 1.0 };
        let b = continue_equilibrium(&m, "p", &Vector::<2>::new(1.0, 0.0), -1.0, (-1.0, 2.0), &BranchOptions::default())
            .unwrap();
        let folds: Vec<_> = b.events_of(EventKind::SN).collect();
        assert_eq!(folds.len(), 1);
        assert!(folds[0].param().abs() <= 1e-8);
        assert!(folds[0].diag("trace").unwrap().abs() > 0.5);
        // the branch turns back and ends at p = 2 on the other side
        let last = b.points.last().unwrap();
        assert!((last.param - 2.0).abs() < 1e-9 && last.state[0] < 0.0);
    }

    #[test]
    fn supercritical_normal_form_has_negative_l1() {
        for (a, omega) in [(-1.0, 1.0), (1.0, 2.0), (-0.3, 0.5)] {
            let g = move |z: &DVector<f64>| {
                let r2 = z[0] * z[0] + z[1] * z[1];
                DVector::from_vec(vec![-omega * z[1] + a * z[0] * r2, omega * z[0] + a * z[1] * r2])
            };
            let x = DVector::zeros(2);
            let j = DMatrix::from_row_slice(2, 2, &[0.0, -omega, omega, 0.0]);
            let l1 = lyapunov_coefficient_of(&g, &x, &j, 1e-3).unwrap();
            // |q| = 1 makes the complex coordinate |x|/√2, hence the factor 2
            assert!((l1 - 2.0 * a / omega).abs() < 1e-6, "{l1} vs {}", 2.0 * a / omega);
        }
    }

    #[test]
    fn sheared_normal_form_keeps_sign() {
        // y = T x with a non-orthogonal T: the sign of l1 is coordinate free
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, -0.3, 1.5]);
        let ti = t.clone().try_inverse().unwrap();
        let (tc, tic) = (t.clone(), ti.clone());
        let g = move |y: &DVector<f64>| {
            let z = &tic * y;
            let r2 = z[0] * z[0] + z[1] * z[1];
            let f = DVector::from_vec(vec![-z[1] - 0.5 * z[0] * r2 + z[0] * z[0], z[0] - 0.5 * z[1] * r2]);
            &tc * f
        };
        let a = &t * DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]) * &ti;
        let l1 = lyapunov_coefficient_of(&g, &DVector::zeros(2), &a, 1e-3).unwrap();
        assert!(l1 < 0.0);
    }
}
