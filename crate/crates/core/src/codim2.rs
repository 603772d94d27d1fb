//! Two-parameter loci of fold, Hopf, homoclinic and cycle-fold bifurcations,
//! the codimension-two points on them, and the excitability type of a slice.

use std::cell::{Cell, RefCell};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::continuation::{locate, tangent_at, trace, Point, Problem, Settings, Stop};
use crate::cycles::{amplitude_sq, steps_for, CycleOptions, CycleProblem, CycleStability, MAX_MULTIPLIER};
use crate::diagram::{one_parameter_diagram, Diagram, DiagramOptions};
use crate::equilibria::{lyapunov_coefficient, newton_equilibrium, scaled_jacobian, scaled_rhs};
use crate::error::{Result, SolveError};
use crate::events::{BifurcationEvent, EventKind};
use crate::homoclinic::{self, first_peak, fold_returns, fold_split, saddle_directions, MANIFOLD_OFFSET};
use crate::io::{fmt_num, Csv};
use crate::linalg;
use crate::model::{Matrix, Model, Vector};
use crate::par;

/// The two free parameters and the rectangle they are confined to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub p1: String,
    pub range1: (f64, f64),
    pub p2: String,
    pub range2: (f64, f64),
}

impl Window {
    pub fn new(p1: &str, range1: (f64, f64), p2: &str, range2: (f64, f64)) -> Self {
        let order = |(a, b): (f64, f64)| (a.min(b), a.max(b));
        Self { p1: p1.into(), range1: order(range1), p2: p2.into(), range2: order(range2) }
    }

    /// `v1b ∈ [−0.7, 0.1]`, `v3b ∈ [−0.4, 0.5]`.
    pub fn dimless() -> Self {
        Self::new("v1b", (-0.7, 0.1), "v3b", (-0.4, 0.5))
    }

    pub fn contains(&self, a: f64, b: f64) -> bool {
        (self.range1.0..=self.range1.1).contains(&a) && (self.range2.0..=self.range2.1).contains(&b)
    }

    fn model_at<const N: usize, M: Model<N>>(&self, model: &M, a: f64, b: f64) -> Result<M> {
        Ok(model.with_param(&self.p1, a)?.with_param(&self.p2, b)?)
    }
}

/// The six horizontal slices of the dimensionless map.
pub const SLICES: [(&str, f64); 6] = [("l1", 0.45), ("l2", 0.25), ("l3", -0.047), ("l4", -0.088), ("l5", -0.26), ("l6", -0.32)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocusKind {
    Fold,
    Hopf,
    Snc,
    Homoclinic,
    Snic,
}

impl LocusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LocusKind::Fold => "fold",
            LocusKind::Hopf => "hopf",
            LocusKind::Snc => "snc",
            LocusKind::Homoclinic => "homoclinic",
            LocusKind::Snic => "snic",
        }
    }
}

/// How a locus ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocusEnd {
    Codim2(EventKind),
    RangeLimit,
    /// The curve returned to its starting point.
    Closed,
    /// The corrector failed or a conditioning guard fired.
    Truncated,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusPoint {
    pub params: [f64; 2],
    pub state: Vec<f64>,
    /// Kind-specific: fold (trace, centre coefficient), Hopf (ω, ℓ₁),
    /// homoclinic (σ, saddle determinant), SNC (period, amplitude).
    pub diag: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusCurve {
    pub kind: LocusKind,
    /// Finer name such as `SN1`, `SN2` or `HB`.
    pub label: String,
    pub points: Vec<LocusPoint>,
    pub ends: [LocusEnd; 2],
    pub events: Vec<BifurcationEvent>,
}

impl LocusCurve {
    /// `p1,p2,kind,diag1,diag2` rows.
    pub fn to_csv(&self, window: &Window) -> String {
        let mut csv = Csv::with_header(&[window.p1.as_str(), window.p2.as_str(), "kind", "diag1", "diag2"]);
        for p in &self.points {
            csv.row_str(&[fmt_num(p.params[0]), fmt_num(p.params[1]), self.label.clone(), fmt_num(p.diag[0]), fmt_num(p.diag[1])]);
        }
        csv.into_string()
    }

    /// First-parameter values where the curve crosses `p2 = value`, by linear
    /// interpolation between consecutive points.
    pub fn crossings(&self, value: f64) -> Vec<f64> {
        let last = self.points.len().saturating_sub(2);
        self.points
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let ([a1, a2], [b1, b2]) = (w[0].params, w[1].params);
                if (a2 - value) * (b2 - value) > 0.0 || a2 == b2 {
                    return None;
                }
                if b2 == value && i < last {
                    // counted by the next segment
                    return None;
                }
                Some(a1 + (value - a2) / (b2 - a2) * (b1 - a1))
            })
            .collect()
    }

    /// Smallest scaled distance between `params` and a vertex of the curve.
    fn distance_to(&self, params: [f64; 2], scale: [f64; 2]) -> f64 {
        self.points
            .iter()
            .map(|p| ((p.params[0] - params[0]) / scale[0]).hypot((p.params[1] - params[1]) / scale[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocusOptions {
    pub settings: Settings,
    pub cycle: CycleOptions,
    /// Integration step for manifold computations.
    pub step: f64,
    /// Location tolerance of codim-2 points in the second parameter.
    pub locate_tol: f64,
}

impl LocusOptions {
    pub fn for_model<const N: usize, M: Model<N>>(m: &M, window: &Window) -> Self {
        let mut cycle = CycleOptions::for_model(m, window.range1);
        cycle.settings.tol = 1e-9;
        Self {
            settings: Settings { tol: 1e-11, h_init: 1e-3, h_min: 1e-7, h_max: 2e-2, max_steps: 5000, ..Settings::default() },
            cycle,
            step: cycle.step,
            locate_tol: 1e-10,
        }
    }
}

// ---------------------------------------------------------------------------
// Shared tracing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RawEnd {
    Range,
    Terminal,
    Closed,
    Failure,
    MaxSteps,
}

impl RawEnd {
    fn locus_end(self) -> LocusEnd {
        match self {
            RawEnd::Range => LocusEnd::RangeLimit,
            RawEnd::Closed => LocusEnd::Closed,
            RawEnd::MaxSteps => LocusEnd::MaxSteps,
            RawEnd::Terminal | RawEnd::Failure => LocusEnd::Truncated,
        }
    }
}

/// Hooks of a two-parameter locus problem whose last two unknowns are the
/// parameters.
trait Locus: Problem {
    fn params(&self, u: &DVector<f64>) -> (f64, f64) {
        let n = u.len();
        (u[n - 2], u[n - 1])
    }

    /// Monitored quantity whose sign change ends the curve.
    fn terminal(&self, _u: &DVector<f64>) -> Option<f64> {
        None
    }

    /// Restores internal state recorded when `u` was accepted.
    fn restart(&self, _u: &DVector<f64>) {}
}

fn trace_half<P: Locus>(p: &P, window: &Window, u0: &DVector<f64>, hint: &DVector<f64>, settings: &Settings) -> Result<(Vec<Point>, RawEnd)> {
    let scale = p.scale();
    let z0 = u0.component_div(&scale);
    let sign0 = p.terminal(u0).map(f64::signum);
    let mut travelled = 0.0;
    let mut prev = z0.clone();
    let mut reason = None;
    let run = trace(p, u0, hint, settings, |pt| {
        let (a, b) = p.params(&pt.u);
        if !window.contains(a, b) {
            reason = Some(RawEnd::Range);
            return true;
        }
        if let (Some(s0), Some(v)) = (sign0, p.terminal(&pt.u)) {
            if v.signum() != s0 {
                reason = Some(RawEnd::Terminal);
                return true;
            }
        }
        let z = pt.u.component_div(&scale);
        travelled += (&z - &prev).norm();
        prev = z;
        if travelled > 20.0 * settings.h_max && (&prev - &z0).norm() < 2.0 * settings.h_max {
            reason = Some(RawEnd::Closed);
            return true;
        }
        false
    })?;
    let end = match (run.stop, reason) {
        (Stop::Requested, Some(r)) => r,
        (Stop::StepFailure, _) => RawEnd::Failure,
        _ => RawEnd::MaxSteps,
    };
    Ok((run.points, end))
}

/// Traces both ways from `u0` and joins the halves in curve order, with
/// tangents pointing along the joined curve.
fn trace_both<P: Locus>(p: &P, window: &Window, u0: &DVector<f64>, settings: &Settings) -> Result<(Vec<Point>, [RawEnd; 2])> {
    let mut hint = DVector::zeros(u0.len());
    let n = u0.len();
    hint[n - 1] = p.scale()[n - 1];
    let (fwd, fwd_end) = trace_half(p, window, u0, &hint, settings)?;
    if fwd_end == RawEnd::Closed {
        return Ok((fwd, [RawEnd::Closed, RawEnd::Closed]));
    }
    let back = -fwd[0].tangent.component_mul(&p.scale());
    p.restart(u0);
    let (bwd, bwd_end) = trace_half(p, window, u0, &back, settings)?;
    let mut points: Vec<Point> = bwd
        .into_iter()
        .rev()
        .map(|mut pt| {
            pt.tangent = -pt.tangent;
            pt
        })
        .collect();
    points.extend(fwd.into_iter().skip(1));
    Ok((points, [bwd_end, fwd_end]))
}

/// Zeros of `test` between consecutive points whose `values` change sign.
fn zeros<P: Problem>(
    p: &P,
    points: &[Point],
    values: &[f64],
    test: impl Fn(usize, &DVector<f64>) -> Result<f64>,
    coord: usize,
    opts: &LocusOptions,
) -> Vec<(usize, Point)> {
    let mut out = Vec::new();
    for i in 0..points.len().saturating_sub(1) {
        let (a, b) = (values[i], values[i + 1]);
        if !(a.is_finite() && b.is_finite()) || a == 0.0 || a.signum() == b.signum() {
            continue;
        }
        if let Ok(pt) = locate(p, &points[i], &points[i + 1], |u| test(i, u), coord, opts.locate_tol, &opts.settings) {
            out.push((i, pt));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Fold and Hopf loci of equilibria
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Defining {
    Fold,
    Hopf,
}

/// Unknowns `(x, p₁, p₂)`; residual `(f(x), det J)` or `(f(x), Hopf test)`
/// in scaled units.
struct EquilibriumLocus<'a, const N: usize, M: Model<N>> {
    model: &'a M,
    window: &'a Window,
    defining: Defining,
}

impl<const N: usize, M: Model<N>> EquilibriumLocus<'_, N, M> {
    fn at(&self, u: &DVector<f64>) -> Result<(M, Vector<N>, Matrix<N>)> {
        let m = self.window.model_at(self.model, u[N], u[N + 1])?;
        let x = Vector::<N>::from_fn(|i, _| u[i]);
        let js = scaled_jacobian(&m, &x);
        Ok((m, x, js))
    }

    fn pack(x: &[f64], a: f64, b: f64) -> DVector<f64> {
        DVector::from_iterator(N + 2, x.iter().copied().chain([a, b]))
    }
}

impl<const N: usize, M: Model<N>> Problem for EquilibriumLocus<'_, N, M> {
    fn dim(&self) -> usize {
        N + 2
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, x, js) = self.at(u)?;
        let f = scaled_rhs(&m, &x);
        let c = match self.defining {
            Defining::Fold => linalg::det(&js),
            Defining::Hopf => linalg::hopf_test(&js),
        };
        Ok(DVector::from_iterator(N + 1, f.iter().copied().chain([c])))
    }

    fn scale(&self) -> DVector<f64> {
        let s = self.model.state_scale();
        DVector::from_iterator(
            N + 2,
            s.iter().copied().chain([self.model.param_scale(&self.window.p1), self.model.param_scale(&self.window.p2)]),
        )
    }
}

impl<const N: usize, M: Model<N>> Locus for EquilibriumLocus<'_, N, M> {
    fn terminal(&self, u: &DVector<f64>) -> Option<f64> {
        match self.defining {
            Defining::Fold => None,
            Defining::Hopf => self.at(u).ok().map(|(_, _, js)| omega_sq(&js)),
        }
    }
}

/// Sum of the products of all eigenvalues but one; vanishes when a second
/// eigenvalue reaches zero on a fold.
fn second_zero_test<const N: usize>(js: &Matrix<N>) -> f64 {
    let e = linalg::eigenvalues(js);
    (0..e.len())
        .map(|i| e.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, z)| *z).product::<num_complex::Complex64>())
        .sum::<num_complex::Complex64>()
        .re
}

/// `ω²` of the imaginary pair on a Hopf locus.
fn omega_sq<const N: usize>(js: &Matrix<N>) -> f64 {
    match N {
        2 => linalg::det(js),
        3 => linalg::char_poly3(js).1,
        _ => linalg::eigenvalues(js).iter().map(|z| z.im * z.im).fold(0.0, f64::max),
    }
}

/// Largest eigenvalue modulus.
fn spectral_radius<const N: usize>(js: &Matrix<N>) -> f64 {
    linalg::eigenvalues(js).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Tangent components along both parameters below which a turning point of
/// the fold curve is a cusp.
pub const CUSP_TANGENT_TOL: f64 = 1e-3;
/// Splitting magnitude (scaled) accepted at a located NSH point.
pub const NSH_SPLIT_TOL: f64 = 1e-6;

fn codim2_event<const N: usize>(kind: EventKind, u: &DVector<f64>, source: &str) -> BifurcationEvent {
    BifurcationEvent::new(kind, vec![u[N], u[N + 1]], u.iter().take(N).copied().collect(), source)
}

fn locus_point<const N: usize>(u: &DVector<f64>, diag: [f64; 2]) -> LocusPoint {
    LocusPoint { params: [u[N], u[N + 1]], state: u.iter().take(N).copied().collect(), diag }
}

fn start_vector<const N: usize, M: Model<N>>(model: &M, window: &Window, start: &BifurcationEvent) -> Result<DVector<f64>> {
    let b = match start.params.get(1) {
        Some(b) => *b,
        None => model.param(&window.p2)?,
    };
    if start.state.len() != N {
        return Err(SolveError::Degenerate("seed event has the wrong state dimension".into()));
    }
    Ok(EquilibriumLocus::<N, M>::pack(&start.state, start.param(), b))
}

/// Continues the fold through `start` in the window and returns its pieces:
/// the branch carrying the Bogdanov–Takens points (`SN1`), the other branch
/// (`SN2`) and the invariant-circle segments of the latter (`SNIC`).
pub fn continue_fold_curve<const N: usize, M: Model<N>>(
    model: &M,
    window: &Window,
    start: &BifurcationEvent,
    opts: &LocusOptions,
) -> Result<Vec<LocusCurve>> {
    let prob = EquilibriumLocus { model, window, defining: Defining::Fold };
    let u0 = start_vector(model, window, start)?;
    let (u0, _) = crate::continuation::correct_fixed(&prob, &u0, N + 1, opts.settings.tol, 30)?;
    let (points, ends) = trace_both(&prob, window, &u0, &opts.settings)?;
    let source = format!("codim2:{}:{}:fold", window.p1, window.p2);

    let info: Vec<(Matrix<N>, f64, f64)> = points
        .iter()
        .map(|pt| {
            let (m, x, js) = prob.at(&pt.u).expect("accepted point evaluates");
            let (_, _, a, _) = homoclinic::saddle_node_geometry(&m, &x);
            (js, a, second_zero_test(&js))
        })
        .collect();

    // Bogdanov–Takens
    let bt_values: Vec<f64> = info.iter().map(|i| i.2).collect();
    let bt = zeros(&prob, &points, &bt_values, |_, u| Ok(second_zero_test(&prob.at(u)?.2)), N + 1, opts);
    let mut events: Vec<(usize, BifurcationEvent)> = bt
        .iter()
        .map(|(i, pt)| {
            let (_, _, js) = prob.at(&pt.u).expect("located point evaluates");
            (*i, codim2_event::<N>(EventKind::BT, &pt.u, &source).with("max_abs_eigenvalue", spectral_radius(&js)))
        })
        .collect();

    // cusp: the tangent loses both parameter components
    let tangent_b: Vec<f64> = points.iter().map(|pt| pt.tangent[N + 1]).collect();
    let scale = prob.scale();
    let cusp = zeros(&prob, &points, &tangent_b, |i, u| Ok(tangent_at(&prob, u, &points[i].tangent.component_mul(&scale))?[N + 1]), N + 1, opts);
    let mut cusp_index = None;
    for (i, pt) in cusp {
        if pt.tangent[N].abs() < CUSP_TANGENT_TOL && info[i].1.signum() != info[i + 1].1.signum() {
            events.push((i, codim2_event::<N>(EventKind::CP, &pt.u, &source).with("centre_coefficient", 0.0)));
            cusp_index = Some(i);
        }
    }

    // which side of the cusp carries the Bogdanov–Takens points
    let split_at = cusp_index.map_or(points.len(), |i| i + 1);
    let bt_before = bt.iter().filter(|(i, _)| *i < split_at).count();
    let bt_after = bt.len() - bt_before;
    let (first_label, second_label) = if bt_before >= bt_after { ("SN1", "SN2") } else { ("SN2", "SN1") };

    // non-central saddle-node homoclinic points on planar systems
    let t_lim = 2e3 * model.time_scale();
    let mut nsh = Vec::new();
    if N == 2 {
        let split_of = |u: &DVector<f64>| -> Result<f64> {
            let (m, x, _) = prob.at(u)?;
            fold_split(&m, &x, opts.step, t_lim)
        };
        let values: Vec<f64> = par::map(&points, |pt| split_of(&pt.u).unwrap_or(f64::NAN));
        for (i, pt) in zeros(&prob, &points, &values, |_, u| split_of(u), N + 1, opts) {
            if split_of(&pt.u).is_ok_and(|g| g.abs() < NSH_SPLIT_TOL) {
                nsh.push((i, pt));
            }
        }
    }
    for (i, pt) in &nsh {
        let (m, x, js) = prob.at(&pt.u)?;
        let (_, _, a, other) = homoclinic::saddle_node_geometry(&m, &x);
        let ev = codim2_event::<N>(EventKind::NSH, &pt.u, &source).with("centre_coefficient", a).with("eigenvalue", other).with("det", linalg::det(&js));
        events.push((*i, ev));
    }
    events.sort_by_key(|(i, _)| *i);

    // cut at the cusp and at NSH points; a cut event belongs to the piece
    // ending there
    let diag = |i: usize| [info[i].0.trace(), info[i].1];
    let label = |past_cusp: bool| if past_cusp { second_label } else { first_label };
    let mut pieces = Vec::new();
    let mut current: Vec<LocusPoint> = Vec::new();
    let mut piece_events = Vec::new();
    let mut start_end = ends[0].locus_end();
    let mut past_cusp = false;
    let mut pending = events.into_iter().peekable();
    for (i, pt) in points.iter().enumerate() {
        current.push(locus_point::<N>(&pt.u, diag(i)));
        while let Some((_, e)) = pending.next_if(|(j, _)| *j == i) {
            if !matches!(e.kind, EventKind::CP | EventKind::NSH) {
                piece_events.push(e);
                continue;
            }
            let kind = e.kind;
            let u = EquilibriumLocus::<N, M>::pack(&e.state, e.params[0], e.params[1]);
            let (m, x, js) = prob.at(&u)?;
            let at = locus_point::<N>(&u, [js.trace(), homoclinic::saddle_node_geometry(&m, &x).2]);
            current.push(at.clone());
            piece_events.push(e);
            pieces.push(LocusCurve {
                kind: LocusKind::Fold,
                label: label(past_cusp).into(),
                points: std::mem::take(&mut current),
                ends: [start_end, LocusEnd::Codim2(kind)],
                events: std::mem::take(&mut piece_events),
            });
            current.push(at);
            start_end = LocusEnd::Codim2(kind);
            past_cusp |= kind == EventKind::CP;
        }
    }
    pieces.push(LocusCurve {
        kind: LocusKind::Fold,
        label: label(past_cusp).into(),
        points: current,
        ends: [start_end, ends[1].locus_end()],
        events: piece_events,
    });

    // SNIC tag on SN2 pieces bounded by NSH points whose saddle-node returns
    if N == 2 {
        for piece in pieces.iter_mut().filter(|p| p.label == "SN2") {
            let nsh_bounded = piece.ends.contains(&LocusEnd::Codim2(EventKind::NSH));
            if !nsh_bounded || piece.points.len() < 3 {
                continue;
            }
            let mid = &piece.points[piece.points.len() / 2];
            let m = window.model_at(model, mid.params[0], mid.params[1])?;
            let x = Vector::<N>::from_iterator(mid.state.iter().copied());
            if mid.diag[0] < 0.0 && fold_returns(&m, &x, opts.step, t_lim) {
                piece.kind = LocusKind::Snic;
                piece.label = "SNIC".into();
            }
        }
    }
    Ok(pieces)
}

/// Continues the Hopf locus through `start` until it leaves the window or
/// ends at a Bogdanov–Takens point; generalised Hopf points are located by
/// the sign change of the first Lyapunov coefficient.
pub fn continue_hopf_curve<const N: usize, M: Model<N>>(
    model: &M,
    window: &Window,
    start: &BifurcationEvent,
    opts: &LocusOptions,
) -> Result<LocusCurve> {
    let prob = EquilibriumLocus { model, window, defining: Defining::Hopf };
    let u0 = start_vector(model, window, start)?;
    let (u0, _) = crate::continuation::correct_fixed(&prob, &u0, N + 1, opts.settings.tol, 30)?;
    let (mut points, ends) = trace_both(&prob, window, &u0, &opts.settings)?;
    let source = format!("codim2:{}:{}:hopf", window.p1, window.p2);
    let mut end_kinds = [ends[0].locus_end(), ends[1].locus_end()];
    let mut events = Vec::new();

    // Bogdanov–Takens ends: ω² reaches zero between the last two points
    let w2 = |u: &DVector<f64>| -> Result<f64> { Ok(omega_sq(&prob.at(u)?.2)) };
    for (side, end) in ends.iter().enumerate() {
        if *end != RawEnd::Terminal || points.len() < 2 {
            continue;
        }
        let (i, j) = if side == 0 { (0, 1) } else { (points.len() - 2, points.len() - 1) };
        let (a, b) = (&points[i], &points[j]);
        let Ok(loc) = locate(&prob, a, b, w2, N + 1, opts.locate_tol, &opts.settings) else { continue };
        let (_, _, js) = prob.at(&loc.u)?;
        events.push(codim2_event::<N>(EventKind::BT, &loc.u, &source).with("max_abs_eigenvalue", spectral_radius(&js)));
        if side == 0 {
            points[0] = loc;
        } else {
            *points.last_mut().unwrap() = loc;
        }
        end_kinds[side] = LocusEnd::Codim2(EventKind::BT);
    }

    let l1_at = |u: &DVector<f64>| -> Result<f64> {
        let (m, x, _) = prob.at(u)?;
        lyapunov_coefficient(&m, &x)
    };
    let diag: Vec<[f64; 2]> = points
        .iter()
        .map(|pt| {
            let (_, _, js) = prob.at(&pt.u).expect("accepted point evaluates");
            [omega_sq(&js).max(0.0).sqrt(), l1_at(&pt.u).unwrap_or(f64::NAN)]
        })
        .collect();
    let l1: Vec<f64> = diag.iter().map(|d| d[1]).collect();
    for (_, pt) in zeros(&prob, &points, &l1, |_, u| l1_at(u), N + 1, opts) {
        let (_, _, js) = prob.at(&pt.u)?;
        events.push(codim2_event::<N>(EventKind::GH, &pt.u, &source).with("omega_scaled", omega_sq(&js).max(0.0).sqrt()));
    }
    Ok(LocusCurve {
        kind: LocusKind::Hopf,
        label: "HB".into(),
        points: points.iter().zip(&diag).map(|(pt, d)| locus_point::<N>(&pt.u, *d)).collect(),
        ends: end_kinds,
        events,
    })
}

// ---------------------------------------------------------------------------
// Homoclinic locus
// ---------------------------------------------------------------------------

/// Loop height (scaled) below which a homoclinic locus is ended at a
/// Bogdanov–Takens point.
pub const MIN_LOOP: f64 = 1e-3;
/// Saddle eigenvalue magnitude (scaled) below which the locus is ended near a
/// fold of the saddle.
pub const MIN_SADDLE_EIGENVALUE: f64 = 1e-2;

/// Smallest arclength step on the homoclinic locus.
pub const HC_MIN_STEP: f64 = 1e-5;
/// Largest step along a homoclinic locus; the curve bends sharply near the
/// fold, so it is sampled finer than the equilibrium loci.
pub const HC_MAX_STEP: f64 = 5e-3;

/// Unknowns `(p₁, p₂)`; residual: the splitting of the saddle's manifolds.
struct HomoclinicLocus<'a, const N: usize, M: Model<N>> {
    model: &'a M,
    window: &'a Window,
    step: f64,
    saddle: RefCell<Vector<N>>,
    /// Section level for the manifold peaks, midway up the loop.
    floor: Cell<f64>,
    t_base: f64,
    /// Saddle and section level at every accepted point.
    log: RefCell<Vec<(DVector<f64>, Vector<N>, f64)>>,
}

struct SaddleInfo<const N: usize> {
    x: Vector<N>,
    sigma: f64,
    lambda_u: f64,
    lambda_s: f64,
    det: f64,
}

impl<const N: usize, M: Model<N>> HomoclinicLocus<'_, N, M> {
    fn saddle_at(&self, u: &DVector<f64>) -> Result<(M, SaddleInfo<N>)> {
        let m = self.window.model_at(self.model, u[0], u[1])?;
        let x = newton_equilibrium(&m, &self.saddle.borrow())?.state;
        let (sigma, lambda_u, lambda_s) = crate::cycles::saddle_quantity(&m, &x);
        let det = linalg::det(&scaled_jacobian(&m, &x));
        Ok((m, SaddleInfo { x, sigma, lambda_u, lambda_s, det }))
    }

    fn t_lim(&self, info: &SaddleInfo<N>) -> f64 {
        let escape = (1.0 / MANIFOLD_OFFSET).ln() * (1.0 / info.lambda_u.abs() + 1.0 / info.lambda_s.abs());
        self.t_base + 2.0 * escape * self.model.time_scale()
    }

    /// Height of the unstable manifold's first peak above the saddle.
    fn loop_height(&self, m: &M, info: &SaddleInfo<N>) -> Option<f64> {
        let (vu, _) = saddle_directions(m, &info.x).ok()?;
        let s = m.state_scale();
        let x0 = info.x + vu.component_mul(&s) * (MANIFOLD_OFFSET / vu.norm());
        let floor = info.x[0] + 1e-6 * s[0];
        first_peak(m, &x0, floor, self.step, self.t_lim(info)).map(|p| p[0] - info.x[0])
    }
}

impl<const N: usize, M: Model<N>> Problem for HomoclinicLocus<'_, N, M> {
    fn dim(&self) -> usize {
        2
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, info) = self.saddle_at(u)?;
        let (vu, vs) = saddle_directions(&m, &info.x)?;
        let g = homoclinic::manifold_split(&m, &info.x, &vu, MANIFOLD_OFFSET, &vs, self.floor.get(), self.step, self.t_lim(&info))?;
        Ok(DVector::from_element(1, g))
    }

    fn scale(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.model.param_scale(&self.window.p1), self.model.param_scale(&self.window.p2)])
    }

    fn accepted(&self, u: &DVector<f64>) {
        if let Ok((m, info)) = self.saddle_at(u) {
            if let Some(h) = self.loop_height(&m, &info) {
                self.floor.set(info.x[0] + 0.5 * h);
            }
            *self.saddle.borrow_mut() = info.x;
            self.log.borrow_mut().push((u.clone(), info.x, self.floor.get()));
        }
    }
}

impl<const N: usize, M: Model<N>> Locus for HomoclinicLocus<'_, N, M> {
    fn params(&self, u: &DVector<f64>) -> (f64, f64) {
        (u[0], u[1])
    }

    /// Positive while the saddle is hyperbolic and the loop has height.
    fn terminal(&self, u: &DVector<f64>) -> Option<f64> {
        let Ok((m, info)) = self.saddle_at(u) else { return Some(-1.0) };
        let h = 2.0 * (self.floor.get() - info.x[0]).max(0.0) / m.state_scale()[0];
        let lam = info.lambda_u.abs().min(info.lambda_s.abs());
        Some((h / MIN_LOOP).min(lam / MIN_SADDLE_EIGENVALUE).ln())
    }

    fn restart(&self, u: &DVector<f64>) {
        let log = self.log.borrow();
        if let Some((_, x, floor)) = log.iter().find(|(v, _, _)| v == u) {
            *self.saddle.borrow_mut() = *x;
            self.floor.set(*floor);
        }
    }
}

/// Continues the homoclinic locus through a point `(a, b)` where the
/// splitting function vanishes for the saddle near `saddle`. Resonant points
/// are located where the saddle quantity changes sign.
pub fn continue_homoclinic_curve<const N: usize, M: Model<N>>(
    model: &M,
    window: &Window,
    start: &BifurcationEvent,
    opts: &LocusOptions,
) -> Result<LocusCurve> {
    let b = match start.params.get(1) {
        Some(b) => *b,
        None => model.param(&window.p2)?,
    };
    let saddle = Vector::<N>::from_iterator(start.state.iter().copied());
    let period = start.diag("period").unwrap_or(100.0 * model.time_scale());
    let prob = HomoclinicLocus {
        model,
        window,
        step: opts.step,
        saddle: RefCell::new(saddle),
        floor: Cell::new(0.0),
        t_base: 4.0 * period.min(opts.cycle.t_max) + 100.0 * model.time_scale(),
        log: RefCell::new(Vec::new()),
    };
    let u0 = DVector::from_vec(vec![start.param(), b]);
    prob.accepted(&u0);
    let (u0, _) = crate::continuation::correct_fixed(&prob, &u0, 1, opts.settings.tol.max(1e-10), 30)?;
    prob.accepted(&u0);
    let settings = Settings { tol: opts.settings.tol.max(1e-10), h_min: HC_MIN_STEP, h_max: opts.settings.h_max.min(HC_MAX_STEP), ..opts.settings };
    let (points, ends) = trace_both(&prob, window, &u0, &settings)?;
    let source = format!("codim2:{}:{}:homoclinic", window.p1, window.p2);

    let infos: Vec<Option<SaddleInfo<N>>> = points
        .iter()
        .map(|pt| {
            prob.restart(&pt.u);
            prob.saddle_at(&pt.u).ok().map(|(_, i)| i)
        })
        .collect();
    let sigma: Vec<f64> = infos.iter().map(|i| i.as_ref().map_or(f64::NAN, |i| i.sigma)).collect();
    let mut events = Vec::new();
    let sigma_at = |i: usize, u: &DVector<f64>| -> Result<f64> {
        prob.restart(&points[i].u);
        Ok(prob.saddle_at(u)?.1.sigma)
    };
    for (i, pt) in zeros(&prob, &points, &sigma, sigma_at, 1, opts) {
        prob.restart(&points[i].u);
        let (_, info) = prob.saddle_at(&pt.u)?;
        events.push(
            BifurcationEvent::new(EventKind::RHom, vec![pt.u[0], pt.u[1]], info.x.iter().copied().collect(), source.as_str())
                .with("sigma", info.sigma)
                .with("lambda_u", info.lambda_u)
                .with("lambda_s", info.lambda_s),
        );
    }
    let pts = points
        .iter()
        .zip(&infos)
        .map(|(pt, info)| LocusPoint {
            params: [pt.u[0], pt.u[1]],
            state: info.as_ref().map_or_else(Vec::new, |i| i.x.iter().copied().collect()),
            diag: info.as_ref().map_or([f64::NAN; 2], |i| [i.sigma, i.det]),
        })
        .collect();
    Ok(LocusCurve { kind: LocusKind::Homoclinic, label: "HC".into(), points: pts, ends: [ends[0].locus_end(), ends[1].locus_end()], events })
}

// ---------------------------------------------------------------------------
// Cycle-fold locus
// ---------------------------------------------------------------------------

/// Smallest arclength step on the cycle-fold locus; the locus stalls as it
/// hugs the homoclinic locus.
pub const SNC_MIN_STEP: f64 = 1e-4;
/// Period growth over the locus minimum that marks a stalled end as
/// homoclinic.
pub const SNC_BLOWUP_RATIO: f64 = 2.0;

/// Unknowns `(x₀, ln T, p₁, p₂)`; residual: the shooting system of the first
/// parameter at the second, augmented by the cycle-fold test.
struct SncLocus<'a, const N: usize, M: Model<N>> {
    model: &'a M,
    window: &'a Window,
    step: f64,
    steps: Cell<usize>,
}

impl<const N: usize, M: Model<N>> SncLocus<'_, N, M> {
    fn with_shooting<R>(&self, u: &DVector<f64>, f: impl FnOnce(&CycleProblem<'_, N, M>, &DVector<f64>) -> Result<R>) -> Result<R> {
        let m = self.model.with_param(&self.window.p2, u[N + 2])?;
        let cp = CycleProblem::new(&m, &self.window.p1, u[N].exp(), self.step);
        cp.set_steps(self.steps.get());
        f(&cp, &u.rows(0, N + 2).into_owned())
    }
}

impl<const N: usize, M: Model<N>> Problem for SncLocus<'_, N, M> {
    fn dim(&self) -> usize {
        N + 3
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.with_shooting(u, |cp, v| {
            let (r, g, _) = cp.residual_and_fold(v)?;
            Ok(DVector::from_iterator(N + 2, r.iter().copied().chain([g])))
        })
    }

    fn scale(&self) -> DVector<f64> {
        let s = self.model.state_scale();
        DVector::from_iterator(
            N + 3,
            s.iter().copied().chain([1.0, self.model.param_scale(&self.window.p1), self.model.param_scale(&self.window.p2)]),
        )
    }

    fn admissible(&self, u: &DVector<f64>) -> bool {
        self.with_shooting(u, |cp, v| Ok(cp.admissible(v))).unwrap_or(false)
    }

    fn accepted(&self, u: &DVector<f64>) {
        let want = steps_for(u[N].exp(), self.step);
        let have = self.steps.get();
        if want * 2 > have * 3 || want * 2 < have {
            self.steps.set(want);
        }
    }
}

struct SncStops<'a, const N: usize, M: Model<N>> {
    prob: SncLocus<'a, N, M>,
    opts: LocusOptions,
}

impl<const N: usize, M: Model<N>> Problem for SncStops<'_, N, M> {
    fn dim(&self) -> usize {
        self.prob.dim()
    }
    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.prob.residual(u)
    }
    fn scale(&self) -> DVector<f64> {
        self.prob.scale()
    }
    fn admissible(&self, u: &DVector<f64>) -> bool {
        self.prob.admissible(u)
    }
    fn accepted(&self, u: &DVector<f64>) {
        self.prob.accepted(u)
    }
}

impl<const N: usize, M: Model<N>> Locus for SncStops<'_, N, M> {
    /// Negative once the cycle shrinks to a Hopf point, grows to the period
    /// limit or becomes ill-conditioned.
    fn terminal(&self, u: &DVector<f64>) -> Option<f64> {
        let Ok((_, _, sol)) = self.prob.with_shooting(u, |cp, v| cp.residual_and_fold(v)) else { return Some(-1.0) };
        let s0 = self.prob.model.state_scale()[0];
        let amp = amplitude_sq(&sol, s0).sqrt() / self.opts.cycle.amp_min;
        let per = self.opts.cycle.t_max / sol.period;
        let cond = MAX_MULTIPLIER / sol.nontrivial_modulus().max(1e-300);
        Some(amp.min(per).min(cond).ln())
    }

    fn restart(&self, u: &DVector<f64>) {
        self.prob.steps.set(steps_for(u[N].exp(), self.prob.step));
    }
}

/// Continues the cycle-fold locus through an SNC event of a one-parameter
/// branch. Ends where the cycle shrinks onto a Hopf point (generalised Hopf)
/// or its period diverges (homoclinic end).
pub fn continue_snc_curve<const N: usize, M: Model<N>>(
    model: &M,
    window: &Window,
    start: &BifurcationEvent,
    opts: &LocusOptions,
) -> Result<LocusCurve> {
    let b = match start.params.get(1) {
        Some(b) => *b,
        None => model.param(&window.p2)?,
    };
    let period = start.diag("period").ok_or_else(|| SolveError::Degenerate("SNC seed without period".into()))?;
    let prob = SncStops {
        prob: SncLocus { model, window, step: opts.cycle.step, steps: Cell::new(steps_for(period, opts.cycle.step)) },
        opts: *opts,
    };
    let u0 = DVector::from_iterator(N + 3, start.state.iter().copied().chain([period.ln(), start.param(), b]));
    let settings = Settings { tol: opts.cycle.settings.tol, h_min: SNC_MIN_STEP, h_max: opts.settings.h_max, ..opts.settings };
    let (u0, _) = crate::continuation::correct_fixed(&prob, &u0, N + 2, settings.tol, 30)?;
    let (points, ends) = trace_both(&prob, window, &u0, &settings)?;
    let mut end_kinds = [ends[0].locus_end(), ends[1].locus_end()];
    let mut pts = Vec::with_capacity(points.len());
    let mut sols = Vec::with_capacity(points.len());
    for pt in &points {
        prob.prob.steps.set(steps_for(pt.u[N].exp(), opts.cycle.step));
        let (_, _, sol) = prob.prob.with_shooting(&pt.u, |cp, v| cp.residual_and_fold(v))?;
        pts.push(LocusPoint { params: [pt.u[N + 1], pt.u[N + 2]], state: sol.anchor.clone(), diag: [sol.period, sol.v_max - sol.v_min] });
        sols.push(sol);
    }
    // name the ends by what stopped them; a stalled end whose period has
    // grown well past the shortest one is approaching the homoclinic locus
    let s0 = model.state_scale()[0];
    let min_period = sols.iter().map(|c| c.period).fold(f64::INFINITY, f64::min);
    for (side, end) in ends.iter().enumerate() {
        let sol = if side == 0 { sols.first() } else { sols.last() };
        let Some(sol) = sol else { continue };
        end_kinds[side] = match end {
            RawEnd::Terminal if amplitude_sq(sol, s0).sqrt() < opts.cycle.amp_min => LocusEnd::Codim2(EventKind::GH),
            RawEnd::Terminal if sol.period > opts.cycle.t_max || sol.nontrivial_modulus() > MAX_MULTIPLIER => LocusEnd::Codim2(EventKind::RHom),
            RawEnd::Terminal => LocusEnd::Truncated,
            RawEnd::Failure | RawEnd::MaxSteps if sol.period > SNC_BLOWUP_RATIO * min_period => LocusEnd::Codim2(EventKind::RHom),
            _ => end_kinds[side],
        };
    }
    Ok(LocusCurve { kind: LocusKind::Snc, label: "SNC".into(), points: pts, ends: end_kinds, events: Vec::new() })
}

// ---------------------------------------------------------------------------
// Excitability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Excitability {
    /// No stable oscillation anywhere on the slice.
    #[serde(rename = "none")]
    None,
    /// Onset through a saddle-node on an invariant circle.
    #[serde(rename = "type-I")]
    TypeI,
    /// Onset through a Hopf bifurcation.
    #[serde(rename = "type-II")]
    TypeII,
    /// Stable oscillations appear at a homoclinic bifurcation while rest
    /// states persist.
    #[serde(rename = "bistable-with-HC-onset")]
    BistableHcOnset,
}

impl Excitability {
    pub fn as_str(self) -> &'static str {
        match self {
            Excitability::None => "none",
            Excitability::TypeI => "type-I",
            Excitability::TypeII => "type-II",
            Excitability::BistableHcOnset => "bistable-with-HC-onset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitabilityLabel {
    pub slice_param: f64,
    pub label: Excitability,
    pub onset_event: Option<BifurcationEvent>,
}

/// Parameter distance (relative to the parameter scale) within which the end
/// of the stable-cycle set is attributed to an event.
pub const ONSET_TOL: f64 = 1e-3;

/// Labels a slice by the event that creates stable oscillations when the
/// diagram's parameter decreases from the quiescent side.
pub fn classify_excitability(diagram: &Diagram, slice_param: f64, param_scale: f64) -> Result<ExcitabilityLabel> {
    let onset = diagram
        .cycles
        .iter()
        .flat_map(|b| b.points.iter())
        .filter(|c| c.stability == CycleStability::Stable)
        .map(|c| c.param)
        .fold(f64::NEG_INFINITY, f64::max);
    if onset == f64::NEG_INFINITY {
        return Ok(ExcitabilityLabel { slice_param, label: Excitability::None, onset_event: None });
    }
    let event = diagram
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::SNIC | EventKind::HB | EventKind::HC | EventKind::SNC))
        .min_by(|a, b| (a.param() - onset).abs().total_cmp(&(b.param() - onset).abs()))
        .filter(|e| (e.param() - onset).abs() <= ONSET_TOL * param_scale)
        .ok_or_else(|| SolveError::Degenerate(format!("no event at the oscillation onset {onset}")))?;
    let label = match event.kind {
        EventKind::SNIC => Excitability::TypeI,
        EventKind::HB if event.diag("omega").is_some_and(|w| w > 0.0) => Excitability::TypeII,
        EventKind::SNC => Excitability::TypeII,
        EventKind::HC => Excitability::BistableHcOnset,
        _ => return Err(SolveError::Degenerate(format!("onset at {} is not classifiable", event.kind))),
    };
    Ok(ExcitabilityLabel { slice_param, label, onset_event: Some(event.clone()) })
}

/// Computes the slice diagram at `value` of the second parameter and labels it.
pub fn classify_slice<const N: usize, M: Model<N>>(model: &M, window: &Window, value: f64, opts: &DiagramOptions) -> Result<(Diagram, ExcitabilityLabel)> {
    let m = model.with_param(&window.p2, value)?;
    let d = one_parameter_diagram(&m, &window.p1, window.range1, opts)?;
    let label = classify_excitability(&d, value, model.param_scale(&window.p1))?;
    Ok((d, label))
}

// ---------------------------------------------------------------------------
// The map
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MapOptions {
    pub diagram: DiagramOptions,
    pub locus: LocusOptions,
    pub slices: Vec<(String, f64)>,
}

impl MapOptions {
    pub fn for_model<const N: usize, M: Model<N>>(m: &M, window: &Window) -> Self {
        Self {
            diagram: DiagramOptions::for_model(m, window.range1),
            locus: LocusOptions::for_model(m, window),
            slices: SLICES.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub name: String,
    pub value: f64,
    pub diagram: Diagram,
    pub excitability: Option<ExcitabilityLabel>,
    /// Why the excitability could not be decided, if it could not.
    pub undecided: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoParamMap {
    pub window: Window,
    pub loci: Vec<LocusCurve>,
    /// Codim-2 points ordered by kind, then second parameter.
    pub events: Vec<BifurcationEvent>,
    pub slices: Vec<Slice>,
}

impl TwoParamMap {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &BifurcationEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// `[{kind, p1, p2, diagnostics...}]`.
    pub fn events_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .events
            .iter()
            .map(|e| {
                let mut o = serde_json::Map::new();
                o.insert("kind".into(), e.kind.as_str().into());
                o.insert(self.window.p1.clone(), e.params[0].into());
                o.insert(self.window.p2.clone(), e.params[1].into());
                for (k, v) in &e.diagnostics {
                    o.insert(k.clone(), (*v).into());
                }
                serde_json::Value::Object(o)
            })
            .collect();
        serde_json::Value::Array(rows)
    }
}

/// Whether a seed at `(a, b)` lies on one of `curves` (crossing within `tol`).
fn seed_covered(curves: &[LocusCurve], a: f64, b: f64, tol: f64) -> bool {
    curves.iter().any(|c| c.crossings(b).iter().any(|x| (x - a).abs() <= tol))
}

fn with_p2(e: &BifurcationEvent, b: f64) -> BifurcationEvent {
    let mut e = e.clone();
    e.params = vec![e.params[0], b];
    e
}

/// Seeds a homoclinic locus next to an NSH point: at a slightly shifted
/// second parameter the fold is corrected, then the splitting function is
/// bracketed in the first parameter on the side where the saddle exists.
pub fn homoclinic_seed_near<const N: usize, M: Model<N>>(model: &M, window: &Window, nsh: &BifurcationEvent, opts: &LocusOptions) -> Option<BifurcationEvent> {
    let (a0, b0) = (nsh.params[0], nsh.params[1]);
    let s1 = model.param_scale(&window.p1);
    let s2 = model.param_scale(&window.p2);
    let t_lim = 2e3 * model.time_scale();
    let fold_locus = EquilibriumLocus { model, window, defining: Defining::Fold };
    for db in [1e-3, -1e-3] {
        let u = EquilibriumLocus::<N, M>::pack(&nsh.state, a0, b0 + db * s2);
        let Ok((u, _)) = crate::continuation::correct_fixed(&fold_locus, &u, N + 1, opts.settings.tol, 30) else { continue };
        let (fold, a_fold, b) = (Vector::<N>::from_fn(|i, _| u[i]), u[N], u[N + 1]);
        for da_sign in [1.0, -1.0] {
            let mut prev: Option<(f64, f64)> = None;
            let mut last_saddle: Option<Vector<N>> = None;
            for k in 0..=80 {
                let a = a_fold + da_sign * s1 * 1e-9 * 1.25f64.powi(k);
                let Ok(m) = window.model_at(model, a, b) else { break };
                // the saddle starts next to the fold state and is followed
                let s = m.state_scale();
                let guesses = match last_saddle {
                    Some(x) => vec![x],
                    None => vec![fold + s * 1e-4, fold - s * 1e-4],
                };
                let saddle = guesses.iter().filter_map(|g| newton_equilibrium(&m, g).ok().map(|r| r.state)).find(|x| saddle_directions(&m, x).is_ok());
                let Some(x) = saddle else {
                    if last_saddle.is_some() {
                        break;
                    }
                    continue;
                };
                last_saddle = Some(x);
                let Ok((vu, vs)) = saddle_directions(&m, &x) else { continue };
                let floor = x[0] + 1e-3 * s[0];
                // the homoclinic locus cannot start at a nearly degenerate saddle
                let (_, lu, ls) = crate::cycles::saddle_quantity(&m, &x);
                if lu.abs().min(ls.abs()) < MIN_SADDLE_EIGENVALUE {
                    continue;
                }
                let escape = 2.0 * (1.0 / MANIFOLD_OFFSET).ln() * (1.0 / lu.abs() + 1.0 / ls.abs()) * model.time_scale();
                let Ok(g) = homoclinic::manifold_split(&m, &x, &vu, MANIFOLD_OFFSET, &vs, floor, opts.step, t_lim + escape) else { continue };
                if let Some((pa, pg)) = prev {
                    if pg.signum() != g.signum() {
                        let a_mid = pa + (a - pa) * pg / (pg - g);
                        return Some(BifurcationEvent::new(EventKind::HC, vec![a_mid, b], x.iter().copied().collect(), "codim2:nsh-seed"));
                    }
                }
                prev = Some((a, g));
            }
        }
    }
    None
}

/// Merges codim-2 events, keeping the first of any pair of the same kind
/// closer than `tol` in scaled parameters.
fn merge_events(all: Vec<BifurcationEvent>, scale: [f64; 2], tol: f64) -> Vec<BifurcationEvent> {
    let mut out: Vec<BifurcationEvent> = Vec::new();
    for e in all {
        let dup = out.iter().any(|x| {
            x.kind == e.kind && ((x.params[0] - e.params[0]) / scale[0]).hypot((x.params[1] - e.params[1]) / scale[1]) <= tol
        });
        if !dup {
            out.push(e);
        }
    }
    out.sort_by(|a, b| a.kind.cmp(&b.kind).then(a.params[1].total_cmp(&b.params[1])));
    out
}

/// Scaled distance below which two codim-2 points are the same.
pub const EVENT_MERGE_TOL: f64 = 1e-4;
/// Scaled distance within which a locus end is attributed to a codim-2 point.
pub const END_MATCH_TOL: f64 = 2e-2;

/// Builds the two-parameter map: slice diagrams, fold, Hopf, cycle-fold and
/// homoclinic loci seeded from the slices, the codim-2 points on them and
/// the excitability label of every slice.
pub fn render_two_param_map<const N: usize, M: Model<N>>(model: &M, window: &Window, opts: &MapOptions) -> Result<TwoParamMap> {
    let slices: Vec<Slice> = par::map(&opts.slices, |(name, value)| -> Result<Slice> {
        let m = model.with_param(&window.p2, *value)?;
        let diagram = one_parameter_diagram(&m, &window.p1, window.range1, &opts.diagram)?;
        let (excitability, undecided) = match classify_excitability(&diagram, *value, model.param_scale(&window.p1)) {
            Ok(l) => (Some(l), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Slice { name: name.clone(), value: *value, diagram, excitability, undecided })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let seeds = |kinds: &[EventKind]| -> Vec<BifurcationEvent> {
        slices
            .iter()
            .flat_map(|s| s.diagram.events.iter().filter(|e| kinds.contains(&e.kind)).map(|e| with_p2(e, s.value)))
            .collect()
    };
    let p1_scale = model.param_scale(&window.p1);
    let seed_tol = 1e-4 * p1_scale;
    let lo = &opts.locus;

    let fold_seeds = seeds(&[EventKind::SN, EventKind::SNIC]);
    let hopf_seeds = seeds(&[EventKind::HB]);
    let snc_seeds = seeds(&[EventKind::SNC]);
    let jobs: [(&[BifurcationEvent], LocusKind); 3] = [(&fold_seeds, LocusKind::Fold), (&hopf_seeds, LocusKind::Hopf), (&snc_seeds, LocusKind::Snc)];
    let traced: Vec<Vec<LocusCurve>> = par::map(&jobs, |(list, kind)| {
        let mut curves: Vec<LocusCurve> = Vec::new();
        for e in list.iter() {
            if seed_covered(&curves, e.params[0], e.params[1], seed_tol) {
                continue;
            }
            let traced = match kind {
                LocusKind::Fold => continue_fold_curve(model, window, e, lo),
                LocusKind::Hopf => continue_hopf_curve(model, window, e, lo).map(|c| vec![c]),
                _ => continue_snc_curve(model, window, e, lo).map(|c| vec![c]),
            };
            if let Ok(mut c) = traced {
                curves.append(&mut c);
            }
        }
        curves
    });
    let mut loci: Vec<LocusCurve> = traced.into_iter().flatten().collect();

    // homoclinic loci from slice crossings and from each NSH point
    let mut hc_seeds = seeds(&[EventKind::HC]);
    if N == 2 {
        let nsh: Vec<BifurcationEvent> = loci.iter().flat_map(|c| c.events.iter().filter(|e| e.kind == EventKind::NSH).cloned()).collect();
        hc_seeds.extend(nsh.iter().filter_map(|e| homoclinic_seed_near(model, window, e, lo)));
        let mut hc: Vec<LocusCurve> = Vec::new();
        let scale = [p1_scale, model.param_scale(&window.p2)];
        for e in hc_seeds {
            let on_curve = hc.iter().any(|c| c.distance_to([e.params[0], e.params[1]], scale) < END_MATCH_TOL)
                || seed_covered(&hc, e.params[0], e.params[1], seed_tol);
            if on_curve {
                continue;
            }
            if let Ok(c) = continue_homoclinic_curve(model, window, &e, lo) {
                hc.push(c);
            }
        }
        loci.extend(hc);
    }

    let scale = [p1_scale, model.param_scale(&window.p2)];
    let all: Vec<BifurcationEvent> = loci.iter().flat_map(|c| c.events.iter().cloned()).collect();
    let events = merge_events(all, scale, EVENT_MERGE_TOL);

    // attribute truncated homoclinic and SNC ends to nearby codim-2 points
    for c in loci.iter_mut().filter(|c| matches!(c.kind, LocusKind::Homoclinic | LocusKind::Snc)) {
        for side in 0..2 {
            if matches!(c.ends[side], LocusEnd::RangeLimit | LocusEnd::Closed) {
                continue;
            }
            let Some(p) = (if side == 0 { c.points.first() } else { c.points.last() }) else { continue };
            let near = events
                .iter()
                .map(|e| (e, ((e.params[0] - p.params[0]) / scale[0]).hypot((e.params[1] - p.params[1]) / scale[1])))
                .filter(|(_, d)| *d <= END_MATCH_TOL)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((e, _)) = near {
                c.ends[side] = LocusEnd::Codim2(e.kind);
            }
        }
    }
    Ok(TwoParamMap { window: window.clone(), loci, events, slices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycles::{CycleBranch, CycleSolution, Termination};
    use proptest::prelude::*;

    fn curve(pts: &[[f64; 2]]) -> LocusCurve {
        LocusCurve {
            kind: LocusKind::Fold,
            label: "SN".into(),
            points: pts.iter().map(|&params| LocusPoint { params, state: vec![], diag: [0.0; 2] }).collect(),
            ends: [LocusEnd::RangeLimit; 2],
            events: vec![],
        }
    }

    fn cycle(param: f64, stability: CycleStability) -> CycleSolution {
        CycleSolution {
            param,
            period: 10.0,
            anchor: vec![0.0, 0.0],
            v_min: -0.5,
            v_max: 0.1,
            multipliers: vec![[1.0, 0.0], [0.5, 0.0]],
            trivial_error: 0.0,
            liouville_error: 0.0,
            residual: 0.0,
            stability,
            event: None,
        }
    }

    fn diagram(stable_params: &[f64], events: Vec<BifurcationEvent>) -> Diagram {
        let points = stable_params.iter().map(|&p| cycle(p, CycleStability::Stable)).collect();
        let branch = CycleBranch { handle: "p".into(), points, events: vec![], ends: [Termination::Seed; 2] };
        Diagram { handle: "p".into(), range: (-1.0, 1.0), equilibria: vec![], cycles: vec![branch], events }
    }

    fn event(kind: EventKind, p: f64) -> BifurcationEvent {
        BifurcationEvent::new(kind, vec![p], vec![], "test")
    }

    #[test]
    fn window_is_closed_and_ordered() {
        let w = Window::new("a", (1.0, -1.0), "b", (0.0, 2.0));
        assert_eq!(w.range1, (-1.0, 1.0));
        assert!(w.contains(-1.0, 2.0));
        assert!(!w.contains(1.0 + 1e-12, 1.0));
        assert!(Window::dimless().contains(-0.25, -0.25));
    }

    #[test]
    fn crossings_count_vertices_once() {
        let c = curve(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [3.0, 1.0]]);
        assert_eq!(c.crossings(0.5), vec![0.5, 1.5, 2.5]);
        // a vertex exactly on the level belongs to one segment only
        assert_eq!(c.crossings(1.0), vec![1.0, 3.0]);
        assert!(c.crossings(2.0).is_empty());
        assert!(curve(&[[0.0, 0.0]]).crossings(0.0).is_empty());
    }

    #[test]
    fn merge_drops_near_duplicates_of_the_same_kind() {
        let all = vec![
            BifurcationEvent::new(EventKind::BT, vec![0.0, 0.3], vec![], "a"),
            BifurcationEvent::new(EventKind::BT, vec![1e-6, 0.3], vec![], "b"),
            BifurcationEvent::new(EventKind::CP, vec![0.0, 0.3], vec![], "c"),
            BifurcationEvent::new(EventKind::BT, vec![0.0, -0.2], vec![], "d"),
        ];
        let out = merge_events(all, [1.0, 1.0], EVENT_MERGE_TOL);
        let tags: Vec<&str> = out.iter().map(|e| e.source.as_str()).collect();
        assert_eq!(tags, ["d", "a", "c"]);
    }

    #[test]
    fn excitability_follows_the_onset_event() {
        let d = diagram(&[-0.5, -0.3, -0.2], vec![event(EventKind::SNIC, -0.2), event(EventKind::HB, -0.6)]);
        assert_eq!(classify_excitability(&d, 0.0, 1.0).unwrap().label, Excitability::TypeI);

        let hb = event(EventKind::HB, -0.2).with("omega", 0.3);
        let d = diagram(&[-0.3, -0.2], vec![hb]);
        assert_eq!(classify_excitability(&d, 0.0, 1.0).unwrap().label, Excitability::TypeII);

        let d = diagram(&[-0.3, -0.2], vec![event(EventKind::HC, -0.2)]);
        assert_eq!(classify_excitability(&d, 0.0, 1.0).unwrap().label, Excitability::BistableHcOnset);

        let d = diagram(&[], vec![event(EventKind::SN, 0.1)]);
        assert_eq!(classify_excitability(&d, 0.0, 1.0).unwrap().label, Excitability::None);
    }

    #[test]
    fn unattributed_onset_is_an_error() {
        let d = diagram(&[-0.3, -0.2], vec![event(EventKind::SNIC, -0.1)]);
        assert!(classify_excitability(&d, 0.0, 1.0).is_err());
        // a zero-frequency Hopf point cannot start oscillations
        let d = diagram(&[-0.2], vec![event(EventKind::HB, -0.2).with("omega", 0.0)]);
        assert!(classify_excitability(&d, 0.0, 1.0).is_err());
    }

    #[test]
    fn serialized_names() {
        assert_eq!(serde_json::to_string(&Excitability::BistableHcOnset).unwrap(), "\"bistable-with-HC-onset\"");
        assert_eq!(serde_json::to_string(&Excitability::TypeI).unwrap(), "\"type-I\"");
        for k in [LocusKind::Fold, LocusKind::Hopf, LocusKind::Snc, LocusKind::Homoclinic, LocusKind::Snic] {
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
    }

    proptest! {
        #[test]
        fn crossings_interpolate_onto_the_curve(ys in prop::collection::vec(-1.0f64..1.0, 2..20), level in -1.0f64..1.0) {
            let pts: Vec<[f64; 2]> = ys.iter().enumerate().map(|(i, &y)| [i as f64, y]).collect();
            let c = curve(&pts);
            let xs = c.crossings(level);
            let sign_changes = ys.windows(2).filter(|w| (w[0] - level) * (w[1] - level) < 0.0).count();
            prop_assert!(xs.len() >= sign_changes);
            for x in xs {
                let i = (x.floor() as usize).min(ys.len() - 2);
                let t = x - i as f64;
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&t));
                let y = ys[i] + t * (ys[i + 1] - ys[i]);
                prop_assert!((y - level).abs() < 1e-9);
            }
        }

        #[test]
        fn merging_is_idempotent(ps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 0..12)) {
            let all: Vec<_> = ps.iter().map(|&(a, b)| BifurcationEvent::new(EventKind::GH, vec![a, b], vec![], "t")).collect();
            let once = merge_events(all, [1.0, 1.0], 0.1);
            let twice = merge_events(once.clone(), [1.0, 1.0], 0.1);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.windows(2).all(|w| w[0].params[1] <= w[1].params[1]));
        }
    }
}
