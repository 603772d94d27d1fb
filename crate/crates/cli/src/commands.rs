//! Subcommand implementations. Each writes into an [`OutDir`] and returns
//! a [`CliError`] carrying the exit code on failure.

use clap::{Args, ValueEnum};
use pacemaker_core::codim2::{classify_excitability, render_two_param_map, LocusEnd, MapOptions, Window, SLICES};
use pacemaker_core::cycles::{orbit_csv, refine_cycle, CycleStability};
use pacemaker_core::diagram::{one_parameter_diagram, Diagram};
use pacemaker_core::equilibria::{newton_equilibrium, seed_equilibria};
use pacemaker_core::events::{BifurcationEvent, EventKind};
use pacemaker_core::integrate::{
    channel_block, classify_oscillation, linspace, rk4_integrate, sweep, sweep_csv, Classification, Conductance, SeedPolicy,
    Trajectory, DEFAULT_STEP,
};
use pacemaker_core::io::{fmt_num, Csv};
use pacemaker_core::linalg::{self, Stability};
use pacemaker_core::model::{v3_of_ca, DimensionalParams, DimlessModel, FullModel, Model, Vector};
use pacemaker_core::par;
use serde_json::{json, Value};

use crate::config::{parse_assignment, Floats, parse_positive, parse_range, parse_vector, safe_time_scale, ModelKind, RunConfig};
use crate::error::{CliError, CliResult, NO_SEED, UNDECIDED};
use crate::output::OutDir;

/// Default simulated span, in characteristic times of the model.
const SPAN: f64 = 400.0;

fn initial_state<const N: usize>(x0: &Option<Floats>) -> CliResult<Vector<N>> {
    match x0 {
        None => Ok(Vector::<N>::zeros()),
        Some(Floats(v)) if v.len() == N => Ok(Vector::<N>::from_iterator(v.iter().copied())),
        Some(Floats(v)) => Err(CliError::config(format!("--x0 has {} components, the model has {N}", v.len()))),
    }
}

fn integrate<const N: usize, M: Model<N>>(cfg: &RunConfig, m: &M, x0: &Vector<N>, t_end: Option<f64>) -> CliResult<Trajectory<N>> {
    let ts = safe_time_scale(m);
    let step = cfg.step.unwrap_or(DEFAULT_STEP * ts);
    let t_end = t_end.unwrap_or(SPAN * ts);
    rk4_integrate(m, x0, 0.0, t_end, step).map_err(|e| CliError::new(crate::error::BLOWUP, e.to_string()))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// End time in the model's own unit (default: 400 characteristic times).
    #[arg(long, value_parser = parse_positive)]
    pub t_end: Option<f64>,
    /// Initial state, comma separated (default: the origin).
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub x0: Option<Floats>,
    /// Also write the calcium-dependent half-activation voltage v3(t) (full model).
    #[arg(long)]
    pub track_v3: bool,
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs, out: &mut OutDir) -> CliResult<()> {
    if args.track_v3 {
        cfg.require(ModelKind::Full, "--track-v3")?;
        let m = cfg.full()?;
        let traj = simulate_model(cfg, &m, args, out)?;
        return write_v3(&traj, &m.p, out);
    }
    crate::with_model!(cfg, m => simulate_model(cfg, &m, args, out).map(|_| ()))
}

fn simulate_model<const N: usize, M: Model<N>>(cfg: &RunConfig, m: &M, args: &SimulateArgs, out: &mut OutDir) -> CliResult<Trajectory<N>> {
    let x0 = initial_state::<N>(&args.x0)?;
    let traj = integrate(cfg, m, &x0, args.t_end)?;
    out.write("trajectory.csv", &traj.to_csv(&m.state_names()))?;
    let report = classify_oscillation(m, &x0, &cfg.budget(m));
    out.write_json("report.json", &report)?;
    out.note("initial_state", json!(x0.iter().collect::<Vec<_>>()));
    Ok(traj)
}

fn write_v3(traj: &Trajectory<3>, p: &DimensionalParams, out: &mut OutDir) -> CliResult<()> {
    let mut csv = Csv::with_header(&["t", "v3"]);
    let v3: Vec<f64> = traj.states.iter().map(|x| v3_of_ca(x[2], p)).collect();
    for (t, v) in traj.times.iter().zip(&v3) {
        csv.row_nums(&[*t, *v]);
    }
    out.write("v3.csv", csv.as_str())?;
    let (upper, lower) = (p.v6 + p.v5 / 2.0, p.v6 - p.v5 / 2.0);
    // statistics after the first half, once transients have decayed
    let tail = &v3[v3.len() / 2..];
    let near = tail.iter().filter(|v| upper - **v <= 0.1 * p.v5.abs()).count() as f64 / tail.len().max(1) as f64;
    let summary = json!({
        "v3_min": v3.iter().copied().fold(f64::INFINITY, f64::min),
        "v3_max": v3.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "upper_bound": upper,
        "lower_bound": lower,
        "fraction_near_upper": near,
    });
    out.write_json("v3_summary.json", &summary)
}

// ---------------------------------------------------------------------------
// block
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Args)]
pub struct BlockArgs {
    /// Length of the written time series, in seconds (default: 400 characteristic times).
    #[arg(long, value_parser = parse_positive)]
    pub t_end: Option<f64>,
    /// Classifier transient window, in seconds.
    #[arg(long, value_parser = parse_positive)]
    pub transient: Option<f64>,
    /// Classifier observation window, in seconds.
    #[arg(long, value_parser = parse_positive)]
    pub observation: Option<f64>,
}

/// Behaviour expected of each blocked model at the default parameters.
fn expected(which: Conductance) -> Classification {
    match which {
        Conductance::Leak => Classification::Periodic,
        Conductance::Calcium | Conductance::Potassium => Classification::Quiescent,
    }
}

/// Always runs the three-variable model.
pub fn block(cfg: &RunConfig, args: &BlockArgs, out: &mut OutDir) -> CliResult<()> {
    let p = cfg.dimensional()?;
    let mut budget = cfg.budget(&FullModel::new(p));
    budget.transient = args.transient.unwrap_or(budget.transient);
    budget.observation = args.observation.unwrap_or(budget.observation);
    let reports = par::map(&Conductance::ALL, |w| channel_block(*w, &p, &budget));
    let mut csv = Csv::with_header(&["conductance", "classification", "period", "expected", "matches"]);
    let mut rows = Vec::new();
    for (w, r) in Conductance::ALL.iter().zip(&reports) {
        let exp = expected(*w);
        csv.row_str(&[
            w.name().to_string(),
            r.classification.as_str().to_string(),
            r.period.map(fmt_num).unwrap_or_default(),
            exp.as_str().to_string(),
            (r.classification == exp).to_string(),
        ]);
        rows.push(json!({ "conductance": w.name(), "report": r, "expected": exp }));

        let mut q = p;
        q.set(w.name(), 0.0)?;
        let traj = integrate(cfg, &FullModel::new(q), &Vector::<3>::zeros(), args.t_end)?;
        out.write(&format!("series_{}.csv", w.name()), &traj.to_csv(&["v", "n", "Ca_i"]))?;
    }
    out.write("verdicts.csv", csv.as_str())?;
    out.write_json("report.json", &rows)?;
    let undecided: Vec<&str> = Conductance::ALL
        .iter()
        .zip(&reports)
        .filter(|(_, r)| r.classification == Classification::Undecided)
        .map(|(w, _)| w.name())
        .collect();
    if !undecided.is_empty() {
        return Err(CliError::new(UNDECIDED, format!("undecided classification for {}", undecided.join(","))));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Policy {
    /// Every sample starts from the same state.
    #[default]
    Fixed,
    /// Each sample starts where the previous one ended.
    Continue,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Swept parameter.
    #[arg(long)]
    pub param: String,
    /// Parameter window `lo:hi`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub range: (f64, f64),
    /// Number of evenly spaced samples, ends included.
    #[arg(long, default_value_t = 41)]
    pub samples: usize,
    /// Where each sample starts.
    #[arg(long, value_enum, default_value_t = Policy::Fixed)]
    pub policy: Policy,
    /// Initial state, comma separated (default: the origin).
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub x0: Option<Floats>,
}

pub fn sweep_cmd(cfg: &RunConfig, args: &SweepArgs, out: &mut OutDir) -> CliResult<()> {
    crate::with_model!(cfg, m => sweep_model(cfg, &m, args, out))
}

fn sweep_model<const N: usize, M: Model<N>>(cfg: &RunConfig, m: &M, args: &SweepArgs, out: &mut OutDir) -> CliResult<()> {
    let x0 = initial_state::<N>(&args.x0)?;
    let policy = match args.policy {
        Policy::Fixed => SeedPolicy::Fixed(x0),
        Policy::Continue => SeedPolicy::ContinueFinal(x0),
    };
    let samples = sweep(m, &args.param, args.range, args.samples, policy, &cfg.budget(m))?;
    out.write("sweep.csv", &sweep_csv(&samples))
}

// ---------------------------------------------------------------------------
// continue
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct ContinueArgs {
    /// Free parameter.
    #[arg(long)]
    pub free: String,
    /// Parameter window `lo:hi` (default depends on the parameter).
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub range: Option<(f64, f64)>,
    /// Fixed parameter values, `name=value`, applied after `--set`.
    #[arg(long = "at", value_parser = parse_assignment, allow_hyphen_values = true)]
    pub at: Vec<(String, f64)>,
    /// Also write the period of every cycle branch against the parameter.
    #[arg(long)]
    pub period: bool,
}

pub fn continue_cmd(cfg: &RunConfig, args: &ContinueArgs, out: &mut OutDir) -> CliResult<()> {
    if !cfg.model.free_handles().contains(&args.free.as_str()) {
        return Err(CliError::config(format!(
            "cannot free `{}` for the {} model (allowed: {})",
            args.free,
            cfg.model.as_str(),
            cfg.model.free_handles().join(", ")
        )));
    }
    let range = args.range.or_else(|| cfg.model.default_range(&args.free)).expect("every free handle has a default range");
    let mut cfg = cfg.clone();
    cfg.overrides.extend(args.at.iter().cloned());
    crate::with_model!(cfg, m => {
        let d = diagram_for(&cfg, &m, &args.free, range)?;
        write_diagram(out, "", &d, args.period)
    })
}

/// Computes a one-parameter diagram, failing with the no-seed code when no
/// equilibrium exists at either end of the window.
pub fn diagram_for<const N: usize, M: Model<N>>(cfg: &RunConfig, m: &M, handle: &str, range: (f64, f64)) -> CliResult<Diagram> {
    let ends = [range.0, range.1].map(|p| m.with_param(handle, p));
    let mut any = false;
    for e in ends {
        any |= !seed_equilibria(&e?).is_empty();
    }
    if !any {
        return Err(CliError::new(NO_SEED, format!("no equilibrium found at either end of the {handle} range")));
    }
    Ok(one_parameter_diagram(m, handle, range, &cfg.diagram_options(m, range))?)
}

fn event_row(e: &BifurcationEvent, names: &[&str]) -> Value {
    let mut o = serde_json::Map::new();
    o.insert("kind".into(), e.kind.as_str().into());
    for (n, p) in names.iter().zip(&e.params) {
        o.insert((*n).into(), (*p).into());
    }
    if let Some(l) = &e.label {
        o.insert("label".into(), l.clone().into());
    }
    o.insert("source".into(), e.source.clone().into());
    for (k, v) in &e.diagnostics {
        o.insert(k.clone(), (*v).into());
    }
    Value::Object(o)
}

pub fn period_csv(d: &Diagram) -> String {
    let mut csv = Csv::with_header(&["branch", "param", "period", "stability"]);
    for (k, b) in d.cycles.iter().enumerate() {
        for c in &b.points {
            csv.row_str(&[k.to_string(), fmt_num(c.param), fmt_num(c.period), c.stability.as_str().to_string()]);
        }
    }
    csv.into_string()
}

/// Whether a branch segment around `p` is stable; an end sitting exactly on
/// an event (non-hyperbolic) does not break stability.
fn stable_equilibrium_at(d: &Diagram, p: f64) -> bool {
    let ok = |s: Stability| s.is_stable() || s == Stability::NonHyperbolic;
    d.equilibria.iter().any(|b| {
        b.points.windows(2).any(|w| {
            let (a, z) = (w[0].stability, w[1].stability);
            (w[0].param - p) * (w[1].param - p) <= 0.0 && ok(a) && ok(z) && (a.is_stable() || z.is_stable())
        })
    })
}

/// Parameter intervals where a stable cycle and a stable equilibrium coexist.
pub fn bistable_intervals(d: &Diagram) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for b in &d.cycles {
        let mut run: Option<(f64, f64)> = None;
        for c in &b.points {
            if c.stability == CycleStability::Stable && stable_equilibrium_at(d, c.param) {
                run = Some(run.map_or((c.param, c.param), |(a, z)| (a.min(c.param), z.max(c.param))));
            } else if let Some(r) = run.take() {
                out.push(r);
            }
        }
        out.extend(run);
    }
    out.retain(|(a, z)| z > a);
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Branch CSVs, events and a summary of one diagram under `prefix`.
pub fn write_diagram(out: &mut OutDir, prefix: &str, d: &Diagram, period: bool) -> CliResult<()> {
    for (k, b) in d.equilibria.iter().enumerate() {
        out.write(&format!("{prefix}equilibria_{k}.csv"), &b.to_csv())?;
    }
    for (k, b) in d.cycles.iter().enumerate() {
        out.write(&format!("{prefix}cycles_{k}.csv"), &b.to_csv())?;
    }
    out.write(&format!("{prefix}events.csv"), &d.events_csv())?;
    let rows: Vec<Value> = d.events.iter().map(|e| event_row(e, &[d.handle.as_str()])).collect();
    out.write_json(&format!("{prefix}events.json"), &rows)?;
    if period {
        out.write(&format!("{prefix}period.csv"), &period_csv(d))?;
    }
    let summary = json!({
        "handle": d.handle,
        "range": [d.range.0, d.range.1],
        "kinds": d.kinds().iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        "bistable": bistable_intervals(d).iter().map(|(a, z)| [*a, *z]).collect::<Vec<_>>(),
        "truncated_equilibrium_branches": d.equilibria.iter().filter(|b| b.truncated).count(),
    });
    out.write_json(&format!("{prefix}summary.json"), &summary)
}

// ---------------------------------------------------------------------------
// map
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Args)]
pub struct MapArgs {
    /// Compute only the slice at this value of the second parameter.
    #[arg(long, allow_hyphen_values = true)]
    pub slice: Option<f64>,
    /// With `--slice`: nullclines, equilibria and cycles at one point of the slice.
    #[arg(long, requires = "slice")]
    pub phase_portrait: bool,
    /// First-parameter value of the phase portrait (default: between the
    /// homoclinic and cycle-fold points of the slice).
    #[arg(long, allow_hyphen_values = true, requires = "phase_portrait")]
    pub at_p1: Option<f64>,
}

fn end_str(e: LocusEnd) -> String {
    match e {
        LocusEnd::Codim2(k) => k.as_str().to_string(),
        LocusEnd::RangeLimit => "range-limit".into(),
        LocusEnd::Closed => "closed".into(),
        LocusEnd::Truncated => "truncated".into(),
        LocusEnd::MaxSteps => "max-steps".into(),
    }
}

pub fn map(cfg: &RunConfig, args: &MapArgs, out: &mut OutDir) -> CliResult<()> {
    cfg.require(ModelKind::Dimless, "map")?;
    let m = cfg.dimless()?;
    let window = Window::dimless();
    let mut opts = MapOptions::for_model(&m, &window);
    opts.diagram = cfg.diagram_options(&m, window.range1);

    if let Some(v) = args.slice {
        let mv = m.with_param(&window.p2, v)?;
        let d = one_parameter_diagram(&mv, &window.p1, window.range1, &opts.diagram)?;
        let label = match classify_excitability(&d, v, m.param_scale(&window.p1)) {
            Ok(l) => serde_json::to_value(&l)?,
            Err(e) => json!({ "slice_param": v, "label": "undecided", "reason": e.to_string() }),
        };
        write_diagram(out, "slice/", &d, true)?;
        out.write_json("slice/excitability.json", &label)?;
        if args.phase_portrait {
            let p1 = match args.at_p1 {
                Some(a) => a,
                None => between_hc_and_snc(&d).ok_or_else(|| CliError::config("slice has no homoclinic/cycle-fold pair; pass --at-p1"))?,
            };
            phase_portrait(cfg, &mv, &d, p1, out)?;
        }
        return Ok(());
    }

    let map = render_two_param_map(&m, &window, &opts)?;
    let mut loci = Vec::new();
    for (i, c) in map.loci.iter().enumerate() {
        let file = format!("loci/{i:02}_{}.csv", c.label.to_lowercase());
        out.write(&file, &c.to_csv(&window))?;
        let truncated = c.ends.iter().any(|e| matches!(e, LocusEnd::Truncated | LocusEnd::MaxSteps));
        loci.push(json!({
            "file": file,
            "kind": c.kind.as_str(),
            "label": c.label,
            "points": c.points.len(),
            "ends": c.ends.map(end_str),
            "truncated": truncated,
        }));
    }
    out.write_json("loci.json", &loci)?;
    out.write_json("events.json", &map.events_json())?;
    let mut table = Csv::with_header(&["slice", window.p2.as_str(), "label", "onset_kind", "onset_p1", "note"]);
    for s in &map.slices {
        let (label, kind, at) = match &s.excitability {
            Some(l) => (
                l.label.as_str().to_string(),
                l.onset_event.as_ref().map(|e| e.kind.as_str().to_string()).unwrap_or_default(),
                l.onset_event.as_ref().map(|e| fmt_num(e.param())).unwrap_or_default(),
            ),
            None => ("undecided".into(), String::new(), String::new()),
        };
        table.row_str(&[s.name.clone(), fmt_num(s.value), label, kind, at, s.undecided.clone().unwrap_or_default().replace(',', ";")]);
        write_diagram(out, &format!("slices/{}/", s.name), &s.diagram, true)?;
    }
    out.write("excitability.csv", table.as_str())?;
    out.note("window", serde_json::to_value(&window)?);
    out.note("slices", json!(SLICES.iter().map(|(n, v)| json!({ "name": n, "value": v })).collect::<Vec<_>>()));
    Ok(())
}

/// Midpoint between the homoclinic point and the nearest cycle fold below it.
fn between_hc_and_snc(d: &Diagram) -> Option<f64> {
    let hc = d.events_of(EventKind::HC).next()?.param();
    let snc = d
        .events_of(EventKind::SNC)
        .map(|e| e.param())
        .min_by(|a, b| (a - hc).abs().total_cmp(&(b - hc).abs()))?;
    Some(0.5 * (hc + snc))
}

fn phase_portrait(cfg: &RunConfig, slice_model: &DimlessModel, d: &Diagram, p1: f64, out: &mut OutDir) -> CliResult<()> {
    let handle = d.handle.as_str();
    let m = slice_model.with_param(handle, p1)?;

    let mut csv = Csv::with_header(&["V", "N_on_V_nullcline", "N_on_N_nullcline"]);
    for v in linspace(-1.0, 0.8, 721) {
        csv.row_nums(&[v, m.v_nullcline(v), m.n_inf(v)]);
    }
    out.write("portrait/nullclines.csv", csv.as_str())?;

    let mut eq = Csv::with_header(&["V", "N", "stability"]);
    let mut eq_json = Vec::new();
    for g in seed_equilibria(&m) {
        let Ok(r) = newton_equilibrium(&m, &g) else { continue };
        let (_, st) = linalg::classify_point(&m.jacobian(&r.state));
        eq.row_str(&[fmt_num(r.state[0]), fmt_num(r.state[1]), st.as_str().to_string()]);
        eq_json.push(json!({ "state": [r.state[0], r.state[1]], "stability": st.as_str() }));
    }
    out.write("portrait/equilibria.csv", eq.as_str())?;

    let opts = cfg.diagram_options(&m, d.range);
    let mut found: Vec<(f64, CycleStability)> = Vec::new();
    let mut cyc_json = Vec::new();
    // every crossing of p1 along every branch seeds one refinement
    let seeds = d.cycles.iter().flat_map(|b| {
        b.points.windows(2).filter(|w| (w[0].param - p1) * (w[1].param - p1) <= 0.0).map(|w| {
            if (w[0].param - p1).abs() <= (w[1].param - p1).abs() {
                &w[0]
            } else {
                &w[1]
            }
        })
    });
    for c in seeds {
        let Ok(sol) = refine_cycle(&m, handle, &c.anchor::<2>(), c.period, &opts.cycle) else { continue };
        if found.iter().any(|(t, _)| (t / sol.period - 1.0).abs() < 1e-6) {
            continue;
        }
        let file = format!("portrait/cycle_{}.csv", found.len());
        out.write(&file, &orbit_csv(&m, &sol, 400, opts.cycle.step)?)?;
        cyc_json.push(json!({ "file": file, "period": sol.period, "stability": sol.stability.as_str() }));
        found.push((sol.period, sol.stability));
    }

    // sample trajectories from a few fixed starts
    let starts = [[-0.6, 0.0], [-0.2, 0.3], [0.2, 0.6], [0.4, 0.05]];
    for (k, s) in starts.iter().enumerate() {
        let x0 = Vector::<2>::new(s[0], s[1]);
        let traj = integrate(cfg, &m, &x0, Some(100.0))?;
        out.write(&format!("portrait/trajectory_{k}.csv"), &traj.to_csv(&m.state_names()))?;
    }
    out.write_json(
        "portrait/portrait.json",
        &json!({ handle: p1, "slice": m.param("v3b")?, "equilibria": eq_json, "cycles": cyc_json }),
    )
}
