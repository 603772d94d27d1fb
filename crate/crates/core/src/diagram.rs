//! One-parameter bifurcation diagrams: equilibrium branches, every periodic
//! branch reachable from simulation, and the merged, classified event list.

use serde::{Deserialize, Serialize};

use crate::cycles::{self, continue_cycle_both, CycleBranch, CycleOptions, CycleSolution, Termination};
use crate::equilibria::{equilibrium_branches, newton_equilibrium, seed_equilibria, BranchOptions, EquilibriumBranch};
use crate::error::Result;
use crate::events::{BifurcationEvent, EventKind};
use crate::integrate::{classify_with_window, linspace, Budget, Classification, Reversed};
use crate::io::{fmt_num, Csv};
use crate::linalg::{self, Stability};
use crate::model::{Model, Vector};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramOptions {
    pub branch: BranchOptions,
    pub cycle: CycleOptions,
    pub budget: Budget,
    /// Interior parameter values probed by simulation for cycles.
    pub probes: usize,
    /// Offset from each Hopf point, relative to the window width, used to probe
    /// for small cycles.
    pub hopf_offset: f64,
}

impl DiagramOptions {
    pub fn for_model<const N: usize, M: Model<N>>(m: &M, range: (f64, f64)) -> Self {
        Self {
            branch: BranchOptions::default(),
            cycle: CycleOptions::for_model(m, range),
            budget: Budget::for_model(m),
            probes: 24,
            hopf_offset: 2e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagram {
    pub handle: String,
    pub range: (f64, f64),
    pub equilibria: Vec<EquilibriumBranch>,
    pub cycles: Vec<CycleBranch>,
    /// Every event of the window, by decreasing parameter.
    pub events: Vec<BifurcationEvent>,
}

impl Diagram {
    pub fn kinds(&self) -> Vec<EventKind> {
        self.events.iter().map(|e| e.kind).collect()
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &BifurcationEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// `kind,param,label,source` rows.
    pub fn events_csv(&self) -> String {
        let mut csv = Csv::with_header(&["kind", "param", "label", "source"]);
        for e in &self.events {
            csv.row_str(&[e.kind.as_str().to_string(), fmt_num(e.param()), e.label.clone().unwrap_or_default(), e.source.clone()]);
        }
        csv.into_string()
    }
}

/// A probe that converged onto a periodic orbit.
struct Candidate {
    cycle: CycleSolution,
}

/// Simulates from near each non-attracting equilibrium at `p` (forward), and
/// from near each attracting focus in reverse time for planar systems.
fn probe<const N: usize, M: Model<N>>(model: &M, handle: &str, p: f64, opts: &DiagramOptions) -> Vec<Candidate> {
    let Ok(m) = model.with_param(handle, p) else { return Vec::new() };
    let s = m.state_scale();
    let mut out = Vec::new();
    for x in seed_equilibria(&m) {
        let (eigs, st) = linalg::classify_point(&m.jacobian(&x));
        let kick = |dir: f64| {
            let mut y = x;
            y[0] += dir * 1e-3 * s[0];
            y
        };
        let mut runs = Vec::new();
        if !st.is_stable() {
            runs.push(classify_with_window(&m, &kick(1.0), &opts.budget));
            if st == Stability::Saddle {
                runs.push(classify_with_window(&m, &kick(-1.0), &opts.budget));
            }
        } else if N == 2 && eigs.iter().any(|z| z.im != 0.0) {
            runs.push(classify_with_window(&Reversed(&m), &kick(1.0), &opts.budget));
        }
        for (rep, win) in runs {
            if rep.classification != Classification::Periodic {
                continue;
            }
            let (Some(win), Some(t)) = (win, rep.period) else { continue };
            if let Ok(c) = cycles::find_cycle(&m, handle, &win, t, &opts.cycle) {
                out.push(Candidate { cycle: c });
            }
        }
    }
    out
}

/// Whether `c` lies on an already computed branch.
fn covered(branches: &[CycleBranch], c: &CycleSolution, scale: f64) -> bool {
    branches.iter().any(|b| {
        b.points.windows(2).any(|w| {
            let (a, z) = (&w[0], &w[1]);
            if (c.param - a.param) * (c.param - z.param) > 0.0 {
                return false;
            }
            let t = if z.param == a.param { 0.0 } else { (c.param - a.param) / (z.param - a.param) };
            let period = a.period + t * (z.period - a.period);
            let vmax = a.v_max + t * (z.v_max - a.v_max);
            (c.period / period - 1.0).abs() < 1e-2 && (c.v_max - vmax).abs() < 1e-2 * scale
        })
    })
}

fn same_event(a: &BifurcationEvent, b: &BifurcationEvent, scale: f64) -> bool {
    a.kind == b.kind && (a.param() - b.param()).abs() <= 1e-6 * scale
}

/// Large-period or failed end of a cycle branch, with the tail solution.
fn blowup_tails(b: &CycleBranch) -> impl Iterator<Item = &CycleSolution> {
    let min_t = b.points.iter().map(|c| c.period).fold(f64::INFINITY, f64::min);
    let tails = [(b.ends[0], b.points.first()), (b.ends[1], b.points.last())];
    tails.into_iter().filter_map(move |(end, c)| {
        let c = c?;
        let blow = matches!(end, Termination::LargePeriod | Termination::IllConditioned) || (end == Termination::StepFailure && c.period > 2.0 * min_t);
        blow.then_some(c)
    })
}

/// Builds the diagram of `model` in `handle` over `range`.
pub fn one_parameter_diagram<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    range: (f64, f64),
    opts: &DiagramOptions,
) -> Result<Diagram> {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let equilibria = equilibrium_branches(model, handle, (lo, hi), &opts.branch)?;
    let scale = model.param_scale(handle);
    let width = hi - lo;

    let mut probes: Vec<f64> = linspace(lo, hi, opts.probes + 2)[1..=opts.probes].to_vec();
    for b in &equilibria {
        for e in b.events_of(EventKind::HB) {
            let d = opts.hopf_offset * width;
            probes.extend([e.param() - d, e.param() + d].into_iter().filter(|p| *p > lo && *p < hi));
        }
    }
    let found: Vec<Vec<Candidate>> = par::map(&probes, |p| probe(model, handle, *p, opts));

    let s0 = model.state_scale()[0];
    let mut branches: Vec<CycleBranch> = Vec::new();
    for c in found.into_iter().flatten() {
        if covered(&branches, &c.cycle, s0) {
            continue;
        }
        if let Ok(b) = continue_cycle_both(model, handle, &c.cycle, &opts.cycle) {
            branches.push(b);
        }
    }

    let mut events: Vec<BifurcationEvent> = equilibria.iter().flat_map(|b| b.events.iter().cloned()).collect();
    for b in &branches {
        for e in &b.events {
            if !events.iter().any(|x| same_event(x, e, scale)) {
                events.push(e.clone());
            }
        }
        for tail in blowup_tails(b) {
            let Ok(ev) = cycles::detect_homoclinic_termination(model, handle, tail, &equilibria, &opts.cycle) else { continue };
            match ev.kind {
                EventKind::SNIC => {
                    if let Some(sn) = events.iter_mut().find(|x| x.kind == EventKind::SN && (x.param() - ev.param()).abs() <= 1e-9 * scale) {
                        *sn = ev;
                    }
                }
                _ => {
                    if !events.iter().any(|x| same_event(x, &ev, scale)) {
                        events.push(ev);
                    }
                }
            }
        }
    }
    events.sort_by(|a, b| b.param().total_cmp(&a.param()));
    Ok(Diagram { handle: handle.to_string(), range: (lo, hi), equilibria, cycles: branches, events })
}

/// Equilibrium state of the branch through `guess` at the model's parameters.
pub fn equilibrium_near<const N: usize, M: Model<N>>(m: &M, guess: &Vector<N>) -> Option<Vector<N>> {
    newton_equilibrium(m, guess).ok().map(|r| r.state)
}
