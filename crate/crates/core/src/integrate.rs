//! Fixed-step RK4 integration, oscillation classification, channel-block
//! experiments and brute-force parameter sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{IntegrateError, ModelError};
use crate::io::Csv;
use crate::model::{DimensionalParams, FullModel, Model, Vector, VectorField};
use crate::par;

/// Step used by the published simulations, in each model's own (rescaled) time.
pub const DEFAULT_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<Vector<N>>,
    pub step: f64,
}

impl<const N: usize> Trajectory<N> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&Vector<N>> {
        self.states.last()
    }

    pub fn to_csv(&self, names: &[&str; N]) -> String {
        let mut header = vec!["t".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        let mut csv = Csv::with_header(&header);
        let mut row = Vec::with_capacity(N + 1);
        for (t, x) in self.times.iter().zip(&self.states) {
            row.clear();
            row.push(*t);
            row.extend(x.iter().copied());
            csv.row_nums(&row);
        }
        csv.into_string()
    }
}

/// The vector field run backwards in time.
#[derive(Debug, Clone, Copy)]
pub struct Reversed<'a, F>(pub &'a F);

impl<const N: usize, F: VectorField<N>> VectorField<N> for Reversed<'_, F> {
    fn eval(&self, x: &Vector<N>) -> Vector<N> {
        -self.0.eval(x)
    }

    fn state_scale(&self) -> Vector<N> {
        self.0.state_scale()
    }
}

#[inline]
pub fn rk4_step<const N: usize, F: VectorField<N> + ?Sized>(f: &F, x: &Vector<N>, h: f64) -> Vector<N> {
    let k1 = f.eval(x);
    let k2 = f.eval(&(x + k1 * (h / 2.0)));
    let k3 = f.eval(&(x + k2 * (h / 2.0)));
    let k4 = f.eval(&(x + k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

fn check_setup(step: f64, t0: f64, t_end: f64) -> Result<(), IntegrateError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(IntegrateError::Setup(format!("step must be positive, got {step}")));
    }
    if !(t0.is_finite() && t_end.is_finite()) || t_end < t0 {
        return Err(IntegrateError::Setup(format!("bad time span [{t0}, {t_end}]")));
    }
    Ok(())
}

/// Integrates on `[t0, t_end]` storing every step; the last step is shortened
/// to land exactly on `t_end`.
pub fn rk4_integrate<const N: usize, F: VectorField<N> + ?Sized>(
    f: &F,
    x0: &Vector<N>,
    t0: f64,
    t_end: f64,
    step: f64,
) -> Result<Trajectory<N>, IntegrateError> {
    check_setup(step, t0, t_end)?;
    let n_full = ((t_end - t0) / step).floor() as usize;
    let mut times = Vec::with_capacity(n_full + 2);
    let mut states = Vec::with_capacity(n_full + 2);
    times.push(t0);
    states.push(*x0);
    let mut x = *x0;
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 * step;
        let remaining = t_end - t;
        if remaining <= step * 1e-9 {
            break;
        }
        let (h, t_next) = if remaining < step * (1.0 + 1e-9) { (remaining, t_end) } else { (step, t0 + (k + 1) as f64 * step) };
        x = rk4_step(f, &x, h);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(IntegrateError::BlowUp { time: t_next });
        }
        times.push(t_next);
        states.push(x);
        k += 1;
        if t_next == t_end {
            break;
        }
    }
    Ok(Trajectory { times, states, step })
}

/// Advances the state by `duration` without storing the path.
pub fn rk4_advance<const N: usize, F: VectorField<N> + ?Sized>(
    f: &F,
    x0: &Vector<N>,
    duration: f64,
    step: f64,
) -> Result<Vector<N>, IntegrateError> {
    check_setup(step, 0.0, duration)?;
    let n = (duration / step).floor() as usize;
    let mut x = *x0;
    for k in 0..n {
        x = rk4_step(f, &x, step);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(IntegrateError::BlowUp { time: (k + 1) as f64 * step });
        }
    }
    let rest = duration - n as f64 * step;
    if rest > step * 1e-9 {
        x = rk4_step(f, &x, rest);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(IntegrateError::BlowUp { time: duration });
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Oscillation classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Quiescent,
    Periodic,
    Undecided,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Quiescent => "quiescent",
            Classification::Periodic => "periodic",
            Classification::Undecided => "undecided",
        }
    }
}

/// Time windows and step of the classifier, in the model's own time unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub transient: f64,
    pub observation: f64,
    pub step: f64,
    /// Observation windows tried before giving up.
    pub max_windows: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self { transient: 500.0, observation: 500.0, step: DEFAULT_STEP, max_windows: 6 }
    }
}

impl Budget {
    /// Default windows expressed in a model whose time unit is `time_scale`
    /// dimensionless units long.
    pub fn scaled(time_scale: f64) -> Self {
        let d = Self::default();
        Self {
            transient: d.transient * time_scale,
            observation: d.observation * time_scale,
            step: d.step * time_scale,
            max_windows: d.max_windows,
        }
    }

    pub fn for_model<const N: usize, M: Model<N>>(m: &M) -> Self {
        Self::scaled(m.time_scale())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub classification: Classification,
    pub period: Option<f64>,
    pub v_min: f64,
    pub v_max: f64,
    /// Relative spread of the inter-crossing intervals (periodic candidates only).
    pub period_cv: Option<f64>,
    pub final_state: Vec<f64>,
    /// Total integration time used, transient included.
    pub elapsed: f64,
}

const QUIESCENT_AMPLITUDE: f64 = 1e-6;
const MIN_CROSSINGS: usize = 5;
const MAX_PERIOD_CV: f64 = 0.01;

/// Upward crossings of `level` by the sampled series, linearly interpolated.
fn upward_crossings(times: &[f64], xs: &[f64], level: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..xs.len() {
        let (a, b) = (xs[i - 1] - level, xs[i] - level);
        if a < 0.0 && b >= 0.0 {
            let s = a / (a - b);
            out.push(times[i - 1] + s * (times[i] - times[i - 1]));
        }
    }
    out
}

/// Classifies long-time behaviour and returns the last observation window.
pub fn classify_with_window<const N: usize, F: VectorField<N> + ?Sized>(
    f: &F,
    x0: &Vector<N>,
    budget: &Budget,
) -> (OscillationReport, Option<Trajectory<N>>) {
    let scale = f.state_scale();
    let undecided = |x: &Vector<N>, elapsed: f64| OscillationReport {
        classification: Classification::Undecided,
        period: None,
        v_min: f64::NAN,
        v_max: f64::NAN,
        period_cv: None,
        final_state: x.iter().copied().collect(),
        elapsed,
    };
    let mut x = match rk4_advance(f, x0, budget.transient, budget.step) {
        Ok(x) => x,
        Err(_) => return (undecided(x0, budget.transient), None),
    };
    let mut t = budget.transient;
    let mut last_report = undecided(&x, t);
    let mut last_window = None;
    for _ in 0..budget.max_windows.max(1) {
        let traj = match rk4_integrate(f, &x, t, t + budget.observation, budget.step) {
            Ok(tr) => tr,
            Err(_) => return (undecided(&x, t), None),
        };
        t += budget.observation;
        x = *traj.last().unwrap();
        let first: Vec<f64> = traj.states.iter().map(|s| s[0]).collect();
        let (v_min, v_max) = first.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let amp = (0..N)
            .map(|k| {
                let (lo, hi) = traj
                    .states
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s[k]), b.max(s[k])));
                (hi - lo) / scale[k]
            })
            .fold(0.0, f64::max);
        let mut report = OscillationReport {
            classification: Classification::Undecided,
            period: None,
            v_min,
            v_max,
            period_cv: None,
            final_state: x.iter().copied().collect(),
            elapsed: t,
        };
        if amp < QUIESCENT_AMPLITUDE {
            report.classification = Classification::Quiescent;
            return (report, Some(traj));
        }
        let mid = 0.5 * (v_min + v_max);
        let cross = upward_crossings(&traj.times, &first, mid);
        if cross.len() >= MIN_CROSSINGS {
            let iv: Vec<f64> = cross.windows(2).map(|w| w[1] - w[0]).collect();
            let mean = iv.iter().sum::<f64>() / iv.len() as f64;
            let var = iv.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / iv.len() as f64;
            let cv = var.sqrt() / mean;
            report.period_cv = Some(cv);
            // peak of the first and last full cycle must agree, otherwise the
            // oscillation is still growing or decaying
            let peak = |a: f64, b: f64| {
                traj.times
                    .iter()
                    .zip(&first)
                    .filter(|(t, _)| **t >= a && **t <= b)
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let n = cross.len();
            let drift = (peak(cross[0], cross[1]) - peak(cross[n - 2], cross[n - 1])).abs();
            if cv < MAX_PERIOD_CV && drift <= MAX_PERIOD_CV * (v_max - v_min) {
                report.classification = Classification::Periodic;
                report.period = Some(mean);
                return (report, Some(traj));
            }
        }
        last_report = report;
        last_window = Some(traj);
    }
    (last_report, last_window)
}

pub fn classify_oscillation<const N: usize, F: VectorField<N> + ?Sized>(
    f: &F,
    x0: &Vector<N>,
    budget: &Budget,
) -> OscillationReport {
    classify_with_window(f, x0, budget).0
}

// ---------------------------------------------------------------------------
// Channel block
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Conductance {
    #[serde(rename = "gL")]
    Leak,
    #[serde(rename = "gCa")]
    Calcium,
    #[serde(rename = "gK")]
    Potassium,
}

impl Conductance {
    pub const ALL: [Conductance; 3] = [Conductance::Leak, Conductance::Calcium, Conductance::Potassium];

    pub fn name(self) -> &'static str {
        match self {
            Conductance::Leak => "gL",
            Conductance::Calcium => "gCa",
            Conductance::Potassium => "gK",
        }
    }
}

/// Sets one conductance of the full model to zero and classifies the
/// trajectory started from the origin.
pub fn channel_block(which: Conductance, p: &DimensionalParams, budget: &Budget) -> OscillationReport {
    let mut q = *p;
    match which {
        Conductance::Leak => q.g_l = 0.0,
        Conductance::Calcium => q.g_ca = 0.0,
        Conductance::Potassium => q.g_k = 0.0,
    }
    classify_oscillation(&FullModel::new(q), &Vector::<3>::zeros(), budget)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeedPolicy<const N: usize> {
    /// Every sample starts from the same state (runs in parallel).
    Fixed(Vector<N>),
    /// Each sample starts from the previous sample's final state.
    ContinueFinal(Vector<N>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub param: f64,
    pub report: OscillationReport,
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Classifies the long-time behaviour at `samples` evenly spaced values of one parameter.
pub fn sweep<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    range: (f64, f64),
    samples: usize,
    policy: SeedPolicy<N>,
    budget: &Budget,
) -> Result<Vec<SweepSample>, ModelError> {
    if samples < 2 {
        return Err(ModelError::InvalidValue { name: "samples".into(), reason: "need at least 2".into() });
    }
    model.param(handle)?;
    let grid = linspace(range.0, range.1, samples);
    match policy {
        SeedPolicy::Fixed(x0) => {
            let out = par::map(&grid, |&p| {
                let m = model.with_param(handle, p).expect("handle checked");
                SweepSample { param: p, report: classify_oscillation(&m, &x0, budget) }
            });
            Ok(out)
        }
        SeedPolicy::ContinueFinal(x0) => {
            let mut x = x0;
            let mut out = Vec::with_capacity(samples);
            for &p in &grid {
                let m = model.with_param(handle, p)?;
                let report = classify_oscillation(&m, &x, budget);
                if report.final_state.iter().all(|v| v.is_finite()) {
                    x = Vector::<N>::from_iterator(report.final_state.iter().copied());
                }
                out.push(SweepSample { param: p, report });
            }
            Ok(out)
        }
    }
}

pub fn sweep_csv(samples: &[SweepSample]) -> String {
    let mut csv = Csv::with_header(&["param", "classification", "period", "v_min", "v_max"]);
    for s in samples {
        let r = &s.report;
        csv.row_str(&[
            crate::io::fmt_num(s.param),
            r.classification.as_str().to_string(),
            r.period.map(crate::io::fmt_num).unwrap_or_default(),
            crate::io::fmt_num(r.v_min),
            crate::io::fmt_num(r.v_max),
        ]);
    }
    csv.into_string()
}

/// Bisects for the switch of a boolean predicate between `lo` (where it is
/// `at_lo`) and `hi`, to an interval of width `tol`.
pub fn bisect_boundary(mut lo: f64, mut hi: f64, tol: f64, pred: impl Fn(f64) -> bool) -> (f64, f64) {
    let at_lo = pred(lo);
    while (hi - lo).abs() > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DimlessModel;

    struct Decay;
    impl VectorField<1> for Decay {
        fn eval(&self, x: &Vector<1>) -> Vector<1> {
            -x
        }
    }

    struct Rotation;
    impl VectorField<2> for Rotation {
        fn eval(&self, x: &Vector<2>) -> Vector<2> {
            Vector::<2>::new(-x[1], x[0])
        }
    }

    /// Hopf normal form with a stable unit circle, period 2π.
    struct Circle;
    impl VectorField<2> for Circle {
        fn eval(&self, x: &Vector<2>) -> Vector<2> {
            let r2 = x.norm_squared();
            Vector::<2>::new(x[0] * (1.0 - r2) - x[1], x[1] * (1.0 - r2) + x[0])
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let x0 = Vector::<1>::new(1.0);
        let err = |h: f64| {
            let x = rk4_advance(&Decay, &x0, 2.0, h).unwrap();
            (x[0] - (-2f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn final_step_lands_on_end() {
        let tr = rk4_integrate(&Decay, &Vector::<1>::new(1.0), 0.0, 1.03, 0.1).unwrap();
        assert_eq!(*tr.times.last().unwrap(), 1.03);
        assert_eq!(tr.times.len(), tr.states.len());
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert!((tr.times[5] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn time_reversal_on_linear_system() {
        let x0 = Vector::<2>::new(1.0, 0.3);
        let fwd = rk4_advance(&Rotation, &x0, 10.0, 0.01).unwrap();
        let back = rk4_advance(&Reversed(&Rotation), &fwd, 10.0, 0.01).unwrap();
        assert!((back - x0).norm() < 1e-10);
    }

    #[test]
    fn fixed_point_is_preserved() {
        let tr = rk4_integrate(&Decay, &Vector::<1>::zeros(), 0.0, 5.0, 0.05).unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn blow_up_is_reported() {
        struct Quad;
        impl VectorField<1> for Quad {
            fn eval(&self, x: &Vector<1>) -> Vector<1> {
                Vector::<1>::new(x[0] * x[0])
            }
        }
        let r = rk4_integrate(&Quad, &Vector::<1>::new(1.0), 0.0, 5.0, 0.01);
        match r {
            Err(IntegrateError::BlowUp { time }) => assert!(time > 0.9 && time < 1.5, "{time}"),
            other => panic!("{other:?}"),
        }
        assert!(rk4_integrate(&Decay, &Vector::<1>::new(1.0), 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn classifier_on_manufactured_systems() {
        let b = Budget { transient: 50.0, observation: 60.0, step: 0.01, max_windows: 3 };
        let r = classify_oscillation(&Circle, &Vector::<2>::new(0.1, 0.0), &b);
        assert_eq!(r.classification, Classification::Periodic);
        assert!((r.period.unwrap() - std::f64::consts::TAU).abs() < 1e-3);
        let b = Budget { transient: 50.0, observation: 10.0, step: 0.05, max_windows: 3 };
        let r = classify_oscillation(&Decay, &Vector::<1>::new(1.0), &b);
        assert_eq!(r.classification, Classification::Quiescent);
        assert!(r.v_max - r.v_min < 1e-6);
    }

    #[test]
    fn classifier_is_deterministic() {
        let m = DimlessModel::default();
        let b = Budget::default();
        let a = classify_oscillation(&m, &Vector::<2>::zeros(), &b);
        let c = classify_oscillation(&m, &Vector::<2>::zeros(), &b);
        assert_eq!(a, c);
    }

    #[test]
    fn dimless_defaults_oscillate_and_right_of_snic_is_quiet() {
        let m = DimlessModel::default();
        let r = classify_oscillation(&m, &Vector::<2>::zeros(), &Budget::default());
        assert_eq!(r.classification, Classification::Periodic);
        let m = m.with_param("v1b", -0.125).unwrap();
        let r = classify_oscillation(&m, &Vector::<2>::zeros(), &Budget::default());
        assert_eq!(r.classification, Classification::Quiescent);
    }

    #[test]
    fn sweep_rejects_bad_input() {
        let m = DimlessModel::default();
        let b = Budget::default();
        assert!(sweep(&m, "v1b", (-0.5, -0.1), 1, SeedPolicy::Fixed(Vector::<2>::zeros()), &b).is_err());
        assert!(sweep(&m, "nope", (-0.5, -0.1), 3, SeedPolicy::Fixed(Vector::<2>::zeros()), &b).is_err());
    }

    #[test]
    fn bisect_finds_threshold() {
        let (lo, hi) = bisect_boundary(0.0, 1.0, 1e-6, |x| x < 0.3217);
        assert!(lo <= 0.3217 && hi >= 0.3217 && hi - lo <= 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rk4_decay_is_fourth_order_accurate(k in 0.1f64..2.0, x0 in -5.0f64..5.0) {
                struct Lin(f64);
                impl VectorField<1> for Lin {
                    fn eval(&self, x: &Vector<1>) -> Vector<1> {
                        x * -self.0
                    }
                }
                let h = 0.05;
                let traj = rk4_integrate(&Lin(k), &Vector::<1>::new(x0), 0.0, 1.0, h).unwrap();
                let exact = x0 * (-k).exp();
                // leading global error over unit time is k (kh)⁴ / 120 |x0|
                let bound = k * (k * h).powi(4) / 100.0 * x0.abs() + 1e-14;
                prop_assert!((traj.last().unwrap()[0] - exact).abs() <= bound);
            }

            #[test]
            fn linspace_hits_both_ends(lo in -10.0f64..10.0, w in 1e-3f64..10.0, n in 2usize..50) {
                let g = linspace(lo, lo + w, n);
                prop_assert_eq!(g.len(), n);
                prop_assert_eq!(g[0], lo);
                prop_assert!((g[n - 1] - (lo + w)).abs() <= 1e-12 * (1.0 + lo.abs() + w));
                prop_assert!(g.windows(2).all(|p| p[1] > p[0]));
            }

            #[test]
            fn bisection_brackets_the_switch(c in 0.01f64..0.99, tol in 1e-8f64..1e-2) {
                let (lo, hi) = bisect_boundary(0.0, 1.0, tol, |x| x < c);
                prop_assert!(lo < c && hi >= c && hi - lo <= tol);
            }
        }
    }
}
