use approx::assert_abs_diff_eq;
use pacemaker_core::codim2::{continue_hopf_curve, LocusOptions, Window, SLICES};
use pacemaker_core::cycles::CycleStability;
use pacemaker_core::diagram::{one_parameter_diagram, Diagram, DiagramOptions};
use pacemaker_core::events::EventKind::{self, *};
use pacemaker_core::integrate::{classify_oscillation, Budget, Classification};
use pacemaker_core::linalg::det;
use pacemaker_core::model::{DimlessModel, Model, Vector, VectorField};

fn slice(v3b: f64) -> (DimlessModel, Diagram) {
    let m = DimlessModel::default().with_param("v3b", v3b).unwrap();
    let r = Window::dimless().range1;
    let d = one_parameter_diagram(&m, "v1b", r, &DiagramOptions::for_model(&m, r)).unwrap();
    (m, d)
}

fn state(e: &pacemaker_core::events::BifurcationEvent) -> Vector<2> {
    Vector::<2>::from_iterator(e.state.iter().copied())
}

#[test]
fn events_satisfy_their_defining_conditions() {
    let (m, d) = slice(SLICES[4].1);
    assert!(d.events.windows(2).all(|w| w[0].param() >= w[1].param()));
    for e in &d.events {
        let me = m.with_param("v1b", e.param()).unwrap();
        let x = state(e);
        match e.kind {
            SN => {
                assert!(me.eval(&x).amax() < 1e-9);
                assert!(det(&me.jacobian(&x)).abs() < 1e-6, "{e:?}");
            }
            HB => {
                let j = me.jacobian(&x);
                assert!(j.trace().abs() < 1e-6, "{e:?}");
                assert_abs_diff_eq!(e.diag("omega").unwrap(), det(&j).sqrt(), epsilon = 1e-6);
            }
            _ => {}
        }
    }
}

#[test]
fn stable_cycles_are_what_simulation_finds() {
    let (m, d) = slice(SLICES[3].1);
    let budget = Budget::default();
    // periods short enough for the default observation window
    let stable = d.cycles.iter().flat_map(|b| &b.points).filter(|c| c.stability == CycleStability::Stable && c.period < budget.observation / 10.0);
    for c in stable.step_by(10) {
        let mc = m.with_param("v1b", c.param).unwrap();
        let r = classify_oscillation(&mc, &c.anchor::<2>(), &budget);
        assert_eq!(r.classification, Classification::Periodic);
        assert_abs_diff_eq!(r.period.unwrap(), c.period, epsilon = 1e-3 * c.period);
    }
}

#[test]
fn hopf_locus_passes_through_the_slice_hopf_points() {
    // continue the Hopf points of l5 in two parameters and meet them again on l6
    let w = Window::dimless();
    let (m5, d5) = slice(SLICES[4].1);
    let (_, d6) = slice(SLICES[5].1);
    let mut hits = Vec::new();
    for seed in d5.events_of(HB) {
        let hopf = continue_hopf_curve(&m5, &w, seed, &LocusOptions::for_model(&m5, &w)).unwrap();
        assert!(hopf.crossings(SLICES[4].1).iter().any(|h| (h - seed.param()).abs() < 1e-6));
        hits.extend(hopf.crossings(SLICES[5].1));
    }
    let want: Vec<f64> = d6.events_of(HB).map(|e| e.param()).collect();
    assert_eq!(want.len(), 2);
    for p in want {
        assert!(hits.iter().any(|h| (h - p).abs() < 1e-4), "slice HB at {p}, locus crossings {hits:?}");
    }
}

#[test]
fn kinds_are_invariant_under_range_extension() {
    let m = DimlessModel::default();
    let kinds = |r: (f64, f64)| -> Vec<EventKind> { one_parameter_diagram(&m, "v1b", r, &DiagramOptions::for_model(&m, r)).unwrap().kinds() };
    assert_eq!(kinds((-0.5, -0.125)), [SN, SNIC, HB, SNC]);
    assert_eq!(kinds((-0.55, -0.1)), [SN, SNIC, HB, SNC]);
}
