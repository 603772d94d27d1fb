//! Continuation and detection checked on planar normal forms whose
//! bifurcation sets are known in closed form.

use approx::assert_abs_diff_eq;
use pacemaker_core::codim2::{continue_fold_curve, continue_hopf_curve, LocusEnd, LocusOptions, Window};
use pacemaker_core::diagram::{one_parameter_diagram, DiagramOptions};
use pacemaker_core::error::ModelError;
use pacemaker_core::events::EventKind;
use pacemaker_core::model::{Matrix, Model, Vector, VectorField};

#[derive(Debug, Clone, Copy)]
enum Form {
    /// x' = b1 + b2 x − x³, y' = −y
    Cusp,
    /// x' = y, y' = b1 + b2 y + x² − x y
    BogdanovTakens,
    /// Polar r' = b1 r + b2 r³ − r⁵, θ' = 1
    Bautin,
}

#[derive(Debug, Clone, Copy)]
struct Normal {
    form: Form,
    b: [f64; 2],
}

impl Normal {
    fn new(form: Form, b1: f64, b2: f64) -> Self {
        Self { form, b: [b1, b2] }
    }
}

impl VectorField<2> for Normal {
    fn eval(&self, u: &Vector<2>) -> Vector<2> {
        let [b1, b2] = self.b;
        let (x, y) = (u[0], u[1]);
        match self.form {
            Form::Cusp => Vector::<2>::new(b1 + b2 * x - x * x * x, -y),
            Form::BogdanovTakens => Vector::<2>::new(y, b1 + b2 * y + x * x - x * y),
            Form::Bautin => {
                let r2 = x * x + y * y;
                let g = b1 + b2 * r2 - r2 * r2;
                Vector::<2>::new(g * x - y, x + g * y)
            }
        }
    }
}

impl Model<2> for Normal {
    fn jacobian(&self, u: &Vector<2>) -> Matrix<2> {
        let [b1, b2] = self.b;
        let (x, y) = (u[0], u[1]);
        match self.form {
            Form::Cusp => Matrix::<2>::new(b2 - 3.0 * x * x, 0.0, 0.0, -1.0),
            Form::BogdanovTakens => Matrix::<2>::new(0.0, 1.0, 2.0 * x - y, b2 - x),
            Form::Bautin => {
                let r2 = x * x + y * y;
                let g = b1 + b2 * r2 - r2 * r2;
                let dg = 2.0 * b2 - 4.0 * r2; // ∂g/∂(x or y) divided by the coordinate
                Matrix::<2>::new(g + dg * x * x, dg * x * y - 1.0, 1.0 + dg * x * y, g + dg * y * y)
            }
        }
    }

    fn state_names(&self) -> [&'static str; 2] {
        ["x", "y"]
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["b1", "b2"]
    }

    fn param(&self, name: &str) -> Result<f64, ModelError> {
        match name {
            "b1" => Ok(self.b[0]),
            "b2" => Ok(self.b[1]),
            _ => Err(ModelError::UnknownParameter(name.into())),
        }
    }

    fn set_param(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        match name {
            "b1" => self.b[0] = value,
            "b2" => self.b[1] = value,
            _ => return Err(ModelError::UnknownParameter(name.into())),
        }
        Ok(())
    }
}

fn window(r1: (f64, f64), r2: (f64, f64)) -> Window {
    Window::new("b1", r1, "b2", r2)
}

#[test]
fn cusp_folds_lie_on_the_semicubical_parabola() {
    let m = Normal::new(Form::Cusp, 0.0, 1.0);
    let r = (-1.0, 1.0);
    let d = one_parameter_diagram(&m, "b1", r, &DiagramOptions::for_model(&m, r)).unwrap();
    let sn: Vec<f64> = d.events_of(EventKind::SN).map(|e| e.param()).collect();
    assert_eq!(sn.len(), 2, "{:?}", d.kinds());
    let b1 = 2.0 / (3.0 * 3f64.sqrt());
    for p in &sn {
        assert_abs_diff_eq!(p.abs(), b1, epsilon = 1e-6);
    }
    assert!(d.cycles.iter().all(|c| c.points.is_empty()));

    let w = window((-1.0, 1.0), (-0.5, 1.0));
    let start = d.events_of(EventKind::SN).next().unwrap();
    let curves = continue_fold_curve(&m, &w, start, &LocusOptions::for_model(&m, &w)).unwrap();
    let pts: Vec<[f64; 2]> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.params)).collect();
    assert!(pts.len() > 10);
    for [b1, b2] in &pts {
        assert_abs_diff_eq!(27.0 * b1 * b1, 4.0 * b2.powi(3), epsilon = 1e-6);
    }
    let cusp: Vec<_> = curves.iter().flat_map(|c| c.events.iter()).filter(|e| e.kind == EventKind::CP).collect();
    assert!(!cusp.is_empty(), "no cusp point");
    assert_abs_diff_eq!(cusp[0].params[0], 0.0, epsilon = 1e-4);
    assert_abs_diff_eq!(cusp[0].params[1], 0.0, epsilon = 1e-3);
}

#[test]
fn bogdanov_takens_hopf_line_ends_at_the_origin() {
    let b2 = -0.5;
    let m = Normal::new(Form::BogdanovTakens, 0.0, b2);
    let r = (-1.0, 0.5);
    let d = one_parameter_diagram(&m, "b1", r, &DiagramOptions::for_model(&m, r)).unwrap();
    let hb = d.events_of(EventKind::HB).next().expect("Hopf point");
    // trace b2 − x vanishes at x = b2 = −√(−b1); ω² = det = −2x
    assert_abs_diff_eq!(hb.param(), -b2 * b2, epsilon = 1e-6);
    assert_abs_diff_eq!(hb.diag("omega").unwrap(), (-2.0 * b2).sqrt(), epsilon = 1e-5);
    let sn = d.events_of(EventKind::SN).next().expect("fold");
    assert_abs_diff_eq!(sn.param(), 0.0, epsilon = 1e-8);

    let w = window((-1.0, 0.5), (-1.0, 0.5));
    let hopf = continue_hopf_curve(&m, &w, hb, &LocusOptions::for_model(&m, &w)).unwrap();
    for p in &hopf.points {
        assert_abs_diff_eq!(p.params[0], -p.params[1] * p.params[1], epsilon = 1e-6);
        assert!(p.params[1] <= 1e-6);
    }
    assert!(hopf.ends.contains(&LocusEnd::Codim2(EventKind::BT)), "{:?}", hopf.ends);
    let bt = hopf.events.iter().find(|e| e.kind == EventKind::BT).expect("BT event");
    assert_abs_diff_eq!(bt.params[0], 0.0, epsilon = 1e-3);
    assert_abs_diff_eq!(bt.params[1], 0.0, epsilon = 3e-2);
}

#[test]
fn bautin_lyapunov_sign_and_generalised_hopf() {
    let r = (-0.2, 0.1);
    for (b2, supercritical) in [(-0.5, true), (0.5, false)] {
        let m = Normal::new(Form::Bautin, 0.0, b2);
        let d = one_parameter_diagram(&m, "b1", r, &DiagramOptions::for_model(&m, r)).unwrap();
        let hb = d.events_of(EventKind::HB).next().expect("Hopf point");
        assert_abs_diff_eq!(hb.param(), 0.0, epsilon = 1e-8);
        let l1 = hb.diag("l1").unwrap();
        assert_eq!(l1 < 0.0, supercritical, "b2 = {b2}: l1 = {l1}");
    }

    let w = window((-0.2, 0.1), (-0.5, 0.5));
    let m = Normal::new(Form::Bautin, 0.0, 0.4);
    let d = one_parameter_diagram(&m, "b1", w.range1, &DiagramOptions::for_model(&m, w.range1)).unwrap();
    let hb = d.events_of(EventKind::HB).next().unwrap();
    let hopf = continue_hopf_curve(&m, &w, hb, &LocusOptions::for_model(&m, &w)).unwrap();
    let gh: Vec<_> = hopf.events.iter().filter(|e| e.kind == EventKind::GH).collect();
    assert_eq!(gh.len(), 1);
    assert_abs_diff_eq!(gh[0].params[1], 0.0, epsilon = 1e-5);
}

#[test]
fn bautin_cycle_fold_at_the_quarter_square() {
    // r² = (b2 ± √(b2² + 4 b1)) / 2 merge at b1 = −b2²/4
    let b2 = 0.5;
    let m = Normal::new(Form::Bautin, 0.0, b2);
    let r = (-0.2, 0.1);
    let d = one_parameter_diagram(&m, "b1", r, &DiagramOptions::for_model(&m, r)).unwrap();
    let snc = d.events_of(EventKind::SNC).next().unwrap_or_else(|| panic!("no cycle fold in {:?}", d.kinds()));
    assert_abs_diff_eq!(snc.param(), -b2 * b2 / 4.0, epsilon = 1e-4);
    for c in d.cycles.iter().flat_map(|b| &b.points) {
        // every cycle is a circle of period 2π
        assert_abs_diff_eq!(c.period, std::f64::consts::TAU, epsilon = 1e-4);
        let r2 = c.v_max * c.v_max;
        let g = c.param + b2 * r2 - r2 * r2;
        assert!(g.abs() < 1e-5, "cycle at b1 = {} off the circle", c.param);
    }
}
