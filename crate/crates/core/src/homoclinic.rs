//! Homoclinic connections of planar systems via a splitting function.
//!
//! The unstable manifold of a saddle is followed forward and the stable
//! manifold backward until each reaches its first maximum of the first state
//! component above a threshold. The signed gap between the two maxima
//! vanishes exactly at a homoclinic connection.

use crate::cycles::{CycleOptions, CycleSolution};
use crate::equilibria::newton_equilibrium;
use crate::error::{Result, SolveError};
use crate::integrate::{rk4_step, Reversed};
use crate::linalg;
use crate::model::{Model, Vector, VectorField};

/// Initial offset from the equilibrium along an eigendirection, scaled units.
pub const MANIFOLD_OFFSET: f64 = 1e-7;

/// First maximum of component 0 above `floor`, refined by a parabola through
/// the three grid points around it. Returns the interpolated state.
pub fn first_peak<const N: usize, F: VectorField<N> + ?Sized>(
    f: &F,
    x0: &Vector<N>,
    floor: f64,
    step: f64,
    t_lim: f64,
) -> Option<Vector<N>> {
    let mut prev2 = *x0;
    let mut prev = rk4_step(f, x0, step);
    let n = (t_lim / step).ceil() as usize;
    for _ in 0..n {
        let x = rk4_step(f, &prev, step);
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        if prev[0] >= prev2[0] && prev[0] > x[0] && prev[0] > floor {
            // vertex of the parabola through (−1, prev2), (0, prev), (1, x)
            let den = prev2[0] - 2.0 * prev[0] + x[0];
            let s = if den.abs() > 0.0 { 0.5 * (prev2[0] - x[0]) / den } else { 0.0 };
            let s = s.clamp(-1.0, 1.0);
            let a = (prev2 + x) * 0.5 - prev;
            let b = (x - prev2) * 0.5;
            return Some(prev + b * s + a * (s * s));
        }
        prev2 = prev;
        prev = x;
    }
    None
}

/// Signed splitting between the manifolds of the equilibrium `x_eq`:
/// `unstable` is followed forward from an offset `unstable_offset`, each
/// `stable` candidate backward, and the candidate whose peak lies closest to
/// the unstable peak is used.
#[allow(clippy::too_many_arguments)]
pub fn manifold_split<const N: usize, M: Model<N>>(
    m: &M,
    x_eq: &Vector<N>,
    unstable: &Vector<N>,
    unstable_offset: f64,
    stable: &[Vector<N>],
    floor: f64,
    step: f64,
    t_lim: f64,
) -> Result<f64> {
    let s = m.state_scale();
    let push = |d: &Vector<N>, off: f64| x_eq + d.component_mul(&s) * (off / d.norm());
    let up = first_peak(m, &push(unstable, unstable_offset), floor, step, t_lim)
        .ok_or_else(|| SolveError::Degenerate("unstable manifold does not reach the section".into()))?;
    let rev = Reversed(m);
    let down = stable
        .iter()
        .filter_map(|d| first_peak(&rev, &push(d, MANIFOLD_OFFSET), floor, step, t_lim))
        .min_by(|a, b| (a - up).component_div(&s).norm().total_cmp(&(b - up).component_div(&s).norm()))
        .ok_or_else(|| SolveError::Degenerate("stable manifold does not reach the section".into()))?;
    Ok((up[0] - down[0]) / s[0])
}

/// Scaled-coordinate eigendirections of a planar saddle: the unstable one
/// oriented towards increasing first component and both stable orientations.
pub fn saddle_directions<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>) -> Result<(Vector<N>, [Vector<N>; 2])> {
    let j = crate::equilibria::scaled_jacobian(m, x);
    let e = linalg::eigenvalues(&j);
    if e.iter().any(|z| z.im.abs() > 1e-12) {
        return Err(SolveError::Degenerate("equilibrium is not a real saddle".into()));
    }
    let lu = e.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let ls = e.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if !(lu > 0.0 && ls < 0.0) {
        return Err(SolveError::Degenerate("equilibrium is not a saddle".into()));
    }
    let mut vu = linalg::real_eigenvector(&j, lu);
    if vu[0] < 0.0 {
        vu = -vu;
    }
    let vs = linalg::real_eigenvector(&j, ls);
    Ok((vu, [vs, -vs]))
}

/// Splitting function at the model's current parameters around the saddle
/// nearest `guess`. Returns the split and the refined saddle.
pub fn saddle_split<const N: usize, M: Model<N>>(m: &M, guess: &Vector<N>, floor: f64, step: f64, t_lim: f64) -> Result<(f64, Vector<N>)> {
    let xs = newton_equilibrium(m, guess)?.state;
    let (vu, vs) = saddle_directions(m, &xs)?;
    Ok((manifold_split(m, &xs, &vu, MANIFOLD_OFFSET, &vs, floor, step, t_lim)?, xs))
}

/// Offset along the centre direction of a saddle-node, scaled units.
pub const CENTRE_OFFSET: f64 = 1e-3;

/// Centre geometry of a planar saddle-node: the centre direction oriented
/// so the flow leaves along it, the strong stable direction, the quadratic
/// coefficient of the centre dynamics (with the centre direction oriented by
/// a non-negative first component) and the nonzero eigenvalue. Scaled units.
pub fn saddle_node_geometry<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>) -> (Vector<N>, Vector<N>, f64, f64) {
    let js = crate::equilibria::scaled_jacobian(m, x);
    let e = linalg::eigenvalues(&js);
    let other = e.iter().map(|z| z.re).max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
    let mut q = linalg::real_eigenvector(&js, 0.0);
    if q[0] < 0.0 {
        q = -q;
    }
    let mut w = linalg::real_eigenvector(&js.transpose(), 0.0);
    if w.dot(&q) < 0.0 {
        w = -w;
    }
    let s = m.state_scale();
    let g = |z: &Vector<N>| crate::equilibria::scaled_rhs(m, &(x + z.component_mul(&s)));
    let d = 1e-4;
    let a = 0.5 * w.dot(&(g(&(q * d)) + g(&(q * -d)))) / (d * d * w.dot(&q));
    let vs = linalg::real_eigenvector(&js, other);
    let out = if a >= 0.0 { q } else { -q };
    (out, vs, a, other)
}

/// Time to leave a saddle-node along its centre direction from
/// [`CENTRE_OFFSET`], model units.
fn centre_escape_time<const N: usize, M: Model<N>>(m: &M, a: f64) -> f64 {
    4.0 * m.time_scale() / (a.abs() * CENTRE_OFFSET).max(1e-12)
}

/// Splitting at a planar saddle-node between its outgoing centre manifold
/// (forward) and its strong stable manifold (backward). It vanishes where a
/// homoclinic orbit returns along the non-central direction. `t_lim` is
/// allowed on top of the slow escape from the saddle-node.
pub fn fold_split<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>, step: f64, t_lim: f64) -> Result<f64> {
    let (out, vs, a, other) = saddle_node_geometry(m, x);
    if other >= 0.0 {
        return Err(SolveError::Degenerate("saddle-node has no strong stable direction".into()));
    }
    let floor = x[0] + 1e-3 * m.state_scale()[0];
    let t_lim = t_lim + centre_escape_time(m, a);
    manifold_split(m, x, &out, CENTRE_OFFSET, &[vs, -vs], floor, step, t_lim)
}

/// Whether the outgoing centre manifold of a saddle-node returns to it, i.e.
/// the fold lies on an invariant circle.
pub fn fold_returns<const N: usize, M: Model<N>>(m: &M, x: &Vector<N>, step: f64, t_lim: f64) -> bool {
    let (out, _, a, _) = saddle_node_geometry(m, x);
    let t_lim = t_lim + 2.0 * centre_escape_time(m, a);
    let s = m.state_scale();
    let dist = |y: &Vector<N>| (y - x).component_div(&s).norm();
    let mut y = x + out.component_mul(&s) * CENTRE_OFFSET;
    let mut left = false;
    let n = (t_lim / step).ceil() as usize;
    for _ in 0..n {
        y = rk4_step(m, &y, step);
        if !y.iter().all(|v| v.is_finite()) {
            return false;
        }
        let d = dist(&y);
        if !left {
            left = d > 0.1;
        } else if d < 1e-2 {
            return true;
        }
    }
    false
}

/// Locates the homoclinic parameter near the large-period end of a cycle
/// branch by bracketing and bisecting the splitting function.
pub fn refine_homoclinic<const N: usize, M: Model<N>>(
    model: &M,
    handle: &str,
    tail: &CycleSolution,
    saddle: &Vector<N>,
    opts: &CycleOptions,
) -> Result<f64> {
    let floor = 0.5 * (saddle[0] + tail.v_max);
    let t_lim = 4.0 * tail.period + 100.0 * model.time_scale();
    let step = opts.step;
    let mut guess = *saddle;
    let split = |p: f64, guess: &mut Vector<N>| -> Result<f64> {
        let m = model.with_param(handle, p)?;
        let (g, xs) = saddle_split(&m, guess, floor, step, t_lim)?;
        *guess = xs;
        Ok(g)
    };
    let p0 = tail.param;
    let g0 = split(p0, &mut guess)?;
    let scale = model.param_scale(handle);
    let mut d = 1e-7 * scale;
    let mut bracket = None;
    'grow: for _ in 0..40 {
        for p in [p0 + d, p0 - d] {
            let mut gs = guess;
            if let Ok(g) = split(p, &mut gs) {
                if g.signum() != g0.signum() {
                    bracket = Some((p0, g0, p, g));
                    break 'grow;
                }
            }
        }
        d *= 2.0;
        if d > 0.05 * scale {
            break;
        }
    }
    let (mut a, mut ga, mut b, _) = bracket.ok_or_else(|| SolveError::Degenerate("no sign change of the splitting function".into()))?;
    while (b - a).abs() > 1e-12 * scale {
        let c = 0.5 * (a + b);
        let mut gs = guess;
        let gc = split(c, &mut gs)?;
        if gc.signum() == ga.signum() {
            a = c;
            ga = gc;
        } else {
            b = c;
        }
    }
    Ok(0.5 * (a + b))
}
