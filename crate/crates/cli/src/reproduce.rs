//! Pinned figure bundles: data files plus a plain-text plotting recipe.

use pacemaker_core::codim2::{classify_excitability, SLICES};
use pacemaker_core::diagram::Diagram;
use pacemaker_core::model::Model;
use serde_json::json;

use crate::commands::{self, diagram_for, write_diagram, BlockArgs, MapArgs, SimulateArgs};
use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::OutDir;

pub const FIGURES: [&str; 12] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "fig11", "fig12"];

/// The configuration every bundle starts from: default parameters, the
/// user's numerical flags kept.
fn pinned(cfg: &RunConfig, model: ModelKind, overrides: &[(&str, f64)]) -> RunConfig {
    RunConfig { model, overrides: overrides.iter().map(|(k, v)| (k.to_string(), *v)).collect(), ..cfg.clone() }
}

fn slice_value(name: &str) -> f64 {
    SLICES.iter().find(|(n, _)| *n == name).map(|(_, v)| *v).expect("known slice")
}

/// Equilibrium branches of a diagram in one file, with a leading branch index.
fn stacked_equilibria(d: &Diagram) -> String {
    let mut s = String::new();
    for (k, b) in d.equilibria.iter().enumerate() {
        for (i, line) in b.to_csv().lines().enumerate() {
            match (i, k) {
                (0, 0) => s.push_str(&format!("branch,{line}\n")),
                (0, _) => {}
                _ => s.push_str(&format!("{k},{line}\n")),
            }
        }
    }
    s
}

fn slice_bundle(cfg: &RunConfig, name: &str, out: &mut OutDir) -> CliResult<()> {
    let v = slice_value(name);
    let c = pinned(cfg, ModelKind::Dimless, &[("v3b", v)]);
    let m = c.dimless()?;
    let d = diagram_for(&c, &m, "v1b", (-0.7, 0.1))?;
    out.within(name, |o| {
        write_diagram(o, "", &d, true)?;
        let label = match classify_excitability(&d, v, m.param_scale("v1b")) {
            Ok(l) => serde_json::to_value(&l)?,
            Err(e) => json!({ "slice_param": v, "label": "undecided", "reason": e.to_string() }),
        };
        o.write_json("excitability.json", &label)
    })
}

const DIAGRAM_RECIPE: &str = "\
equilibria_<k>.csv: x=param y=<first state column>, solid where stability starts with `stable`, dashed otherwise
cycles_<k>.csv: x=param y=v_max and y=v_min, thick, blue where stability=stable, red otherwise
events.csv: mark each (param, kind) on the equilibrium curve and label it with kind
";

fn recipe(fig: &str) -> String {
    let body = match fig {
        "fig1" => "three panels, t in seconds against v in mV:\n  (a) series_gL.csv x=t y=v\n  (b) series_gCa.csv x=t y=v\n  (c) series_gK.csv x=t y=v\nverdicts.csv lists the classification of each panel\n".to_string(),
        "fig2" => "v3.csv x=t y=v3; horizontal lines at upper_bound and lower_bound from v3_summary.json\n".to_string(),
        "fig3" => "three panels:\n  (a) full/trajectory.csv x=t y=v\n  (b) reduced/trajectory.csv x=t y=v\n  (c) dimless/trajectory.csv x=t y=V\n".to_string(),
        "fig4" => format!(
            "panels (a) full_branch.csv, (b) reduced_branch.csv, (c) dimless_branch.csv, one curve per branch column value;\noverlay the cycle branches from full/, reduced/ and dimless/;\n(d) period.csv x=param y=period, blue where stability=stable, red otherwise\n{DIAGRAM_RECIPE}"
        ),
        "fig5" => format!("(a) diagram in v3b from the files below; (b) period.csv x=param y=period\n{DIAGRAM_RECIPE}"),
        "fig6" => format!("diagram in vLb from the files below\n{DIAGRAM_RECIPE}"),
        "fig7" => "loci/*.csv: x=v1b y=v3b, one curve per file, colour by kind (hopf blue, fold and snic red, homoclinic green, snc black)\nevents.json: mark each point with its kind\nhorizontal lines at the slice values listed in manifest.json\n".to_string(),
        "fig8" => format!("(b) l1/ and (c) l2/ slice diagrams in v1b\n{DIAGRAM_RECIPE}"),
        "fig9" => format!("(b) l3/ and (c) l4/ slice diagrams in v1b\n{DIAGRAM_RECIPE}"),
        "fig10" => "portrait/nullclines.csv: x=V y=N_on_V_nullcline (orange) and y=N_on_N_nullcline (magenta), clip N to [-0.1, 1]\nportrait/cycle_<k>.csv: x=V y=N, colour from portrait.json stability\nportrait/trajectory_<k>.csv: x=V y=N, black\nportrait/equilibria.csv: filled circles, blue when stable, red otherwise\n".to_string(),
        "fig11" => format!("(c) l5/ slice diagram in v1b; (d) the same, zoomed on the HB-SNC pair\n{DIAGRAM_RECIPE}"),
        "fig12" => format!("l6/ slice diagram in v1b\n{DIAGRAM_RECIPE}"),
        _ => unreachable!("validated figure id"),
    };
    format!("# {fig}: generic plotting instructions, columns refer to CSV headers\n{body}")
}

pub fn reproduce(cfg: &RunConfig, fig: &str, out: &mut OutDir) -> CliResult<()> {
    if !FIGURES.contains(&fig) {
        return Err(CliError::config(format!("unknown figure `{fig}` (expected one of {})", FIGURES.join(", "))));
    }
    match fig {
        "fig1" => commands::block(&pinned(cfg, ModelKind::Full, &[]), &BlockArgs::default(), out)?,
        "fig2" => {
            let args = SimulateArgs { track_v3: true, ..Default::default() };
            commands::simulate(&pinned(cfg, ModelKind::Full, &[]), &args, out)?
        }
        "fig3" => {
            for kind in [ModelKind::Full, ModelKind::Reduced, ModelKind::Dimless] {
                out.within(kind.as_str(), |o| commands::simulate(&pinned(cfg, kind, &[]), &SimulateArgs::default(), o))?;
            }
            out.note("reduced_initial_state", json!([0.0, 0.0]));
        }
        "fig4" => {
            for (kind, handle, range) in [
                (ModelKind::Full, "v1", (-40.0, -10.0)),
                (ModelKind::Reduced, "v1", (-40.0, -10.0)),
                (ModelKind::Dimless, "v1b", (-0.5, -0.125)),
            ] {
                let c = pinned(cfg, kind, &[]);
                let d = crate::with_model!(c, m => diagram_for(&c, &m, handle, range)?);
                out.within(kind.as_str(), |o| write_diagram(o, "", &d, true))?;
                out.write(&format!("{}_branch.csv", kind.as_str()), &stacked_equilibria(&d))?;
                if kind == ModelKind::Dimless {
                    out.write("period.csv", &crate::commands::period_csv(&d))?;
                }
            }
        }
        "fig5" | "fig6" => {
            let handle = if fig == "fig5" { "v3b" } else { "vLb" };
            let c = pinned(cfg, ModelKind::Dimless, &[]);
            let range = ModelKind::Dimless.default_range(handle).expect("dimless handle");
            let d = diagram_for(&c, &c.dimless()?, handle, range)?;
            write_diagram(out, "", &d, true)?;
        }
        "fig7" => commands::map(&pinned(cfg, ModelKind::Dimless, &[]), &MapArgs::default(), out)?,
        "fig8" | "fig9" | "fig11" | "fig12" => {
            let names: &[&str] = match fig {
                "fig8" => &["l1", "l2"],
                "fig9" => &["l3", "l4"],
                "fig11" => &["l5"],
                _ => &["l6"],
            };
            for n in names {
                slice_bundle(cfg, n, out)?;
            }
        }
        "fig10" => {
            let args = MapArgs { slice: Some(slice_value("l3")), phase_portrait: true, at_p1: None };
            commands::map(&pinned(cfg, ModelKind::Dimless, &[]), &args, out)?
        }
        _ => unreachable!(),
    }
    out.write("plot.txt", &recipe(fig))
}
