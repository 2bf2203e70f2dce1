//! `diagnose`: localization and clustering statistics of a saved measure.

use mvpolymer::functionals::{clustering_mass, density_clustering_mass, localization_functionals, DiagnosticGrids};
use mvpolymer::measures::{heaviest_ball, LayeredMeasure, Measure};
use mvpolymer::mvmetric::concentration;
use mvpolymer::serialize::{from_str, Snapshot};

use crate::error::{CliError, CliResult};
use crate::output::num;

/// `(layer, statistic, value)` rows; whole-measure statistics have an
/// empty layer.
pub fn diagnose(snapshot: &str, grids: &DiagnosticGrids) -> CliResult<Vec<[String; 3]>> {
    let snap = from_str(snapshot).map_err(|e| CliError::Config(format!("snapshot: {e}")))?;
    let mu = match snap {
        Snapshot::Measure(m) => LayeredMeasure::single(m),
        Snapshot::Layered(l) => Ok(l),
    }
    .map_err(|e| CliError::Config(format!("snapshot: {e}")))?;
    let mut rows = Vec::new();
    let mut push = |layer: Option<u32>, name: String, v: f64| {
        rows.push([layer.map_or(String::new(), |k| k.to_string()), name, num(v)]);
    };
    push(None, "total_mass".into(), mu.total_mass());
    push(None, "max_ball".into(), heaviest_ball(&mu, 1.0).map_or(0.0, |b| b.2));
    for r in &grids.r {
        push(None, format!("I_r={}", num(*r)), concentration(&mu, *r));
    }
    let loc = localization_functionals(&mu, &grids.delta, &grids.k);
    for (d, w) in &loc.w {
        push(None, format!("W_delta={}", num(*d)), *w);
    }
    push(None, "G".into(), loc.g);
    push(None, "Q".into(), loc.q);
    for (d, k, hit) in &loc.indicators {
        push(None, format!("in_G_delta={}_K={}", num(*d), num(*k)), f64::from(u8::from(*hit)));
    }
    for (k, layer) in mu.layers() {
        for e in &grids.eps {
            for r in &grids.r {
                push(Some(k), format!("clustering_eps={}_r={}", num(*e), num(*r)), clustering_mass(layer, *e, *r));
            }
        }
        if let Measure::Grid(_) = layer {
            for e in &grids.density_eps {
                push(Some(k), format!("density_clustering_eps={}", num(*e)), density_clustering_mass(layer, *e)?);
            }
        }
    }
    Ok(rows)
}
