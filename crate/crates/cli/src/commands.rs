use serde_json::{json, Value};

use sml_core::distance::DistanceEstimate;
use sml_core::flp::{build_grid_kernel, simulate_with_kernel};
use sml_core::gaussian_processes::{fbm_covariance, StationaryCovariance};
use sml_core::hermite::SubordinatorFunction;
use sml_core::io::{
    encode_flp1, format_float, parse_atoms, parse_covariance_csv, parse_density_csv, write_csv, FlpBlock,
};
use sml_core::levy::{sigma_over_epsilon, small_jump_clt_experiment, LevyMeasure, SmallJumpRow};
use sml_core::mc_engine::{MCConfig, Manifest};
use sml_core::numerics::{mean_and_variance, variance_standard_error, Grid};
use sml_core::subordinated_clt::{clt_sweep, dt_convergence_check, fit_condition_star, CltReport};
use sml_core::wiener_poisson::{rate_experiment, RateRow};
use sml_core::{Error, Result};

use crate::{
    CltSweepArgs, Command, CovfitArgs, FlpArgs, MeasureArgs, MeasureKind, ModelArgs, ModelKind, OuProductArgs,
    SmalljumpArgs,
};

/// Above this size the O(n^3) interpolation check is skipped.
const INTERPOLATION_CHECK_MAX_POINTS: usize = 257;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Covfit(a) => covfit(&a),
        Command::CltSweep(a) => clt_sweep_cmd(&a),
        Command::Smalljump(a) => smalljump(&a),
        Command::Flp(a) => flp(&a),
        Command::OuProduct(a) => ou_product(&a),
    }
}

fn read_file(path: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {path}: {e}")))
}

fn write_file(path: &str, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Usage(format!("cannot write {path}: {e}")))
}

fn to_json(value: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Numerical(format!("cannot serialize report: {e}")))
}

fn required(value: Option<f64>, flag: &str, model: &str) -> Result<f64> {
    value.ok_or_else(|| Error::Usage(format!("--{flag} is required for the {model} model")))
}

fn build_model(m: &ModelArgs) -> Result<StationaryCovariance> {
    match m.model {
        ModelKind::Fgn => StationaryCovariance::fgn(required(m.hurst, "hurst", "fgn")?),
        ModelKind::FracOu => StationaryCovariance::frac_ou(
            required(m.hurst, "hurst", "frac-ou")?,
            required(m.lambda, "lambda", "frac-ou")?,
            m.sigma,
        ),
        ModelKind::Table => {
            let path = m.table.as_deref().ok_or_else(|| Error::Usage("--table is required for the table model".into()))?;
            parse_covariance_csv(&read_file(path)?)
        }
    }
}

fn model_params(m: &ModelArgs) -> Value {
    json!({ "model": format!("{:?}", m.model), "hurst": m.hurst, "lambda": m.lambda, "sigma": m.sigma, "table": m.table })
}

fn build_measure(m: &MeasureArgs) -> Result<LevyMeasure> {
    match m.measure {
        MeasureKind::Atoms => parse_atoms(&m.atoms),
        MeasureKind::PowerLaw => LevyMeasure::power_law(m.delta, m.a, m.b),
        MeasureKind::Table => {
            let path =
                m.density.as_deref().ok_or_else(|| Error::Usage("--density is required for the table measure".into()))?;
            parse_density_csv(&read_file(path)?)
        }
    }
}

fn measure_params(m: &MeasureArgs) -> Value {
    match m.measure {
        MeasureKind::Atoms => json!({ "measure": "atoms", "atoms": m.atoms }),
        MeasureKind::PowerLaw => json!({ "measure": "power-law", "delta": m.delta, "a": m.a, "b": m.b }),
        MeasureKind::Table => json!({ "measure": "table", "density": m.density }),
    }
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Some(x), Value::Object(y)) = (a.as_object_mut(), b) {
        x.extend(y);
    }
    a
}

/// `<out>` (CSV or binary), `<out>.report.json` and `<out>.manifest.json`.
fn write_outputs(out: &str, body: &[u8], report: &Value, manifest: &Manifest) -> Result<()> {
    write_file(out, body)?;
    write_file(&format!("{out}.report.json"), to_json(report)?.as_bytes())?;
    write_file(&format!("{out}.manifest.json"), to_json(manifest)?.as_bytes())
}

fn covfit(a: &CovfitArgs) -> Result<()> {
    let model = build_model(&a.model)?;
    if !(a.tmax > 0.0) {
        return Err(Error::Domain(format!("--tmax must be positive, got {}", a.tmax)));
    }
    let decay = fit_condition_star(&model, a.tmax)?;
    let report = json!({ "model": model, "c0": model.c0(), "decay": decay });
    let text = to_json(&report)?;
    print!("{text}");
    if let Some(out) = &a.out {
        let params = merge(model_params(&a.model), json!({ "tmax": a.tmax }));
        let manifest = Manifest::new("covfit", params, &MCConfig::new(0, 0));
        write_file(out, text.as_bytes())?;
        write_file(&format!("{out}.manifest.json"), to_json(&manifest)?.as_bytes())?;
    }
    Ok(())
}

fn clt_sweep_cmd(a: &CltSweepArgs) -> Result<()> {
    let model = build_model(&a.model)?;
    let f = SubordinatorFunction::from_name(&a.f)?;
    if a.horizons.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Domain("horizons must be positive".into()));
    }
    let config = MCConfig::new(a.run.n, a.run.seed);
    let sweep = clt_sweep(&model, &f, &a.horizons, a.dt, a.tmax, &config)?;
    let t_last = a.horizons.iter().copied().fold(0.0, f64::max);
    let dt_check = dt_convergence_check(&model, &f, &sweep.decay, t_last, a.dt)?;
    let rows: Vec<Vec<String>> = sweep
        .reports
        .iter()
        .map(|r| {
            vec![
                format_float(r.t),
                format_float(r.sigma_sq_limit),
                format_float(r.empirical_variance),
                format_float(r.empirical_dw.value),
                format_float(r.predicted_rate),
                format_float(r.bound_term_1),
                format_float(r.bound_term_2),
                r.n.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    let csv = write_csv(&CltReport::CSV_HEADER, &rows)?;
    let report = json!({ "sweep": sweep, "dt_check": dt_check, "f": a.f });
    let params = merge(
        model_params(&a.model),
        json!({ "f": a.f, "horizons": a.horizons, "dt": a.dt, "tmax": a.tmax }),
    );
    write_outputs(&a.out, csv.as_bytes(), &report, &Manifest::new("clt-sweep", params, &config))
}

fn smalljump(a: &SmalljumpArgs) -> Result<()> {
    let measure = build_measure(&a.measure)?;
    let config = MCConfig::new(a.run.n, a.run.seed);
    let one = |_: f64, _: f64| 1.0;
    let rows = small_jump_clt_experiment(&measure, &one, a.t, &a.eps, &config)?;
    let diagnostics: Vec<Value> = a
        .eps
        .iter()
        .map(|e| sigma_over_epsilon(&measure, *e).map(|r| json!({ "epsilon": e, "sigma_over_epsilon": r })))
        .collect::<Result<_>>()?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![format_float(r.epsilon), format_float(r.dw.value), format_float(r.dw.standard_error), r.n.to_string()]
        })
        .collect();
    let csv = write_csv(&SmallJumpRow::CSV_HEADER, &table)?;
    let report = json!({ "measure": measure, "t": a.t, "rows": rows, "diagnostics": diagnostics });
    let params = merge(measure_params(&a.measure), json!({ "eps": a.eps, "t": a.t }));
    write_outputs(&a.out, csv.as_bytes(), &report, &Manifest::new("smalljump", params, &config))
}

fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let (_, var) = mean_and_variance(xs);
    (var, variance_standard_error(xs))
}

fn flp(a: &FlpArgs) -> Result<()> {
    let measure = build_measure(&a.measure)?;
    let grid = Grid::new(0.0, a.horizon, a.points)?;
    let kernel = build_grid_kernel(a.hurst, grid)?;
    let config = MCConfig::new(a.run.n, a.run.seed);
    let ensemble = simulate_with_kernel(&kernel, &measure, a.eps, &config)?;
    let last = a.points - 1;
    let x_end: Vec<f64> = (0..ensemble.n()).map(|r| ensemble.jumps[r][last] + ensemble.gaussian[r][last]).collect();
    let (var_end, var_end_se) = sample_moments(&x_end);
    let cross: Vec<f64> = (0..ensemble.n()).map(|r| ensemble.jumps[r][last] * ensemble.gaussian[r][last]).collect();
    let (cross_mean, cross_var) = mean_and_variance(&cross);
    let total = ensemble.big_jump_second_moment + ensemble.sigma_small.powi(2);
    let interpolation_error =
        (a.points <= INTERPOLATION_CHECK_MAX_POINTS).then(|| kernel.interpolation_covariance_error());
    let report = json!({
        "hurst": a.hurst,
        "epsilon": a.eps,
        "sigma_small": ensemble.sigma_small,
        "big_jump_second_moment": ensemble.big_jump_second_moment,
        "third_moment_ratio": ensemble.third_moment_ratio,
        "kernel_covariance_error": kernel.covariance_error(),
        "interpolation_covariance_error": interpolation_error,
        "variance_at_horizon": {
            "empirical": var_end,
            "standard_error": var_end_se,
            "predicted": total * fbm_covariance(a.hurst, a.horizon, a.horizon),
        },
        "jump_gaussian_covariance": {
            "empirical": cross_mean,
            "standard_error": (cross_var / cross.len() as f64).sqrt(),
        },
    });
    let body = if a.out.ends_with(".csv") {
        let rows: Vec<Vec<String>> = (0..ensemble.n())
            .flat_map(|r| {
                let path = ensemble.path(r);
                (0..a.points)
                    .map(|i| vec![r.to_string(), format_float(grid.point(i)), format_float(path[i])])
                    .collect::<Vec<_>>()
            })
            .collect();
        write_csv(&["replicate", "t", "value"], &rows)?.into_bytes()
    } else {
        encode_flp1(&FlpBlock {
            n: ensemble.n() as u64,
            n_points: a.points as u64,
            hurst: a.hurst,
            seed: a.run.seed,
            values: ensemble.values(),
        })?
    };
    let params = merge(
        measure_params(&a.measure),
        json!({ "hurst": a.hurst, "eps": a.eps, "points": a.points, "horizon": a.horizon }),
    );
    write_outputs(&a.out, &body, &report, &Manifest::new("flp", params, &config))
}

fn ou_product(a: &OuProductArgs) -> Result<()> {
    let measure = build_measure(&a.measure)?;
    let config = MCConfig::new(a.run.n, a.run.seed);
    let experiment = rate_experiment(a.lambda, &measure, &a.horizons, a.dt, &config)?;
    let rows: Vec<Vec<String>> = experiment
        .rows
        .iter()
        .map(|r: &RateRow| {
            let DistanceEstimate { value, standard_error, .. } = r.dw;
            vec![
                format_float(r.horizon),
                format_float(value),
                format_float(standard_error),
                format_float(r.var_analytic),
                format_float(r.var_empirical),
                format_float(r.bounds.term_df4),
                format_float(r.bounds.term_cube),
                format_float(r.bounds.term_contraction),
                format_float(r.bounds.term_d2sq),
            ]
        })
        .collect();
    let csv = write_csv(&RateRow::CSV_HEADER, &rows)?;
    let report = json!({ "measure": measure, "experiment": experiment });
    let params = merge(
        measure_params(&a.measure),
        json!({ "lambda": a.lambda, "horizons": a.horizons, "dt": a.dt }),
    );
    write_outputs(&a.out, csv.as_bytes(), &report, &Manifest::new("ou-product", params, &config))
}
