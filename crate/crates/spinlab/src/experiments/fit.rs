use std::path::Path;

use serde_json::{json, Map, Value};
use spinlab_core::fitkit::{fit, model_by_name, CurveData, FitOptions};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{Outcome, Table};

struct Columns {
    x: Vec<f64>,
    y: Vec<f64>,
    sigma: Option<Vec<f64>>,
}

/// Columns x, y and an optional sigma. A header row is skipped when its
/// first field is not a number.
fn read_columns(path: &Path) -> CliResult<Columns> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let (mut x, mut y, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let fields: Vec<&str> = record.iter().collect();
        if line == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::validation(format!("{}: row {} is not numeric", path.display(), line + 1)))?;
        match nums.as_slice() {
            [a, b] => {
                x.push(*a);
                y.push(*b);
            }
            [a, b, c] => {
                x.push(*a);
                y.push(*b);
                s.push(*c);
            }
            _ => {
                return Err(CliError::validation(format!(
                    "{}: row {} needs 2 or 3 columns",
                    path.display(),
                    line + 1
                )))
            }
        }
    }
    let sigma = match s.len() {
        0 => None,
        n if n == x.len() => Some(s),
        _ => {
            return Err(CliError::validation(
                "either every row or no row may carry a sigma column",
            ))
        }
    };
    Ok(Columns { x, y, sigma })
}

/// Fits `model` to the CSV at `path`.
pub fn fit_file(model_name: &str, path: &Path, weights: &str) -> CliResult<Outcome> {
    let model = model_by_name(model_name)
        .ok_or_else(|| CliError::validation(format!("unknown model {model_name:?}; see `spinlab describe fit`")))?;
    let Columns { x, y, sigma } = read_columns(path)?;
    let data = match (weights, sigma) {
        ("uniform", _) | ("auto", None) => CurveData::new(x, y),
        ("counts", _) => CurveData::counts(x, y),
        ("sigma" | "auto", Some(s)) => CurveData::new(x, y).with_sigma(s),
        ("sigma", None) => return Err(CliError::validation("weights = sigma needs a third column")),
        (other, _) => {
            return Err(CliError::validation(format!(
                "weights {other:?} is not one of uniform, counts, sigma, auto"
            )))
        }
    };
    let result = fit(model.as_ref(), &data, None, &FitOptions::default())?;
    let mut table = Table::new("fit", vec!["x", "y", "model", "weighted_residual"]);
    for k in 0..data.x.len() {
        let m = model.eval(data.x[k], &result.params);
        table.push(vec![data.x[k], data.y[k], m, result.residuals[k]]);
    }
    let mut params = Map::new();
    let mut sigmas = Map::new();
    for (i, name) in model.param_names().into_iter().enumerate() {
        params.insert(name.into(), result.params[i].into());
        sigmas.insert(name.into(), result.sigma(i).into());
    }
    let summary = json!({
        "model": model_name,
        "params": Value::Object(params),
        "sigmas": Value::Object(sigmas),
        "chi_square": result.chi_square,
        "reduced_chi_square": result.reduced_chi_square,
        "dof": result.dof,
        "iterations": result.iterations,
    });
    Ok(Outcome {
        tables: vec![table],
        summary,
        documents: vec![],
    })
}

pub fn fit_experiment(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let path = cfg.base_dir.join(p.string("data_file")?);
    fit_file(&p.string("model")?, &path, &p.string("weights")?)
}
