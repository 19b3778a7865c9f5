//! Central finite-difference verification of analytic gradients.

use std::fmt::Write as _;

use serde::Serialize;

use super::{AutogradError, Bindings, Graph, ParamStore, Var};

/// Denominator floor for the relative error so that entries whose true
/// gradient is zero are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Restrict the check to these parameter names.
    pub subset: Option<Vec<String>>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            subset: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tol == f64::INFINITY || self.entries.iter().all(|e| e.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.entries.iter().filter(|e| !(e.max_rel_error <= self.tol)).collect()
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(9).max(9);
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>12}  {:>12}  status", "parameter", "numel", "max_rel", "max_abs");
        for e in &self.entries {
            let status = if e.max_rel_error <= self.tol || self.tol == f64::INFINITY {
                "ok"
            } else {
                "FAIL"
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>12.3e}  {:>12.3e}  {status}",
                e.name, e.numel, e.max_rel_error, e.max_abs_error
            );
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the analytic gradient of the scalar built by `f` against
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)` for every entry of every selected
/// parameter. Frozen rows are skipped. `f` must be deterministic.
pub fn grad_check<F, E>(params: &mut ParamStore, config: &GradCheckConfig, mut f: F) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Graph, &Bindings) -> Result<Var, E>,
    E: From<AutogradError>,
{
    let mut graph = Graph::new();
    let bindings = params.bind(&mut graph);
    let loss = f(&mut graph, &bindings)?;
    graph.backward(loss)?;
    let analytic: Vec<_> = params
        .iter()
        .zip(bindings.vars())
        .map(|(p, &v)| graph.grad(v).map(|g| g.into_data()).unwrap_or_else(|| vec![0.0; p.value.numel()]))
        .collect();
    drop(graph);

    let mut eval = |params: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let l = f(&mut g, &b)?;
        Ok(g.value(l).item())
    };

    let selected: Vec<usize> = params
        .iter()
        .enumerate()
        .filter(|(_, p)| config.subset.as_ref().is_none_or(|s| s.iter().any(|n| n == &p.name)))
        .map(|(i, _)| i)
        .collect();

    let mut entries = Vec::with_capacity(selected.len());
    for pi in selected {
        let (name, numel, inner, frozen) = {
            let p = params.iter().nth(pi).expect("index");
            let inner = p.value.numel() / p.value.shape()[0];
            (p.name.clone(), p.value.numel(), inner, p.frozen_rows.clone())
        };
        let mut check = ParamCheck {
            name: name.clone(),
            numel,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for idx in 0..numel {
            if frozen.contains(&(idx / inner)) {
                continue;
            }
            let original = params.get(&name).expect("param").value.data()[idx];
            set_entry(params, &name, idx, original + config.eps);
            let plus = eval(params)?;
            set_entry(params, &name, idx, original - config.eps);
            let minus = eval(params)?;
            set_entry(params, &name, idx, original);
            let numeric = (plus - minus) / (2.0 * config.eps);
            let a = analytic[pi][idx];
            let rel = relative_error(a, numeric);
            let abs = (a - numeric).abs();
            if rel > check.max_rel_error || rel.is_nan() {
                check.max_rel_error = rel;
                check.worst_index = idx;
            }
            check.max_abs_error = check.max_abs_error.max(abs);
        }
        entries.push(check);
    }
    Ok(GradCheckReport {
        eps: config.eps,
        tol: config.tol,
        entries,
    })
}

fn set_entry(params: &mut ParamStore, name: &str, idx: usize, value: f64) {
    params.get_mut(name).expect("param").value.data_mut()[idx] = value;
}
