//! Central finite-difference checks for tape gradients.

use crate::{ParamStore, Result};

/// Largest mismatch found by [`check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with the denominator floored at `floor`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` for every value
/// of every parameter in `params` whose name passes `select`.
///
/// `loss` must be a pure function of the store it is given.
pub fn check(
    params: &ParamStore,
    analytic: &ParamStore,
    eps: f64,
    floor: f64,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&ParamStore) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = params.clone();
    let names: Vec<String> = params.names().filter(|n| select(n)).map(str::to_string).collect();
    for name in names {
        let g = analytic.require(&name)?.clone();
        for i in 0..g.len() {
            let orig = params.require(&name)?.data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let up = loss(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let down = loss(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_error(g.data()[i], numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = g.data()[i];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
