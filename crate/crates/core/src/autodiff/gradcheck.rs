//! Central finite-difference check of tape gradients.
//!
//! The loss closure must be deterministic: any sampling noise has to be drawn
//! once outside the closure and reused for every evaluation.

use super::nn::{Bound, ParamSet};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error; below it the comparison is
/// effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn check_gradients<F>(params: &ParamSet, step: f64, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = loss(&mut tape, &bound)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<_> = bound
        .vars()
        .iter()
        .map(|&v| grads.get_or_zeros(&tape, v).as_standard_layout().into_owned())
        .collect();

    let mut eval = |ps: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let b = ps.bind(&mut t);
        let out = loss(&mut t, &b)?;
        Ok(t.scalar(out))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.clone();
    for (pi, id) in params.ids().enumerate() {
        let n = params.get(id).len();
        for k in 0..n {
            let orig = params.get(id).as_slice().expect("contiguous")[k];
            probe.get_mut(id).as_slice_mut().expect("contiguous")[k] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(id).as_slice_mut().expect("contiguous")[k] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(id).as_slice_mut().expect("contiguous")[k] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].as_slice().expect("contiguous")[k];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.checked == 1 {
                report.max_relative_error = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
