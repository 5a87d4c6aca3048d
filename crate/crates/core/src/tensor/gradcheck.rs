use super::{ParamSet, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients from
/// turning round-off into large relative errors.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    rel_error_floor(analytic, numeric, 1e-6)
}

fn rel_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `f` with central differences
/// `(f(x + h) - f(x - h)) / 2h` over every entry of every non-frozen parameter.
///
/// Relative errors use the floor `1e-6 * max(1, |f(x)|)`: the differences carry
/// round-off of order `eps * |f| / h`, which would otherwise dominate on
/// gradients far smaller than the objective.
///
/// `f` must be deterministic in `params` (no training-mode dropout).
pub fn grad_check<F>(params: &mut ParamSet, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet, &mut Tape) -> Var,
{
    for id in params.ids().collect::<Vec<_>>() {
        params.get_mut(id).clear_grad();
    }
    let mut tape = Tape::new();
    let out = f(params, &mut tape);
    tape.backward(out, params)?;
    let floor = 1e-6 * tape.scalar(out).abs().max(1.0);

    let eval = |p: &ParamSet| {
        let mut t = Tape::new();
        let v = f(p, &mut t);
        t.scalar(v)
    };

    let mut report = GradCheckReport {
        passed: true,
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().filter(|&id| !params.is_frozen(id)).collect();
    for id in ids {
        let analytic: Vec<f64> = match params.get(id).grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; params.get(id).len()],
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + h;
            let plus = eval(params);
            params.get_mut(id).data_mut()[i] = orig - h;
            let minus = eval(params);
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error_floor(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
