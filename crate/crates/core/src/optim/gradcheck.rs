use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: Option<usize>,
    pub checked: usize,
    /// Probes whose `+step` and `-step` evaluations fell into different
    /// smooth pieces of the function and were therefore not compared.
    pub skipped: usize,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `analytic[i]` with central differences of `eval` for every
/// parameter index in `probes`.
///
/// `eval` returns the function value and a key naming the smooth piece the
/// point lies in (piecewise-smooth functions such as trilinear lookups);
/// probes whose perturbed keys differ from the unperturbed one are skipped.
pub fn grad_check_piecewise<F>(
    mut eval: F,
    params: &[f64],
    analytic: &[f64],
    probes: &[usize],
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, u64),
{
    let (_, key) = eval(params);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: None,
        checked: 0,
        skipped: 0,
        passed: true,
    };
    for &i in probes {
        work[i] = params[i] + step;
        let (fp, kp) = eval(&work);
        work[i] = params[i] - step;
        let (fm, km) = eval(&work);
        work[i] = params[i];
        if kp != key || km != key {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let numeric = (fp - fm) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if report.worst_parameter.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_parameter = Some(i);
        }
    }
    report.passed = report.max_relative_error < tolerance;
    report
}

/// [`grad_check_piecewise`] for smooth functions.
pub fn grad_check<F>(
    mut eval: F,
    params: &[f64],
    analytic: &[f64],
    probes: &[usize],
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check_piecewise(|p| (eval(p), 0), params, analytic, probes, step, tolerance)
}
