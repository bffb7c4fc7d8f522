use super::Tensor;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; central differences carry roughly `1e-11 * |f|` of noise.
const DEVIATION_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-4)`.
    pub max_deviation: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when the check could not be evaluated (non-finite values).
    pub failure: Option<String>,
}

/// Compares the analytic gradient returned by `f` against central finite
/// differences over every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&Tensor) -> (f64, Tensor),
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, &all, eps, tol)
}

/// Like [`grad_check`] but only perturbs the listed element indices.
pub fn grad_check_at<F>(mut f: F, x: &Tensor, indices: &[usize], eps: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&Tensor) -> (f64, Tensor),
{
    let mut report = GradCheckReport {
        max_deviation: 0.0,
        worst_index: None,
        checked: 0,
        tolerance: tol,
        passed: false,
        failure: None,
    };
    if !(eps > 0.0) {
        report.failure = Some(format!("eps must be positive, got {eps}"));
        return report;
    }
    let (value, analytic) = f(x);
    if !value.is_finite() || !analytic.is_finite() {
        report.failure = Some("non-finite value or analytic gradient".into());
        return report;
    }
    if analytic.shape() != x.shape() {
        report.failure = Some(format!(
            "analytic gradient has shape {:?}, expected {:?}",
            analytic.shape(),
            x.shape()
        ));
        return report;
    }

    let mut probe = x.clone();
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (plus, _) = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let (minus, _) = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            report.failure = Some(format!("non-finite function value perturbing element {i}"));
            return report;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DEVIATION_FLOOR);
        if report.worst_index.is_none() || dev > report.max_deviation {
            report.max_deviation = dev;
            report.worst_index = Some(i);
        }
        report.checked += 1;
    }
    report.passed = report.max_deviation <= tol;
    report
}
