//! Central finite-difference gradient checking.

/// One evaluation of a scalar function under test.
#[derive(Debug, Clone)]
pub struct Probe {
    pub value: f64,
    /// Analytic gradient with respect to every input coordinate.
    pub gradient: Vec<f64>,
    /// Region hash of all non-smooth ops (see [`super::Graph::kink_signature`]).
    pub kink_signature: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because a kink lies within `10 * step`.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

/// Gradients smaller than this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the analytic gradient of `f` at `input` with central
/// differences along each coordinate in `coords` (all when `None`).
///
/// A coordinate is skipped when the kink signature at `input +- 10 * step`
/// differs from the one at `input`: the function is not smooth there.
pub fn gradient_check<F>(mut f: F, input: &[f64], step: f64, tolerance: f64, coords: Option<&[usize]>) -> GradCheckReport
where
    F: FnMut(&[f64]) -> Probe,
{
    let base = f(input);
    assert_eq!(base.gradient.len(), input.len(), "gradient length must match input");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..input.len()).collect();
            &all
        }
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: None, checked: 0, skipped: 0, tolerance };
    let mut x = input.to_vec();
    let mut eval = |x: &mut Vec<f64>, i: usize, delta: f64| {
        let saved = x[i];
        x[i] = saved + delta;
        let p = f(x);
        x[i] = saved;
        p
    };
    for &i in coords {
        let far_lo = eval(&mut x, i, -10.0 * step);
        let far_hi = eval(&mut x, i, 10.0 * step);
        if far_lo.kink_signature != base.kink_signature || far_hi.kink_signature != base.kink_signature {
            report.skipped += 1;
            continue;
        }
        let lo = eval(&mut x, i, -step).value;
        let hi = eval(&mut x, i, step).value;
        let numeric = (hi - lo) / (2.0 * step);
        let err = relative_error(base.gradient[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_index = Some(i);
        }
    }
    report
}
