//! Central finite-difference verification of analytic gradients.

use super::{ParamId, ParamTree};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced elements per tensor.
    pub max_per_tensor: Option<usize>,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to round-off are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_per_tensor: None,
            floor: 1e-4,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }

    pub fn sampled(mut self, max_per_tensor: usize) -> Self {
        self.max_per_tensor = Some(max_per_tensor);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<GradMismatch>,
    pub failures: Vec<GradMismatch>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Compares every (or a sampled subset of every) entry of `analytic`
/// against `(loss(p + h) - loss(p - h)) / 2h`.
pub fn grad_check(
    params: &ParamTree<f64>,
    analytic: &ParamTree<f64>,
    mut loss: impl FnMut(&ParamTree<f64>) -> f64,
    options: &GradCheckOptions,
) -> GradCheckReport {
    assert!(params.same_layout(analytic), "gradient tree layout differs from parameters");
    let mut report = GradCheckReport {
        tolerance: options.tolerance,
        ..Default::default()
    };
    let mut probe = params.clone();
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let picks: Vec<usize> = match options.max_per_tensor {
            Some(m) if m < n => (0..m).map(|k| k * n / m).collect(),
            _ => (0..n).collect(),
        };
        for i in picks {
            let original = params.slice(id)[i];
            probe.slice_mut(id)[i] = original + options.step;
            let up = loss(&probe);
            probe.slice_mut(id)[i] = original - options.step;
            let down = loss(&probe);
            probe.slice_mut(id)[i] = original;

            let numeric = (up - down) / (2.0 * options.step);
            let a = analytic.slice(id)[i];
            let denom = a.abs().max(numeric.abs()).max(options.floor);
            let rel_error = (a - numeric).abs() / denom;
            report.checked += 1;
            let mismatch = || GradMismatch {
                param: params.name(id).to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_error,
            };
            if rel_error > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel_error);
                report.worst = Some(mismatch());
            }
            if !(rel_error < options.tolerance) {
                report.failures.push(mismatch());
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn quadratic_tree() -> ParamTree<f64> {
        let mut t = ParamTree::new();
        t.insert("w", ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.5, -1.0, 2.0]).unwrap())
            .unwrap();
        t
    }

    fn loss(p: &ParamTree<f64>) -> f64 {
        p.by_name("w").unwrap().iter().map(|v| v * v * v).sum()
    }

    fn exact(p: &ParamTree<f64>) -> ParamTree<f64> {
        let mut g = p.zeros_like();
        let id = g.id("w").unwrap();
        let w = p.slice(id).to_vec();
        for (gi, wi) in g.slice_mut(id).iter_mut().zip(w) {
            *gi = 3.0 * wi * wi;
        }
        g
    }

    #[test]
    fn exact_gradient_passes() {
        let p = quadratic_tree();
        let report = grad_check(&p, &exact(&p), loss, &GradCheckOptions::with_tolerance(1e-8));
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let p = quadratic_tree();
        let mut g = exact(&p);
        let id = g.id("w").unwrap();
        g.slice_mut(id)[1] *= 2.0;
        let report = grad_check(&p, &g, loss, &GradCheckOptions::default());
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].index, 1);
    }
}
