//! Central finite-difference gradient checking against a [`ParamStore`].

use super::{ParamStore, TOLERANCES};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst_at: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_rel_err < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients already accumulated in `store` against central differences
/// of `loss`, perturbing every scalar of every parameter selected by `filter`.
pub fn check_store(
    store: &mut ParamStore,
    mut loss: impl FnMut(&ParamStore) -> f64,
    filter: impl Fn(&str) -> bool,
    step: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        checked: 0,
        worst_rel_err: 0.0,
        worst_at: None,
    };
    let names: Vec<String> = store
        .iter()
        .map(|p| p.name.clone())
        .filter(|n| filter(n))
        .collect();
    for name in names {
        let id = store.id(&name).expect("name from store");
        for i in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + step;
            let up = loss(store);
            store.get_mut(id).value.data_mut()[i] = orig - step;
            let down = loss(store);
            store.get_mut(id).value.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * step);
            let analytic = store.get(id).grad.data()[i];
            let err = relative_error(analytic, numeric, TOLERANCES.grad_abs_floor);
            report.checked += 1;
            if err > report.worst_rel_err || report.worst_at.is_none() {
                report.worst_rel_err = err;
                report.worst_at = Some((name.clone(), i));
            }
        }
    }
    report
}
