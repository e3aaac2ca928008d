//! Central finite-difference checks of tape gradients.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Worst disagreement between analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradient of `loss` with respect to every coordinate of
/// every trainable parameter against `(L(θ+ε) − L(θ−ε)) / 2ε`.
///
/// Parameters are checked concurrently under [`Exec::Parallel`]; each job
/// perturbs its own copy of the store.
pub fn check_gradients<F>(store: &ParamStore, loss: F, eps: f64, floor: f64, exec: Exec) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var> + Sync + Send,
{
    let mut analytic = store.clone();
    analytic.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, &analytic)?;
    tape.backward(l, &mut analytic)?;

    let ids: Vec<ParamId> = store.ids().filter(|&id| store.get(id).trainable).collect();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(&mut tape, s)?;
        Ok(tape.scalar(l))
    };
    let per_param = exec.map(&ids, |&id| -> Result<Vec<(String, f64, f64)>> {
        let mut probe = store.clone();
        let n = store.get(id).value.len();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let orig = store.get(id).value.data()[k];
            probe.get_mut(id).value.data_mut()[k] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig;
            let a = analytic.get(id).gradient.data()[k];
            out.push((format!("{}[{k}]", store.get(id).name), a, (plus - minus) / (2.0 * eps)));
        }
        Ok(out)
    });

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for r in per_param {
        for (name, a, n) in r? {
            if !a.is_finite() || !n.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at {name}")));
            }
            report.coordinates += 1;
            let e = relative_error(a, n, floor);
            if e > report.max_relative_error || report.worst.is_empty() {
                report = GradCheck {
                    max_relative_error: e,
                    worst: name,
                    analytic: a,
                    numeric: n,
                    coordinates: report.coordinates,
                };
            }
        }
    }
    Ok(report)
}
