//! Central finite-difference checks of tape gradients.
//!
//! The numerical side only ever runs forward passes, so it is independent of
//! every backward rule it checks.

use super::{Tape, Tensor, TensorError, Var};

/// Outcome of comparing autodiff against finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        Self {
            checked: 0,
            failures: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        }
    }
}

/// Tolerances for [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckTolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for GradCheckTolerance {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rel: 1e-3,
            abs: 1e-6,
        }
    }
}

/// Compares `d f / d inputs` from [`Tape::backward`] with central differences.
///
/// `f` must build a scalar from the recorded inputs. An element passes when
/// either the relative error is below `tol.rel` or the absolute error is
/// below `tol.abs`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    f: F,
    tol: GradCheckTolerance,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.variable(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            Ok(grads
                .get(v)?
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()]))
        })
        .collect::<Result<_, TensorError>>()?;

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        // grad-enabled so that `f` may itself differentiate internally
        let mut tape = Tape::new();
        let vars = perturbed
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        tape.value(out)?.item()
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            work[ti].data_mut()[j] = orig + tol.step;
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = orig - tol.step;
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * tol.step);
            let a = analytic[ti][j];
            let abs = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs());
            let rel = if denom > 0.0 { abs / denom } else { 0.0 };
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if abs >= tol.abs {
                report.max_rel_error = report.max_rel_error.max(rel);
            }
            if !(rel < tol.rel || abs < tol.abs) {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}
