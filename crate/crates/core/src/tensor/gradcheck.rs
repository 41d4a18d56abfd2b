use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Largest accepted relative error.
    pub tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { eps: 1e-4, tol: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, element)` where the largest relative error occurred.
    pub worst: Option<(usize, usize)>,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the tape's analytic gradient of a scalar function against
/// central differences, element by element, for every input.
///
/// The relative error of one element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradcheck_on(Tape::new, f, inputs, cfg)
}

fn gradcheck_on<F>(
    new_tape: impl Fn() -> Tape,
    f: F,
    inputs: &[Tensor],
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out);
        if !value.is_scalar() {
            return Err(Error::contract(
                "gradcheck",
                format!("function must be scalar-valued, got shape {:?}", value.shape()),
            ));
        }
        Ok(value.item())
    };

    let mut tape = new_tape();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()))
        })
        .collect();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        tol: cfg.tol,
        passed: true,
    };
    let mut probe = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for j in 0..grad.numel() {
            let orig = probe[which].data()[j];
            probe[which].data_mut()[j] = orig + cfg.eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[j] = orig - cfg.eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = grad.data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((which, j));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tol;
    Ok(report)
}
