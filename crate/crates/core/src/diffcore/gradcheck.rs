use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`
    pub max_rel_error: f64,
    /// (parameter index, flat entry) where the maximum occurred
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` receives the parameters recorded as trainable leaves, in the
/// order given, and must return a scalar.
pub fn grad_check<F>(params: &[Tensor], eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = loss_fn(&tape, &vars)?;
        let mut grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.take(v)).collect()
    };

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = loss_fn(&tape, &vars)?;
        Ok(loss.item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for p in 0..params.len() {
        for e in 0..params[p].numel() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + eps;
            let up = eval(&work)?;
            work[p].data_mut()[e] = orig - eps;
            let down = eval(&work)?;
            work[p].data_mut()[e] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss not finite when perturbing parameter {p} entry {e}"
                )));
            }
            let fd = (up - down) / (2.0 * eps);
            let ad = analytic[p].data()[e];
            let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((p, e));
            }
        }
    }
    Ok(report)
}
