use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Smallest denominator used when forming relative errors.
const REL_FLOOR: f64 = 1e-6;

/// Outcome of [`grad_check_smooth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over the coordinates that were compared.
    pub max_rel_err: f64,
    pub compared: usize,
    /// Coordinates whose `±ε` evaluations took a different branch than the
    /// base point, where central differences do not estimate the derivative.
    pub skipped: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+ε) − f(x−ε)) / 2ε`, coordinate by coordinate over every
/// input tensor. Returns the largest relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
///
/// `coords_per_tensor` caps how many coordinates of each tensor are probed
/// (evenly strided); `None` probes all of them.
pub fn grad_check<F>(f: F, points: &[Tensor], eps: f64, coords_per_tensor: Option<usize>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("grad_check epsilon must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = points
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.set_requires_grad(true);
            tape.leaf(&p)
        })
        .collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pts.iter().map(|p| t.leaf(p)).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.scalar(l))
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = points.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let n = analytic.len();
        let step = coords_per_tensor.map_or(1, |c| (n / c.max(1)).max(1));
        for i in (0..n).step_by(step) {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = orig + eps;
            let hi = eval(&work)?;
            work[ti].data_mut()[i] = orig - eps;
            let lo = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (hi - lo) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Like [`grad_check`], but coordinates whose central-difference stencil
/// crosses a kink (ReLU sign change, clamp, smooth-L1 threshold or a change in
/// data-dependent loss weights, see [`Tape::branch_signature`]) are counted
/// instead of compared.
pub fn grad_check_smooth<F>(
    f: F,
    points: &[Tensor],
    eps: f64,
    coords_per_tensor: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("grad_check epsilon must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = points
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.set_requires_grad(true);
            tape.leaf(&p)
        })
        .collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.branch_signature();
    let grads = tape.backward(loss)?;

    let eval = |pts: &[Tensor]| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pts.iter().map(|p| t.leaf(p)).collect();
        let l = f(&mut t, &vs)?;
        Ok((t.scalar(l), t.branch_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        compared: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor> = points.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let n = analytic.len();
        let step = coords_per_tensor.map_or(1, |c| (n / c.max(1)).max(1));
        for i in (0..n).step_by(step) {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = orig + eps;
            let (hi, sig_hi) = eval(&work)?;
            work[ti].data_mut()[i] = orig - eps;
            let (lo, sig_lo) = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            if sig_hi != base || sig_lo != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (hi - lo) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.compared += 1;
        }
    }
    Ok(report)
}
