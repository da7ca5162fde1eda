use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic - numeric| / max(1, |numeric|)`
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the worst error occurred
    pub worst: (usize, usize),
    pub coordinates: usize,
    pub loss: f64,
}

fn eval<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let v = g.value(loss).item() as f64;
    if !v.is_finite() {
        return Err(Error::NumericFailure(format!("non-finite loss {v} during gradient check")));
    }
    Ok(v)
}

/// Checks every coordinate of every input. `build` receives the inputs as
/// graph leaves and must return a scalar loss node.
pub fn grad_check<F>(inputs: &[Tensor], build: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(inputs, build, step, |_, _| {})
}

/// [`grad_check`] with a hook that may alter each input's analytic gradient
/// before comparison; used to confirm a broken gradient is caught.
pub fn grad_check_with<F, H>(inputs: &[Tensor], build: F, step: f64, tamper: H) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    H: Fn(usize, &mut [f32]),
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let loss_value = g.value(loss).item() as f64;
    if !loss_value.is_finite() {
        return Err(Error::NumericFailure(format!("non-finite loss {loss_value}")));
    }
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), coordinates: 0, loss: loss_value };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let mut analytic = grads.tensor(*var);
        tamper(i, analytic.data_mut());
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            let xp = (x0 as f64 + step) as f32;
            let xm = (x0 as f64 - step) as f32;
            probe[i].data_mut()[j] = xp;
            let lp = eval(&probe, &build)?;
            probe[i].data_mut()[j] = xm;
            let lm = eval(&probe, &build)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (lp - lm) / (xp as f64 - xm as f64);
            let a = analytic.data()[j] as f64;
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}
