use super::graph::{Graph, Var};
use crate::error::{ensure_param, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error. Central differences at
/// `h = 1e-6` carry ~1e-10 absolute roundoff whatever the gradient size, so
/// entries below unit magnitude are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1.0;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients of a scalar function of several inputs against
/// central differences, returning the largest relative error.
///
/// `f` must record a `1×1` output; every input is bound as a parameter.
pub fn finite_difference_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    ensure_param!(h > 0.0, "step must be positive");
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(format!("input{i}"), t.clone()))
            .collect();
        let out = f(&mut g, &vars)?;
        ensure_param!(g.value(out).shape() == (1, 1), "checked function must return a scalar");
        Ok(g.value(out)[(0, 0)])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(format!("input{i}"), t.clone()))
        .collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, &var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[k].rows(), inputs[k].cols());
        let analytic = grads.wrt(var).unwrap_or(&zero).clone();
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].data()[idx];
            let (hi, lo) = (orig + h, orig - h);
            probe[k].data_mut()[idx] = hi;
            let plus = eval(&probe)?;
            probe[k].data_mut()[idx] = lo;
            let minus = eval(&probe)?;
            probe[k].data_mut()[idx] = orig;
            // divide by the step actually taken after rounding
            let numeric = (plus - minus) / (hi - lo);
            worst = worst.max(relative_error(analytic.data()[idx], numeric));
        }
    }
    Ok(worst)
}

pub fn finite_difference_check<F>(f: F, input: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_difference_check_many(|g, v| f(g, v[0]), std::slice::from_ref(input), h)
}
