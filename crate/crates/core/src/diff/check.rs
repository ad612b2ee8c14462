use super::{DiffError, Tape, Tensor, Var};

/// Compares the reverse-mode gradient of a scalar function against central
/// differences and returns `max |analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, DiffError>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps, None)
}

/// Multi-input variant. When `coords_per_input` is set, only that many
/// evenly spaced coordinates of each input are probed.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor],
    eps: f64,
    coords_per_input: Option<usize>,
) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(DiffError::BadStep(eps));
    }
    let eval = |xs: &[Tensor]| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(DiffError::NonFiniteValue(format!("f = {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(DiffError::NonFiniteValue("f at base point".into()));
    }
    let grads = tape.backward(out);

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        let n = x.len();
        let coords: Vec<usize> = match coords_per_input {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let analytic = grads.get(vars[k]).map_or(0.0, |g| g.data()[c]);
            let base = x.data()[c];
            probe[k].data_mut()[c] = base + eps;
            let fp = eval(&probe)?;
            probe[k].data_mut()[c] = base - eps;
            let fm = eval(&probe)?;
            probe[k].data_mut()[c] = base;
            let numeric = (fp - fm) / (2.0 * eps);
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
