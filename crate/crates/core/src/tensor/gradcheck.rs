use crate::scalar::Scalar;

use super::Tensor;

/// Central-difference gradient of a scalar function, one entry at a time.
pub fn finite_difference_gradient<T: Scalar>(f: impl Fn(&Tensor<T>) -> T, x: &Tensor<T>, h: T) -> Tensor<T> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let two_h = h + h;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / two_h;
    }
    grad
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both are zero.
pub fn relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error shape mismatch");
    let norm = |t: &Tensor<T>| t.data().iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}


/// Compares reverse-mode gradients of a scalar computation against central
/// differences, returning one relative error per input.
///
/// `build` receives the inputs as tape variables and must return a 1x1 loss.
pub fn autodiff_vs_finite_difference<T, F>(inputs: &[Tensor<T>], h: T, build: F) -> crate::Result<Vec<f64>>
where
    T: Scalar,
    F: for<'t> Fn(&'t super::Tape<T>, &[super::Var<'t, T>]) -> crate::Result<super::Var<'t, T>>,
{
    let tape = super::Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&tape, &vars)?;
    let grads = tape.backward(&loss)?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(var);
        let eval = |x: &Tensor<T>| -> T {
            let tape = super::Tape::new();
            let vars: Vec<_> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| tape.constant(if i == k { x.clone() } else { t.clone() }))
                .collect();
            let loss = build(&tape, &vars).expect("forward succeeded once");
            let v = loss.value().data()[0];
            v
        };
        let numeric = finite_difference_gradient(eval, &inputs[k], h);
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}
