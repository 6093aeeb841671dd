use super::Tensor;

/// Central-difference gradient of a scalar function, `(f(x+ε) - f(x-ε)) / 2ε`
/// per coordinate. Always evaluated in 64-bit.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_twice_x() {
        let x = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.37 - 2.0);
        let g = finite_diff_grad(|t| t.dot(t), &x, 1e-5);
        for (gi, xi) in g.data().iter().zip(x.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::from_fn(&[5], |i| i as f64);
        let g = finite_diff_grad(|_| 4.2, &x, 1e-5);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}
