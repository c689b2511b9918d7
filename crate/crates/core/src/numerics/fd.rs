use super::Tensor;

/// Central finite-difference gradient of a scalar function: coordinate `i` is
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    out
}

/// Compares reverse-mode gradients of `build` against central differences for
/// every input. `build` receives the graph and one leaf per input and returns
/// a scalar output. Returns the largest relative error
/// `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖, 1e-12)` over the inputs.
pub fn gradcheck<F>(build: F, inputs: &[Tensor], eps: f64) -> crate::Result<f64>
where
    F: Fn(&mut super::Graph, &[super::Var]) -> crate::Result<super::Var>,
{
    use super::Graph;
    let eval = |xs: &[Tensor]| -> crate::Result<f64> {
        let mut g = Graph::new();
        let vars: alloc::vec::Vec<_> = xs.iter().map(|x| g.leaf(x.clone(), false)).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let mut g = Graph::new();
    let vars: alloc::vec::Vec<_> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]);
        let failure = core::cell::RefCell::new(None);
        let numeric = finite_diff_grad(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[i] = probe.clone();
                eval(&xs).unwrap_or_else(|e| {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                })
            },
            x,
            eps,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let sq = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n) * (a - n))
            .sum();
        let denom = sq(&analytic).max(sq(&numeric)).max(1e-24);
        worst = worst.max(num_traits::Float::sqrt(diff / denom));
    }
    Ok(worst)
}
