//! Whole-graph forward and backward passes of the full network.

use crate::error::{Error, Result};
use crate::nn::dropout::{maybe_drop_row, DropoutPlan};
use crate::nn::layer::{accumulate_dense_grad, dense_row, layer_backward, layer_forward, LayerCache, Propagation};
use crate::nn::params::{LayerKind, ModelParams};
use crate::real::Real;
use crate::tensor::{row_times_t, Matrix};

#[derive(Clone, Debug)]
pub struct ModelCache<T> {
    pub dropout: Option<DropoutPlan>,
    /// Input features after dropout.
    pub x_in: Matrix<T>,
    /// Output of the input projection.
    pub h0: Matrix<T>,
    pub layers: Vec<LayerCache<T>>,
    /// Last hidden state after dropout.
    pub head_in: Matrix<T>,
}

/// Input projection for every vertex: `h⁰ = ReLU(dropout(X)·W + b)`.
pub fn input_forward<T: Real>(
    params: &ModelParams<T>,
    features: &Matrix<T>,
    dropout: Option<&DropoutPlan>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let w = &params.input.weight;
    if features.cols() != w.rows() {
        return Err(Error::dim("input features", w.rows(), features.cols()));
    }
    let n = features.rows();
    let mask = dropout.and_then(|d| d.slot(0));
    let mut x = Matrix::zeros(n, features.cols());
    let mut h0 = Matrix::zeros(n, w.cols());
    for v in 0..n {
        maybe_drop_row(mask.as_ref(), v, features.row(v), x.row_mut(v));
        dense_row(&params.input, x.row(v), h0.row_mut(v));
        for o in h0.row_mut(v) {
            *o = o.max(T::zero());
        }
    }
    Ok((x, h0))
}

/// Full forward pass; `dropout = None` is evaluation mode.
pub fn model_forward<T: Real>(
    params: &ModelParams<T>,
    prop: &Propagation<T>,
    features: &Matrix<T>,
    dropout: Option<DropoutPlan>,
) -> Result<(Matrix<T>, ModelCache<T>)> {
    let n = prop.num_vertices();
    if features.rows() != n {
        return Err(Error::dim("model_forward rows", n, features.rows()));
    }
    let (x_in, h0) = input_forward(params, features, dropout.as_ref())?;
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut h = h0.clone();
    for (i, lp) in params.layers.iter().enumerate() {
        let mask = dropout.and_then(|d| d.slot(i + 1));
        let (next, cache) = layer_forward(lp, prop, &h, Some(&h0), i + 1, mask)?;
        caches.push(cache);
        h = next;
    }
    let head_mask = dropout.and_then(|d| d.slot(params.layers.len() + 1));
    let mut head_in = Matrix::zeros(n, h.cols());
    let mut logits = Matrix::zeros(n, params.head.weight.cols());
    for v in 0..n {
        maybe_drop_row(head_mask.as_ref(), v, h.row(v), head_in.row_mut(v));
        dense_row(&params.head, head_in.row(v), logits.row_mut(v));
    }
    Ok((
        logits,
        ModelCache {
            dropout,
            x_in,
            h0,
            layers: caches,
            head_in,
        },
    ))
}

/// Gradients of all parameters given `∂loss/∂logits`.
pub fn model_backward<T: Real>(
    params: &ModelParams<T>,
    prop: &Propagation<T>,
    cache: &ModelCache<T>,
    grad_logits: &Matrix<T>,
) -> Result<ModelParams<T>> {
    let n = prop.num_vertices();
    if grad_logits.rows() != n || grad_logits.cols() != params.head.weight.cols() {
        return Err(Error::dim(
            "model_backward grad_logits",
            n * params.head.weight.cols(),
            grad_logits.len(),
        ));
    }
    let mut grads = params.zeros_like();
    accumulate_dense_grad(&cache.head_in, grad_logits, 0..n, &mut grads.head);
    let num_layers = params.layers.len();
    let head_mask = cache.dropout.and_then(|d| d.slot(num_layers + 1));
    let hidden = params.head.weight.rows();
    let mut grad_h = Matrix::zeros(n, hidden);
    let mut gx = vec![T::zero(); hidden];
    for v in 0..n {
        row_times_t(grad_logits.row(v), &params.head.weight, &mut gx);
        maybe_drop_row(head_mask.as_ref(), v, &gx, grad_h.row_mut(v));
    }
    let mut grad_h0: Matrix<T> = Matrix::zeros(n, hidden);
    for i in (0..num_layers).rev() {
        let g = layer_backward(&params.layers[i], prop, &cache.layers[i], &grad_h)?;
        grads.layers[i] = g.params;
        if let Some(g0) = g.grad_h0 {
            for (a, &b) in grad_h0.as_mut_slice().iter_mut().zip(g0.as_slice()) {
                *a = *a + b;
            }
        }
        grad_h = g.grad_in;
    }
    // h⁰ feeds the first layer directly and, for GCNII, every residual.
    if params.layers.first().map(|l| l.kind) == Some(LayerKind::Gcnii) {
        for (a, &b) in grad_h.as_mut_slice().iter_mut().zip(grad_h0.as_slice()) {
            *a = b + *a;
        }
    }
    let mut ga = Matrix::zeros(n, hidden);
    for v in 0..n {
        for ((o, &g), &h) in ga.row_mut(v).iter_mut().zip(grad_h.row(v)).zip(cache.h0.row(v)) {
            *o = if h > T::zero() { g } else { T::zero() };
        }
    }
    accumulate_dense_grad(&cache.x_in, &ga, 0..n, &mut grads.input);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_er, Graph};
    use crate::nn::loss::softmax_xent;
    use crate::nn::params::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Problem {
        prop: Propagation<f64>,
        features: Matrix<f64>,
        labels: Vec<u32>,
        mask: Vec<bool>,
    }

    fn problem(n: usize, f: usize, c: usize, seed: u64) -> Problem {
        let g = generate_er(n, 0.3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Problem {
            prop: Propagation::new(&g, true),
            features: Matrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0)),
            labels: (0..n).map(|_| rng.random_range(0..c as u32)).collect(),
            mask: (0..n).map(|v| v % 3 != 0).collect(),
        }
    }

    fn randomize(params: &mut ModelParams<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in params.tensors_mut() {
            for x in t.iter_mut() {
                *x = rng.random_range(-0.6..0.6);
            }
        }
    }

    fn loss(p: &ModelParams<f64>, pr: &Problem, drop: Option<DropoutPlan>) -> f64 {
        let (logits, _) = model_forward(p, &pr.prop, &pr.features, drop).unwrap();
        softmax_xent(&logits, &pr.labels, &pr.mask).unwrap().loss
    }

    fn check_gradients(kind: LayerKind, drop: Option<DropoutPlan>) {
        let pr = problem(10, 5, 3, 11);
        let cfg = ModelConfig::new(kind, 3, 4, 5, 3);
        let mut params = ModelParams::<f64>::init(&cfg, 1);
        randomize(&mut params, 2);
        let (logits, cache) = model_forward(&params, &pr.prop, &pr.features, drop).unwrap();
        let out = softmax_xent(&logits, &pr.labels, &pr.mask).unwrap();
        let grads = model_backward(&params, &pr.prop, &cache, &out.grad).unwrap();
        let analytic: Vec<f64> = grads.tensors().concat();
        let eps = 1e-5;
        let mut idx = 0;
        let mut worst: f64 = 0.0;
        let count = params.num_values();
        for i in 0..count {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let (mut pt, mut mt) = (plus.tensors_mut(), minus.tensors_mut());
            let (mut off, mut t) = (i, 0);
            while off >= pt[t].len() {
                off -= pt[t].len();
                t += 1;
            }
            pt[t][off] += eps;
            mt[t][off] -= eps;
            let fd = (loss(&plus, &pr, drop) - loss(&minus, &pr, drop)) / (2.0 * eps);
            let a = analytic[idx];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-3);
            worst = worst.max(rel);
            idx += 1;
        }
        assert!(worst < 1e-6, "{kind:?}: worst relative error {worst}");
    }

    #[test]
    fn gcn_gradients_match_finite_differences() {
        check_gradients(LayerKind::Gcn, None);
    }

    #[test]
    fn sage_gradients_match_finite_differences() {
        check_gradients(LayerKind::Sage, None);
    }

    #[test]
    fn gcnii_gradients_match_finite_differences() {
        check_gradients(LayerKind::Gcnii, None);
    }

    #[test]
    fn gradients_with_dropout_match_finite_differences() {
        let plan = DropoutPlan {
            rate: 0.3,
            seed: 4,
            epoch: 2,
        };
        for kind in [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gcnii] {
            check_gradients(kind, Some(plan));
        }
    }

    #[test]
    fn zero_head_gives_log_classes_loss() {
        let pr = problem(12, 4, 5, 3);
        let cfg = ModelConfig::new(LayerKind::Gcn, 2, 8, 4, 5);
        let params = ModelParams::<f64>::init(&cfg, 0);
        assert!((loss(&params, &pr, None) - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_feature_width() {
        let prop = Propagation::<f64>::new(&Graph::empty(3), true);
        let cfg = ModelConfig::new(LayerKind::Gcn, 1, 2, 4, 2);
        let params = ModelParams::<f64>::init(&cfg, 0);
        assert!(model_forward(&params, &prop, &Matrix::zeros(3, 5), None).is_err());
        assert!(model_forward(&params, &prop, &Matrix::zeros(2, 4), None).is_err());
    }
}
