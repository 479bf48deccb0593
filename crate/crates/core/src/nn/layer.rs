//! Forward and reverse-mode passes of the graph layers, written once per row
//! so that whole-graph execution and chunked, distributed execution perform
//! exactly the same floating-point operations per vertex.
//!
//! Per layer `ℓ` with input `x = dropout(h^{ℓ-1})`:
//!
//! | kind  | dense input `pre[v]`                    | output                                   |
//! |-------|-----------------------------------------|------------------------------------------|
//! | GCN   | `z = Σ_u Â(v,u) x[u]`                   | `ReLU(z·W + b)`                          |
//! | Sage  | `[x[v], mean_{u∈N(v)} x[u]]`            | `ReLU(pre·W + b)`                        |
//! | GCNII | `s = (1−a)·Σ_u Â(v,u) x[u] + a·h⁰[v]`    | `ReLU((1−β)s + β s·W)`, `β = ln(λ/ℓ+1)`   |

use crate::error::{Error, Result};
use crate::graph::{mean_adjacency, normalize_adjacency_with, Graph, WeightedCsr};
use crate::nn::dropout::{maybe_drop_row, Dropout};
use crate::nn::params::{Dense, LayerKind, LayerParams};
use crate::real::Real;
use crate::tensor::{accumulate_t_matmul, row_times, row_times_t, Matrix};

/// Sparse operators a model needs: the normalized adjacency (GCN, GCNII)
/// and the neighbor mean (GraphSage).
#[derive(Clone, Debug)]
pub struct Propagation<T> {
    pub norm: WeightedCsr<T>,
    pub mean: WeightedCsr<T>,
}

impl<T: Real> Propagation<T> {
    pub fn new(graph: &Graph, self_loops: bool) -> Self {
        Self {
            norm: normalize_adjacency_with(graph, self_loops).cast(),
            mean: mean_adjacency(graph).cast(),
        }
    }

    pub fn for_kind(&self, kind: LayerKind) -> &WeightedCsr<T> {
        match kind {
            LayerKind::Sage => &self.mean,
            LayerKind::Gcn | LayerKind::Gcnii => &self.norm,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.norm.num_rows()
    }
}

/// `out = Σ_{u ∈ row v} w(v,u) · src(u)`, ascending `u`; rows for which
/// `src` returns `None` contribute nothing. With `transpose` the mirrored
/// weights are used, giving the adjoint product.
#[inline]
pub fn gather_row<'a, T: Real>(
    op: &WeightedCsr<T>,
    v: usize,
    transpose: bool,
    mut src: impl FnMut(usize) -> Option<&'a [T]>,
    out: &mut [T],
) {
    out.iter_mut().for_each(|o| *o = T::zero());
    let weights = if transpose {
        op.row_transpose_weights(v)
    } else {
        op.row_weights(v)
    };
    for (&u, &w) in op.row_cols(v).iter().zip(weights) {
        if let Some(row) = src(u) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + w * x;
            }
        }
    }
}

/// `z = Â·h` over all vertices.
pub fn aggregate<T: Real>(adj: &WeightedCsr<T>, h: &Matrix<T>) -> Result<Matrix<T>> {
    if h.rows() != adj.num_rows() {
        return Err(Error::dim("aggregate rows", adj.num_rows(), h.rows()));
    }
    let mut z = Matrix::zeros(h.rows(), h.cols());
    for v in 0..h.rows() {
        gather_row(adj, v, false, |u| Some(h.row(u)), z.row_mut(v));
    }
    Ok(z)
}

/// Per-row arithmetic of one graph layer with its parameters bound.
#[derive(Clone, Copy, Debug)]
pub struct LayerMath<'p, T> {
    pub params: &'p LayerParams<T>,
    alpha: T,
    beta: T,
}

impl<'p, T: Real> LayerMath<'p, T> {
    /// `layer_index` is 1-based.
    pub fn new(params: &'p LayerParams<T>, layer_index: usize) -> Self {
        Self {
            params,
            alpha: T::from_f64(params.gcnii_alpha),
            beta: T::from_f64(params.gcnii_beta(layer_index)),
        }
    }

    pub fn kind(&self) -> LayerKind {
        self.params.kind
    }

    /// Width of the cached dense input `pre[v]`.
    pub fn pre_dim(&self) -> usize {
        self.params.weight.rows()
    }

    pub fn dim_in(&self) -> usize {
        self.params.dim_in()
    }

    pub fn dim_out(&self) -> usize {
        self.params.dim_out()
    }

    pub fn needs_h0(&self) -> bool {
        self.params.kind == LayerKind::Gcnii
    }

    /// Completes a row given the propagated input `agg` (`Σ Â x` or the
    /// neighbor mean). Writes `pre[v]` and `h[v]`.
    pub fn forward_row(&self, agg: &[T], x_self: &[T], h0: Option<&[T]>, pre: &mut [T], h: &mut [T]) {
        let p = self.params;
        match p.kind {
            LayerKind::Gcn => {
                pre.copy_from_slice(agg);
                row_times(pre, &p.weight, h);
                for (o, &b) in h.iter_mut().zip(&p.bias) {
                    *o = *o + b;
                }
            }
            LayerKind::Sage => {
                let d = x_self.len();
                pre[..d].copy_from_slice(x_self);
                pre[d..].copy_from_slice(agg);
                row_times(pre, &p.weight, h);
                for (o, &b) in h.iter_mut().zip(&p.bias) {
                    *o = *o + b;
                }
            }
            LayerKind::Gcnii => {
                let h0 = h0.expect("GCNII forward needs h0");
                let keep = T::one() - self.alpha;
                for ((s, &z), &i) in pre.iter_mut().zip(agg).zip(h0) {
                    *s = keep * z + self.alpha * i;
                }
                row_times(pre, &p.weight, h);
                let ident = T::one() - self.beta;
                for (o, &s) in h.iter_mut().zip(pre.iter()) {
                    *o = ident * s + self.beta * *o;
                }
            }
        }
        for o in h.iter_mut() {
            *o = o.max(T::zero());
        }
    }

    /// Local part of the backward pass for row `v`.
    ///
    /// Writes `ga = ∂L/∂(pre-activation)`, the gradient to propagate to
    /// neighbors (`prop`), and for GraphSage the direct self gradient,
    /// for GCNII the `h⁰` gradient.
    pub fn backward_row(
        &self,
        grad_h: &[T],
        h: &[T],
        ga: &mut [T],
        prop: &mut [T],
        self_grad: Option<&mut [T]>,
        grad_h0: Option<&mut [T]>,
    ) {
        let p = self.params;
        for ((g, &o), &h) in ga.iter_mut().zip(grad_h).zip(h) {
            *g = if h > T::zero() { o } else { T::zero() };
        }
        match p.kind {
            LayerKind::Gcn => row_times_t(ga, &p.weight, prop),
            LayerKind::Sage => {
                let d = prop.len();
                let mut gc = vec![T::zero(); 2 * d];
                row_times_t(ga, &p.weight, &mut gc);
                if let Some(s) = self_grad {
                    s.copy_from_slice(&gc[..d]);
                }
                prop.copy_from_slice(&gc[d..]);
            }
            LayerKind::Gcnii => {
                let mut gs = vec![T::zero(); prop.len()];
                row_times_t(ga, &p.weight, &mut gs);
                let ident = T::one() - self.beta;
                for (s, &g) in gs.iter_mut().zip(ga.iter()) {
                    *s = ident * g + self.beta * *s;
                }
                let keep = T::one() - self.alpha;
                for (o, &s) in prop.iter_mut().zip(&gs) {
                    *o = keep * s;
                }
                if let Some(g0) = grad_h0 {
                    for (o, &s) in g0.iter_mut().zip(&gs) {
                        *o = self.alpha * s;
                    }
                }
            }
        }
    }

    /// `∂L/∂x[u]`: the optional self term plus the adjoint gather of
    /// neighbor gradients that are available.
    pub fn input_grad_row<'a>(
        &self,
        prop_op: &WeightedCsr<T>,
        u: usize,
        self_grad: Option<&[T]>,
        prop_of: impl FnMut(usize) -> Option<&'a [T]>,
        out: &mut [T],
    ) {
        gather_row(prop_op, u, true, prop_of, out);
        if let Some(s) = self_grad {
            for (o, &g) in out.iter_mut().zip(s) {
                *o = g + *o;
            }
        }
    }

    /// Adds `Σ_r pre[r]ᵀ ga[r]` (rows in the given order) and the bias
    /// gradient into `grads`. Call [`LayerMath::finish_weight_grad`] once
    /// after all rows are in.
    pub fn accumulate_weight_grad(
        &self,
        pre: &Matrix<T>,
        ga: &Matrix<T>,
        rows: impl IntoIterator<Item = usize> + Clone,
        grads: &mut LayerParams<T>,
    ) {
        accumulate_t_matmul(pre, ga, rows.clone(), &mut grads.weight);
        if !grads.bias.is_empty() {
            for r in rows {
                for (b, &g) in grads.bias.iter_mut().zip(ga.row(r)) {
                    *b = *b + g;
                }
            }
        }
    }

    pub fn finish_weight_grad(&self, grads: &mut LayerParams<T>) {
        if self.params.kind == LayerKind::Gcnii {
            for w in grads.weight.as_mut_slice() {
                *w = self.beta * *w;
            }
        }
    }
}

/// `out = x·W + b` for one row.
#[inline]
pub fn dense_row<T: Real>(dense: &Dense<T>, x: &[T], out: &mut [T]) {
    row_times(x, &dense.weight, out);
    for (o, &b) in out.iter_mut().zip(&dense.bias) {
        *o = *o + b;
    }
}

/// Adds `Σ_r x[r]ᵀ g[r]` and `Σ_r g[r]` into `grads`.
pub fn accumulate_dense_grad<T: Real>(
    x: &Matrix<T>,
    g: &Matrix<T>,
    rows: impl IntoIterator<Item = usize> + Clone,
    grads: &mut Dense<T>,
) {
    accumulate_t_matmul(x, g, rows.clone(), &mut grads.weight);
    for r in rows {
        for (b, &gr) in grads.bias.iter_mut().zip(g.row(r)) {
            *b = *b + gr;
        }
    }
}

/// Everything [`layer_backward`] needs from the matching forward call.
#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    pub layer_index: usize,
    pub dropout: Option<Dropout>,
    pub pre: Matrix<T>,
    pub h: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    /// `∂L/∂h^{ℓ-1}`.
    pub grad_in: Matrix<T>,
    /// `∂L/∂h⁰` contributed by this layer (GCNII only).
    pub grad_h0: Option<Matrix<T>>,
    pub params: LayerParams<T>,
}

/// Whole-graph forward pass of one layer. `layer_index` is 1-based;
/// `h0` is required for GCNII.
pub fn layer_forward<T: Real>(
    params: &LayerParams<T>,
    prop: &Propagation<T>,
    h_prev: &Matrix<T>,
    h0: Option<&Matrix<T>>,
    layer_index: usize,
    dropout: Option<Dropout>,
) -> Result<(Matrix<T>, LayerCache<T>)> {
    let n = prop.num_vertices();
    let math = LayerMath::new(params, layer_index);
    if h_prev.rows() != n {
        return Err(Error::dim("layer_forward rows", n, h_prev.rows()));
    }
    if h_prev.cols() != math.dim_in() {
        return Err(Error::dim("layer_forward input width", math.dim_in(), h_prev.cols()));
    }
    if math.needs_h0() {
        match h0 {
            None => return Err(Error::invalid("GCNII layer needs h0")),
            Some(m) if m.rows() != n || m.cols() != math.dim_in() => {
                return Err(Error::dim("layer_forward h0", n * math.dim_in(), m.len()))
            }
            _ => {}
        }
    }
    let mut x = Matrix::zeros(n, h_prev.cols());
    for v in 0..n {
        maybe_drop_row(dropout.as_ref(), v, h_prev.row(v), x.row_mut(v));
    }
    let op = prop.for_kind(params.kind);
    let mut agg = vec![T::zero(); x.cols()];
    let mut pre = Matrix::zeros(n, math.pre_dim());
    let mut h = Matrix::zeros(n, math.dim_out());
    for v in 0..n {
        gather_row(op, v, false, |u| Some(x.row(u)), &mut agg);
        math.forward_row(&agg, x.row(v), h0.map(|m| m.row(v)), pre.row_mut(v), h.row_mut(v));
    }
    let cache = LayerCache {
        layer_index,
        dropout,
        pre,
        h: h.clone(),
    };
    Ok((h, cache))
}

/// Exact reverse-mode gradients of [`layer_forward`].
pub fn layer_backward<T: Real>(
    params: &LayerParams<T>,
    prop: &Propagation<T>,
    cache: &LayerCache<T>,
    grad_out: &Matrix<T>,
) -> Result<LayerGrads<T>> {
    let n = prop.num_vertices();
    let math = LayerMath::new(params, cache.layer_index);
    if grad_out.rows() != n || grad_out.cols() != math.dim_out() {
        return Err(Error::dim("layer_backward grad_out", n * math.dim_out(), grad_out.len()));
    }
    if cache.h.rows() != n || cache.pre.cols() != math.pre_dim() {
        return Err(Error::dim("layer_backward cache", n * math.pre_dim(), cache.pre.len()));
    }
    let d_in = math.dim_in();
    let mut ga = Matrix::zeros(n, math.dim_out());
    let mut prop_grad = Matrix::zeros(n, d_in);
    let sage = params.kind == LayerKind::Sage;
    let mut self_grad = sage.then(|| Matrix::zeros(n, d_in));
    let mut grad_h0 = math.needs_h0().then(|| Matrix::zeros(n, d_in));
    for v in 0..n {
        math.backward_row(
            grad_out.row(v),
            cache.h.row(v),
            ga.row_mut(v),
            prop_grad.row_mut(v),
            self_grad.as_mut().map(|m| m.row_mut(v)),
            grad_h0.as_mut().map(|m| m.row_mut(v)),
        );
    }
    let op = prop.for_kind(params.kind);
    let mut grad_in = Matrix::zeros(n, d_in);
    let mut gx = vec![T::zero(); d_in];
    for u in 0..n {
        math.input_grad_row(
            op,
            u,
            self_grad.as_ref().map(|m| m.row(u)),
            |v| Some(prop_grad.row(v)),
            &mut gx,
        );
        maybe_drop_row(cache.dropout.as_ref(), u, &gx, grad_in.row_mut(u));
    }
    let mut grads = params.zeros_like();
    math.accumulate_weight_grad(&cache.pre, &ga, 0..n, &mut grads);
    math.finish_weight_grad(&mut grads);
    Ok(LayerGrads {
        grad_in,
        grad_h0,
        params: grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_er;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_layer(kind: LayerKind, h: usize, rng: &mut impl Rng) -> LayerParams<f64> {
        let mut p = LayerParams::zeros(kind, h, h);
        p.weight = random_matrix(p.weight.rows(), h, rng);
        for b in &mut p.bias {
            *b = rng.random_range(-0.5..0.5);
        }
        p
    }

    #[test]
    fn aggregate_edgeless_is_identity() {
        let prop = Propagation::<f64>::new(&Graph::empty(4), true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = random_matrix(4, 3, &mut rng);
        assert_eq!(aggregate(&prop.norm, &h).unwrap(), h);
    }

    #[test]
    fn aggregate_k2_identity() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let prop = Propagation::<f64>::new(&g, true);
        let z = aggregate(&prop.norm, &Matrix::identity(2)).unwrap();
        assert_eq!(z.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn aggregate_matches_dense_reference() {
        let g = generate_er(50, 0.1, 3).unwrap();
        let prop = Propagation::<f64>::new(&g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_matrix(50, 6, &mut rng);
        let sparse = aggregate(&prop.norm, &h).unwrap();
        let dense = prop.norm.to_dense().matmul(&h);
        assert!(sparse.max_abs_diff(&dense) < 1e-12);
        assert!(aggregate(&prop.norm, &Matrix::zeros(49, 6)).is_err());
    }

    #[test]
    fn gcn_identity_weights_on_edgeless_graph() {
        let prop = Propagation::<f64>::new(&Graph::empty(5), true);
        let mut p = LayerParams::zeros(LayerKind::Gcn, 3, 3);
        p.weight = Matrix::identity(3);
        let h = Matrix::from_fn(5, 3, |r, c| (r + c) as f64 * 0.25);
        let (out, _) = layer_forward(&p, &prop, &h, None, 1, None).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn gcnii_full_residual_ignores_previous_layer() {
        let g = generate_er(8, 0.4, 2).unwrap();
        let prop = Propagation::<f64>::new(&g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_layer(LayerKind::Gcnii, 4, &mut rng);
        p.gcnii_alpha = 1.0;
        let h0 = random_matrix(8, 4, &mut rng);
        let a = random_matrix(8, 4, &mut rng);
        let b = random_matrix(8, 4, &mut rng);
        let (ya, _) = layer_forward(&p, &prop, &a, Some(&h0), 3, None).unwrap();
        let (yb, _) = layer_forward(&p, &prop, &b, Some(&h0), 3, None).unwrap();
        assert_eq!(ya, yb);
    }

    #[test]
    fn gcnii_requires_h0() {
        let prop = Propagation::<f64>::new(&Graph::empty(2), true);
        let p = LayerParams::zeros(LayerKind::Gcnii, 2, 2);
        let h = Matrix::zeros(2, 2);
        assert!(layer_forward(&p, &prop, &h, None, 1, None).is_err());
        assert!(layer_forward(&p, &prop, &Matrix::zeros(3, 2), Some(&h), 1, None).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let g = generate_er(6, 0.5, 1).unwrap();
        let prop = Propagation::<f64>::new(&g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gcnii] {
            let p = random_layer(kind, 4, &mut rng);
            let h = random_matrix(6, 4, &mut rng);
            let (_, cache) = layer_forward(&p, &prop, &h, Some(&h), 2, None).unwrap();
            let gr = layer_backward(&p, &prop, &cache, &Matrix::zeros(6, 4)).unwrap();
            assert!(gr.grad_in.as_slice().iter().all(|&x| x == 0.0));
            assert!(gr.params.weight.as_slice().iter().all(|&x| x == 0.0));
            assert!(gr.params.bias.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn gcnii_h0_gradient_tracks_alpha() {
        let g = generate_er(6, 0.5, 1).unwrap();
        let prop = Propagation::<f64>::new(&g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = random_layer(LayerKind::Gcnii, 4, &mut rng);
        let h = Matrix::from_fn(6, 4, |_, _| rng.random_range(0.1..1.0));
        let upstream = Matrix::from_fn(6, 4, |_, _| 1.0);
        for (alpha, nonzero) in [(0.1, true), (0.0, false)] {
            p.gcnii_alpha = alpha;
            let (_, cache) = layer_forward(&p, &prop, &h, Some(&h), 1, None).unwrap();
            let gr = layer_backward(&p, &prop, &cache, &upstream).unwrap();
            let g0 = gr.grad_h0.unwrap();
            assert_eq!(g0.as_slice().iter().any(|&x| x != 0.0), nonzero);
        }
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let prop = Propagation::<f64>::new(&Graph::empty(3), true);
        let p = LayerParams::zeros(LayerKind::Gcn, 2, 2);
        let (_, cache) = layer_forward(&p, &prop, &Matrix::zeros(3, 2), None, 1, None).unwrap();
        assert!(layer_backward(&p, &prop, &cache, &Matrix::zeros(2, 2)).is_err());
    }
}
