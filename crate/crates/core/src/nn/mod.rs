//! Minimal define-by-run autodiff over `ndarray` f32 tensors.
//!
//! A [`Graph`] is a tape: every op evaluates eagerly, records its inputs and
//! a backward closure, and returns a [`VarId`] handle. `backward(loss)` walks
//! the tape in reverse and accumulates gradients for every node that needs
//! them, so gradients at interior nodes (needed for Grad-CAM) come for free.
//!
//! Ops are specialized to what the models and losses need: conv / batch-norm /
//! linear blocks, elementwise and broadcast arithmetic over per-channel
//! statistics, and fused loss heads.

mod adam;
mod conv;
mod init;
mod loss_ops;
mod norm;

pub use adam::Adam;
pub use conv::conv2d_shape;
pub use init::{he_normal, zeros};
pub use loss_ops::Triplet;
pub use norm::BatchStats;

use ndarray::{ArrayD, Axis, Ix2, Ix4, IxDyn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

pub(crate) type BackwardFn = Box<dyn Fn(&Graph, &ArrayD<f32>, &mut GradStore) + Send>;

pub(crate) struct Node {
    pub value: ArrayD<f32>,
    pub needs_grad: bool,
    pub backward: Option<BackwardFn>,
}

/// Gradients keyed by node id, filled in by [`Graph::backward`].
pub struct GradStore {
    grads: Vec<Option<ArrayD<f32>>>,
}

impl GradStore {
    pub(crate) fn accumulate(&mut self, id: VarId, delta: ArrayD<f32>) {
        match &mut self.grads[id.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    pub fn get(&self, id: VarId) -> Option<&ArrayD<f32>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: VarId) -> Option<ArrayD<f32>> {
        self.grads[id.0].take()
    }
}

#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &ArrayD<f32> {
        &self.nodes[id.0].value
    }

    pub fn value2(&self, id: VarId) -> ndarray::ArrayView2<'_, f32> {
        self.nodes[id.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("expected rank-2 value")
    }

    pub fn value4(&self, id: VarId) -> ndarray::ArrayView4<'_, f32> {
        self.nodes[id.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("expected rank-4 value")
    }

    pub fn scalar(&self, id: VarId) -> f32 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1, "expected scalar node");
        v.iter().next().copied().unwrap()
    }

    pub(crate) fn needs_grad(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<f32>,
        needs_grad: bool,
        backward: Option<BackwardFn>,
    ) -> VarId {
        self.nodes.push(Node {
            value,
            needs_grad,
            backward,
        });
        VarId(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient (batch data, constants).
    pub fn input(&mut self, value: ArrayD<f32>) -> VarId {
        self.push(value, false, None)
    }

    /// Leaf whose gradient is collected (model parameters).
    pub fn param(&mut self, value: &ArrayD<f32>) -> VarId {
        self.push(value.clone(), true, None)
    }

    pub fn scalar_input(&mut self, v: f32) -> VarId {
        self.input(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: VarId) -> GradStore {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut store = GradStore {
            grads: vec![None; self.nodes.len()],
        };
        store.grads[loss.0] = Some(ArrayD::from_elem(self.value(loss).raw_dim(), 1.0));
        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                store.grads[idx] = None;
                continue;
            }
            let Some(grad) = store.grads[idx].take() else {
                continue;
            };
            if let Some(back) = &self.nodes[idx].backward {
                back(self, &grad, &mut store);
            }
            // keep the gradient so interior nodes stay inspectable
            store.grads[idx] = Some(grad);
        }
        store
    }

    // ---- elementwise and broadcast ops ----

    pub fn relu(&mut self, x: VarId) -> VarId {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let needs = self.needs_grad(x);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let mask = g.value(x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                store.accumulate(x, grad * &mask);
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let value = self.value(a) + self.value(b);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                if g.needs_grad(a) {
                    store.accumulate(a, grad.clone());
                }
                if g.needs_grad(b) {
                    store.accumulate(b, grad.clone());
                }
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let value = self.value(a) * self.value(b);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                if g.needs_grad(a) {
                    store.accumulate(a, grad * g.value(b));
                }
                if g.needs_grad(b) {
                    store.accumulate(b, grad * g.value(a));
                }
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    pub fn add_scalar(&mut self, x: VarId, c: f32) -> VarId {
        let value = self.value(x).mapv(|v| v + c);
        let needs = self.needs_grad(x);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |_g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                store.accumulate(x, grad.clone());
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    pub fn mul_scalar(&mut self, x: VarId, c: f32) -> VarId {
        let value = self.value(x).mapv(|v| v * c);
        let needs = self.needs_grad(x);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |_g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                store.accumulate(x, grad.mapv(|v| v * c));
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    /// Elementwise multiply by a constant array (same shape as `x`).
    pub fn mul_const(&mut self, x: VarId, c: ArrayD<f32>) -> VarId {
        assert_eq!(self.value(x).shape(), c.shape());
        let value = self.value(x) * &c;
        let needs = self.needs_grad(x);
        let back: Option<BackwardFn> = needs.then(|| {
            let c = c.clone();
            Box::new(move |_g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                store.accumulate(x, grad * &c);
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    pub fn add_const(&mut self, x: VarId, c: ArrayD<f32>) -> VarId {
        assert_eq!(self.value(x).shape(), c.shape());
        let value = self.value(x) + &c;
        let needs = self.needs_grad(x);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |_g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                store.accumulate(x, grad.clone());
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    /// `sqrt(x + eps)`, elementwise.
    pub fn sqrt_eps(&mut self, x: VarId, eps: f32) -> VarId {
        let value = self.value(x).mapv(|v| (v + eps).sqrt());
        let needs = self.needs_grad(x);
        let out_val = value.clone();
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |_g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                store.accumulate(x, grad * &out_val.mapv(|y| 0.5 / y));
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    /// Scalar `x[index]`, used to pick one logit for Grad-CAM.
    pub fn select_scalar(&mut self, x: VarId, index: &[usize]) -> VarId {
        let v = self.value(x)[IxDyn(index)];
        let needs = self.needs_grad(x);
        let idx = index.to_vec();
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let mut dx = ArrayD::zeros(g.value(x).raw_dim());
                dx[IxDyn(&idx)] = grad.iter().next().copied().unwrap();
                store.accumulate(x, dx);
            }) as BackwardFn
        });
        self.push(ArrayD::from_elem(IxDyn(&[]), v), needs, back)
    }

    /// Weighted sum of scalar terms: `sum(w_i * v_i)`.
    pub fn weighted_sum(&mut self, terms: &[(VarId, f32)]) -> VarId {
        let total: f32 = terms
            .iter()
            .map(|(id, w)| w * self.scalar(*id))
            .sum();
        let needs = terms.iter().any(|(id, _)| self.needs_grad(*id));
        let terms_owned: Vec<(VarId, f32)> = terms.to_vec();
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let gs = grad.iter().next().copied().unwrap();
                for (id, w) in &terms_owned {
                    if g.needs_grad(*id) {
                        store.accumulate(*id, ArrayD::from_elem(IxDyn(&[]), gs * w));
                    }
                }
            }) as BackwardFn
        });
        self.push(ArrayD::from_elem(IxDyn(&[]), total), needs, back)
    }

    // ---- (N, C, H, W) <-> (N, C) broadcast ops ----

    /// Per-(sample, channel) spatial mean: (N,C,H,W) -> (N,C).
    pub fn spatial_mean(&mut self, x: VarId) -> VarId {
        let v4 = self.value4(x);
        let (_, _, h, w) = v4.dim();
        let area = (h * w) as f32;
        let value = v4
            .sum_axis(Axis(3))
            .sum_axis(Axis(2))
            .mapv(|s| s / area)
            .into_dyn();
        let needs = self.needs_grad(x);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let xv = g.value4(x);
                let (n, c, h, w) = xv.dim();
                let area = (h * w) as f32;
                let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = ndarray::Array4::<f32>::zeros((n, c, h, w));
                for i in 0..n {
                    for j in 0..c {
                        dx.index_axis_mut(Axis(0), i)
                            .index_axis_mut(Axis(0), j)
                            .fill(g2[(i, j)] / area);
                    }
                }
                store.accumulate(x, dx.into_dyn());
            }) as BackwardFn
        });
        self.push(value, needs, back)
    }

    fn broadcast_op(
        &mut self,
        x: VarId,
        s: VarId,
        kind: BcKind,
    ) -> VarId {
        let xv = self.value4(x);
        let (n, c, _, _) = xv.dim();
        let sv = self.value2(s);
        assert_eq!(sv.dim(), (n, c), "broadcast stat shape mismatch");
        let mut value = xv.to_owned();
        for i in 0..n {
            for j in 0..c {
                let sij = sv[(i, j)];
                value
                    .index_axis_mut(Axis(0), i)
                    .index_axis_mut(Axis(0), j)
                    .mapv_inplace(|v| kind.apply(v, sij));
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(s);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let xv = g.value4(x);
                let sv = g.value2(s);
                let (n, c, _, _) = xv.dim();
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                if g.needs_grad(x) {
                    let mut dx = g4.to_owned();
                    if matches!(kind, BcKind::Mul | BcKind::Div) {
                        for i in 0..n {
                            for j in 0..c {
                                let f = match kind {
                                    BcKind::Mul => sv[(i, j)],
                                    BcKind::Div => 1.0 / sv[(i, j)],
                                    _ => unreachable!(),
                                };
                                dx.index_axis_mut(Axis(0), i)
                                    .index_axis_mut(Axis(0), j)
                                    .mapv_inplace(|v| v * f);
                            }
                        }
                    }
                    store.accumulate(x, dx.into_dyn());
                }
                if g.needs_grad(s) {
                    let mut ds = ndarray::Array2::<f32>::zeros((n, c));
                    for i in 0..n {
                        for j in 0..c {
                            let gij = g4.slice(ndarray::s![i, j, .., ..]);
                            let d = match kind {
                                BcKind::Add => gij.sum(),
                                BcKind::Sub => -gij.sum(),
                                BcKind::Mul => {
                                    let xij = xv.slice(ndarray::s![i, j, .., ..]);
                                    (&gij * &xij).sum()
                                }
                                BcKind::Div => {
                                    let xij = xv.slice(ndarray::s![i, j, .., ..]);
                                    let sij = sv[(i, j)];
                                    -(&gij * &xij).sum() / (sij * sij)
                                }
                            };
                            ds[(i, j)] = d;
                        }
                    }
                    store.accumulate(s, ds.into_dyn());
                }
            }) as BackwardFn
        });
        self.push(value.into_dyn(), needs, back)
    }

    /// (N,C,H,W) + stat(N,C) broadcast over space.
    pub fn add_nc(&mut self, x: VarId, s: VarId) -> VarId {
        self.broadcast_op(x, s, BcKind::Add)
    }

    /// (N,C,H,W) - stat(N,C).
    pub fn sub_nc(&mut self, x: VarId, s: VarId) -> VarId {
        self.broadcast_op(x, s, BcKind::Sub)
    }

    /// (N,C,H,W) * stat(N,C).
    pub fn mul_nc(&mut self, x: VarId, s: VarId) -> VarId {
        self.broadcast_op(x, s, BcKind::Mul)
    }

    /// (N,C,H,W) / stat(N,C).
    pub fn div_nc(&mut self, x: VarId, s: VarId) -> VarId {
        self.broadcast_op(x, s, BcKind::Div)
    }

    /// Global average pool (N,C,H,W) -> (N,C). Same math as `spatial_mean`.
    pub fn global_avg_pool(&mut self, x: VarId) -> VarId {
        self.spatial_mean(x)
    }

    /// Fully connected layer: x(N,Din) . w(Din,Dout) + b(Dout).
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> VarId {
        let xv = self.value2(x);
        let wv = self.value2(w);
        let bv = self.value(b);
        let mut out = xv.dot(&wv);
        for mut row in out.rows_mut() {
            for (o, bb) in row.iter_mut().zip(bv.iter()) {
                *o += bb;
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let gm = grad.view().into_dimensionality::<Ix2>().unwrap();
                if g.needs_grad(x) {
                    store.accumulate(x, gm.dot(&g.value2(w).t()).into_dyn());
                }
                if g.needs_grad(w) {
                    store.accumulate(w, g.value2(x).t().dot(&gm).into_dyn());
                }
                if g.needs_grad(b) {
                    store.accumulate(b, gm.sum_axis(Axis(0)).into_dyn());
                }
            }) as BackwardFn
        });
        self.push(out.into_dyn(), needs, back)
    }
}

#[derive(Debug, Clone, Copy)]
enum BcKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BcKind {
    fn apply(self, x: f32, s: f32) -> f32 {
        match self {
            BcKind::Add => x + s,
            BcKind::Sub => x - s,
            BcKind::Mul => x * s,
            BcKind::Div => x / s,
        }
    }
}

/// Instance statistics used by CSA and AIAW: per-(sample, channel) spatial
/// mean and standard deviation, plus the centered features.
/// Returns `(mu, sigma, centered)` where `sigma = sqrt(var)`.
pub fn instance_stats(g: &mut Graph, x: VarId) -> (VarId, VarId, VarId) {
    let mu = g.spatial_mean(x);
    let centered = g.sub_nc(x, mu);
    let sq = g.mul(centered, centered);
    let var = g.spatial_mean(sq);
    // tiny floor keeps sqrt differentiable on constant channels
    let sigma = g.sqrt_eps(var, 1e-12);
    (mu, sigma, centered)
}

/// Instance-normalized features `(x - mu) / (sigma + eps)`.
pub fn instance_norm(g: &mut Graph, x: VarId, eps: f32) -> VarId {
    let (_, sigma, centered) = instance_stats(g, x);
    let denom = g.add_scalar(sigma, eps);
    g.div_nc(centered, denom)
}
