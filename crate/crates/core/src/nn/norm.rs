//! Batch normalization in train and eval modes.

use ndarray::{Array1, ArrayD, Axis, Ix4};

use super::{BackwardFn, GradStore, Graph, VarId};

pub(crate) const BN_EPS: f32 = 1e-5;

/// Per-channel batch statistics produced by a training-mode forward pass,
/// used by the caller to update running estimates.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f32>,
    pub var: Array1<f32>,
}

fn channel_stats(x: &ndarray::ArrayView4<f32>) -> (Array1<f32>, Array1<f32>) {
    let (n, c, h, w) = x.dim();
    let m = (n * h * w) as f32;
    let mut mean = Array1::<f32>::zeros(c);
    let mut var = Array1::<f32>::zeros(c);
    for j in 0..c {
        let ch = x.index_axis(Axis(1), j);
        let s: f32 = ch.sum();
        mean[j] = s / m;
    }
    for j in 0..c {
        let ch = x.index_axis(Axis(1), j);
        let mu = mean[j];
        var[j] = ch.fold(0.0, |acc, v| acc + (v - mu) * (v - mu)) / m;
    }
    (mean, var)
}

impl Graph {
    /// Training-mode batch norm: normalizes with batch statistics.
    /// Returns the output node plus the batch stats for running updates.
    pub fn batchnorm_train(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
    ) -> (VarId, BatchStats) {
        let xv = self.value4(x);
        let (n, c, h, w) = xv.dim();
        let (mean, var) = channel_stats(&xv);
        let inv_std: Array1<f32> = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());

        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let mut out = xv.to_owned();
        for j in 0..c {
            let (mu, is) = (mean[j], inv_std[j]);
            let (ga, be) = (gv[ndarray::IxDyn(&[j])], bv[ndarray::IxDyn(&[j])]);
            out.index_axis_mut(Axis(1), j)
                .mapv_inplace(|v| (v - mu) * is * ga + be);
        }

        let stats = BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let xv = g.value4(x);
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let gv = g.value(gamma);
                let m = (n * h * w) as f32;

                let mut dgamma = Array1::<f32>::zeros(c);
                let mut dbeta = Array1::<f32>::zeros(c);
                let mut dx = ndarray::Array4::<f32>::zeros((n, c, h, w));
                for j in 0..c {
                    let mu = mean[j];
                    let is = inv_std[j];
                    let ga = gv[ndarray::IxDyn(&[j])];
                    let xc = xv.index_axis(Axis(1), j);
                    let gc = g4.index_axis(Axis(1), j);
                    // xhat and per-channel reductions
                    let mut sum_g = 0.0f32;
                    let mut sum_gx = 0.0f32;
                    for (xi, gi) in xc.iter().zip(gc.iter()) {
                        let xhat = (xi - mu) * is;
                        sum_g += gi;
                        sum_gx += gi * xhat;
                    }
                    dbeta[j] = sum_g;
                    dgamma[j] = sum_gx;
                    let mut dxc = dx.index_axis_mut(Axis(1), j);
                    for ((di, xi), gi) in dxc.iter_mut().zip(xc.iter()).zip(gc.iter()) {
                        let xhat = (xi - mu) * is;
                        *di = ga * is / m * (m * gi - sum_g - xhat * sum_gx);
                    }
                }
                if g.needs_grad(x) {
                    store.accumulate(x, dx.into_dyn());
                }
                if g.needs_grad(gamma) {
                    store.accumulate(gamma, dgamma.into_dyn());
                }
                if g.needs_grad(beta) {
                    store.accumulate(beta, dbeta.into_dyn());
                }
            }) as BackwardFn
        });
        (self.push(out.into_dyn(), needs, back), stats)
    }

    /// Eval-mode batch norm: a fixed per-channel affine transform using the
    /// running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: &Array1<f32>,
        running_var: &Array1<f32>,
    ) -> VarId {
        let xv = self.value4(x);
        let (_, c, _, _) = xv.dim();
        let inv_std: Array1<f32> = running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let mut out = xv.to_owned();
        for j in 0..c {
            let (mu, is) = (running_mean[j], inv_std[j]);
            let (ga, be) = (gv[ndarray::IxDyn(&[j])], bv[ndarray::IxDyn(&[j])]);
            out.index_axis_mut(Axis(1), j)
                .mapv_inplace(|v| (v - mu) * is * ga + be);
        }
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let rm = running_mean.clone();
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let xv = g.value4(x);
                let (n, c, h, w) = xv.dim();
                let gv = g.value(gamma);
                if g.needs_grad(x) {
                    let mut dx = g4.to_owned();
                    for j in 0..c {
                        let f = gv[ndarray::IxDyn(&[j])] * inv_std[j];
                        dx.index_axis_mut(Axis(1), j).mapv_inplace(|v| v * f);
                    }
                    store.accumulate(x, dx.into_dyn());
                }
                if g.needs_grad(gamma) {
                    let mut dgamma = Array1::<f32>::zeros(c);
                    for j in 0..c {
                        let xc = xv.index_axis(Axis(1), j);
                        let gc = g4.index_axis(Axis(1), j);
                        let mut acc = 0.0;
                        for (xi, gi) in xc.iter().zip(gc.iter()) {
                            acc += gi * (xi - rm[j]) * inv_std[j];
                        }
                        dgamma[j] = acc;
                    }
                    store.accumulate(gamma, dgamma.into_dyn());
                }
                if g.needs_grad(beta) {
                    let mut dbeta = Array1::<f32>::zeros(c);
                    for j in 0..c {
                        dbeta[j] = g4.index_axis(Axis(1), j).sum();
                    }
                    store.accumulate(beta, dbeta.into_dyn());
                }
                let _ = (n, h, w);
            }) as BackwardFn
        });
        self.push(out.into_dyn(), needs, back)
    }
}
