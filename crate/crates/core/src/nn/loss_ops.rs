//! Fused loss heads: softmax cross-entropy, triplet focal, and the masked
//! covariance term behind the whitening loss.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use super::{BackwardFn, GradStore, Graph, VarId};

/// Indices into an embedding batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

fn softmax_rows(logits: &ndarray::ArrayView2<f32>) -> Array2<f32> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Graph {
    /// Mean softmax cross-entropy over the batch; `labels[n]` is the class
    /// index for row `n`.
    pub fn softmax_cross_entropy(&mut self, logits: VarId, labels: &[usize]) -> VarId {
        let lv = self.value2(logits);
        let (n, _c) = lv.dim();
        assert_eq!(n, labels.len(), "label count mismatch");
        let probs = softmax_rows(&lv);
        let mut loss = 0.0f32;
        for (i, &y) in labels.iter().enumerate() {
            loss -= probs[(i, y)].max(1e-12).ln();
        }
        loss /= n as f32;

        let needs = self.needs_grad(logits);
        let labels_owned = labels.to_vec();
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let gs = grad.iter().next().copied().unwrap();
                let lv = g.value2(logits);
                let mut dl = softmax_rows(&lv);
                let n = labels_owned.len() as f32;
                for (i, &y) in labels_owned.iter().enumerate() {
                    dl[(i, y)] -= 1.0;
                }
                dl.mapv_inplace(|v| v * gs / n);
                store.accumulate(logits, dl.into_dyn());
            }) as BackwardFn
        });
        self.push(ArrayD::from_elem(IxDyn(&[]), loss), needs, back)
    }

    /// Triplet focal loss over mined triplets:
    /// `sum_i max(0, exp(D(a,p)/sigma) - exp(D(a,n)/sigma) + m)`
    /// with squared Euclidean `D` and the exponent clamped at 30.
    pub fn triplet_focal(
        &mut self,
        embeddings: VarId,
        triplets: &[Triplet],
        sigma: f32,
        margin: f32,
    ) -> VarId {
        const EXP_CLAMP: f32 = 30.0;
        let ev = self.value2(embeddings);
        let sq_dist = |a: usize, b: usize| -> f32 {
            let ra = ev.row(a);
            let rb = ev.row(b);
            ra.iter()
                .zip(rb.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        };
        let mut loss = 0.0f32;
        for t in triplets {
            let eap = (sq_dist(t.anchor, t.positive) / sigma).min(EXP_CLAMP).exp();
            let ean = (sq_dist(t.anchor, t.negative) / sigma).min(EXP_CLAMP).exp();
            loss += (eap - ean + margin).max(0.0);
        }

        let needs = self.needs_grad(embeddings);
        let triplets_owned = triplets.to_vec();
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let gs = grad.iter().next().copied().unwrap();
                let ev = g.value2(embeddings);
                let (n, d) = ev.dim();
                let mut de = Array2::<f32>::zeros((n, d));
                for t in &triplets_owned {
                    let mut dap = 0.0f32;
                    let mut dan = 0.0f32;
                    for k in 0..d {
                        let p = ev[(t.anchor, k)] - ev[(t.positive, k)];
                        let q = ev[(t.anchor, k)] - ev[(t.negative, k)];
                        dap += p * p;
                        dan += q * q;
                    }
                    let zap = dap / sigma;
                    let zan = dan / sigma;
                    let eap = zap.min(EXP_CLAMP).exp();
                    let ean = zan.min(EXP_CLAMP).exp();
                    if eap - ean + margin <= 0.0 {
                        continue;
                    }
                    // d loss / d D(a,p) = exp(z)/sigma unless clamped
                    let c_ap = if zap < EXP_CLAMP { eap / sigma } else { 0.0 };
                    let c_an = if zan < EXP_CLAMP { -ean / sigma } else { 0.0 };
                    for k in 0..d {
                        let p = ev[(t.anchor, k)] - ev[(t.positive, k)];
                        let q = ev[(t.anchor, k)] - ev[(t.negative, k)];
                        de[(t.anchor, k)] += gs * 2.0 * (c_ap * p + c_an * q);
                        de[(t.positive, k)] -= gs * 2.0 * c_ap * p;
                        de[(t.negative, k)] -= gs * 2.0 * c_an * q;
                    }
                }
                store.accumulate(embeddings, de.into_dyn());
            }) as BackwardFn
        });
        self.push(ArrayD::from_elem(IxDyn(&[]), loss), needs, back)
    }

    /// Mean absolute value of selected covariance entries of the (already
    /// instance-normalized) feature map `z` (N,C,h,w). `masks[n]` lists the
    /// selected strictly-upper-triangular (i, j) channel pairs for sample
    /// `n`; the result averages per-sample means over the batch.
    pub fn masked_cov_abs_mean(&mut self, z: VarId, masks: &[Vec<(u32, u32)>]) -> VarId {
        let zv = self.value4(z);
        let (n, c, h, w) = zv.dim();
        assert_eq!(n, masks.len(), "mask count mismatch");
        let hw = (h * w) as f32;
        let mut total = 0.0f32;
        for (ni, mask) in masks.iter().enumerate() {
            assert!(!mask.is_empty(), "empty covariance mask");
            let zs = zv.index_axis(Axis(0), ni);
            let zf = zs.into_shape_with_order((c, h * w)).unwrap();
            let mut acc = 0.0f32;
            for &(i, j) in mask {
                let sij = zf.row(i as usize).dot(&zf.row(j as usize)) / hw;
                acc += sij.abs();
            }
            total += acc / mask.len() as f32;
        }
        total /= n as f32;

        let needs = self.needs_grad(z);
        let masks_owned: Vec<Vec<(u32, u32)>> = masks.to_vec();
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let gs = grad.iter().next().copied().unwrap();
                let zv = g.value4(z);
                let (n, c, h, w) = zv.dim();
                let hw = (h * w) as f32;
                let mut dz = ndarray::Array4::<f32>::zeros((n, c, h, w));
                for (ni, mask) in masks_owned.iter().enumerate() {
                    let zs = zv.index_axis(Axis(0), ni);
                    let zf = zs.into_shape_with_order((c, h * w)).unwrap();
                    let scale = gs / (n as f32 * mask.len() as f32);
                    let mut dzn = dz.index_axis_mut(Axis(0), ni);
                    let mut dzf = dzn
                        .view_mut()
                        .into_shape_with_order((c, h * w))
                        .unwrap();
                    for &(i, j) in mask {
                        let (i, j) = (i as usize, j as usize);
                        let sij = zf.row(i).dot(&zf.row(j)) / hw;
                        let s = if sij > 0.0 {
                            1.0
                        } else if sij < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        if s == 0.0 {
                            continue;
                        }
                        let f = scale * s / hw;
                        let zj = zf.row(j).to_owned();
                        let zi = zf.row(i).to_owned();
                        dzf.row_mut(i).scaled_add(f, &zj);
                        dzf.row_mut(j).scaled_add(f, &zi);
                    }
                }
                store.accumulate(z, dz.into_dyn());
            }) as BackwardFn
        });
        self.push(ArrayD::from_elem(IxDyn(&[]), total), needs, back)
    }
}
