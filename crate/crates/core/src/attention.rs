//! Grad-CAM attention: heatmaps from the full-face model's last
//! convolutional layer and per-region scores via top-k% pooling.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PatchSet, RegionName, CANONICAL_REGIONS};
use crate::imgproc;
use crate::netcore::{FullFaceModel, Mode};
use crate::nn::Graph;

/// Max-normalized non-negative heatmap at the model's input resolution.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub values: Array2<f32>,
    pub source_class: usize,
}

/// Seven scores in canonical region order, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionScores {
    pub scores: [f32; 7],
    pub k_percent: f32,
}

impl AttentionScores {
    pub fn get(&self, name: RegionName) -> f32 {
        self.scores[name.index()]
    }
}

/// Grad-CAM on the reduced feature map: channel weights are the spatial
/// means of `d logit[class] / d A`, the raw map is `ReLU(sum_c w_c A_c)`,
/// normalized by its max (an all-zero map stays zero) and bilinear-resized
/// to the input resolution. `target_class = None` uses the predicted class.
pub fn gradcam_heatmap(
    model: &FullFaceModel,
    image: &Array3<f32>,
    target_class: Option<usize>,
) -> Result<Heatmap> {
    let (c, h, w) = image.dim();
    let s = model.cfg.input_size;
    if c != 3 || h != s || w != s {
        return Err(Error::ShapeMismatch(format!(
            "grad-cam input must be (3, {s}, {s}), got ({c}, {h}, {w})"
        )));
    }
    let mut batch = Array4::<f32>::zeros((1, 3, s, s));
    batch.index_axis_mut(Axis(0), 0).assign(image);

    let mut g = Graph::new();
    let input = g.input(batch.into_dyn());
    let out = model.forward(&mut g, input, Mode::Eval)?;
    let logits = g.value2(out.logits);
    let class = target_class.unwrap_or_else(|| {
        if logits[(0, 1)] > logits[(0, 0)] {
            1
        } else {
            0
        }
    });
    if class > 1 {
        return Err(Error::InvalidInput(format!("target class {class} out of range")));
    }

    let target = g.select_scalar(out.logits, &[0, class]);
    let grads = g.backward(target);
    let grad_f = grads
        .get(out.f_org)
        .ok_or_else(|| Error::InvalidInput("feature layer received no gradient".into()))?
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?
        .to_owned();
    let features = g.value4(out.f_org);
    let (_, channels, hf, wf) = features.dim();

    let mut raw = Array2::<f32>::zeros((hf, wf));
    for ch in 0..channels {
        let weight = grad_f.slice(ndarray::s![0, ch, .., ..]).sum() / (hf * wf) as f32;
        let act = features.slice(ndarray::s![0, ch, .., ..]);
        raw.zip_mut_with(&act, |r, a| *r += weight * a);
    }
    raw.mapv_inplace(|v| v.max(0.0));
    let max = raw.fold(0.0f32, |a, &b| a.max(b));
    if max > 0.0 {
        raw.mapv_inplace(|v| v / max);
    }
    let values = imgproc::resize_channel(&raw.view(), s, s);
    // bilinear interpolation of values in [0, 1] stays in [0, 1]
    Ok(Heatmap {
        values,
        source_class: class,
    })
}

/// Channel weights alone (spatial mean of the logit gradient per channel);
/// exposed for oracle tests against closed forms and finite differences.
pub fn gradcam_channel_weights(
    model: &FullFaceModel,
    image: &Array3<f32>,
    target_class: usize,
) -> Result<Vec<f32>> {
    let s = model.cfg.input_size;
    let mut batch = Array4::<f32>::zeros((1, 3, s, s));
    batch.index_axis_mut(Axis(0), 0).assign(image);
    let mut g = Graph::new();
    let input = g.input(batch.into_dyn());
    let out = model.forward(&mut g, input, Mode::Eval)?;
    let target = g.select_scalar(out.logits, &[0, target_class]);
    let grads = g.backward(target);
    let grad_f = grads
        .get(out.f_org)
        .ok_or_else(|| Error::InvalidInput("feature layer received no gradient".into()))?;
    let g4 = grad_f
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let (_, channels, hf, wf) = g4.dim();
    Ok((0..channels)
        .map(|ch| g4.slice(ndarray::s![0, ch, .., ..]).sum() / (hf * wf) as f32)
        .collect())
}

/// Mean of the top `k_percent` heatmap values inside each region:
/// `n = ceil(k/100 * |region|)` (at least 1), score = sum of the `n`
/// largest values divided by `n`.
pub fn region_attention_scores(
    hm: &Heatmap,
    patches: &PatchSet,
    k_percent: f32,
) -> Result<AttentionScores> {
    if !(0.0..=100.0).contains(&k_percent) || k_percent <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "k_percent must be in (0, 100], got {k_percent}"
        )));
    }
    let (h, w) = hm.values.dim();
    let mut scores = [0f32; 7];
    for (idx, region) in patches.regions.iter().enumerate() {
        if region.x1 as usize > w || region.y1 as usize > h {
            return Err(Error::InvalidInput(format!(
                "region {} exceeds the {w}x{h} heatmap",
                region.name
            )));
        }
        if region.area() == 0 {
            return Err(Error::InvalidInput(format!("region {} is empty", region.name)));
        }
        let mut vals: Vec<f32> = hm
            .values
            .slice(ndarray::s![
                region.y0 as usize..region.y1 as usize,
                region.x0 as usize..region.x1 as usize
            ])
            .iter()
            .copied()
            .collect();
        let n = ((k_percent as f64 / 100.0 * vals.len() as f64).ceil() as usize)
            .clamp(1, vals.len());
        vals.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
        scores[idx] = vals[..n].iter().sum::<f32>() / n as f32;
    }
    Ok(AttentionScores {
        scores,
        k_percent,
    })
}

/// One row of the persisted attention table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub sample_id: String,
    pub scores: AttentionScores,
}

/// Attention table keyed by sample id, persisted as CSV with columns
/// `sample_id,forehead,...,mouth_chin,k_percent`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTable {
    pub rows: Vec<AttentionRow>,
}

impl AttentionTable {
    pub fn get(&self, sample_id: &str) -> Option<&AttentionScores> {
        self.rows
            .iter()
            .find(|r| r.sample_id == sample_id)
            .map(|r| &r.scores)
    }

    pub fn index(&self) -> BTreeMap<&str, &AttentionScores> {
        self.rows
            .iter()
            .map(|r| (r.sample_id.as_str(), &r.scores))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["sample_id".to_string()];
        header.extend(CANONICAL_REGIONS.iter().map(|r| r.as_str().to_string()));
        header.push("k_percent".into());
        w.write_record(&header)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        for row in &self.rows {
            let mut rec = vec![row.sample_id.clone()];
            rec.extend(row.scores.scores.iter().map(|s| s.to_string()));
            rec.push(row.scores.k_percent.to_string());
            w.write_record(&rec)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::InvalidInput(e.to_string()))?;
            if rec.len() != 9 {
                return Err(Error::InvalidInput(format!(
                    "attention row needs 9 fields, got {}",
                    rec.len()
                )));
            }
            let mut scores = [0f32; 7];
            for (i, s) in scores.iter_mut().enumerate() {
                *s = rec[i + 1]
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad score `{}`", &rec[i + 1])))?;
            }
            let k_percent: f32 = rec[8]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad k_percent `{}`", &rec[8])))?;
            rows.push(AttentionRow {
                sample_id: rec[0].to_string(),
                scores: AttentionScores { scores, k_percent },
            });
        }
        Ok(AttentionTable { rows })
    }
}

/// Blend a color-mapped heatmap over the input at 0.5 alpha.
pub fn overlay_heatmap(image: &Array3<f32>, hm: &Heatmap) -> Array3<f32> {
    let (_, h, w) = image.dim();
    let hv = if hm.values.dim() == (h, w) {
        hm.values.clone()
    } else {
        imgproc::resize_channel(&hm.values.view(), h, w)
    };
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let color = imgproc::colormap_jet(hv[(y, x)]);
            for c in 0..3 {
                out[(c, y, x)] = 0.5 * out[(c, y, x)] + 0.5 * color[c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PatchRegion;
    use crate::netcore::FullFaceConfig;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn patchset_1region_grid() -> PatchSet {
        // seven tiny disjoint boxes inside an 8x8 frame
        let mk = |i: usize, name: RegionName| PatchRegion {
            name,
            x0: (i % 4 * 2) as u32,
            y0: (i / 4 * 2) as u32,
            x1: (i % 4 * 2 + 2) as u32,
            y1: (i / 4 * 2 + 2) as u32,
        };
        PatchSet {
            regions: std::array::from_fn(|i| mk(i, CANONICAL_REGIONS[i])),
            frame: (8, 8),
        }
    }

    #[test]
    fn constant_region_scores_its_value() {
        let hm = Heatmap {
            values: Array2::from_elem((8, 8), 0.37),
            source_class: 0,
        };
        let ps = patchset_1region_grid();
        for k in [10.0, 50.0, 100.0] {
            let s = region_attention_scores(&hm, &ps, k).unwrap();
            for v in s.scores {
                assert!((v - 0.37).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn four_pixel_half_k() {
        // region values {1, 0, 0, 0}, k = 50 -> (1 + 0) / 2 = 0.5
        let mut values = Array2::<f32>::zeros((8, 8));
        values[(0, 0)] = 1.0;
        let hm = Heatmap { values, source_class: 0 };
        let ps = patchset_1region_grid();
        let s = region_attention_scores(&hm, &ps, 50.0).unwrap();
        assert!((s.scores[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn monotone_in_k() {
        let mut rng = stream_rng(1, Stream::ModelInit);
        let values = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..1.0f32));
        let hm = Heatmap { values, source_class: 1 };
        let ps = patchset_1region_grid();
        let mut prev = [f32::INFINITY; 7];
        for k in [10.0, 25.0, 50.0, 75.0, 100.0] {
            let s = region_attention_scores(&hm, &ps, k).unwrap();
            for (i, v) in s.scores.iter().enumerate() {
                assert!(*v <= prev[i] + 1e-6, "score must not grow with k");
                prev[i] = *v;
            }
        }
    }

    #[test]
    fn matches_sort_oracle_exactly() {
        let mut rng = stream_rng(2, Stream::ModelInit);
        let values = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..1.0f32));
        let hm = Heatmap { values: values.clone(), source_class: 0 };
        let ps = patchset_1region_grid();
        let k = 37.0f32;
        let got = region_attention_scores(&hm, &ps, k).unwrap();
        for (i, r) in ps.regions.iter().enumerate() {
            let mut vals = Vec::new();
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    vals.push(values[(y as usize, x as usize)]);
                }
            }
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let n = ((k as f64 / 100.0) * vals.len() as f64).ceil() as usize;
            let expected: f32 = vals[..n].iter().sum::<f32>() / n as f32;
            assert_eq!(got.scores[i], expected);
        }
    }

    fn tiny_model() -> FullFaceModel {
        let cfg = FullFaceConfig {
            input_size: 16,
            stage_channels: vec![4, 8],
            reduce_channels: 6,
            embed_dim: 6,
            num_styles: 4,
        };
        FullFaceModel::new(cfg, &mut stream_rng(7, Stream::ModelInit))
    }

    /// Route channel 0's spatial mean straight to logit 1.
    fn wire_identity_head(m: &mut FullFaceModel) {
        m.embed.weight.fill(0.0);
        m.embed.bias.fill(0.0);
        for i in 0..6 {
            m.embed.weight[ndarray::IxDyn(&[i, i])] = 1.0;
        }
        m.cls.weight.fill(0.0);
        m.cls.bias.fill(0.0);
        m.cls.weight[ndarray::IxDyn(&[0, 1])] = 1.0;
    }

    #[test]
    fn closed_form_channel_weights() {
        let mut m = tiny_model();
        wire_identity_head(&mut m);
        let mut rng = stream_rng(8, Stream::ModelInit);
        let img = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(0.0..1.0f32));
        let weights = gradcam_channel_weights(&m, &img, 1).unwrap();
        // logit1 = gap(channel 0) -> w_0 = 1/(hf*wf), all others 0
        let hf = m.feature_size();
        let expected = 1.0 / (hf * hf) as f32;
        assert!((weights[0] - expected).abs() < 1e-6 * expected.max(1.0));
        for wc in &weights[1..] {
            assert!(wc.abs() < 1e-9);
        }
    }

    #[test]
    fn heatmap_proportional_to_selected_channel() {
        let mut m = tiny_model();
        wire_identity_head(&mut m);
        let mut rng = stream_rng(9, Stream::ModelInit);
        let img = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(0.0..1.0f32));
        let hm = gradcam_heatmap(&m, &img, Some(1)).unwrap();
        assert_eq!(hm.values.dim(), (16, 16));
        // compare against channel 0 of the feature map, relu'd/normalized/resized
        let mut batch = Array4::<f32>::zeros((1, 3, 16, 16));
        batch.index_axis_mut(Axis(0), 0).assign(&img);
        let (f, _, _) = m.forward_eval(&batch).unwrap();
        let mut ch0 = f.slice(ndarray::s![0, 0, .., ..]).to_owned();
        ch0.mapv_inplace(|v| v.max(0.0));
        let max = ch0.fold(0.0f32, |a, &b| a.max(b));
        if max > 0.0 {
            ch0.mapv_inplace(|v| v / max);
        }
        let expected = imgproc::resize_channel(&ch0.view(), 16, 16);
        for (a, b) in hm.values.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn all_negative_weights_give_zero_heatmap() {
        let mut m = tiny_model();
        wire_identity_head(&mut m);
        // negate the embedding pass-through so every channel weight is <= 0
        for i in 0..6 {
            m.embed.weight[ndarray::IxDyn(&[i, i])] = -1.0;
        }
        let mut rng = stream_rng(10, Stream::ModelInit);
        let img = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(0.0..1.0f32));
        let hm = gradcam_heatmap(&m, &img, Some(1)).unwrap();
        assert!(hm.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn heatmap_in_unit_range_and_scale_invariant() {
        let m = tiny_model();
        let mut rng = stream_rng(11, Stream::ModelInit);
        let img = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(0.0..1.0f32));
        let hm = gradcam_heatmap(&m, &img, None).unwrap();
        assert!(hm.values.iter().all(|v| (0.0..=1.0).contains(v)));

        // scaling the classifier weights by c > 0 leaves the map unchanged
        let mut scaled = tiny_model();
        scaled.cls.weight.mapv_inplace(|v| v * 3.5);
        scaled.cls.bias.mapv_inplace(|v| v * 3.5);
        let hm2 = gradcam_heatmap(&scaled, &img, Some(hm.source_class)).unwrap();
        for (a, b) in hm.values.iter().zip(hm2.values.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn table_roundtrip() {
        let rows = vec![
            AttentionRow {
                sample_id: "s1".into(),
                scores: AttentionScores { scores: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], k_percent: 50.0 },
            },
            AttentionRow {
                sample_id: "s2".into(),
                scores: AttentionScores { scores: [1.0; 7], k_percent: 50.0 },
            },
        ];
        let table = AttentionTable { rows };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("att.csv");
        table.save(&path).unwrap();
        let back = AttentionTable::load(&path).unwrap();
        assert_eq!(table, back);
        assert!(back.get("s2").is_some());
        assert!(back.get("nope").is_none());
    }
}
