//! Shared data plumbing for the training phases: in-memory dataset cache,
//! channel standardization, and the class-balanced batch sampler.

use ndarray::{Array3, Array4, Axis};
use rayon::prelude::*;

use crate::data::{DatasetManifest, Label};
use crate::error::{Error, Result};
use crate::geometry::{crop_and_resize, derive_patch_regions, LandmarkSet, RegionName};
use crate::imgproc;
use crate::rng::{fisher_yates, substream_rng, Stream};

/// Per-channel standardization statistics of the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ChannelStats {
    pub fn compute(images: &[Array3<f32>]) -> ChannelStats {
        let mut sum = [0f64; 3];
        let mut sum_sq = [0f64; 3];
        let mut count = 0f64;
        for img in images {
            let (_, h, w) = img.dim();
            count += (h * w) as f64;
            for c in 0..3 {
                let ch = img.index_axis(Axis(0), c);
                sum[c] += ch.iter().map(|v| *v as f64).sum::<f64>();
                sum_sq[c] += ch.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>();
            }
        }
        let mut mean = [0f32; 3];
        let mut std = [0f32; 3];
        for c in 0..3 {
            let m = sum[c] / count;
            let var = (sum_sq[c] / count - m * m).max(1e-8);
            mean[c] = m as f32;
            std[c] = (var.sqrt() as f32).max(1e-4);
        }
        ChannelStats { mean, std }
    }

    pub fn standardize(&self, img: &mut Array3<f32>) {
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            img.index_axis_mut(Axis(0), c).mapv_inplace(|v| (v - m) / s);
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = format!(
            "mean {} {} {}\nstd {} {} {}\n",
            self.mean[0], self.mean[1], self.mean[2], self.std[0], self.std[1], self.std[2]
        );
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<ChannelStats> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut mean = [0f32; 3];
        let mut std = [1f32; 3];
        for line in text.lines() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("mean") => {
                    for m in mean.iter_mut() {
                        *m = it
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::InvalidInput("bad norm stats".into()))?;
                    }
                }
                Some("std") => {
                    for s in std.iter_mut() {
                        *s = it
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::InvalidInput("bad norm stats".into()))?;
                    }
                }
                _ => {}
            }
        }
        Ok(ChannelStats { mean, std })
    }
}

/// Training data held in memory: native-resolution images plus landmarks.
pub struct LoadedDataset {
    pub images: Vec<Array3<f32>>,
    pub landmarks: Vec<LandmarkSet>,
    pub labels: Vec<Label>,
    pub sample_ids: Vec<String>,
}

impl LoadedDataset {
    pub fn load(manifest: &DatasetManifest) -> Result<LoadedDataset> {
        let loaded: Result<Vec<(Array3<f32>, LandmarkSet)>> = manifest
            .samples
            .par_iter()
            .map(|s| Ok((s.load_image()?, s.load_landmarks()?)))
            .collect();
        let loaded = loaded?;
        let (images, landmarks): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
        Ok(LoadedDataset {
            images,
            landmarks,
            labels: manifest.samples.iter().map(|s| s.label).collect(),
            sample_ids: manifest.samples.iter().map(|s| s.sample_id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Resize to `size` and standardize one image for the full-face net.
pub fn prepare_input(img: &Array3<f32>, size: usize, norm: &ChannelStats) -> Array3<f32> {
    let (_, h, w) = img.dim();
    let mut out = if (h, w) == (size, size) {
        img.clone()
    } else {
        imgproc::resize_rgb(img, size, size)
    };
    norm.standardize(&mut out);
    out
}

/// Stack prepared images for the given indices into a batch.
pub fn gather_batch(
    data: &LoadedDataset,
    indices: &[usize],
    size: usize,
    norm: &ChannelStats,
) -> (Array4<f32>, Vec<Label>) {
    let mut batch = Array4::<f32>::zeros((indices.len(), 3, size, size));
    let prepared: Vec<Array3<f32>> = indices
        .par_iter()
        .map(|&i| prepare_input(&data.images[i], size, norm))
        .collect();
    for (row, img) in prepared.into_iter().enumerate() {
        batch.index_axis_mut(Axis(0), row).assign(&img);
    }
    let labels = indices.iter().map(|&i| data.labels[i]).collect();
    (batch, labels)
}

/// 64x64 standardized crops of one region for every sample.
pub fn region_crops(
    data: &LoadedDataset,
    region: RegionName,
    size: usize,
    norm: &ChannelStats,
) -> Result<Vec<Array3<f32>>> {
    data.images
        .par_iter()
        .zip(data.landmarks.par_iter())
        .map(|(img, lm)| {
            let patches = derive_patch_regions(lm)?;
            let mut crop = crop_and_resize(img, patches.get(region), size, size)?;
            norm.standardize(&mut crop);
            Ok(crop)
        })
        .collect()
}

/// Class-balanced batches for one epoch: each batch takes half its slots
/// from each class (shuffled by the epoch substream), cycling the smaller
/// class. Step count covers the larger class once.
pub fn balanced_batches(
    labels: &[Label],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    let mut live: Vec<usize> = Vec::new();
    let mut attack: Vec<usize> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Label::BonaFide => live.push(i),
            Label::Attack => attack.push(i),
        }
    }
    if live.is_empty() || attack.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut rng = substream_rng(seed, Stream::BatchSampler, epoch);
    fisher_yates(&mut live, &mut rng);
    fisher_yates(&mut attack, &mut rng);

    let half = (batch_size / 2).max(1);
    let steps = live.len().max(attack.len()).div_ceil(half);
    let mut batches = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut batch = Vec::with_capacity(2 * half);
        for j in 0..half {
            batch.push(live[(s * half + j) % live.len()]);
        }
        for j in 0..half {
            batch.push(attack[(s * half + j) % attack.len()]);
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_batches_cover_both_classes() {
        let labels: Vec<Label> = (0..20)
            .map(|i| if i < 12 { Label::BonaFide } else { Label::Attack })
            .collect();
        let batches = balanced_batches(&labels, 8, 7, 0).unwrap();
        assert_eq!(batches.len(), 3); // ceil(12 / 4)
        for b in &batches {
            assert_eq!(b.len(), 8);
            let live = b.iter().filter(|&&i| labels[i] == Label::BonaFide).count();
            assert_eq!(live, 4);
        }
        // every live sample appears exactly once across the epoch
        let mut live_seen: Vec<usize> = batches
            .iter()
            .flatten()
            .copied()
            .filter(|&i| labels[i] == Label::BonaFide)
            .collect();
        live_seen.sort_unstable();
        assert_eq!(live_seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_is_deterministic_and_epoch_dependent() {
        let labels: Vec<Label> = (0..16)
            .map(|i| if i % 2 == 0 { Label::BonaFide } else { Label::Attack })
            .collect();
        let a = balanced_batches(&labels, 4, 1, 0).unwrap();
        let b = balanced_batches(&labels, 4, 1, 0).unwrap();
        let c = balanced_batches(&labels, 4, 1, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_class_rejected() {
        let labels = vec![Label::BonaFide; 5];
        assert!(matches!(
            balanced_batches(&labels, 4, 0, 0),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn standardize_roundtrip_stats() {
        let imgs = vec![
            Array3::from_shape_fn((3, 4, 4), |(c, y, x)| (c + y + x) as f32 * 0.05),
            Array3::from_shape_fn((3, 4, 4), |(c, y, x)| (c * 2 + y * x) as f32 * 0.03),
        ];
        let stats = ChannelStats::compute(&imgs);
        let mut all = Vec::new();
        for img in &imgs {
            let mut s = img.clone();
            stats.standardize(&mut s);
            all.push(s);
        }
        for c in 0..3 {
            let vals: Vec<f32> = all
                .iter()
                .flat_map(|img| img.index_axis(Axis(0), c).iter().copied().collect::<Vec<_>>())
                .collect();
            let mean: f32 = vals.iter().sum::<f32>() / vals.len() as f32;
            assert!(mean.abs() < 1e-4);
        }
    }

    #[test]
    fn channel_stats_file_roundtrip() {
        let stats = ChannelStats {
            mean: [0.1, 0.2, 0.3],
            std: [0.9, 1.1, 1.3],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("norm_stats.txt");
        stats.save(&path).unwrap();
        let back = ChannelStats::load(&path).unwrap();
        assert_eq!(stats, back);
    }
}
