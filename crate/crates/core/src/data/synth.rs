//! Procedural synthetic faces with planted disguise artifacts.
//!
//! Live samples are smooth rasterized faces (elliptical head, eye / nose /
//! mouth features placed at the canonical landmark positions, per-subject
//! geometry and color jitter). Attack samples start from the same base face
//! and overlay a high-frequency texture plus a hue rotation strictly inside
//! a seeded choice of patch regions; the chosen region names are recorded in
//! a sidecar so attention checks have ground truth. A global per-channel
//! affine "style" transform (scaled by `style_jitter`) is applied to both
//! classes last, so style is a nuisance factor uncorrelated with the label.

use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{self, derive_patch_regions, LandmarkSet, PatchRegion, RegionName, NUM_LANDMARKS};
use crate::imgproc;
use crate::rng::{self, Stream};

use super::manifest::{planted_regions_path, save_manifest, DatasetManifest, FaceSample, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects_live: usize,
    pub n_subjects_attack: usize,
    pub image_size: u32,
    pub artifact_region_count: usize,
    pub style_jitter: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects_live: 300,
            n_subjects_attack: 300,
            image_size: 64,
            artifact_region_count: 2,
            style_jitter: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 64 {
            return Err(Error::InvalidConfig(format!(
                "image_size must be >= 64, got {}",
                self.image_size
            )));
        }
        if self.n_subjects_live == 0 || self.n_subjects_attack == 0 {
            return Err(Error::InvalidConfig("subject counts must be >= 1".into()));
        }
        if !(1..=7).contains(&self.artifact_region_count) {
            return Err(Error::InvalidConfig(format!(
                "artifact_region_count must be in [1, 7], got {}",
                self.artifact_region_count
            )));
        }
        if !(0.0..=1.0).contains(&self.style_jitter) {
            return Err(Error::InvalidConfig(format!(
                "style_jitter must be in [0, 1], got {}",
                self.style_jitter
            )));
        }
        Ok(())
    }
}

/// Per-subject geometry jitter applied to the canonical landmark template.
#[derive(Debug, Clone)]
pub(crate) struct FaceGeom {
    scale: f32,
    dx: f32,
    dy: f32,
    eye_scale: f32,
    mouth_scale: f32,
    brow_lift: f32,
}

impl FaceGeom {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        FaceGeom {
            scale: rng.gen_range(0.88..0.98),
            dx: rng.gen_range(-0.02..0.02),
            dy: rng.gen_range(-0.02..0.02),
            eye_scale: rng.gen_range(0.85..1.15),
            mouth_scale: rng.gen_range(0.85..1.15),
            brow_lift: rng.gen_range(-0.012..0.012),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FaceColors {
    skin: [f32; 3],
    iris: [f32; 3],
    brow: [f32; 3],
    lip: [f32; 3],
    bg_top: [f32; 3],
    bg_bottom: [f32; 3],
}

impl FaceColors {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let tone = rng.gen_range(-0.18..0.15f32);
        let skin = [
            (0.82 + tone).clamp(0.3, 1.0),
            (0.66 + tone * 0.9).clamp(0.25, 1.0),
            (0.55 + tone * 0.8).clamp(0.2, 1.0),
        ];
        let iris = [
            rng.gen_range(0.1..0.5),
            rng.gen_range(0.2..0.5),
            rng.gen_range(0.2..0.7),
        ];
        let brow_v = rng.gen_range(0.08..0.3f32);
        let brow = [brow_v, brow_v * 0.8, brow_v * 0.7];
        let lip = [
            rng.gen_range(0.55..0.8),
            rng.gen_range(0.25..0.4),
            rng.gen_range(0.3..0.45),
        ];
        let bg_v = rng.gen_range(0.1..0.45f32);
        let bg_top = [bg_v, bg_v * 1.05, bg_v * 1.15];
        let bg_bottom = [bg_v * 0.6, bg_v * 0.65, bg_v * 0.75];
        FaceColors {
            skin,
            iris,
            brow,
            lip,
            bg_top,
            bg_bottom,
        }
    }
}

/// Per-channel affine style transform; invertible in float space.
#[derive(Debug, Clone)]
pub(crate) struct StyleParams {
    pub gain: [f32; 3],
    pub bias: [f32; 3],
}

impl StyleParams {
    fn sample(rng: &mut ChaCha8Rng, jitter: f32) -> Self {
        let mut gain = [1.0f32; 3];
        let mut bias = [0.0f32; 3];
        let contrast = 1.0 + jitter * rng.gen_range(-0.3..0.3f32);
        let brightness = jitter * rng.gen_range(-0.1..0.1f32);
        for c in 0..3 {
            gain[c] = contrast * (1.0 + jitter * rng.gen_range(-0.15..0.15f32));
            bias[c] = brightness + jitter * rng.gen_range(-0.05..0.05f32);
        }
        StyleParams { gain, bias }
    }
}

pub(crate) fn apply_style(img: &mut Array3<f32>, sp: &StyleParams) {
    for c in 0..3 {
        img.index_axis_mut(ndarray::Axis(0), c)
            .mapv_inplace(|v| v * sp.gain[c] + sp.bias[c]);
    }
}

#[cfg(test)]
pub(crate) fn undo_style(img: &mut Array3<f32>, sp: &StyleParams) {
    for c in 0..3 {
        img.index_axis_mut(ndarray::Axis(0), c)
            .mapv_inplace(|v| (v - sp.bias[c]) / sp.gain[c]);
    }
}

/// Canonical 98-point landmark template placed into `frame`, optionally
/// with per-subject jitter. Geometry tests rely on these analytic points.
pub(crate) fn template_landmarks(frame: (u32, u32), geom: Option<&FaceGeom>) -> LandmarkSet {
    let default = FaceGeom {
        scale: 0.95,
        dx: 0.0,
        dy: 0.0,
        eye_scale: 1.0,
        mouth_scale: 1.0,
        brow_lift: 0.0,
    };
    let g = geom.unwrap_or(&default);
    let mut pts: Vec<[f32; 2]> = Vec::with_capacity(NUM_LANDMARKS);

    // face contour 0-32: ellipse arc, ear level down around the chin
    for i in 0..33 {
        let psi = std::f32::consts::PI * i as f32 / 32.0;
        pts.push([0.5 - 0.42 * psi.cos(), 0.40 + 0.48 * psi.sin()]);
    }
    // eyebrows 33-50
    for side in 0..2 {
        for k in 0..9 {
            let t = k as f32 / 8.0;
            let x0 = if side == 0 { 0.18 } else { 0.60 };
            pts.push([
                x0 + 0.22 * t,
                0.32 - 0.05 * (std::f32::consts::PI * t).sin() + g.brow_lift,
            ]);
        }
    }
    // nose bridge 51-54 (54 = tip)
    for k in 0..4 {
        let t = k as f32 / 3.0;
        pts.push([0.5, 0.38 + 0.20 * t]);
    }
    // nostril row 55-59 (55 = left wing, 59 = right wing)
    for k in 0..5 {
        let t = k as f32 / 4.0;
        pts.push([0.41 + 0.18 * t, 0.64 + 0.015 * (std::f32::consts::PI * t).sin()]);
    }
    // eyes 60-75
    for side in 0..2 {
        let cx = if side == 0 { 0.30 } else { 0.70 };
        for k in 0..8 {
            let a = std::f32::consts::TAU * k as f32 / 8.0;
            pts.push([
                cx + 0.065 * g.eye_scale * a.cos(),
                0.40 + 0.032 * g.eye_scale * a.sin(),
            ]);
        }
    }
    // mouth 76-95: outer ring then inner ring
    for k in 0..12 {
        let a = std::f32::consts::TAU * k as f32 / 12.0;
        pts.push([
            0.5 + 0.14 * g.mouth_scale * a.cos(),
            0.74 + 0.06 * g.mouth_scale * a.sin(),
        ]);
    }
    for k in 0..8 {
        let a = std::f32::consts::TAU * k as f32 / 8.0;
        pts.push([
            0.5 + 0.09 * g.mouth_scale * a.cos(),
            0.74 + 0.027 * g.mouth_scale * a.sin(),
        ]);
    }
    // pupils 96-97
    pts.push([0.30, 0.40]);
    pts.push([0.70, 0.40]);

    let (w, h) = (frame.0 as f64, frame.1 as f64);
    let mapped: Vec<[f64; 2]> = pts
        .iter()
        .map(|p| {
            let x = (0.5 + (p[0] - 0.5) * g.scale + g.dx) as f64;
            let y = (0.5 + (p[1] - 0.5) * g.scale + g.dy) as f64;
            [
                (x * w).clamp(0.0, w - geometry::CLAMP_EPS),
                (y * h).clamp(0.0, h - geometry::CLAMP_EPS),
            ]
        })
        .collect();
    LandmarkSet::new(mapped, frame).expect("template landmarks in bounds")
}

fn bbox_of(lm: &LandmarkSet, idx: impl Iterator<Item = usize>) -> (f32, f32, f32, f32) {
    let mut b = (f32::INFINITY, f32::INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY);
    for i in idx {
        let p = lm.point(i);
        b.0 = b.0.min(p[0] as f32);
        b.1 = b.1.min(p[1] as f32);
        b.2 = b.2.max(p[0] as f32);
        b.3 = b.3.max(p[1] as f32);
    }
    b
}

/// Rasterize the base (live) face from its landmarks.
pub(crate) fn render_base(lm: &LandmarkSet, colors: &FaceColors) -> Array3<f32> {
    use geometry::wflw;
    let (w, h) = lm.frame();
    let (wf, hf) = (w as f32, h as f32);
    let mut img = Array3::<f32>::zeros((3, h as usize, w as usize));

    // background gradient
    for y in 0..h as usize {
        let t = y as f32 / hf;
        for c in 0..3 {
            let v = colors.bg_top[c] * (1.0 - t) + colors.bg_bottom[c] * t;
            img.index_axis_mut(ndarray::Axis(0), c)
                .row_mut(y)
                .fill(v);
        }
    }

    // head ellipse from contour extent; crown estimated above the brows
    let contour = bbox_of(lm, wflw::CONTOUR);
    let brows = bbox_of(lm, wflw::BROWS);
    let nose_tip_y = lm.point(wflw::NOSE_TIP)[1] as f32;
    let chin_y = lm.point(wflw::CHIN)[1] as f32;
    let head_top = brows.1 - 0.55 * (nose_tip_y - brows.1);
    let cx = (contour.0 + contour.2) / 2.0;
    let cy = (head_top + chin_y) / 2.0;
    let rx = (contour.2 - contour.0) / 2.0;
    let ry = (chin_y - head_top) / 2.0;
    imgproc::fill_ellipse(&mut img, cx, cy, rx, ry, colors.skin, 1.5);
    // subtle inner highlight keeps the face from being perfectly flat
    let hl = [
        (colors.skin[0] * 1.06).min(1.0),
        (colors.skin[1] * 1.06).min(1.0),
        (colors.skin[2] * 1.06).min(1.0),
    ];
    imgproc::fill_ellipse(&mut img, cx, cy - 0.1 * ry, rx * 0.8, ry * 0.8, hl, rx * 0.5);

    // eyebrows
    let brow_w = (0.012 * wf).max(1.0);
    let left_brow: Vec<(f32, f32)> = wflw::LEFT_BROW
        .map(|i| (lm.point(i)[0] as f32, lm.point(i)[1] as f32))
        .collect();
    let right_brow: Vec<(f32, f32)> = wflw::RIGHT_BROW
        .map(|i| (lm.point(i)[0] as f32, lm.point(i)[1] as f32))
        .collect();
    imgproc::stroke_polyline(&mut img, &left_brow, brow_w, colors.brow);
    imgproc::stroke_polyline(&mut img, &right_brow, brow_w, colors.brow);

    // eyes: sclera, iris, pupil
    for (range, pupil) in [
        (wflw::LEFT_EYE, wflw::LEFT_PUPIL),
        (wflw::RIGHT_EYE, wflw::RIGHT_PUPIL),
    ] {
        let eb = bbox_of(lm, range);
        let (ecx, ecy) = ((eb.0 + eb.2) / 2.0, (eb.1 + eb.3) / 2.0);
        let (erx, ery) = ((eb.2 - eb.0) / 2.0, (eb.3 - eb.1) / 2.0);
        imgproc::fill_ellipse(&mut img, ecx, ecy, erx, ery, [0.93, 0.93, 0.9], 0.8);
        let p = lm.point(pupil);
        let (px, py) = (p[0] as f32, p[1] as f32);
        imgproc::fill_ellipse(&mut img, px, py, ery * 0.8, ery * 0.8, colors.iris, 0.6);
        imgproc::fill_ellipse(&mut img, px, py, ery * 0.35, ery * 0.35, [0.05, 0.05, 0.06], 0.5);
    }

    // nose: bridge stroke plus nostril dots at the wings
    let shade = [
        colors.skin[0] * 0.88,
        colors.skin[1] * 0.86,
        colors.skin[2] * 0.85,
    ];
    let bridge: Vec<(f32, f32)> = (51..55)
        .map(|i| (lm.point(i)[0] as f32, lm.point(i)[1] as f32))
        .collect();
    imgproc::stroke_polyline(&mut img, &bridge, (0.01 * wf).max(1.0), shade);
    for i in [wflw::NOSE_LEFT_WING, wflw::NOSE_RIGHT_WING] {
        let p = lm.point(i);
        let r = (0.008 * wf).max(0.8);
        imgproc::fill_ellipse(&mut img, p[0] as f32, p[1] as f32, r, r * 0.8, [0.25, 0.18, 0.16], 0.6);
    }

    // mouth: outer lips and darker inner line
    let mb = bbox_of(lm, wflw::MOUTH);
    let (mcx, mcy) = ((mb.0 + mb.2) / 2.0, (mb.1 + mb.3) / 2.0);
    let (mrx, mry) = ((mb.2 - mb.0) / 2.0, (mb.3 - mb.1) / 2.0);
    imgproc::fill_ellipse(&mut img, mcx, mcy, mrx, mry, colors.lip, 0.8);
    let dark_lip = [colors.lip[0] * 0.55, colors.lip[1] * 0.5, colors.lip[2] * 0.5];
    imgproc::stroke_polyline(
        &mut img,
        &[(mb.0, mcy), (mb.2, mcy)],
        (0.006 * hf).max(0.8),
        dark_lip,
    );

    img
}

/// Overlay a high-frequency texture plus a hue rotation strictly inside each
/// region box. Pixels outside the boxes are untouched.
pub(crate) fn plant_artifacts(img: &mut Array3<f32>, regions: &[PatchRegion], rng: &mut ChaCha8Rng) {
    const NOISE_AMP: f32 = 0.20;
    const CHECKER_AMP: f32 = 0.16;
    for r in regions {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let hue_angle: f32 = sign * rng.gen_range(0.7..1.3f32);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let (yi, xi) = (y as usize, x as usize);
                let px = [img[(0, yi, xi)], img[(1, yi, xi)], img[(2, yi, xi)]];
                let rotated = imgproc::rotate_hue(px, hue_angle);
                let checker = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                let noise: f32 = rng.gen_range(-1.0..1.0);
                for c in 0..3 {
                    img[(c, yi, xi)] = rotated[c] + CHECKER_AMP * checker + NOISE_AMP * noise;
                }
            }
        }
    }
}

/// Everything produced for one synthetic subject, before any file is
/// written. Deterministic function of `(config.seed, subject_index)`.
pub(crate) struct SynthSample {
    pub image: Array3<f32>,
    pub landmarks: LandmarkSet,
    pub planted: Vec<RegionName>,
}

pub(crate) fn synth_sample(cfg: &SynthConfig, subject_index: u64, is_attack: bool) -> SynthSample {
    let frame = (cfg.image_size, cfg.image_size);
    let mut rng = rng::substream_rng(cfg.seed, Stream::SynthSubject, subject_index);
    let geom = FaceGeom::sample(&mut rng);
    let colors = FaceColors::sample(&mut rng);
    let lm = template_landmarks(frame, Some(&geom));
    let mut img = render_base(&lm, &colors);

    let mut planted = Vec::new();
    if is_attack {
        let patches = derive_patch_regions(&lm).expect("synthetic landmarks are non-degenerate");
        let mut order: Vec<usize> = (0..7).collect();
        rng::fisher_yates(&mut order, &mut rng);
        let chosen: Vec<PatchRegion> = order[..cfg.artifact_region_count]
            .iter()
            .map(|&i| patches.regions[i])
            .collect();
        plant_artifacts(&mut img, &chosen, &mut rng);
        planted = chosen.iter().map(|r| r.name).collect();
        // canonical order in the sidecar
        planted.sort_by_key(|n| n.index());
    }

    let mut style_rng = rng::substream_rng(cfg.seed, Stream::SynthStyle, subject_index);
    let style = StyleParams::sample(&mut style_rng, cfg.style_jitter);
    apply_style(&mut img, &style);

    SynthSample {
        image: img,
        landmarks: lm,
        planted,
    }
}

/// Generate the dataset under `out_dir` and write its manifest to
/// `out_dir/manifest.csv`. Same config (including seed) produces
/// byte-identical output.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    struct Job {
        sample_id: String,
        is_attack: bool,
        subject_index: u64,
    }
    let mut jobs = Vec::new();
    for i in 0..cfg.n_subjects_live {
        jobs.push(Job {
            sample_id: format!("L{i:04}"),
            is_attack: false,
            subject_index: i as u64,
        });
    }
    for i in 0..cfg.n_subjects_attack {
        jobs.push(Job {
            sample_id: format!("A{i:04}"),
            is_attack: true,
            subject_index: (cfg.n_subjects_live + i) as u64,
        });
    }

    let rendered: Vec<(String, bool, SynthSample)> = jobs
        .par_iter()
        .map(|j| {
            (
                j.sample_id.clone(),
                j.is_attack,
                synth_sample(cfg, j.subject_index, j.is_attack),
            )
        })
        .collect();

    let mut samples = Vec::with_capacity(rendered.len());
    for (sample_id, is_attack, s) in &rendered {
        let image_path = images_dir.join(format!("{sample_id}.png"));
        let landmark_path = images_dir.join(format!("{sample_id}.lm.txt"));
        imgproc::save_png(&image_path, &s.image)?;
        s.landmarks.save(&landmark_path)?;
        if *is_attack {
            let names: Vec<&str> = s.planted.iter().map(|n| n.as_str()).collect();
            let p = planted_regions_path(&image_path);
            std::fs::write(&p, names.join(",") + "\n").map_err(|e| Error::io(&p, e))?;
        }
        samples.push(FaceSample {
            sample_id: sample_id.clone(),
            subject_id: sample_id.clone(),
            image_path,
            landmark_path,
            label: if *is_attack { Label::Attack } else { Label::BonaFide },
            attack_type: is_attack.then(|| "disguise".to_string()),
            reference_size: (cfg.image_size, cfg.image_size),
        });
    }

    let manifest = DatasetManifest {
        name: "synthetic".into(),
        samples,
    };
    save_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Read a planted-region sidecar back as region names.
pub fn load_planted_regions(image_path: &Path) -> Result<Vec<RegionName>> {
    let p = planted_regions_path(image_path);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.trim()
        .split(',')
        .filter(|t| !t.is_empty())
        .map(RegionName::parse)
        .collect()
}
