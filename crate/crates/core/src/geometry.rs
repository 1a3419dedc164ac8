//! Landmark geometry: coordinate rescaling, derivation of the seven
//! canonical facial patch regions, and patch cropping.
//!
//! Landmarks follow the 98-point WFLW layout: face contour 0-32 (chin at
//! 16), eyebrows 33-50, nose 51-59 (tip at 54, nostril row 55-59), eyes
//! 60-75, mouth 76-95, pupils 96-97.

use std::fmt;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc;

/// WFLW-98 index groups.
pub mod wflw {
    use std::ops::Range;

    pub const CONTOUR: Range<usize> = 0..33;
    pub const CHIN: usize = 16;
    pub const LEFT_BROW: Range<usize> = 33..42;
    pub const RIGHT_BROW: Range<usize> = 42..51;
    pub const BROWS: Range<usize> = 33..51;
    pub const NOSE: Range<usize> = 51..60;
    pub const NOSE_TIP: usize = 54;
    pub const NOSE_LEFT_WING: usize = 55;
    pub const NOSE_RIGHT_WING: usize = 59;
    pub const LEFT_EYE: Range<usize> = 60..68;
    pub const RIGHT_EYE: Range<usize> = 68..76;
    pub const MOUTH: Range<usize> = 76..96;
    pub const LEFT_PUPIL: usize = 96;
    pub const RIGHT_PUPIL: usize = 97;
}

pub const NUM_LANDMARKS: usize = 98;

/// Landmarks are clamped to `dim - CLAMP_EPS` when rescaling so they stay
/// strictly inside the half-open frame.
pub const CLAMP_EPS: f64 = 1e-3;

/// The seven canonical regions, in the order used everywhere downstream
/// (attention tables, fusion concatenation, checkpoints).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionName {
    Forehead,
    LeftEye,
    RightEye,
    LeftCheek,
    Nose,
    RightCheek,
    MouthChin,
}

pub const CANONICAL_REGIONS: [RegionName; 7] = [
    RegionName::Forehead,
    RegionName::LeftEye,
    RegionName::RightEye,
    RegionName::LeftCheek,
    RegionName::Nose,
    RegionName::RightCheek,
    RegionName::MouthChin,
];

impl RegionName {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionName::Forehead => "forehead",
            RegionName::LeftEye => "left_eye",
            RegionName::RightEye => "right_eye",
            RegionName::LeftCheek => "left_cheek",
            RegionName::Nose => "nose",
            RegionName::RightCheek => "right_cheek",
            RegionName::MouthChin => "mouth_chin",
        }
    }

    pub fn index(self) -> usize {
        CANONICAL_REGIONS.iter().position(|r| *r == self).unwrap()
    }

    pub fn parse(s: &str) -> Result<Self> {
        CANONICAL_REGIONS
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown region name `{s}`")))
    }
}

impl fmt::Display for RegionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 98 pixel-space points plus the frame they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
    frame: (u32, u32),
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, frame: (u32, u32)) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::LandmarkCount {
                path: "<memory>".into(),
                found: points.len(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if !(0.0..frame.0 as f64).contains(&p[0]) || !(0.0..frame.1 as f64).contains(&p[1]) {
                return Err(Error::LandmarkOutOfBounds {
                    path: "<memory>".into(),
                    index: i,
                    x: p[0],
                    y: p[1],
                    width: frame.0,
                    height: frame.1,
                });
            }
        }
        Ok(LandmarkSet { points, frame })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn frame(&self) -> (u32, u32) {
        self.frame
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// Load a sidecar file of 98 `x y` lines in the coordinates of `frame`.
    pub fn load(path: &Path, frame: (u32, u32)) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::with_capacity(NUM_LANDMARKS);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let x: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("bad landmark line `{line}` in {}", path.display())))?;
            let y: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("bad landmark line `{line}` in {}", path.display())))?;
            points.push([x, y]);
        }
        if points.len() != NUM_LANDMARKS {
            return Err(Error::LandmarkCount {
                path: path.to_path_buf(),
                found: points.len(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if !(0.0..frame.0 as f64).contains(&p[0]) || !(0.0..frame.1 as f64).contains(&p[1]) {
                return Err(Error::LandmarkOutOfBounds {
                    path: path.to_path_buf(),
                    index: i,
                    x: p[0],
                    y: p[1],
                    width: frame.0,
                    height: frame.1,
                });
            }
        }
        Ok(LandmarkSet { points, frame })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::with_capacity(NUM_LANDMARKS * 16);
        for p in &self.points {
            s.push_str(&format!("{} {}\n", p[0], p[1]));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Rescale landmarks from their own frame to `target`, multiplying each
/// coordinate by `target / source` per axis and clamping into the new frame.
pub fn rescale_landmarks(lm: &LandmarkSet, target: (u32, u32)) -> LandmarkSet {
    let (tw, th) = (target.0 as f64, target.1 as f64);
    let scale_w = tw / lm.frame.0 as f64;
    let scale_h = th / lm.frame.1 as f64;
    let points = lm
        .points
        .iter()
        .map(|p| {
            [
                (p[0] * scale_w).clamp(0.0, tw - CLAMP_EPS),
                (p[1] * scale_h).clamp(0.0, th - CLAMP_EPS),
            ]
        })
        .collect();
    LandmarkSet {
        points,
        frame: target,
    }
}

/// One axis-aligned half-open patch box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRegion {
    pub name: RegionName,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PatchRegion {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }
}

/// The seven regions in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSet {
    pub regions: [PatchRegion; 7],
    pub frame: (u32, u32),
}

impl PatchSet {
    pub fn get(&self, name: RegionName) -> &PatchRegion {
        &self.regions[name.index()]
    }
}

const MIN_BOX: u32 = 8;
const PAD_FRACTION: f64 = 0.15;
const FOREHEAD_RISE: f64 = 0.6;

struct FloatBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

fn group_bbox(lm: &LandmarkSet, idx: impl Iterator<Item = usize>) -> FloatBox {
    let mut b = FloatBox {
        x0: f64::INFINITY,
        y0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y1: f64::NEG_INFINITY,
    };
    for i in idx {
        let p = lm.point(i);
        b.x0 = b.x0.min(p[0]);
        b.y0 = b.y0.min(p[1]);
        b.x1 = b.x1.max(p[0]);
        b.y1 = b.y1.max(p[1]);
    }
    b
}

fn pad_box(b: &FloatBox, fraction: f64) -> FloatBox {
    let dw = b.x1 - b.x0;
    let dh = b.y1 - b.y0;
    let pad = fraction * (dw * dw + dh * dh).sqrt();
    FloatBox {
        x0: b.x0 - pad,
        y0: b.y0 - pad,
        x1: b.x1 + pad,
        y1: b.y1 + pad,
    }
}

fn finalize(name: RegionName, b: FloatBox, frame: (u32, u32)) -> PatchRegion {
    let (w, h) = (frame.0 as i64, frame.1 as i64);
    let (fx0, fx1) = (b.x0.min(b.x1), b.x0.max(b.x1));
    let (fy0, fy1) = (b.y0.min(b.y1), b.y0.max(b.y1));
    let mut x0 = (fx0.floor() as i64).clamp(0, w);
    let mut x1 = (fx1.ceil() as i64).clamp(0, w);
    let mut y0 = (fy0.floor() as i64).clamp(0, h);
    let mut y1 = (fy1.ceil() as i64).clamp(0, h);
    // enforce minimum size by symmetric expansion, shifting at frame edges
    let min_w = MIN_BOX.min(frame.0) as i64;
    let min_h = MIN_BOX.min(frame.1) as i64;
    if x1 - x0 < min_w {
        let grow = min_w - (x1 - x0);
        x0 -= grow / 2;
        x1 += grow - grow / 2;
        if x0 < 0 {
            x1 -= x0;
            x0 = 0;
        }
        if x1 > w {
            x0 -= x1 - w;
            x1 = w;
        }
        x0 = x0.max(0);
    }
    if y1 - y0 < min_h {
        let grow = min_h - (y1 - y0);
        y0 -= grow / 2;
        y1 += grow - grow / 2;
        if y0 < 0 {
            y1 -= y0;
            y0 = 0;
        }
        if y1 > h {
            y0 -= y1 - h;
            y1 = h;
        }
        y0 = y0.max(0);
    }
    PatchRegion {
        name,
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32,
        y1: y1 as u32,
    }
}

/// Derive the seven canonical patch regions from landmarks.
///
/// Eyes, nose and mouth-chin are the bounding boxes of their landmark
/// groups padded by 15% of the box diagonal (mouth-chin first extends down
/// to the chin contour point). Cheeks span face contour to nose wing
/// horizontally and eye-bottom to mouth-top vertically. The forehead covers
/// the eyebrow span, rising by 0.6 x (nose-tip-y - eyebrow-top-y).
pub fn derive_patch_regions(lm: &LandmarkSet) -> Result<PatchSet> {
    let all = group_bbox(lm, 0..NUM_LANDMARKS);
    if all.x1 - all.x0 < 2.0 || all.y1 - all.y0 < 2.0 {
        return Err(Error::DegenerateLandmarks);
    }
    let frame = lm.frame;

    let left_eye_b = group_bbox(lm, wflw::LEFT_EYE.chain(std::iter::once(wflw::LEFT_PUPIL)));
    let right_eye_b = group_bbox(lm, wflw::RIGHT_EYE.chain(std::iter::once(wflw::RIGHT_PUPIL)));
    let nose_b = group_bbox(lm, wflw::NOSE);
    let mut mouth_b = group_bbox(lm, wflw::MOUTH);
    mouth_b.y1 = mouth_b.y1.max(lm.point(wflw::CHIN)[1]);

    let brows = group_bbox(lm, wflw::BROWS);
    let eyebrow_top = brows.y0;
    let nose_tip_y = lm.point(wflw::NOSE_TIP)[1];
    let forehead = FloatBox {
        x0: brows.x0,
        y0: eyebrow_top - FOREHEAD_RISE * (nose_tip_y - eyebrow_top),
        x1: brows.x1,
        y1: eyebrow_top,
    };

    // cheeks: contour-to-nose-wing, eye-bottom to mouth-top
    let mouth_top = group_bbox(lm, wflw::MOUTH).y0;
    let left_span_y0 = left_eye_b.y1;
    let right_span_y0 = right_eye_b.y1;
    let contour_x_in = |y_lo: f64, y_hi: f64| -> (f64, f64) {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        for i in wflw::CONTOUR {
            let p = lm.point(i);
            if p[1] >= y_lo && p[1] <= y_hi {
                min_x = min_x.min(p[0]);
                max_x = max_x.max(p[0]);
            }
        }
        if !min_x.is_finite() {
            // no contour point in the span: fall back to the full contour
            let cb = group_bbox(lm, wflw::CONTOUR);
            (cb.x0, cb.x1)
        } else {
            (min_x, max_x)
        }
    };
    let (lc_x0, _) = contour_x_in(left_span_y0, mouth_top);
    let (_, rc_x1) = contour_x_in(right_span_y0, mouth_top);
    let left_cheek = FloatBox {
        x0: lc_x0,
        y0: left_span_y0,
        x1: lm.point(wflw::NOSE_LEFT_WING)[0],
        y1: mouth_top,
    };
    let right_cheek = FloatBox {
        x0: lm.point(wflw::NOSE_RIGHT_WING)[0],
        y0: right_span_y0,
        x1: rc_x1,
        y1: mouth_top,
    };

    let regions = [
        finalize(RegionName::Forehead, forehead, frame),
        finalize(RegionName::LeftEye, pad_box(&left_eye_b, PAD_FRACTION), frame),
        finalize(RegionName::RightEye, pad_box(&right_eye_b, PAD_FRACTION), frame),
        finalize(RegionName::LeftCheek, left_cheek, frame),
        finalize(RegionName::Nose, pad_box(&nose_b, PAD_FRACTION), frame),
        finalize(RegionName::RightCheek, right_cheek, frame),
        finalize(RegionName::MouthChin, pad_box(&mouth_b, PAD_FRACTION), frame),
    ];
    Ok(PatchSet { regions, frame })
}

/// Crop `region` out of a `(3, H, W)` image and bilinear-resize the crop to
/// `(out_h, out_w)`.
pub fn crop_and_resize(
    image: &Array3<f32>,
    region: &PatchRegion,
    out_h: usize,
    out_w: usize,
) -> Result<Array3<f32>> {
    let (_, h, w) = image.dim();
    let x0 = region.x0.min(w as u32) as usize;
    let x1 = region.x1.min(w as u32) as usize;
    let y0 = region.y0.min(h as u32) as usize;
    let y1 = region.y1.min(h as u32) as usize;
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::InvalidInput(format!(
            "region {} does not intersect a {w}x{h} image",
            region.name
        )));
    }
    let crop = image.slice(ndarray::s![.., y0..y1, x0..x1]).to_owned();
    Ok(imgproc::resize_rgb(&crop, out_h, out_w))
}
