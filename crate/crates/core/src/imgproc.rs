//! Image plumbing: PNG i/o, bilinear resampling, simple software
//! rasterization for the synthetic generator, and overlay utilities.
//!
//! Images in memory are `Array3<f32>` in channel-first `(3, H, W)` layout
//! with values in `[0, 1]`.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// Load an 8-bit RGB PNG into `(3, H, W)` floats in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::<f32>::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[(c, y as usize, x as usize)] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Write `(3, H, W)` floats as an 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn save_png(path: &Path, img: &Array3<f32>) -> Result<()> {
    let (c, h, w) = img.dim();
    assert_eq!(c, 3, "expected 3 channels");
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize(img[(0, y, x)]),
                quantize(img[(1, y, x)]),
                quantize(img[(2, y, x)]),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Read PNG dimensions without a full decode.
pub fn png_dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Bilinear sample of one channel at fractional `(x, y)`, clamped to the
/// frame (half-pixel-center convention: integer coordinates address pixel
/// centers).
pub fn sample_bilinear(ch: &ArrayView2<f32>, x: f32, y: f32) -> f32 {
    let (h, w) = ch.dim();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let a = ch[(y0, x0)] * (1.0 - fx) + ch[(y0, x1)] * fx;
    let b = ch[(y1, x0)] * (1.0 - fx) + ch[(y1, x1)] * fx;
    a * (1.0 - fy) + b * fy
}

/// Bilinear resize of one channel to `(out_h, out_w)`. Output pixel centers
/// map to source coordinates via `src = (dst + 0.5) * scale - 0.5`.
pub fn resize_channel(ch: &ArrayView2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = ch.dim();
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let x = (ox as f32 + 0.5) * sx - 0.5;
        let y = (oy as f32 + 0.5) * sy - 0.5;
        sample_bilinear(ch, x, y)
    })
}

/// Bilinear resize of a `(3, H, W)` image.
pub fn resize_rgb(img: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let mut out = Array3::<f32>::zeros((3, out_h, out_w));
    for c in 0..3 {
        let ch = img.index_axis(ndarray::Axis(0), c);
        out.index_axis_mut(ndarray::Axis(0), c)
            .assign(&resize_channel(&ch, out_h, out_w));
    }
    out
}

/// Rotate hue by `angle` radians in the YIQ color space. Luma is preserved;
/// the transform is linear in RGB and uses the exact inverse of the forward
/// matrix, so rotating back recovers the input to float precision.
pub fn rotate_hue(rgb: [f32; 3], angle: f32) -> [f32; 3] {
    const M: [[f64; 3]; 3] = [
        [0.299, 0.587, 0.114],
        [0.596, -0.274, -0.322],
        [0.211, -0.523, 0.312],
    ];
    let inv = yiq_inverse();
    let v = [rgb[0] as f64, rgb[1] as f64, rgb[2] as f64];
    let y = M[0][0] * v[0] + M[0][1] * v[1] + M[0][2] * v[2];
    let i = M[1][0] * v[0] + M[1][1] * v[1] + M[1][2] * v[2];
    let q = M[2][0] * v[0] + M[2][1] * v[1] + M[2][2] * v[2];
    let (s, c) = (angle as f64).sin_cos();
    let yiq = [y, i * c - q * s, i * s + q * c];
    let mut out = [0f32; 3];
    for r in 0..3 {
        out[r] = (inv[r][0] * yiq[0] + inv[r][1] * yiq[1] + inv[r][2] * yiq[2]) as f32;
    }
    out
}

fn yiq_inverse() -> [[f64; 3]; 3] {
    const M: [[f64; 3]; 3] = [
        [0.299, 0.587, 0.114],
        [0.596, -0.274, -0.322],
        [0.211, -0.523, 0.312],
    ];
    let det = M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1])
        - M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0])
        + M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]);
    let mut inv = [[0f64; 3]; 3];
    for r in 0..3 {
        for cc in 0..3 {
            let (a, b) = ((r + 1) % 3, (r + 2) % 3);
            let (p, q) = ((cc + 1) % 3, (cc + 2) % 3);
            // transpose of the cofactor matrix
            inv[cc][r] = (M[a][p] * M[b][q] - M[a][q] * M[b][p]) / det;
        }
    }
    inv
}

// ---- rasterization helpers for the synthetic generator ----

/// Fill an axis-aligned soft-edged ellipse. `soft` is the edge width in
/// pixels over which coverage fades from 1 to 0.
pub fn fill_ellipse(
    img: &mut Array3<f32>,
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
    color: [f32; 3],
    soft: f32,
) {
    let (_, h, w) = img.dim();
    let x0 = ((cx - rx - soft).floor().max(0.0)) as usize;
    let x1 = ((cx + rx + soft).ceil().min(w as f32 - 1.0)) as usize;
    let y0 = ((cy - ry - soft).floor().max(0.0)) as usize;
    let y1 = ((cy + ry + soft).ceil().min(h as f32 - 1.0)) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            // signed distance surrogate: radial coordinate minus 1, scaled
            let dx = (x as f32 - cx) / rx;
            let dy = (y as f32 - cy) / ry;
            let r = (dx * dx + dy * dy).sqrt();
            let edge_px = (r - 1.0) * rx.min(ry);
            let alpha = 1.0 - smoothstep(-soft, soft, edge_px);
            if alpha > 0.0 {
                blend_px(img, x, y, color, alpha);
            }
        }
    }
}

/// Stroke a thick polyline through `pts` (capsule per segment).
pub fn stroke_polyline(img: &mut Array3<f32>, pts: &[(f32, f32)], width: f32, color: [f32; 3]) {
    for seg in pts.windows(2) {
        let (ax, ay) = seg[0];
        let (bx, by) = seg[1];
        stroke_segment(img, ax, ay, bx, by, width, color);
    }
}

fn stroke_segment(img: &mut Array3<f32>, ax: f32, ay: f32, bx: f32, by: f32, width: f32, color: [f32; 3]) {
    let (_, h, w) = img.dim();
    let r = width / 2.0;
    let x0 = (ax.min(bx) - r - 1.0).floor().max(0.0) as usize;
    let x1 = (ax.max(bx) + r + 1.0).ceil().min(w as f32 - 1.0) as usize;
    let y0 = (ay.min(by) - r - 1.0).floor().max(0.0) as usize;
    let y1 = (ay.max(by) + r + 1.0).ceil().min(h as f32 - 1.0) as usize;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = (dx * dx + dy * dy).max(1e-9);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let t = (((x as f32 - ax) * dx + (y as f32 - ay) * dy) / len2).clamp(0.0, 1.0);
            let px = ax + t * dx - x as f32;
            let py = ay + t * dy - y as f32;
            let dist = (px * px + py * py).sqrt();
            let alpha = 1.0 - smoothstep(r - 0.8, r + 0.8, dist);
            if alpha > 0.0 {
                blend_px(img, x, y, color, alpha);
            }
        }
    }
}

/// Draw a 1-px (or thicker) axis-aligned rectangle outline; used by the
/// patch-box debug output.
pub fn draw_rect_outline(
    img: &mut Array3<f32>,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    color: [f32; 3],
    thickness: usize,
) {
    let (_, h, w) = img.dim();
    let x1 = x1.min(w);
    let y1 = y1.min(h);
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    for t in 0..thickness {
        for x in x0..x1 {
            if y0 + t < h {
                set_px(img, x, y0 + t, color);
            }
            if y1 > t + 1 {
                set_px(img, x, y1 - 1 - t, color);
            }
        }
        for y in y0..y1 {
            if x0 + t < w {
                set_px(img, x0 + t, y, color);
            }
            if x1 > t + 1 {
                set_px(img, x1 - 1 - t, y, color);
            }
        }
    }
}

/// Map a unit value through a blue->green->red heatmap palette.
pub fn colormap_jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn blend_px(img: &mut Array3<f32>, x: usize, y: usize, color: [f32; 3], alpha: f32) {
    for c in 0..3 {
        let v = img[(c, y, x)];
        img[(c, y, x)] = v * (1.0 - alpha) + color[c] * alpha;
    }
}

fn set_px(img: &mut Array3<f32>, x: usize, y: usize, color: [f32; 3]) {
    for c in 0..3 {
        img[(c, y, x)] = color[c];
    }
}
