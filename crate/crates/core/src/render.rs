//! Colour mapping and rasterisation of the density plot.
//!
//! HCL here is the polar form of CIE L*u*v* (LCh_uv) under a D65 white point,
//! converted to 8-bit sRGB. Density drives luminance and chroma together so
//! that equal densities look equally dense whatever the cluster hue.

use std::collections::HashMap;
use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{ClusterMap, LineAssignment};
use crate::error::Result;
use crate::hue::HueAssignment;
use crate::ingest::{GridSpec, LineSet};
use crate::raster::{line_bins, DensityGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HclColor {
    /// Degrees in `[0, 360)`.
    pub hue: f64,
    pub chroma: f64,
    /// `[0, 100]`.
    pub luminance: f64,
}

/// Endpoints of the density ramp: luminance falls from `l_hi` to `l_lo` while
/// chroma rises from `c_lo` to `c_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampParams {
    pub l_hi: f64,
    pub l_lo: f64,
    pub c_lo: f64,
    pub c_hi: f64,
}

impl Default for RampParams {
    fn default() -> Self {
        Self { l_hi: 95.0, l_lo: 30.0, c_lo: 8.0, c_hi: 70.0 }
    }
}

impl RampParams {
    pub fn at(&self, t: f64, hue: f64) -> HclColor {
        HclColor {
            hue: hue.rem_euclid(360.0),
            chroma: self.c_lo + t * (self.c_hi - self.c_lo),
            luminance: self.l_hi - t * (self.l_hi - self.l_lo),
        }
    }
}

pub fn ramp_position(density: u32, dmax: u32, log_scale: bool) -> f64 {
    let dmax = dmax.max(1);
    let density = density.min(dmax);
    if log_scale {
        (density as f64).ln_1p() / (dmax as f64).ln_1p()
    } else {
        density as f64 / dmax as f64
    }
}

pub fn density_ramp(density: u32, dmax: u32, hue: f64, ramp: &RampParams, log_scale: bool) -> HclColor {
    ramp.at(ramp_position(density, dmax, log_scale), hue)
}

// D65 reference white.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;
const KAPPA: f64 = 24389.0 / 27.0;
const EPSILON: f64 = 216.0 / 24389.0;

fn white_uv() -> (f64, f64) {
    let den = WHITE_X + 15.0 * WHITE_Y + 3.0 * WHITE_Z;
    (4.0 * WHITE_X / den, 9.0 * WHITE_Y / den)
}

fn hcl_to_linear_rgb(c: &HclColor) -> [f64; 3] {
    let l = c.luminance;
    if l <= 0.0 {
        return [0.0; 3];
    }
    let h = c.hue.to_radians();
    let (u, v) = (c.chroma * h.cos(), c.chroma * h.sin());
    let (un, vn) = white_uv();
    let y = if l > KAPPA * EPSILON { ((l + 16.0) / 116.0).powi(3) } else { l / KAPPA } * WHITE_Y;
    let up = u / (13.0 * l) + un;
    let vp = v / (13.0 * l) + vn;
    let x = y * 9.0 * up / (4.0 * vp);
    let z = y * (12.0 - 3.0 * up - 20.0 * vp) / (4.0 * vp);
    [
        3.2404542 * x - 1.5371385 * y - 0.4985314 * z,
        -0.9692660 * x + 1.8760108 * y + 0.0415560 * z,
        0.0556434 * x - 0.2040259 * y + 1.0572252 * z,
    ]
}

fn in_gamut(rgb: &[f64; 3]) -> bool {
    const TOL: f64 = 1e-9;
    rgb.iter().all(|&v| (-TOL..=1.0 + TOL).contains(&v))
}

fn gamma_encode(v: f64) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let s = if v <= 0.0031308 { 12.92 * v } else { 1.055 * v.powf(1.0 / 2.4) - 0.055 };
    (s * 255.0).round().clamp(0.0, 255.0) as u8
}

fn gamma_decode(v: u8) -> f64 {
    let s = v as f64 / 255.0;
    if s <= 0.04045 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

/// Reduces chroma until the colour is displayable; hue and luminance are
/// returned untouched.
pub fn fit_to_gamut(c: HclColor) -> HclColor {
    let luminance = c.luminance.clamp(0.0, 100.0);
    let probe = HclColor { luminance, ..c };
    if in_gamut(&hcl_to_linear_rgb(&probe)) {
        return HclColor { hue: c.hue, chroma: c.chroma, luminance: c.luminance };
    }
    let (mut lo, mut hi) = (0.0, c.chroma);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if in_gamut(&hcl_to_linear_rgb(&HclColor { chroma: mid, ..probe })) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    HclColor { hue: c.hue, chroma: lo, luminance: c.luminance }
}

pub fn hcl_to_display(c: HclColor) -> [u8; 3] {
    let fitted = fit_to_gamut(c);
    let lin = hcl_to_linear_rgb(&HclColor { luminance: fitted.luminance.clamp(0.0, 100.0), ..fitted });
    lin.map(gamma_encode)
}

pub fn display_to_hcl(rgb: [u8; 3]) -> HclColor {
    let [r, g, b] = rgb.map(gamma_decode);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let yr = y / WHITE_Y;
    let l = if yr > EPSILON { 116.0 * yr.cbrt() - 16.0 } else { KAPPA * yr };
    let den = x + 15.0 * y + 3.0 * z;
    if den == 0.0 || l == 0.0 {
        return HclColor { hue: 0.0, chroma: 0.0, luminance: 0.0 };
    }
    let (un, vn) = white_uv();
    let u = 13.0 * l * (4.0 * x / den - un);
    let v = 13.0 * l * (9.0 * y / den - vn);
    HclColor { hue: v.atan2(u).to_degrees().rem_euclid(360.0), chroma: u.hypot(v), luminance: l }
}

/// Row-major 8-bit RGB raster; row 0 is the top of the picture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, pixels }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        PngEncoder::new_with_quality(Cursor::new(&mut out), CompressionType::Default, FilterType::Adaptive)
            .write_image(&self.pixels, self.width, self.height, ExtendedColorType::Rgb8)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Pixels per bin along each axis.
    pub scale: u32,
    pub log_scale: bool,
    pub ramp: RampParams,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { scale: 1, log_scale: false, ramp: RampParams::default() }
    }
}

/// Paints one colour per bin and upscales by nearest neighbour. Bin row 0 (the
/// bottom of the plot) ends up in the last pixel rows.
fn paint_bins(spec: &GridSpec, scale: u32, color_of: impl Fn(usize) -> [u8; 3] + Sync) -> Image {
    let scale = scale.max(1) as usize;
    let (bw, bh) = (spec.width as usize, spec.height as usize);
    let (w, h) = (bw * scale, bh * scale);
    let mut pixels = vec![0u8; w * h * 3];
    pixels.par_chunks_mut(w * 3).enumerate().for_each(|(py, row)| {
        let bin_row = bh - 1 - py / scale;
        for px in 0..w {
            let rgb = color_of(bin_row * bw + px / scale);
            row[px * 3..px * 3 + 3].copy_from_slice(&rgb);
        }
    });
    Image { width: w as u32, height: h as u32, pixels }
}

/// Colourised density plot. Unlabelled bins use the achromatic ramp, so with
/// no labels at all this is a plain grey density plot.
pub fn render_density(dg: &DensityGrid, cmap: &ClusterMap, hues: &HueAssignment, opts: &RenderOptions) -> Image {
    let dmax = dg.max().max(1);
    let mut palette: HashMap<(Option<u32>, u32), [u8; 3]> = HashMap::new();
    for (bin, &d) in dg.counts.iter().enumerate() {
        let label = cmap.labels[bin];
        palette.entry((label, d)).or_insert_with(|| {
            let c = match label {
                Some(c) => density_ramp(d, dmax, hues.theta[c as usize].to_degrees(), &opts.ramp, opts.log_scale),
                None => HclColor { chroma: 0.0, ..density_ramp(d, dmax, 0.0, &opts.ramp, opts.log_scale) },
            };
            hcl_to_display(c)
        });
    }
    paint_bins(&dg.spec, opts.scale, |bin| palette[&(cmap.labels[bin], dg.counts[bin])])
}

/// Draws the given lines as one-bin-wide strokes of a single colour on white.
pub fn render_lines(ls: &LineSet, lines: &[u32], spec: &GridSpec, color: [u8; 3], scale: u32) -> Image {
    let mut stamp = vec![u32::MAX; spec.bin_count()];
    let mut hit = vec![false; spec.bin_count()];
    for &id in lines {
        for b in line_bins(&ls.lines()[id as usize], spec, 0.5 + 1e-6, &mut stamp, id) {
            hit[b as usize] = true;
        }
    }
    paint_bins(spec, scale, |bin| if hit[bin] { color } else { [255, 255, 255] })
}

/// Lines allocated to one cluster (or the unassigned ones for `None`), in the
/// cluster hue at the middle of the ramp.
pub fn render_cluster_lines(
    ls: &LineSet,
    la: &LineAssignment,
    cluster: Option<u32>,
    spec: &GridSpec,
    hue_deg: f64,
    opts: &RenderOptions,
) -> Image {
    let mut c = opts.ramp.at(0.5, hue_deg);
    if cluster.is_none() {
        c.chroma = 0.0;
    }
    render_lines(ls, &la.lines_in(cluster), spec, hcl_to_display(c), opts.scale)
}
