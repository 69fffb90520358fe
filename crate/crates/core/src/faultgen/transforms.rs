//! Pixel-level transforms: noise, blur, darkness, scaling, object pasting.

use rand_distr::{Distribution, Normal};

use super::{FaultError, Raster, Result};
use crate::rng::rng_from_seed;

/// Standard deviation of the additive noise, in units of the full 0..255 range.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;
pub const DEFAULT_BLUR_RADIUS: f64 = 30.0;
pub const DEFAULT_DARKNESS_FACTOR: f64 = 0.3;

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// `v + 255 * g` per channel with `g ~ N(0, sigma^2)`.
pub fn add_gaussian_noise(img: &Raster, sigma: f64, seed: u64) -> Result<Raster> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(FaultError::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let g = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = rng_from_seed(seed);
    let pixels = img.pixels().iter().map(|&v| to_u8(v as f64 + 255.0 * g.sample(&mut rng))).collect();
    Raster::new(img.width(), img.height(), pixels)
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with `sigma = radius` and clamp-to-edge borders.
pub fn gaussian_blur(img: &Raster, radius: f64) -> Result<Raster> {
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(FaultError::InvalidParameter(format!("radius must be >= 0, got {radius}")));
    }
    if radius == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(radius);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width(), img.height());
    let clampi = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;

    let src: Vec<f64> = img.pixels().iter().map(|&v| v as f64).collect();
    let mut horiz = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, k) in kernel.iter().zip(-r..=r) {
                    acc += t * src[(y * w + clampi(x as i64 + k, w)) * 3 + c];
                }
                horiz[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, k) in kernel.iter().zip(-r..=r) {
                    acc += t * horiz[(clampi(y as i64 + k, h) * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = to_u8(acc);
            }
        }
    }
    Raster::new(w, h, out)
}

pub fn darken(img: &Raster, factor: f64) -> Result<Raster> {
    if !(0.0..=1.0).contains(&factor) {
        return Err(FaultError::InvalidParameter(format!("factor must be in [0, 1], got {factor}")));
    }
    let pixels = img.pixels().iter().map(|&v| to_u8(v as f64 * factor)).collect();
    Raster::new(img.width(), img.height(), pixels)
}

/// Shrink amount for a canvas: a third of the shorter side from 1200 px up,
/// 22% below that.
pub fn default_shrink_delta(width: usize, height: usize) -> usize {
    let m = width.min(height) as f64;
    if m >= 1200.0 {
        (m / 3.0).round() as usize
    } else {
        (0.22 * m).round() as usize
    }
}

/// Resizes the content to `(w - delta) x (h - delta)` bilinearly and centers
/// it on a black canvas of the original size; odd margins put the extra
/// pixel on the right and bottom.
pub fn scale_shrink(img: &Raster, delta: usize) -> Result<Raster> {
    let (w, h) = (img.width(), img.height());
    if delta == 0 {
        return Err(FaultError::InvalidParameter("delta must be positive".into()));
    }
    if delta >= w.min(h) {
        return Err(FaultError::DeltaTooLarge { delta, min_side: w.min(h) });
    }
    let (nw, nh) = (w - delta, h - delta);
    let small = resize_bilinear(img, nw, nh);
    let (ox, oy) = (delta / 2, delta / 2);
    let mut out = Raster::filled(w, h, [0, 0, 0]);
    for y in 0..nh {
        for x in 0..nw {
            out.set(x + ox, y + oy, small.get(x, y));
        }
    }
    Ok(out)
}

/// Bilinear resampling with pixel centers aligned (`src = (dst + 0.5) * scale - 0.5`).
pub fn resize_bilinear(img: &Raster, nw: usize, nh: usize) -> Raster {
    let (w, h) = (img.width(), img.height());
    let (sx, sy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    let sample = |pos: f64, len: usize| {
        let p = pos.clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    let mut out = vec![0u8; nw * nh * 3];
    for y in 0..nh {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, h);
        for x in 0..nw {
            let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, w);
            let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                out[(y * nw + x) * 3 + c] = to_u8(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Raster::new(nw, nh, out).expect("positive size")
}

/// An RGB raster with a per-pixel 8-bit alpha channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sprite {
    pub raster: Raster,
    pub alpha: Vec<u8>,
}

impl Sprite {
    pub fn new(raster: Raster, alpha: Vec<u8>) -> Result<Self> {
        if alpha.len() != raster.width() * raster.height() {
            return Err(FaultError::InvalidRaster("alpha size differs from sprite size".into()));
        }
        Ok(Self { raster, alpha })
    }

    pub fn opaque(raster: Raster) -> Self {
        let alpha = vec![255; raster.width() * raster.height()];
        Self { raster, alpha }
    }

    /// Reads an RGBA PNG (or any format the codec handles).
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| FaultError::Codec(e.to_string()))?.to_rgba8();
        let (w, h) = img.dimensions();
        let mut rgb = Vec::with_capacity((w * h * 3) as usize);
        let mut alpha = Vec::with_capacity((w * h) as usize);
        for p in img.pixels() {
            rgb.extend_from_slice(&p.0[..3]);
            alpha.push(p.0[3]);
        }
        Self::new(Raster::new(w as usize, h as usize, rgb)?, alpha)
    }

    /// A plain bag-like shape: a dark rounded body with a handle arc.
    pub fn synthetic_bag(side: usize) -> Self {
        let side = side.max(4);
        let mut raster = Raster::filled(side, side, [0, 0, 0]);
        let mut alpha = vec![0u8; side * side];
        let s = side as f64;
        for y in 0..side {
            for x in 0..side {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let body = py >= 0.35 * s && px >= 0.1 * s && px <= 0.9 * s;
                let (dx, dy) = (px - 0.5 * s, py - 0.35 * s);
                let rr = (dx * dx + dy * dy).sqrt();
                let handle = py <= 0.35 * s && rr >= 0.18 * s && rr <= 0.26 * s;
                if body || handle {
                    raster.set(x, y, if body { [120, 72, 40] } else { [60, 36, 20] });
                    alpha[y * side + x] = 255;
                }
            }
        }
        Self { raster, alpha }
    }
}

/// Alpha-composites `sprite` with its top-left corner at `(x, y)`.
pub fn paste_object(img: &Raster, sprite: &Sprite, x: usize, y: usize) -> Result<Raster> {
    let (sw, sh) = (sprite.raster.width(), sprite.raster.height());
    if x + sw > img.width() || y + sh > img.height() {
        return Err(FaultError::OutOfBounds(format!(
            "{sw}x{sh} sprite at ({x},{y}) on a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let mut out = img.clone();
    for j in 0..sh {
        for i in 0..sw {
            let a = sprite.alpha[j * sw + i] as u32;
            let (s, d) = (sprite.raster.get(i, j), img.get(x + i, y + j));
            let mix = |c: usize| ((a * s[c] as u32 + (255 - a) * d[c] as u32 + 127) / 255) as u8;
            out.set(x + i, y + j, [mix(0), mix(1), mix(2)]);
        }
    }
    Ok(out)
}
