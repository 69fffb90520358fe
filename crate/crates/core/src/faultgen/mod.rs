//! Injected failure scenarios: image transforms and ground-truth corpora.
//!
//! All transforms take and return 8-bit RGB [`Raster`]s of unchanged size and
//! work directly on the stored (gamma-encoded) channel values.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::data::DataError;

mod corpus;
mod occlusion;
mod transforms;

pub use corpus::{build_failure_corpus, CorpusSummary, InjectionPlan, Scenario, ScenarioPlan};
pub use occlusion::{
    hand_rect, mask_polygon, overlay_occlusion, point_in_convex, Keypoints, OcclusionKind, OcclusionStyle,
};
pub use transforms::{
    add_gaussian_noise, darken, default_shrink_delta, gaussian_blur, gaussian_kernel, paste_object, resize_bilinear,
    scale_shrink,
    Sprite, DEFAULT_BLUR_RADIUS, DEFAULT_DARKNESS_FACTOR, DEFAULT_NOISE_SIGMA,
};

#[derive(Debug, Error)]
pub enum FaultError {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shrink delta {delta} must be below the shorter side ({min_side})")]
    DeltaTooLarge { delta: usize, min_side: usize },
    #[error("{0:?} needs keypoints that are missing")]
    MissingKeypoints(OcclusionKind),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("scenario `{scenario}`{}: need {needed} correctly handled images, found {available}",
        class.as_ref().map(|c| format!(", class `{c}`")).unwrap_or_default())]
    InsufficientCorrectImages { scenario: String, class: Option<String>, needed: usize, available: usize },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid injection plan: {0}")]
    InvalidPlan(String),
    #[error("image codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FaultError> = std::result::Result<T, E>;

/// Row-major RGB image with 8-bit channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FaultError::InvalidRaster("width and height must be positive".into()));
        }
        if pixels.len() != width * height * 3 {
            return Err(FaultError::InvalidRaster(format!(
                "{} bytes for {width}x{height} RGB",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        Self { width, height, pixels: rgb.repeat(width * height) }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Reads PNG (via the `image` crate) or binary PPM (`P6`), chosen by content.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => FaultError::Data(DataError::MissingFile(path.to_path_buf())),
            _ => FaultError::Io(e),
        })?;
        if bytes.starts_with(b"P6") {
            return Self::from_ppm(&bytes);
        }
        let img = image::load_from_memory(&bytes).map_err(|e| FaultError::Codec(e.to_string()))?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    /// Writes PPM for `.ppm` paths and PNG otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
            fs::write(path, self.to_ppm())?;
            return Ok(());
        }
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png).map_err(|e| FaultError::Codec(e.to_string()))
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| FaultError::Codec(format!("PPM: {m}"));
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(_) => break,
                    None => return Err(bad("truncated header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                pos += 1;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("not a binary PPM"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        // exactly one whitespace byte separates the header from the data
        pos += 1;
        let data = bytes.get(pos..).ok_or_else(|| bad("missing pixel data"))?;
        if data.len() != w * h * 3 {
            return Err(bad("pixel data length does not match the header"));
        }
        Self::new(w, h, data.to_vec())
    }
}
