//! Face occlusions drawn from keypoints: mask, sunglasses, eyeglasses, hand.
//!
//! Pixels are tested at their centers `(x + 0.5, y + 0.5)`.

use serde::{Deserialize, Serialize};

use super::{FaultError, Raster, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Keypoints {
    pub left_eye: Option<Point>,
    pub right_eye: Option<Point>,
    pub nose: Option<Point>,
    pub mouth: Option<Point>,
    pub chin: Option<Point>,
}

impl Keypoints {
    fn all(&self) -> impl Iterator<Item = Point> {
        [self.left_eye, self.right_eye, self.nose, self.mouth, self.chin].into_iter().flatten()
    }

    fn eyes(&self) -> Option<(Point, Point)> {
        Some((self.left_eye?, self.right_eye?))
    }

    /// Whether the keypoints needed by `kind` are present.
    pub fn supports(&self, kind: OcclusionKind) -> bool {
        match kind {
            OcclusionKind::Mask => self.nose.is_some() && self.mouth.is_some() && self.chin.is_some(),
            OcclusionKind::Sunglasses | OcclusionKind::Eyeglasses => self.eyes().is_some(),
            OcclusionKind::Hand => self.all().next().is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionKind {
    Mask,
    Sunglasses,
    Eyeglasses,
    Hand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionStyle {
    /// Lens semi-axes as fractions of the inter-eye distance.
    pub lens_major: f64,
    pub lens_minor: f64,
    /// Thickness of the sunglasses band, as a fraction of the inter-eye distance.
    pub band: f64,
    pub stroke_px: f64,
    pub hand_rgb: [u8; 3],
    /// Share of the face box covered by the hand.
    pub hand_fraction: f64,
    /// Mask half-width as a multiple of the inter-eye distance (or of the
    /// nose-chin distance when the eyes are missing).
    pub mask_width: f64,
}

impl Default for OcclusionStyle {
    fn default() -> Self {
        Self {
            lens_major: 0.35,
            lens_minor: 0.22,
            band: 0.1,
            stroke_px: 3.0,
            hand_rgb: [224, 172, 105],
            hand_fraction: 0.25,
            mask_width: 1.0,
        }
    }
}

pub fn overlay_occlusion(img: &Raster, kind: OcclusionKind, kp: &Keypoints, style: &OcclusionStyle) -> Result<Raster> {
    if !kp.supports(kind) {
        return Err(FaultError::MissingKeypoints(kind));
    }
    for p in kp.all() {
        if !(p[0] >= 0.0 && p[1] >= 0.0 && p[0] < img.width() as f64 && p[1] < img.height() as f64) {
            return Err(FaultError::OutOfBounds(format!("keypoint {p:?} lies outside the image")));
        }
    }
    let mut out = img.clone();
    match kind {
        OcclusionKind::Mask => {
            let poly = mask_polygon(kp, style)?;
            fill(&mut out, [255, 255, 255], |p| point_in_convex(&poly, p));
        }
        OcclusionKind::Sunglasses => {
            let g = Glasses::new(kp, style)?;
            fill(&mut out, [0, 0, 0], |p| g.lens_value(p) <= 1.0 || g.in_band(p, style.band * g.d / 2.0));
        }
        OcclusionKind::Eyeglasses => {
            let g = Glasses::new(kp, style)?;
            let half = style.stroke_px / 2.0;
            fill(&mut out, [0, 0, 0], |p| g.on_rim(p, half) || g.in_bridge(p, half));
        }
        OcclusionKind::Hand => {
            let (x0, y0, x1, y1) = hand_rect(kp, img.width(), img.height(), style)?;
            let r = 0.2 * (x1 - x0).min(y1 - y0);
            fill(&mut out, style.hand_rgb, |p| in_rounded_rect(p, (x0, y0, x1, y1), r));
        }
    }
    Ok(out)
}

fn fill(img: &mut Raster, rgb: [u8; 3], inside: impl Fn(Point) -> bool) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            if inside([x as f64 + 0.5, y as f64 + 0.5]) {
                img.set(x, y, rgb);
            }
        }
    }
}

/// Convex polygon (counter-clockwise in image coordinates) covering nose,
/// cheeks, mouth and chin.
pub fn mask_polygon(kp: &Keypoints, style: &OcclusionStyle) -> Result<Vec<Point>> {
    let (Some(nose), Some(mouth), Some(chin)) = (kp.nose, kp.mouth, kp.chin) else {
        return Err(FaultError::MissingKeypoints(OcclusionKind::Mask));
    };
    let drop = (chin[1] - nose[1]).abs().max(1.0);
    let hw = style.mask_width
        * match kp.eyes() {
            Some((l, r)) => (r[0] - l[0]).hypot(r[1] - l[1]),
            None => drop,
        };
    let top = nose[1] - 0.15 * drop;
    let points = vec![
        [nose[0], top],
        [nose[0] - hw, nose[1]],
        [nose[0] + hw, nose[1]],
        [mouth[0] - 0.9 * hw, mouth[1]],
        [mouth[0] + 0.9 * hw, mouth[1]],
        [chin[0] - 0.5 * hw, chin[1] - 0.2 * drop],
        [chin[0] + 0.5 * hw, chin[1] - 0.2 * drop],
        chin,
        mouth,
    ];
    Ok(convex_hull(points))
}

/// Andrew's monotone chain; collinear points are dropped.
fn convex_hull(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Inclusive point-in-polygon test for a convex polygon of either orientation.
pub fn point_in_convex(poly: &[Point], p: Point) -> bool {
    if poly.len() < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let c = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if c != 0.0 {
            if sign != 0.0 && c.signum() != sign {
                return false;
            }
            sign = c.signum();
        }
    }
    true
}

struct Glasses {
    eyes: [Point; 2],
    /// Unit vector from left to right eye.
    u: Point,
    d: f64,
    a: f64,
    b: f64,
}

impl Glasses {
    fn new(kp: &Keypoints, style: &OcclusionStyle) -> Result<Self> {
        let (l, r) = kp.eyes().ok_or(FaultError::MissingKeypoints(OcclusionKind::Sunglasses))?;
        let d = (r[0] - l[0]).hypot(r[1] - l[1]);
        if d <= 0.0 {
            return Err(FaultError::InvalidParameter("eye keypoints coincide".into()));
        }
        let u = [(r[0] - l[0]) / d, (r[1] - l[1]) / d];
        Ok(Self { eyes: [l, r], u, d, a: style.lens_major * d, b: style.lens_minor * d })
    }

    /// Coordinates of `p` along and across the eye line, relative to `o`.
    fn local(&self, p: Point, o: Point) -> (f64, f64) {
        let (dx, dy) = (p[0] - o[0], p[1] - o[1]);
        (dx * self.u[0] + dy * self.u[1], -dx * self.u[1] + dy * self.u[0])
    }

    /// Smallest `(s/a)^2 + (t/b)^2` over both lenses (<= 1 inside).
    fn lens_value(&self, p: Point) -> f64 {
        self.lens_value_axes(p, self.a, self.b)
    }

    fn lens_value_axes(&self, p: Point, a: f64, b: f64) -> f64 {
        self.eyes
            .iter()
            .map(|&e| {
                let (s, t) = self.local(p, e);
                (s / a).powi(2) + (t / b).powi(2)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn on_rim(&self, p: Point, half: f64) -> bool {
        let outer = self.lens_value_axes(p, self.a + half, self.b + half) <= 1.0;
        let inner = self.a > half && self.b > half && self.lens_value_axes(p, self.a - half, self.b - half) <= 1.0;
        outer && !inner
    }

    /// Band along the eye line between the two eye centers.
    fn in_band(&self, p: Point, half: f64) -> bool {
        let (s, t) = self.local(p, self.eyes[0]);
        (0.0..=self.d).contains(&s) && t.abs() <= half
    }

    /// Bridge between the inner lens edges.
    fn in_bridge(&self, p: Point, half: f64) -> bool {
        let (s, t) = self.local(p, self.eyes[0]);
        (self.a..=self.d - self.a).contains(&s) && t.abs() <= half
    }
}

/// Hand rectangle `(x0, y0, x1, y1)`: the face box scaled by
/// `sqrt(hand_fraction)` about its center, clipped to the image. The face box
/// is the keypoint bounding box grown by half its larger side (at least an
/// eighth of the shorter image side) on every edge.
pub fn hand_rect(kp: &Keypoints, width: usize, height: usize, style: &OcclusionStyle) -> Result<(f64, f64, f64, f64)> {
    let pts: Vec<Point> = kp.all().collect();
    if pts.is_empty() {
        return Err(FaultError::MissingKeypoints(OcclusionKind::Hand));
    }
    if !(style.hand_fraction > 0.0 && style.hand_fraction <= 1.0) {
        return Err(FaultError::InvalidParameter("hand_fraction must be in (0, 1]".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let margin = (0.5 * (x1 - x0).max(y1 - y0)).max(width.min(height) as f64 / 8.0);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let (hw, hh) = ((x1 - x0) / 2.0 + margin, (y1 - y0) / 2.0 + margin);
    let k = style.hand_fraction.sqrt();
    Ok((
        (cx - k * hw).max(0.0),
        (cy - k * hh).max(0.0),
        (cx + k * hw).min(width as f64),
        (cy + k * hh).min(height as f64),
    ))
}

fn in_rounded_rect(p: Point, (x0, y0, x1, y1): (f64, f64, f64, f64), r: f64) -> bool {
    if p[0] < x0 || p[0] > x1 || p[1] < y0 || p[1] > y1 {
        return false;
    }
    let cx = p[0].clamp(x0 + r, x1 - r);
    let cy = p[1].clamp(y0 + r, y1 - r);
    (p[0] - cx).hypot(p[1] - cy) <= r
}
