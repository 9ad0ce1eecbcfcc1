//! Edge extraction with automatic (Otsu) thresholding.
//!
//! Three detectors are provided: Canny, Laplacian-of-Gaussian (as a
//! difference of Gaussians) and plain Sobel magnitude. All of them derive
//! their thresholds from the image itself, so no per-sequence tuning is
//! needed.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

/// Histogram resolution used for automatic thresholds.
pub const OTSU_BINS: usize = 256;

const CANNY_SIGMA: f64 = 1.4;
const CANNY_RADIUS: usize = 2;
const CANNY_LOW_RATIO: f64 = 0.5;
const DOG_SIGMA_NARROW: f64 = 1.0;
const DOG_SIGMA_WIDE: f64 = 1.6;

/// Responses below this are treated as a flat image.
const FLAT_RESPONSE: f64 = 1e-9;
const TAN_22_5: f64 = 0.414_213_562_373_095_1;

/// Per-pixel edge membership.
#[derive(Clone, PartialEq, Eq)]
pub struct EdgeMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    count: usize,
}

impl fmt::Debug for EdgeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EdgeMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count)
            .finish()
    }
}

impl EdgeMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
            count: 0,
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask of {} bits does not match {width}x{height}",
                bits.len()
            )));
        }
        let count = bits.iter().filter(|b| **b).count();
        Ok(Self {
            width,
            height,
            bits,
            count,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Fraction of pixels marked as edges.
    pub fn density(&self) -> f64 {
        self.count as f64 / self.bits.len().max(1) as f64
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let bit = &mut self.bits[y * self.width + x];
        if *bit != value {
            if value {
                self.count += 1;
            } else {
                self.count -= 1;
            }
            *bit = value;
        }
    }

    /// Set pixels in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    fn clear_border(&mut self, margin: usize) {
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                if x < margin || y < margin || x + margin >= w || y + margin >= h {
                    self.set(x, y, false);
                }
            }
        }
    }

    /// Binary PGM (P5) with edges at 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bits.iter().map(|b| if *b { 255u8 } else { 0 }));
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Which edge detector selects the residual support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeDetectorKind {
    #[default]
    Canny,
    Log,
    Sobel,
}

impl EdgeDetectorKind {
    pub fn detect(&self, img: &GrayImage) -> Result<EdgeMask> {
        match self {
            EdgeDetectorKind::Canny => canny(img),
            EdgeDetectorKind::Log => log_edges(img),
            EdgeDetectorKind::Sobel => sobel_edges(img),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EdgeDetectorKind::Canny => "canny",
            EdgeDetectorKind::Log => "log",
            EdgeDetectorKind::Sobel => "sobel",
        }
    }
}

impl fmt::Display for EdgeDetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EdgeDetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "canny" => Ok(Self::Canny),
            "log" | "dog" => Ok(Self::Log),
            "sobel" => Ok(Self::Sobel),
            other => Err(Error::InvalidArgument(format!(
                "unknown edge detector '{other}' (expected canny, log or sobel)"
            ))),
        }
    }
}

/// Otsu's threshold: the histogram split maximizing between-class variance.
///
/// Returns the lower edge of the upper class, so values `>= threshold`
/// belong to the bright class. For constant input the constant itself is
/// returned.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("otsu_threshold on empty input".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument("otsu_threshold needs >= 2 bins".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(hi - lo > 1e-12 * hi.abs().max(1.0)) {
        return Ok(lo);
    }
    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0u64; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        hist[b] += 1;
    }

    let total = values.len() as f64;
    let center = |b: usize| lo + (b as f64 + 0.5) * width;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, n)| *n as f64 * center(b)).sum();

    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut first, mut last, mut best_var) = (0, 0, -1.0);
    for (b, n) in hist.iter().enumerate().take(bins - 1) {
        w0 += *n as f64;
        sum0 += *n as f64 * center(b);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = sum0 / w0 - (sum_all - sum0) / w1;
        let var = w0 * w1 * diff * diff;
        if var > best_var {
            best_var = var;
            first = b;
            last = b;
        } else if var == best_var {
            last = b;
        }
    }
    // Empty bins between two classes leave a plateau; split in its middle.
    let best = (first + last) / 2;
    Ok(lo + (best + 1) as f64 * width)
}

fn check_min_dim(img: &GrayImage, min: usize) -> Result<()> {
    if img.width() < min || img.height() < min {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    Ok(())
}

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders.
fn blur(src: &[f64], w: usize, h: usize, sigma: f64, radius: usize) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma, radius);
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            if x >= radius && x + radius < w {
                let window = &row[x - radius..=x + radius];
                for (k, v) in kernel.iter().zip(window) {
                    acc += k * v;
                }
            } else {
                for (j, k) in kernel.iter().enumerate() {
                    acc += k * row[clamp(x as isize + j as isize - r, w)];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (j, k) in kernel.iter().enumerate() {
            let sy = clamp(y as isize + j as isize - r, h);
            for (o, v) in dst.iter_mut().zip(&tmp[sy * w..(sy + 1) * w]) {
                *o += k * v;
            }
        }
    }
    out
}

/// 3×3 Sobel derivatives; the outer ring is left at zero.
fn sobel(src: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| {
                src[(y as isize + dy) as usize * w + (x as isize + dx) as usize]
            };
            let i = y * w + x;
            gx[i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[i] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

fn interior(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        out.extend_from_slice(&values[y * w + 1..y * w + w - 1]);
    }
    out
}

/// Gradient magnitude of the blurred image plus its non-maximum-suppressed
/// ridge pixels.
struct CannyResponse {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
    ridge: Vec<bool>,
}

impl CannyResponse {
    fn compute(img: &GrayImage) -> Self {
        let (w, h) = img.dims();
        let blurred = blur(img.data(), w, h, CANNY_SIGMA, CANNY_RADIUS);
        let (gx, gy) = sobel(&blurred, w, h);
        let magnitude: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();

        let mut ridge = vec![false; w * h];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                let m = magnitude[i];
                if m <= FLAT_RESPONSE {
                    continue;
                }
                // Quantize the gradient direction to 0°, 45°, 90° or 135°.
                let (ax, ay) = (gx[i].abs(), gy[i].abs());
                let (dx, dy): (isize, isize) = if ay <= TAN_22_5 * ax {
                    (1, 0)
                } else if ax <= TAN_22_5 * ay {
                    (0, 1)
                } else if (gx[i] > 0.0) == (gy[i] > 0.0) {
                    (1, 1)
                } else {
                    (-1, 1)
                };
                let at = |sx: isize, sy: isize| {
                    magnitude[(y as isize + sy) as usize * w + (x as isize + sx) as usize]
                };
                let before = at(-dx, -dy);
                let after = at(dx, dy);
                // Strict on one side only so plateaus keep exactly one pixel.
                ridge[i] = m > before && m >= after;
            }
        }
        Self {
            width: w,
            height: h,
            magnitude,
            ridge,
        }
    }

    fn auto_high(&self) -> Option<f64> {
        let values = interior(&self.magnitude, self.width, self.height);
        let max = values.iter().cloned().fold(0.0, f64::max);
        if max <= FLAT_RESPONSE {
            return None;
        }
        let t = otsu_threshold(&values, OTSU_BINS).ok()?;
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        (t > min).then_some(t)
    }

    fn hysteresis(&self, high: f64, low: f64) -> EdgeMask {
        let (w, h) = (self.width, self.height);
        let mut mask = EdgeMask::empty(w, h);
        let mut stack = Vec::new();
        for i in 0..w * h {
            if self.ridge[i] && self.magnitude[i] >= high {
                mask.set(i % w, i / w, true);
                stack.push(i);
            }
        }
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if self.ridge[j] && !mask.bits[j] && self.magnitude[j] >= low {
                        mask.set(nx as usize, ny as usize, true);
                        stack.push(j);
                    }
                }
            }
        }
        mask.clear_border(2);
        mask
    }
}

/// Canny edges with `high` from Otsu over gradient magnitudes and `low = high / 2`.
pub fn canny(img: &GrayImage) -> Result<EdgeMask> {
    check_min_dim(img, 16)?;
    let response = CannyResponse::compute(img);
    Ok(match response.auto_high() {
        Some(high) => response.hysteresis(high, CANNY_LOW_RATIO * high),
        None => EdgeMask::empty(img.width(), img.height()),
    })
}

/// Canny with an explicit high threshold (on the Sobel magnitude of the
/// blurred image); `low = high / 2`.
pub fn canny_with_threshold(img: &GrayImage, high: f64) -> Result<EdgeMask> {
    check_min_dim(img, 16)?;
    let response = CannyResponse::compute(img);
    if response.magnitude.iter().all(|m| *m <= FLAT_RESPONSE) {
        return Ok(EdgeMask::empty(img.width(), img.height()));
    }
    Ok(response.hysteresis(high, CANNY_LOW_RATIO * high))
}

/// The automatically chosen Canny high threshold, `None` for flat images.
pub fn canny_auto_threshold(img: &GrayImage) -> Result<Option<f64>> {
    check_min_dim(img, 16)?;
    Ok(CannyResponse::compute(img).auto_high())
}

/// Zero crossings of a difference of Gaussians whose local contrast exceeds
/// the Otsu threshold of `|DoG|`.
pub fn log_edges(img: &GrayImage) -> Result<EdgeMask> {
    check_min_dim(img, 16)?;
    let (w, h) = img.dims();
    let narrow = blur(img.data(), w, h, DOG_SIGMA_NARROW, 3);
    let wide = blur(img.data(), w, h, DOG_SIGMA_WIDE, 5);
    let dog: Vec<f64> = narrow.iter().zip(&wide).map(|(a, b)| a - b).collect();

    let mut mask = EdgeMask::empty(w, h);
    let abs: Vec<f64> = interior(&dog, w, h).iter().map(|v| v.abs()).collect();
    if abs.iter().cloned().fold(0.0, f64::max) <= FLAT_RESPONSE {
        return Ok(mask);
    }
    let t = otsu_threshold(&abs, OTSU_BINS)?;

    for y in 0..h {
        for x in 0..w {
            let p = dog[y * w + x];
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= w || ny >= h {
                    continue;
                }
                let q = dog[ny * w + nx];
                if p * q < 0.0 && (p - q).abs() > t {
                    // Mark the side closer to the crossing.
                    if p.abs() <= q.abs() {
                        mask.set(x, y, true);
                    } else {
                        mask.set(nx, ny, true);
                    }
                }
            }
        }
    }
    mask.clear_border(1);
    Ok(mask)
}

/// Sobel magnitude above its Otsu threshold, without thinning.
pub fn sobel_edges(img: &GrayImage) -> Result<EdgeMask> {
    check_min_dim(img, 3)?;
    let (w, h) = img.dims();
    let (gx, gy) = sobel(img.data(), w, h);
    let magnitude: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let values = interior(&magnitude, w, h);
    let mut mask = EdgeMask::empty(w, h);
    if values.iter().cloned().fold(0.0, f64::max) <= FLAT_RESPONSE {
        return Ok(mask);
    }
    let t = otsu_threshold(&values, OTSU_BINS)?;
    for (i, m) in magnitude.iter().enumerate() {
        if *m >= t && *m > FLAT_RESPONSE {
            mask.set(i % w, i / w, true);
        }
    }
    mask.clear_border(1);
    Ok(mask)
}
