//! Image containers, sampling, gradients and the coarse-to-fine pyramid.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, MAX_LEVEL};

/// Smallest image side allowed at any pyramid level (160×120 floor applied
/// to the 4:3 aspect).
pub const MIN_LEVEL_DIM: usize = 60;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Row-major metric depth image; `0.0` marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Per-pixel horizontal and vertical intensity derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImage {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width * height != len {
        return Err(Error::InvalidArgument(format!(
            "buffer of {len} values does not match {width}x{height}"
        )));
    }
    Ok(())
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from `f(x, y)`, clamping the result into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Bilinear interpolation at subpixel `(x, y)`; `None` when any of the
    /// four neighbors lies outside the image.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let cell = Cell::locate(self.width, self.height, x, y)?;
        let [a, b, c, d] = cell.corners(&self.data, self.width);
        Some(cell.blend(a, b, c, d))
    }

    /// Bilinear value together with the exact partial derivatives of the
    /// interpolant at `(x, y)`.
    #[inline]
    pub fn sample_with_gradient(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let cell = Cell::locate(self.width, self.height, x, y)?;
        let [a, b, c, d] = cell.corners(&self.data, self.width);
        let gx = (1.0 - cell.fy) * (b - a) + cell.fy * (d - c);
        let gy = (1.0 - cell.fx) * (c - a) + cell.fx * (d - b);
        Some((cell.blend(a, b, c, d), gx, gy))
    }
}

/// Interpolation cell: top-left integer corner plus fractional offsets.
#[derive(Debug, Clone, Copy)]
struct Cell {
    x0: usize,
    y0: usize,
    fx: f64,
    fy: f64,
}

impl Cell {
    #[inline]
    fn locate(width: usize, height: usize, x: f64, y: f64) -> Option<Self> {
        let (wmax, hmax) = (width as f64 - 1.0, height as f64 - 1.0);
        if !(x >= 0.0 && y >= 0.0 && x <= wmax && y <= hmax) || width < 2 || height < 2 {
            return None;
        }
        // At the right/bottom border use the last full cell so integer
        // coordinates still sample exactly.
        let x0 = (x.floor() as usize).min(width - 2);
        let y0 = (y.floor() as usize).min(height - 2);
        Some(Self {
            x0,
            y0,
            fx: x - x0 as f64,
            fy: y - y0 as f64,
        })
    }

    #[inline]
    fn corners(&self, data: &[f64], width: usize) -> [f64; 4] {
        let i = self.y0 * width + self.x0;
        [data[i], data[i + 1], data[i + width], data[i + width + 1]]
    }

    #[inline]
    fn blend(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        let top = a + self.fx * (b - a);
        let bottom = c + self.fx * (d - c);
        top + self.fy * (bottom - top)
    }
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid depth value {bad}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a depth map from `f(x, y)`; non-finite or negative values become 0.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let z = f(x, y);
                data.push(if z.is_finite() && z > 0.0 { z } else { 0.0 });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Depth at `(x, y)`; 0 when invalid.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|z| **z > 0.0).count()
    }
}

/// Converts interleaved 8-bit RGB to luminance `0.299R + 0.587G + 0.114B`.
pub fn to_gray(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage> {
    if rgb.len() != width * height * 3 {
        return Err(Error::DimensionMismatch {
            expected: (width * height * 3, 1),
            actual: (rgb.len(), 1),
        });
    }
    let data = rgb
        .chunks_exact(3)
        .map(|p| {
            let l = (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0;
            l.clamp(0.0, 1.0)
        })
        .collect();
    Ok(GrayImage {
        width,
        height,
        data,
    })
}

/// Free-function form of [`GrayImage::sample`].
pub fn bilinear_sample(img: &GrayImage, x: f64, y: f64) -> Option<f64> {
    img.sample(x, y)
}

/// Central differences in the interior, one-sided differences at the border.
pub fn gradient(img: &GrayImage) -> Result<GradientImage> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = match x {
                0 => img.get(1, y) - img.get(0, y),
                _ if x == w - 1 => img.get(x, y) - img.get(x - 1, y),
                _ => 0.5 * (img.get(x + 1, y) - img.get(x - 1, y)),
            };
            gy[i] = match y {
                0 => img.get(x, 1) - img.get(x, 0),
                _ if y == h - 1 => img.get(x, y) - img.get(x, y - 1),
                _ => 0.5 * (img.get(x, y + 1) - img.get(x, y - 1)),
            };
        }
    }
    Ok(GradientImage {
        width: w,
        height: h,
        gx,
        gy,
    })
}

impl GradientImage {
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.gx[i], self.gy[i])
    }

    /// Bilinearly interpolated gradient at a subpixel location.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let cell = Cell::locate(self.width, self.height, x, y)?;
        let [a, b, c, d] = cell.corners(&self.gx, self.width);
        let gx = cell.blend(a, b, c, d);
        let [a, b, c, d] = cell.corners(&self.gy, self.width);
        Some((gx, cell.blend(a, b, c, d)))
    }
}

fn halved_dims(width: usize, height: usize) -> Result<(usize, usize)> {
    let (w, h) = (width / 2, height / 2);
    if w == 0 || h == 0 {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min: 2,
        });
    }
    Ok((w, h))
}

/// 2×2 box average; an odd last row/column is dropped.
pub fn downsample_gray(img: &GrayImage) -> Result<GrayImage> {
    let (w, h) = halved_dims(img.width, img.height)?;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (2 * x, 2 * y);
            let sum = img.get(sx, sy) + img.get(sx + 1, sy) + img.get(sx, sy + 1) + img.get(sx + 1, sy + 1);
            data.push(0.25 * sum);
        }
    }
    Ok(GrayImage {
        width: w,
        height: h,
        data,
    })
}

/// Mean of the valid entries of each 2×2 block (0 when none are valid).
pub fn downsample_depth(img: &DepthImage) -> Result<DepthImage> {
    let (w, h) = halved_dims(img.width, img.height)?;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (2 * x, 2 * y);
            let block = [
                img.get(sx, sy),
                img.get(sx + 1, sy),
                img.get(sx, sy + 1),
                img.get(sx + 1, sy + 1),
            ];
            let (sum, n) = block
                .iter()
                .filter(|z| **z > 0.0)
                .fold((0.0, 0u32), |(s, n), z| (s + z, n + 1));
            data.push(if n == 0 { 0.0 } else { sum / n as f64 });
        }
    }
    Ok(DepthImage {
        width: w,
        height: h,
        data,
    })
}

/// One level of the coarse-to-fine pyramid.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub gray: GrayImage,
    pub depth: DepthImage,
    pub grad: GradientImage,
    pub intrinsics: CameraIntrinsics,
    pub level: usize,
}

/// Builds `levels` (1..=3) pyramid levels; level 0 is the input itself.
pub fn build_pyramid(
    gray: &GrayImage,
    depth: &DepthImage,
    intrinsics: &CameraIntrinsics,
    levels: usize,
) -> Result<Vec<PyramidLevel>> {
    if levels == 0 || levels > MAX_LEVEL + 1 {
        return Err(Error::InvalidArgument(format!(
            "pyramid must have 1..=3 levels, got {levels}"
        )));
    }
    if gray.dims() != depth.dims() {
        return Err(Error::DimensionMismatch {
            expected: gray.dims(),
            actual: depth.dims(),
        });
    }
    if gray.dims() != (intrinsics.width, intrinsics.height) {
        return Err(Error::DimensionMismatch {
            expected: (intrinsics.width, intrinsics.height),
            actual: gray.dims(),
        });
    }
    let coarsest = (gray.width >> (levels - 1)).min(gray.height >> (levels - 1));
    if coarsest < MIN_LEVEL_DIM {
        return Err(Error::ImageTooSmall {
            width: gray.width,
            height: gray.height,
            min: MIN_LEVEL_DIM << (levels - 1),
        });
    }

    let mut pyramid = Vec::with_capacity(levels);
    pyramid.push(PyramidLevel {
        grad: gradient(gray)?,
        gray: gray.clone(),
        depth: depth.clone(),
        intrinsics: *intrinsics,
        level: 0,
    });
    for level in 1..levels {
        let prev = &pyramid[level - 1];
        let gray = downsample_gray(&prev.gray)?;
        let depth = downsample_depth(&prev.depth)?;
        pyramid.push(PyramidLevel {
            grad: gradient(&gray)?,
            gray,
            depth,
            intrinsics: intrinsics.scale(level)?,
            level,
        });
    }
    Ok(pyramid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, _| x as f64 / w as f64)
    }

    fn smooth(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            0.5 + 0.25 * (x as f64 * 0.21).sin() * (y as f64 * 0.13).cos()
        })
    }

    #[test]
    fn gray_conversion() {
        let black = to_gray(2, 1, &[0; 6]).unwrap();
        assert_eq!(black.data(), &[0.0, 0.0]);
        let white = to_gray(1, 1, &[255, 255, 255]).unwrap();
        assert_abs_diff_eq!(white.get(0, 0), 1.0, epsilon = 1e-12);
        let red = to_gray(1, 1, &[255, 0, 0]).unwrap();
        assert_abs_diff_eq!(red.get(0, 0), 0.299, epsilon = 1e-12);
        assert!(matches!(
            to_gray(2, 2, &[0; 5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn image_constructors_validate() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(DepthImage::new(1, 1, vec![-1.0]).is_err());
        assert!(DepthImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(DepthImage::new(2, 1, vec![0.0, 3.0]).is_ok());
    }

    #[test]
    fn bilinear_examples() {
        let img = smooth(20, 10);
        for (x, y) in [(0, 0), (19, 9), (7, 3), (19, 0)] {
            assert_eq!(img.sample(x as f64, y as f64), Some(img.get(x, y)));
        }
        let pair = GrayImage::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(pair.sample(0.5, 0.0).unwrap(), 0.5);
        assert_eq!(img.sample(-0.5, 5.0), None);
        assert_eq!(img.sample(19.01, 5.0), None);
        assert_eq!(img.sample(3.0, f64::NAN), None);
    }

    #[test]
    fn interpolant_gradient_matches_finite_differences() {
        let img = smooth(30, 30);
        let eps = 1e-6;
        for &(x, y) in &[(3.3, 4.7), (10.1, 20.9), (25.5, 1.25)] {
            let (_, gx, gy) = img.sample_with_gradient(x, y).unwrap();
            let fx = (img.sample(x + eps, y).unwrap() - img.sample(x - eps, y).unwrap()) / (2.0 * eps);
            let fy = (img.sample(x, y + eps).unwrap() - img.sample(x, y - eps).unwrap()) / (2.0 * eps);
            assert_abs_diff_eq!(gx, fx, epsilon = 1e-8);
            assert_abs_diff_eq!(gy, fy, epsilon = 1e-8);
        }
    }

    #[test]
    fn gradient_examples() {
        let g = gradient(&GrayImage::constant(8, 8, 0.3)).unwrap();
        assert!(g.gx.iter().chain(g.gy.iter()).all(|v| *v == 0.0));

        let w = 16;
        let g = gradient(&ramp(w, 8)).unwrap();
        for y in 0..8 {
            for x in 0..w {
                let (gx, gy) = g.at(x, y);
                assert_abs_diff_eq!(gx, 1.0 / w as f64, epsilon = 1e-12);
                assert_eq!(gy, 0.0);
            }
        }
        assert!(matches!(
            gradient(&GrayImage::constant(2, 8, 0.0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_difference_of_bilinear_surface() {
        // On a bilinear surface I = a + bx + cy + dxy central differences are exact.
        let img = GrayImage::from_fn(12, 12, |x, y| {
            let (x, y) = (x as f64, y as f64);
            0.1 + 0.02 * x + 0.03 * y + 0.002 * x * y
        });
        let g = gradient(&img).unwrap();
        let eps = 1e-4;
        for y in 1..11 {
            for x in 1..11 {
                let (xf, yf) = (x as f64, y as f64);
                let fd_x = (img.sample(xf + eps, yf).unwrap() - img.sample(xf - eps, yf).unwrap()) / (2.0 * eps);
                let fd_y = (img.sample(xf, yf + eps).unwrap() - img.sample(xf, yf - eps).unwrap()) / (2.0 * eps);
                let (gx, gy) = g.at(x, y);
                assert_abs_diff_eq!(gx, fd_x, epsilon = 1e-9);
                assert_abs_diff_eq!(gy, fd_y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn downsample_gray_examples() {
        let c = downsample_gray(&GrayImage::constant(6, 4, 0.7)).unwrap();
        assert_eq!(c.dims(), (3, 2));
        assert!(c.data().iter().all(|v| (*v - 0.7).abs() < 1e-15));

        let block = GrayImage::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(downsample_gray(&block).unwrap().data(), &[0.5]);

        let checker = GrayImage::from_fn(640, 480, |x, y| ((x + y) % 2) as f64);
        let half = downsample_gray(&checker).unwrap();
        assert_eq!(half.dims(), (320, 240));
        assert!(half.data().iter().all(|v| *v == 0.5));

        let odd = downsample_gray(&GrayImage::constant(5, 3, 0.2)).unwrap();
        assert_eq!(odd.dims(), (2, 1));
        assert!(downsample_gray(&GrayImage::constant(1, 4, 0.2)).is_err());
    }

    #[test]
    fn downsample_depth_examples() {
        let d = |v: Vec<f64>| downsample_depth(&DepthImage::new(2, 2, v).unwrap()).unwrap().data()[0];
        assert_eq!(d(vec![0.0; 4]), 0.0);
        assert_eq!(d(vec![2.0, 2.0, 0.0, 0.0]), 2.0);
        assert_eq!(d(vec![1.0, 3.0, 0.0, 0.0]), 2.0);
        assert_eq!(d(vec![1.0, 2.0, 3.0, 6.0]), 3.0);
    }

    fn sized(w: usize, h: usize) -> (GrayImage, DepthImage, CameraIntrinsics) {
        let k = CameraIntrinsics::new(525.0, 525.0, w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5, w, h).unwrap();
        (smooth(w, h), DepthImage::constant(w, h, 1.5), k)
    }

    #[test]
    fn pyramid_sizes() {
        let (g, d, k) = sized(640, 480);
        let one = build_pyramid(&g, &d, &k, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].gray, g);
        let three = build_pyramid(&g, &d, &k, 3).unwrap();
        let dims: Vec<_> = three.iter().map(|l| l.gray.dims()).collect();
        assert_eq!(dims, vec![(640, 480), (320, 240), (160, 120)]);
        for l in &three {
            assert_eq!(l.depth.dims(), l.gray.dims());
            assert_eq!((l.intrinsics.width, l.intrinsics.height), l.gray.dims());
            assert_eq!((l.grad.width, l.grad.height), l.gray.dims());
        }
        assert!(build_pyramid(&g, &d, &k, 4).is_err());
        assert!(build_pyramid(&g, &d, &k, 0).is_err());
    }

    #[test]
    fn pyramid_rejects_mismatches_and_tiny_images() {
        let (g, d, k) = sized(640, 480);
        let small_depth = DepthImage::constant(320, 240, 1.0);
        assert!(matches!(
            build_pyramid(&g, &small_depth, &k, 1),
            Err(Error::DimensionMismatch { .. })
        ));
        let (g, d2, k2) = sized(160, 120);
        assert!(build_pyramid(&g, &d2, &k2, 2).is_ok());
        assert!(matches!(
            build_pyramid(&g, &d2, &k2, 3),
            Err(Error::ImageTooSmall { .. })
        ));
        let _ = d;
    }

    proptest! {
        #[test]
        fn downsampling_preserves_mean(seed in 0u64..1000, hw in 1usize..20, hh in 1usize..20) {
            let (w, h) = (2 * hw, 2 * hh);
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let img = GrayImage::from_fn(w, h, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            });
            let half = downsample_gray(&img).unwrap();
            prop_assert!((img.mean() - half.mean()).abs() < 1e-6);
        }

        #[test]
        fn bilinear_is_lipschitz(x in 0.5f64..28.0, y in 0.5f64..28.0, dx in -0.5f64..0.5, dy in -0.5f64..0.5) {
            let img = smooth(30, 30);
            let g = gradient(&img).unwrap();
            let lmax = g.gx.iter().zip(&g.gy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
            let a = img.sample(x, y).unwrap();
            let b = img.sample(x + dx, y + dy).unwrap();
            prop_assert!((a - b).abs() <= 2.0 * lmax * dx.hypot(dy) + 1e-12);
        }
    }
}
