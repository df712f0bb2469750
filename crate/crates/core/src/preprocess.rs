//! Image decoding, resizing, normalization and augmentation.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// 8-bit interleaved image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::InvalidArgument(format!(
                "image {width}x{height}x{channels}: dims must be positive, channels 1 or 3"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "image {width}x{height}x{channels} needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            channels: 3,
            pixels,
        }
    }

    fn at(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

/// Decodes PNG or 8-bit JPEG bytes to an RGB image. Grayscale is
/// replicated across the three channels; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<RawImage> {
    use image::DynamicImage as D;

    let format = image::guess_format(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::Decode(format!("unsupported container {format:?}")));
    }
    check_complete(bytes, format)?;
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| Error::Decode(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let rgb = match img {
        D::ImageLuma8(g) => g.into_raw().into_iter().flat_map(|v| [v, v, v]).collect(),
        D::ImageLumaA8(g) => g.pixels().flat_map(|p| [p.0[0]; 3]).collect(),
        D::ImageRgb8(c) => c.into_raw(),
        D::ImageRgba8(c) => c.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2]]).collect(),
        other => {
            return Err(Error::Decode(format!(
                "unsupported pixel format {:?} (only 8-bit images are accepted)",
                other.color()
            )))
        }
    };
    RawImage::new(width, height, 3, rgb)
}

/// The decoders tolerate a missing trailer, so a file cut short after its
/// pixel data would otherwise load silently.
fn check_complete(bytes: &[u8], format: image::ImageFormat) -> Result<()> {
    let complete = match format {
        image::ImageFormat::Png => bytes.len() >= 12 && &bytes[bytes.len() - 8..bytes.len() - 4] == b"IEND",
        _ => bytes.windows(2).any(|w| w == [0xFF, 0xD9]),
    };
    if complete {
        Ok(())
    } else {
        Err(Error::Decode("truncated image stream".into()))
    }
}

pub fn read_image(path: &std::path::Path) -> Result<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

/// Precomputed bilinear taps along one axis.
struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl Taps {
    /// Half-pixel-centered sampling positions, clamped to the border.
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut taps = Taps {
            lo: Vec::with_capacity(dst),
            hi: Vec::with_capacity(dst),
            frac: Vec::with_capacity(dst),
        };
        for i in 0..dst {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            taps.lo.push(lo);
            taps.hi.push((lo + 1).min(src - 1));
            taps.frac.push(pos - lo as f64);
        }
        taps
    }
}

/// Bilinear resize with half-pixel centers; output keeps the channel count.
pub fn resize(img: &RawImage, width: usize, height: usize) -> RawImage {
    if img.width == width && img.height == height {
        return img.clone();
    }
    let xs = Taps::new(img.width, width);
    let ys = Taps::new(img.height, height);
    let mut pixels = Vec::with_capacity(width * height * img.channels);
    for y in 0..height {
        let (y0, y1, fy) = (ys.lo[y], ys.hi[y], ys.frac[y]);
        for x in 0..width {
            let (x0, x1, fx) = (xs.lo[x], xs.hi[x], xs.frac[x]);
            for c in 0..img.channels {
                let p = |xx, yy| f64::from(img.at(xx, yy, c));
                let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
                let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
                let v = top + (bottom - top) * fy;
                pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawImage {
        width,
        height,
        channels: img.channels,
        pixels,
    }
}

/// Maps pixels to `[0, 1]` by dividing by 255; output is `[h, w, 3]`.
pub fn normalize(img: &RawImage, width: usize, height: usize) -> Result<Tensor<f32>> {
    if img.width != width || img.height != height || img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "normalize expects {width}x{height}x3, got {}x{}x{}",
            img.width, img.height, img.channels
        )));
    }
    Tensor::new(
        &[height, width, 3],
        img.pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
    )
}

/// Random affine augmentation ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub rotation_deg_max: f64,
    pub shift_frac_max: f64,
    pub shear_deg_max: f64,
    pub zoom_frac_max: f64,
    pub hflip_prob: f64,
    pub enabled: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotation_deg_max: 10.0,
            shift_frac_max: 0.1,
            shear_deg_max: 10.0,
            zoom_frac_max: 0.1,
            hflip_prob: 0.5,
            enabled: true,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Enabled policy with every magnitude zero.
    pub fn identity() -> Self {
        Self {
            rotation_deg_max: 0.0,
            shift_frac_max: 0.0,
            shear_deg_max: 0.0,
            zoom_frac_max: 0.0,
            hflip_prob: 0.0,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [
            self.rotation_deg_max,
            self.shift_frac_max,
            self.shear_deg_max,
            self.zoom_frac_max,
        ];
        if mags.iter().any(|m| !(*m >= 0.0)) || !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::InvalidArgument(format!("invalid augmentation policy {self:?}")));
        }
        if self.zoom_frac_max >= 1.0 {
            return Err(Error::InvalidArgument("zoom fraction must be < 1".into()));
        }
        Ok(())
    }
}

/// One sampled transform: output pixel `p` reads source pixel
/// `flip(A^-1 (p - c - t) + c)` with `A = rotation * shear * zoom` and `c`
/// the image center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineSample {
    pub rotation_deg: f64,
    pub shift: (f64, f64),
    pub shear_deg: f64,
    pub zoom: f64,
    pub hflip: bool,
}

impl AffineSample {
    pub fn draw(policy: &AugmentPolicy, width: usize, height: usize, rng: &mut Rng) -> Self {
        let sym = |rng: &mut Rng, m: f64| rng.uniform_in(-m, m);
        let rotation_deg = sym(rng, policy.rotation_deg_max);
        let shift = (
            sym(rng, policy.shift_frac_max) * width as f64,
            sym(rng, policy.shift_frac_max) * height as f64,
        );
        let shear_deg = sym(rng, policy.shear_deg_max);
        let zoom = 1.0 + sym(rng, policy.zoom_frac_max);
        let hflip = rng.bernoulli(policy.hflip_prob);
        Self {
            rotation_deg,
            shift,
            shear_deg,
            zoom,
            hflip,
        }
    }

    /// Inverse of the 2x2 linear part, row-major.
    fn inverse_linear(&self) -> [f64; 4] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        let z = self.zoom;
        // A = R * [[1, k], [0, 1]] * z
        let a = [c * z, (c * k - s) * z, s * z, (s * k + c) * z];
        let det = a[0] * a[3] - a[1] * a[2];
        [a[3] / det, -a[1] / det, -a[2] / det, a[0] / det]
    }
}

/// Applies a sampled affine transform to an `[h, w, c]` tensor with
/// bilinear sampling and edge clamping.
pub fn apply_affine(img: &Tensor<f32>, t: &AffineSample) -> Result<Tensor<f32>> {
    let &[h, w, ch] = img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "augment expects [height, width, channels]".into(),
        });
    };
    let inv = t.inverse_linear();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - t.shift.0;
            let dy = y as f64 - cy - t.shift.1;
            let mut sx = inv[0] * dx + inv[1] * dy + cx;
            let sy = inv[2] * dx + inv[3] * dy + cy;
            if t.hflip {
                sx = (w as f64 - 1.0) - sx;
            }
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let sy = sy.clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for c in 0..ch {
                let p = |xx: usize, yy: usize| f64::from(src[(yy * w + xx) * ch + c]);
                let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
                let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
                out.push((top + (bottom - top) * fy) as f32);
            }
        }
    }
    Tensor::new(img.shape(), out)
}

/// Samples and applies one random transform; a disabled policy returns the
/// input unchanged.
pub fn augment(img: &Tensor<f32>, policy: &AugmentPolicy, rng: &mut Rng) -> Result<Tensor<f32>> {
    if !policy.enabled {
        return Ok(img.clone());
    }
    let &[h, w, _] = img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "augment expects [height, width, channels]".into(),
        });
    };
    let sample = AffineSample::draw(policy, w, h, rng);
    apply_affine(img, &sample)
}

/// Decode -> resize -> normalize.
pub fn load_normalized(path: &std::path::Path, width: usize, height: usize) -> Result<Tensor<f32>> {
    let img = read_image(path)?;
    normalize(&resize(&img, width, height), width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(width: u32, height: u32, gray: bool, data: Vec<u8>) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        if gray {
            image::GrayImage::from_raw(width, height, data)
                .unwrap()
                .write_to(&mut out, image::ImageFormat::Png)
                .unwrap();
        } else {
            image::RgbImage::from_raw(width, height, data)
                .unwrap()
                .write_to(&mut out, image::ImageFormat::Png)
                .unwrap();
        }
        out.into_inner()
    }

    #[test]
    fn decodes_single_white_pixel() {
        let img = decode_image(&png(1, 1, false, vec![255, 255, 255])).unwrap();
        assert_eq!(img, RawImage::new(1, 1, 3, vec![255; 3]).unwrap());
    }

    #[test]
    fn grayscale_is_replicated() {
        let img = decode_image(&png(2, 2, true, vec![7; 4])).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 2, 3));
        assert!(img.pixels.iter().all(|&p| p == 7));
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let bytes = png(4, 4, false, vec![9; 48]);
        for cut in [0, 8, bytes.len() / 2, bytes.len() - 4] {
            assert!(decode_image(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn sixteen_bit_rejected() {
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![300u16]).unwrap();
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png).unwrap();
        assert!(matches!(decode_image(&out.into_inner()), Err(Error::Decode(_))));
    }

    #[test]
    fn jpeg_decodes() {
        let mut out = std::io::Cursor::new(Vec::new());
        image::RgbImage::from_pixel(8, 8, image::Rgb([100, 100, 100]))
            .write_to(&mut out, image::ImageFormat::Jpeg)
            .unwrap();
        let img = decode_image(&out.into_inner()).unwrap();
        assert_eq!((img.width, img.height), (8, 8));
        assert!(img.pixels.iter().all(|&p| p.abs_diff(100) <= 2));
    }

    #[test]
    fn checkerboard_upsample_matches_scalar_reference() {
        let src = RawImage::new(2, 2, 1, vec![0, 255, 255, 0]).unwrap();
        let out = resize(&src, 4, 4);
        // Scalar reference: sample position (i + 0.5) / 2 - 0.5 clamped to [0, 1].
        let pos = |i: usize| ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
        for y in 0..4 {
            for x in 0..4 {
                let (fx, fy) = (pos(x), pos(y));
                let v = 0.0 * (1.0 - fx) * (1.0 - fy) + 255.0 * fx * (1.0 - fy) + 255.0 * (1.0 - fx) * fy;
                assert!((f64::from(out.pixels[y * 4 + x]) - v).abs() <= 1.0, "({x},{y})");
            }
        }
        assert_eq!([out.pixels[0], out.pixels[3], out.pixels[12], out.pixels[15]], [0, 255, 255, 0]);
    }

    #[test]
    fn constant_resize_and_identity() {
        let src = RawImage::filled(37, 19, [12, 200, 99]);
        assert_eq!(resize(&src, 224, 224), RawImage::filled(224, 224, [12, 200, 99]));
        let img = RawImage::new(3, 2, 3, (0..18).collect()).unwrap();
        assert_eq!(resize(&img, 3, 2), img);
    }

    #[test]
    fn normalize_endpoints() {
        let img = RawImage::new(2, 1, 3, vec![0, 255, 51, 0, 0, 0]).unwrap();
        let t = normalize(&img, 2, 1).unwrap();
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - 0.2).abs() <= 1e-7);
        assert!(normalize(&img, 3, 1).is_err());
    }

    #[test]
    fn disabled_augment_is_identity() {
        let img = Tensor::from_fn(&[8, 8, 3], |i| (i % 7) as f32 / 7.0).unwrap();
        let out = augment(&img, &AugmentPolicy::disabled(), &mut Rng::new(1)).unwrap();
        assert!(out.bitwise_eq(&img));
        let out = augment(&img, &AugmentPolicy::identity(), &mut Rng::new(1)).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let img = Tensor::from_fn(&[5, 6, 3], |i| (i * 37 % 101) as f32 / 101.0).unwrap();
        let policy = AugmentPolicy {
            hflip_prob: 1.0,
            ..AugmentPolicy::identity()
        };
        let once = augment(&img, &policy, &mut Rng::new(3)).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                for c in 0..3 {
                    assert_eq!(once.data()[(y * 6 + x) * 3 + c], img.data()[(y * 6 + (5 - x)) * 3 + c]);
                }
            }
        }
        let twice = augment(&once, &policy, &mut Rng::new(4)).unwrap();
        for (a, b) in twice.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentPolicy::default().validate().is_ok());
        let bad = AugmentPolicy {
            hflip_prob: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
