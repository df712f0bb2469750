//! Procedural two-class texture images: oriented gratings whose spatial
//! frequency separates the classes, with random phase, orientation,
//! contrast and pixel noise.

use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::RawImage;
use crate::rng::Rng;

/// Grating periods in pixels, per class.
pub const DEFAULT_PERIODS: [f64; 2] = [16.0, 4.0];

#[derive(Clone, Debug, PartialEq)]
pub struct TextureSpec {
    pub size: usize,
    pub periods: Vec<f64>,
    /// Half-width of the additive triangular noise, in pixel units.
    pub noise: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            size: 64,
            periods: DEFAULT_PERIODS.to_vec(),
            noise: 24.0,
        }
    }
}

/// One grayscale-looking RGB texture of class `label`.
pub fn texture(spec: &TextureSpec, label: usize, rng: &mut Rng) -> RawImage {
    let period = spec.periods[label] * rng.uniform_in(0.85, 1.15);
    let theta = rng.uniform_in(0.0, std::f64::consts::PI);
    let phase = rng.uniform_in(0.0, std::f64::consts::TAU);
    let contrast = rng.uniform_in(50.0, 90.0);
    let mean = rng.uniform_in(100.0, 150.0);
    let (s, c) = theta.sin_cos();
    let k = std::f64::consts::TAU / period;
    let mut pixels = Vec::with_capacity(spec.size * spec.size * 3);
    for y in 0..spec.size {
        for x in 0..spec.size {
            let u = x as f64 * c + y as f64 * s;
            // Sum of two uniforms minus one: cheap zero-mean noise.
            let noise = (rng.uniform() + rng.uniform() - 1.0) * spec.noise;
            let v = (mean + contrast * (k * u + phase).sin() + noise).round().clamp(0.0, 255.0) as u8;
            pixels.extend_from_slice(&[v, v, v]);
        }
    }
    RawImage {
        width: spec.size,
        height: spec.size,
        channels: 3,
        pixels,
    }
}

/// `per_class` textures for each class, interleaved by class, with
/// sample `i` drawn from its own stream so any subset is reproducible.
pub fn texture_set(spec: &TextureSpec, per_class: usize, seed: u64) -> (Vec<RawImage>, Vec<usize>) {
    let root = Rng::new(seed);
    let classes = spec.periods.len();
    let mut images = Vec::with_capacity(per_class * classes);
    let mut labels = Vec::with_capacity(per_class * classes);
    for i in 0..per_class * classes {
        let label = i % classes;
        images.push(texture(spec, label, &mut root.derive("texture", i as u64)));
        labels.push(label);
    }
    (images, labels)
}

/// Writes `root/<class>/<class>_<i>.png` for each class name.
pub fn write_texture_dataset(
    root: impl AsRef<Path>,
    class_names: &[impl AsRef<str>],
    spec: &TextureSpec,
    per_class: usize,
    seed: u64,
) -> Result<()> {
    let root = root.as_ref();
    if class_names.len() != spec.periods.len() {
        return Err(Error::InvalidArgument(format!(
            "{} class names for {} texture periods",
            class_names.len(),
            spec.periods.len()
        )));
    }
    let (images, labels) = texture_set(spec, per_class, seed);
    for name in class_names {
        let dir = root.join(name.as_ref());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, (img, label)) in images.iter().zip(&labels).enumerate() {
        let name = class_names[*label].as_ref();
        let path = root.join(name).join(format!("{name}_{:05}.png", i / class_names.len()));
        image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .expect("buffer matches dims")
            .save(&path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
