//! Memory-time perturbations applied in 8-bit pixel space.
//!
//! Noise is drawn from a ChaCha8 stream, so a given `(image, sigma, seed)`
//! produces the same output on every platform. When many images share one
//! experiment seed, [`derive_seed`] mixes in the image id so each image gets
//! its own stream regardless of processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::raster::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    None,
    GaussianNoise,
    GaussianBlur,
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PerturbationKind::None => "none",
            PerturbationKind::GaussianNoise => "gaussian_noise",
            PerturbationKind::GaussianBlur => "gaussian_blur",
        })
    }
}

/// What happens to an image on its way into memory.
///
/// `sigma` is in pixel-value units for noise and pixel-distance units for blur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationSpec {
    pub const NONE: PerturbationSpec = PerturbationSpec {
        kind: PerturbationKind::None,
        sigma: 0.0,
        seed: 0,
    };

    pub fn noise(sigma: f64, seed: u64) -> Self {
        Self {
            kind: PerturbationKind::GaussianNoise,
            sigma,
            seed,
        }
    }

    pub fn blur(sigma: f64) -> Self {
        Self {
            kind: PerturbationKind::GaussianBlur,
            sigma,
            seed: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.sigma.is_finite() && self.sigma >= 0.0
    }

    /// The same spec with its seed replaced by the per-image stream seed.
    pub fn for_image(&self, id: &str) -> Self {
        Self {
            seed: derive_seed(self.seed, id),
            ..*self
        }
    }
}

/// Per-image seed: `seed XOR fnv1a64(id)`.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    seed ^ fnv1a64(id.as_bytes())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Adds independent `Normal(0, sigma_n^2)` noise to every sample, then rounds
/// and clamps back into `[0, 255]`.
pub fn add_gaussian_noise(img: &ImageBuffer, sigma_n: f64, seed: u64) -> ImageBuffer {
    if sigma_n <= 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| {
            let z: f64 = StandardNormal.sample(&mut rng);
            to_u8(p as f64 + sigma_n * z)
        })
        .collect();
    ImageBuffer::new(img.width(), img.height(), img.channels(), pixels)
        .expect("noise preserves shape")
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma_b: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_b).ceil() as i64;
    let denom = 2.0 * sigma_b * sigma_b;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|w| *w /= total);
    taps
}

/// Separable Gaussian blur with edge replication. The horizontal pass is kept
/// in full precision; rounding happens once after the vertical pass.
pub fn gaussian_blur(img: &ImageBuffer, sigma_b: f64) -> ImageBuffer {
    if sigma_b <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma_b);
    let radius = (kernel.len() / 2) as i64;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let src = img.pixels();
    let clamp_x = |x: i64| x.clamp(0, w as i64 - 1) as usize;
    let clamp_y = |y: i64| y.clamp(0, h as i64 - 1) as usize;

    let mut horizontal = vec![0.0f64; src.len()];
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let sx = clamp_x(x as i64 + k as i64 - radius);
                    acc += weight * src[(row + sx) * ch + c] as f64;
                }
                horizontal[(row + x) * ch + c] = acc;
            }
        }
    }

    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let sy = clamp_y(y as i64 + k as i64 - radius);
                    acc += weight * horizontal[(sy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = to_u8(acc);
            }
        }
    }
    ImageBuffer::new(w, h, ch, out).expect("blur preserves shape")
}

pub fn perturb(img: &ImageBuffer, spec: &PerturbationSpec) -> ImageBuffer {
    match spec.kind {
        PerturbationKind::None => img.clone(),
        PerturbationKind::GaussianNoise => add_gaussian_noise(img, spec.sigma, spec.seed),
        PerturbationKind::GaussianBlur => gaussian_blur(img, spec.sigma),
    }
}

/// Sum of squared 5-point Laplacian responses, with replicated borders.
/// A measure of high-frequency content.
pub fn laplacian_energy(img: &ImageBuffer) -> f64 {
    let (w, h, ch) = (img.width() as i64, img.height() as i64, img.channels());
    let at = |x: i64, y: i64, c: usize| {
        img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize, c) as f64
    };
    let mut energy = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let lap = at(x - 1, y, c) + at(x + 1, y, c) + at(x, y - 1, c) + at(x, y + 1, c)
                    - 4.0 * at(x, y, c);
                energy += lap * lap;
            }
        }
    }
    energy
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, ch: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, ch, |_, _, _| rng.random()).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = random_image(16, 9, 3, 1);
        assert_eq!(add_gaussian_noise(&img, 0.0, 5), img);
        assert_eq!(gaussian_blur(&img, 0.0), img);
        assert_eq!(perturb(&img, &PerturbationSpec::NONE), img);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let img = ImageBuffer::filled(512, 512, 3, 128).unwrap();
        let out = add_gaussian_noise(&img, 20.0, 9);
        let n = out.pixels().len() as f64;
        let deltas: Vec<f64> = out.pixels().iter().map(|&p| p as f64 - 128.0).collect();
        let mean = deltas.iter().sum::<f64>() / n;
        let std = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((19.5..=20.5).contains(&std), "std {std}");
    }

    #[test]
    fn clamping_biases_bright_images_down() {
        let img = ImageBuffer::filled(256, 256, 1, 250).unwrap();
        let out = add_gaussian_noise(&img, 20.0, 3);
        assert!(out.pixels().contains(&255));
        assert!(out.mean() < 250.0);
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let img = random_image(32, 32, 3, 2);
        let spec = PerturbationSpec::noise(20.0, 42);
        assert_eq!(perturb(&img, &spec), perturb(&img, &spec));
        assert_ne!(perturb(&img, &spec), perturb(&img, &PerturbationSpec::noise(20.0, 43)));
    }

    #[test]
    fn derived_seeds_differ_per_image() {
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
        assert_eq!(derive_seed(7, "a"), derive_seed(7, "a"));
    }

    #[test]
    fn blur_keeps_constant_images() {
        let img = ImageBuffer::filled(20, 13, 3, 77).unwrap();
        for sigma in [0.5, 1.0, 2.5, 6.0] {
            assert_eq!(gaussian_blur(&img, sigma), img);
        }
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn impulse_response_matches_closed_form() {
        let mut pixels = vec![0u8; 33 * 33];
        pixels[16 * 33 + 16] = 255;
        let img = ImageBuffer::new(33, 33, 1, pixels).unwrap();
        let out = gaussian_blur(&img, 2.0);

        // Oracle: weights straight from the density, r = ceil(3 * 2) = 6.
        let raw: Vec<f64> = (-6i32..=6).map(|i| (-(i * i) as f64 / 8.0).exp()).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        for y in 0..33 {
            for x in 0..33 {
                let (dx, dy) = (x as i32 - 16, y as i32 - 16);
                let expected = if dx.abs() <= 6 && dy.abs() <= 6 {
                    255.0 * w[(dx + 6) as usize] * w[(dy + 6) as usize]
                } else {
                    0.0
                };
                let err = (out.get(x, y, 0) as f64 - expected).abs();
                assert!(err <= 1.0, "({x},{y}) err {err}");
            }
        }
    }

    #[test]
    fn blur_preserves_mean() {
        let img = random_image(64, 48, 3, 11);
        let out = gaussian_blur(&img, 2.0);
        assert!((out.mean() - img.mean()).abs() <= 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn blur_never_adds_high_frequency(seed in any::<u64>(), sigma in 1.0f64..4.0) {
            let img = random_image(24, 20, 3, seed);
            let out = gaussian_blur(&img, sigma);
            prop_assert!(laplacian_energy(&out) <= laplacian_energy(&img));
        }

        #[test]
        fn noise_is_shape_preserving_and_pure(seed in any::<u64>(), sigma in 0.0f64..60.0) {
            let img = random_image(9, 7, 1, seed ^ 1);
            let a = add_gaussian_noise(&img, sigma, seed);
            prop_assert!(a.same_shape(&img));
            prop_assert_eq!(a, add_gaussian_noise(&img, sigma, seed));
        }
    }
}
