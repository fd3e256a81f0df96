//! Random geometric augmentation: rotation, shear, zoom, width/height shift,
//! and horizontal flip, composed into one affine warp with bilinear sampling
//! and zero fill outside the frame. Labels are never touched.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Rotation drawn from +-degrees.
    pub rotation_degrees: f64,
    /// Shear factor drawn from +-shear.
    pub shear: f64,
    /// Zoom drawn from [1 - zoom, 1 + zoom].
    pub zoom: f64,
    /// Horizontal shift drawn from +-fraction of width.
    pub width_shift: f64,
    /// Vertical shift drawn from +-fraction of height.
    pub height_shift: f64,
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_degrees: 20.0,
            shear: 0.2,
            zoom: 0.2,
            width_shift: 0.1,
            height_shift: 0.1,
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Everything off; `augment` becomes the identity.
    pub fn disabled() -> Self {
        Self {
            rotation_degrees: 0.0,
            shear: 0.0,
            zoom: 0.0,
            width_shift: 0.0,
            height_shift: 0.0,
            flip_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_degrees) {
            return Err(Error::Config("rotation range must be in [0, 180]".into()));
        }
        for (name, v) in [
            ("shear", self.shear),
            ("zoom", self.zoom),
            ("width_shift", self.width_shift),
            ("height_shift", self.height_shift),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config("flip probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One concrete draw of augmentation magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineSample {
    pub rotation_degrees: f64,
    pub shear: f64,
    pub zoom: f64,
    pub width_shift: f64,
    pub height_shift: f64,
    pub flip: bool,
}

impl AffineSample {
    pub fn identity() -> Self {
        Self {
            rotation_degrees: 0.0,
            shear: 0.0,
            zoom: 1.0,
            width_shift: 0.0,
            height_shift: 0.0,
            flip: false,
        }
    }

    /// Draw order is fixed so a seeded rng reproduces the same sample.
    pub fn draw<R: Rng>(config: &AugmentConfig, rng: &mut R) -> Self {
        let sym = |rng: &mut R, range: f64| {
            if range == 0.0 {
                0.0
            } else {
                rng.gen_range(-range..=range)
            }
        };
        let rotation_degrees = sym(rng, config.rotation_degrees);
        let shear = sym(rng, config.shear);
        let zoom = 1.0 + sym(rng, config.zoom);
        let width_shift = sym(rng, config.width_shift);
        let height_shift = sym(rng, config.height_shift);
        let flip = config.flip_probability > 0.0 && rng.gen_range(0.0..1.0) < config.flip_probability;
        Self {
            rotation_degrees,
            shear,
            zoom,
            width_shift,
            height_shift,
            flip,
        }
    }
}

/// Applies a concrete sample to a `[C, H, W]` image.
pub fn apply_affine(img: &Tensor<f32>, sample: &AffineSample) -> Result<Tensor<f32>> {
    if img.shape().len() != 3 {
        return Err(Error::InvalidShape(format!(
            "augment expects [C, H, W], got {:?}",
            img.shape()
        )));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);

    // forward transform about the image center: rotate, shear, zoom, shift.
    // Sampling inverts it, mapping each output pixel back into the source.
    let theta = sample.rotation_degrees.to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());
    let z = sample.zoom;
    let sh = sample.shear;
    // rows of the combined linear map: zoom * shear * rotation
    let m00 = z * (cos + sh * sin);
    let m01 = z * (-sin + sh * cos);
    let m10 = z * sin;
    let m11 = z * cos;
    let det = m00 * m11 - m01 * m10;
    let (i00, i01, i10, i11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);
    let tx = sample.width_shift * w as f64;
    let ty = sample.height_shift * h as f64;

    let mut out = vec![0.0f32; c * h * w];
    for oy in 0..h {
        for ox in 0..w {
            // output pixel, after optional flip, relative to center
            let fx = if sample.flip {
                (w - 1 - ox) as f64
            } else {
                ox as f64
            };
            let dx = fx - cx - tx;
            let dy = oy as f64 - cy - ty;
            let sx = i00 * dx + i01 * dy + cx;
            let sy = i10 * dx + i11 * dy + cy;
            if sx < -0.5 || sy < -0.5 || sx > (w - 1) as f64 + 0.5 || sy > (h - 1) as f64 + 0.5 {
                continue; // zero fill
            }
            let sxc = sx.clamp(0.0, (w - 1) as f64);
            let syc = sy.clamp(0.0, (h - 1) as f64);
            let x0 = sxc.floor() as usize;
            let y0 = syc.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let (ax, ay) = (sxc - x0 as f64, syc - y0 as f64);
            for ci in 0..c {
                let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
                let v = plane[y0 * w + x0] as f64 * (1.0 - ay) * (1.0 - ax)
                    + plane[y0 * w + x1] as f64 * (1.0 - ay) * ax
                    + plane[y1 * w + x0] as f64 * ay * (1.0 - ax)
                    + plane[y1 * w + x1] as f64 * ay * ax;
                out[(ci * h + oy) * w + ox] = v as f32;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Draws magnitudes from `config` and warps the image; the label is returned
/// unchanged.
pub fn augment<R: Rng>(
    img: &Tensor<f32>,
    label: usize,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor<f32>, usize)> {
    let sample = AffineSample::draw(config, rng);
    Ok((apply_affine(img, &sample)?, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_pattern() -> Tensor<f32> {
        Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| v as f32 * 10.0).collect()).unwrap()
    }

    #[test]
    fn identity_config_is_identity() {
        let img = test_pattern();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, label) = augment(&img, 3, &AugmentConfig::disabled(), &mut rng).unwrap();
        assert_eq!(label, 3);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let img = test_pattern();
        let flip = AffineSample {
            flip: true,
            ..AffineSample::identity()
        };
        let once = apply_affine(&img, &flip).unwrap();
        let twice = apply_affine(&once, &flip).unwrap();
        for (a, b) in twice.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn quarter_rotation_matches_permutation_oracle() {
        let img = test_pattern();
        let rot = AffineSample {
            rotation_degrees: 90.0,
            ..AffineSample::identity()
        };
        let out = apply_affine(&img, &rot).unwrap();
        // rotating the sampling grid by 90 degrees about the center maps
        // output (y, x) to source (H-1-x, y)
        for y in 0..4 {
            for x in 0..4 {
                let want = img.data()[(3 - x) * 4 + y];
                let got = out.data()[y * 4 + x];
                assert!(
                    (got - want).abs() < 1e-3,
                    "({y},{x}): got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn output_range_never_exceeds_input_range() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Tensor::from_vec(&[1, 8, 8], (0..64).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap();
        let cfg = AugmentConfig::default();
        for _ in 0..20 {
            let (out, _) = augment(&img, 0, &cfg, &mut rng).unwrap();
            for &v in out.data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AugmentConfig::default();
        cfg.rotation_degrees = 200.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.flip_probability = 1.5;
        assert!(cfg.validate().is_err());
    }
}
