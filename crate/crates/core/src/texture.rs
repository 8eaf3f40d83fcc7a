//! Seeded synthetic images: i.i.d. noise and procedural textures whose
//! brightness, contrast and dominant frequencies vary widely between seeds.

use std::f64::consts::TAU;

use crate::rng::{derive_seed, Stream};
use crate::scalar::Scalar;
use crate::tensor::Image;

/// Independent uniform `[0, 1)` pixels.
pub fn random_image<S: Scalar>(seed: u64, height: usize, width: usize, channels: usize) -> Image<S> {
    let mut s = Stream::keyed(seed, &[0x1a6e]);
    let data = (0..height * width * channels).map(|_| S::of(s.uniform())).collect();
    Image::new(height, width, channels, data).expect("uniform pixels are in range")
}

struct Grating {
    fy: f64,
    fx: f64,
    phase: f64,
    square: bool,
    mix: [f64; 3],
}

/// Default brightness range of [`procedural_texture`].
pub const TEXTURE_BRIGHTNESS: (f64, f64) = (0.03, 0.85);

/// Texture built from a few oriented gratings (sinusoidal or square wave)
/// plus fine noise, around a log-uniformly drawn mean brightness.
pub fn procedural_texture<S: Scalar>(seed: u64, height: usize, width: usize, channels: usize) -> Image<S> {
    procedural_texture_in(seed, height, width, channels, TEXTURE_BRIGHTNESS)
}

/// [`procedural_texture`] with the brightness drawn log-uniformly from
/// `brightness = (lo, hi)`, `0 < lo <= hi <= 1`.
pub fn procedural_texture_in<S: Scalar>(
    seed: u64,
    height: usize,
    width: usize,
    channels: usize,
    brightness: (f64, f64),
) -> Image<S> {
    let (lo, hi) = brightness;
    assert!(0.0 < lo && lo <= hi && hi <= 1.0, "brightness range ({lo}, {hi}) outside (0, 1]");
    let mut s = Stream::keyed(seed, &[0x7e47]);
    let brightness = (s.range(lo.ln(), hi.ln())).exp();
    let base: Vec<f64> = (0..channels).map(|_| brightness * s.range(0.5, 1.0)).collect();
    let contrast = s.range(0.1, 1.0);
    let noise = s.range(0.0, 0.3);
    let gratings: Vec<Grating> = (0..1 + s.below(3))
        .map(|_| {
            let cycles = s.range(1.0, 12.0);
            let angle = s.range(0.0, std::f64::consts::PI);
            Grating {
                fy: cycles * angle.sin() / height as f64,
                fx: cycles * angle.cos() / width as f64,
                phase: s.range(0.0, TAU),
                square: s.uniform() < 0.4,
                mix: [s.range(-1.0, 1.0), s.range(-1.0, 1.0), s.range(-1.0, 1.0)],
            }
        })
        .collect();
    let norm = gratings.len() as f64 + noise;
    let mut data = Vec::with_capacity(height * width * channels);
    for y in 0..height {
        for x in 0..width {
            let waves: Vec<f64> = gratings
                .iter()
                .map(|g| {
                    let v = (TAU * (g.fy * y as f64 + g.fx * x as f64) + g.phase).cos();
                    if g.square {
                        v.signum()
                    } else {
                        v
                    }
                })
                .collect();
            for (c, b) in base.iter().enumerate() {
                let pattern: f64 = gratings.iter().zip(&waves).map(|(g, w)| g.mix[c % 3] * w).sum::<f64>()
                    + noise * s.range(-1.0, 1.0);
                let amp = contrast * b.min(1.0 - b);
                data.push(S::of((b + amp * pattern / norm).clamp(0.0, 1.0)));
            }
        }
    }
    Image::new(height, width, channels, data).expect("clamped pixels are in range")
}

/// Brightness range of the style side of [`style_pastiche_pairs`].
pub const STYLE_BRIGHTNESS: (f64, f64) = (0.03, 1.0);
/// Brightness range of the pastiche side of [`style_pastiche_pairs`].
pub const PASTICHE_BRIGHTNESS: (f64, f64) = (0.2, 0.35);

/// `count` seeded (style, pastiche) texture pairs of size `size x size`:
/// styles span a wide brightness range, pastiches stay at moderate
/// brightness like photographs rendered in a style.
pub fn style_pastiche_pairs<S: Scalar>(seed: u64, count: usize, size: usize) -> Vec<(Image<S>, Image<S>)> {
    (0..count as u64)
        .map(|k| {
            (
                procedural_texture_in(derive_seed(seed, &[k, 0]), size, size, 3, STYLE_BRIGHTNESS),
                procedural_texture_in(derive_seed(seed, &[k, 1]), size, size, 3, PASTICHE_BRIGHTNESS),
            )
        })
        .collect()
}
