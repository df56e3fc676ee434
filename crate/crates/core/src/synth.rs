//! Procedural test textures.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::texture_io::{Texture, TextureKind};

/// Smooth RGB ramp: red along x, green along y, blue a gentle diagonal wave.
pub fn smooth_gradient_rgb(width: usize, height: usize) -> Texture {
    let (fw, fh) = ((width.max(2) - 1) as f32, (height.max(2) - 1) as f32);
    Texture::from_fn(width, height, TextureKind::Rgb, |x, y, c| {
        let (u, v) = (x as f32 / fw, y as f32 / fh);
        match c {
            0 => 0.1 + 0.8 * u,
            1 => 0.15 + 0.7 * v,
            _ => 0.5 + 0.3 * (std::f32::consts::PI * (u + v)).sin(),
        }
    })
    .expect("valid dimensions")
}

/// 2D gradient noise with a seeded permutation table.
pub struct GradientNoise {
    perm: [u8; 512],
}

impl GradientNoise {
    pub fn new(seed: u64) -> Self {
        let mut p: Vec<u8> = (0..=255).collect();
        p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        GradientNoise { perm }
    }

    fn grad(&self, ix: i64, iy: i64, dx: f32, dy: f32) -> f32 {
        let h = self.perm[(self.perm[(ix & 255) as usize] as usize + (iy & 255) as usize) & 511];
        let a = h as f32 * (std::f32::consts::TAU / 256.0);
        a.cos() * dx + a.sin() * dy
    }

    /// Roughly in `[-0.7, 0.7]`, zero at lattice points.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let fade = |t: f32| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (u, v) = (fade(fx), fade(fy));
        let lerp = |a: f32, b: f32, t: f32| a + t * (b - a);
        let n00 = self.grad(ix, iy, fx, fy);
        let n10 = self.grad(ix + 1, iy, fx - 1.0, fy);
        let n01 = self.grad(ix, iy + 1, fx, fy - 1.0);
        let n11 = self.grad(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
        lerp(lerp(n00, n10, u), lerp(n01, n11, u), v)
    }
}

/// Fractal gradient noise (4 octaves from `base_frequency` cells across)
/// mapped into `[0, 1]`.
pub fn perlin_single(width: usize, height: usize, base_frequency: f32, seed: u64) -> Texture {
    let noise = GradientNoise::new(seed);
    let octaves = 4;
    Texture::from_fn(width, height, TextureKind::Single, |x, y, _| {
        let (u, v) = (x as f32 / width as f32, y as f32 / height as f32);
        let (mut sum, mut amp, mut freq) = (0.0, 1.0, base_frequency);
        for _ in 0..octaves {
            sum += amp * noise.sample(u * freq, v * freq);
            amp *= 0.5;
            freq *= 2.0;
        }
        0.5 + 0.55 * sum
    })
    .expect("valid dimensions")
}

pub fn constant(width: usize, height: usize, kind: TextureKind, value: [f32; 3]) -> Texture {
    Texture::from_fn(width, height, kind, |_, _, c| value[c]).expect("valid dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_seeded_and_in_range() {
        let a = perlin_single(64, 64, 4.0, 1);
        assert_eq!(a, perlin_single(64, 64, 4.0, 1));
        assert_ne!(a, perlin_single(64, 64, 4.0, 2));
        let (lo, hi) = a
            .data()
            .iter()
            .fold((1f32, 0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(hi - lo > 0.3, "{lo} {hi}");
    }

    #[test]
    fn gradient_is_smooth() {
        let t = smooth_gradient_rgb(32, 32);
        for y in 0..32 {
            for x in 1..32 {
                for c in 0..3 {
                    assert!((t.texel(x, y)[c] - t.texel(x - 1, y)[c]).abs() < 0.06);
                }
            }
        }
    }
}
