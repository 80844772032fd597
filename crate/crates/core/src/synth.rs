//! Seeded synthetic signals: GGD samples, temporally varying test videos and
//! simple distortions. Used by the test suites and the CLI demo study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::Result;
use crate::video::{frame_duplicate_upsample, temporal_subsample, Fps, PlanarVideo};

/// Draws `n` samples from a zero-mean GGD with scale `alpha` and shape `beta`.
pub fn sample_ggd<R: Rng>(rng: &mut R, alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    let g = Gamma::new(1.0 / beta, 1.0).expect("positive shape");
    (0..n)
        .map(|_| {
            let mag = alpha * g.sample(rng).powf(1.0 / beta);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Smooth random texture with values roughly in `[0, 1]`, periodic in both axes.
fn texture(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Vec<f64> {
    // a handful of random plane waves
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.random_range(1..6) as f64,
                rng.random_range(1..6) as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let s: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin())
                .sum();
            out[y * width + x] = 0.5 + 0.5 * s / norm;
        }
    }
    out
}

/// A seeded video with global motion, fine temporal noise and flicker.
///
/// The content moves a few pixels per frame so that every temporal subband
/// carries energy, which makes frame-rate reductions measurable.
pub fn moving_texture_video(seed: u64, width: usize, height: usize, n_frames: usize, fps: Fps) -> Result<PlanarVideo<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tex = texture(&mut rng, width, height);
    let vx = rng.random_range(1.0..3.0);
    let vy = rng.random_range(-2.0..2.0);
    let flicker = rng.random_range(0.6..1.2);
    let noise = Normal::new(0.0, rng.random_range(6.0..14.0)).expect("finite sigma");
    let contrast = rng.random_range(120.0..200.0);
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let (dx, dy) = (vx * t as f64, vy * t as f64);
        let gain = 1.0 + 0.15 * (flicker * t as f64).sin();
        let mut frame = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let sx = (x as f64 + dx).rem_euclid(width as f64) as usize % width;
                let sy = (y as f64 + dy).rem_euclid(height as f64) as usize % height;
                let base = 128.0 + gain * contrast * (tex[sy * width + sx] - 0.5);
                frame.push((base + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
            }
        }
        frames.push(frame);
    }
    PlanarVideo::new(width, height, fps, frames)
}

/// Seeded i.i.d. uniform noise video.
pub fn white_noise_video(seed: u64, width: usize, height: usize, n_frames: usize, fps: Fps) -> Result<PlanarVideo<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n_frames)
        .map(|_| (0..width * height).map(|_| rng.random::<u8>()).collect())
        .collect();
    PlanarVideo::new(width, height, fps, frames)
}

/// Adds seeded Gaussian noise, rounding and clamping to 8 bits.
pub fn add_gaussian_noise(v: &PlanarVideo<u8>, sigma: f64, seed: u64) -> Result<PlanarVideo<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let frames = v
        .frames()
        .iter()
        .map(|f| {
            f.iter()
                .map(|&p| (p as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                .collect()
        })
        .collect();
    PlanarVideo::new(v.width(), v.height(), v.fps(), frames)
}

/// Frame-rate distortion: drop to `rate` and, when `hold` is set, duplicate
/// back to the original rate.
pub fn frame_rate_distortion(v: &PlanarVideo<u8>, rate: Fps, hold: bool) -> Result<PlanarVideo<u8>> {
    let low = temporal_subsample(v, rate)?;
    if hold {
        frame_duplicate_upsample(&low, v.fps())
    } else {
        Ok(low)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ggd_samples_have_expected_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // variance of a GGD is α²Γ(3/β)/Γ(1/β); β = 2, α = 1 gives 1/2
        let xs = sample_ggd(&mut rng, 1.0, 2.0, 200_000);
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var - 0.5).abs() < 0.01, "{var}");
    }

    #[test]
    fn videos_are_seed_deterministic() {
        let fps = Fps::integer(120).unwrap();
        let a = moving_texture_video(1, 32, 24, 8, fps).unwrap();
        assert_eq!(a, moving_texture_video(1, 32, 24, 8, fps).unwrap());
        assert_ne!(a, moving_texture_video(2, 32, 24, 8, fps).unwrap());
        assert_ne!(a.frame(0), a.frame(1));
    }
}
