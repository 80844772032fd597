//! Temporal entropic differencing.
//!
//! For each scale the reference `R`, the pseudo-reference `PR` (`R` sampled
//! at the distorted frame rate) and the distorted video `D` are reduced to
//! fields of variance-weighted GGD entropies `ε[k][t][p]`. Per band and time
//! step,
//!
//! ```text
//! TGREED[k][t] = mean_p | (1 + |εD - εPR|) · (εR + 1) / (εPR + 1) - 1 |
//! ```
//!
//! and the band feature is the mean over `t`. `D` and `PR` are brought back
//! to the reference rate by frame duplication before filtering so all three
//! fields share the same time axis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::{decompose, FilterBankConfig, N_BANDS};
use crate::ggd::{scaled_entropy, PatchStats};
use crate::video::{
    frame_duplicate_upsample, spatial_downsample, temporal_subsample, Fps, PlanarVideo, Sample, PATCH_SIZE,
    SUPPORTED_SCALES,
};

/// Variance-weighted entropies for one video at one scale.
///
/// `eps` and `sigma2` are laid out `[band][t][patch]`, patches row-major
/// over a `grid_w × grid_h` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyField {
    pub scale: u32,
    pub grid_w: usize,
    pub grid_h: usize,
    pub n_times: usize,
    pub eps: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl EntropyField {
    pub fn n_patches(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (N_BANDS, self.n_times, self.n_patches())
    }

    /// `[t][patch]` slice of band `k` (1-based).
    pub fn band(&self, k: usize) -> &[f64] {
        let len = self.n_times * self.n_patches();
        &self.eps[(k - 1) * len..k * len]
    }

    pub fn get(&self, k: usize, t: usize, p: usize) -> f64 {
        self.band(k)[t * self.n_patches() + p]
    }
}

/// The 14 temporal features, scale-major then band 1..=7.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TgreedFeatures {
    pub scale4: [f64; N_BANDS],
    pub scale5: [f64; N_BANDS],
}

impl TgreedFeatures {
    pub fn zeros() -> Self {
        TgreedFeatures {
            scale4: [0.0; N_BANDS],
            scale5: [0.0; N_BANDS],
        }
    }

    pub fn values(&self) -> [f64; 2 * N_BANDS] {
        let mut out = [0.0; 2 * N_BANDS];
        out[..N_BANDS].copy_from_slice(&self.scale4);
        out[N_BANDS..].copy_from_slice(&self.scale5);
        out
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() != 2 * N_BANDS {
            return Err(Error::Shape(format!("expected {} temporal features, got {}", 2 * N_BANDS, values.len())));
        }
        let mut f = TgreedFeatures::zeros();
        f.scale4.copy_from_slice(&values[..N_BANDS]);
        f.scale5.copy_from_slice(&values[N_BANDS..]);
        Ok(f)
    }
}

/// Reference sampled at the distorted frame rate.
pub fn build_pseudo_reference<T: Sample>(r: &PlanarVideo<T>, d_fps: Fps) -> Result<PlanarVideo<T>> {
    temporal_subsample(r, d_fps)
}

fn field_from_downscaled(v: &PlanarVideo<f64>, scale: u32, cfg: &FilterBankConfig) -> Result<EntropyField> {
    let bands = decompose(v, cfg)?;
    let (w, h) = (v.width(), v.height());
    let (grid_w, grid_h) = (w / PATCH_SIZE, h / PATCH_SIZE);
    let n_times = bands[0].n_times;
    let n_patches = grid_w * grid_h;

    let per_band: Vec<(Vec<f64>, Vec<f64>)> = bands
        .par_iter()
        .map(|b| {
            let mut eps = Vec::with_capacity(n_times * n_patches);
            let mut sig = Vec::with_capacity(n_times * n_patches);
            let mut patch = [0.0; PATCH_SIZE * PATCH_SIZE];
            for t in 0..n_times {
                let frame = b.frame(t);
                for gy in 0..grid_h {
                    for gx in 0..grid_w {
                        for dy in 0..PATCH_SIZE {
                            let row = (gy * PATCH_SIZE + dy) * w + gx * PATCH_SIZE;
                            patch[dy * PATCH_SIZE..(dy + 1) * PATCH_SIZE].copy_from_slice(&frame[row..row + PATCH_SIZE]);
                        }
                        let stats = PatchStats::from_samples(&patch);
                        eps.push(scaled_entropy(&stats));
                        sig.push(stats.variance);
                    }
                }
            }
            (eps, sig)
        })
        .collect();

    let (eps, sigma2) = per_band.into_iter().fold((Vec::new(), Vec::new()), |(mut e, mut s), (be, bs)| {
        e.extend(be);
        s.extend(bs);
        (e, s)
    });
    Ok(EntropyField {
        scale,
        grid_w,
        grid_h,
        n_times,
        eps,
        sigma2,
    })
}

/// Downscale by `2^s`, decompose along time, and compute per-patch
/// variance-weighted entropies.
pub fn entropy_field<T: Sample>(v: &PlanarVideo<T>, s: u32, cfg: &FilterBankConfig) -> Result<EntropyField> {
    let small = spatial_downsample(v, s)?;
    field_from_downscaled(&small, s, cfg)
}

fn check_slices(r: &[f64], pr: &[f64], d: &[f64], n_patches: usize) -> Result<()> {
    if r.len() != pr.len() || r.len() != d.len() {
        return Err(Error::Shape(format!(
            "entropy slices differ in length: {} / {} / {}",
            r.len(),
            pr.len(),
            d.len()
        )));
    }
    if n_patches == 0 || r.is_empty() || !r.len().is_multiple_of(n_patches) {
        return Err(Error::Shape(format!(
            "{} entries do not tile into {n_patches} patches",
            r.len()
        )));
    }
    Ok(())
}

/// Per-time-step entropic difference for one band. Slices are `[t][patch]`.
pub fn tgreed_per_time(r: &[f64], pr: &[f64], d: &[f64], n_patches: usize) -> Result<Vec<f64>> {
    check_slices(r, pr, d, n_patches)?;
    Ok(r.chunks(n_patches)
        .zip(pr.chunks(n_patches))
        .zip(d.chunks(n_patches))
        .map(|((r, pr), d)| {
            let sum: f64 = r
                .iter()
                .zip(pr)
                .zip(d)
                .map(|((&er, &epr), &ed)| ((1.0 + (ed - epr).abs()) * (er + 1.0) / (epr + 1.0) - 1.0).abs())
                .sum();
            sum / n_patches as f64
        })
        .collect())
}

/// Band feature: [`tgreed_per_time`] averaged over time.
pub fn tgreed_band(r: &[f64], pr: &[f64], d: &[f64], n_patches: usize) -> Result<f64> {
    let per_t = tgreed_per_time(r, pr, d, n_patches)?;
    Ok(per_t.iter().sum::<f64>() / per_t.len() as f64)
}

/// The frame-rate ratio factor `(εR + 1) / (εPR + 1)` per entry. It does not
/// depend on the distorted video.
pub fn ratio_factor(r: &EntropyField, pr: &EntropyField) -> Result<Vec<f64>> {
    if r.shape() != pr.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", r.shape(), pr.shape())));
    }
    Ok(r.eps.iter().zip(&pr.eps).map(|(a, b)| (a + 1.0) / (b + 1.0)).collect())
}

/// Entropy fields of `R`, `PR` and `D` at one scale, aligned in time.
#[derive(Debug, Clone)]
pub struct AlignedFields {
    pub reference: EntropyField,
    pub pseudo_reference: EntropyField,
    pub distorted: EntropyField,
}

impl AlignedFields {
    pub fn band_features(&self) -> Result<[f64; N_BANDS]> {
        let fields = [&self.reference, &self.pseudo_reference, &self.distorted];
        if fields.iter().any(|f| f.shape() != self.reference.shape()) {
            return Err(Error::Shape("entropy fields disagree in shape".into()));
        }
        let n_patches = self.reference.n_patches();
        let mut out = [0.0; N_BANDS];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = tgreed_band(
                self.reference.band(k + 1),
                self.pseudo_reference.band(k + 1),
                self.distorted.band(k + 1),
                n_patches,
            )?;
        }
        Ok(out)
    }
}

fn check_pair<T: Sample, U: Sample>(r: &PlanarVideo<T>, d: &PlanarVideo<U>) -> Result<()> {
    if (r.width(), r.height()) != (d.width(), d.height()) {
        return Err(Error::Argument(format!(
            "reference is {}x{} but distorted is {}x{}",
            r.width(),
            r.height(),
            d.width(),
            d.height()
        )));
    }
    if d.fps() > r.fps() {
        return Err(Error::Argument(format!(
            "distorted frame rate {} exceeds reference rate {}",
            d.fps(),
            r.fps()
        )));
    }
    Ok(())
}

/// Builds the three aligned entropy fields at scale `s`.
pub fn aligned_fields<T: Sample, U: Sample>(
    r: &PlanarVideo<T>,
    d: &PlanarVideo<U>,
    s: u32,
    cfg: &FilterBankConfig,
) -> Result<AlignedFields> {
    check_pair(r, d)?;
    // Spatial pooling commutes with frame selection, so downscale first.
    let r_small = spatial_downsample(r, s)?;
    let d_small = spatial_downsample(d, s)?;
    let same_rate = d.fps() == r.fps();
    let pr_small = build_pseudo_reference(&r_small, d.fps())?;
    let d_up = frame_duplicate_upsample(&d_small, r.fps())?;
    let pr_up = frame_duplicate_upsample(&pr_small, r.fps())?;

    let n = r_small.n_frames().min(d_up.n_frames()).min(pr_up.n_frames());
    if n < cfg.min_frames() {
        return Err(Error::Argument(format!(
            "only {n} aligned frames; need at least {}",
            cfg.min_frames()
        )));
    }
    let r_small = r_small.truncated(n)?;
    let d_up = d_up.truncated(n)?;
    let pr_up = pr_up.truncated(n)?;

    let (reference, (pseudo_reference, distorted)) = rayon::join(
        || field_from_downscaled(&r_small, s, cfg),
        || {
            rayon::join(
                || {
                    if same_rate {
                        None
                    } else {
                        Some(field_from_downscaled(&pr_up, s, cfg))
                    }
                },
                || field_from_downscaled(&d_up, s, cfg),
            )
        },
    );
    let reference = reference?;
    let pseudo_reference = match pseudo_reference {
        Some(f) => f?,
        None => reference.clone(),
    };
    Ok(AlignedFields {
        reference,
        pseudo_reference,
        distorted: distorted?,
    })
}

/// The 14 temporal features for a reference/distorted pair.
pub fn compute_tgreed<T: Sample, U: Sample>(
    r: &PlanarVideo<T>,
    d: &PlanarVideo<U>,
    cfg: &FilterBankConfig,
) -> Result<TgreedFeatures> {
    cfg.validate()?;
    check_pair(r, d)?;
    let [s4, s5] = SUPPORTED_SCALES;
    let (a, b) = rayon::join(|| aligned_fields(r, d, s4, cfg), || aligned_fields(r, d, s5, cfg));
    Ok(TgreedFeatures {
        scale4: a?.band_features()?,
        scale5: b?.band_features()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{add_gaussian_noise, frame_rate_distortion, moving_texture_video, white_noise_video};

    fn fps(n: u32) -> Fps {
        Fps::integer(n).unwrap()
    }

    #[test]
    fn hand_computed_entry() {
        let v = tgreed_band(&[2.0], &[1.0], &[1.5], 1).unwrap();
        assert!((v - 1.25).abs() < 1e-12);
    }

    #[test]
    fn equal_fields_give_zero() {
        let e = [0.3, 1.2, 0.0, 4.4, 2.0, 0.7];
        assert_eq!(tgreed_band(&e, &e, &e, 3).unwrap(), 0.0);
    }

    #[test]
    fn pure_rate_change_reduces_to_ratio() {
        let r = [2.0, 0.5, 1.0, 3.0];
        let pr = [1.0, 0.5, 0.2, 2.0];
        let got = tgreed_band(&r, &pr, &pr, 2).unwrap();
        let want: f64 = r.iter().zip(&pr).map(|(a, b)| ((a + 1.0) / (b + 1.0) - 1.0f64).abs()).sum::<f64>() / 4.0;
        assert!((got - want).abs() < 1e-15);
        assert!(got > 0.0);
    }

    #[test]
    fn mismatched_slices() {
        assert!(matches!(tgreed_band(&[1.0, 2.0], &[1.0], &[1.0, 2.0], 1), Err(Error::Shape(_))));
        assert!(matches!(tgreed_band(&[1.0; 3], &[1.0; 3], &[1.0; 3], 2), Err(Error::Shape(_))));
    }

    #[test]
    fn pseudo_reference_selection() {
        let r = PlanarVideo::new(1, 1, fps(120), (0..40u8).map(|i| vec![i]).collect()).unwrap();
        assert_eq!(build_pseudo_reference(&r, fps(120)).unwrap(), r);
        let every5: Vec<u8> = build_pseudo_reference(&r, fps(24)).unwrap().frames().iter().map(|f| f[0]).collect();
        assert_eq!(every5, (0..40).step_by(5).collect::<Vec<u8>>());
        let every4: Vec<u8> = build_pseudo_reference(&r, fps(30)).unwrap().frames().iter().map(|f| f[0]).collect();
        assert_eq!(every4, (0..40).step_by(4).collect::<Vec<u8>>());
        assert!(build_pseudo_reference(&r, fps(240)).is_err());
    }

    #[test]
    fn constant_video_field_is_zero() {
        let v = PlanarVideo::new(80, 80, fps(60), vec![vec![90u8; 6400]; 16]).unwrap();
        let f = entropy_field(&v, 4, &FilterBankConfig::default()).unwrap();
        assert_eq!(f.shape(), (7, 2, 1));
        assert!(f.eps.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn white_noise_field_is_positive() {
        let v = white_noise_video(4, 160, 160, 32, fps(120)).unwrap();
        let f = entropy_field(&v, 4, &FilterBankConfig::default()).unwrap();
        assert_eq!((f.grid_w, f.grid_h, f.n_times), (2, 2, 4));
        assert!(f.eps.iter().all(|&e| e > 0.0), "{:?}", f.eps);
    }

    #[test]
    fn patch_locality() {
        // Scale 4 on 160x160 gives a 2x2 patch grid; patch 0 covers the
        // top-left 80x80 input pixels.
        let a = white_noise_video(8, 160, 160, 16, fps(60)).unwrap();
        let frames: Vec<Vec<u8>> = a
            .frames()
            .iter()
            .map(|f| {
                let mut g = f.clone();
                for y in 100..160 {
                    for x in 90..160 {
                        g[y * 160 + x] = g[y * 160 + x].wrapping_add(17);
                    }
                }
                g
            })
            .collect();
        let b = PlanarVideo::new(160, 160, fps(60), frames).unwrap();
        let cfg = FilterBankConfig::default();
        let (fa, fb) = (entropy_field(&a, 4, &cfg).unwrap(), entropy_field(&b, 4, &cfg).unwrap());
        for k in 1..=7 {
            for t in 0..fa.n_times {
                assert_eq!(fa.get(k, t, 0), fb.get(k, t, 0));
                assert_ne!(fa.get(k, t, 3), fb.get(k, t, 3));
            }
        }
    }

    #[test]
    fn identical_videos_give_zero_features() {
        let r = moving_texture_video(1, 160, 160, 32, fps(120)).unwrap();
        let f = compute_tgreed(&r, &r, &FilterBankConfig::default()).unwrap();
        assert_eq!(f, TgreedFeatures::zeros());
    }

    #[test]
    fn same_rate_noise_reduces_to_entropy_difference() {
        let cfg = FilterBankConfig::default();
        let r = moving_texture_video(2, 160, 160, 32, fps(60)).unwrap();
        let d = add_gaussian_noise(&r, 12.0, 3).unwrap();
        let feats = compute_tgreed(&r, &d, &cfg).unwrap();
        let fields = aligned_fields(&r, &d, 4, &cfg).unwrap();
        assert_eq!(fields.reference, fields.pseudo_reference);
        for k in 1..=7 {
            let (er, ed) = (fields.reference.band(k), fields.distorted.band(k));
            let want = er.iter().zip(ed).map(|(a, b)| (b - a).abs()).sum::<f64>() / er.len() as f64;
            assert!((feats.scale4[k - 1] - want).abs() < 1e-12);
        }
        assert!(feats.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn frame_rate_distortion_is_detected() {
        let cfg = FilterBankConfig::default();
        let r = moving_texture_video(6, 160, 160, 64, fps(120)).unwrap();
        let d = frame_rate_distortion(&r, fps(30), true).unwrap();
        let feats = compute_tgreed(&r, &d, &cfg).unwrap();
        assert!(feats.scale4[6] > 0.0 && feats.scale5[6] > 0.0, "{feats:?}");
        assert!(feats.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ratio_term_ignores_compression() {
        let cfg = FilterBankConfig::default();
        let r = moving_texture_video(7, 160, 160, 64, fps(120)).unwrap();
        let low = frame_rate_distortion(&r, fps(60), false).unwrap();
        let d1 = add_gaussian_noise(&low, 4.0, 1).unwrap();
        let d2 = add_gaussian_noise(&low, 20.0, 2).unwrap();
        let f1 = aligned_fields(&r, &d1, 4, &cfg).unwrap();
        let f2 = aligned_fields(&r, &d2, 4, &cfg).unwrap();
        assert_eq!(
            ratio_factor(&f1.reference, &f1.pseudo_reference).unwrap(),
            ratio_factor(&f2.reference, &f2.pseudo_reference).unwrap()
        );
        assert_ne!(f1.distorted, f2.distorted);
        assert_eq!(f1.distorted.shape(), f1.reference.shape());
    }

    #[test]
    fn rejects_bad_pairs() {
        let cfg = FilterBankConfig::default();
        let r = white_noise_video(1, 160, 160, 16, fps(30)).unwrap();
        let faster = white_noise_video(1, 160, 160, 16, fps(60)).unwrap();
        assert!(matches!(compute_tgreed(&r, &faster, &cfg), Err(Error::Argument(_))));
        let other = white_noise_video(1, 176, 160, 16, fps(30)).unwrap();
        assert!(matches!(compute_tgreed(&r, &other, &cfg), Err(Error::Argument(_))));
        let small = white_noise_video(1, 64, 64, 16, fps(30)).unwrap();
        assert!(matches!(compute_tgreed(&small, &small, &cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn features_json_layout() {
        let mut f = TgreedFeatures::zeros();
        f.scale5[6] = 0.125;
        let json = serde_json::to_value(f).unwrap();
        assert_eq!(json["scale5"][6], 0.125);
        assert_eq!(json["scale4"].as_array().unwrap().len(), 7);
        assert_eq!(TgreedFeatures::from_values(&f.values()).unwrap(), f);
    }
}
