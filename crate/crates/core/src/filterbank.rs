//! Temporal wavelet packet filter bank.
//!
//! Every pixel's time series goes through a critically sampled, three-level
//! biorthogonal 2.2 wavelet packet transform. Of the eight terminal nodes the
//! all-lowpass node is dropped and the remaining seven are returned in
//! frequency order.
//!
//! One analysis step maps a length-`n` series to `n / 2` coefficients:
//!
//! ```text
//! y[m] = sum_j f[j] * x[2m + 3 - j]
//! ```
//!
//! with half-sample symmetric extension (`x[-1] = x[0]`, `x[n] = x[n-1]`).
//! The lowpass output `m` is centred on input sample `2m`, the highpass
//! output on `2m + 1`. These are the PyWavelets `symmetric`-mode outputs
//! `1..=n/2`.
//!
//! Band `k` (1..=7) is the packet node whose path, read from the first level
//! down with lowpass = 0 and highpass = 1, equals the Gray code of `k`:
//!
//! | band | path |
//! |------|------|
//! | 1    | aad  |
//! | 2    | add  |
//! | 3    | ada  |
//! | 4    | dda  |
//! | 5    | ddd  |
//! | 6    | dad  |
//! | 7    | daa  |

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::PlanarVideo;

/// Biorthogonal 2.2 analysis lowpass filter.
pub const BIOR22_DEC_LO: [f64; 6] = [
    0.0,
    -0.1767766952966369,
    0.3535533905932738,
    1.0606601717798212,
    0.3535533905932738,
    -0.1767766952966369,
];

/// Biorthogonal 2.2 analysis highpass filter.
#[allow(clippy::approx_constant)]
pub const BIOR22_DEC_HI: [f64; 6] = [0.0, 0.3535533905932738, -0.7071067811865476, 0.3535533905932738, 0.0, 0.0];

/// Number of band-pass subbands produced by a three-level packet tree.
pub const N_BANDS: usize = 7;

const LEVELS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    #[default]
    #[serde(rename = "bior2.2")]
    Bior22,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterBankConfig {
    pub wavelet: Wavelet,
    pub levels: u32,
    pub boundary: Boundary,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        FilterBankConfig {
            wavelet: Wavelet::Bior22,
            levels: LEVELS,
            boundary: Boundary::Symmetric,
        }
    }
}

impl FilterBankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels != LEVELS {
            return Err(Error::Argument(format!(
                "only {LEVELS}-level packet decompositions are supported, got {}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Minimum number of frames a video must have.
    pub fn min_frames(&self) -> usize {
        1 << self.levels
    }
}

/// One temporal band-pass response `B_k`, laid out `[t][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandVolume {
    pub band: usize,
    pub width: usize,
    pub height: usize,
    pub n_times: usize,
    pub coeffs: Vec<f64>,
    /// Spatial scale exponent of the input, when known.
    pub scale: Option<u32>,
}

impl SubbandVolume {
    pub fn frame(&self, t: usize) -> &[f64] {
        let len = self.width * self.height;
        &self.coeffs[t * len..(t + 1) * len]
    }

    /// Packet path of this band, e.g. `"daa"`.
    pub fn path(&self) -> String {
        band_path(self.band)
    }
}

/// Gray-code packet path of band `k` (`a` = lowpass, `d` = highpass).
pub fn band_path(k: usize) -> String {
    let node = band_node(k);
    (0..LEVELS)
        .rev()
        .map(|bit| if node >> bit & 1 == 0 { 'a' } else { 'd' })
        .collect()
}

/// Natural-order terminal node index (first level = most significant bit).
fn band_node(k: usize) -> usize {
    k ^ (k >> 1)
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // repeat until inside; only very short series need more than one pass
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// One decimating analysis step of `x` with `filter`.
pub fn analysis_step(x: &[f64], filter: &[f64; 6]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2)
        .map(|m| {
            let mut acc = 0.0;
            for (j, &f) in filter.iter().enumerate() {
                if f != 0.0 {
                    acc += f * x[reflect(2 * m as isize + 3 - j as isize, n)];
                }
            }
            acc
        })
        .collect()
}

/// All `2^levels` terminal nodes of one series, natural order.
fn packet_leaves(series: &[f64], levels: u32) -> Vec<Vec<f64>> {
    let mut nodes = vec![series.to_vec()];
    for _ in 0..levels {
        nodes = nodes
            .iter()
            .flat_map(|x| [analysis_step(x, &BIOR22_DEC_LO), analysis_step(x, &BIOR22_DEC_HI)])
            .collect();
    }
    nodes
}

/// Band-pass packet coefficients of one time series, bands 1..=7 in order.
pub fn decompose_series(series: &[f64], cfg: &FilterBankConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if series.len() < cfg.min_frames() {
        return Err(Error::Argument(format!(
            "need at least {} samples for a {}-level decomposition, got {}",
            cfg.min_frames(),
            cfg.levels,
            series.len()
        )));
    }
    let mut leaves = packet_leaves(series, cfg.levels);
    Ok((1..=N_BANDS).map(|k| std::mem::take(&mut leaves[band_node(k)])).collect())
}

/// Temporal length of every subband for an input of `n` frames.
pub fn subband_len(n: usize, cfg: &FilterBankConfig) -> usize {
    n >> cfg.levels
}

/// Decomposes every pixel's time series into the seven band-pass volumes.
pub fn decompose(v: &PlanarVideo<f64>, cfg: &FilterBankConfig) -> Result<Vec<SubbandVolume>> {
    cfg.validate()?;
    let (w, h, n) = (v.width(), v.height(), v.n_frames());
    if n < cfg.min_frames() {
        return Err(Error::Argument(format!(
            "need at least {} frames for a {}-level decomposition, got {n}",
            cfg.min_frames(),
            cfg.levels
        )));
    }
    let plane = w * h;
    let t_len = subband_len(n, cfg);

    let per_pixel: Vec<Vec<Vec<f64>>> = (0..plane)
        .into_par_iter()
        .map(|p| {
            let series: Vec<f64> = v.frames().iter().map(|f| f[p]).collect();
            decompose_series(&series, cfg)
        })
        .collect::<Result<_>>()?;

    Ok((0..N_BANDS)
        .map(|b| {
            let mut coeffs = vec![0.0; t_len * plane];
            for (p, bands) in per_pixel.iter().enumerate() {
                for (t, &c) in bands[b].iter().enumerate() {
                    coeffs[t * plane + p] = c;
                }
            }
            SubbandVolume {
                band: b + 1,
                width: w,
                height: h,
                n_times: t_len,
                coeffs,
                scale: None,
            }
        })
        .collect())
}

#[derive(Serialize)]
struct DumpSidecar {
    dtype: &'static str,
    layout: &'static str,
    width: usize,
    height: usize,
    n_times: usize,
    scale: Option<u32>,
    bands: Vec<DumpBand>,
}

#[derive(Serialize)]
struct DumpBand {
    band: usize,
    path: String,
}

/// Writes `<stem>.bin` (little-endian f64, band-major `[band][t][y][x]`)
/// and a `<stem>.json` sidecar describing it.
pub fn dump_subbands(dir: &Path, stem: &str, bands: &[SubbandVolume]) -> Result<()> {
    let first = bands
        .first()
        .ok_or_else(|| Error::Argument("no subbands to dump".into()))?;
    if bands
        .iter()
        .any(|b| (b.width, b.height, b.n_times) != (first.width, first.height, first.n_times))
    {
        return Err(Error::Shape("subbands differ in shape".into()));
    }
    let mut bytes = Vec::with_capacity(bands.len() * first.coeffs.len() * 8);
    for b in bands {
        for c in &b.coeffs {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;

    let sidecar = DumpSidecar {
        dtype: "f64le",
        layout: "band,t,y,x",
        width: first.width,
        height: first.height,
        n_times: first.n_times,
        scale: first.scale,
        bands: bands
            .iter()
            .map(|b| DumpBand {
                band: b.band,
                path: b.path(),
            })
            .collect(),
    };
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::Fps;

    // Independent route: materialize the extended signal, run a full
    // convolution, keep the odd outputs and drop the first one.
    fn oracle_step(x: &[f64], f: &[f64; 6]) -> Vec<f64> {
        let n = x.len() as isize;
        let pad = 5isize;
        let ext: Vec<f64> = (-pad..n + pad)
            .map(|i| {
                let mut i = i;
                while i < 0 || i >= n {
                    i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
                }
                x[i as usize]
            })
            .collect();
        // full[k] = sum_j f[j] * ext[k - j]; ext[0] is x[-pad]
        let full: Vec<f64> = (0..ext.len() + f.len() - 1)
            .map(|k| {
                (0..f.len())
                    .filter(|&j| k >= j && k - j < ext.len())
                    .map(|j| f[j] * ext[k - j])
                    .sum()
            })
            .collect();
        // output m is full at x-index 2m+3, i.e. k = 2m + 3 + pad
        (0..x.len() / 2).map(|m| full[2 * m + 3 + pad as usize]).collect()
    }

    fn oracle_band(x: &[f64], path: &str) -> Vec<f64> {
        let mut cur = x.to_vec();
        for c in path.chars() {
            cur = match c {
                'a' => oracle_step(&cur, &BIOR22_DEC_LO),
                'd' => oracle_step(&cur, &BIOR22_DEC_HI),
                _ => unreachable!(),
            };
        }
        cur
    }

    fn series_video(series: &[f64]) -> PlanarVideo<f64> {
        PlanarVideo::new(1, 1, Fps::integer(120).unwrap(), series.iter().map(|&s| vec![s]).collect()).unwrap()
    }

    #[test]
    fn golden_filter_taps() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(BIOR22_DEC_HI[2], -s);
        assert_eq!(BIOR22_DEC_HI[1] * 2.0, s);
        assert_eq!(BIOR22_DEC_HI[1], BIOR22_DEC_HI[3]);
        assert!((BIOR22_DEC_LO.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!(BIOR22_DEC_HI.iter().sum::<f64>().abs() < 1e-15);
        assert!((BIOR22_DEC_LO[3] - 3.0 * s / 2.0).abs() < 1e-15);
        assert!((BIOR22_DEC_LO[1] + s / 4.0).abs() < 1e-15);
    }

    #[test]
    fn first_level_matches_pywavelets() {
        // pywt.dwt(impulse at 8, 'bior2.2', mode='symmetric'), outputs 1..=16
        let mut x = vec![0.0; 32];
        x[8] = 1.0;
        let a = analysis_step(&x, &BIOR22_DEC_LO);
        let d = analysis_step(&x, &BIOR22_DEC_HI);
        let mut a_ref = vec![0.0; 16];
        a_ref[3] = -0.1767766952966369;
        a_ref[4] = 1.0606601717798212;
        a_ref[5] = -0.1767766952966369;
        let mut d_ref = vec![0.0; 16];
        d_ref[3] = 0.3535533905932738;
        d_ref[4] = 0.3535533905932738;
        assert_eq!(a, a_ref);
        assert_eq!(d, d_ref);
    }

    #[test]
    fn band_paths_are_frequency_ordered() {
        let paths: Vec<String> = (1..=7).map(band_path).collect();
        assert_eq!(paths, ["aad", "add", "ada", "dda", "ddd", "dad", "daa"]);
    }

    #[test]
    fn impulse_matches_cascade_oracle() {
        let mut x = vec![0.0; 32];
        x[8] = 1.0;
        let bands = decompose(&series_video(&x), &FilterBankConfig::default()).unwrap();
        for b in &bands {
            let want = oracle_band(&x, &b.path());
            assert_eq!(b.coeffs.len(), 4);
            for (got, want) in b.coeffs.iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "band {}", b.band);
            }
        }
    }

    #[test]
    fn nyquist_energy_lands_in_top_band() {
        let x: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let bands = decompose(&series_video(&x), &FilterBankConfig::default()).unwrap();
        let energy: Vec<f64> = bands.iter().map(|b| b.coeffs.iter().map(|c| c * c).sum()).collect();
        let (top, _) = energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_eq!(top, 6, "energies {energy:?}");
        // interior of the lowpass-heavy band 1 is silent
        assert!(bands[0].coeffs[2..6].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn constant_video_has_zero_bandpass() {
        let v = PlanarVideo::new(3, 2, Fps::integer(60).unwrap(), vec![vec![117.0; 6]; 40]).unwrap();
        for b in decompose(&v, &FilterBankConfig::default()).unwrap() {
            assert!(b.coeffs.iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn shift_by_eight_frames_shifts_one_sample() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64).sin() * 10.0).collect();
        let mut shifted = vec![0.0; 8];
        shifted.extend_from_slice(&x[..56]);
        let cfg = FilterBankConfig::default();
        let a = decompose_series(&x, &cfg).unwrap();
        let b = decompose_series(&shifted, &cfg).unwrap();
        for (ba, bb) in a.iter().zip(&b) {
            for t in 2..5 {
                assert!((bb[t + 1] - ba[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pixels_are_independent_and_lengths_match() {
        let frames: Vec<Vec<f64>> = (0..24).map(|t| vec![t as f64, (t * t) as f64 % 7.0]).collect();
        let v = PlanarVideo::new(2, 1, Fps::integer(30).unwrap(), frames.clone()).unwrap();
        let bands = decompose(&v, &FilterBankConfig::default()).unwrap();
        let second: Vec<f64> = frames.iter().map(|f| f[1]).collect();
        let alone = decompose_series(&second, &FilterBankConfig::default()).unwrap();
        for (b, s) in bands.iter().zip(&alone) {
            assert_eq!(b.n_times, 3);
            let col: Vec<f64> = (0..b.n_times).map(|t| b.frame(t)[1]).collect();
            assert_eq!(&col, s);
        }
    }

    #[test]
    fn rejects_short_input_and_bad_levels() {
        let v = series_video(&[1.0; 7]);
        assert!(matches!(decompose(&v, &FilterBankConfig::default()), Err(Error::Argument(_))));
        let cfg = FilterBankConfig {
            levels: 2,
            ..Default::default()
        };
        assert!(decompose(&series_video(&[1.0; 16]), &cfg).is_err());
    }

    #[test]
    fn dump_writes_binary_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let bands = decompose(&series_video(&x), &FilterBankConfig::default()).unwrap();
        dump_subbands(dir.path(), "clip", &bands).unwrap();
        let bin = std::fs::read(dir.path().join("clip.bin")).unwrap();
        assert_eq!(bin.len(), 7 * 2 * 8);
        assert_eq!(f64::from_le_bytes(bin[..8].try_into().unwrap()), bands[0].coeffs[0]);
        let meta: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("clip.json")).unwrap()).unwrap();
        assert_eq!(meta["bands"][6]["path"], "daa");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linearity(
                x in proptest::collection::vec(-100.0f64..100.0, 24),
                y in proptest::collection::vec(-100.0f64..100.0, 24),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
            ) {
                let cfg = FilterBankConfig::default();
                let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
                let dx = decompose_series(&x, &cfg).unwrap();
                let dy = decompose_series(&y, &cfg).unwrap();
                let dm = decompose_series(&mix, &cfg).unwrap();
                for k in 0..N_BANDS {
                    for t in 0..dm[k].len() {
                        prop_assert!((dm[k][t] - (a * dx[k][t] + b * dy[k][t])).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
