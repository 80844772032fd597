//! Spatial quality index: SSIM, MS-SSIM, or an imported external score.
//!
//! Frame metrics use the usual 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
//! `K2 = 0.03`, `L = 255`, evaluated at "valid" window positions and mean
//! pooled. Videos are compared after duplicating the distorted frames up to
//! the reference rate; the index is the mean of the per-frame scores.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{frame_duplicate_upsample, PlanarVideo, Sample};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const PEAK: f64 = 255.0;
/// Per-scale exponents of 5-scale MS-SSIM, finest first.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side MS-SSIM accepts: the coarsest scale still fits a window.
pub const MSSSIM_MIN_SIDE: usize = WINDOW << 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialModel {
    Ssim,
    Msssim,
    /// Score supplied by an outside tool, e.g. ST-RRED or VMAF.
    External(String),
}

impl SpatialModel {
    pub fn name(&self) -> &str {
        match self {
            SpatialModel::Ssim => "ssim",
            SpatialModel::Msssim => "msssim",
            SpatialModel::External(name) => name,
        }
    }
}

impl std::str::FromStr for SpatialModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssim" => Ok(SpatialModel::Ssim),
            "msssim" | "ms-ssim" => Ok(SpatialModel::Msssim),
            "" => Err(Error::Argument("empty spatial model name".into())),
            other => Ok(SpatialModel::External(other.strip_prefix("external:").unwrap_or(other).to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialIndex {
    pub model_name: String,
    pub value: f64,
}

/// A luma plane borrowed as f64 samples.
#[derive(Debug, Clone, Copy)]
pub struct Plane<'a> {
    pub data: &'a [f64],
    pub width: usize,
    pub height: usize,
}

impl<'a> Plane<'a> {
    pub fn new(data: &'a [f64], width: usize, height: usize) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Plane { data, width, height })
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable "valid" filtering of `src`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - WINDOW, h + 1 - WINDOW);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term over the valid map.
fn ssim_and_cs(a: Plane, b: Plane) -> Result<(f64, f64)> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Dimension(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (w, h) = (a.width, a.height);
    if w < WINDOW || h < WINDOW {
        return Err(Error::Dimension(format!("{w}x{h} frame is smaller than the {WINDOW}x{WINDOW} window")));
    }
    let taps = gaussian_taps();
    let xx: Vec<f64> = a.data.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = b.data.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = a.data.iter().zip(b.data).map(|(u, v)| u * v).collect();
    let mu_x = filter_valid(a.data, w, h, &taps);
    let mu_y = filter_valid(b.data, w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);

    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let cs = (2.0 * sxy + c2) / (sxx + syy + c2);
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    let n = mu_x.len() as f64;
    Ok((ssim_sum / n, cs_sum / n))
}

/// Single-scale SSIM of two luma planes.
pub fn ssim_frame(reference: Plane, distorted: Plane) -> Result<f64> {
    ssim_and_cs(reference, distorted).map(|(s, _)| s)
}

/// 2×2 average pooling; odd trailing rows/columns are dropped.
pub fn halve(src: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out.push((src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) / 4.0);
        }
    }
    (out, ow, oh)
}

/// Per-scale `(ssim, cs)` values MS-SSIM is built from, finest first.
pub fn msssim_scales(reference: Plane, distorted: Plane) -> Result<Vec<(f64, f64)>> {
    let (w, h) = (reference.width, reference.height);
    if (w, h) != (distorted.width, distorted.height) {
        return Err(Error::Dimension(format!(
            "frame sizes differ: {w}x{h} vs {}x{}",
            distorted.width, distorted.height
        )));
    }
    if w < MSSSIM_MIN_SIDE || h < MSSSIM_MIN_SIDE {
        return Err(Error::Dimension(format!(
            "MS-SSIM needs at least {MSSSIM_MIN_SIDE}x{MSSSIM_MIN_SIDE}, got {w}x{h}"
        )));
    }
    let mut a = reference.data.to_vec();
    let mut b = distorted.data.to_vec();
    let (mut cw, mut ch) = (w, h);
    let mut out = Vec::with_capacity(MSSSIM_WEIGHTS.len());
    for scale in 0..MSSSIM_WEIGHTS.len() {
        out.push(ssim_and_cs(Plane::new(&a, cw, ch)?, Plane::new(&b, cw, ch)?)?);
        if scale + 1 < MSSSIM_WEIGHTS.len() {
            let (na, nw, nh) = halve(&a, cw, ch);
            let (nb, _, _) = halve(&b, cw, ch);
            (a, b, cw, ch) = (na, nb, nw, nh);
        }
    }
    Ok(out)
}

/// Combines per-scale values: contrast-structure at the four finer scales,
/// full SSIM at the coarsest. Negative terms are clamped to zero.
pub fn combine_msssim(scales: &[(f64, f64)]) -> f64 {
    let last = scales.len() - 1;
    scales
        .iter()
        .zip(MSSSIM_WEIGHTS)
        .enumerate()
        .map(|(i, (&(ssim, cs), w))| {
            let term = if i == last { ssim } else { cs };
            term.max(0.0).powf(w)
        })
        .product()
}

/// Five-scale MS-SSIM of two luma planes.
pub fn msssim_frame(reference: Plane, distorted: Plane) -> Result<f64> {
    Ok(combine_msssim(&msssim_scales(reference, distorted)?))
}

/// Per-frame scores after aligning `d` to the reference frame rate.
pub fn per_frame_scores<T: Sample, U: Sample>(
    r: &PlanarVideo<T>,
    d: &PlanarVideo<U>,
    model: &SpatialModel,
) -> Result<Vec<f64>> {
    if (r.width(), r.height()) != (d.width(), d.height()) {
        return Err(Error::Dimension(format!(
            "reference is {}x{} but distorted is {}x{}",
            r.width(),
            r.height(),
            d.width(),
            d.height()
        )));
    }
    let frame_fn: fn(Plane, Plane) -> Result<f64> = match model {
        SpatialModel::Ssim => ssim_frame,
        SpatialModel::Msssim => msssim_frame,
        SpatialModel::External(name) => {
            return Err(Error::Argument(format!(
                "{name} is an external model; import its scores instead"
            )))
        }
    };
    let d = frame_duplicate_upsample(d, r.fps())?;
    let n = r.n_frames().min(d.n_frames());
    let (w, h) = (r.width(), r.height());
    (0..n)
        .into_par_iter()
        .map(|t| {
            let a: Vec<f64> = r.frame(t).iter().map(|s| s.to_f64()).collect();
            let b: Vec<f64> = d.frame(t).iter().map(|s| s.to_f64()).collect();
            frame_fn(Plane::new(&a, w, h)?, Plane::new(&b, w, h)?)
        })
        .collect()
}

/// Temporal mean of per-frame SSIM or MS-SSIM.
pub fn spatial_index<T: Sample, U: Sample>(
    r: &PlanarVideo<T>,
    d: &PlanarVideo<U>,
    model: &SpatialModel,
) -> Result<SpatialIndex> {
    let scores = per_frame_scores(r, d, model)?;
    Ok(SpatialIndex {
        model_name: model.name().to_string(),
        value: scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

pub fn import_external_score(model_name: &str, value: f64) -> Result<SpatialIndex> {
    if !value.is_finite() {
        return Err(Error::Argument(format!("{model_name} score {value} is not finite")));
    }
    if model_name.is_empty() {
        return Err(Error::Argument("external score without a model name".into()));
    }
    Ok(SpatialIndex {
        model_name: model_name.to_string(),
        value,
    })
}

/// One row of an external-score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub ref_id: String,
    pub dist_id: String,
    pub model_name: String,
    pub score: f64,
}

impl ExternalScore {
    pub fn to_index(&self) -> Result<SpatialIndex> {
        import_external_score(&self.model_name, self.score)
    }
}

/// Reads `ref_id,dist_id,model_name,score` rows.
pub fn read_external_scores(path: &Path) -> Result<Vec<ExternalScore>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_external_scores(file)
}

pub fn parse_external_scores<R: std::io::Read>(reader: R) -> Result<Vec<ExternalScore>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<ExternalScore>() {
        let row = rec.map_err(crate::manifest::csv_error)?;
        row.to_index()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_external_scores<W: std::io::Write>(writer: W, rows: &[ExternalScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(crate::manifest::csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
