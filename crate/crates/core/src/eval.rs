//! Evaluation protocol: rank and linear correlation metrics, content-disjoint
//! splits and repeated train/validate/test trials with median reporting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{self, default_grid, Dataset, Hyperparams};
use crate::manifest::DatasetManifest;
use crate::video::Fps;

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Data(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::Data(format!("need at least {min} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value".into()));
    }
    Ok(())
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Data("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    pearson_unchecked(x, y)
}

/// 1-based ranks with ties sharing their average rank.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 3)?;
    pearson_unchecked(&mid_ranks(x), &mid_ranks(y))
}

/// Number of tied pairs among runs of equal values in a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl IntoIterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Merge sort counting inversions (strict descents).
fn count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], &mut buf[..mid]) + count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b in O(n log n).
pub fn krocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 3)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tied_pairs(idx.iter().map(|&i| x[i].to_bits()));
    let n3 = tied_pairs(idx.iter().map(|&i| (x[i].to_bits(), y[i].to_bits())));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = count_swaps(&mut ys, &mut buf);
    let n2 = tied_pairs(ys.iter().map(|v| v.to_bits()));
    if n1 == n0 || n2 == n0 {
        return Err(Error::Data("zero variance ranks".into()));
    }
    // concordant - discordant
    let s = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let denom = (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();
    Ok((s as f64 / denom).clamp(-1.0, 1.0))
}

/// `b2 + (b1 − b2) / (1 + exp(−(x − b3)/|b4|))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic4 {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

impl Logistic4 {
    pub fn eval(&self, x: f64) -> f64 {
        self.b2 + (self.b1 - self.b2) / (1.0 + (-(x - self.b3) / self.b4.abs()).exp())
    }

    fn params(&self) -> [f64; 4] {
        [self.b1, self.b2, self.b3, self.b4]
    }

    fn from_params(p: [f64; 4]) -> Self {
        Logistic4 {
            b1: p[0],
            b2: p[1],
            b3: p[2],
            b4: p[3],
        }
    }

    /// Partial derivatives with respect to (b1, b2, b3, b4).
    fn gradient(&self, x: f64) -> [f64; 4] {
        let s = self.b4.abs();
        let e = (-(x - self.b3) / s).exp();
        let g = 1.0 / (1.0 + e);
        let amp = self.b1 - self.b2;
        // dg/du with u = (x - b3)/s is g(1-g)
        let dg = g * (1.0 - g);
        let sign = if self.b4 < 0.0 { -1.0 } else { 1.0 };
        [g, 1.0 - g, -amp * dg / s, -amp * dg * (x - self.b3) / (s * s) * sign]
    }
}

pub const LM_MAX_ITER: usize = 1000;

fn sse(f: &Logistic4, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (f.eval(*a) - b).powi(2)).sum()
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut out = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * out[c]).sum();
        out[r] = (b[r] - s) / a[r][r];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Levenberg–Marquardt least squares fit of a 4-parameter logistic.
///
/// Initialization is fixed from the data range: asymptotes at the extremes
/// of `y`, midpoint at the mean of `x`, slope from the spread of `x`.
/// Returns `Fit` if the parameters stop being finite or never improve.
pub fn fit_logistic(x: &[f64], y: &[f64]) -> Result<Logistic4> {
    check_pair(x, y, 5)?;
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = mean(x);
    let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    if !(sx > 0.0) {
        return Err(Error::Fit("constant predictor".into()));
    }
    // orient the curve to follow the sign of the linear trend
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * b).sum();
    let (b1, b2) = if cov >= 0.0 { (ymax, ymin) } else { (ymin, ymax) };
    let mut f = Logistic4 { b1, b2, b3: mx, b4: sx };
    let mut cost = sse(&f, x, y);
    let initial = cost;
    let mut lambda = 1e-3;
    for _ in 0..LM_MAX_ITER {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (a, b) in x.iter().zip(y) {
            let g = f.gradient(*a);
            let r = b - f.eval(*a);
            for i in 0..4 {
                jtr[i] += g[i] * r;
                for j in 0..4 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * (jtj[i][i].max(1e-12));
            }
            if let Some(step) = solve4(a, jtr) {
                let p = f.params();
                let cand = Logistic4::from_params([p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]]);
                let c = sse(&cand, x, y);
                if c.is_finite() && c < cost {
                    let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    f = cand;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-12 {
                        return finish(f, cost, initial);
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
        if cost == 0.0 {
            break;
        }
    }
    finish(f, cost, initial)
}

fn finish(f: Logistic4, cost: f64, initial: f64) -> Result<Logistic4> {
    if f.params().iter().all(|v| v.is_finite()) && cost.is_finite() && cost <= initial && f.b4 != 0.0 {
        Ok(f)
    } else {
        Err(Error::Fit("logistic fit diverged".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearScores {
    pub plcc: f64,
    pub rmse: f64,
    /// Logistic mapping was requested but raw values were used.
    pub logistic_fallback: bool,
}

/// PLCC and RMSE, after a fitted logistic mapping when `fit_logistic` is set.
pub fn plcc_rmse(pred: &[f64], mos: &[f64], fit_logistic: bool) -> Result<LinearScores> {
    if fit_logistic {
        check_pair(pred, mos, 5)?;
        if let Ok(f) = self::fit_logistic(pred, mos) {
            let mapped: Vec<f64> = pred.iter().map(|&p| f.eval(p)).collect();
            if let Ok(plcc) = pearson_unchecked(&mapped, mos) {
                return Ok(LinearScores {
                    plcc,
                    rmse: rmse(&mapped, mos),
                    logistic_fallback: false,
                });
            }
        }
        Ok(LinearScores {
            plcc: pearson_unchecked(pred, mos)?,
            rmse: rmse(pred, mos),
            logistic_fallback: true,
        })
    } else {
        check_pair(pred, mos, 2)?;
        Ok(LinearScores {
            plcc: pearson_unchecked(pred, mos)?,
            rmse: rmse(pred, mos),
            logistic_fallback: false,
        })
    }
}

/// Row indices of each subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.15, 0.15];

/// Content counts per subset by largest remainder; ties go to the earlier subset.
pub fn subset_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let exact = fractions.map(|f| f * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && sizes[i] == 0 {
            return Err(Error::Data(format!("{n} contents are too few for split fractions {fractions:?}")));
        }
    }
    Ok(sizes)
}

pub fn split_with_rng<R: Rng>(manifest: &DatasetManifest, fractions: [f64; 3], rng: &mut R) -> Result<Split> {
    let mut contents: Vec<&str> = manifest.contents();
    let sizes = subset_sizes(contents.len(), fractions)?;
    contents.shuffle(rng);
    let mut subset = BTreeMap::new();
    for (i, c) in contents.iter().enumerate() {
        let s = if i < sizes[0] {
            0
        } else if i < sizes[0] + sizes[1] {
            1
        } else {
            2
        };
        subset.insert(*c, s);
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, row) in manifest.rows.iter().enumerate() {
        match subset[row.content_id.as_str()] {
            0 => split.train.push(i),
            1 => split.val.push(i),
            _ => split.test.push(i),
        }
    }
    Ok(split)
}

/// Content-disjoint split; contents are shuffled, then cut by count.
pub fn split_by_content(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<Split> {
    split_with_rng(manifest, fractions, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random stream for one trial, independent of scheduling.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_trials: usize,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub grid: Vec<Hyperparams>,
    pub logistic: bool,
    /// Used when the validation subset is empty.
    pub fallback: Hyperparams,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_trials: 200,
            seed: 0,
            fractions: DEFAULT_FRACTIONS,
            grid: default_grid(),
            logistic: true,
            fallback: Hyperparams::default(),
        }
    }
}

/// Metric values; correlations that are undefined on a subset are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub srocc: Option<f64>,
    pub krocc: Option<f64>,
    pub plcc: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsMetrics {
    pub dist_fps: Fps,
    pub n: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub hyperparams: Hyperparams,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub srocc: f64,
    pub krocc: f64,
    pub plcc: f64,
    pub rmse: f64,
    pub logistic_fallback: bool,
    /// A correlation was undefined and recorded as 0.
    pub degenerate: bool,
    pub per_fps: Vec<FpsMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTrialArrays {
    pub srocc: Vec<f64>,
    pub krocc: Vec<f64>,
    pub plcc: Vec<f64>,
    pub rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_trials: usize,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub logistic: bool,
    pub per_trial: PerTrialArrays,
    pub median: Metrics,
    /// Median per distorted frame rate over the trials where it is defined.
    pub per_fps_median: Vec<FpsMetrics>,
    pub trials: Vec<TrialResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Median with the two middle values averaged; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn subset_metrics(pred: &[f64], mos: &[f64], logistic: bool) -> (Metrics, bool) {
    let plcc = plcc_rmse(pred, mos, logistic && pred.len() >= 5);
    let fallback = logistic && plcc.as_ref().map(|s| s.logistic_fallback).unwrap_or(true);
    let m = Metrics {
        srocc: srocc(pred, mos).ok(),
        krocc: krocc(pred, mos).ok(),
        plcc: plcc.as_ref().ok().map(|s| s.plcc),
        rmse: if pred.is_empty() {
            None
        } else {
            Some(plcc.as_ref().map(|s| s.rmse).unwrap_or_else(|_| rmse(pred, mos)))
        },
    };
    (m, fallback)
}

fn dataset(manifest: &DatasetManifest, features: &[Vec<f64>], rows: &[usize]) -> Dataset {
    Dataset {
        content_ids: rows.iter().map(|&i| manifest.rows[i].content_id.clone()).collect(),
        features: rows.iter().map(|&i| features[i].clone()).collect(),
        mos: rows.iter().map(|&i| manifest.rows[i].mos).collect(),
    }
}

fn run_trial(manifest: &DatasetManifest, features: &[Vec<f64>], opts: &EvalOptions, trial: usize) -> Result<TrialResult> {
    let split = split_with_rng(manifest, opts.fractions, &mut trial_rng(opts.seed, trial))?;
    let train = dataset(manifest, features, &split.train);
    let val = dataset(manifest, features, &split.val);
    let hp = if val.is_empty() {
        opts.fallback
    } else {
        fusion::grid_search(&train, &val, &opts.grid)?.best
    };
    let model = fusion::fit(&train.features, &train.mos, &hp)?;
    let pred: Vec<f64> = split
        .test
        .iter()
        .map(|&i| fusion::predict(&model, &features[i]))
        .collect::<Result<_>>()?;
    let mos: Vec<f64> = split.test.iter().map(|&i| manifest.rows[i].mos).collect();
    let (m, logistic_fallback) = subset_metrics(&pred, &mos, opts.logistic);

    let mut by_fps: BTreeMap<Fps, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (k, &i) in split.test.iter().enumerate() {
        let e = by_fps.entry(manifest.rows[i].dist_fps).or_default();
        e.0.push(pred[k]);
        e.1.push(mos[k]);
    }
    let per_fps = by_fps
        .into_iter()
        .map(|(dist_fps, (p, y))| FpsMetrics {
            dist_fps,
            n: p.len(),
            metrics: subset_metrics(&p, &y, opts.logistic).0,
        })
        .collect();

    let degenerate = m.srocc.is_none() || m.krocc.is_none() || m.plcc.is_none();
    Ok(TrialResult {
        trial,
        hyperparams: hp,
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        srocc: m.srocc.unwrap_or(0.0),
        krocc: m.krocc.unwrap_or(0.0),
        plcc: m.plcc.unwrap_or(0.0),
        rmse: m.rmse.unwrap_or(0.0),
        logistic_fallback,
        degenerate,
        per_fps,
    })
}

/// Repeated content-disjoint trials: split, select hyperparameters on the
/// validation subset, fit on the training subset, score the test subset.
pub fn run_trials(manifest: &DatasetManifest, features: &[Vec<f64>], opts: &EvalOptions) -> Result<EvalReport> {
    if features.len() != manifest.len() {
        return Err(Error::Data(format!(
            "{} feature vectors for {} manifest rows",
            features.len(),
            manifest.len()
        )));
    }
    if opts.n_trials == 0 {
        return Err(Error::Argument("number of trials must be positive".into()));
    }
    if opts.grid.is_empty() {
        return Err(Error::Argument("empty hyperparameter grid".into()));
    }
    let trials: Vec<TrialResult> = (0..opts.n_trials)
        .into_par_iter()
        .map(|t| run_trial(manifest, features, opts, t))
        .collect::<Result<_>>()?;

    let col = |f: fn(&TrialResult) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
    let per_trial = PerTrialArrays {
        srocc: col(|t| t.srocc),
        krocc: col(|t| t.krocc),
        plcc: col(|t| t.plcc),
        rmse: col(|t| t.rmse),
    };
    let median_metrics = Metrics {
        srocc: median(&per_trial.srocc),
        krocc: median(&per_trial.krocc),
        plcc: median(&per_trial.plcc),
        rmse: median(&per_trial.rmse),
    };

    let mut fps_values: BTreeMap<Fps, [Vec<f64>; 4]> = BTreeMap::new();
    let mut fps_counts: BTreeMap<Fps, usize> = BTreeMap::new();
    for t in &trials {
        for f in &t.per_fps {
            *fps_counts.entry(f.dist_fps).or_default() += f.n;
            let e = fps_values.entry(f.dist_fps).or_default();
            let m = &f.metrics;
            for (k, v) in [m.srocc, m.krocc, m.plcc, m.rmse].into_iter().enumerate() {
                if let Some(v) = v {
                    e[k].push(v);
                }
            }
        }
    }
    let per_fps_median = fps_values
        .into_iter()
        .map(|(dist_fps, v)| FpsMetrics {
            dist_fps,
            n: fps_counts[&dist_fps],
            metrics: Metrics {
                srocc: median(&v[0]),
                krocc: median(&v[1]),
                plcc: median(&v[2]),
                rmse: median(&v[3]),
            },
        })
        .collect();

    Ok(EvalReport {
        n_trials: opts.n_trials,
        seed: opts.seed,
        fractions: opts.fractions,
        logistic: opts.logistic,
        per_trial,
        median: median_metrics,
        per_fps_median,
        trials,
    })
}
