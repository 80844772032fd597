//! Feature fusion and ε-support-vector regression.
//!
//! Features are z-scored with training statistics, then an ε-SVR is solved
//! in its dual with a deterministic SMO solver (maximal-violating-pair
//! selection with second-order working-set choice). The fitted model keeps
//! its normalization so prediction works on raw feature vectors.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::rmse;
use crate::spatial::SpatialIndex;
use crate::tgreed::TgreedFeatures;

pub const GST_LEN: usize = 15;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// `[S, scale-4 bands 1..=7, scale-5 bands 1..=7]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GstFeatureVector(pub [f64; GST_LEN]);

impl GstFeatureVector {
    pub fn assemble(spatial: &SpatialIndex, temporal: &TgreedFeatures) -> Result<Self> {
        let mut v = [0.0; GST_LEN];
        v[0] = spatial.value;
        v[1..].copy_from_slice(&temporal.values());
        GstFeatureVector::from_slice(&v)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != GST_LEN {
            return Err(Error::Argument(format!("expected {GST_LEN} features, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("feature {i} is not finite ({})", values[i])));
        }
        let mut v = [0.0; GST_LEN];
        v.copy_from_slice(values);
        Ok(GstFeatureVector(v))
    }

    pub fn spatial(&self) -> f64 {
        self.0[0]
    }

    pub fn temporal(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for GstFeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
    /// KKT violation at which SMO stops.
    pub tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            kernel: Kernel::Rbf { gamma: 1.0 / GST_LEN as f64 },
            c: 10.0,
            epsilon: 0.1,
            tol: 1e-3,
        }
    }
}

impl Hyperparams {
    fn validate(&self) -> Result<()> {
        let ok = self.c > 0.0
            && self.c.is_finite()
            && self.epsilon >= 0.0
            && self.epsilon.is_finite()
            && self.tol > 0.0
            && match self.kernel {
                Kernel::Linear => true,
                Kernel::Rbf { gamma } => gamma > 0.0 && gamma.is_finite(),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid hyperparameters {self:?}")))
        }
    }
}

/// Linear × C × ε, then RBF × C × γ × ε.
pub fn default_grid() -> Vec<Hyperparams> {
    let cs = [0.1, 1.0, 10.0, 100.0];
    let gammas = [1.0 / GST_LEN as f64, 0.1, 1.0];
    let epsilons = [0.1, 1.0];
    let mut grid = Vec::new();
    for &c in &cs {
        for &epsilon in &epsilons {
            grid.push(Hyperparams {
                kernel: Kernel::Linear,
                c,
                epsilon,
                tol: 1e-3,
            });
        }
    }
    for &c in &cs {
        for &gamma in &gammas {
            for &epsilon in &epsilons {
                grid.push(Hyperparams {
                    kernel: Kernel::Rbf { gamma },
                    c,
                    epsilon,
                    tol: 1e-3,
                });
            }
        }
    }
    grid
}

/// Per-feature z-scoring fitted on training data (population std).
///
/// Features whose spread is numerically zero are dropped; their indices are
/// kept in `dropped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub dropped: Vec<usize>,
}

impl Normalizer {
    pub fn fit<F: AsRef<[f64]>>(rows: &[F]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Data("no training rows".into()))?;
        let dim = first.as_ref().len();
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::Data("feature rows differ in length".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        let mut dropped = Vec::new();
        for d in 0..dim {
            let m = rows.iter().map(|r| r.as_ref()[d]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.as_ref()[d] - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            mean[d] = m;
            if s <= 1e-12 * (1.0 + m.abs()) {
                dropped.push(d);
                std[d] = 0.0;
            } else {
                std[d] = s;
            }
        }
        Ok(Normalizer { mean, std, dropped })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalized vector over the retained features.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .filter(|(d, _)| self.std[*d] > 0.0)
            .map(|(d, v)| (v - self.mean[d]) / self.std[d])
            .collect()
    }
}

/// A trained regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub version: u32,
    pub hyperparams: Hyperparams,
    pub norm: Normalizer,
    /// Normalized support vectors.
    pub support: Vec<Vec<f64>>,
    /// `α - α*` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl SvrModel {
    pub fn n_features(&self) -> usize {
        self.norm.dim()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: SvrModel = serde_json::from_str(s)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.version
            )));
        }
        if model.support.len() != model.coef.len() {
            return Err(Error::Format("support vectors and coefficients differ in count".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SvrModel::from_json(&s)
    }

    /// Decision value for an already normalized vector.
    fn decision(&self, z: &[f64]) -> f64 {
        let k = self.hyperparams.kernel;
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * k.eval(sv, z))
            .sum::<f64>()
            + self.bias
    }
}

/// Predicted quality for a raw feature vector.
pub fn predict(model: &SvrModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.n_features() {
        return Err(Error::Argument(format!(
            "model expects {} features, got {}",
            model.n_features(),
            features.len()
        )));
    }
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("feature {i} is not finite")));
    }
    Ok(model.decision(&model.norm.transform(features)))
}

/// Dual variables of a solved problem, before support-vector pruning.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// `α` for the first `n` entries, `α*` for the next `n`.
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

const TAU: f64 = 1e-12;

/// Solves the ε-SVR dual
///
/// ```text
/// min ½ βᵀQβ + pᵀβ   s.t.  Σ yₜβₜ = 0,  0 ≤ βₜ ≤ C
/// ```
///
/// over `β = [α; α*]` with `y = [+1…; −1…]`, `p = [ε − z; ε + z]` and
/// `Q_st = y_s y_t K(x_s, x_t)`.
pub fn solve_dual(gram: &[Vec<f64>], targets: &[f64], hp: &Hyperparams) -> Result<DualSolution> {
    let n = targets.len();
    let l = 2 * n;
    let c = hp.c;
    let y = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |s: usize, t: usize| y(s) * y(t) * gram[s % n][t % n];

    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| if t < n { hp.epsilon - targets[t] } else { hp.epsilon + targets[t - n] })
        .collect();
    let is_up = |a: f64, yt: f64| if yt > 0.0 { a < c } else { a > 0.0 };
    let is_low = |a: f64, yt: f64| if yt > 0.0 { a > 0.0 } else { a < c };

    let max_iter = (100 * l).max(1_000_000);
    let mut iter = 0;
    loop {
        // i: maximal violator in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            if is_up(alpha[t], y(t)) {
                let v = -y(t) * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        // j: second-order choice in I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        if i != usize::MAX {
            let qii = q(i, i);
            for t in 0..l {
                if is_low(alpha[t], y(t)) {
                    let yg = y(t) * grad[t];
                    if yg > gmax2 {
                        gmax2 = yg;
                    }
                    let b = gmax + yg;
                    if b > 0.0 {
                        let mut a = qii + q(t, t) - 2.0 * y(i) * y(t) * q(i, t);
                        if a <= 0.0 {
                            a = TAU;
                        }
                        let obj = -(b * b) / a;
                        if obj < best {
                            best = obj;
                            j = t;
                        }
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax + gmax2 < hp.tol {
            break;
        }
        iter += 1;
        if iter > max_iter {
            return Err(Error::Fit(format!("SMO did not converge in {max_iter} iterations")));
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (qii, qjj, qij) = (q(i, i), q(j, j), q(i, j));
        if y(i) != y(j) {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // offset from free variables, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let yg = y(t) * grad[t];
        if alpha[t] >= c {
            if y(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 { free_sum / n_free as f64 } else { (ub + lb) / 2.0 };
    Ok(DualSolution {
        alpha,
        bias: -rho,
        iterations: iter,
    })
}

fn check_training<F: AsRef<[f64]>>(features: &[F], mos: &[f64]) -> Result<()> {
    if features.len() != mos.len() {
        return Err(Error::Data(format!(
            "{} feature vectors but {} scores",
            features.len(),
            mos.len()
        )));
    }
    if features.len() < 2 {
        return Err(Error::Data("need at least two training samples".into()));
    }
    if let Some(i) = mos.iter().position(|m| !m.is_finite()) {
        return Err(Error::Data(format!("score {i} is not finite")));
    }
    if features.iter().any(|f| f.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("non-finite training feature".into()));
    }
    Ok(())
}

/// Fits normalization and an ε-SVR.
pub fn fit<F: AsRef<[f64]>>(features: &[F], mos: &[f64], hp: &Hyperparams) -> Result<SvrModel> {
    check_training(features, mos)?;
    hp.validate()?;
    let norm = Normalizer::fit(features)?;
    let z: Vec<Vec<f64>> = features.iter().map(|f| norm.transform(f.as_ref())).collect();
    let gram: Vec<Vec<f64>> = z.iter().map(|a| z.iter().map(|b| hp.kernel.eval(a, b)).collect()).collect();
    let sol = solve_dual(&gram, mos, hp)?;
    let n = mos.len();
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        let c = sol.alpha[i] - sol.alpha[i + n];
        if c != 0.0 {
            support.push(z[i].clone());
            coef.push(c);
        }
    }
    Ok(SvrModel {
        version: MODEL_FORMAT_VERSION,
        hyperparams: *hp,
        norm,
        support,
        coef,
        bias: sol.bias,
    })
}

/// Feature rows with their labels and source-content identifiers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub content_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub mos: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.mos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mos.is_empty()
    }
}

/// Outcome of a hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Hyperparams,
    pub best_index: usize,
    /// Validation RMSE per grid point; `None` where fitting failed.
    pub val_rmse: Vec<Option<f64>>,
}

/// Picks the grid point with the lowest validation RMSE; ties go to the
/// earlier grid entry.
pub fn grid_search(train: &Dataset, val: &Dataset, grid: &[Hyperparams]) -> Result<GridResult> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("grid search needs non-empty train and validation sets".into()));
    }
    if grid.is_empty() {
        return Err(Error::Argument("empty hyperparameter grid".into()));
    }
    if let Some(c) = val.content_ids.iter().find(|c| train.content_ids.contains(c)) {
        return Err(Error::Data(format!("content {c} appears in both train and validation sets")));
    }
    let val_rmse: Vec<Option<f64>> = grid
        .par_iter()
        .map(|hp| {
            let model = fit(&train.features, &train.mos, hp).ok()?;
            let pred: Option<Vec<f64>> = val.features.iter().map(|f| predict(&model, f).ok()).collect();
            let e = rmse(&pred?, &val.mos);
            e.is_finite().then_some(e)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in val_rmse.iter().enumerate() {
        if let Some(e) = *e {
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((i, e));
            }
        }
    }
    let (best_index, _) = best.ok_or_else(|| Error::Fit("no grid point could be fitted".into()))?;
    Ok(GridResult {
        best: grid[best_index],
        best_index,
        val_rmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let mut f = vec![0.0; GST_LEN];
            f[0] = rng.random_range(0.0..1.0);
            ys.push(3.0 * f[0] + 1.0);
            xs.push(f);
        }
        (xs, ys)
    }

    fn linear(c: f64, epsilon: f64) -> Hyperparams {
        Hyperparams {
            kernel: Kernel::Linear,
            c,
            epsilon,
            tol: 1e-3,
        }
    }

    #[test]
    fn assemble_orders_features() {
        let s = SpatialIndex {
            model_name: "ssim".into(),
            value: 1.0,
        };
        let v = GstFeatureVector::assemble(&s, &TgreedFeatures::zeros()).unwrap();
        let mut want = [0.0; GST_LEN];
        want[0] = 1.0;
        assert_eq!(v.0, want);

        let mut t = TgreedFeatures::zeros();
        for k in 0..7 {
            t.scale4[k] = k as f64 + 1.0;
            t.scale5[k] = k as f64 + 11.0;
        }
        let v = GstFeatureVector::assemble(&s, &t).unwrap();
        assert_eq!(v.temporal()[..7], t.scale4);
        assert_eq!(v.temporal()[7..], t.scale5);

        t.scale5[3] = f64::NAN;
        assert!(matches!(GstFeatureVector::assemble(&s, &t), Err(Error::Argument(_))));
    }

    #[test]
    fn fits_a_plane() {
        let (xs, ys) = plane_data(50, 1);
        let model = fit(&xs, &ys, &linear(100.0, 0.01)).unwrap();
        assert_eq!(model.norm.dropped, (1..GST_LEN).collect::<Vec<_>>());
        let pred: Vec<f64> = xs.iter().map(|x| predict(&model, x).unwrap()).collect();
        assert!(rmse(&pred, &ys) < 0.05);
        for (p, y) in pred.iter().zip(&ys) {
            assert!((p - y).abs() < 0.01 + 0.05);
        }
    }

    #[test]
    fn constant_data_predicts_the_label() {
        let xs = vec![vec![0.3; GST_LEN]; 6];
        let ys = vec![42.0; 6];
        for hp in [linear(1.0, 0.1), Hyperparams::default()] {
            let model = fit(&xs, &ys, &hp).unwrap();
            assert!((predict(&model, &xs[0]).unwrap() - 42.0).abs() <= hp.epsilon);
        }
    }

    #[test]
    fn training_errors() {
        let (xs, ys) = plane_data(5, 2);
        assert!(matches!(fit(&xs, &ys[..4], &linear(1.0, 0.1)), Err(Error::Data(_))));
        assert!(matches!(fit(&xs[..1], &ys[..1], &linear(1.0, 0.1)), Err(Error::Data(_))));
        let mut bad = ys.clone();
        bad[2] = f64::INFINITY;
        assert!(matches!(fit(&xs, &bad, &linear(1.0, 0.1)), Err(Error::Data(_))));
        assert!(fit(&xs, &ys, &linear(-1.0, 0.1)).is_err());
    }

    #[test]
    fn normalization_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..GST_LEN).map(|d| rng.random_range(0.0..1.0) * (d as f64 + 1.0) * 100.0 + d as f64).collect())
            .collect();
        let norm = Normalizer::fit(&rows).unwrap();
        assert!(norm.dropped.is_empty());
        let z: Vec<Vec<f64>> = rows.iter().map(|r| norm.transform(r)).collect();
        for d in 0..GST_LEN {
            let m = z.iter().map(|r| r[d]).sum::<f64>() / 40.0;
            let s = (z.iter().map(|r| (r[d] - m).powi(2)).sum::<f64>() / 40.0).sqrt();
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        }
    }

    fn synthetic(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..GST_LEN).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys = xs.iter().map(|x| 2.0 * x[0] - x[3] + 0.5 * x[7] * x[7] + 50.0).collect();
        (xs, ys)
    }

    #[test]
    fn kkt_conditions_hold() {
        let (xs, ys) = synthetic(60, 4);
        for hp in [
            linear(1.0, 0.1),
            Hyperparams {
                kernel: Kernel::Rbf { gamma: 0.1 },
                c: 10.0,
                epsilon: 0.05,
                tol: 1e-3,
            },
        ] {
            let norm = Normalizer::fit(&xs).unwrap();
            let z: Vec<Vec<f64>> = xs.iter().map(|x| norm.transform(x)).collect();
            let gram: Vec<Vec<f64>> = z.iter().map(|a| z.iter().map(|b| hp.kernel.eval(a, b)).collect()).collect();
            let sol = solve_dual(&gram, &ys, &hp).unwrap();
            let n = ys.len();
            let coef: Vec<f64> = (0..n).map(|i| sol.alpha[i] - sol.alpha[i + n]).collect();
            assert!(coef.iter().sum::<f64>().abs() < 1e-9, "equality constraint");
            let tol = 2.0 * hp.tol;
            for i in 0..n {
                let (a, a_star) = (sol.alpha[i], sol.alpha[i + n]);
                assert!((0.0..=hp.c).contains(&a) && (0.0..=hp.c).contains(&a_star));
                assert!(a == 0.0 || a_star == 0.0, "complementarity at {i}");
                let f: f64 = (0..n).map(|j| coef[j] * gram[i][j]).sum::<f64>() + sol.bias;
                let r = ys[i] - f;
                if a == 0.0 && a_star == 0.0 {
                    assert!(r.abs() <= hp.epsilon + tol, "inside tube at {i}: {r}");
                }
                if a > 0.0 && a < hp.c {
                    assert!((r - hp.epsilon).abs() <= tol, "free α at {i}: {r}");
                }
                if a >= hp.c {
                    assert!(r >= hp.epsilon - tol);
                }
                if a_star > 0.0 && a_star < hp.c {
                    assert!((r + hp.epsilon).abs() <= tol, "free α* at {i}: {r}");
                }
                if a_star >= hp.c {
                    assert!(r <= -hp.epsilon + tol);
                }
            }
        }
    }

    #[test]
    fn affine_rescale_does_not_change_linear_predictions() {
        let (xs, ys) = synthetic(40, 5);
        let hp = Hyperparams {
            tol: 1e-9,
            ..linear(1.0, 0.1)
        };
        let scaled: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.iter().enumerate().map(|(d, v)| v * (d as f64 - 7.5) * 3.0 + 17.0 * d as f64).collect())
            .collect();
        let m1 = fit(&xs, &ys, &hp).unwrap();
        let m2 = fit(&scaled, &ys, &hp).unwrap();
        for (a, b) in xs.iter().zip(&scaled) {
            let (p1, p2) = (predict(&m1, a).unwrap(), predict(&m2, b).unwrap());
            assert!((p1 - p2).abs() < 1e-6, "{p1} vs {p2}");
        }
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let (xs, ys) = synthetic(30, 6);
        let model = fit(&xs, &ys, &Hyperparams::default()).unwrap();
        let back = SvrModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        for x in &xs {
            assert_eq!(predict(&model, x).unwrap().to_bits(), predict(&back, x).unwrap().to_bits());
        }
        assert_eq!(predict(&model, &xs[0]).unwrap().to_bits(), predict(&model, &xs[0].clone()).unwrap().to_bits());
        assert!(predict(&model, &xs[0][..3]).is_err());
        let mut nan = xs[0].clone();
        nan[1] = f64::NAN;
        assert!(matches!(predict(&model, &nan), Err(Error::Argument(_))));
        let wrong = model.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(SvrModel::from_json(&wrong), Err(Error::Format(_))));
    }

    fn split(xs: &[Vec<f64>], ys: &[f64], at: usize) -> (Dataset, Dataset) {
        let mk = |r: std::ops::Range<usize>| Dataset {
            content_ids: r.clone().map(|i| format!("c{i}")).collect(),
            features: xs[r.clone()].to_vec(),
            mos: ys[r].to_vec(),
        };
        (mk(0..at), mk(at..xs.len()))
    }

    #[test]
    fn grid_search_picks_lowest_validation_error() {
        let (xs, ys) = synthetic(60, 7);
        let (train, val) = split(&xs, &ys, 45);
        let one = [linear(1.0, 0.1)];
        assert_eq!(grid_search(&train, &val, &one).unwrap().best, one[0]);

        let grid = default_grid();
        assert_eq!(grid.len(), 32);
        let res = grid_search(&train, &val, &grid).unwrap();
        let best = res.val_rmse[res.best_index].unwrap();
        for (i, e) in res.val_rmse.iter().enumerate() {
            let e = e.unwrap();
            assert!(best <= e);
            if e == best {
                assert!(res.best_index <= i);
            }
        }
        // exhaustive re-evaluation
        for (hp, e) in grid.iter().zip(&res.val_rmse) {
            let m = fit(&train.features, &train.mos, hp).unwrap();
            let p: Vec<f64> = val.features.iter().map(|f| predict(&m, f).unwrap()).collect();
            assert_eq!(rmse(&p, &val.mos), e.unwrap());
        }
    }

    #[test]
    fn grid_search_rejects_overlap_and_empty() {
        let (xs, ys) = synthetic(20, 8);
        let (train, mut val) = split(&xs, &ys, 15);
        val.content_ids[0] = "c3".into();
        assert!(matches!(grid_search(&train, &val, &default_grid()), Err(Error::Data(_))));
        assert!(matches!(grid_search(&train, &Dataset::default(), &default_grid()), Err(Error::Data(_))));
    }

    #[test]
    fn fit_is_deterministic() {
        let (xs, ys) = synthetic(40, 9);
        let a = fit(&xs, &ys, &Hyperparams::default()).unwrap();
        let b = fit(&xs, &ys, &Hyperparams::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}
