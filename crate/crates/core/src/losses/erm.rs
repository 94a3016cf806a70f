//! Regularized multiclass cross-entropy over a concrete dataset.

use std::path::Path;

use log::debug;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LossOracle;
use crate::error::{domain, Error, Result};
use crate::model::{ForgetSplit, ParamVector, ProblemSpec};
use crate::scalar::Scalar;

/// Features, labels and a random retain/forget partition of the rows.
#[derive(Clone, Debug)]
pub struct ErmDataset<S> {
    pub features: Vec<Vec<S>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub retain_indices: Vec<usize>,
    pub forget_indices: Vec<usize>,
}

impl<S: Scalar> ErmDataset<S> {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Partitions rows into a uniformly random forget set of size `floor(rf n)` and
/// the retain remainder. Index lists are returned sorted.
pub fn split_dataset<S: Scalar, R: Rng + ?Sized>(
    features: Vec<Vec<S>>,
    labels: Vec<usize>,
    rf: S,
    rng: &mut R,
) -> Result<ErmDataset<S>> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Dataset("dataset has no rows".into()));
    }
    if features.len() != n {
        return Err(Error::Dataset(format!("{} feature rows but {n} labels", features.len())));
    }
    let p = features[0].len();
    if let Some(i) = features.iter().position(|r| r.len() != p) {
        return Err(Error::Dataset(format!("row {i} has {} features, expected {p}", features[i].len())));
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Dataset("non-finite feature value".into()));
    }
    ForgetSplit::new(rf)?;
    // guard against 0.29 * 100 = 28.999...
    let n_forget = (rf.f64() * n as f64 * (1.0 + 1e-12)).floor() as usize;
    if n_forget >= n {
        return Err(Error::EmptyRetain { n, rf: rf.f64() });
    }
    let mut forget = index::sample(rng, n, n_forget).into_vec();
    forget.sort_unstable();
    let mut is_forget = vec![false; n];
    forget.iter().for_each(|&i| is_forget[i] = true);
    let retain = (0..n).filter(|&i| !is_forget[i]).collect();
    let n_classes = labels.iter().max().map_or(1, |&m| m + 1);
    Ok(ErmDataset { features, labels, n_classes, retain_indices: retain, forget_indices: forget })
}

/// Reads the `f0,...,f{p-1},label` CSV format.
pub fn read_dataset_csv<S: Scalar>(path: impl AsRef<Path>) -> Result<(Vec<Vec<S>>, Vec<usize>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let p = headers.len().checked_sub(1).filter(|&p| p > 0).ok_or_else(|| {
        Error::Dataset("need at least one feature column and a label column".into())
    })?;
    for (j, h) in headers.iter().enumerate().take(p) {
        if h.trim() != format!("f{j}") {
            return Err(Error::Dataset(format!("column {j} should be named f{j}, found {h:?}")));
        }
    }
    if headers[p].trim() != "label" {
        return Err(Error::Dataset(format!("last column should be `label`, found {:?}", &headers[p])));
    }
    let (mut features, mut labels) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let feats = (0..p)
            .map(|j| {
                rec[j].trim().parse::<f64>().map(S::of).map_err(|_| {
                    Error::Dataset(format!("line {line}: bad float {:?} in column f{j}", &rec[j]))
                })
            })
            .collect::<Result<Vec<S>>>()?;
        let label = rec[p]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Dataset(format!("line {line}: bad label {:?}", &rec[p])))?;
        features.push(feats);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Dataset("dataset has no rows".into()));
    }
    Ok((features, labels))
}

pub fn write_dataset_csv<S: Scalar>(path: impl AsRef<Path>, features: &[Vec<S>], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = features.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, &y) in features.iter().zip(labels) {
        let mut rec: Vec<String> = row.iter().map(|x| format!("{}", x.f64())).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ErmOptions<S> {
    /// L2 weight, i.e. the strong-convexity modulus.
    pub l2_weight: S,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Gradient-norm tolerance of the full-batch optimizer.
    pub grad_tol: S,
    pub max_iters: usize,
    pub lipschitz_points: usize,
    pub lipschitz_safety: S,
    pub seed: u64,
}

impl<S: Scalar> Default for ErmOptions<S> {
    fn default() -> Self {
        Self {
            l2_weight: S::one(),
            batch_size: 64,
            eval_every: 10,
            grad_tol: S::of(1e-8),
            max_iters: 1_000_000,
            lipschitz_points: 256,
            lipschitz_safety: S::of(1.1),
            seed: 0x5eed,
        }
    }
}

/// Softmax cross-entropy with L2 regularization. Parameters are laid out
/// class-major: `theta[c * (p + 1) + j]` is the weight of feature `j` for class
/// `c`, and `theta[c * (p + 1) + p]` its bias.
#[derive(Clone, Debug)]
pub struct ErmLoss<S> {
    dataset: ErmDataset<S>,
    opts: ErmOptions<S>,
    spec: ProblemSpec<S>,
    split: ForgetSplit<S>,
    full_opt: ParamVector<S>,
    retain_opt: ParamVector<S>,
    retain_opt_value: S,
    grad_tol: S,
}

impl<S: Scalar> ErmLoss<S> {
    pub fn new(dataset: ErmDataset<S>, opts: ErmOptions<S>) -> Result<Self> {
        if !(opts.l2_weight > S::zero()) {
            return domain("L2 weight must be positive");
        }
        if opts.batch_size == 0 || opts.eval_every == 0 {
            return domain("batch size and eval interval must be positive");
        }
        if dataset.retain_indices.is_empty() {
            return Err(Error::EmptyRetain { n: dataset.n_rows(), rf: 1.0 });
        }
        let n = dataset.n_rows();
        let rf = S::of(dataset.forget_indices.len() as f64 / n as f64);
        let split = ForgetSplit::new(rf)?;
        let dim = dataset.n_classes * (dataset.n_features() + 1);
        // 1e-8 is out of reach in single precision
        let grad_tol = opts.grad_tol.max(S::of(50.0) * S::epsilon());
        let mut loss = Self {
            spec: ProblemSpec::new(opts.l2_weight, S::one(), dim)?,
            split,
            full_opt: ParamVector::zeros(dim),
            retain_opt: ParamVector::zeros(dim),
            retain_opt_value: S::zero(),
            grad_tol,
            dataset,
            opts,
        };
        let all: Vec<usize> = (0..n).collect();
        loss.full_opt = loss.minimize(&all)?;
        let retain = loss.dataset.retain_indices.clone();
        loss.retain_opt = loss.minimize(&retain)?;
        loss.retain_opt_value = loss.mean_loss(&loss.retain_opt, &retain);
        let lip = loss.estimate_lipschitz();
        loss.spec = ProblemSpec::new(loss.opts.l2_weight, lip, dim)?;
        Ok(loss)
    }

    pub fn dataset(&self) -> &ErmDataset<S> {
        &self.dataset
    }

    pub fn l2_weight(&self) -> S {
        self.opts.l2_weight
    }

    pub fn lipschitz_estimate(&self) -> S {
        self.spec.lipschitz
    }

    pub fn retain_opt_value(&self) -> S {
        self.retain_opt_value
    }

    /// Gradient-norm tolerance the stored optima satisfy.
    pub fn optimum_tolerance(&self) -> S {
        self.grad_tol
    }

    fn p(&self) -> usize {
        self.dataset.n_features()
    }

    fn logits(&self, theta: &[S], x: &[S], out: &mut [S]) {
        let p = self.p();
        for (c, o) in out.iter_mut().enumerate() {
            let w = &theta[c * (p + 1)..(c + 1) * (p + 1)];
            *o = w[..p].iter().zip(x).map(|(&a, &b)| a * b).sum::<S>() + w[p];
        }
    }

    /// Cross-entropy of one row, without the regularizer.
    fn sample_ce(&self, theta: &[S], i: usize, z: &mut [S]) -> S {
        self.logits(theta, &self.dataset.features[i], z);
        let m = z.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<S>().ln();
        lse - z[self.dataset.labels[i]]
    }

    /// Adds `scale * grad CE_i(theta)` to `out`.
    fn add_ce_grad(&self, theta: &[S], i: usize, scale: S, z: &mut [S], out: &mut [S]) {
        let p = self.p();
        self.logits(theta, &self.dataset.features[i], z);
        let m = z.iter().copied().fold(S::neg_infinity(), S::max);
        let mut tot = S::zero();
        for v in z.iter_mut() {
            *v = (*v - m).exp();
            tot = tot + *v;
        }
        let x = &self.dataset.features[i];
        let y = self.dataset.labels[i];
        for c in 0..self.dataset.n_classes {
            let mut r = z[c] / tot;
            if c == y {
                r = r - S::one();
            }
            let r = r * scale;
            let w = &mut out[c * (p + 1)..(c + 1) * (p + 1)];
            for (wj, &xj) in w[..p].iter_mut().zip(x) {
                *wj = *wj + r * xj;
            }
            w[p] = w[p] + r;
        }
    }

    /// Mean regularized loss over `rows`.
    pub fn mean_loss(&self, theta: &[S], rows: &[usize]) -> S {
        let mut z = vec![S::zero(); self.dataset.n_classes];
        let ce: S = rows.iter().map(|&i| self.sample_ce(theta, i, &mut z)).sum::<S>() / S::of_usize(rows.len());
        ce + self.opts.l2_weight / S::of(2.0) * theta.iter().map(|&t| t * t).sum::<S>()
    }

    /// Gradient of the mean regularized loss over `rows`.
    pub fn mean_gradient(&self, theta: &[S], rows: &[usize]) -> Vec<S> {
        let mut out: Vec<S> = theta.iter().map(|&t| self.opts.l2_weight * t).collect();
        let mut z = vec![S::zero(); self.dataset.n_classes];
        let scale = S::one() / S::of_usize(rows.len());
        rows.iter().for_each(|&i| self.add_ce_grad(theta, i, scale, &mut z, &mut out));
        out
    }

    /// Regularized loss of a single row.
    pub fn sample_loss(&self, theta: &[S], i: usize) -> S {
        let mut z = vec![S::zero(); self.dataset.n_classes];
        self.sample_ce(theta, i, &mut z) + self.opts.l2_weight / S::of(2.0) * theta.iter().map(|&t| t * t).sum::<S>()
    }

    pub fn sample_gradient_row(&self, theta: &[S], i: usize) -> Vec<S> {
        self.mean_gradient(theta, &[i])
    }

    /// Empirical retain loss at `theta` minus the stored optimum value, clamped at 0.
    pub fn erm_retain_excess(&self, theta: &ParamVector<S>) -> Result<S> {
        theta.check_dim(self.spec.dim)?;
        Ok(self.retain_excess(theta))
    }

    /// Smoothness of the regularized loss: softmax cross-entropy has Hessian
    /// at most `|x~|^2 / 2` per row, with `x~` the feature row plus the bias 1.
    fn smoothness(&self) -> S {
        let max_sq = self
            .dataset
            .features
            .iter()
            .map(|x| x.iter().map(|&v| v * v).sum::<S>() + S::one())
            .fold(S::zero(), S::max);
        self.opts.l2_weight + max_sq / S::of(2.0)
    }

    /// Full-batch gradient descent with step `1 / beta`, which converges
    /// linearly at rate `1 - mu / beta` without any line search.
    fn minimize(&self, rows: &[usize]) -> Result<ParamVector<S>> {
        let step = S::one() / self.smoothness();
        let mut theta = vec![S::zero(); self.spec.dim];
        let mut gnorm = S::infinity();
        for iter in 0..self.opts.max_iters {
            let g = self.mean_gradient(&theta, rows);
            gnorm = g.iter().map(|&v| v * v).sum::<S>().sqrt();
            if gnorm <= self.grad_tol {
                debug!("full-batch optimizer converged in {iter} iterations");
                return ParamVector::new(theta);
            }
            for (t, &d) in theta.iter_mut().zip(&g) {
                *t = *t - step * d;
            }
        }
        Err(Error::Convergence { iters: self.opts.max_iters, grad_norm: gnorm.f64() })
    }

    /// Fixed point of `L = safety * max ||grad l(theta, x_i)||` over random
    /// points in the ball of radius `L / (2 mu)`. The map is monotone in `L`, so
    /// iterating from 0 climbs to the least fixed point.
    fn estimate_lipschitz(&self) -> S {
        let dim = self.spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        let unit_ball: Vec<Vec<S>> = (0..self.opts.lipschitz_points)
            .map(|_| {
                let dir: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = rng.random::<f64>().powf(1.0 / dim as f64);
                dir.iter().map(|v| S::of(v / n * r)).collect()
            })
            .collect();
        let mu = self.opts.l2_weight;
        let rows: Vec<usize> = (0..self.dataset.n_rows()).collect();
        let mut lip = S::zero();
        for _ in 0..200 {
            let radius = lip / (S::of(2.0) * mu);
            let mut max_norm = S::zero();
            for u in std::iter::once(&vec![S::zero(); dim]).chain(&unit_ball) {
                let theta: Vec<S> = u.iter().map(|&v| v * radius).collect();
                for &i in &rows {
                    let g = self.sample_gradient_row(&theta, i);
                    max_norm = max_norm.max(g.iter().map(|&v| v * v).sum::<S>().sqrt());
                }
            }
            let next = self.opts.lipschitz_safety * max_norm;
            let done = (next - lip).abs() <= S::of(1e-9) * next.max(S::one());
            lip = next;
            if done {
                break;
            }
        }
        lip
    }
}

impl<S: Scalar> LossOracle<S> for ErmLoss<S> {
    fn problem(&self) -> &ProblemSpec<S> {
        &self.spec
    }

    fn split(&self) -> &ForgetSplit<S> {
        &self.split
    }

    /// Mini-batch of `batch_size` retain rows drawn with replacement.
    fn sample_gradient<R: Rng + ?Sized>(&self, theta: &[S], rng: &mut R, out: &mut [S]) {
        for (o, &t) in out.iter_mut().zip(theta) {
            *o = self.opts.l2_weight * t;
        }
        let retain = &self.dataset.retain_indices;
        let scale = S::one() / S::of_usize(self.opts.batch_size);
        let mut z = vec![S::zero(); self.dataset.n_classes];
        for _ in 0..self.opts.batch_size {
            let i = retain[rng.random_range(0..retain.len())];
            self.add_ce_grad(theta, i, scale, &mut z, out);
        }
    }

    fn retain_excess(&self, theta: &[S]) -> S {
        let v = self.mean_loss(theta, &self.dataset.retain_indices) - self.retain_opt_value;
        if v < S::zero() {
            debug!("retain excess {v:e} below the stored optimum; clamped to 0");
            return S::zero();
        }
        v
    }

    fn full_optimum(&self) -> &ParamVector<S> {
        &self.full_opt
    }

    fn retain_optimum(&self) -> &ParamVector<S> {
        &self.retain_opt
    }

    fn batch_size(&self) -> usize {
        self.opts.batch_size
    }

    fn eval_every(&self) -> usize {
        self.opts.eval_every
    }
}
