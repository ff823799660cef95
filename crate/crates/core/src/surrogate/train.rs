//! Seeded split, Adam training with early stopping, and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::net::{NetError, ResidualNet, Topology};
use crate::metrics::{self, RankingMode, RankingScores};

pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{got} target values do not form {n} rows of {dim}")]
    Shape { got: usize, n: usize, dim: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, report: Box<TrainReport> },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Fit standardized targets and fold the scaling into the head afterwards.
    pub standardize_targets: bool,
    /// `None` is the standard 256-wide, 3-block, 512-output network.
    pub topology: Option<Topology>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            train_fraction: 0.90,
            val_fraction: 0.05,
            test_fraction: 0.05,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 200,
            patience: 5,
            seed: 0,
            standardize_targets: true,
            topology: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if (sum - 1.0).abs() > 1e-9 || fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(TrainError::Config(format!("split fractions {fr:?} must be in [0,1] and sum to 1")));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config("batch size and max epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle cut into train/validation/test. Validation and test get
/// at least one index each once `n ≥ 3`.
pub fn split_indices(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (train_fraction * n as f64).round() as usize;
    let mut n_val = (val_fraction * n as f64).round() as usize;
    n_train = n_train.min(n);
    n_val = n_val.min(n - n_train);
    if n >= 3 {
        if n_val == 0 {
            n_val = 1;
            n_train = n_train.min(n - 1);
        }
        if n - n_train - n_val == 0 && train_fraction + val_fraction < 1.0 {
            n_train -= 1;
        }
    }
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Split { train: idx, val, test }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// New lowest loss.
    Improved,
    Continue,
    /// `patience` epochs without a new low.
    Stop,
}

/// Stops once `patience` consecutive epochs fail to reach a new minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    epoch: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            epoch: 0,
            best: None,
        }
    }

    /// Records the loss of the next epoch (epochs count from 1).
    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.epoch += 1;
        match self.best {
            Some((_, b)) if !(loss < b) => {
                if self.epoch - self.best_epoch() >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((self.epoch, loss));
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best.map_or(0, |b| b.0)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|b| b.1)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Training and validation MSE of the untrained network.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    /// Mean batch MSE per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stop_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub test_mse: Option<f64>,
    pub test_r2: Option<f64>,
    pub ranking: Option<RankingScores>,
}

/// Design encodings and their target embeddings, both row-major.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, input_dim: usize, output_dim: usize) -> Result<Self, TrainError> {
        if input_dim == 0 || output_dim == 0 || x.len() % input_dim != 0 {
            return Err(TrainError::Config("bad input matrix shape".into()));
        }
        let n = x.len() / input_dim;
        if y.len() != n * output_dim {
            return Err(TrainError::Shape {
                got: y.len(),
                n,
                dim: output_dim,
            });
        }
        Ok(Dataset {
            x,
            y,
            input_dim,
            output_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let (di, dout) = (self.input_dim, self.output_dim);
        let mut x = Vec::with_capacity(idx.len() * di);
        let mut y = Vec::with_capacity(idx.len() * dout);
        for &i in idx {
            x.extend_from_slice(&self.x[i * di..(i + 1) * di]);
            y.extend_from_slice(&self.y[i * dout..(i + 1) * dout]);
        }
        (x, y)
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(net: &ResidualNet) -> Self {
        let z: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut ResidualNet, g: &ResidualNet, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, (p, gp)) in net.params_mut().into_iter().zip(g.params()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = gp[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Per-column mean and standard deviation (1 where a column is constant).
fn column_stats(y: &[f64], cols: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (y.len() / cols).max(1) as f64;
    let mut mean = vec![0.0; cols];
    for row in y.chunks_exact(cols) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; cols];
    for row in y.chunks_exact(cols) {
        for c in 0..cols {
            var[c] += (row[c] - mean[c]).powi(2);
        }
    }
    let sd = var.iter().map(|v| if *v > 0.0 { (v / n).sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

/// Makes the head emit `sd ⊙ y + mean` instead of `y`.
fn fold_scaling(net: &mut ResidualNet, mean: &[f64], sd: &[f64]) {
    let head = &mut net.head;
    for o in 0..head.outputs {
        for w in &mut head.w[o * head.inputs..(o + 1) * head.inputs] {
            *w *= sd[o];
        }
        head.b[o] = head.b[o] * sd[o] + mean[o];
    }
}

fn eval_mse(net: &ResidualNet, x: &[f64], y: &[f64], n: usize) -> Result<f64, TrainError> {
    if n == 0 {
        return Ok(f64::NAN);
    }
    // bounded chunks keep activations small
    let (di, dout) = (net.topology.input, net.topology.output);
    let mut sse = 0.0;
    for start in (0..n).step_by(1024) {
        let m = (n - start).min(1024);
        let p = net.forward_batch(&x[start * di..(start + m) * di], m)?;
        sse += p
            .iter()
            .zip(&y[start * dout..(start + m) * dout])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(sse / (n * dout) as f64)
}

pub fn predict_rows(net: &ResidualNet, x: &[f64], n: usize) -> Result<Vec<f64>, NetError> {
    let di = net.topology.input;
    let mut out = Vec::with_capacity(n * net.topology.output);
    for start in (0..n).step_by(1024) {
        let m = (n - start).min(1024);
        out.extend(net.forward_batch(&x[start * di..(start + m) * di], m)?);
    }
    Ok(out)
}

/// Trains a network on `data`. The returned weights are those of the epoch
/// with the lowest validation loss.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(ResidualNet, TrainReport), TrainError> {
    cfg.validate()?;
    let n = data.len();
    if n < MIN_SAMPLES {
        return Err(TrainError::TooFewSamples(n));
    }
    let topology = cfg.topology.unwrap_or_else(|| Topology::standard(data.input_dim));
    if topology.input != data.input_dim || topology.output != data.output_dim {
        return Err(TrainError::Config(format!(
            "topology {topology:?} does not match data ({} → {})",
            data.input_dim, data.output_dim
        )));
    }
    let split = split_indices(n, cfg.train_fraction, cfg.val_fraction, cfg.seed);
    let (xtr, ytr) = data.gather(&split.train);
    let (xva, yva) = data.gather(&split.val);
    let (xte, yte) = data.gather(&split.test);
    let dout = data.output_dim;
    let di = data.input_dim;

    let (mean, sd) = if cfg.standardize_targets {
        column_stats(&ytr, dout)
    } else {
        (vec![0.0; dout], vec![1.0; dout])
    };
    let ytr_s: Vec<f64> = ytr
        .chunks_exact(dout)
        .flat_map(|row| row.iter().enumerate().map(|(c, v)| (v - mean[c]) / sd[c]).collect::<Vec<_>>())
        .collect();
    let sd2: Vec<f64> = sd.iter().map(|s| s * s).collect();

    let mut net = ResidualNet::init_with(topology, cfg.seed)?;
    let folded = |net: &ResidualNet| {
        let mut f = net.clone();
        fold_scaling(&mut f, &mean, &sd);
        f
    };
    let init = folded(&net);
    let mut report = TrainReport {
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        initial_train_loss: eval_mse(&init, &xtr, &ytr, split.train.len())?,
        initial_val_loss: eval_mse(&init, &xva, &yva, split.val.len())?,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        stop_epoch: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        test_mse: None,
        test_r2: None,
        ranking: None,
    };

    let mut adam = Adam::new(&net);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut xb = Vec::with_capacity(cfg.batch_size * di);
    let mut yb = Vec::with_capacity(cfg.batch_size * dout);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sse, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(&xtr[i * di..(i + 1) * di]);
                yb.extend_from_slice(&ytr_s[i * dout..(i + 1) * dout]);
            }
            let m = batch.len();
            let cache = net.forward_cached(&xb, m)?;
            let denom = (m * dout) as f64;
            let mut dy = vec![0.0; m * dout];
            for (k, ((d, y), t)) in dy.iter_mut().zip(&cache.output).zip(&yb).enumerate() {
                let r = y - t;
                sse += sd2[k % dout] * r * r;
                *d = 2.0 * r / denom;
            }
            count += m * dout;
            let g = net.backward(&xb, &cache, &dy);
            adam.step(&mut net, &g, cfg);
        }
        let train_loss = sse / count as f64;
        let val_loss = eval_mse(&folded(&net), &xva, &yva, split.val.len())?;
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.stop_epoch = epoch;
        log::info!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                report: Box::new(report),
            });
        }
        match stopper.observe(val_loss) {
            StopDecision::Improved => best = net.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.best_epoch = stopper.best_epoch();
    report.best_val_loss = stopper.best_loss().unwrap_or(f64::INFINITY);
    let mut net = best;
    fold_scaling(&mut net, &mean, &sd);

    let nt = split.test.len();
    if nt > 0 {
        let p = predict_rows(&net, &xte, nt)?;
        report.test_mse = Some(metrics::mse(&p, &yte, dout)?);
        report.test_r2 = metrics::r_squared(&p, &yte, dout).ok().map(|r| r.value);
        report.ranking = metrics::ranking_scores(&p, &yte, dout, RankingMode::Auto).ok();
    }
    Ok((net, report))
}

/// Reports test metrics for an already trained network on the split that
/// [`train`] would use with the same seed and fractions.
pub fn evaluate_split(net: &ResidualNet, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    let split = split_indices(data.len(), cfg.train_fraction, cfg.val_fraction, cfg.seed);
    let (xte, yte) = data.gather(&split.test);
    let nt = split.test.len();
    let mut report = TrainReport {
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: nt,
        initial_train_loss: f64::NAN,
        initial_val_loss: f64::NAN,
        train_loss: vec![],
        val_loss: vec![],
        stop_epoch: 0,
        best_epoch: 0,
        best_val_loss: f64::NAN,
        stopped_early: false,
        test_mse: None,
        test_r2: None,
        ranking: None,
    };
    if nt > 0 {
        let p = predict_rows(net, &xte, nt)?;
        report.test_mse = Some(metrics::mse(&p, &yte, data.output_dim)?);
        report.test_r2 = metrics::r_squared(&p, &yte, data.output_dim).ok().map(|r| r.value);
        report.ranking = metrics::ranking_scores(&p, &yte, data.output_dim, RankingMode::Auto).ok();
    }
    Ok(report)
}
