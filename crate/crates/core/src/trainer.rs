//! Small multi-label models (linear or one tanh hidden layer, `C` sigmoid
//! heads), hand-written backpropagation, SGD/Adam, and the epoch loop.
//!
//! Per-entry losses come from [`crate::adapters::EpochLoss`]. The batch
//! objective is `(1/N)·Σ_n Σ_i ℓ(z_ni)`, and quantities the loss treats as
//! constants (`k̂`, `v`, frozen targets) are evaluated once per batch from the
//! current confidences and held fixed while differentiating.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapters::{self, ConfidenceEma, EpochLoss, Frozen, LabelCode, MethodId, SplcParams};
use crate::data::LabeledDataset;
use crate::error::{Result, SpmlError};
use crate::eval;
use crate::gr_loss::{AblationToggles, GrLossParams, RobustParams, ScheduleSpec};
use crate::numerics::{raw_logit, stable_sigmoid, BinaryMatrix, DenseMatrix, RngStream};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Heavy-ball momentum for SGD; ignored by Adam.
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub architecture: Architecture,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: u32,
    /// Standard deviation multiplier of the output layer at initialization.
    /// Small values keep initial confidences close to 0.5.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    0.01
}

/// Schedule anchors of the GR loss. `b0 = None` sets `b⁰ = logit(k0)` from the
/// training labels; `mu0 = None` holds `μ` at `mu_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrConfig {
    pub w0: f64,
    pub b0: Option<f64>,
    pub w_t: f64,
    pub b_t: f64,
    pub mu0: Option<f64>,
    pub sigma0: f64,
    pub mu_t: f64,
    pub sigma_t: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl Default for GrConfig {
    fn default() -> Self {
        GrConfig {
            w0: 0.0,
            b0: None,
            w_t: 2.0,
            b_t: -2.0,
            mu0: None,
            sigma0: 10.0,
            mu_t: 0.8,
            sigma_t: 0.5,
            q1: 0.01,
            q2: 0.01,
            q3: 1.0,
        }
    }
}

impl GrConfig {
    /// Schedules over `horizon` epochs, with `k0` the prior used when `b0` is unset.
    pub fn resolve(&self, k0: f64, horizon: u32) -> Result<GrLossParams> {
        let b0 = match self.b0 {
            Some(b) => b,
            None => {
                if !(k0 > 0.0 && k0 < 1.0) {
                    return Err(SpmlError::Parameter(format!("prior k0 = {k0} gives no finite b0; set b0 explicitly")));
                }
                raw_logit(k0)
            }
        };
        let params = GrLossParams {
            w: ScheduleSpec::new(self.w0, self.w_t, horizon),
            b: ScheduleSpec::new(b0, self.b_t, horizon),
            mu: ScheduleSpec::new(self.mu0.unwrap_or(self.mu_t), self.mu_t, horizon),
            sigma: ScheduleSpec::new(self.sigma0, self.sigma_t, horizon),
            robust: RobustParams::new(self.q1, self.q2, self.q3)?,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Method choice plus every method's hyperparameters. Only the fields of the
/// selected method are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub method: MethodId,
    #[serde(default = "default_epsilon")]
    pub an_ls_epsilon: f64,
    #[serde(default = "default_gamma")]
    pub focal_gamma: f64,
    #[serde(default = "default_lambda")]
    pub hill_lambda: f64,
    #[serde(default)]
    pub splc: SplcParams,
    #[serde(default = "default_em_alpha")]
    pub em_alpha: f64,
    #[serde(default = "default_apl_beta")]
    pub apl_beta: f64,
    /// Percentage of missing labels per class relabeled negative each epoch.
    #[serde(default = "default_apl_theta")]
    pub apl_theta: f64,
    #[serde(default = "default_ema_decay")]
    pub en_ema_decay: f64,
    /// Expected positives per class; defaults to the ground-truth counts.
    #[serde(default)]
    pub en_expected_positives: Option<Vec<usize>>,
    #[serde(default)]
    pub gr: GrConfig,
    #[serde(default)]
    pub ablation: AblationToggles,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    2.0
}
fn default_lambda() -> f64 {
    1.5
}
fn default_em_alpha() -> f64 {
    0.1
}
fn default_apl_beta() -> f64 {
    1.0
}
fn default_apl_theta() -> f64 {
    10.0
}
fn default_ema_decay() -> f64 {
    0.9
}

impl LossConfig {
    pub fn new(method: MethodId) -> Self {
        LossConfig {
            method,
            an_ls_epsilon: default_epsilon(),
            focal_gamma: default_gamma(),
            hill_lambda: default_lambda(),
            splc: SplcParams::default(),
            em_alpha: default_em_alpha(),
            apl_beta: default_apl_beta(),
            apl_theta: default_apl_theta(),
            en_ema_decay: default_ema_decay(),
            en_expected_positives: None,
            gr: GrConfig::default(),
            ablation: AblationToggles::default(),
        }
    }

    /// Every problem with the selected method's hyperparameters.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        match self.method {
            MethodId::AnLs => check(
                (0.0..0.5).contains(&self.an_ls_epsilon),
                format!("an_ls_epsilon must lie in [0, 0.5), got {}", self.an_ls_epsilon),
            ),
            MethodId::Focal => check(self.focal_gamma >= 0.0, format!("focal_gamma must be ≥ 0, got {}", self.focal_gamma)),
            MethodId::Hill => check(self.hill_lambda >= 1.0, format!("hill_lambda must be ≥ 1, got {}", self.hill_lambda)),
            MethodId::Splc => {
                let s = self.splc;
                check((0.0..=1.0).contains(&s.tau), format!("splc.tau must lie in [0, 1], got {}", s.tau));
                check(s.margin >= 0.0, format!("splc.margin must be ≥ 0, got {}", s.margin));
                check(s.gamma >= 0.0, format!("splc.gamma must be ≥ 0, got {}", s.gamma));
                check(s.lambda >= 1.0, format!("splc.lambda must be ≥ 1, got {}", s.lambda));
            }
            MethodId::Em => check(self.em_alpha > 0.0, format!("em_alpha must be positive, got {}", self.em_alpha)),
            MethodId::EmApl => {
                check(self.em_alpha > 0.0, format!("em_alpha must be positive, got {}", self.em_alpha));
                check(self.apl_beta > 0.0, format!("apl_beta must be positive, got {}", self.apl_beta));
                check(
                    (0.0..=100.0).contains(&self.apl_theta),
                    format!("apl_theta must lie in [0, 100], got {}", self.apl_theta),
                );
            }
            MethodId::En => check(
                self.en_ema_decay > 0.0 && self.en_ema_decay < 1.0,
                format!("en_ema_decay must lie in (0, 1), got {}", self.en_ema_decay),
            ),
            MethodId::Gr => {
                // a placeholder prior; only b0-independent checks matter here
                let probe = GrConfig { b0: Some(self.gr.b0.unwrap_or(0.0)), ..self.gr };
                if let Err(e) = probe.resolve(0.5, 1) {
                    out.push(format!("gr: {e}"));
                }
            }
            MethodId::An => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub loss: LossConfig,
}

impl RunConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let t = &self.trainer;
        if t.batch_size == 0 {
            out.push("trainer.batch_size must be at least 1".to_string());
        }
        if let Architecture::Mlp { hidden: 0 } = t.architecture {
            out.push("trainer.architecture.hidden must be at least 1".to_string());
        }
        if !(t.optimizer.lr.is_finite() && t.optimizer.lr >= 0.0) {
            out.push(format!("trainer.optimizer.lr must be finite and ≥ 0, got {}", t.optimizer.lr));
        }
        if !(0.0..1.0).contains(&t.optimizer.momentum) {
            out.push(format!("trainer.optimizer.momentum must lie in [0, 1), got {}", t.optimizer.momentum));
        }
        if !(t.init_scale.is_finite() && t.init_scale >= 0.0) {
            out.push(format!("trainer.init_scale must be finite and ≥ 0, got {}", t.init_scale));
        }
        out.extend(self.loss.problems());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SpmlError::Config(problems))
        }
    }
}

// ---------------------------------------------------------------------------
// Model

/// Dense layer `a·W + b` with `W` stored as inputs × outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { weights: DenseMatrix::zeros(inputs, outputs), bias: vec![0.0; outputs] }
    }

    fn apply(&self, input: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = input.matmul(&self.weights)?;
        out.add_row_vector(&self.bias)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub layers: Vec<Layer>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// `tanh` activations of the hidden layer, if any.
    pub hidden: Option<DenseMatrix>,
    pub logits: DenseMatrix,
    pub probs: DenseMatrix,
}

impl ModelParams {
    pub fn zeros(architecture: Architecture, inputs: usize, classes: usize) -> Self {
        let layers = match architecture {
            Architecture::Linear => vec![Layer::zeros(inputs, classes)],
            Architecture::Mlp { hidden } => vec![Layer::zeros(inputs, hidden), Layer::zeros(hidden, classes)],
        };
        ModelParams { architecture, layers }
    }

    /// Hidden weights `~ N(0, 1/inputs)`, output weights `~ init_scale·N(0, 1/inputs)`,
    /// zero biases.
    pub fn init(architecture: Architecture, inputs: usize, classes: usize, init_scale: f64, rng: &mut RngStream) -> Self {
        let mut model = ModelParams::zeros(architecture, inputs, classes);
        let last = model.layers.len() - 1;
        for (k, layer) in model.layers.iter_mut().enumerate() {
            let fan_in = layer.weights.rows() as f64;
            let scale = if k == last { init_scale } else { 1.0 } / fan_in.sqrt();
            for w in layer.weights.data_mut() {
                *w = scale * rng.standard_normal();
            }
        }
        model
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<ForwardPass> {
        if x.cols() != self.inputs() {
            return Err(SpmlError::Shape(format!("model expects {} features, got {}", self.inputs(), x.cols())));
        }
        let (hidden, logits) = match self.architecture {
            Architecture::Linear => (None, self.layers[0].apply(x)?),
            Architecture::Mlp { .. } => {
                let h = self.layers[0].apply(x)?.map(f64::tanh);
                let z = self.layers[1].apply(&h)?;
                (Some(h), z)
            }
        };
        let probs = logits.map(stable_sigmoid);
        Ok(ForwardPass { hidden, logits, probs })
    }

    pub fn predict(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward(x)?.probs)
    }

    /// Parameter gradients given `∂objective/∂z` for the batch.
    pub fn backward(&self, x: &DenseMatrix, pass: &ForwardPass, dlogits: &DenseMatrix) -> Result<ModelParams> {
        if dlogits.shape() != pass.logits.shape() {
            return Err(SpmlError::Shape("logit gradient shape differs from logits".into()));
        }
        let dense_grad = |input: &DenseMatrix, delta: &DenseMatrix| -> Result<Layer> {
            Ok(Layer { weights: input.transpose_matmul(delta)?, bias: delta.col_sums() })
        };
        let layers = match (&pass.hidden, self.architecture) {
            (None, Architecture::Linear) => vec![dense_grad(x, dlogits)?],
            (Some(h), Architecture::Mlp { .. }) => {
                let out = dense_grad(h, dlogits)?;
                let dh = dlogits.matmul(&self.layers[1].weights.transpose())?;
                let da = dh.zip_map(h, |g, a| g * (1.0 - a * a))?;
                vec![dense_grad(x, &da)?, out]
            }
            _ => return Err(SpmlError::Shape("forward pass does not match the architecture".into())),
        };
        Ok(ModelParams { architecture: self.architecture, layers })
    }

    /// All parameters as mutable slices, in a fixed order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(layer.weights.data_mut());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            out.push(layer.weights.data());
            out.push(layer.bias.as_slice());
        }
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(SpmlError::Shape(format!("{} values for {} parameters", values.len(), self.num_params())));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Batch objective

/// Stop-gradient quantities for every entry of a batch.
pub fn freeze_batch(loss: &EpochLoss, probs: &DenseMatrix, codes: &[LabelCode]) -> Result<Vec<Frozen>> {
    if probs.data().len() != codes.len() {
        return Err(SpmlError::Shape("label codes do not match the batch".into()));
    }
    Ok(probs.data().iter().zip(codes).map(|(&p, &c)| loss.freeze(p, c)).collect())
}

/// `(1/N)·ΣΣ ℓ(z)` with auxiliaries held at `frozen`.
pub fn batch_objective(loss: &EpochLoss, logits: &DenseMatrix, codes: &[LabelCode], frozen: &[Frozen]) -> f64 {
    let n = logits.rows().max(1) as f64;
    let mut total = 0.0;
    for ((&z, &c), f) in logits.data().iter().zip(codes).zip(frozen) {
        total += loss.loss_frozen(z, c, f);
    }
    total / n
}

/// `∂ batch_objective / ∂z`.
pub fn batch_logit_grad(loss: &EpochLoss, logits: &DenseMatrix, codes: &[LabelCode], frozen: &[Frozen]) -> DenseMatrix {
    let n = logits.rows().max(1) as f64;
    let data = logits
        .data()
        .iter()
        .zip(codes)
        .zip(frozen)
        .map(|((&z, &c), f)| loss.grad_frozen(z, c, f) / n)
        .collect();
    DenseMatrix::from_vec(logits.rows(), logits.cols(), data).expect("shape preserved")
}

/// Loss value and parameter gradients on one batch.
pub fn loss_and_gradients(
    model: &ModelParams,
    loss: &EpochLoss,
    x: &DenseMatrix,
    codes: &[LabelCode],
) -> Result<(f64, ModelParams)> {
    let pass = model.forward(x)?;
    let frozen = freeze_batch(loss, &pass.probs, codes)?;
    let value = batch_objective(loss, &pass.logits, codes, &frozen);
    let dz = batch_logit_grad(loss, &pass.logits, codes, &frozen);
    Ok((value, model.backward(x, &pass, &dz)?))
}

// ---------------------------------------------------------------------------
// Optimizers

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    /// Momentum buffer (SGD) or first moment (Adam).
    pub first: ModelParams,
    /// Second moment (Adam only).
    pub second: ModelParams,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, model: &ModelParams) -> Self {
        let zeros = ModelParams::zeros(model.architecture, model.inputs(), model.classes());
        OptimizerState { config, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn step(&mut self, model: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        if grads.num_params() != model.num_params() || self.first.num_params() != model.num_params() {
            return Err(SpmlError::Shape("gradient shape differs from parameter shape".into()));
        }
        self.step += 1;
        let lr = self.config.lr;
        let grads = grads.slices();
        match self.config.kind {
            OptimizerKind::Sgd => {
                let mu = self.config.momentum;
                for ((p, g), m) in model.slices_mut().into_iter().zip(grads).zip(self.first.slices_mut()) {
                    for ((pi, &gi), mi) in p.iter_mut().zip(g).zip(m.iter_mut()) {
                        if mu == 0.0 {
                            *pi -= lr * gi;
                        } else {
                            *mi = mu * *mi + gi;
                            *pi -= lr * *mi;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let firsts = self.first.slices_mut();
                let seconds = self.second.slices_mut();
                for (((p, g), m), v) in model.slices_mut().into_iter().zip(grads).zip(firsts).zip(seconds) {
                    for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *pi -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Training

/// The loss configuration with GR schedules resolved against the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedLoss {
    pub config: LossConfig,
    pub gr: Option<GrLossParams>,
}

impl ResolvedLoss {
    pub fn new(config: &LossConfig, train: &LabeledDataset, horizon: u32) -> Result<Self> {
        let gr = if config.method == MethodId::Gr {
            let k0 = crate::data::dataset_stats(train).missing_positive_prior.unwrap_or(0.0);
            Some(config.gr.resolve(k0, horizon)?)
        } else {
            None
        };
        Ok(ResolvedLoss { config: config.clone(), gr })
    }

    /// The loss with every schedule frozen at epoch `t`.
    pub fn at_epoch(&self, t: u32) -> Result<EpochLoss> {
        let c = &self.config;
        Ok(match c.method {
            MethodId::An => EpochLoss::An,
            MethodId::AnLs => EpochLoss::AnLs { epsilon: c.an_ls_epsilon },
            MethodId::Focal => EpochLoss::Focal { gamma: c.focal_gamma },
            MethodId::En => EpochLoss::En,
            MethodId::Em => EpochLoss::Em { alpha: c.em_alpha },
            MethodId::EmApl => EpochLoss::EmApl { alpha: c.em_alpha, beta: c.apl_beta },
            MethodId::Hill => EpochLoss::Hill { lambda: c.hill_lambda },
            MethodId::Splc => EpochLoss::Splc { params: c.splc, epoch: t },
            MethodId::Gr => {
                let gr = self.gr.as_ref().ok_or_else(|| SpmlError::Contract("GR schedules not resolved".into()))?;
                EpochLoss::Gr(gr.at_epoch(t, c.ablation)?)
            }
        })
    }
}

/// Per-entry label codes of the training set, rewritten by ranking passes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelState {
    pub codes: Vec<LabelCode>,
    pub ema: Option<ConfidenceEma>,
}

impl LabelState {
    pub fn from_observed(observed: &BinaryMatrix) -> Self {
        LabelState { codes: observed.data().iter().map(|&s| LabelCode::from_observed(s)).collect(), ema: None }
    }

    /// Codes of the given rows, row-major.
    pub fn rows(&self, indices: &[usize], classes: usize) -> Vec<LabelCode> {
        indices.iter().flat_map(|&r| self.codes[r * classes..(r + 1) * classes].iter().copied()).collect()
    }

    /// Runs the method's ranking pass on the full-train confidences.
    pub fn relabel(&mut self, config: &LossConfig, probs: &DenseMatrix, train: &LabeledDataset) -> Result<()> {
        let (n, c) = probs.shape();
        let column_codes: Vec<Vec<LabelCode>> = match config.method {
            MethodId::EmApl => (0..c)
                .map(|i| adapters::apl_relabel(&probs.column(i), &train.observed.column(i), config.apl_theta))
                .collect::<Result<_>>()?,
            MethodId::En => {
                let ema = match &mut self.ema {
                    Some(e) => e,
                    None => self.ema.insert(ConfidenceEma::new(config.en_ema_decay)?),
                };
                let values = DenseMatrix::from_vec(n, c, ema.update(probs.data())?.to_vec())?;
                let expected = match &config.en_expected_positives {
                    Some(v) if v.len() == c => v.clone(),
                    Some(v) => {
                        return Err(SpmlError::Config(vec![format!(
                            "en_expected_positives has {} entries for {c} classes",
                            v.len()
                        )]))
                    }
                    None => train.truth.col_counts(),
                };
                (0..c)
                    .map(|i| adapters::en_relabel(&values.column(i), &train.observed.column(i), expected[i]))
                    .collect::<Result<_>>()?
            }
            _ => return Ok(()),
        };
        for (i, col) in column_codes.iter().enumerate() {
            for (r, &code) in col.iter().enumerate() {
                self.codes[r * c + i] = code;
            }
        }
        Ok(())
    }
}

fn needs_relabel(method: MethodId) -> bool {
    matches!(method, MethodId::En | MethodId::EmApl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Completed epochs; `0` describes the initial model.
    pub epoch: u32,
    pub train_loss: f64,
    pub val_map: f64,
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ModelParams,
    pub optimizer: OptimizerState,
    pub epoch: u32,
    pub horizon: u32,
    pub rng: RngStream,
    pub loss: ResolvedLoss,
    pub labels: LabelState,
    pub batch_size: usize,
    pub best_val_map: f64,
    pub best_epoch: u32,
    pub best_model: ModelParams,
}

impl TrainState {
    pub fn new(config: &RunConfig, train: &LabeledDataset, seed: u64) -> Result<Self> {
        config.validate()?;
        train.validate()?;
        let t = &config.trainer;
        let model = ModelParams::init(
            t.architecture,
            train.num_features(),
            train.num_classes(),
            t.init_scale,
            &mut RngStream::new(seed, 100),
        );
        Ok(TrainState {
            optimizer: OptimizerState::new(t.optimizer, &model),
            best_model: model.clone(),
            model,
            epoch: 0,
            horizon: t.epochs,
            rng: RngStream::new(seed, 101),
            loss: ResolvedLoss::new(&config.loss, train, t.epochs)?,
            labels: LabelState::from_observed(&train.observed),
            batch_size: t.batch_size,
            best_val_map: f64::NEG_INFINITY,
            best_epoch: 0,
        })
    }

    /// Records a validation score, keeping the model if it is strictly better.
    pub fn observe_val(&mut self, val_map: f64) {
        if val_map > self.best_val_map {
            self.best_val_map = val_map;
            self.best_epoch = self.epoch;
            self.best_model = self.model.clone();
        }
    }

    /// One pass over the training set; returns the mean batch objective
    /// weighted by batch size.
    pub fn run_epoch(&mut self, train: &LabeledDataset) -> Result<f64> {
        if self.epoch >= self.horizon {
            return Err(SpmlError::Range(format!("epoch {} beyond horizon {}", self.epoch, self.horizon)));
        }
        let loss = self.loss.at_epoch(self.epoch)?;
        if needs_relabel(self.loss.config.method) {
            let probs = self.model.predict(&train.features)?;
            self.labels.relabel(&self.loss.config, &probs, train)?;
        }
        let n = train.len();
        let c = train.num_classes();
        let mut order: Vec<usize> = (0..n).collect();
        self.rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(self.batch_size) {
            let x = train.features.select_rows(batch);
            let codes = self.labels.rows(batch, c);
            let (value, grads) = loss_and_gradients(&self.model, &loss, &x, &codes)?;
            self.optimizer.step(&mut self.model, &grads)?;
            total += value * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(total / n as f64)
    }

    /// Objective of the current model on the whole training set at the
    /// current epoch's schedule.
    pub fn full_objective(&self, train: &LabeledDataset) -> Result<f64> {
        let t = self.epoch.min(self.horizon);
        let loss = self.loss.at_epoch(t)?;
        let pass = self.model.forward(&train.features)?;
        let frozen = freeze_batch(&loss, &pass.probs, &self.labels.codes)?;
        Ok(batch_objective(&loss, &pass.logits, &self.labels.codes, &frozen))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub seed: u64,
    pub initial_model: ModelParams,
    pub final_model: ModelParams,
    pub best_model: ModelParams,
    pub best_epoch: u32,
    pub best_val_map: f64,
    pub metrics: Vec<EpochMetrics>,
    /// Seconds spent per record of `metrics`; kept apart so that the metric
    /// trace itself is reproducible.
    pub wall_times: Vec<f64>,
    pub gr_params: Option<GrLossParams>,
}

impl TrainedRun {
    /// One JSON object per line.
    pub fn metrics_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for m in &self.metrics {
            out.push_str(&serde_json::to_string(m)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn timings_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (m, secs) in self.metrics.iter().zip(&self.wall_times) {
            out.push_str(&serde_json::to_string(&serde_json::json!({ "epoch": m.epoch, "wall_time": secs }))?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Trains for `config.trainer.epochs` epochs; epoch `t` (0-based) uses the
/// schedules at `t`. The model with the best validation mAP is retained,
/// including the untrained one.
pub fn train(config: &RunConfig, train: &LabeledDataset, val: &LabeledDataset, seed: u64) -> Result<TrainedRun> {
    if val.num_features() != train.num_features() || val.num_classes() != train.num_classes() {
        return Err(SpmlError::Shape("train and validation sets differ in width".into()));
    }
    let mut state = TrainState::new(config, train, seed)?;
    let initial_model = state.model.clone();
    let val_map = |m: &ModelParams| -> Result<f64> { Ok(eval::mean_average_precision(&m.predict(&val.features)?, &val.truth)?.map) };

    let start = Instant::now();
    let mut metrics = Vec::with_capacity(config.trainer.epochs as usize + 1);
    let mut wall_times = Vec::with_capacity(metrics.capacity());
    let initial_map = val_map(&state.model)?;
    state.observe_val(initial_map);
    metrics.push(EpochMetrics { epoch: 0, train_loss: state.full_objective(train)?, val_map: initial_map });
    wall_times.push(start.elapsed().as_secs_f64());

    while state.epoch < state.horizon {
        let epoch_start = Instant::now();
        let train_loss = state.run_epoch(train)?;
        let map = val_map(&state.model)?;
        state.observe_val(map);
        metrics.push(EpochMetrics { epoch: state.epoch, train_loss, val_map: map });
        wall_times.push(epoch_start.elapsed().as_secs_f64());
    }
    Ok(TrainedRun {
        seed,
        initial_model,
        final_model: state.model,
        best_model: state.best_model,
        best_epoch: state.best_epoch,
        best_val_map: state.best_val_map,
        metrics,
        wall_times,
        gr_params: state.loss.gr,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

const CHECKPOINT_FORMAT: &str = "spml-checkpoint-v1";

/// Text dump: a format line, an architecture line, then one
/// `name,rows,cols,values…` line per tensor.
pub fn checkpoint_to_string(model: &ModelParams) -> String {
    let mut out = format!("format,{CHECKPOINT_FORMAT}\n");
    match model.architecture {
        Architecture::Linear => out.push_str("architecture,linear\n"),
        Architecture::Mlp { hidden } => {
            let _ = writeln!(out, "architecture,mlp,{hidden}");
        }
    }
    for (k, layer) in model.layers.iter().enumerate() {
        let (r, c) = layer.weights.shape();
        let _ = write!(out, "layer{k}.weights,{r},{c}");
        for v in layer.weights.data() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        let _ = write!(out, "layer{k}.bias,1,{}", layer.bias.len());
        for v in &layer.bias {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| SpmlError::Parse { line: 0, message: format!("missing {what}") });
    let (line, fmt) = next("format line")?;
    if fmt != format!("format,{CHECKPOINT_FORMAT}") {
        return Err(SpmlError::Parse { line, message: format!("unknown checkpoint format {fmt:?}") });
    }
    let (line, arch) = next("architecture line")?;
    let fields: Vec<&str> = arch.split(',').collect();
    let architecture = match fields.as_slice() {
        ["architecture", "linear"] => Architecture::Linear,
        ["architecture", "mlp", h] => Architecture::Mlp {
            hidden: h.parse().map_err(|_| SpmlError::Parse { line, message: format!("bad hidden size {h:?}") })?,
        },
        _ => return Err(SpmlError::Parse { line, message: format!("bad architecture line {arch:?}") }),
    };
    let n_layers = match architecture {
        Architecture::Linear => 1,
        Architecture::Mlp { .. } => 2,
    };
    let mut tensor = |name: String| -> Result<(usize, usize, Vec<f64>)> {
        let (line, text) = next(&name)?;
        let perr = |message: String| SpmlError::Parse { line, message };
        let mut parts = text.split(',');
        if parts.next() != Some(name.as_str()) {
            return Err(perr(format!("expected tensor {name}")));
        }
        let mut dim = || -> Result<usize> {
            parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| perr("bad tensor dimensions".into()))
        };
        let (r, c) = (dim()?, dim()?);
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>().map_err(|_| perr(format!("bad value {v:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != r * c {
            return Err(perr(format!("{name}: {} values for {r}×{c}", values.len())));
        }
        Ok((r, c, values))
    };
    let mut layers = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let (r, c, w) = tensor(format!("layer{k}.weights"))?;
        let (_, _, b) = tensor(format!("layer{k}.bias"))?;
        if b.len() != c {
            return Err(SpmlError::Parse { line: 0, message: format!("layer{k} bias length {} for {c} outputs", b.len()) });
        }
        layers.push(Layer { weights: DenseMatrix::from_vec(r, c, w)?, bias: b });
    }
    if n_layers == 2 && layers[0].weights.cols() != layers[1].weights.rows() {
        return Err(SpmlError::Parse { line: 0, message: "layer widths do not chain".into() });
    }
    Ok(ModelParams { architecture, layers })
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    if !path.exists() {
        return Err(SpmlError::MissingArtifact(format!("checkpoint {}", path.display())));
    }
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}
