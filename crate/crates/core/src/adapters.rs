//! Prior single-positive / missing-label losses, implemented directly and
//! re-expressed as `(k̂, v, L1, L2, L3)` bundles of the unified framework.
//!
//! Every loss here is per label entry. Batch losses average the entry sums
//! over instances, like [`crate::gr_loss::batch_loss`].
//!
//! Sign convention: losses are minimized and nonnegative, except the EM
//! entropy term, which keeps its exact signed form `p ln p + (1 − p) ln(1 − p)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpmlError};
use crate::gr_loss::{self, EpochParams};
use crate::numerics::{clamp_for_log, raw_logit, stable_sigmoid};

/// Method identifiers as used in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "AN")]
    An,
    #[serde(rename = "AN-LS")]
    AnLs,
    #[serde(rename = "Focal")]
    Focal,
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "EM")]
    Em,
    #[serde(rename = "EM+APL")]
    EmApl,
    #[serde(rename = "Hill")]
    Hill,
    #[serde(rename = "SPLC")]
    Splc,
    #[serde(rename = "GR")]
    Gr,
}

impl MethodId {
    pub const ALL: [MethodId; 9] = [
        MethodId::An,
        MethodId::AnLs,
        MethodId::Focal,
        MethodId::En,
        MethodId::Em,
        MethodId::EmApl,
        MethodId::Hill,
        MethodId::Splc,
        MethodId::Gr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::An => "AN",
            MethodId::AnLs => "AN-LS",
            MethodId::Focal => "Focal",
            MethodId::En => "EN",
            MethodId::Em => "EM",
            MethodId::EmApl => "EM+APL",
            MethodId::Hill => "Hill",
            MethodId::Splc => "SPLC",
            MethodId::Gr => "GR",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = SpmlError;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SpmlError::config(format!("unknown method id {s:?}")))
    }
}

/// Label state of one entry: observed positive, still missing, or relabeled
/// negative by a ranking pass (APL / EN).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelCode {
    Positive,
    Missing,
    Negative,
}

impl LabelCode {
    pub fn from_observed(s: bool) -> Self {
        if s {
            LabelCode::Positive
        } else {
            LabelCode::Missing
        }
    }

    /// Integer code `1 / 0 / −1`.
    pub fn as_i8(self) -> i8 {
        match self {
            LabelCode::Positive => 1,
            LabelCode::Missing => 0,
            LabelCode::Negative => -1,
        }
    }

    pub fn from_i8(code: i8) -> Result<Self> {
        match code {
            1 => Ok(LabelCode::Positive),
            0 => Ok(LabelCode::Missing),
            -1 => Ok(LabelCode::Negative),
            other => Err(SpmlError::Domain(format!("unknown label code {other}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Direct forms

fn bce_pos(p: f64) -> f64 {
    -clamp_for_log(p).ln()
}

fn bce_neg(p: f64) -> f64 {
    -(1.0 - clamp_for_log(p)).ln()
}

/// Binary cross-entropy against the assumed-negative target.
pub fn an_loss(p: f64, s: bool) -> f64 {
    if s {
        bce_pos(p)
    } else {
        bce_neg(p)
    }
}

/// BCE against smoothed targets `1 − ε` (observed) and `ε` (missing).
pub fn an_ls_loss(p: f64, s: bool, epsilon: f64) -> f64 {
    let target = if s { 1.0 - epsilon } else { epsilon };
    target * bce_pos(p) + (1.0 - target) * bce_neg(p)
}

pub fn focal_loss(p: f64, s: bool, gamma: f64) -> f64 {
    if s {
        (1.0 - p).powf(gamma) * bce_pos(p)
    } else {
        p.powf(gamma) * bce_neg(p)
    }
}

/// Hill loss on a missing label, `(λ − p)·p²`.
pub fn hill_neg_loss(p: f64, lambda: f64) -> f64 {
    (lambda - p) * p * p
}

/// `−(1 − p_m)^γ ln p_m` with `p_m = σ(z − m)`.
pub fn focal_margin_pos_loss(z: f64, margin: f64, gamma: f64) -> f64 {
    let pm = stable_sigmoid(z - margin);
    (1.0 - pm).powf(gamma) * bce_pos(pm)
}

/// `p ln p + (1 − p) ln(1 − p)`, i.e. the negated binary entropy.
pub fn negative_entropy(p: f64) -> f64 {
    let p = clamp_for_log(p);
    p * p.ln() + (1.0 - p) * (1.0 - p).ln()
}

/// Cross-entropy `−[p̂ ln p + (1 − p̂) ln(1 − p)]` against a frozen target `p̂`.
pub fn frozen_target_ce(p: f64, p_hat: f64) -> f64 {
    p_hat * bce_pos(p) + (1.0 - p_hat) * bce_neg(p)
}

/// Focal-margin + Hill losses with self-paced correction of missing labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplcParams {
    pub tau: f64,
    pub margin: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// First epoch at which high-confidence missing labels are flipped.
    pub start_epoch: u32,
}

impl Default for SplcParams {
    fn default() -> Self {
        SplcParams { tau: 0.6, margin: 1.0, gamma: 2.0, lambda: 1.5, start_epoch: 1 }
    }
}

/// SPLC on logit `z`: missing labels with `p > τ` are treated as positives
/// once `epoch ≥ start_epoch`.
pub fn splc_loss(z: f64, s: bool, params: &SplcParams, epoch: u32) -> f64 {
    let p = stable_sigmoid(z);
    if s || (epoch >= params.start_epoch && p > params.tau) {
        focal_margin_pos_loss(z, params.margin, params.gamma)
    } else {
        hill_neg_loss(p, params.lambda)
    }
}

/// Entropy-maximization loss: BCE on observed positives and the weighted
/// negated entropy `α·(p ln p + (1 − p) ln(1 − p))` on missing labels.
pub fn em_loss(p: f64, s: bool, alpha: f64) -> f64 {
    if s {
        bce_pos(p)
    } else {
        alpha * negative_entropy(p)
    }
}

/// EM with asymmetric pseudo-labeling. Relabeled negatives take
/// `β·CE(p̂, p)` where `p̂` is the (gradient-free) confidence.
pub fn em_apl_loss(p: f64, code: LabelCode, alpha: f64, beta: f64, p_hat: f64) -> f64 {
    match code {
        LabelCode::Positive => bce_pos(p),
        LabelCode::Missing => alpha * negative_entropy(p),
        LabelCode::Negative => beta * frozen_target_ce(p, p_hat),
    }
}

/// EN loss: BCE on positives and pseudo-negatives; remaining missing labels
/// carry zero weight.
pub fn en_loss(p: f64, code: LabelCode) -> f64 {
    match code {
        LabelCode::Positive => bce_pos(p),
        LabelCode::Missing => 0.0,
        LabelCode::Negative => bce_neg(p),
    }
}

// ---------------------------------------------------------------------------
// Ranking-based relabeling passes

/// Marks the lowest `θ%` of missing labels of one class (by confidence) as
/// negatives. Ties go to the lower instance index. Observed positives are
/// never touched.
pub fn apl_relabel(confidences: &[f64], observed: &[bool], theta: f64) -> Result<Vec<LabelCode>> {
    if confidences.len() != observed.len() {
        return Err(SpmlError::Shape("confidences and observed labels differ in length".into()));
    }
    if !(0.0..=100.0).contains(&theta) {
        return Err(SpmlError::Parameter(format!("APL percentile {theta} outside [0, 100]")));
    }
    let mut codes: Vec<LabelCode> = observed.iter().map(|&s| LabelCode::from_observed(s)).collect();
    let mut missing: Vec<usize> = (0..observed.len()).filter(|&i| !observed[i]).collect();
    let count = ((theta / 100.0) * missing.len() as f64).floor() as usize;
    missing.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]).then(a.cmp(&b)));
    for &i in missing.iter().take(count) {
        codes[i] = LabelCode::Negative;
    }
    Ok(codes)
}

/// Marks the `N − N_i` instances with the lowest EMA confidence in one class
/// as negatives (observed positives excepted). Other missing labels stay
/// missing and are ignored by the EN loss.
pub fn en_relabel(ema: &[f64], observed: &[bool], expected_positives: usize) -> Result<Vec<LabelCode>> {
    let n = ema.len();
    if observed.len() != n {
        return Err(SpmlError::Shape("EMA values and observed labels differ in length".into()));
    }
    if expected_positives > n {
        return Err(SpmlError::Parameter(format!(
            "expected positive count {expected_positives} exceeds {n} instances"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ema[a].total_cmp(&ema[b]).then(a.cmp(&b)));
    let mut codes: Vec<LabelCode> = observed.iter().map(|&s| LabelCode::from_observed(s)).collect();
    for &i in order.iter().take(n - expected_positives) {
        if !observed[i] {
            codes[i] = LabelCode::Negative;
        }
    }
    Ok(codes)
}

/// Exponential moving average of confidences, `e ← d·e + (1 − d)·p`.
/// The first update seeds the average with the observed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEma {
    pub decay: f64,
    values: Option<Vec<f64>>,
}

impl ConfidenceEma {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(SpmlError::Parameter(format!("EMA decay {decay} outside (0, 1)")));
        }
        Ok(ConfidenceEma { decay, values: None })
    }

    pub fn update(&mut self, confidences: &[f64]) -> Result<&[f64]> {
        match &mut self.values {
            None => self.values = Some(confidences.to_vec()),
            Some(values) => {
                if values.len() != confidences.len() {
                    return Err(SpmlError::Shape("EMA length changed between updates".into()));
                }
                for (e, &p) in values.iter_mut().zip(confidences) {
                    *e = self.decay * *e + (1.0 - self.decay) * p;
                }
            }
        }
        Ok(self.values.as_deref().unwrap_or_default())
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }
}

// ---------------------------------------------------------------------------
// Epoch-resolved losses with closed-form logit gradients

/// A method with every epoch-dependent quantity (schedules, correction gate)
/// fixed. Relabeling state lives in the `LabelCode` passed per entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochLoss {
    An,
    AnLs { epsilon: f64 },
    Focal { gamma: f64 },
    En,
    Em { alpha: f64 },
    EmApl { alpha: f64, beta: f64 },
    Hill { lambda: f64 },
    Splc { params: SplcParams, epoch: u32 },
    Gr(EpochParams),
}

/// Quantities evaluated at the current confidence and then held constant
/// while differentiating (stop-gradient).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frozen {
    /// Soft pseudo-label, or the 0/1 switch of step-function methods.
    pub khat: f64,
    pub weight: f64,
    /// Frozen target `p̂` of the EM+APL negative term.
    pub target: f64,
}

impl EpochLoss {
    pub fn method(&self) -> MethodId {
        match self {
            EpochLoss::An => MethodId::An,
            EpochLoss::AnLs { .. } => MethodId::AnLs,
            EpochLoss::Focal { .. } => MethodId::Focal,
            EpochLoss::En => MethodId::En,
            EpochLoss::Em { .. } => MethodId::Em,
            EpochLoss::EmApl { .. } => MethodId::EmApl,
            EpochLoss::Hill { .. } => MethodId::Hill,
            EpochLoss::Splc { .. } => MethodId::Splc,
            EpochLoss::Gr(_) => MethodId::Gr,
        }
    }

    pub fn freeze(&self, p: f64, code: LabelCode) -> Frozen {
        let s = code == LabelCode::Positive;
        match self {
            EpochLoss::Gr(params) => Frozen { khat: params.khat(p), weight: params.weight(p, s), target: p },
            EpochLoss::Splc { params, epoch } => {
                let flip = *epoch >= params.start_epoch && p > params.tau;
                Frozen { khat: if flip { 1.0 } else { 0.0 }, weight: 1.0, target: p }
            }
            _ => Frozen { khat: 0.0, weight: 1.0, target: p },
        }
    }

    /// Entry loss at logit `z` with auxiliary quantities held at `frozen`.
    pub fn loss_frozen(&self, z: f64, code: LabelCode, frozen: &Frozen) -> f64 {
        let p = stable_sigmoid(z);
        let s = code == LabelCode::Positive;
        match *self {
            EpochLoss::An => an_loss(p, s),
            EpochLoss::AnLs { epsilon } => an_ls_loss(p, s, epsilon),
            EpochLoss::Focal { gamma } => focal_loss(p, s, gamma),
            EpochLoss::En => en_loss(p, code),
            EpochLoss::Em { alpha } => em_loss(p, s, alpha),
            EpochLoss::EmApl { alpha, beta } => em_apl_loss(p, code, alpha, beta, frozen.target),
            EpochLoss::Hill { lambda } => {
                if s {
                    bce_pos(p)
                } else {
                    hill_neg_loss(p, lambda)
                }
            }
            EpochLoss::Splc { params, .. } => {
                if s || frozen.khat == 1.0 {
                    focal_margin_pos_loss(z, params.margin, params.gamma)
                } else {
                    hill_neg_loss(p, params.lambda)
                }
            }
            EpochLoss::Gr(params) => {
                let q = params.robust;
                let raw = if s {
                    -(q.q1 * p.ln()).exp_m1() / q.q1
                } else {
                    frozen.khat * (-(q.q2 * p.ln()).exp_m1() / q.q2)
                        + (1.0 - frozen.khat) * (-(q.q3 * (-p).ln_1p()).exp_m1() / q.q3)
                };
                frozen.weight * raw
            }
        }
    }

    /// `∂ loss_frozen / ∂z` in closed form.
    pub fn grad_frozen(&self, z: f64, code: LabelCode, frozen: &Frozen) -> f64 {
        let p = stable_sigmoid(z);
        let s = code == LabelCode::Positive;
        match *self {
            EpochLoss::An => bce_grad(p, s),
            EpochLoss::AnLs { epsilon } => p - if s { 1.0 - epsilon } else { epsilon },
            EpochLoss::Focal { gamma } => {
                if s {
                    gamma * p * (1.0 - p).powf(gamma) * clamp_for_log(p).ln() - (1.0 - p).powf(gamma + 1.0)
                } else {
                    -gamma * p.powf(gamma) * (1.0 - p) * (1.0 - clamp_for_log(p)).ln() + p.powf(gamma + 1.0)
                }
            }
            EpochLoss::En => match code {
                LabelCode::Positive => p - 1.0,
                LabelCode::Missing => 0.0,
                LabelCode::Negative => p,
            },
            EpochLoss::Em { alpha } => {
                if s {
                    p - 1.0
                } else {
                    alpha * em_missing_grad(p)
                }
            }
            EpochLoss::EmApl { alpha, beta } => match code {
                LabelCode::Positive => p - 1.0,
                LabelCode::Missing => alpha * em_missing_grad(p),
                LabelCode::Negative => beta * (p - frozen.target),
            },
            EpochLoss::Hill { lambda } => {
                if s {
                    p - 1.0
                } else {
                    hill_grad(p, lambda)
                }
            }
            EpochLoss::Splc { params, .. } => {
                if s || frozen.khat == 1.0 {
                    focal_margin_grad(z, params.margin, params.gamma)
                } else {
                    hill_grad(p, params.lambda)
                }
            }
            EpochLoss::Gr(params) => {
                let q = params.robust;
                if s {
                    -p.powf(q.q1) * (1.0 - p)
                } else {
                    frozen.weight * gr_loss::grad_unannotated_wrt_logit(p, frozen.khat, q.q2, q.q3)
                }
            }
        }
    }

    pub fn loss(&self, z: f64, code: LabelCode) -> f64 {
        let frozen = self.freeze(stable_sigmoid(z), code);
        self.loss_frozen(z, code, &frozen)
    }

    pub fn grad(&self, z: f64, code: LabelCode) -> f64 {
        let frozen = self.freeze(stable_sigmoid(z), code);
        self.grad_frozen(z, code, &frozen)
    }
}

fn bce_grad(p: f64, s: bool) -> f64 {
    if s {
        p - 1.0
    } else {
        p
    }
}

/// Logit gradient of `p ln p + (1 − p) ln(1 − p)`: `ln(p/(1 − p))·p(1 − p)`.
pub fn em_missing_grad(p: f64) -> f64 {
    let pc = clamp_for_log(p);
    (pc.ln() - (1.0 - pc).ln()) * p * (1.0 - p)
}

/// Logit gradient of `(λ − p)p²`: `p²(2λ − 3p)(1 − p)`.
pub fn hill_grad(p: f64, lambda: f64) -> f64 {
    p * p * (2.0 * lambda - 3.0 * p) * (1.0 - p)
}

fn focal_margin_grad(z: f64, margin: f64, gamma: f64) -> f64 {
    let pm = stable_sigmoid(z - margin);
    gamma * pm * (1.0 - pm).powf(gamma) * clamp_for_log(pm).ln() - (1.0 - pm).powf(gamma + 1.0)
}

// ---------------------------------------------------------------------------
// Unified framework form

/// Confidence boundaries used to express ranking-based relabeling as
/// thresholds. `tau1` is the upper (positive) boundary, `tau2 ≤ tau1` the lower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveThresholds {
    pub tau1: f64,
    pub tau2: f64,
    pub theta_percentile: f64,
    pub ema_decay: f64,
}

impl AdaptiveThresholds {
    pub fn new(tau1: f64, tau2: f64, theta_percentile: f64, ema_decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau1) || !(0.0..=1.0).contains(&tau2) || tau2 > tau1 {
            return Err(SpmlError::Parameter(format!("thresholds need 0 ≤ tau2 ≤ tau1 ≤ 1, got {tau2}, {tau1}")));
        }
        if !(0.0..=100.0).contains(&theta_percentile) {
            return Err(SpmlError::Parameter(format!("percentile {theta_percentile} outside [0, 100]")));
        }
        if !(ema_decay > 0.0 && ema_decay < 1.0) {
            return Err(SpmlError::Parameter(format!("EMA decay {ema_decay} outside (0, 1)")));
        }
        Ok(AdaptiveThresholds { tau1, tau2, theta_percentile, ema_decay })
    }

    /// Single boundary `τ1 = τ2 = τ`.
    pub fn single(tau: f64) -> Result<Self> {
        AdaptiveThresholds::new(tau, tau, 0.0, 0.9)
    }
}

type ProbFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// One column of the unified framework: `k̂` (possibly undefined), `v`, and
/// the three surrogate losses. `L2` may be undefined where the method never
/// assigns a positive pseudo-label.
pub struct FrameworkLoss {
    pub method: MethodId,
    khat: Box<dyn Fn(f64) -> Option<f64> + Send + Sync>,
    weight: Box<dyn Fn(f64, bool) -> f64 + Send + Sync>,
    l1: ProbFn,
    l2: Option<ProbFn>,
    l3: ProbFn,
}

impl fmt::Debug for FrameworkLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrameworkLoss").field("method", &self.method).finish_non_exhaustive()
    }
}

impl FrameworkLoss {
    pub fn khat(&self, p: f64) -> Option<f64> {
        (self.khat)(p)
    }

    pub fn weight(&self, p: f64, s: bool) -> f64 {
        (self.weight)(p, s)
    }

    pub fn l1(&self, p: f64) -> f64 {
        (self.l1)(p)
    }

    pub fn l2(&self, p: f64) -> Option<f64> {
        self.l2.as_ref().map(|f| f(p))
    }

    pub fn l3(&self, p: f64) -> f64 {
        (self.l3)(p)
    }

    /// `v·[s·L1 + (1 − s)(k̂·L2 + (1 − k̂)·L3)]`. A zero weight short-circuits
    /// to zero even where `k̂` is undefined; an undefined `k̂` under nonzero
    /// weight is a contract violation.
    pub fn per_label_loss(&self, p: f64, s: bool) -> Result<f64> {
        let v = self.weight(p, s);
        if v == 0.0 {
            return Ok(0.0);
        }
        if s {
            return Ok(v * self.l1(p));
        }
        let k = self.khat(p).ok_or_else(|| {
            SpmlError::Contract(format!("{}: k̂ undefined at p={p} with weight {v}", self.method))
        })?;
        let inner = if k == 0.0 {
            self.l3(p)
        } else {
            let l2 = self.l2(p).ok_or_else(|| {
                SpmlError::Contract(format!("{}: L2 undefined but k̂={k} at p={p}", self.method))
            })?;
            k * l2 + (1.0 - k) * self.l3(p)
        };
        Ok(v * inner)
    }
}

fn boxed(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ProbFn {
    Box::new(f)
}

/// The framework column for an epoch-resolved method. `thresholds.tau1` is
/// the boundary confidence realizing the ranking passes of EN and EM+APL.
pub fn to_framework(loss: &EpochLoss, thresholds: &AdaptiveThresholds) -> FrameworkLoss {
    let tau1 = thresholds.tau1;
    let method = loss.method();
    match *loss {
        EpochLoss::An => FrameworkLoss {
            method,
            khat: Box::new(|_| Some(0.0)),
            weight: Box::new(|_, _| 1.0),
            l1: boxed(bce_pos),
            l2: Some(boxed(bce_pos)),
            l3: boxed(bce_neg),
        },
        EpochLoss::AnLs { epsilon } => FrameworkLoss {
            method,
            khat: Box::new(move |_| Some(epsilon)),
            weight: Box::new(|_, _| 1.0),
            l1: boxed(move |p| (1.0 - epsilon) * bce_pos(p) + epsilon * bce_neg(p)),
            l2: Some(boxed(bce_pos)),
            l3: boxed(bce_neg),
        },
        EpochLoss::Focal { gamma } => FrameworkLoss {
            method,
            khat: Box::new(|_| Some(0.0)),
            weight: Box::new(|_, _| 1.0),
            l1: boxed(move |p| (1.0 - p).powf(gamma) * bce_pos(p)),
            l2: None,
            l3: boxed(move |p| p.powf(gamma) * bce_neg(p)),
        },
        EpochLoss::En => FrameworkLoss {
            method,
            khat: Box::new(move |p| (p <= tau1).then_some(0.0)),
            weight: Box::new(move |p, s| if !s && p > tau1 { 0.0 } else { 1.0 }),
            l1: boxed(bce_pos),
            l2: Some(boxed(bce_pos)),
            l3: boxed(bce_neg),
        },
        EpochLoss::Em { alpha } => FrameworkLoss {
            method,
            khat: Box::new(|_| Some(1.0)),
            weight: Box::new(move |_, s| if s { 1.0 } else { alpha }),
            l1: boxed(bce_pos),
            l2: Some(boxed(negative_entropy)),
            l3: boxed(|p| frozen_target_ce(p, p)),
        },
        EpochLoss::EmApl { alpha, beta } => FrameworkLoss {
            method,
            khat: Box::new(move |p| Some(if p <= tau1 { 0.0 } else { 1.0 })),
            weight: Box::new(move |p, s| {
                if s {
                    1.0
                } else if p > tau1 {
                    alpha
                } else {
                    beta
                }
            }),
            l1: boxed(bce_pos),
            l2: Some(boxed(negative_entropy)),
            l3: boxed(|p| frozen_target_ce(p, p)),
        },
        EpochLoss::Hill { lambda } => FrameworkLoss {
            method,
            khat: Box::new(|_| Some(0.0)),
            weight: Box::new(|_, _| 1.0),
            l1: boxed(bce_pos),
            l2: None,
            l3: boxed(move |p| hill_neg_loss(p, lambda)),
        },
        EpochLoss::Splc { params, epoch } => {
            let correcting = epoch >= params.start_epoch;
            let fml = move |p: f64| focal_margin_pos_loss(raw_logit(p), params.margin, params.gamma);
            FrameworkLoss {
                method,
                khat: Box::new(move |p| Some(if correcting && p > params.tau { 1.0 } else { 0.0 })),
                weight: Box::new(|_, _| 1.0),
                l1: boxed(fml),
                l2: Some(boxed(fml)),
                l3: boxed(move |p| hill_neg_loss(p, params.lambda)),
            }
        }
        EpochLoss::Gr(params) => {
            let q = params.robust;
            FrameworkLoss {
                method,
                khat: Box::new(move |p| Some(params.khat(p))),
                weight: Box::new(move |p, s| params.weight(p, s)),
                l1: boxed(move |p| -(q.q1 * p.ln()).exp_m1() / q.q1),
                l2: Some(boxed(move |p| -(q.q2 * p.ln()).exp_m1() / q.q2)),
                l3: boxed(move |p| -(q.q3 * (-p).ln_1p()).exp_m1() / q.q3),
            }
        }
    }
}

/// Generic threshold pseudo-labeling: `k̂ = 1` above `τ1`, `0` below `τ2`,
/// undefined (and zero weight) in between, with BCE surrogates.
pub fn threshold_pseudo_labeling(thresholds: &AdaptiveThresholds) -> FrameworkLoss {
    let AdaptiveThresholds { tau1, tau2, .. } = *thresholds;
    FrameworkLoss {
        method: MethodId::An,
        khat: Box::new(move |p| {
            if p >= tau1 {
                Some(1.0)
            } else if p <= tau2 {
                Some(0.0)
            } else {
                None
            }
        }),
        weight: Box::new(move |p, s| if !s && tau2 < p && p < tau1 { 0.0 } else { 1.0 }),
        l1: boxed(bce_pos),
        l2: Some(boxed(bce_pos)),
        l3: boxed(bce_neg),
    }
}

/// Label code a direct implementation sees for an entry, given the
/// threshold form of the method's relabeling rule.
pub fn code_under_threshold(method: MethodId, p: f64, s: bool, tau1: f64) -> LabelCode {
    if s {
        return LabelCode::Positive;
    }
    match method {
        MethodId::En | MethodId::EmApl if p <= tau1 => LabelCode::Negative,
        _ => LabelCode::Missing,
    }
}
