//! Generalized robust loss for single-positive multi-label learning.
//!
//! Each label entry with confidence `p` and observed bit `s` contributes
//!
//! ```text
//! v(p; α) · [ s·L1(p) + (1 − s)·( k̂(p; β)·L2(p) + (1 − k̂(p; β))·L3(p) ) ]
//! ```
//!
//! where `k̂` is a logistic soft pseudo-label, `v` a Gaussian instance weight
//! on unobserved entries, and `L1..L3` are GCE-style surrogates
//! `(1 − p^q)/q` / `(1 − (1 − p)^q)/q`. Both `k̂` and `v` are evaluated at the
//! current confidence but enter every gradient as constants.
//!
//! `β = (w, b)` and `α = (μ, σ)` move linearly from their start anchors to
//! their end anchors over the `T` training epochs.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpmlError};
use crate::numerics::{logit, stable_sigmoid, BinaryMatrix, DenseMatrix, Probability};

/// Upper bound accepted for any robustness exponent `q`.
pub const MAX_Q: f64 = 2.0;

/// Exponent used for all three surrogates when robust losses are ablated.
pub const ABLATED_Q: f64 = 0.01;

/// `β = (w, b)` of the logistic pseudo-label `k̂(p) = σ(w·p + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelParams {
    pub w: f64,
    pub b: f64,
}

impl PseudoLabelParams {
    pub fn new(w: f64, b: f64) -> Result<Self> {
        if !w.is_finite() || !b.is_finite() {
            return Err(SpmlError::Parameter(format!("non-finite pseudo-label params w={w} b={b}")));
        }
        if w < 0.0 {
            return Err(SpmlError::Parameter(format!(
                "pseudo-label slope w={w} must be non-negative (k̂ has to be non-decreasing in p)"
            )));
        }
        Ok(PseudoLabelParams { w, b })
    }

    /// The step threshold `τ = −b/w` approached as `w → ∞`.
    pub fn threshold(&self) -> Option<f64> {
        (self.w > 0.0).then(|| -self.b / self.w)
    }
}

/// `α = (μ, σ)` of the Gaussian weight applied to unobserved entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub mu: f64,
    pub sigma: f64,
}

impl WeightParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(SpmlError::Parameter(format!("weight center mu={mu} outside [0, 1]")));
        }
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(SpmlError::Parameter(format!("weight width sigma={sigma} must be > 0")));
        }
        Ok(WeightParams { mu, sigma })
    }
}

/// Exponents `(q1, q2, q3)` of the three surrogate losses, each in `(0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustParams {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl RobustParams {
    pub fn new(q1: f64, q2: f64, q3: f64) -> Result<Self> {
        for (name, q) in [("q1", q1), ("q2", q2), ("q3", q3)] {
            if q.is_nan() || q <= 0.0 || q > MAX_Q {
                return Err(SpmlError::Parameter(format!("{name}={q} outside (0, {MAX_Q}]")));
            }
        }
        Ok(RobustParams { q1, q2, q3 })
    }

    /// All three exponents at the near-BCE value used when robust losses are ablated.
    pub fn ablated() -> Self {
        RobustParams { q1: ABLATED_Q, q2: ABLATED_Q, q3: ABLATED_Q }
    }
}

/// Linear schedule `start + (end − start)·t/T` over epochs `0..=T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub start: f64,
    pub end: f64,
    pub horizon: u32,
}

impl ScheduleSpec {
    pub fn new(start: f64, end: f64, horizon: u32) -> Self {
        ScheduleSpec { start, end, horizon }
    }

    pub fn constant(value: f64, horizon: u32) -> Self {
        ScheduleSpec { start: value, end: value, horizon }
    }

    pub fn value(&self, t: u32) -> Result<f64> {
        schedule_value(self, t)
    }
}

/// Value of `spec` at epoch `t`. Endpoints are returned verbatim so that
/// `t = 0` gives `start` and `t = T` gives `end` bit-for-bit.
pub fn schedule_value(spec: &ScheduleSpec, t: u32) -> Result<f64> {
    if t > spec.horizon {
        return Err(SpmlError::Range(format!("epoch {t} beyond horizon {}", spec.horizon)));
    }
    if t == 0 {
        return Ok(spec.start);
    }
    if t == spec.horizon {
        return Ok(spec.end);
    }
    Ok(spec.start + (spec.end - spec.start) * (f64::from(t) / f64::from(spec.horizon)))
}

/// Which components of the loss are active. A disabled component falls back
/// to the assumed-negative default: `k̂ ≡ 0`, `v ≡ 1`, `q1 = q2 = q3 = 0.01`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationToggles {
    #[serde(default = "enabled")]
    pub pseudo_label: bool,
    #[serde(default = "enabled")]
    pub weight: bool,
    #[serde(default = "enabled")]
    pub robust: bool,
}

fn enabled() -> bool {
    true
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles { pseudo_label: true, weight: true, robust: true }
    }
}

/// Full schedule of the loss over a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrLossParams {
    pub w: ScheduleSpec,
    pub b: ScheduleSpec,
    pub mu: ScheduleSpec,
    pub sigma: ScheduleSpec,
    pub robust: RobustParams,
}

impl GrLossParams {
    pub fn horizon(&self) -> u32 {
        self.w.horizon
    }

    /// Checks every component invariant at both anchors. Since each schedule
    /// is affine and every constraint is an interval, this covers all `t`.
    pub fn validate(&self) -> Result<()> {
        let t_max = self.w.horizon;
        for s in [&self.b, &self.mu, &self.sigma] {
            if s.horizon != t_max {
                return Err(SpmlError::Parameter("all schedules must share one horizon".into()));
            }
        }
        for t in [0, t_max] {
            self.at_epoch(t, AblationToggles::default())?;
        }
        Ok(())
    }

    /// Parameters frozen for epoch `t`, with ablated components replaced by
    /// their assumed-negative defaults.
    pub fn at_epoch(&self, t: u32, toggles: AblationToggles) -> Result<EpochParams> {
        let pseudo = if toggles.pseudo_label {
            Some(PseudoLabelParams::new(self.w.value(t)?, self.b.value(t)?)?)
        } else {
            None
        };
        let weight = if toggles.weight {
            Some(WeightParams::new(self.mu.value(t)?, self.sigma.value(t)?)?)
        } else {
            None
        };
        let robust = if toggles.robust { self.robust } else { RobustParams::ablated() };
        Ok(EpochParams { pseudo, weight, robust })
    }
}

/// Loss parameters frozen for one epoch. `None` means the component is off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochParams {
    pub pseudo: Option<PseudoLabelParams>,
    pub weight: Option<WeightParams>,
    pub robust: RobustParams,
}

impl EpochParams {
    pub fn khat(&self, p: f64) -> f64 {
        self.pseudo.as_ref().map_or(0.0, |beta| k_hat(p, beta))
    }

    pub fn weight(&self, p: f64, s: bool) -> f64 {
        match &self.weight {
            Some(alpha) => v_weight(p, s, alpha),
            None => 1.0,
        }
    }
}

/// Soft pseudo-label `σ(w·p + b)`. Callers treat the result as a constant
/// with respect to `p` when differentiating.
pub fn k_hat(p: f64, params: &PseudoLabelParams) -> f64 {
    stable_sigmoid(params.w * p + params.b)
}

/// Instance weight: 1 on observed positives, `exp(−(p − μ)²/(2σ²))` otherwise.
/// Treated as a constant with respect to `p` in gradients.
pub fn v_weight(p: f64, s: bool, params: &WeightParams) -> f64 {
    if s {
        return 1.0;
    }
    let d = p - params.mu;
    (-(d * d) / (2.0 * params.sigma * params.sigma)).exp()
}

fn check_q(q: f64) -> Result<()> {
    if q.is_nan() || q <= 0.0 {
        return Err(SpmlError::Parameter(format!("robustness exponent q={q} must be > 0")));
    }
    Ok(())
}

/// `(1 − p^q)/q`, evaluated as `−expm1(q·ln p)/q` so that small `q`
/// approaches `−ln p` without cancellation.
pub fn robust_pos_loss(p: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    Ok(-(q * p.ln()).exp_m1() / q)
}

/// `(1 − (1 − p)^q)/q`.
pub fn robust_neg_loss(p: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    Ok(-(q * (-p).ln_1p()).exp_m1() / q)
}

/// Loss on an unobserved entry: `k̂·L2(p) + (1 − k̂)·L3(p)`.
pub fn unannotated_loss(p: f64, khat: f64, q2: f64, q3: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&khat) {
        return Err(SpmlError::Domain(format!("pseudo-label {khat} outside [0, 1]")));
    }
    Ok(khat * robust_pos_loss(p, q2)? + (1.0 - khat) * robust_neg_loss(p, q3)?)
}

/// Weighted loss of a single entry under frozen epoch parameters.
pub fn per_label_loss(p: f64, s: bool, params: &EpochParams) -> Result<f64> {
    let raw = if s {
        robust_pos_loss(p, params.robust.q1)?
    } else {
        unannotated_loss(p, params.khat(p), params.robust.q2, params.robust.q3)?
    };
    Ok(params.weight(p, s) * raw)
}

/// `(1/N) Σ_n Σ_i v·L` over an `N × C` confidence matrix.
pub fn batch_loss(confidences: &DenseMatrix, observed: &BinaryMatrix, params: &EpochParams) -> Result<f64> {
    if confidences.shape() != observed.shape() {
        return Err(SpmlError::Shape(format!(
            "confidences {:?} vs observed {:?}",
            confidences.shape(),
            observed.shape()
        )));
    }
    let n = confidences.rows();
    if n == 0 {
        return Err(SpmlError::Shape("empty batch".into()));
    }
    let mut total = 0.0;
    for (&p, &s) in confidences.data().iter().zip(observed.data()) {
        total += per_label_loss(p, s, params)?;
    }
    Ok(total / n as f64)
}

/// `∂L∅/∂z = (1 − k̂)(1 − p)^{q3}·p − k̂·p^{q2}·(1 − p)` with `k̂` held fixed.
/// Positive means lowering `p` lowers the loss.
pub fn grad_unannotated_wrt_logit(p: f64, khat: f64, q2: f64, q3: f64) -> f64 {
    (1.0 - khat) * (1.0 - p).powf(q3) * p - khat * p.powf(q2) * (1.0 - p)
}

/// Logit gradient of [`per_label_loss`] with `k̂` and `v` frozen.
pub fn grad_per_label_wrt_logit(p: f64, s: bool, params: &EpochParams) -> f64 {
    if s {
        -p.powf(params.robust.q1) * (1.0 - p)
    } else {
        params.weight(p, false)
            * grad_unannotated_wrt_logit(p, params.khat(p), params.robust.q2, params.robust.q3)
    }
}

/// `β` that makes `k̂` the constant `k0`: `w = 0`, `b = logit(k0)`.
pub fn init_beta_from_prior(k0: f64) -> Result<PseudoLabelParams> {
    let b = logit(Probability::new(k0)?)?.value();
    PseudoLabelParams::new(0.0, b)
}

/// `P(y = 1 | x, s = 0) = (1 − a)·p / (1 − a·p)` under a constant labeling rate `a`.
pub fn theoretical_k(p: f64, a: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&a) {
        return Err(SpmlError::Domain(format!("theoretical_k needs p, a in [0, 1]; got p={p} a={a}")));
    }
    if a * p >= 1.0 {
        return Err(SpmlError::Domain(format!("theoretical_k undefined at a·p = {}", a * p)));
    }
    Ok((1.0 - a) * p / (1.0 - a * p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn gr_params(w: f64, b: f64, mu: f64, sigma: f64, q: (f64, f64, f64)) -> EpochParams {
        EpochParams {
            pseudo: Some(PseudoLabelParams::new(w, b).unwrap()),
            weight: Some(WeightParams::new(mu, sigma).unwrap()),
            robust: RobustParams::new(q.0, q.1, q.2).unwrap(),
        }
    }

    #[test]
    fn k_hat_examples() {
        assert_eq!(k_hat(0.5, &PseudoLabelParams::new(0.0, 0.0).unwrap()), 0.5);
        let hard = PseudoLabelParams::new(1000.0, -700.0).unwrap();
        assert!((k_hat(0.8, &hard) - 1.0).abs() < 1e-10);
        assert!(k_hat(0.6, &hard).abs() < 1e-10);
        let prior = init_beta_from_prior(0.3).unwrap();
        for p in [0.0, 0.2, 0.9, 1.0] {
            assert!((k_hat(p, &prior) - 0.3).abs() < 1e-15);
        }
        assert!(PseudoLabelParams::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn v_weight_examples() {
        let alpha = WeightParams::new(0.4, 0.2).unwrap();
        assert_eq!(v_weight(0.4, false, &alpha), 1.0);
        assert!((v_weight(0.6, false, &alpha) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v_weight(0.6, false, &alpha) - 0.60653).abs() < 1e-5);
        assert_eq!(v_weight(0.01, true, &alpha), 1.0);
        assert!(WeightParams::new(0.5, 0.0).is_err());
        assert!(WeightParams::new(0.5, -1.0).is_err());
    }

    #[test]
    fn robust_loss_examples() {
        assert_eq!(robust_pos_loss(1.0, 0.5).unwrap(), 0.0);
        assert_eq!(robust_pos_loss(0.25, 1.0).unwrap(), 0.75);
        assert!((robust_pos_loss(0.5, 1e-4).unwrap() - 2f64.ln()).abs() < 1e-3);
        assert!(robust_pos_loss(0.5, 0.0).is_err());
        assert!(robust_pos_loss(0.5, -1.0).is_err());

        assert_eq!(robust_neg_loss(0.0, 0.3).unwrap(), 0.0);
        assert_eq!(robust_neg_loss(0.0, 1.7).unwrap(), 0.0);
        assert!((robust_neg_loss(0.3, 1.0).unwrap() - 0.3).abs() < 1e-16);
        assert!((robust_neg_loss(0.5, 1e-4).unwrap() - 2f64.ln()).abs() < 1e-3);
        assert!(robust_neg_loss(0.5, 0.0).is_err());
    }

    #[test]
    fn unannotated_examples() {
        for p in [0.1, 0.5, 0.93] {
            assert_eq!(unannotated_loss(p, 0.0, 0.2, 0.7).unwrap(), robust_neg_loss(p, 0.7).unwrap());
            assert_eq!(unannotated_loss(p, 1.0, 0.2, 0.7).unwrap(), robust_pos_loss(p, 0.2).unwrap());
        }
        assert_eq!(unannotated_loss(0.5, 0.5, 1.0, 1.0).unwrap(), 0.5);
        assert!(unannotated_loss(0.5, 1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn per_label_examples() {
        let params = gr_params(0.0, 0.0, 0.0, 0.3, (1.0, 1.0, 1.0));
        assert_eq!(per_label_loss(1.0, true, &params).unwrap(), 0.0);
        // k̂ = 0.5, L2(0) = 1, L3(0) = 0, v(0) = 1 with μ = 0
        assert_eq!(per_label_loss(0.0, false, &params).unwrap(), 0.5);

        let wide = gr_params(3.0, -1.0, 0.2, 1e200, (0.5, 0.3, 1.2));
        for p in [0.05, 0.4, 0.95] {
            let expect = unannotated_loss(p, wide.khat(p), 0.3, 1.2).unwrap();
            assert_eq!(per_label_loss(p, false, &wide).unwrap(), expect);
        }
    }

    #[test]
    fn batch_loss_examples() {
        // perfect predictions with k̂ ≡ 0 (pseudo-labeling off)
        let params = EpochParams { pseudo: None, weight: None, robust: RobustParams::new(0.5, 0.5, 0.5).unwrap() };
        let observed = BinaryMatrix::from_rows(&[vec![1, 0, 0], vec![0, 1, 0]]).unwrap();
        let conf = observed.to_dense();
        assert_eq!(batch_loss(&conf, &observed, &params).unwrap(), 0.0);

        let gp = gr_params(2.0, -1.0, 0.6, 0.4, (0.3, 0.1, 1.0));
        let one = DenseMatrix::from_vec(1, 1, vec![0.37]).unwrap();
        let s = BinaryMatrix::from_vec(1, 1, vec![false]).unwrap();
        assert_eq!(batch_loss(&one, &s, &gp).unwrap(), per_label_loss(0.37, false, &gp).unwrap());

        assert!(batch_loss(&one, &observed, &gp).is_err());
    }

    #[test]
    fn batch_loss_matches_loop_oracle() {
        let mut rng = RngStream::new(5, 1);
        for _ in 0..300 {
            let (n, c) = (1 + rng.below(16), 1 + rng.below(8));
            let conf = DenseMatrix::from_vec(n, c, (0..n * c).map(|_| rng.uniform()).collect()).unwrap();
            let obs = BinaryMatrix::from_vec(n, c, (0..n * c).map(|_| rng.uniform() < 0.3).collect()).unwrap();
            let params = gr_params(
                rng.uniform_range(0.0, 10.0),
                rng.uniform_range(-8.0, 0.0),
                rng.uniform(),
                rng.uniform_range(0.05, 2.0),
                (rng.uniform_range(0.01, 2.0), rng.uniform_range(0.01, 2.0), rng.uniform_range(0.01, 2.0)),
            );
            // oracle: textbook formulas, entry by entry
            let (w, b) = (params.pseudo.unwrap().w, params.pseudo.unwrap().b);
            let (mu, sigma) = (params.weight.unwrap().mu, params.weight.unwrap().sigma);
            let q = params.robust;
            let mut oracle = 0.0;
            for r in 0..n {
                for k in 0..c {
                    let p = conf.get(r, k);
                    let term = if obs.get(r, k) {
                        (1.0 - p.powf(q.q1)) / q.q1
                    } else {
                        let kh = 1.0 / (1.0 + (-(w * p + b)).exp());
                        let v = (-(p - mu).powi(2) / (2.0 * sigma * sigma)).exp();
                        v * (kh * (1.0 - p.powf(q.q2)) / q.q2 + (1.0 - kh) * (1.0 - (1.0 - p).powf(q.q3)) / q.q3)
                    };
                    oracle += term;
                }
            }
            oracle /= n as f64;
            let got = batch_loss(&conf, &obs, &params).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }

    #[test]
    fn gradient_examples() {
        for p in [0.1, 0.5, 0.8] {
            assert!((grad_unannotated_wrt_logit(p, 1.0, 1.0, 0.4) + p * (1.0 - p)).abs() < 1e-16);
        }
        assert_eq!(grad_unannotated_wrt_logit(0.5, 0.5, 1.0, 1.0), 0.0);

        let params = gr_params(1.0, -1.0, 0.5, 0.5, (1.0, 0.01, 1.0));
        for p in [0.2, 0.7] {
            assert!((grad_per_label_wrt_logit(p, true, &params) + p * (1.0 - p)).abs() < 1e-16);
        }
        assert_eq!(grad_per_label_wrt_logit(1.0, true, &params), 0.0);
    }

    #[test]
    fn grad_per_label_matches_finite_differences() {
        let params = gr_params(6.0, -4.0, 0.7, 0.4, (0.3, 0.05, 1.2));
        for i in 1..50 {
            let p0 = f64::from(i) / 50.0;
            let z0 = crate::numerics::raw_logit(p0);
            for s in [true, false] {
                // k̂ and v frozen at p0
                let kh = params.khat(p0);
                let v = params.weight(p0, s);
                let f = |z: f64| {
                    let p = stable_sigmoid(z);
                    if s {
                        robust_pos_loss(p, 0.3).unwrap()
                    } else {
                        v * unannotated_loss(p, kh, 0.05, 1.2).unwrap()
                    }
                };
                let fd = central_difference(f, z0, 1e-6);
                let an = grad_per_label_wrt_logit(p0, s, &params);
                assert!(relative_error(an, fd) <= 1e-5, "p={p0} s={s}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn unit_exponents_give_constant_sign() {
        // q2 = q3 = 1 reduces the gradient to p(1 − p)(1 − 2k̂)
        for kh in [0.1, 0.3, 0.5, 0.8] {
            for i in 1..100 {
                let p = f64::from(i) / 100.0;
                let g = grad_unannotated_wrt_logit(p, kh, 1.0, 1.0);
                assert!((g - p * (1.0 - p) * (1.0 - 2.0 * kh)).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn zero_crossing_matches_closed_form_root() {
        // q3 = 1: (1 − k̂) = k̂·p^{q2 − 1}  ⇒  p* = ((1 − k̂)/k̂)^{1/(q2 − 1)}
        for (kh, q2) in [(0.3f64, 0.01f64), (0.2, 0.5), (0.45, 0.1)] {
            let root = ((1.0 - kh) / kh).powf(1.0 / (q2 - 1.0));
            assert!(root > 0.0 && root < 1.0);
            let g = |p: f64| grad_unannotated_wrt_logit(p, kh, q2, 1.0);
            let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
            assert!(g(lo).signum() != g(hi).signum());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid).signum() == g(lo).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((0.5 * (lo + hi) - root).abs() < 1e-9, "k̂={kh} q2={q2}: {} vs {root}", 0.5 * (lo + hi));
        }
    }

    #[test]
    fn schedule_examples() {
        let s = ScheduleSpec::new(0.0, 10.0, 8);
        assert_eq!(schedule_value(&s, 0).unwrap(), 0.0);
        assert_eq!(schedule_value(&s, 8).unwrap(), 10.0);
        assert_eq!(schedule_value(&s, 4).unwrap(), 5.0);
        assert!(schedule_value(&s, 9).is_err());
        let awkward = ScheduleSpec::new(0.1, 0.7, 3);
        assert_eq!(schedule_value(&awkward, 3).unwrap(), 0.7);
    }

    #[test]
    fn init_beta_examples() {
        assert_eq!(init_beta_from_prior(0.5).unwrap(), PseudoLabelParams { w: 0.0, b: 0.0 });
        assert!(init_beta_from_prior(0.0).is_err());
        assert!(init_beta_from_prior(1.0).is_err());
    }

    #[test]
    fn theoretical_k_examples() {
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(theoretical_k(p, 0.0).unwrap(), p);
        }
        for p in [0.0, 0.3, 0.99] {
            assert_eq!(theoretical_k(p, 1.0).unwrap(), 0.0);
        }
        assert!((theoretical_k(0.5, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(theoretical_k(1.0, 1.0).is_err());
    }

    #[test]
    fn ablation_defaults() {
        let params = GrLossParams {
            w: ScheduleSpec::new(0.0, 2.0, 8),
            b: ScheduleSpec::new(-1.0, -2.0, 8),
            mu: ScheduleSpec::new(0.8, 0.8, 8),
            sigma: ScheduleSpec::new(10.0, 0.5, 8),
            robust: RobustParams::new(0.01, 0.01, 1.0).unwrap(),
        };
        params.validate().unwrap();
        let off = AblationToggles { pseudo_label: true, weight: false, robust: false };
        let e = params.at_epoch(4, off).unwrap();
        assert_eq!(e.weight(0.1, false), 1.0);
        assert_eq!(e.robust, RobustParams::ablated());
        assert_eq!(e.pseudo.unwrap().w, 1.0);
        let none = AblationToggles { pseudo_label: false, weight: false, robust: false };
        assert_eq!(params.at_epoch(7, none).unwrap().khat(0.99), 0.0);
    }

    proptest! {
        #[test]
        fn schedule_is_affine(start in -50.0f64..50.0, end in -50.0f64..50.0, horizon in 2u32..40, a in 0u32..40, b in 0u32..40) {
            let s = ScheduleSpec::new(start, end, horizon);
            let (a, b) = (a % (horizon + 1), b % (horizon + 1));
            let (fa, fb) = (s.value(a).unwrap(), s.value(b).unwrap());
            let f0 = s.value(0).unwrap();
            // three points (0, f0), (a, fa), (b, fb) are collinear with slope (end − start)/T
            let slope = (end - start) / f64::from(horizon);
            prop_assert!((fa - f0 - slope * f64::from(a)).abs() <= 1e-12 * (1.0 + start.abs() + end.abs()));
            prop_assert!((fb - f0 - slope * f64::from(b)).abs() <= 1e-12 * (1.0 + start.abs() + end.abs()));
        }

        #[test]
        fn k_hat_monotone(w in 0.0f64..50.0, b in -30.0f64..30.0, p1 in 0.0f64..1.0, dp in 0.0f64..1.0) {
            let beta = PseudoLabelParams::new(w, b).unwrap();
            let p2 = (p1 + dp).min(1.0);
            prop_assert!(k_hat(p1, &beta) <= k_hat(p2, &beta));
            let k = k_hat(p1, &beta);
            prop_assert!((0.0..=1.0).contains(&k));
        }

        #[test]
        fn v_weight_unimodal(mu in 0.0f64..1.0, sigma in 0.05f64..3.0, p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
            let alpha = WeightParams::new(mu, sigma).unwrap();
            let (v1, v2) = (v_weight(p1, false, &alpha), v_weight(p2, false, &alpha));
            prop_assert!(v1 > 0.0 && v1 <= 1.0);
            // closer to the center never weighs less
            if (p1 - mu).abs() <= (p2 - mu).abs() {
                prop_assert!(v1 >= v2);
            }
        }

        #[test]
        fn theoretical_k_monotone(a in 0.0f64..0.999, p1 in 0.0f64..1.0, dp in 0.0f64..1.0) {
            let p2 = (p1 + dp).min(1.0);
            prop_assert!(theoretical_k(p1, a).unwrap() <= theoretical_k(p2, a).unwrap() + 1e-15);
        }

        #[test]
        fn robust_losses_monotone(q in 0.01f64..2.0, p1 in 0.0f64..1.0, dp in 0.0f64..1.0) {
            let p2 = (p1 + dp).min(1.0);
            prop_assert!(robust_pos_loss(p1, q).unwrap() >= robust_pos_loss(p2, q).unwrap());
            prop_assert!(robust_neg_loss(p1, q).unwrap() <= robust_neg_loss(p2, q).unwrap());
        }
    }
}
