//! Deep evidential regression machinery: constraint mapping for the
//! normal-inverse-gamma head, the Student-t negative log-likelihood, the
//! KL-to-weak-prior regularizer, uncertainty decomposition, predictive
//! intervals, and event probabilities.
//!
//! The head emits four raw values per horizon step. After constraining,
//! the marginal predictive for step k is a Student-t with location
//! `gamma`, scale `sqrt(beta (1 + nu) / (alpha nu))`, and `2 alpha`
//! degrees of freedom. Its variance decomposes into the aleatoric part
//! `beta / (alpha - 1)` and epistemic part `beta / ((alpha - 1) nu)`.

use autodiff::special::softplus;
use autodiff::Var;

use crate::data::NormalizationParams;
use crate::dist::StudentT;
use crate::error::EvidentialError;

/// Euler-Mascheroni constant, as used in the KL bracket.
pub const EULER_MASCHERONI: f64 = 0.577_215_664_9;
/// Additive floor keeping nu and beta away from zero and alpha above one.
pub const CONSTRAINT_FLOOR: f64 = 1e-6;
/// Default weight of the KL regularizer in the total loss.
pub const DEFAULT_KL_WEIGHT: f64 = 0.01;

/// Raw head layout per window: four contiguous blocks of length h in the
/// order gamma, nu, alpha, beta.
pub const BLOCK_ORDER: [&str; 4] = ["gamma", "nu", "alpha", "beta"];

type Result<T> = std::result::Result<T, EvidentialError>;

// ---------------------------------------------------------------------------
// Tape-side: losses used during training, differentiable in all four blocks.

/// Constrained evidential outputs on the tape, each of shape (B, h).
pub struct ConstrainedVars<'t> {
    pub gamma: Var<'t>,
    pub nu: Var<'t>,
    pub alpha: Var<'t>,
    pub beta: Var<'t>,
}

/// Split a raw (B, 4h) head output and apply the constraint mapping:
/// gamma passes through; nu = softplus + floor; alpha = 1 + softplus +
/// floor; beta = softplus + floor.
pub fn constrain_vars<'t>(raw: Var<'t>, horizon: usize) -> Result<ConstrainedVars<'t>> {
    let shape = raw.shape();
    if shape.len() != 2 || shape[1] != 4 * horizon {
        return Err(EvidentialError::Constraint(format!(
            "raw head output must be (B, {}), got {:?}",
            4 * horizon,
            shape
        )));
    }
    if !raw.value().is_finite() {
        return Err(EvidentialError::NonFinite);
    }
    let gamma = raw.slice(1, 0, horizon)?;
    let nu = raw
        .slice(1, horizon, horizon)?
        .softplus()
        .add_scalar(CONSTRAINT_FLOOR);
    let alpha = raw
        .slice(1, 2 * horizon, horizon)?
        .softplus()
        .add_scalar(1.0 + CONSTRAINT_FLOOR);
    let beta = raw
        .slice(1, 3 * horizon, horizon)?
        .softplus()
        .add_scalar(CONSTRAINT_FLOOR);
    Ok(ConstrainedVars {
        gamma,
        nu,
        alpha,
        beta,
    })
}

/// Negative log-likelihood of the observations under the marginal
/// Student-t, averaged over batch and horizon steps.
pub fn nll_loss_var<'t>(c: &ConstrainedVars<'t>, y: Var<'t>) -> Result<Var<'t>> {
    let alpha_half = c.alpha.add_scalar(0.5);
    // 2 beta (1 + nu) / nu
    let scale2 = (c.beta.mul_scalar(2.0) * c.nu.add_scalar(1.0)).div(c.nu)?;
    let diff = y - c.gamma;
    let quad = (diff * diff).div(scale2)?;
    let point = c.alpha.ln_gamma()?
        - alpha_half.ln_gamma()?
        + scale2.mul_scalar(std::f64::consts::PI).log()?.mul_scalar(0.5)
        + alpha_half * quad.add_scalar(1.0).log()?;
    Ok(point.mean())
}

/// KL-to-reference regularizer: |y - gamma| times the divergence bracket
/// against a reference prior with alpha_r = 1 and scale `beta_r`
/// (normalized units), averaged over batch and horizon steps.
pub fn kl_regularizer_var<'t>(
    c: &ConstrainedVars<'t>,
    y: Var<'t>,
    beta_r: f64,
) -> Result<Var<'t>> {
    if beta_r.is_nan() || beta_r <= 0.0 {
        return Err(EvidentialError::BadReferenceScale(beta_r));
    }
    let bracket = c.alpha.mul_scalar(beta_r.ln()) + c.alpha.ln_gamma()?
        - c.alpha * c.beta.log()?
        + c.alpha.add_scalar(-1.0).mul_scalar(EULER_MASCHERONI)
        + c.beta.add_scalar(-beta_r).mul_scalar(1.0 / beta_r);
    let err = (y - c.gamma).abs();
    Ok((err * bracket).mean())
}

/// Which regularizer accompanies the data loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RegularizerKind {
    /// KL divergence to the weak reference prior; the default.
    KlReference,
    /// The original evidence penalty |y - gamma| (2 nu + alpha), kept as
    /// an ablation alternative. Note it is independent of beta, which
    /// sets the overall uncertainty scale.
    EvidencePenalty,
}

/// Data loss plus `kl_weight` times the regularizer.
pub fn total_loss_var<'t>(
    c: &ConstrainedVars<'t>,
    y: Var<'t>,
    beta_r: f64,
    kl_weight: f64,
) -> Result<Var<'t>> {
    total_loss_with(c, y, beta_r, kl_weight, RegularizerKind::KlReference)
}

/// Data loss plus the selected regularizer.
pub fn total_loss_with<'t>(
    c: &ConstrainedVars<'t>,
    y: Var<'t>,
    beta_r: f64,
    kl_weight: f64,
    kind: RegularizerKind,
) -> Result<Var<'t>> {
    let nll = nll_loss_var(c, y)?;
    if kl_weight == 0.0 {
        return Ok(nll);
    }
    let reg = match kind {
        RegularizerKind::KlReference => kl_regularizer_var(c, y, beta_r)?,
        RegularizerKind::EvidencePenalty => evidence_regularizer_var(c, y)?,
    };
    Ok(nll + reg.mul_scalar(kl_weight))
}

/// |y - gamma| (2 nu + alpha), averaged over batch and horizon.
pub fn evidence_regularizer_var<'t>(c: &ConstrainedVars<'t>, y: Var<'t>) -> Result<Var<'t>> {
    let err = (y - c.gamma).abs();
    let evidence = c.nu.mul_scalar(2.0) + c.alpha;
    Ok((err * evidence).mean())
}

/// Leak-free scalar route for the per-point data loss; the tape route
/// must agree with this exactly up to summation order.
pub fn nll_point(gamma: f64, nu: f64, alpha: f64, beta: f64, y: f64) -> f64 {
    let scale2 = 2.0 * beta * (1.0 + nu) / nu;
    let quad = (y - gamma) * (y - gamma) / scale2;
    autodiff::special::ln_gamma(alpha).unwrap()
        - autodiff::special::ln_gamma(alpha + 0.5).unwrap()
        + 0.5 * (std::f64::consts::PI * scale2).ln()
        + (alpha + 0.5) * quad.ln_1p()
}

/// Scalar KL regularizer for one (window, step) pair.
pub fn kl_point(gamma: f64, alpha: f64, beta: f64, y: f64, beta_r: f64) -> f64 {
    let bracket = alpha * beta_r.ln() + autodiff::special::ln_gamma(alpha).unwrap()
        - alpha * beta.ln()
        + EULER_MASCHERONI * (alpha - 1.0)
        + (beta - beta_r) / beta_r;
    (y - gamma).abs() * bracket
}

/// Convert a reference scale picked in mg/dL (by convention, near the
/// maximum training glucose) into normalized variance units.
pub fn reference_scale_normalized(beta_r_mgdl: f64, glucose_std: f64) -> f64 {
    beta_r_mgdl / (glucose_std * glucose_std)
}

// ---------------------------------------------------------------------------
// Inference-side: per-window parameter vectors and derived quantities.

/// Per-horizon-step NIG tuple after the constraint mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidentialParams {
    pub gamma: Vec<f64>,
    pub nu: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Aleatoric / epistemic split of the predictive variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyDecomposition {
    pub aleatoric: f64,
    pub epistemic: f64,
    pub predictive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventDirection {
    Below,
    Above,
}

/// How per-step event probabilities combine into one window probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EventAggregation {
    /// Largest single-step probability; conservative and monotone.
    MaxStep,
    /// 1 - prod(1 - p_k), treating steps as independent.
    Complement,
}

impl EvidentialParams {
    /// Apply the scalar constraint mapping to one window's raw 4h head
    /// output (blocks ordered gamma, nu, alpha, beta).
    pub fn from_raw(raw: &[f64], horizon: usize) -> Result<Self> {
        if raw.len() != 4 * horizon {
            return Err(EvidentialError::Constraint(format!(
                "raw slice must hold {} values, got {}",
                4 * horizon,
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EvidentialError::NonFinite);
        }
        let block = |i: usize| &raw[i * horizon..(i + 1) * horizon];
        Ok(Self {
            gamma: block(0).to_vec(),
            nu: block(1).iter().map(|&v| softplus(v) + CONSTRAINT_FLOOR).collect(),
            alpha: block(2)
                .iter()
                .map(|&v| 1.0 + softplus(v) + CONSTRAINT_FLOOR)
                .collect(),
            beta: block(3).iter().map(|&v| softplus(v) + CONSTRAINT_FLOOR).collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.gamma.len()
    }

    /// Rescale from normalized units into mg/dL: location is shifted and
    /// scaled, beta picks up the squared glucose scale, nu and alpha are
    /// dimensionless.
    pub fn denormalize(&self, norm: &NormalizationParams) -> EvidentialParams {
        let s = norm.glucose_std();
        EvidentialParams {
            gamma: self.gamma.iter().map(|&g| norm.denorm_glucose(g)).collect(),
            nu: self.nu.clone(),
            alpha: self.alpha.clone(),
            beta: self.beta.iter().map(|&b| b * s * s).collect(),
        }
    }

    fn check_constraints(&self, step: usize) -> Result<()> {
        let (nu, alpha, beta) = (self.nu[step], self.alpha[step], self.beta[step]);
        if !(alpha > 1.0 && nu > 0.0 && beta > 0.0) {
            return Err(EvidentialError::Constraint(format!(
                "step {step}: need alpha > 1, nu > 0, beta > 0; got ({alpha}, {nu}, {beta})"
            )));
        }
        Ok(())
    }

    /// Marginal Student-t view of one horizon step: location gamma,
    /// scale sqrt(beta (1 + nu) / (alpha nu)), df = 2 alpha.
    pub fn student_t(&self, step: usize) -> Result<StudentT> {
        self.check_constraints(step)?;
        let (gamma, nu, alpha, beta) = (
            self.gamma[step],
            self.nu[step],
            self.alpha[step],
            self.beta[step],
        );
        let scale = (beta * (1.0 + nu) / (alpha * nu)).sqrt();
        Ok(StudentT::new(gamma, scale, 2.0 * alpha))
    }

    /// Aleatoric beta/(alpha-1), epistemic beta/((alpha-1) nu), and their
    /// sum, in the squared units of whatever scale the params carry.
    pub fn decompose(&self, step: usize) -> Result<UncertaintyDecomposition> {
        self.check_constraints(step)?;
        let (nu, alpha, beta) = (self.nu[step], self.alpha[step], self.beta[step]);
        let aleatoric = beta / (alpha - 1.0);
        let epistemic = beta / ((alpha - 1.0) * nu);
        Ok(UncertaintyDecomposition {
            aleatoric,
            epistemic,
            predictive: aleatoric + epistemic,
        })
    }

    /// Central predictive interval per horizon step at coverage `level`.
    pub fn predictive_interval(&self, level: f64) -> Result<Vec<(f64, f64)>> {
        if !(level > 0.0 && level < 1.0) {
            return Err(EvidentialError::BadLevel(level));
        }
        (0..self.horizon())
            .map(|k| Ok(self.student_t(k)?.central_interval(level)))
            .collect()
    }

    /// Per-step probability of crossing `threshold` in `direction`, and
    /// the per-window aggregate.
    pub fn event_probability(
        &self,
        threshold: f64,
        direction: EventDirection,
        aggregation: EventAggregation,
    ) -> Result<f64> {
        let mut probs = Vec::with_capacity(self.horizon());
        for k in 0..self.horizon() {
            let t = self.student_t(k)?;
            let below = t.cdf(threshold);
            probs.push(match direction {
                EventDirection::Below => below,
                EventDirection::Above => 1.0 - below,
            });
        }
        Ok(aggregate_event_probs(&probs, aggregation))
    }
}

pub fn aggregate_event_probs(probs: &[f64], aggregation: EventAggregation) -> f64 {
    match aggregation {
        EventAggregation::MaxStep => probs.iter().cloned().fold(0.0, f64::max),
        EventAggregation::Complement => {
            1.0 - probs.iter().map(|p| 1.0 - p).product::<f64>()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use autodiff::rng::SplitMix64;
    use autodiff::{Tape, Tensor};

    fn raw_tensor(tape: &Tape, raw: Vec<f64>, h: usize) -> Var<'_> {
        let b = raw.len() / (4 * h);
        tape.param(Tensor::new(vec![b, 4 * h], raw).unwrap())
    }

    fn random_params(rng: &mut SplitMix64, h: usize) -> EvidentialParams {
        EvidentialParams {
            gamma: (0..h).map(|_| rng.uniform(-2.0, 2.0)).collect(),
            nu: (0..h).map(|_| rng.uniform(0.2, 4.0)).collect(),
            alpha: (0..h).map(|_| rng.uniform(1.2, 5.0)).collect(),
            beta: (0..h).map(|_| rng.uniform(0.3, 3.0)).collect(),
        }
    }

    #[test]
    fn constrain_at_zero_hits_softplus_closed_form() {
        let p = EvidentialParams::from_raw(&[0.0, 0.0, 0.0, 0.0], 1).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(p.gamma[0], 0.0);
        assert_relative_eq!(p.nu[0], ln2 + 1e-6, max_relative = 1e-15);
        assert_relative_eq!(p.alpha[0], 1.0 + ln2 + 1e-6, max_relative = 1e-15);
        assert_relative_eq!(p.beta[0], ln2 + 1e-6, max_relative = 1e-15);
    }

    #[test]
    fn constrain_floors_saturated_negatives() {
        let p = EvidentialParams::from_raw(&[0.0, -40.0, -40.0, -40.0], 1).unwrap();
        assert!(p.nu[0] >= 1e-6 && p.nu[0] < 1.1e-6, "nu {}", p.nu[0]);
        assert!(p.beta[0] >= 1e-6 && p.beta[0] < 1.1e-6);
        assert!(p.alpha[0] > 1.0);
    }

    #[test]
    fn constrain_alpha_positive_branch() {
        let p = EvidentialParams::from_raw(&[0.0, 0.0, 10.0, 0.0], 1).unwrap();
        let want = 1.0 + softplus(10.0) + 1e-6;
        assert_relative_eq!(p.alpha[0], want, max_relative = 1e-15);
        assert_relative_eq!(p.alpha[0], 11.000_046_4, max_relative = 1e-7);
    }

    #[test]
    fn constrain_rejects_non_finite() {
        assert!(matches!(
            EvidentialParams::from_raw(&[f64::NAN, 0.0, 0.0, 0.0], 1),
            Err(EvidentialError::NonFinite)
        ));
    }

    #[test]
    fn nll_at_mode_with_unit_params_is_ln_pi() {
        // gamma = y, alpha = 3/2, nu = 1, beta = 1 -> loss = ln(pi)
        assert_relative_eq!(
            nll_point(0.0, 1.0, 1.5, 1.0, 0.0),
            std::f64::consts::PI.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn nll_grows_with_distance_from_location() {
        let mut last = f64::NEG_INFINITY;
        for i in 0..20 {
            let y = 0.25 * i as f64;
            let v = nll_point(0.0, 1.3, 2.1, 0.8, y);
            assert!(v > last, "nll must increase with |y - gamma|");
            last = v;
        }
    }

    #[test]
    fn nll_matches_student_t_log_density_oracle() {
        // Two independent formulas for the same marginal.
        let mut rng = SplitMix64::new(71);
        for _ in 0..200 {
            let p = random_params(&mut rng, 1);
            let y = p.gamma[0] + rng.uniform(-4.0, 4.0);
            let direct = nll_point(p.gamma[0], p.nu[0], p.alpha[0], p.beta[0], y);
            let via_t = -p.student_t(0).unwrap().log_pdf(y);
            assert_relative_eq!(direct, via_t, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn tape_nll_matches_scalar_route() {
        let tape = Tape::new();
        let raw = vec![0.3, -0.4, 0.8, 1.1, 0.2, 0.9, -0.2, 0.5];
        let v = raw_tensor(&tape, raw.clone(), 1); // batch 2, h 1
        let c = constrain_vars(v, 1).unwrap();
        let y = tape.constant(Tensor::new(vec![2, 1], vec![0.7, -0.3]).unwrap());
        let got = nll_loss_var(&c, y).unwrap().item();
        let p0 = EvidentialParams::from_raw(&raw[0..4], 1).unwrap();
        let p1 = EvidentialParams::from_raw(&raw[4..8], 1).unwrap();
        let want = 0.5
            * (nll_point(p0.gamma[0], p0.nu[0], p0.alpha[0], p0.beta[0], 0.7)
                + nll_point(p1.gamma[0], p1.nu[0], p1.alpha[0], p1.beta[0], -0.3));
        assert_relative_eq!(got, want, max_relative = 1e-13);
    }

    #[test]
    fn kl_zero_at_observation_equal_location() {
        assert_eq!(kl_point(1.5, 3.0, 0.7, 1.5, 2.0), 0.0);
    }

    #[test]
    fn kl_zero_exactly_at_reference_fixed_point() {
        // alpha = 1, beta = beta_r: the bracket vanishes identically.
        assert_eq!(kl_point(0.0, 1.0, 2.0, 5.0, 2.0), 0.0);
    }

    #[test]
    fn kl_worked_example() {
        // alpha=2, beta=1, beta_r=2, |y-gamma|=1:
        // log(beta_r^2 Gamma(2) / 1) + ge - 1/2 = ln 4 + 0.57722 - 0.5
        let want = 4f64.ln() + EULER_MASCHERONI - 0.5;
        assert_relative_eq!(kl_point(0.0, 2.0, 1.0, 1.0, 2.0), want, max_relative = 1e-12);
        assert_relative_eq!(want, 1.463_510, max_relative = 1e-6);
    }

    #[test]
    fn tape_kl_matches_scalar_route() {
        let tape = Tape::new();
        let raw = vec![0.1, 0.7, -0.3, 0.9];
        let v = raw_tensor(&tape, raw.clone(), 1);
        let c = constrain_vars(v, 1).unwrap();
        let y = tape.constant(Tensor::new(vec![1, 1], vec![1.9]).unwrap());
        let got = kl_regularizer_var(&c, y, 2.5).unwrap().item();
        let p = EvidentialParams::from_raw(&raw, 1).unwrap();
        let want = kl_point(p.gamma[0], p.alpha[0], p.beta[0], 1.9, 2.5);
        assert_relative_eq!(got, want, max_relative = 1e-13);
    }

    #[test]
    fn kl_rejects_bad_reference_scale() {
        let tape = Tape::new();
        let v = raw_tensor(&tape, vec![0.0; 4], 1);
        let c = constrain_vars(v, 1).unwrap();
        let y = tape.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        assert!(matches!(
            kl_regularizer_var(&c, y, 0.0),
            Err(EvidentialError::BadReferenceScale(_))
        ));
    }

    #[test]
    fn total_loss_composes() {
        let tape = Tape::new();
        let raw = vec![0.4, 0.2, 0.6, -0.1];
        let v = raw_tensor(&tape, raw, 1);
        let c = constrain_vars(v, 1).unwrap();
        let y = tape.constant(Tensor::new(vec![1, 1], vec![1.2]).unwrap());
        let nll = nll_loss_var(&c, y).unwrap().item();
        let kl = kl_regularizer_var(&c, y, 3.0).unwrap().item();
        let total = total_loss_var(&c, y, 3.0, 0.01).unwrap().item();
        assert_relative_eq!(total, nll + 0.01 * kl, max_relative = 1e-14);
        // zero coefficient -> pure data loss
        let total0 = total_loss_var(&c, y, 3.0, 0.0).unwrap().item();
        assert_eq!(total0, nll);
    }

    #[test]
    fn evidence_penalty_scalar_value_and_selection() {
        let tape = Tape::new();
        let raw = vec![0.0, 0.0, 0.0, 0.0];
        let v = raw_tensor(&tape, raw.clone(), 1);
        let c = constrain_vars(v, 1).unwrap();
        let y = tape.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let p = EvidentialParams::from_raw(&raw, 1).unwrap();
        let want = (2.0f64 - p.gamma[0]).abs() * (2.0 * p.nu[0] + p.alpha[0]);
        let got = evidence_regularizer_var(&c, y).unwrap().item();
        assert_relative_eq!(got, want, max_relative = 1e-14);
        // selecting the alternative swaps the penalty into the total
        let total = total_loss_with(&c, y, 3.0, 0.5, RegularizerKind::EvidencePenalty)
            .unwrap()
            .item();
        let nll = nll_loss_var(&c, y).unwrap().item();
        assert_relative_eq!(total, nll + 0.5 * want, max_relative = 1e-13);
    }

    #[test]
    fn decompose_closed_forms() {
        let p = EvidentialParams {
            gamma: vec![0.0],
            nu: vec![1.0],
            alpha: vec![2.0],
            beta: vec![1.0],
        };
        let d = p.decompose(0).unwrap();
        assert_eq!((d.aleatoric, d.epistemic, d.predictive), (1.0, 1.0, 2.0));

        let p = EvidentialParams {
            gamma: vec![0.0],
            nu: vec![2.0],
            alpha: vec![3.0],
            beta: vec![4.0],
        };
        let d = p.decompose(0).unwrap();
        assert_relative_eq!(d.predictive, 3.0, max_relative = 1e-15);

        // nu -> infinity: epistemic vanishes
        let p = EvidentialParams {
            gamma: vec![0.0],
            nu: vec![1e9],
            alpha: vec![2.0],
            beta: vec![1.0],
        };
        let d = p.decompose(0).unwrap();
        assert!(d.epistemic < 1e-8);
        assert_relative_eq!(d.predictive, d.aleatoric, max_relative = 1e-8);
    }

    #[test]
    fn decompose_requires_alpha_above_one() {
        let p = EvidentialParams {
            gamma: vec![0.0],
            nu: vec![1.0],
            alpha: vec![1.0],
            beta: vec![1.0],
        };
        assert!(p.decompose(0).is_err());
    }

    #[test]
    fn student_t_variance_equals_predictive_variance() {
        let mut rng = SplitMix64::new(83);
        for _ in 0..200 {
            let p = random_params(&mut rng, 1);
            let t = p.student_t(0).unwrap();
            let d = p.decompose(0).unwrap();
            assert_relative_eq!(t.variance(), d.predictive, max_relative = 1e-12);
        }
    }

    #[test]
    fn interval_collapses_and_widens() {
        let p = EvidentialParams {
            gamma: vec![1.0],
            nu: vec![1.5],
            alpha: vec![2.5],
            beta: vec![0.8],
        };
        let tiny = p.predictive_interval(1e-9).unwrap()[0];
        assert_relative_eq!(tiny.0, 1.0, epsilon = 1e-6);
        assert_relative_eq!(tiny.1, 1.0, epsilon = 1e-6);
        // nesting
        let mut prev = tiny;
        for level in [0.2, 0.5, 0.8, 0.95] {
            let iv = p.predictive_interval(level).unwrap()[0];
            assert!(iv.0 <= prev.0 && iv.1 >= prev.1, "intervals must nest");
            prev = iv;
        }
        assert!(p.predictive_interval(0.0).is_err());
        assert!(p.predictive_interval(1.0).is_err());
    }

    #[test]
    fn interval_gaussian_limit_and_df3_halfwidth() {
        // alpha huge -> normal quantile 1.95996 x scale at 95%
        let p = EvidentialParams {
            gamma: vec![0.0],
            nu: vec![1.0],
            alpha: vec![1e6],
            beta: vec![1.0],
        };
        let t = p.student_t(0).unwrap();
        let (lo, hi) = p.predictive_interval(0.95).unwrap()[0];
        let half = (hi - lo) / 2.0;
        assert_relative_eq!(half, 1.959_964 * t.scale, max_relative = 1e-3);

        // alpha = 3/2 (df 3) at 90%: half-width 2.35336 x scale
        let p = EvidentialParams {
            gamma: vec![0.0],
            nu: vec![2.0],
            alpha: vec![1.5],
            beta: vec![0.7],
        };
        let t = p.student_t(0).unwrap();
        let (lo, hi) = p.predictive_interval(0.90).unwrap()[0];
        assert_relative_eq!((hi - lo) / 2.0, 2.353_36 * t.scale, max_relative = 1e-5);
    }

    #[test]
    fn event_probability_symmetry_and_limits() {
        // location on the threshold -> 0.5 either direction
        let p = EvidentialParams {
            gamma: vec![70.0],
            nu: vec![1.0],
            alpha: vec![2.0],
            beta: vec![9.0],
        };
        let below = p
            .event_probability(70.0, EventDirection::Below, EventAggregation::MaxStep)
            .unwrap();
        assert_relative_eq!(below, 0.5, epsilon = 1e-12);

        // tiny scale far from the threshold -> probability ~ 0
        let p = EvidentialParams {
            gamma: vec![120.0],
            nu: vec![1e6],
            alpha: vec![1e4],
            beta: vec![1e-6],
        };
        let below = p
            .event_probability(70.0, EventDirection::Below, EventAggregation::MaxStep)
            .unwrap();
        assert!(below < 1e-12, "{below}");
    }

    #[test]
    fn event_probability_t_cdf_value() {
        // gamma 80, scale 10, df 4, threshold 70 below -> T(-1; 4)
        // back out (nu, alpha, beta) giving that scale: df=4 -> alpha=2;
        // scale^2 = beta (1+nu)/(alpha nu) = 100 with nu=1 -> beta = 100.
        let p = EvidentialParams {
            gamma: vec![80.0],
            nu: vec![1.0],
            alpha: vec![2.0],
            beta: vec![100.0],
        };
        let t = p.student_t(0).unwrap();
        assert_relative_eq!(t.scale, 10.0, max_relative = 1e-12);
        let below = p
            .event_probability(70.0, EventDirection::Below, EventAggregation::MaxStep)
            .unwrap();
        assert_relative_eq!(below, 0.186_950_5, max_relative = 1e-6);
    }

    #[test]
    fn aggregation_rules() {
        let probs = [0.1, 0.4, 0.25];
        assert_eq!(aggregate_event_probs(&probs, EventAggregation::MaxStep), 0.4);
        let complement = 1.0 - 0.9 * 0.6 * 0.75;
        assert_relative_eq!(
            aggregate_event_probs(&probs, EventAggregation::Complement),
            complement,
            max_relative = 1e-15
        );
        // complement dominates max
        assert!(complement >= 0.4);
    }

    #[test]
    fn denormalize_scales_location_and_beta() {
        let norm = NormalizationParams {
            mean: [120.0, 0.0, 0.0, 0.0],
            std: [35.0, 1.0, 1.0, 1.0],
        };
        let p = EvidentialParams {
            gamma: vec![0.5],
            nu: vec![1.3],
            alpha: vec![2.2],
            beta: vec![0.9],
        };
        let d = p.denormalize(&norm);
        assert_relative_eq!(d.gamma[0], 120.0 + 0.5 * 35.0, max_relative = 1e-15);
        assert_relative_eq!(d.beta[0], 0.9 * 35.0 * 35.0, max_relative = 1e-15);
        assert_eq!(d.nu, p.nu);
        assert_eq!(d.alpha, p.alpha);
        // predictive std scales linearly with the glucose std
        let sd_norm = p.decompose(0).unwrap().predictive.sqrt();
        let sd_mgdl = d.decompose(0).unwrap().predictive.sqrt();
        assert_relative_eq!(sd_mgdl, sd_norm * 35.0, max_relative = 1e-12);
    }

    #[test]
    fn density_self_normalizes_under_quadrature() {
        // Midpoint quadrature of the marginal density over gamma +/- 60
        // scales. Heavy df=3 tails put ~1e-5 of mass outside that range,
        // so unit-mass at 1e-6 is asserted from df 4 up; df 3 is checked
        // against the analytic in-range mass instead.
        let cases = [
            (0.4, 1.0, 2.0, 0.7),  // df 4
            (-1.0, 0.5, 3.2, 1.4), // df 6.4
            (2.0, 2.0, 5.0, 0.3),  // df 10
        ];
        for &(gamma, nu, alpha, beta) in &cases {
            let p = EvidentialParams {
                gamma: vec![gamma],
                nu: vec![nu],
                alpha: vec![alpha],
                beta: vec![beta],
            };
            let t = p.student_t(0).unwrap();
            let mass = quadrature_mass(&p, 60.0);
            assert!(
                (mass - 1.0).abs() < 1e-6,
                "df {} mass {mass}",
                t.df
            );
        }
        let p = EvidentialParams {
            gamma: vec![0.0],
            nu: vec![1.0],
            alpha: vec![1.5],
            beta: vec![1.0],
        };
        let t = p.student_t(0).unwrap();
        let expect = t.cdf(t.location + 60.0 * t.scale) - t.cdf(t.location - 60.0 * t.scale);
        let mass = quadrature_mass(&p, 60.0);
        assert!((mass - expect).abs() < 1e-7, "df 3: {mass} vs {expect}");
    }

    fn quadrature_mass(p: &EvidentialParams, spread: f64) -> f64 {
        let t = p.student_t(0).unwrap();
        let (a, b) = (t.location - spread * t.scale, t.location + spread * t.scale);
        let n = 400_000;
        let h = (b - a) / n as f64;
        (0..n)
            .map(|i| {
                let y = a + (i as f64 + 0.5) * h;
                (-nll_point(p.gamma[0], p.nu[0], p.alpha[0], p.beta[0], y)).exp() * h
            })
            .sum()
    }

    #[test]
    fn own_distribution_draws_are_calibrated() {
        // 100k inverse-CDF draws from a fixed marginal; central-interval
        // coverage at 50/80/90/95% must sit within 0.01 of nominal.
        let p = EvidentialParams {
            gamma: vec![1.3],
            nu: vec![0.8],
            alpha: vec![2.4],
            beta: vec![1.7],
        };
        let t = p.student_t(0).unwrap();
        let mut rng = SplitMix64::new(2024);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| t.quantile(rng.uniform(1e-9, 1.0 - 1e-9)))
            .collect();
        for level in [0.5, 0.8, 0.9, 0.95] {
            let (lo, hi) = t.central_interval(level);
            let covered = draws.iter().filter(|&&y| lo <= y && y <= hi).count();
            let rate = covered as f64 / n as f64;
            assert!(
                (rate - level).abs() <= 0.01,
                "level {level}: coverage {rate}"
            );
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // Both losses, all four blocks, random draws.
        let mut rng = SplitMix64::new(97);
        let h = 2;
        let raw: Vec<f64> = (0..2 * 4 * h).map(|_| rng.uniform(-1.0, 1.5)).collect();
        let y_data: Vec<f64> = (0..2 * h).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let beta_r = 2.3;

        let eval = |raw: &[f64], which: u8| -> f64 {
            let tape = Tape::new();
            let v = tape.param(Tensor::new(vec![2, 4 * h], raw.to_vec()).unwrap());
            let c = constrain_vars(v, h).unwrap();
            let y = tape.constant(Tensor::new(vec![2, h], y_data.clone()).unwrap());
            match which {
                0 => nll_loss_var(&c, y).unwrap().item(),
                _ => kl_regularizer_var(&c, y, beta_r).unwrap().item(),
            }
        };
        for which in [0u8, 1] {
            let tape = Tape::new();
            let v = tape.param(Tensor::new(vec![2, 4 * h], raw.clone()).unwrap());
            let c = constrain_vars(v, h).unwrap();
            let y = tape.constant(Tensor::new(vec![2, h], y_data.clone()).unwrap());
            let loss = match which {
                0 => nll_loss_var(&c, y).unwrap(),
                _ => kl_regularizer_var(&c, y, beta_r).unwrap(),
            };
            tape.backward(loss).unwrap();
            let grad = tape.grad(v).unwrap();
            for i in 0..raw.len() {
                let hstep = 1e-5 * raw[i].abs().max(1.0);
                let mut up = raw.clone();
                up[i] += hstep;
                let mut down = raw.clone();
                down[i] -= hstep;
                let fd = (eval(&up, which) - eval(&down, which)) / (2.0 * hstep);
                let got = grad.data()[i];
                let denom = fd.abs().max(got.abs()).max(1e-2);
                assert!(
                    (fd - got).abs() <= 1e-4 * denom,
                    "loss {which} coord {i}: analytic {got} vs fd {fd}"
                );
            }
        }
    }
}
