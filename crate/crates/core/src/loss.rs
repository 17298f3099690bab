//! Limit-based loss and the dynamic limit controller.
//!
//! Positive triples are pushed below the limit `L⁺ = γ₁ − δ` and negative
//! triples above `L⁻ = γ₂ − δ′`:
//!
//! ```text
//! loss = β₁ Σ⁺ [f(τ) − L⁺]₊ + β₂ Σ⁻ [L⁻ − f(τ′)]₊
//! ```
//!
//! Between epochs the controller moves `δ` and `δ′` by `ξ` depending on
//! which side of the loss vanished. An update that would leave `L⁻ < L⁺` is
//! skipped, so the effective margin never turns negative.

use crate::error::{Error, Result};

/// Loss hyperparameters before any controller state exists.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub xi: f64,
    pub threshold: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            gamma1: 2.0,
            gamma2: 2.0,
            beta1: 1.0,
            beta2: 1.0,
            xi: 0.1,
            threshold: 0.05,
        }
    }
}

impl LossParams {
    pub fn gamma1(mut self, v: f64) -> Self {
        self.gamma1 = v;
        self
    }

    pub fn gamma2(mut self, v: f64) -> Self {
        self.gamma2 = v;
        self
    }

    pub fn beta1(mut self, v: f64) -> Self {
        self.beta1 = v;
        self
    }

    pub fn beta2(mut self, v: f64) -> Self {
        self.beta2 = v;
        self
    }

    pub fn xi(mut self, v: f64) -> Self {
        self.xi = v;
        self
    }

    pub fn threshold(mut self, v: f64) -> Self {
        self.threshold = v;
        self
    }

    pub fn build(self) -> Result<LossState> {
        LossState::new(self)
    }
}

/// Loss hyperparameters plus the controller's shifts `δ`, `δ′`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossState {
    params: LossParams,
    delta: f64,
    delta_prime: f64,
}

/// Values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    /// Unweighted positive hinge sum.
    pub pos: f64,
    /// Unweighted negative hinge sum.
    pub neg: f64,
    /// `β₁·pos + β₂·neg`.
    pub total: f64,
}

impl std::ops::AddAssign for LossValue {
    fn add_assign(&mut self, rhs: Self) {
        self.pos += rhs.pos;
        self.neg += rhs.neg;
        self.total += rhs.total;
    }
}

/// What one controller call did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControllerStep {
    pub delta_raised: bool,
    pub delta_prime_raised: bool,
    pub delta_prime_lowered: bool,
    /// Updates skipped because they would have made `L⁻ < L⁺`.
    pub rejected: u8,
}

impl LossState {
    pub fn builder() -> LossParams {
        LossParams::default()
    }

    pub fn new(params: LossParams) -> Result<Self> {
        let LossParams {
            gamma1,
            gamma2,
            beta1,
            beta2,
            xi,
            threshold,
        } = params;
        let all = [gamma1, gamma2, beta1, beta2, xi, threshold];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("loss parameters must be finite: {params:?}")));
        }
        if gamma1 < 0.0 || gamma2 < 0.0 {
            return Err(Error::Config("gamma1 and gamma2 must be nonnegative".into()));
        }
        if gamma2 < gamma1 {
            return Err(Error::Config(format!(
                "gamma2 ({gamma2}) must be at least gamma1 ({gamma1})"
            )));
        }
        if beta1 <= 0.0 || beta2 <= 0.0 {
            return Err(Error::Config("beta1 and beta2 must be positive".into()));
        }
        if xi < 0.0 {
            return Err(Error::Config("xi must be nonnegative (0 freezes the limits)".into()));
        }
        if threshold < 0.0 {
            return Err(Error::Config("threshold must be nonnegative".into()));
        }
        Ok(LossState {
            params,
            delta: 0.0,
            delta_prime: 0.0,
        })
    }

    /// Restores a state with explicit shifts, e.g. from a checkpoint.
    pub fn with_shifts(params: LossParams, delta: f64, delta_prime: f64) -> Result<Self> {
        let mut state = Self::new(params)?;
        if !delta.is_finite() || !delta_prime.is_finite() || delta < 0.0 {
            return Err(Error::Config(format!("invalid limit shifts δ={delta}, δ′={delta_prime}")));
        }
        state.delta = delta;
        state.delta_prime = delta_prime;
        if state.negative_limit() < state.positive_limit() {
            return Err(Error::Config("restored shifts violate L⁻ ≥ L⁺".into()));
        }
        Ok(state)
    }

    pub fn params(&self) -> &LossParams {
        &self.params
    }

    pub fn gamma1(&self) -> f64 {
        self.params.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.params.gamma2
    }

    pub fn beta1(&self) -> f64 {
        self.params.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.params.beta2
    }

    pub fn xi(&self) -> f64 {
        self.params.xi
    }

    pub fn threshold(&self) -> f64 {
        self.params.threshold
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }

    /// Margin `α = γ₂ − γ₁`.
    pub fn alpha_margin(&self) -> f64 {
        self.params.gamma2 - self.params.gamma1
    }

    /// `L⁺ = γ₁ − δ`.
    pub fn positive_limit(&self) -> f64 {
        self.params.gamma1 - self.delta
    }

    /// `L⁻ = γ₂ − δ′`.
    pub fn negative_limit(&self) -> f64 {
        self.params.gamma2 - self.delta_prime
    }

    /// Hinge of one positive score.
    #[inline]
    pub fn positive_hinge(&self, score: f64) -> f64 {
        (score - self.positive_limit()).max(0.0)
    }

    /// Hinge of one negative score.
    #[inline]
    pub fn negative_hinge(&self, score: f64) -> f64 {
        (self.negative_limit() - score).max(0.0)
    }

    fn limits_ordered(&self, delta: f64, delta_prime: f64) -> bool {
        self.params.gamma2 - delta_prime >= self.params.gamma1 - delta
    }

    /// One controller step from the epoch-aggregate losses.
    ///
    /// Zero tests are exact: hinge sums are exactly zero when every hinge is
    /// inactive.
    pub fn update(&mut self, loss_pos: f64, loss_neg: f64) -> ControllerStep {
        let xi = self.params.xi;
        let mut step = ControllerStep::default();
        if loss_pos == 0.0 && self.params.gamma1 >= xi {
            let delta = self.delta + xi;
            if self.limits_ordered(delta, self.delta_prime) {
                self.delta = delta;
                step.delta_raised = true;
            } else {
                step.rejected += 1;
            }
            if loss_neg > self.params.threshold && self.params.gamma2 >= xi {
                let delta_prime = self.delta_prime + xi;
                if self.limits_ordered(self.delta, delta_prime) {
                    self.delta_prime = delta_prime;
                    step.delta_prime_raised = true;
                } else {
                    step.rejected += 1;
                }
            }
        }
        if loss_neg == 0.0 {
            let delta_prime = self.delta_prime - xi;
            if self.limits_ordered(self.delta, delta_prime) {
                self.delta_prime = delta_prime;
                step.delta_prime_lowered = true;
            } else {
                step.rejected += 1;
            }
        }
        step
    }
}

/// Evaluates the loss over explicit score lists. An empty side contributes 0.
pub fn limit_loss(pos_scores: &[f64], neg_scores: &[f64], state: &LossState) -> LossValue {
    let pos: f64 = pos_scores.iter().map(|&s| state.positive_hinge(s)).sum();
    let neg: f64 = neg_scores.iter().map(|&s| state.negative_hinge(s)).sum();
    LossValue {
        pos,
        neg,
        total: state.beta1() * pos + state.beta2() * neg,
    }
}

/// Functional form of [`LossState::update`].
pub fn update_limits(state: &LossState, loss_pos: f64, loss_neg: f64) -> LossState {
    let mut next = state.clone();
    next.update(loss_pos, loss_neg);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(g1: f64, g2: f64) -> LossState {
        LossState::builder().gamma1(g1).gamma2(g2).build().unwrap()
    }

    #[test]
    fn inactive_positive_hinge() {
        let v = limit_loss(&[0.5], &[], &state(2.0, 2.0));
        assert_eq!(v.pos, 0.0);
    }

    #[test]
    fn negative_hinge_hand_value() {
        let v = limit_loss(&[], &[1.0], &state(2.0, 2.0));
        assert_eq!(v.neg, 1.0);
        assert_eq!(v.total, 1.0);
    }

    #[test]
    fn total_hand_value() {
        let v = limit_loss(&[3.0], &[0.0], &state(2.0, 2.0));
        assert_eq!((v.pos, v.neg, v.total), (1.0, 2.0, 3.0));
    }

    #[test]
    fn betas_weight_the_sides() {
        let s = LossState::builder().beta1(5.0).beta2(1.0).build().unwrap();
        let v = limit_loss(&[3.0], &[0.0], &s);
        assert_eq!(v.total, 5.0 * 1.0 + 2.0);
    }

    #[test]
    fn empty_inputs_give_zero() {
        assert_eq!(limit_loss(&[], &[], &state(1.0, 2.0)), LossValue::default());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(state_params(LossState::builder().gamma1(3.0).gamma2(2.0)).is_err());
        assert!(state_params(LossState::builder().beta1(0.0)).is_err());
        assert!(state_params(LossState::builder().xi(-0.1)).is_err());
        assert!(state_params(LossState::builder().gamma1(f64::NAN)).is_err());
    }

    fn state_params(p: LossParams) -> Result<LossState> {
        p.build()
    }

    #[test]
    fn alpha_margin_reported() {
        assert_eq!(state(1.5, 2.0).alpha_margin(), 0.5);
    }

    #[test]
    fn both_losses_zero_moves_both_shifts() {
        let mut s = state(2.0, 2.0);
        let step = s.update(0.0, 0.0);
        assert!(step.delta_raised && step.delta_prime_lowered && !step.delta_prime_raised);
        assert_eq!((s.delta(), s.delta_prime()), (0.1, -0.1));
    }

    #[test]
    fn no_branch_leaves_state_unchanged() {
        let s = state(2.0, 2.0);
        assert_eq!(update_limits(&s, 0.4, 0.2), s);
    }

    #[test]
    fn negative_above_threshold_raises_both() {
        let s = update_limits(&state(2.0, 2.0), 0.0, 0.06);
        assert_eq!((s.delta(), s.delta_prime()), (0.1, 0.1));
        assert_eq!(s.positive_limit(), s.negative_limit());
    }

    #[test]
    fn small_gamma_blocks_the_shift() {
        // γ₁ < ξ: the δ branch (and the nested δ′ raise) is skipped.
        let mut s = LossState::builder().gamma1(0.05).gamma2(0.05).build().unwrap();
        let step = s.update(0.0, 1.0);
        assert_eq!(step, ControllerStep::default());
        assert_eq!((s.delta(), s.delta_prime()), (0.0, 0.0));
    }

    #[test]
    fn guard_predicate_and_restore() {
        let s = state(2.0, 2.0);
        assert!(s.limits_ordered(0.1, 0.1));
        assert!(!s.limits_ordered(0.0, 0.1));
        assert!(LossState::with_shifts(LossParams::default(), 0.0, 0.1).is_err());
        assert!(LossState::with_shifts(LossParams::default(), 0.3, 0.1).is_ok());
    }

    proptest! {
        #[test]
        fn controller_step_invariants(
            g1 in 0.0f64..3.0, extra in 0.0f64..2.0, xi in 0.0f64..0.5,
            th in 0.0f64..0.2, steps in prop::collection::vec((0u8..3, 0u8..3), 1..40),
        ) {
            let mut s = LossState::builder().gamma1(g1).gamma2(g1 + extra).xi(xi).threshold(th).build().unwrap();
            for (p, n) in steps {
                let lp = [0.0, th / 2.0, 1.0][p as usize];
                let ln = [0.0, th / 2.0, th + 1.0][n as usize];
                let prev = s.clone();
                s.update(lp, ln);
                prop_assert!(s.delta() == prev.delta() || s.delta() == prev.delta() + xi);
                let dp = s.delta_prime();
                prop_assert!(dp == prev.delta_prime() || dp == prev.delta_prime() + xi || dp == prev.delta_prime() - xi);
                prop_assert!(s.delta() >= prev.delta());
                prop_assert!(s.negative_limit() >= s.positive_limit());
            }
        }

        #[test]
        fn zero_xi_freezes_the_controller(lp in 0.0f64..1.0, ln in 0.0f64..1.0, zero_p in any::<bool>(), zero_n in any::<bool>()) {
            let mut s = LossState::builder().xi(0.0).build().unwrap();
            for _ in 0..5 {
                s.update(if zero_p { 0.0 } else { lp }, if zero_n { 0.0 } else { ln });
            }
            prop_assert_eq!(s.delta(), 0.0);
            prop_assert_eq!(s.delta_prime(), 0.0);
        }

        #[test]
        fn zero_total_iff_all_scores_on_the_right_side(
            pos in prop::collection::vec(-2.0f64..4.0, 0..6),
            neg in prop::collection::vec(-2.0f64..4.0, 0..6),
        ) {
            let s = state(1.0, 2.0);
            let v = limit_loss(&pos, &neg, &s);
            let ok = pos.iter().all(|&x| x <= s.positive_limit()) && neg.iter().all(|&x| x >= s.negative_limit());
            prop_assert_eq!(v.total == 0.0, ok);
        }

        #[test]
        fn loss_is_convex_in_each_score(a in -3.0f64..5.0, b in -3.0f64..5.0, lam in 0.0f64..1.0, negative in any::<bool>()) {
            let s = state(1.0, 2.0);
            let f = |x: f64| if negative { limit_loss(&[], &[x], &s).total } else { limit_loss(&[x], &[], &s).total };
            let mid = lam * a + (1.0 - lam) * b;
            prop_assert!(f(mid) <= lam * f(a) + (1.0 - lam) * f(b) + 1e-12);
        }
    }
}
