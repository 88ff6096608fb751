//! Constants appearing in the finite-sample and convergence bounds.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConstants {
    /// Reward bound `C_r`.
    pub c_r: f64,
    /// Penalty bound `C_u`.
    pub c_u: f64,
    /// `(C_r + C_u + ln|A|) / (1 − γ)`.
    pub c_v: f64,
    /// Largest `‖∇_θ r‖` observed along a run.
    pub l_r_empirical: f64,
    /// `1 + 1/√(ln(1/δ̃))` with `δ̃ = δ/|Ω|`.
    pub c_delta: f64,
}

impl TheoryConstants {
    pub fn new(c_r: f64, c_u: f64, n_actions: usize, discount: f64, l_r_empirical: f64, delta: f64, omega: usize) -> Self {
        Self {
            c_r,
            c_u,
            c_v: mlirl_core::irl::value_bound(c_r, c_u, n_actions, discount),
            l_r_empirical,
            c_delta: concentration_constant(delta, omega),
        }
    }
}

/// `1 + 1/√(ln(|Ω|/δ))`.
pub fn concentration_constant(delta: f64, omega: usize) -> f64 {
    1.0 + 1.0 / (omega as f64 / delta).ln().sqrt()
}

/// `c · √(|S^E|/N · ln(|Ω|/δ))`: high-probability bound on `max_{Ω} ‖P − P̂‖₁`
/// with `N` samples per expert-visited pair.
pub fn mismatch_bound(n_per_pair: usize, expert_states: usize, omega: usize, delta: f64) -> f64 {
    let log_term = (omega as f64 / delta).ln();
    concentration_constant(delta, omega) * (expert_states as f64 / n_per_pair as f64 * log_term).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_bound_formula() {
        let t = TheoryConstants::new(1.0, 0.5, 3, 0.9, 0.0, 0.1, 18);
        assert_eq!(t.c_v, (1.0 + 0.5 + 3f64.ln()) / (1.0 - 0.9));
    }

    #[test]
    fn bound_values() {
        // |Ω| = 18, δ = 0.1: ln 180 = 5.19296
        let c = concentration_constant(0.1, 18);
        assert!((c - (1.0 + 1.0 / 180f64.ln().sqrt())).abs() < 1e-15);
        let b = mismatch_bound(100, 6, 18, 0.1);
        assert!((b - c * (0.06 * 180f64.ln()).sqrt()).abs() < 1e-15);
        // quadrupling N halves the bound
        assert!((mismatch_bound(400, 6, 18, 0.1) * 2.0 - b).abs() < 1e-15);
    }
}
