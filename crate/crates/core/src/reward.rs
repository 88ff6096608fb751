//! Bounded, differentiable reward parameterisations `r(s, a; θ)`.
//!
//! Every kind ends in a `C_r · tanh(·)` squash, so `|r| ≤ C_r` holds for any
//! parameter vector. The parameter vector is always passed in explicitly;
//! a [`RewardModel`] only describes the architecture and the features.

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::mdp::Trajectory;

/// Hidden width of the default two-layer network.
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// One free parameter per `(s, a)`.
    Tabular,
    /// `⟨θ, φ(s, a)⟩`.
    Linear,
    /// `w₂ · tanh(W₁ φ(s, a) + b₁) + b₂`.
    Mlp2 { hidden: usize },
}

impl RewardKind {
    pub fn name(&self) -> &'static str {
        match self {
            RewardKind::Tabular => "tabular",
            RewardKind::Linear => "linear",
            RewardKind::Mlp2 { .. } => "mlp2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    kind: RewardKind,
    /// `φ(s, a)`, `[S, A, F]`. One-hot for the tabular kind.
    features: Array3<f64>,
    c_r: f64,
}

fn one_hot(n_states: usize, n_actions: usize) -> Array3<f64> {
    let mut phi = Array3::zeros((n_states, n_actions, n_states * n_actions));
    for s in 0..n_states {
        for a in 0..n_actions {
            phi[[s, a, s * n_actions + a]] = 1.0;
        }
    }
    phi
}

impl RewardModel {
    fn build(kind: RewardKind, features: Array3<f64>, c_r: f64) -> Result<Self> {
        if !(c_r > 0.0) || !c_r.is_finite() {
            return Err(invalid(format!("reward bound {c_r} must be positive and finite")));
        }
        let (s, a, f) = features.dim();
        if s == 0 || a == 0 || f == 0 {
            return Err(invalid("feature tensor must be non-empty"));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        if let RewardKind::Mlp2 { hidden } = kind {
            if hidden == 0 {
                return Err(invalid("hidden width must be positive"));
            }
        }
        Ok(Self { kind, features, c_r })
    }

    pub fn tabular(n_states: usize, n_actions: usize, c_r: f64) -> Result<Self> {
        Self::build(RewardKind::Tabular, one_hot(n_states, n_actions), c_r)
    }

    pub fn linear(features: Array3<f64>, c_r: f64) -> Result<Self> {
        Self::build(RewardKind::Linear, features, c_r)
    }

    /// Linear reward over one-hot `(s, a)` features; same tables as [`RewardModel::tabular`].
    pub fn linear_one_hot(n_states: usize, n_actions: usize, c_r: f64) -> Result<Self> {
        Self::build(RewardKind::Linear, one_hot(n_states, n_actions), c_r)
    }

    pub fn mlp2(features: Array3<f64>, hidden: usize, c_r: f64) -> Result<Self> {
        Self::build(RewardKind::Mlp2 { hidden }, features, c_r)
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    pub fn c_r(&self) -> f64 {
        self.c_r
    }

    pub fn features(&self) -> &Array3<f64> {
        &self.features
    }

    pub fn n_states(&self) -> usize {
        self.features.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.features.dim().1
    }

    pub fn n_features(&self) -> usize {
        self.features.dim().2
    }

    /// Length of `θ`.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            RewardKind::Tabular | RewardKind::Linear => self.n_features(),
            RewardKind::Mlp2 { hidden } => hidden * self.n_features() + 2 * hidden + 1,
        }
    }

    pub fn zero_params(&self) -> Array1<f64> {
        Array1::zeros(self.param_dim())
    }

    fn check(&self, theta: &Array1<f64>) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(dim(format!(
                "{} reward expects {} parameters, got {}",
                self.kind.name(),
                self.param_dim(),
                theta.len()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(invalid("reward parameters must be finite"));
        }
        Ok(())
    }

    fn check_pair(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.n_states() || a >= self.n_actions() {
            return Err(invalid(format!("pair ({s}, {a}) out of range")));
        }
        Ok(())
    }

    /// Hidden activations of the network, `tanh(W₁ φ + b₁)`.
    fn hidden(&self, theta: &Array1<f64>, phi: ArrayView1<f64>, hidden: usize) -> Array1<f64> {
        let f = self.n_features();
        Array1::from_shape_fn(hidden, |j| {
            let row = theta.slice(ndarray::s![j * f..(j + 1) * f]);
            (row.dot(&phi) + theta[hidden * f + j]).tanh()
        })
    }

    /// Value before the final squash.
    fn pre_activation(&self, theta: &Array1<f64>, s: usize, a: usize) -> f64 {
        let phi = self.features.slice(ndarray::s![s, a, ..]);
        match self.kind {
            RewardKind::Tabular | RewardKind::Linear => theta.dot(&phi),
            RewardKind::Mlp2 { hidden } => {
                let f = self.n_features();
                let h = self.hidden(theta, phi, hidden);
                let w2 = theta.slice(ndarray::s![hidden * f + hidden..hidden * f + 2 * hidden]);
                w2.dot(&h) + theta[hidden * f + 2 * hidden]
            }
        }
    }

    fn pre_activation_gradient(&self, theta: &Array1<f64>, s: usize, a: usize) -> Array1<f64> {
        let phi = self.features.slice(ndarray::s![s, a, ..]);
        match self.kind {
            RewardKind::Tabular | RewardKind::Linear => phi.to_owned(),
            RewardKind::Mlp2 { hidden } => {
                let f = self.n_features();
                let h = self.hidden(theta, phi, hidden);
                let w2_at = hidden * f + hidden;
                let mut g = Array1::zeros(self.param_dim());
                for j in 0..hidden {
                    let back = theta[w2_at + j] * (1.0 - h[j] * h[j]);
                    g.slice_mut(ndarray::s![j * f..(j + 1) * f]).scaled_add(back, &phi);
                    g[hidden * f + j] = back;
                    g[w2_at + j] = h[j];
                }
                g[hidden * f + 2 * hidden] = 1.0;
                g
            }
        }
    }

    /// `r(s, a; θ)`.
    pub fn value(&self, theta: &Array1<f64>, s: usize, a: usize) -> Result<f64> {
        self.check(theta)?;
        self.check_pair(s, a)?;
        Ok(self.c_r * self.pre_activation(theta, s, a).tanh())
    }

    /// Full reward table `r(·, ·; θ)`.
    pub fn evaluate(&self, theta: &Array1<f64>) -> Result<Array2<f64>> {
        self.check(theta)?;
        Ok(Array2::from_shape_fn((self.n_states(), self.n_actions()), |(s, a)| {
            self.c_r * self.pre_activation(theta, s, a).tanh()
        }))
    }

    /// `∇_θ r(s, a; θ)`.
    pub fn gradient(&self, theta: &Array1<f64>, s: usize, a: usize) -> Result<Array1<f64>> {
        self.check(theta)?;
        self.check_pair(s, a)?;
        Ok(self.gradient_unchecked(theta, s, a))
    }

    fn gradient_unchecked(&self, theta: &Array1<f64>, s: usize, a: usize) -> Array1<f64> {
        let t = self.pre_activation(theta, s, a).tanh();
        self.pre_activation_gradient(theta, s, a) * (self.c_r * (1.0 - t * t))
    }

    /// `Σ_{s,a} w(s, a) ∇_θ r(s, a; θ)`.
    pub fn weighted_gradient(&self, theta: &Array1<f64>, weights: &Array2<f64>) -> Result<Array1<f64>> {
        self.check(theta)?;
        if weights.dim() != (self.n_states(), self.n_actions()) {
            return Err(dim("gradient weights must be an [S, A] table"));
        }
        let mut g = Array1::zeros(self.param_dim());
        for ((s, a), &w) in weights.indexed_iter() {
            if w != 0.0 {
                g.scaled_add(w, &self.gradient_unchecked(theta, s, a));
            }
        }
        Ok(g)
    }

    /// Jacobian `[S·A, dim θ]`, row `s·A + a` holding `∇_θ r(s, a; θ)`.
    pub fn jacobian(&self, theta: &Array1<f64>) -> Result<Array2<f64>> {
        self.check(theta)?;
        let (n_s, n_a) = (self.n_states(), self.n_actions());
        let mut jac = Array2::zeros((n_s * n_a, self.param_dim()));
        for s in 0..n_s {
            for a in 0..n_a {
                jac.row_mut(s * n_a + a).assign(&self.gradient_unchecked(theta, s, a));
            }
        }
        Ok(jac)
    }

    /// `h(θ; τ) = Σ_t γ^t ∇_θ r(s_t, a_t; θ)`.
    pub fn cumulative_gradient(&self, theta: &Array1<f64>, trajectory: &Trajectory, discount: f64) -> Result<Array1<f64>> {
        if trajectory.is_empty() {
            return Err(invalid("trajectory must be non-empty"));
        }
        let mut weights = Array2::zeros((self.n_states(), self.n_actions()));
        let mut w = 1.0;
        for &(s, a) in trajectory {
            self.check_pair(s, a)?;
            weights[[s, a]] += w;
            w *= discount;
        }
        self.weighted_gradient(theta, &weights)
    }

    /// `sup_θ max_{s,a} ‖∇_θ r(s, a; θ)‖` where it has a closed form
    /// (attained at zero pre-activation); `None` for the network.
    pub fn gradient_bound(&self) -> Option<f64> {
        match self.kind {
            RewardKind::Tabular | RewardKind::Linear => {
                let max_norm = self
                    .features
                    .lanes(Axis(2))
                    .into_iter()
                    .map(|phi| phi.dot(&phi).sqrt())
                    .fold(0.0, f64::max);
                Some(self.c_r * max_norm)
            }
            RewardKind::Mlp2 { .. } => None,
        }
    }

    /// `max_{θ ∈ thetas} max_{s,a} ‖∇_θ r(s, a; θ)‖`, the measured `L_r`.
    pub fn empirical_gradient_bound(&self, thetas: &[Array1<f64>]) -> Result<f64> {
        let mut bound: f64 = 0.0;
        for theta in thetas {
            self.check(theta)?;
            for s in 0..self.n_states() {
                for a in 0..self.n_actions() {
                    let g = self.gradient_unchecked(theta, s, a);
                    bound = bound.max(g.dot(&g).sqrt());
                }
            }
        }
        Ok(bound)
    }

    pub fn to_checkpoint(&self, theta: &Array1<f64>) -> Result<RewardCheckpoint> {
        self.check(theta)?;
        let (n_states, n_actions, n_features) = self.features.dim();
        let is_one_hot = self.features == one_hot(n_states, n_actions);
        Ok(RewardCheckpoint {
            kind: self.kind.name().to_string(),
            c_r: self.c_r,
            theta: theta.to_vec(),
            feature_spec: FeatureSpec {
                n_states,
                n_actions,
                n_features,
                encoding: if is_one_hot { FeatureEncoding::OneHot } else { FeatureEncoding::Dense },
                values: (!is_one_hot).then(|| {
                    self.features
                        .outer_iter()
                        .map(|sa| sa.outer_iter().map(|phi| phi.to_vec()).collect())
                        .collect()
                }),
                hidden: match self.kind {
                    RewardKind::Mlp2 { hidden } => Some(hidden),
                    _ => None,
                },
            },
        })
    }

    /// Rebuilds the model and its parameters from a checkpoint.
    pub fn from_checkpoint(ckpt: &RewardCheckpoint) -> Result<(Self, Array1<f64>)> {
        let spec = &ckpt.feature_spec;
        let features = match spec.encoding {
            FeatureEncoding::OneHot => one_hot(spec.n_states, spec.n_actions),
            FeatureEncoding::Dense => {
                let values = spec
                    .values
                    .as_ref()
                    .ok_or_else(|| invalid("dense feature spec needs `values`"))?;
                let flat: Vec<f64> = values.iter().flatten().flatten().copied().collect();
                Array3::from_shape_vec((spec.n_states, spec.n_actions, spec.n_features), flat)
                    .map_err(|_| dim("feature values do not match n_states × n_actions × n_features"))?
            }
        };
        if features.dim().2 != spec.n_features {
            return Err(dim("n_features does not match the encoding"));
        }
        let kind = match ckpt.kind.as_str() {
            "tabular" => RewardKind::Tabular,
            "linear" => RewardKind::Linear,
            "mlp2" => RewardKind::Mlp2 {
                hidden: spec.hidden.unwrap_or(DEFAULT_HIDDEN),
            },
            other => return Err(invalid(format!("unknown reward kind `{other}`"))),
        };
        let model = Self::build(kind, features, ckpt.c_r)?;
        let theta = Array1::from(ckpt.theta.clone());
        model.check(&theta)?;
        Ok((model, theta))
    }

    /// Whether a checkpointed reward can be applied where this model is expected.
    pub fn same_features(&self, other: &RewardModel) -> bool {
        self.features == other.features
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureEncoding {
    OneHot,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_features: usize,
    pub encoding: FeatureEncoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

/// Serialised reward: `{"kind", "c_r", "theta", "feature_spec"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCheckpoint {
    pub kind: String,
    pub c_r: f64,
    pub theta: Vec<f64>,
    pub feature_spec: FeatureSpec,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_parameters_give_zero_reward() {
        let phi = Array3::from_shape_fn((3, 2, 4), |(s, a, f)| (s + 2 * a + f) as f64 * 0.1);
        for model in [
            RewardModel::tabular(3, 2, 1.0).unwrap(),
            RewardModel::linear(phi.clone(), 2.0).unwrap(),
            RewardModel::mlp2(phi, 5, 1.5).unwrap(),
        ] {
            let r = model.evaluate(&model.zero_params()).unwrap();
            assert!(r.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn tabular_saturates_at_bound() {
        let model = RewardModel::tabular(2, 2, 1.5).unwrap();
        let r = model.evaluate(&Array1::from_elem(4, 50.0)).unwrap();
        assert!(r.iter().all(|&x| (x - 1.5).abs() < 1e-10));
    }

    #[test]
    fn one_hot_linear_equals_tabular() {
        let tab = RewardModel::tabular(3, 2, 1.0).unwrap();
        let lin = RewardModel::linear_one_hot(3, 2, 1.0).unwrap();
        let theta = array![0.3, -1.0, 2.0, 0.0, 0.5, -0.25];
        assert_eq!(tab.evaluate(&theta).unwrap(), lin.evaluate(&theta).unwrap());
    }

    #[test]
    fn tabular_gradient_at_zero() {
        let model = RewardModel::tabular(2, 3, 0.7).unwrap();
        let g = model.gradient(&model.zero_params(), 1, 2).unwrap();
        let mut expected = Array1::zeros(6);
        expected[5] = 0.7;
        assert_eq!(g, expected);
    }

    #[test]
    fn dimension_and_range_errors() {
        let model = RewardModel::tabular(2, 2, 1.0).unwrap();
        assert!(model.evaluate(&Array1::zeros(3)).is_err());
        assert!(model.gradient(&Array1::zeros(4), 2, 0).is_err());
        assert!(model.cumulative_gradient(&Array1::zeros(4), &vec![], 0.9).is_err());
        assert!(RewardModel::tabular(2, 2, 0.0).is_err());
        assert!(RewardModel::mlp2(Array3::zeros((1, 1, 1)), 0, 1.0).is_err());
    }

    #[test]
    fn cumulative_gradient_geometric_series() {
        let model = RewardModel::tabular(2, 2, 1.0).unwrap();
        let theta = array![0.1, 0.2, -0.3, 0.4];
        let gamma: f64 = 0.9;
        let horizon = 25;
        let h = model.cumulative_gradient(&theta, &vec![(1, 0); horizon], gamma).unwrap();
        let g = model.gradient(&theta, 1, 0).unwrap();
        let factor = (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma);
        for (x, y) in h.iter().zip(g.iter()) {
            assert_abs_diff_eq!(*x, y * factor, epsilon = 1e-12);
        }
        let single = model.cumulative_gradient(&theta, &vec![(0, 1)], gamma).unwrap();
        assert_eq!(single, model.gradient(&theta, 0, 1).unwrap());
    }

    #[test]
    fn checkpoint_restores_model() {
        let phi = Array3::from_shape_fn((2, 2, 3), |(s, a, f)| ((s * 7 + a * 3 + f) % 5) as f64 - 2.0);
        let model = RewardModel::mlp2(phi, 4, 1.0).unwrap();
        let theta = Array1::from_shape_fn(model.param_dim(), |i| (i as f64 * 0.37).sin());
        let ckpt = model.to_checkpoint(&theta).unwrap();
        let json = serde_json::to_string(&ckpt).unwrap();
        let (back, theta_back) = RewardModel::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(theta_back, theta);

        let tab = RewardModel::tabular(2, 2, 1.0).unwrap();
        let ckpt = tab.to_checkpoint(&tab.zero_params()).unwrap();
        assert_eq!(ckpt.feature_spec.encoding, FeatureEncoding::OneHot);
        assert!(ckpt.feature_spec.values.is_none());
    }

    #[test]
    fn analytic_gradient_bounds() {
        let model = RewardModel::linear(array![[[3.0, 4.0]], [[1.0, 0.0]]], 2.0).unwrap();
        assert_eq!(model.gradient_bound(), Some(10.0));
        assert_eq!(RewardModel::tabular(2, 2, 1.5).unwrap().gradient_bound(), Some(1.5));
    }
}
