//! Per-layer optimizer state Θ and the preconditioned mapping P_Θ.
//!
//! Three instantiations share one interface:
//!
//! | variant | state per layer            | direction P_Θ(g)                          |
//! |---------|----------------------------|-------------------------------------------|
//! | Sophia  | `m`, `h` (diag-Hessian EMA) | `clip(m / (h + eps), ±ρ)`                 |
//! | Muon    | `m`                        | `γ(m,n) · NS(m)` (plain `m` for vectors)  |
//! | SOAP    | `L, R, Q_L, Q_R, M, V`     | `Q_L · (M / (√V + eps)) · Q_Rᵀ`           |
//!
//! The step order is fixed: [`PreconditionerState::update_state`] folds the
//! step's gradient into the state, then [`PreconditionerState::apply_precond`]
//! reads that updated state. States are plain values; every operation returns
//! a fresh state, so a client owns its state exclusively between
//! synchronization points.

mod algebra;
mod codec;
mod compress;
mod muon;
mod soap;
mod sophia;

use serde::{Deserialize, Serialize};

pub(crate) use algebra::entrywise_mean;
pub use algebra::{state_average, state_distance, DistanceMode, StateDistance};
pub use codec::{read_params, read_state, write_params, write_state};
pub use compress::{compress_state, compressed_floats, decompress_state, rank_for, CompressedState};
pub use muon::MuonLayer;
pub use soap::SoapLayer;
pub use sophia::SophiaLayer;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{Matrix, NsVariant, Rng, DEFAULT_NS_EPS, DEFAULT_NS_STEPS};

/// Hessian-vector product callback used by Sophia's curvature refresh.
pub type HvpFn<'a> = dyn Fn(&[Matrix]) -> Result<Vec<Matrix>> + Sync + 'a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sophia,
    Muon,
    Soap,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sophia, Variant::Muon, Variant::Soap];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sophia => "sophia",
            Variant::Muon => "muon",
            Variant::Soap => "soap",
        }
    }

    pub fn default_hyper(self) -> OptimizerHyper {
        match self {
            Variant::Sophia => OptimizerHyper::sophia(),
            Variant::Muon => OptimizerHyper::muon(),
            Variant::Soap => OptimizerHyper::soap(),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sophia" => Ok(Variant::Sophia),
            "muon" => Ok(Variant::Muon),
            "soap" => Ok(Variant::Soap),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Sophia's elementwise clip bound ρ.
    pub clip_rho: f64,
    /// SOAP eigenbasis refresh period, in local steps.
    pub precond_freq: u64,
    /// Sophia curvature refresh period, in local steps.
    pub hessian_freq: u64,
    pub ns_steps: usize,
    pub ns_variant: NsVariant,
    /// Muon's `γ(m, n) = √(m/n)` scaling.
    pub dim_scaling: bool,
    /// Adam-style `1 − βᵗ` correction of the moment estimates. Off by default.
    pub bias_correction: bool,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self::soap()
    }
}

impl OptimizerHyper {
    pub fn sophia() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-12,
            clip_rho: 1.0,
            precond_freq: 10,
            hessian_freq: 10,
            ns_steps: DEFAULT_NS_STEPS,
            ns_variant: NsVariant::Quintic,
            dim_scaling: true,
            bias_correction: false,
        }
    }

    pub fn muon() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: DEFAULT_NS_EPS,
            ..Self::sophia()
        }
    }

    pub fn soap() -> Self {
        Self {
            beta1: 0.95,
            beta2: 0.95,
            eps: 1e-8,
            ..Self::sophia()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1 out of [0,1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2 out of [0,1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.clip_rho > 0.0) {
            return bad("clip_rho must be positive");
        }
        if self.precond_freq == 0 || self.hessian_freq == 0 || self.ns_steps == 0 {
            return bad("frequencies and ns_steps must be >= 1");
        }
        Ok(())
    }
}

/// Per-layer states of one homogeneous variant.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerStates {
    Sophia(Vec<SophiaLayer>),
    Muon(Vec<MuonLayer>),
    Soap(Vec<SoapLayer>),
}

impl LayerStates {
    pub fn len(&self) -> usize {
        match self {
            LayerStates::Sophia(v) => v.len(),
            LayerStates::Muon(v) => v.len(),
            LayerStates::Soap(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Optimizer state Θ for a whole model.
#[derive(Clone, Debug, PartialEq)]
pub struct PreconditionerState {
    pub layers: LayerStates,
    pub hyper: OptimizerHyper,
    /// Number of `update_state` calls folded into this state.
    pub steps: u64,
}

impl PreconditionerState {
    /// Zero state for the given layer shapes (SOAP eigenbases start at the
    /// identity).
    pub fn zeros(variant: Variant, shapes: &[(usize, usize)], hyper: OptimizerHyper) -> Self {
        let layers = match variant {
            Variant::Sophia => LayerStates::Sophia(shapes.iter().map(|&s| SophiaLayer::zeros(s)).collect()),
            Variant::Muon => LayerStates::Muon(shapes.iter().map(|&s| MuonLayer::zeros(s)).collect()),
            Variant::Soap => LayerStates::Soap(shapes.iter().map(|&s| SoapLayer::zeros(s)).collect()),
        };
        Self {
            layers,
            hyper,
            steps: 0,
        }
    }

    pub fn variant(&self) -> Variant {
        match self.layers {
            LayerStates::Sophia(_) => Variant::Sophia,
            LayerStates::Muon(_) => Variant::Muon,
            LayerStates::Soap(_) => Variant::Soap,
        }
    }

    /// Shapes of the parameter layers this state belongs to.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match &self.layers {
            LayerStates::Sophia(v) => v.iter().map(|l| l.m.shape()).collect(),
            LayerStates::Muon(v) => v.iter().map(|l| l.m.shape()).collect(),
            LayerStates::Soap(v) => v.iter().map(|l| l.m.shape()).collect(),
        }
    }

    /// Every stored tensor in canonical order (layer by layer).
    pub fn tensors(&self) -> Vec<&Matrix> {
        match &self.layers {
            LayerStates::Sophia(v) => v.iter().flat_map(|l| [&l.m, &l.h]).collect(),
            LayerStates::Muon(v) => v.iter().map(|l| &l.m).collect(),
            LayerStates::Soap(v) => v
                .iter()
                .flat_map(|l| [&l.l, &l.r, &l.q_l, &l.q_r, &l.m, &l.v])
                .collect(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.layers {
            LayerStates::Sophia(v) => v.iter_mut().flat_map(|l| [&mut l.m, &mut l.h]).collect(),
            LayerStates::Muon(v) => v.iter_mut().map(|l| &mut l.m).collect(),
            LayerStates::Soap(v) => v
                .iter_mut()
                .flat_map(|l| [&mut l.l, &mut l.r, &mut l.q_l, &mut l.q_r, &mut l.m, &mut l.v])
                .collect(),
        }
    }

    /// Total number of stored floats.
    pub fn num_floats(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    fn check_grads(&self, grads: &[Matrix]) -> Result<()> {
        let shapes = self.layer_shapes();
        let got: Vec<_> = grads.iter().map(Matrix::shape).collect();
        if shapes != got {
            return Err(shape_err(format!("{shapes:?}"), format!("{got:?}")));
        }
        Ok(())
    }

    /// Folds one step's gradient into the state.
    ///
    /// Sophia refreshes its curvature estimate whenever `steps % hessian_freq
    /// == 0` and needs `hvp` at those steps; SOAP refreshes its eigenbases
    /// whenever `steps % precond_freq == 0`.
    pub fn update_state(mut self, grads: &[Matrix], hvp: Option<&HvpFn<'_>>, rng: &mut Rng) -> Result<Self> {
        self.check_grads(grads)?;
        let hyper = self.hyper;
        let step = self.steps;
        match &mut self.layers {
            LayerStates::Sophia(layers) => sophia::update(layers, grads, &hyper, step, hvp, rng)?,
            LayerStates::Muon(layers) => muon::update(layers, grads, &hyper),
            LayerStates::Soap(layers) => soap::update(layers, grads, &hyper, step)?,
        }
        self.steps += 1;
        Ok(self)
    }

    /// Preconditioned direction `P_Θ(g)` from the already-updated state.
    pub fn apply_precond(&self, grads: &[Matrix]) -> Result<Vec<Matrix>> {
        self.check_grads(grads)?;
        if self.steps == 0 {
            return Err(Error::Uninitialized);
        }
        match &self.layers {
            LayerStates::Sophia(layers) => Ok(sophia::apply(layers, &self.hyper, self.steps)),
            LayerStates::Muon(layers) => muon::apply(layers, &self.hyper),
            LayerStates::Soap(layers) => Ok(soap::apply(layers, &self.hyper, self.steps)),
        }
    }
}

pub(crate) fn bias_scale(beta: f64, steps: u64, enabled: bool) -> f64 {
    if enabled {
        1.0 / (1.0 - beta.powi(steps.min(i32::MAX as u64) as i32))
    } else {
        1.0
    }
}
