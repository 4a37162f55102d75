//! Synthetic data with analytically known VaR / CVaR.

pub mod mixture;
pub mod quad;
pub mod terrain;
pub mod toy1d;

pub use mixture::{mixture_var_cvar, Curve, GaussianMixture, MixtureComponent, MixtureSpec};
pub use terrain::{terrain_generate, TerrainParams, TerrainSet, TruthTable};
pub use toy1d::{toy1d_generate, toy_truth, ToyTruthRow};
