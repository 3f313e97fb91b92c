//! Freshness-aware remote inference: feature-length selection and transmission
//! scheduling under Age of Information.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds states, actions and the transmission-time model.
//! * [`errmodel`] builds inference-error tables (Jakes channel MMSE, synthetic, CSV).
//! * [`index`] evaluates the γ index that drives every threshold rule.
//! * [`tifl`] and [`tvfl`] solve the single-source problem with a fixed or a
//!   state-dependent feature length.
//! * [`multi`] handles many sources sharing `N` channels (Lagrangian relaxation,
//!   relative value iteration, multiple-choice knapsack, dual ascent).
//! * [`baselines`], [`sim`] and [`oracle`] provide comparison policies, a
//!   slot-level simulator and brute-force references.

pub mod baselines;
pub mod errmodel;
pub mod error;
pub mod index;
pub mod instances;
pub mod model;
pub mod multi;
pub mod oracle;
pub mod par;
pub mod sim;
pub mod tifl;
pub mod tvfl;

pub use error::{Error, Result};
pub use errmodel::InferenceErrorTable;
pub use index::GammaTable;
pub use model::{Action, Mode, SourceConfig, SystemState, TransmissionModel, TransmissionSpec};
pub use par::Exec;
