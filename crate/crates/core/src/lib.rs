//! Population dynamics of the Trojan Y chromosome eradication strategy and its
//! harvesting/stocking variants: model right-hand sides, equilibria, local and
//! global stability, forward/adjoint integration, optimal control by
//! forward-backward sweep, parameter calibration and strategy comparison.

pub mod calibrate;
pub mod control;
pub mod equilibria;
pub mod error;
pub mod integrate;
pub mod metrics;
pub mod models;
pub mod poly;
pub mod stability;

pub use error::{Error, Result};
pub use models::{Controls, HarvestShape, LifeParams, ModelId, ModelSpec, State};
