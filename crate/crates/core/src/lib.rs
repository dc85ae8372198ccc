//! Freundlich sorption isotherms fitted by weighted least squares on
//! log-transformed data, with a Monte Carlo toolkit for checking the
//! resulting parameter uncertainties.

pub mod error;
pub mod estimate;
pub mod io;
pub mod isotherm;
pub mod numerics;
pub mod regress;
pub mod report;
pub mod simkit;
pub mod weights;

pub use error::{Error, Result};
pub use estimate::{IsothermDataset, LevelRecord};
pub use isotherm::{FreundlichParams, SorptionSystem};
pub use regress::{FitMethod, FitResult, LogPoint};
pub use report::{fit_dataset, FitReport, FitRequest, MethodChoice};
pub use simkit::{Case, SystemPopulation};
pub use weights::{ErrorModel, ErrorSource};
