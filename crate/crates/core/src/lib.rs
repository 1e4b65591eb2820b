//! Robust cusum change-point tests built from bounded transformations.

// `!(x > 0.0)` style checks reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod critvals;
pub mod cusum;
pub mod dist;
pub mod error;
pub mod locscale;
pub mod longrun;
pub mod psi;
pub mod rng;
pub mod series;
pub mod simlab;

pub use critvals::{lookup_quantile, McConfig, NullDistribution, PValue, QuantileTable};
pub use cusum::{run_test, run_test_with, Functional, TestConfig, TestOutcome};
pub use error::{Error, Result, Stage};
pub use locscale::LocScale;
pub use longrun::Kernel;
pub use psi::{Psi, PsiSpec, PsiVariant};
pub use series::TimeSeries;
