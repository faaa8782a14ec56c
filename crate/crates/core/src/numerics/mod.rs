//! Deterministic math substrate shared by every other module.

mod dft;
mod grid;
mod rng;
mod stats;

pub use dft::{dft2, idft2, ComplexGrid2D};
pub use grid::{Grid2D, LabelMap, IGNORE};
pub use rng::Rng;
pub use stats::{l2_normalize, log_sum_exp, percentile, softmax, softmax_into, NORM_EPS};
