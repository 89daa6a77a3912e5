//! Kernel density-ratio estimation and the sliced training losses.

mod fdiv;
mod kernel;
mod loss;
mod ratio;

pub use fdiv::FDivergence;
pub use kernel::{gaussian_kernel, median_bandwidth, KernelConfig};
pub use loss::{smoothed_sliced_loss, sliced_wasserstein_1d_loss, LossGrad, SliceBatch};
pub use ratio::{density_ratio, f_divergence_estimate};
