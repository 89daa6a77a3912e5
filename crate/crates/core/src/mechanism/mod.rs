//! Encoding, Poisson subsampling and the slicing mechanism itself.

mod bundle;
mod encode;

pub use bundle::{SliceBundle, SliceView, BUNDLE_MAGIC, BUNDLE_VERSION};
pub(crate) use bundle::{read_f64, read_f64s, read_u32, read_u64, write_f64s};
pub use encode::{decode, encode, encode_table, EncodedMatrix, Encoding};

use rand::Rng;
use rayon::prelude::*;

use crate::accounting::MechanismDims;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{normal_matrix, SeedSequence, Stream};

/// Keeps each row independently with probability `rate`, preserving order.
pub fn poisson_subsample<R: Rng>(
    matrix: &EncodedMatrix,
    rate: f64,
    rng: &mut R,
) -> Result<EncodedMatrix> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::domain("subsampling rate", rate, "(0, 1]"));
    }
    let keep: Vec<usize> = (0..matrix.n_rows())
        .filter(|_| rate >= 1.0 || rng.random::<f64>() < rate)
        .collect();
    Ok(matrix.with_rows(matrix.data().select_rows(&keep), rate))
}

/// Releases `(U, XU + V)` with `U_ij ~ N(0, 1/d)` and `V_ij ~ N(0, sigma^2)`.
///
/// Column `j` of `U` and of `V` come from their own sub-streams of `seeds`,
/// so the bundle is bit-identical for any thread count.
pub fn apply_mechanism(
    x: &EncodedMatrix,
    dims: MechanismDims,
    sigma: f64,
    seeds: SeedSequence,
) -> Result<SliceBundle> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain("sigma", sigma, "(0, inf)"));
    }
    let data = x.data();
    if data.cols() != dims.d {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns but the mechanism expects d = {}",
            data.cols(),
            dims.d
        )));
    }
    let (n, d, mp) = (data.rows(), dims.d, dims.m_prime());
    let proj_std = 1.0 / (d as f64).sqrt();

    let columns: Vec<(Vec<f64>, Vec<f64>)> = (0..mp)
        .into_par_iter()
        .map(|j| {
            let u = normal_matrix(&mut seeds.stream(Stream::Projection, j as u64), d, 1, proj_std)
                .into_vec();
            let v = normal_matrix(&mut seeds.stream(Stream::MechanismNoise, j as u64), n, 1, sigma)
                .into_vec();
            let o = (0..n)
                .map(|i| crate::matrix::dot(data.row(i), &u) + v[i])
                .collect();
            (u, o)
        })
        .collect();

    let mut u = Matrix::zeros(d, mp);
    let mut o = Matrix::zeros(n, mp);
    for (j, (uc, oc)) in columns.into_iter().enumerate() {
        for (i, val) in uc.into_iter().enumerate() {
            u.set(i, j, val);
        }
        for (i, val) in oc.into_iter().enumerate() {
            o.set(i, j, val);
        }
    }
    SliceBundle::new(u, o, sigma, dims, seeds.master())
}
