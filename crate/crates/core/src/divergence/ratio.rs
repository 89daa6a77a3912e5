use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};

use super::fdiv::FDivergence;
use super::kernel::KernelConfig;
use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// Cholesky factor of a ridged Gram matrix `K + tau I`.
pub(crate) struct SpdSolver {
    llt: Llt<f64>,
    n: usize,
}

impl SpdSolver {
    /// Factorizes the Gaussian Gram matrix of `points` at bandwidth `bw`.
    pub(crate) fn gram(points: &Matrix, bw: f64, ridge: f64) -> Result<Self> {
        let n = points.rows();
        let scale = -1.0 / (2.0 * bw * bw);
        let mut k = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = (scale * squared_distance(points.row(i), points.row(j))).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(j, j)] += ridge;
        }
        let llt = k.llt(Side::Lower).map_err(|_| Error::Factorization { ridge })?;
        Ok(SpdSolver { llt, n })
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.n);
        let mut x = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.llt.solve_in_place(x.as_mut());
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Kernel mean matching estimate of `dP/dQ` at the `Q` sample points.
///
/// For each ensemble bandwidth, solves `(K_qq + tau I) r = (n_q / n_p) K_qp 1`,
/// clips negative entries to zero, and averages the clipped solutions. The
/// median-heuristic bandwidth is taken over the `Q` points.
pub fn density_ratio(q_points: &Matrix, p_points: &Matrix, cfg: &KernelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if q_points.rows() == 0 || p_points.rows() == 0 {
        return Err(Error::DimensionMismatch("density ratio needs non-empty samples".into()));
    }
    if q_points.cols() != p_points.cols() {
        return Err(Error::DimensionMismatch(format!(
            "samples live in dimensions {} and {}",
            q_points.cols(),
            p_points.cols()
        )));
    }
    let (nq, np) = (q_points.rows(), p_points.rows());
    let lead = nq as f64 / np as f64;
    let bandwidths = cfg.bandwidths(q_points);
    let weight = 1.0 / bandwidths.len() as f64;
    let mut ratio = vec![0.0; nq];
    for bw in bandwidths {
        let solver = SpdSolver::gram(q_points, bw, cfg.ridge)?;
        let scale = -1.0 / (2.0 * bw * bw);
        let rhs: Vec<f64> = (0..nq)
            .map(|i| {
                let qi = q_points.row(i);
                lead * (0..np)
                    .map(|j| (scale * squared_distance(qi, p_points.row(j))).exp())
                    .sum::<f64>()
            })
            .collect();
        for (r, u) in ratio.iter_mut().zip(solver.solve(&rhs)) {
            *r += weight * u.max(0.0);
        }
    }
    Ok(ratio)
}

/// Plug-in estimate `mean_i f(r_i)` over ratio values at the `Q` samples.
pub fn f_divergence_estimate(ratio: &[f64], f: FDivergence) -> f64 {
    if ratio.is_empty() {
        return 0.0;
    }
    ratio.iter().map(|&r| f.f(r)).sum::<f64>() / ratio.len() as f64
}
