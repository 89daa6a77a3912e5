//! Training losses over released slices and their gradients with respect to
//! the synthetic points.

use rayon::prelude::*;

use super::fdiv::FDivergence;
use super::kernel::KernelConfig;
use super::ratio::SpdSolver;
use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// Real-side data for one slice in a minibatch: directions `theta` (d×k) and
/// the noisy released projections of the batch rows (b×k).
#[derive(Debug, Clone)]
pub struct SliceBatch {
    pub theta: Matrix,
    pub real: Matrix,
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient with respect to each synthetic point, same shape as the batch.
    pub grad: Matrix,
}

fn check_inputs(slices: &[SliceBatch], syn: &Matrix, syn_noise: &[Matrix]) -> Result<()> {
    if slices.is_empty() {
        return Err(Error::DimensionMismatch("no slices given".into()));
    }
    if syn_noise.len() != slices.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} noise blocks for {} slices",
            syn_noise.len(),
            slices.len()
        )));
    }
    for (s, (sl, noise)) in slices.iter().zip(syn_noise).enumerate() {
        let k = sl.theta.cols();
        if sl.theta.rows() != syn.cols()
            || sl.real.cols() != k
            || noise.rows() != syn.rows()
            || noise.cols() != k
            || sl.real.rows() == 0
        {
            return Err(Error::DimensionMismatch(format!(
                "slice {s}: theta {}x{}, real {}x{}, noise {}x{}, synthetic {}x{}",
                sl.theta.rows(),
                sl.theta.cols(),
                sl.real.rows(),
                sl.real.cols(),
                noise.rows(),
                noise.cols(),
                syn.rows(),
                syn.cols()
            )));
        }
    }
    Ok(())
}

/// Noisy synthetic projections `x theta + noise`.
fn project(syn: &Matrix, theta: &Matrix, noise: &Matrix) -> Matrix {
    let mut y = syn.matmul(theta).expect("shapes checked");
    y.add_assign(noise);
    y
}

/// Adds `grad_y theta^T` into `grad_x`.
fn chain_projection(grad_x: &mut Matrix, grad_y: &Matrix, theta: &Matrix) {
    for j in 0..grad_x.rows() {
        let gy = grad_y.row(j);
        let gx = grad_x.row_mut(j);
        for (p, g) in gx.iter_mut().enumerate() {
            *g += crate::matrix::dot(theta.row(p), gy);
        }
    }
}

/// Smoothed-sliced f-divergence loss with its exact gradient.
///
/// Per slice `s`, with `y_j = x_j theta_s + noise_j`, the ratio estimate at
/// the real points is `r = mean_bw clip((K_s + tau I)^{-1} K_{s,syn} 1)` and
/// the slice contributes `sum_i f(r_i)`; the total is divided by `m b`.
/// Entries clipped to zero get a zero subgradient.
pub fn smoothed_sliced_loss(
    slices: &[SliceBatch],
    syn: &Matrix,
    syn_noise: &[Matrix],
    f: FDivergence,
    cfg: &KernelConfig,
) -> Result<LossGrad> {
    check_inputs(slices, syn, syn_noise)?;
    cfg.validate()?;
    let m = slices.len();
    let b_real = slices[0].real.rows();

    let per_slice: Vec<(f64, Matrix)> = slices
        .par_iter()
        .zip(syn_noise.par_iter())
        .map(|(sl, noise)| {
            let y = project(syn, &sl.theta, noise);
            slice_kmm(&sl.real, &y, f, cfg)
        })
        .collect::<Result<_>>()?;

    let norm = 1.0 / (m as f64 * b_real as f64);
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(syn.rows(), syn.cols());
    for ((value, grad_y), sl) in per_slice.iter().zip(slices) {
        loss += value;
        chain_projection(&mut grad, grad_y, &sl.theta);
    }
    grad.scale(norm);
    Ok(LossGrad {
        loss: loss * norm,
        grad,
    })
}

/// Unnormalized slice term `sum_i f(r_i)` and its gradient in `y`.
fn slice_kmm(real: &Matrix, y: &Matrix, f: FDivergence, cfg: &KernelConfig) -> Result<(f64, Matrix)> {
    let (bq, bp, k) = (real.rows(), y.rows(), real.cols());
    let lead = bq as f64 / bp as f64;
    let bandwidths = cfg.bandwidths(real);
    let weight = 1.0 / bandwidths.len() as f64;

    let cross_d2: Vec<f64> = (0..bq)
        .flat_map(|i| (0..bp).map(move |j| (i, j)))
        .map(|(i, j)| squared_distance(real.row(i), y.row(j)))
        .collect();

    struct Member {
        solver: SpdSolver,
        cross: Vec<f64>,
        u: Vec<f64>,
        bw: f64,
    }

    let mut members = Vec::with_capacity(bandwidths.len());
    let mut ratio = vec![0.0; bq];
    for bw in bandwidths {
        let solver = SpdSolver::gram(real, bw, cfg.ridge)?;
        let scale = -1.0 / (2.0 * bw * bw);
        let cross: Vec<f64> = cross_d2.iter().map(|d2| (scale * d2).exp()).collect();
        let rhs: Vec<f64> = cross
            .chunks(bp)
            .map(|row| lead * row.iter().sum::<f64>())
            .collect();
        let u = solver.solve(&rhs);
        for (r, &ui) in ratio.iter_mut().zip(&u) {
            *r += weight * ui.max(0.0);
        }
        members.push(Member { solver, cross, u, bw });
    }

    let value: f64 = ratio.iter().map(|&r| f.f(r)).sum();
    let d_ratio: Vec<f64> = ratio
        .iter()
        .map(|&r| if r > 0.0 { f.f_prime(r) } else { 0.0 })
        .collect();

    let mut grad_y = Matrix::zeros(bp, k);
    for mem in &members {
        let h: Vec<f64> = d_ratio
            .iter()
            .zip(&mem.u)
            .map(|(&g, &u)| if u > 0.0 { g * weight } else { 0.0 })
            .collect();
        if h.iter().all(|&v| v == 0.0) {
            continue;
        }
        // d value / d c = A^T h with A symmetric
        let w = mem.solver.solve(&h);
        let inv_bw2 = lead / (mem.bw * mem.bw);
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let oi = real.row(i);
            let krow = &mem.cross[i * bp..(i + 1) * bp];
            for (j, &kij) in krow.iter().enumerate() {
                let coef = wi * kij * inv_bw2;
                let gj = grad_y.row_mut(j);
                for (c, g) in gj.iter_mut().enumerate() {
                    *g += coef * (oi[c] - y.get(j, c));
                }
            }
        }
    }
    Ok((value, grad_y))
}

/// Sliced 1-D Wasserstein-2 loss between released and synthetic projections.
///
/// Each slice sorts both samples and averages squared differences of the
/// order statistics; requires `k = 1` and equal batch sizes.
pub fn sliced_wasserstein_1d_loss(
    slices: &[SliceBatch],
    syn: &Matrix,
    syn_noise: &[Matrix],
) -> Result<LossGrad> {
    check_inputs(slices, syn, syn_noise)?;
    if let Some(s) = slices.iter().position(|sl| sl.theta.cols() != 1) {
        return Err(Error::InvalidConfig(format!(
            "sliced Wasserstein loss needs k = 1, slice {s} has k = {}",
            slices[s].theta.cols()
        )));
    }
    let b = syn.rows();
    if slices.iter().any(|sl| sl.real.rows() != b) {
        return Err(Error::DimensionMismatch(
            "sliced Wasserstein loss needs equal real and synthetic batch sizes".into(),
        ));
    }
    let m = slices.len();
    let norm = 1.0 / (m as f64 * b as f64);

    let per_slice: Vec<(f64, Matrix)> = slices
        .par_iter()
        .zip(syn_noise.par_iter())
        .map(|(sl, noise)| {
            let y = project(syn, &sl.theta, noise).into_vec();
            let mut o = sl.real.col(0);
            o.sort_by(f64::total_cmp);
            let mut order: Vec<usize> = (0..b).collect();
            order.sort_by(|&a, &c| y[a].total_cmp(&y[c]));
            let mut grad_y = Matrix::zeros(b, 1);
            let mut value = 0.0;
            for (rank, &j) in order.iter().enumerate() {
                let diff = y[j] - o[rank];
                value += diff * diff;
                grad_y.set(j, 0, 2.0 * diff);
            }
            (value, grad_y)
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, syn.cols());
    for ((value, grad_y), sl) in per_slice.iter().zip(slices) {
        loss += value;
        chain_projection(&mut grad, grad_y, &sl.theta);
    }
    grad.scale(norm);
    Ok(LossGrad {
        loss: loss * norm,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, SeedSequence, Stream};

    fn setup(b: usize, m: usize, k: usize, d: usize, seed: u64) -> (Vec<SliceBatch>, Matrix, Vec<Matrix>) {
        let s = SeedSequence::new(seed);
        let slices = (0..m)
            .map(|j| SliceBatch {
                theta: normal_matrix(&mut s.stream(Stream::Projection, j as u64), d, k, 0.5),
                real: normal_matrix(&mut s.stream(Stream::MechanismNoise, j as u64), b, k, 0.6),
            })
            .collect();
        let syn = normal_matrix(&mut s.stream(Stream::Latent, 0), b, d, 0.5);
        let noise = (0..m)
            .map(|j| normal_matrix(&mut s.stream(Stream::SyntheticNoise, j as u64), b, k, 0.1))
            .collect();
        (slices, syn, noise)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (slices, syn, noise) = setup(8, 3, 2, 4, 21);
        let cfg = KernelConfig::default();
        for f in [FDivergence::KullbackLeibler, FDivergence::ChiSquared, FDivergence::JensenShannon] {
            let lg = smoothed_sliced_loss(&slices, &syn, &noise, f, &cfg).unwrap();
            let h = 1e-6;
            for idx in 0..syn.as_slice().len() {
                let mut plus = syn.clone();
                plus.as_mut_slice()[idx] += h;
                let mut minus = syn.clone();
                minus.as_mut_slice()[idx] -= h;
                let lp = smoothed_sliced_loss(&slices, &plus, &noise, f, &cfg).unwrap().loss;
                let lm = smoothed_sliced_loss(&slices, &minus, &noise, f, &cfg).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                let an = lg.grad.as_slice()[idx];
                assert!(
                    (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-4),
                    "{f} entry {idx}: analytic {an} vs numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn matched_samples_give_small_loss() {
        let (slices, _, _) = setup(40, 2, 1, 3, 5);
        // synthetic projections that coincide with the real ones
        let d = 3;
        let syn = Matrix::zeros(40, d);
        let noise: Vec<Matrix> = slices.iter().map(|s| s.real.clone()).collect();
        let cfg = KernelConfig::default();
        let lg = smoothed_sliced_loss(&slices, &syn, &noise, FDivergence::KullbackLeibler, &cfg).unwrap();
        assert!(lg.loss >= 0.0);
        assert!(lg.loss < 10.0 * cfg.ridge, "loss {}", lg.loss);
    }

    #[test]
    fn slice_order_does_not_matter() {
        let (slices, syn, noise) = setup(10, 4, 2, 3, 8);
        let cfg = KernelConfig::default();
        let a = smoothed_sliced_loss(&slices, &syn, &noise, FDivergence::ChiSquared, &cfg).unwrap();
        let rs: Vec<SliceBatch> = slices.iter().rev().cloned().collect();
        let rn: Vec<Matrix> = noise.iter().rev().cloned().collect();
        let b = smoothed_sliced_loss(&rs, &syn, &rn, FDivergence::ChiSquared, &cfg).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        for (x, y) in a.grad.as_slice().iter().zip(b.grad.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_rejects_bad_shapes() {
        let (slices, syn, noise) = setup(6, 2, 2, 3, 1);
        let cfg = KernelConfig::default();
        let f = FDivergence::KullbackLeibler;
        assert!(smoothed_sliced_loss(&slices, &syn, &noise[..1], f, &cfg).is_err());
        assert!(smoothed_sliced_loss(&[], &syn, &[], f, &cfg).is_err());
        let wide = Matrix::zeros(6, 4);
        assert!(smoothed_sliced_loss(&slices, &wide, &noise, f, &cfg).is_err());
    }

    #[test]
    fn wasserstein_hand_example() {
        let slices = vec![SliceBatch {
            theta: Matrix::from_rows(&[vec![1.0]]).unwrap(),
            real: Matrix::from_rows(&[vec![3.0], vec![1.0]]).unwrap(),
        }];
        let syn = Matrix::from_rows(&[vec![2.0], vec![0.0]]).unwrap();
        let noise = vec![Matrix::zeros(2, 1)];
        let lg = sliced_wasserstein_1d_loss(&slices, &syn, &noise).unwrap();
        assert_eq!(lg.loss, 1.0);
        assert_eq!(lg.grad.as_slice(), &[-1.0, -1.0]);

        // permuting the synthetic rows permutes the gradient only
        let swapped = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let lg2 = sliced_wasserstein_1d_loss(&slices, &swapped, &noise).unwrap();
        assert_eq!(lg2.loss, 1.0);
    }

    #[test]
    fn wasserstein_gradient_and_contract() {
        let (slices, syn, noise) = setup(9, 3, 1, 4, 2);
        let lg = sliced_wasserstein_1d_loss(&slices, &syn, &noise).unwrap();
        let h = 1e-7;
        for idx in 0..syn.as_slice().len() {
            let mut plus = syn.clone();
            plus.as_mut_slice()[idx] += h;
            let mut minus = syn.clone();
            minus.as_mut_slice()[idx] -= h;
            let fd = (sliced_wasserstein_1d_loss(&slices, &plus, &noise).unwrap().loss
                - sliced_wasserstein_1d_loss(&slices, &minus, &noise).unwrap().loss)
                / (2.0 * h);
            assert!((fd - lg.grad.as_slice()[idx]).abs() < 1e-5);
        }
        let (wide, syn2, noise2) = setup(9, 1, 2, 4, 2);
        assert!(sliced_wasserstein_1d_loss(&wide, &syn2, &noise2).is_err());
    }
}
