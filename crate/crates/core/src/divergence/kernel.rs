use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// `exp(-||x - y||^2 / (2 bw^2))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], bw: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if !(bw > 0.0) {
        return Err(Error::domain("bandwidth", bw, "(0, inf)"));
    }
    Ok((-squared_distance(x, y) / (2.0 * bw * bw)).exp())
}

/// Median Euclidean distance over all unordered pairs of rows.
pub fn median_bandwidth(points: &Matrix) -> Result<f64> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::DegenerateBandwidth);
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d2.push(squared_distance(points.row(i), points.row(j)));
        }
    }
    let len = d2.len();
    let mid = len / 2;
    let (_, &mut upper, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if len % 2 == 1 {
        upper.sqrt()
    } else {
        let lower = d2[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower.sqrt() + upper.sqrt())
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::DegenerateBandwidth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Scale factors applied to the median-heuristic bandwidth; the density
    /// ratio estimates of all resulting kernels are averaged.
    pub multipliers: Vec<f64>,
    /// Ridge `tau` added to the real-real Gram matrix.
    pub ridge: f64,
    /// Bandwidth used when the median heuristic degenerates.
    pub bandwidth_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            multipliers: vec![0.5, 1.0, 2.0],
            ridge: 1e-3,
            bandwidth_floor: 1e-3,
        }
    }
}

impl KernelConfig {
    pub fn single(ridge: f64) -> Self {
        KernelConfig {
            multipliers: vec![1.0],
            ridge,
            ..KernelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multipliers.is_empty() || self.multipliers.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::InvalidConfig(
                "kernel multipliers must be a non-empty list of positive numbers".into(),
            ));
        }
        if !(self.ridge > 0.0) {
            return Err(Error::domain("ridge", self.ridge, "(0, inf)"));
        }
        if !(self.bandwidth_floor > 0.0) {
            return Err(Error::domain("bandwidth floor", self.bandwidth_floor, "(0, inf)"));
        }
        Ok(())
    }

    /// Ensemble bandwidths for a set of reference points.
    pub fn bandwidths(&self, points: &Matrix) -> Vec<f64> {
        let base = match median_bandwidth(points) {
            Ok(bw) => bw,
            Err(_) => self.bandwidth_floor,
        };
        self.multipliers.iter().map(|m| m * base).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(), 1.0);
        // ||x - y||^2 = 2 bw^2
        let v = gaussian_kernel(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
        let a = gaussian_kernel(&[0.0], &[0.5], 1.0).unwrap();
        let b = gaussian_kernel(&[0.0], &[1.5], 1.0).unwrap();
        assert!(a > b);
        assert_eq!(
            gaussian_kernel(&[0.3], &[-0.2], 0.4).unwrap(),
            gaussian_kernel(&[-0.2], &[0.3], 0.4).unwrap()
        );
        assert!(gaussian_kernel(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn median_of_pairwise_distances() {
        let p = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(median_bandwidth(&p).unwrap(), 1.0);
        let mut q = p.clone();
        q.scale(3.5);
        assert!((median_bandwidth(&q).unwrap() - 3.5).abs() < 1e-15);
        let same = Matrix::from_rows(&vec![vec![1.0, 1.0]; 4]).unwrap();
        assert!(matches!(median_bandwidth(&same), Err(Error::DegenerateBandwidth)));
        // pairwise distances 1,1,1,2,2,3
        let four = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(median_bandwidth(&four).unwrap(), 1.5);
    }

    #[test]
    fn degenerate_falls_back_to_floor() {
        let cfg = KernelConfig::default();
        let same = Matrix::from_rows(&vec![vec![1.0]; 3]).unwrap();
        assert_eq!(cfg.bandwidths(&same), vec![0.5e-3, 1e-3, 2e-3]);
        assert!(KernelConfig { multipliers: vec![], ..cfg.clone() }.validate().is_err());
        assert!(KernelConfig { ridge: 0.0, ..cfg }.validate().is_err());
    }
}
