use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Stationary correlation family, anisotropic through one length per input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `(1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)`.
    #[default]
    Matern52,
    /// `exp(-r^2 / 2)`.
    SquaredExponential,
}

impl Kernel {
    /// Correlation as a function of the scaled squared distance
    /// `r^2 = sum_k ((x_k - u_k) / theta_k)^2`.
    #[inline]
    pub fn correlation<T: Scalar>(self, r2: T) -> T {
        match self {
            Kernel::Matern52 => {
                let s5 = T::of(5.0f64.sqrt());
                let r = r2.sqrt();
                (T::one() + s5 * r + T::of(5.0 / 3.0) * r2) * (-s5 * r).exp()
            }
            Kernel::SquaredExponential => (-r2 * T::of(0.5)).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Matern52 => "matern52",
            Kernel::SquaredExponential => "squared_exponential",
        }
    }
}

/// Regression part `h(x)` of the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Constant,
    /// `beta_0 + sum_j beta_j x_j`.
    #[default]
    Linear,
}

impl Trend {
    pub fn len(self, dim: usize) -> usize {
        match self {
            Trend::Constant => 1,
            Trend::Linear => dim + 1,
        }
    }

    pub fn basis<T: Scalar>(self, x: &[T]) -> Vec<T> {
        match self {
            Trend::Constant => vec![T::one()],
            Trend::Linear => std::iter::once(T::one()).chain(x.iter().copied()).collect(),
        }
    }

    pub fn eval<T: Scalar>(self, beta: &[T], x: &[T]) -> T {
        match self {
            Trend::Constant => beta[0],
            Trend::Linear => beta[0] + beta[1..].iter().zip(x).map(|(&b, &xi)| b * xi).sum::<T>(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_at_zero_is_one_and_decays() {
        for k in [Kernel::Matern52, Kernel::SquaredExponential] {
            assert_eq!(k.correlation(0.0f64), 1.0);
            let mut prev = 1.0;
            for i in 1..50 {
                let c = k.correlation((i as f64 * 0.1).powi(2));
                assert!(c < prev && c > 0.0);
                prev = c;
            }
        }
        // Matern 5/2 at r = 1
        let s5 = 5f64.sqrt();
        let expect = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        assert!((Kernel::Matern52.correlation(1.0f64) - expect).abs() < 1e-15);
    }

    #[test]
    fn trend_basis() {
        assert_eq!(Trend::Linear.basis(&[2.0f64, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(Trend::Linear.eval(&[1.0f64, 2.0, -1.0], &[2.0, 3.0]), 2.0);
        assert_eq!(Trend::Constant.eval(&[4.0f64], &[2.0, 3.0]), 4.0);
        assert_eq!(Trend::Linear.len(5), 6);
    }
}
