//! The probit measurement model `y = sign(Dx + w)`, its smoothed variant
//! `y = f_sigma(Dx + w)`, and synthetic instance generation.

use crate::special::norm_cdf;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative symmetry tolerance for covariance inputs.
const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest admissible eigenvalue ratio `lambda_min / lambda_max`.
const CONDITION_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    Dimension {
        name: &'static str,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("{name} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { name: &'static str, asymmetry: f64 },
    #[error("{name} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { name: &'static str, min_eigenvalue: f64 },
    #[error("{name} is near-singular (eigenvalue ratio {ratio:e} < 1e-12)")]
    NearSingular { name: &'static str, ratio: f64 },
    #[error("design row {row} is all zeros")]
    ZeroDesignRow { row: usize },
    #[error("non-finite entry in {name}")]
    NonFinite { name: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("observation entry {index} = {value} is outside the range of a {kind:?} observation")]
    ObservationRange {
        index: usize,
        value: f64,
        kind: ObservationKind,
    },
}

/// Square-root factor of a covariance, used for sampling.
#[derive(Debug, Clone)]
enum CovFactor {
    Diagonal(DVector<f64>),
    Lower(DMatrix<f64>),
}

impl CovFactor {
    fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        match self {
            CovFactor::Diagonal(s) => g.component_mul(s),
            CovFactor::Lower(l) => l * g,
        }
    }
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || a[(i, j)] == 0.0))
}

fn validate_covariance(name: &'static str, a: &DMatrix<f64>) -> Result<CovFactor, ModelError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { name });
    }
    if is_diagonal(a) {
        let d = a.diagonal();
        let min = d.min();
        let max = d.max();
        if min <= 0.0 {
            return Err(ModelError::NotPositiveDefinite { name, min_eigenvalue: min });
        }
        if min < CONDITION_FLOOR * max {
            return Err(ModelError::NearSingular { name, ratio: min / max });
        }
        return Ok(CovFactor::Diagonal(d.map(f64::sqrt)));
    }
    let scale = a.amax().max(1.0);
    let asymmetry = (a - a.transpose()).amax();
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(ModelError::NotSymmetric { name, asymmetry });
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 {
        return Err(ModelError::NotPositiveDefinite { name, min_eigenvalue: min });
    }
    if min < CONDITION_FLOOR * max {
        return Err(ModelError::NearSingular { name, ratio: min / max });
    }
    let chol = Cholesky::new(sym).ok_or(ModelError::NotPositiveDefinite { name, min_eigenvalue: min })?;
    Ok(CovFactor::Lower(chol.l()))
}

/// The generative model: design `D` (M x N), prior covariance `C_x`,
/// noise covariance `C_w`, and smoothing `sigma` (0 selects the hard sign).
#[derive(Debug, Clone)]
pub struct ProbitProblem {
    design: DMatrix<f64>,
    prior_cov: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    smoothing: f64,
    prior_factor: CovFactor,
    noise_factor: CovFactor,
}

impl ProbitProblem {
    pub fn new(
        design: DMatrix<f64>,
        prior_cov: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        smoothing: f64,
    ) -> Result<Self, ModelError> {
        let (m, n) = design.shape();
        if m == 0 || n == 0 {
            return Err(ModelError::InvalidArgument("design must be nonempty".into()));
        }
        if prior_cov.shape() != (n, n) {
            return Err(ModelError::Dimension {
                name: "prior covariance",
                rows: prior_cov.nrows(),
                cols: prior_cov.ncols(),
                expected_rows: n,
                expected_cols: n,
            });
        }
        if noise_cov.shape() != (m, m) {
            return Err(ModelError::Dimension {
                name: "noise covariance",
                rows: noise_cov.nrows(),
                cols: noise_cov.ncols(),
                expected_rows: m,
                expected_cols: m,
            });
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { name: "design" });
        }
        if let Some(row) = (0..m).find(|&i| design.row(i).iter().all(|&v| v == 0.0)) {
            return Err(ModelError::ZeroDesignRow { row });
        }
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(ModelError::InvalidArgument(format!(
                "smoothing must be finite and nonnegative, got {smoothing}"
            )));
        }
        let prior_factor = validate_covariance("prior covariance", &prior_cov)?;
        let noise_factor = validate_covariance("noise covariance", &noise_cov)?;
        Ok(Self {
            design,
            prior_cov,
            noise_cov,
            smoothing,
            prior_factor,
            noise_factor,
        })
    }

    /// `C_x = sigma_x_sq * I`, `C_w = sigma_w_sq * I`.
    pub fn isotropic(
        design: DMatrix<f64>,
        sigma_x_sq: f64,
        sigma_w_sq: f64,
        smoothing: f64,
    ) -> Result<Self, ModelError> {
        let (m, n) = design.shape();
        Self::new(
            design,
            DMatrix::from_diagonal_element(n, n, sigma_x_sq),
            DMatrix::from_diagonal_element(m, m, sigma_w_sq),
            smoothing,
        )
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Number of measurements `M`.
    pub fn m(&self) -> usize {
        self.design.nrows()
    }

    /// Signal dimension `N`.
    pub fn n(&self) -> usize {
        self.design.ncols()
    }

    /// Whether the noise covariance is diagonal.
    pub fn has_diagonal_noise(&self) -> bool {
        matches!(self.noise_factor, CovFactor::Diagonal(_))
    }

    /// Returns a copy with a different smoothing parameter.
    pub fn with_smoothing(&self, smoothing: f64) -> Result<Self, ModelError> {
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(ModelError::InvalidArgument(format!(
                "smoothing must be finite and nonnegative, got {smoothing}"
            )));
        }
        Ok(Self { smoothing, ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationKind {
    Binary,
    Smoothed,
}

/// Measurements `y` in `{-1, +1}^M` or `[-1, +1]^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    values: DVector<f64>,
    kind: ObservationKind,
}

impl ObservationVector {
    pub fn binary(values: DVector<f64>) -> Result<Self, ModelError> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
            return Err(ModelError::ObservationRange {
                index,
                value,
                kind: ObservationKind::Binary,
            });
        }
        Ok(Self {
            values,
            kind: ObservationKind::Binary,
        })
    }

    pub fn smoothed(values: DVector<f64>) -> Result<Self, ModelError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(-1.0..=1.0).contains(&v))
        {
            return Err(ModelError::ObservationRange {
                index,
                value,
                kind: ObservationKind::Smoothed,
            });
        }
        Ok(Self {
            values,
            kind: ObservationKind::Smoothed,
        })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same observation with every sign flipped.
    pub fn negated(&self) -> Self {
        Self {
            values: -&self.values,
            kind: self.kind,
        }
    }
}

/// One synthetic configuration: sizes, prior variance, and SNR in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub m: usize,
    pub n: usize,
    pub sigma_x_sq: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// `sigma_w^2 = sigma_x^2 * 10^(-snr_db / 10)`.
    pub fn noise_variance(&self) -> f64 {
        noise_variance_for(self.sigma_x_sq, self.snr_db)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.m == 0 || self.n == 0 {
            return Err(ModelError::InvalidArgument("m and n must be positive".into()));
        }
        if !(self.sigma_x_sq > 0.0 && self.sigma_x_sq.is_finite()) {
            return Err(ModelError::InvalidArgument("sigma_x_sq must be positive".into()));
        }
        let w = self.noise_variance();
        if !(w > 0.0 && w.is_finite()) {
            return Err(ModelError::InvalidArgument(format!(
                "snr_db = {} gives non-positive noise variance",
                self.snr_db
            )));
        }
        Ok(())
    }
}

pub fn noise_variance_for(sigma_x_sq: f64, snr_db: f64) -> f64 {
    sigma_x_sq * 10f64.powf(-snr_db / 10.0)
}

/// I.i.d. standard normal `m x n` matrix with every row scaled to unit norm.
pub fn generate_design<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(m, n);
    for i in 0..m {
        loop {
            for j in 0..n {
                d[(i, j)] = rng.sample(StandardNormal);
            }
            let norm = d.row(i).norm();
            if norm > 0.0 {
                d.row_mut(i).unscale_mut(norm);
                break;
            }
        }
    }
    d
}

/// Hard sign with `sign(0) = +1`.
#[inline]
pub fn sign(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Elementwise `f_sigma(z) = 2 Phi(z / sigma) - 1`.
pub fn smooth_forward(z: &DVector<f64>, sigma: f64) -> Result<DVector<f64>, ModelError> {
    if !(sigma > 0.0) {
        return Err(ModelError::InvalidArgument(format!(
            "smoothing must be positive for f_sigma (got {sigma}); use the sign path for 0"
        )));
    }
    Ok(z.map(|v| smooth_scalar(v, sigma)))
}

#[inline]
pub(crate) fn smooth_scalar(z: f64, sigma: f64) -> f64 {
    // 2 Phi(t) - 1 = erf(t / sqrt 2); via the CDF difference to stay odd
    let t = z / sigma;
    if t >= 0.0 {
        1.0 - 2.0 * norm_cdf(-t)
    } else {
        2.0 * norm_cdf(t) - 1.0
    }
}

/// Applies the model nonlinearity: sign at `sigma = 0`, `f_sigma` otherwise.
pub fn observe(z: &DVector<f64>, sigma: f64) -> ObservationVector {
    if sigma == 0.0 {
        ObservationVector {
            values: z.map(sign),
            kind: ObservationKind::Binary,
        }
    } else {
        ObservationVector {
            values: z.map(|v| smooth_scalar(v, sigma)),
            kind: ObservationKind::Smoothed,
        }
    }
}

/// Draws `x ~ N(0, C_x)`, `w ~ N(0, C_w)` and returns `(x, y)`.
///
/// Consumes `N` then `M` standard normals from `rng`, in that order.
pub fn sample_instance<R: Rng + ?Sized>(problem: &ProbitProblem, rng: &mut R) -> (DVector<f64>, ObservationVector) {
    let (signal, z) = sample_latent(problem, rng);
    (signal, observe(&z, problem.smoothing))
}

/// Draws `(x, z)` with `z = D x + w`, before the nonlinearity.
pub fn sample_latent<R: Rng + ?Sized>(problem: &ProbitProblem, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
    let gx = DVector::from_fn(problem.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let gw = DVector::from_fn(problem.m(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let signal = problem.prior_factor.apply(&gx);
    let z = &problem.design * &signal + problem.noise_factor.apply(&gw);
    (signal, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use nalgebra::dmatrix;

    fn scalar_problem(sigma: f64) -> ProbitProblem {
        ProbitProblem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], sigma).unwrap()
    }

    #[test]
    fn design_rows_have_unit_norm() {
        let d = generate_design(1, 1, &mut substream(0, 0));
        assert_eq!(d[(0, 0)].abs(), 1.0);
        let d = generate_design(50, 5, &mut substream(7, 0));
        for i in 0..50 {
            assert!((d.row(i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn design_entries_center_on_zero() {
        let d = generate_design(200, 20, &mut substream(3, 0));
        let mean = d.mean();
        assert!(mean.abs() < 4.0 / (200.0f64 * 20.0).sqrt(), "mean {mean}");
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign(0.0), 1.0);
        assert_eq!(sign(-0.0), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }

    #[test]
    fn smooth_forward_values() {
        let v = smooth_forward(&DVector::from_vec(vec![0.0]), 1.0).unwrap();
        assert_eq!(v[0], 0.0);
        let v = smooth_forward(&DVector::from_vec(vec![1.96]), 1.0).unwrap();
        assert!((v[0] - 0.95).abs() < 1e-3);
        assert!(matches!(
            smooth_forward(&DVector::from_vec(vec![1.0]), 0.0),
            Err(ModelError::InvalidArgument(_))
        ));
    }

    #[test]
    fn smooth_forward_is_odd() {
        let mut rng = substream(11, 0);
        for _ in 0..100 {
            let t: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
            let s: f64 = rng.random_range(0.1..4.0);
            let a = smooth_scalar(t, s);
            let b = smooth_scalar(-t, s);
            assert_eq!(a, -b);
        }
    }

    #[test]
    fn smooth_forward_approaches_sign() {
        let sigma = 1e-6;
        for &z in &[1e-4, -1e-4, 0.3, -2.0, 50.0] {
            assert!((smooth_scalar(z, sigma) - sign(z)).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_observation_is_binary() {
        let p = scalar_problem(0.0);
        let mut rng = substream(1, 1);
        for _ in 0..100 {
            let (_, y) = sample_instance(&p, &mut rng);
            assert_eq!(y.kind(), ObservationKind::Binary);
            assert!(y.values()[0] == 1.0 || y.values()[0] == -1.0);
        }
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let p = ProbitProblem::isotropic(generate_design(6, 3, &mut substream(2, 0)), 1.0, 0.5, 0.3).unwrap();
        let a = sample_instance(&p, &mut substream(9, 4));
        let b = sample_instance(&p, &mut substream(9, 4));
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn scalar_moments_match_symmetry_and_bussgang_gain() {
        let p = scalar_problem(0.0);
        let mut rng = substream(12, 0);
        let n = 1_000_000;
        let (mut sy, mut syx) = (0.0, 0.0);
        for _ in 0..n {
            let (x, y) = sample_instance(&p, &mut rng);
            sy += y.values()[0];
            syx += y.values()[0] * x[0];
        }
        assert!((sy / n as f64).abs() < 0.004);
        let gain = 1.0 / std::f64::consts::PI.sqrt();
        assert!((syx / n as f64 - gain).abs() < 0.005);
    }

    #[test]
    fn signal_covariance_matches_prior() {
        let cx = dmatrix![2.0, 0.5, 0.0; 0.5, 1.0, -0.3; 0.0, -0.3, 0.7];
        let p = ProbitProblem::new(DMatrix::identity(3, 3), cx.clone(), DMatrix::identity(3, 3), 0.0).unwrap();
        let mut rng = substream(5, 0);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let (x, _) = sample_instance(&p, &mut rng);
            acc += &x * x.transpose();
        }
        acc /= n as f64;
        let tol = 5.0 * (2.0 / n as f64).sqrt() * cx.amax();
        assert!((acc - cx).amax() < tol);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let d = dmatrix![1.0, 0.0; 0.0, 0.0];
        assert_eq!(
            ProbitProblem::isotropic(d, 1.0, 1.0, 0.0).unwrap_err(),
            ModelError::ZeroDesignRow { row: 1 }
        );
        let asym = dmatrix![1.0, 0.2; 0.1, 1.0];
        assert!(matches!(
            ProbitProblem::new(DMatrix::identity(2, 2), asym, DMatrix::identity(2, 2), 0.0),
            Err(ModelError::NotSymmetric { .. })
        ));
        let indefinite = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(matches!(
            ProbitProblem::new(DMatrix::identity(2, 2), indefinite, DMatrix::identity(2, 2), 0.0),
            Err(ModelError::NotPositiveDefinite { .. })
        ));
        let singular = dmatrix![1.0, 1.0; 1.0, 1.0 + 1e-14];
        assert!(matches!(
            ProbitProblem::new(DMatrix::identity(2, 2), singular, DMatrix::identity(2, 2), 0.0),
            Err(ModelError::NearSingular { .. })
        ));
        assert!(matches!(
            ProbitProblem::isotropic(DMatrix::identity(2, 2), 1.0, 1.0, -1.0),
            Err(ModelError::InvalidArgument(_))
        ));
    }

    #[test]
    fn observation_ranges_are_checked() {
        assert!(ObservationVector::binary(DVector::from_vec(vec![1.0, -1.0])).is_ok());
        assert!(ObservationVector::binary(DVector::from_vec(vec![1.0, 0.5])).is_err());
        assert!(ObservationVector::smoothed(DVector::from_vec(vec![0.5, -1.0])).is_ok());
        assert!(ObservationVector::smoothed(DVector::from_vec(vec![1.5])).is_err());
    }

    #[test]
    fn snr_to_noise_variance() {
        let c = SyntheticConfig {
            m: 1,
            n: 1,
            sigma_x_sq: 2.0,
            snr_db: 10.0,
            seed: 0,
        };
        assert!((c.noise_variance() - 0.2).abs() < 1e-15);
        assert!(c.validate().is_ok());
    }
}
