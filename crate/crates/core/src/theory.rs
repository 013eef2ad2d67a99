//! Numerical verification that the expected noise-stability functional
//! E‖f(x+ε) − f(x)‖² decomposes into a Jacobian term σ²‖J‖²_F plus a
//! diagonal-Hessian term (3σ⁴/4)·ΣᵢΣₖ(∂²f_k/∂x_i²)² for small Gaussian ε.
//!
//! Functions are tape-backed so Jacobian rows come from exact reverse-mode
//! differentiation; diagonal second derivatives come from central differences
//! of those exact first derivatives. The Monte-Carlo estimate is the
//! independent side of the check.

use crate::findiff::{self, FiniteDiffError};
use crate::rng;
use crate::tape::{NodeId, TapeBuilder, TapeError};
use crate::tensor::TensorValue;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("function output is not finite: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    FiniteDiff(#[from] FiniteDiffError),
}

/// A vector function ℝ^in → ℝ^out described as a tape construction, so its
/// value and its exact reverse-mode Jacobian share one definition.
pub struct TapeFn {
    in_dim: usize,
    out_dim: usize,
    build: Box<dyn Fn(&mut TapeBuilder, NodeId) -> Result<NodeId, TapeError> + Send + Sync>,
}

impl TapeFn {
    pub fn new<F>(in_dim: usize, out_dim: usize, build: F) -> Self
    where
        F: Fn(&mut TapeBuilder, NodeId) -> Result<NodeId, TapeError> + Send + Sync + 'static,
    {
        TapeFn {
            in_dim,
            out_dim,
            build: Box::new(build),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn check_input(&self, x: &[f64]) -> Result<(), TheoryError> {
        if x.len() != self.in_dim {
            return Err(TheoryError::BadArgument(format!(
                "input length {} but function expects {}",
                x.len(),
                self.in_dim
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, TheoryError> {
        self.check_input(x)?;
        let mut tb = TapeBuilder::new();
        let xn = tb.param("x", TensorValue::vector(x.to_vec()))?;
        let out = (self.build)(&mut tb, xn)?;
        let v = tb.value(out);
        if v.numel() != self.out_dim {
            return Err(TheoryError::BadArgument(format!(
                "function produced {} outputs, declared {}",
                v.numel(),
                self.out_dim
            )));
        }
        Ok(v.data().to_vec())
    }

    /// Exact Jacobian, shape `[out_dim, in_dim]` row-major, one reverse pass
    /// per output row on a single recorded tape.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>, TheoryError> {
        self.check_input(x)?;
        let mut tb = TapeBuilder::new();
        let xn = tb.param("x", TensorValue::vector(x.to_vec()))?;
        let out = (self.build)(&mut tb, xn)?;
        if tb.value(out).numel() != self.out_dim {
            return Err(TheoryError::BadArgument(format!(
                "function produced {} outputs, declared {}",
                tb.value(out).numel(),
                self.out_dim
            )));
        }
        let root_shape = tb.value(out).shape().to_vec();
        let tape = tb.finish(out, &[])?;
        let mut jac = Vec::with_capacity(self.out_dim * self.in_dim);
        for k in 0..self.out_dim {
            let mut seed = TensorValue::zeros(root_shape.clone());
            seed.data_mut()[k] = 1.0;
            let grads = tape.backward(&seed)?;
            jac.extend_from_slice(grads["x"].data());
        }
        Ok(jac)
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Sample mean of ‖f(x+ε) − f(x)‖² over n iid draws ε ~ N(0, σ²I).
pub fn mc_noise_stability(
    f: &TapeFn,
    x: &[f64],
    sigma: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<McEstimate, TheoryError> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(TheoryError::BadArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if n < 2 {
        return Err(TheoryError::BadArgument(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    let base = f.eval(x)?;
    let mut probe = x.to_vec();
    // Welford accumulation keeps the variance numerically clean at n = 1e6.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        for (p, &xi) in probe.iter_mut().zip(x) {
            *p = xi + sigma * rng::normal(rng);
        }
        let y = f.eval(&probe)?;
        let sq: f64 = y
            .iter()
            .zip(&base)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if !sq.is_finite() {
            return Err(TheoryError::NonFinite(format!("draw {i}")));
        }
        let delta = sq - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (sq - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok(McEstimate {
        mean,
        std_err: (var / n as f64).sqrt(),
        n,
    })
}

/// ‖f(x+ε) − f(x)‖² / ‖ε‖², the sampled local Lipschitz quotient.
pub fn lipschitz_ratio(f: &TapeFn, x: &[f64], eps: &[f64]) -> Result<f64, TheoryError> {
    if eps.len() != x.len() {
        return Err(TheoryError::BadArgument(format!(
            "eps length {} but input has {}",
            eps.len(),
            x.len()
        )));
    }
    let eps_sq: f64 = eps.iter().map(|e| e * e).sum();
    if eps_sq == 0.0 {
        return Err(TheoryError::BadArgument(
            "perturbation must be nonzero".to_string(),
        ));
    }
    let base = f.eval(x)?;
    let shifted: Vec<f64> = x.iter().zip(eps).map(|(a, e)| a + e).collect();
    let moved = f.eval(&shifted)?;
    let num: f64 = moved
        .iter()
        .zip(&base)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / eps_sq)
}

/// First-order term Ω_J = σ² ‖J_f(x)‖²_F from the exact Jacobian.
pub fn jacobian_term(f: &TapeFn, x: &[f64], sigma: f64) -> Result<f64, TheoryError> {
    let jac = f.jacobian(x)?;
    Ok(sigma * sigma * jac.iter().map(|v| v * v).sum::<f64>())
}

/// Ω_J computed through the finite-difference Jacobian oracle instead of
/// reverse mode; the independent route of the dual check.
pub fn jacobian_term_fd(f: &TapeFn, x: &[f64], sigma: f64, h: f64) -> Result<f64, TheoryError> {
    let xt = TensorValue::vector(x.to_vec());
    let jac = findiff::finite_difference_jacobian(
        |probe| f.eval(probe.data()).expect("finite-difference probe eval"),
        &xt,
        h,
    )?;
    Ok(sigma * sigma * jac.data().iter().map(|v| v * v).sum::<f64>())
}

/// Default step for second derivatives of exact first derivatives.
pub const HESSIAN_FD_STEP: f64 = 1e-4;

/// Second-order terms. `diagonal` is the implemented quantity
/// (3σ⁴/4)·Σ_k Σ_i (∂²f_k/∂x_i²)²; `trace_form` applies the same constant to
/// Σ_k Tr(H_kᵀH_k), which coincides with the diagonal form exactly when every
/// Hessian is diagonal and exposes the gap otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianTerms {
    pub diagonal: f64,
    pub trace_form: f64,
}

/// Fourth-moment constant: E[ε⁴] = 3σ⁴ for ε ~ N(0, σ²), so each diagonal
/// entry contributes (1/4)·(∂²f/∂x_i²)²·3σ⁴.
pub fn hessian_constant(sigma: f64) -> f64 {
    0.75 * sigma.powi(4)
}

/// Diagonal-Hessian term via central differences (step `h`) of exact
/// reverse-mode first derivatives.
pub fn hessian_diag_term(
    f: &TapeFn,
    x: &[f64],
    sigma: f64,
    h: f64,
) -> Result<HessianTerms, TheoryError> {
    if h <= 0.0 {
        return Err(TheoryError::BadArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let d = f.in_dim();
    let m = f.out_dim();
    let mut diag_sq = 0.0;
    let mut full_sq = 0.0;
    let mut probe = x.to_vec();
    for j in 0..d {
        let orig = probe[j];
        probe[j] = orig + h;
        let jp = f.jacobian(&probe)?;
        probe[j] = orig - h;
        let jm = f.jacobian(&probe)?;
        probe[j] = orig;
        for k in 0..m {
            for i in 0..d {
                // ∂²f_k / ∂x_i ∂x_j
                let second = (jp[k * d + i] - jm[k * d + i]) / (2.0 * h);
                full_sq += second * second;
                if i == j {
                    diag_sq += second * second;
                }
            }
        }
    }
    let c = hessian_constant(sigma);
    Ok(HessianTerms {
        diagonal: c * diag_sq,
        trace_form: c * full_sq,
    })
}

/// One σ's worth of expansion verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub sigma: f64,
    pub n_samples: usize,
    pub mc_estimate: f64,
    pub mc_std_err: f64,
    pub jacobian_term: f64,
    pub hessian_term: f64,
    pub hessian_trace_form: f64,
    pub residual: f64,
    /// Set when the Monte-Carlo standard error exceeds 10% of the estimate.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionSummary {
    pub reports: Vec<ExpansionReport>,
    /// Least-squares slope of log mc vs log σ; absent when any estimate is
    /// nonpositive.
    pub log_log_slope: Option<f64>,
}

/// Verify the expansion across a σ grid spanning at least one decade.
pub fn verify_expansion(
    f: &TapeFn,
    x: &[f64],
    sigmas: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ExpansionSummary, TheoryError> {
    if sigmas.is_empty() || sigmas.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(TheoryError::BadArgument(
            "sigma grid must be nonempty and strictly positive".to_string(),
        ));
    }
    let lo = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sigmas.iter().cloned().fold(0.0, f64::max);
    if hi / lo < 10.0 - 1e-9 {
        return Err(TheoryError::BadArgument(format!(
            "sigma grid must span at least a decade ({lo}..{hi})"
        )));
    }
    let mut reports = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mc = mc_noise_stability(f, x, sigma, n, rng)?;
        let jac = jacobian_term(f, x, sigma)?;
        let hess = hessian_diag_term(f, x, sigma, HESSIAN_FD_STEP)?;
        let residual = mc.mean - (jac + hess.diagonal);
        reports.push(ExpansionReport {
            sigma,
            n_samples: n,
            mc_estimate: mc.mean,
            mc_std_err: mc.std_err,
            jacobian_term: jac,
            hessian_term: hess.diagonal,
            hessian_trace_form: hess.trace_form,
            residual,
            low_confidence: mc.std_err > 0.1 * mc.mean.abs(),
        });
    }
    let slope = if reports.iter().all(|r| r.mc_estimate > 0.0) {
        Some(least_squares_slope(
            &reports.iter().map(|r| r.sigma.ln()).collect::<Vec<_>>(),
            &reports
                .iter()
                .map(|r| r.mc_estimate.ln())
                .collect::<Vec<_>>(),
        ))
    } else {
        None
    };
    Ok(ExpansionSummary {
        reports,
        log_log_slope: slope,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Empirical E[ε⁴] over n draws, for pinning the fourth-moment constant.
pub fn empirical_fourth_moment(sigma: f64, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..n {
        let e = sigma * rng::normal(rng);
        acc += e * e * e * e;
    }
    acc / n as f64
}

/// Verification functions kept tiny (input dim ≤ 16) so exact Jacobians and
/// Hessians stay cheap.
pub mod functions {
    use super::TapeFn;
    use crate::rng;
    use crate::tensor::TensorValue;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// f(x) = x.
    pub fn identity(dim: usize) -> TapeFn {
        TapeFn::new(dim, dim, |tb, x| tb.scale(x, 1.0))
    }

    /// f(x) = c·x.
    pub fn scale_by(c: f64, dim: usize) -> TapeFn {
        TapeFn::new(dim, dim, move |tb, x| tb.scale(x, c))
    }

    /// Constant function (ignores its input).
    pub fn constant(dim: usize, value: f64) -> TapeFn {
        TapeFn::new(dim, dim, move |tb, x| {
            let zero = tb.scale(x, 0.0)?;
            let c = tb.constant(TensorValue::filled(vec![dim], value));
            tb.add(zero, c)
        })
    }

    /// Elementwise tanh; every Hessian is exactly diagonal.
    pub fn elementwise_tanh(dim: usize) -> TapeFn {
        TapeFn::new(dim, dim, |tb, x| tb.tanh(x))
    }

    /// Scalar f(x) = Σᵢ xᵢ³; diagonal Hessian with entries 6xᵢ.
    pub fn cubic_sum(dim: usize) -> TapeFn {
        TapeFn::new(dim, 1, |tb, x| {
            let sq = tb.mul(x, x)?;
            let cube = tb.mul(sq, x)?;
            tb.sum(cube)
        })
    }

    /// f(x) = W·x for a fixed row-major `rows × dim` matrix.
    pub fn linear_map(w: Vec<f64>, rows: usize, dim: usize) -> TapeFn {
        assert_eq!(w.len(), rows * dim);
        TapeFn::new(dim, rows, move |tb, x| {
            let wt = tb.constant(TensorValue::new(vec![rows, dim], w.clone()).unwrap());
            let col = tb.reshape(x, vec![dim, 1])?;
            let prod = tb.matmul(wt, col)?;
            tb.reshape(prod, vec![rows])
        })
    }

    /// Random two-layer tanh network with N(0, weight_std²) weights.
    pub fn random_two_layer(
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        weight_std: f64,
        seed: u64,
    ) -> TapeFn {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let w1 = rng::gaussian_tensor(&mut r, vec![d_in, d_hidden], weight_std);
        let b1 = rng::gaussian_tensor(&mut r, vec![d_hidden], weight_std);
        let w2 = rng::gaussian_tensor(&mut r, vec![d_hidden, d_out], weight_std);
        let b2 = rng::gaussian_tensor(&mut r, vec![d_out], weight_std);
        TapeFn::new(d_in, d_out, move |tb, x| {
            let row = tb.reshape(x, vec![1, d_in])?;
            let w1n = tb.constant(w1.clone());
            let b1n = tb.constant(b1.clone());
            let w2n = tb.constant(w2.clone());
            let b2n = tb.constant(b2.clone());
            let h = tb.matmul(row, w1n)?;
            let hb = tb.add_row(h, b1n)?;
            let act = tb.tanh(hb)?;
            let o = tb.matmul(act, w2n)?;
            let ob = tb.add_row(o, b2n)?;
            tb.reshape(ob, vec![d_out])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn identity_stability_matches_d_sigma_sq() {
        let d = 6;
        let f = functions::identity(d);
        let x = vec![0.2; d];
        let sigma = 0.05;
        let mut rng = stream_rng(1, Stream::Theory);
        let est = mc_noise_stability(&f, &x, sigma, 20_000, &mut rng).unwrap();
        let expect = d as f64 * sigma * sigma;
        assert!(
            (est.mean - expect).abs() < 3.0 * est.std_err,
            "mc {} vs analytic {expect} (se {})",
            est.mean,
            est.std_err
        );
    }

    #[test]
    fn constant_function_has_zero_stability() {
        let f = functions::constant(4, 1.7);
        let mut rng = stream_rng(2, Stream::Theory);
        let est = mc_noise_stability(&f, &[0.0; 4], 0.1, 100, &mut rng).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn doubling_map_matches_four_sigma_sq() {
        let f = functions::scale_by(2.0, 1);
        let sigma = 0.1;
        let mut rng = stream_rng(3, Stream::Theory);
        let est = mc_noise_stability(&f, &[0.3], sigma, 50_000, &mut rng).unwrap();
        assert!(
            (est.mean - 0.04).abs() < 3.0 * est.std_err,
            "mc {} (se {})",
            est.mean,
            est.std_err
        );
    }

    #[test]
    fn lipschitz_ratio_of_linear_map_is_c_squared() {
        let f = functions::scale_by(-3.0, 4);
        let ratio = lipschitz_ratio(&f, &[0.1, 0.2, -0.5, 2.0], &[0.01, -0.02, 0.005, 0.03])
            .unwrap();
        assert!((ratio - 9.0).abs() < 1e-9, "ratio {ratio}");
        let c = functions::constant(3, 0.5);
        assert_eq!(lipschitz_ratio(&c, &[0.0; 3], &[0.01; 3]).unwrap(), 0.0);
    }

    #[test]
    fn tanh_lipschitz_ratio_approaches_one_from_below() {
        let f = functions::elementwise_tanh(1);
        let r1 = lipschitz_ratio(&f, &[0.0], &[0.1]).unwrap();
        let r2 = lipschitz_ratio(&f, &[0.0], &[0.01]).unwrap();
        assert!(r1 < 1.0 && r2 < 1.0);
        assert!(r2 > r1, "smaller perturbation should be closer to tanh'(0)² = 1");
        assert!(1.0 - r2 < 1e-3);
    }

    #[test]
    fn jacobian_term_identity_and_linear() {
        let d = 5;
        let sigma = 0.2;
        let f = functions::identity(d);
        let val = jacobian_term(&f, &[0.1; 5], sigma).unwrap();
        assert!((val - sigma * sigma * d as f64).abs() < 1e-12);

        let w = vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5];
        let frob_sq: f64 = w.iter().map(|v| v * v).sum();
        let f = functions::linear_map(w, 2, 3);
        let val = jacobian_term(&f, &[0.3, -0.4, 0.9], sigma).unwrap();
        assert!((val - sigma * sigma * frob_sq).abs() < 1e-12, "val {val}");
    }

    #[test]
    fn jacobian_term_routes_agree() {
        let f = functions::random_two_layer(3, 5, 2, 0.6, 42);
        let x = [0.2, -0.7, 0.4];
        let exact = jacobian_term(&f, &x, 0.1).unwrap();
        let fd = jacobian_term_fd(&f, &x, 0.1, 1e-6).unwrap();
        assert!(
            (exact - fd).abs() / exact.abs().max(1e-12) < 1e-6,
            "exact {exact} vs fd {fd}"
        );
    }

    #[test]
    fn hessian_term_scalar_square() {
        // f(x) = x² → f'' = 2, Ω_H = (3σ⁴/4)·4 = 3σ⁴ at any x.
        let f = TapeFn::new(1, 1, |tb, x| tb.sum_sq(x));
        let sigma: f64 = 0.3;
        let terms = hessian_diag_term(&f, &[1.3], sigma, HESSIAN_FD_STEP).unwrap();
        let expect = 3.0 * sigma.powi(4);
        assert!(
            (terms.diagonal - expect).abs() / expect < 1e-5,
            "diag {} vs {expect}",
            terms.diagonal
        );
        assert!((terms.trace_form - expect).abs() / expect < 1e-5);
    }

    #[test]
    fn hessian_term_zero_for_linear() {
        let f = functions::scale_by(4.0, 3);
        let terms = hessian_diag_term(&f, &[0.1, 0.7, -0.2], 0.1, HESSIAN_FD_STEP).unwrap();
        assert!(terms.diagonal.abs() < 1e-18, "diag {}", terms.diagonal);
    }

    #[test]
    fn hessian_term_cubic_sum_hand_value() {
        // f(x) = Σ xᵢ³ at (1,1), σ = 0.1: f''ᵢ = 6 → (3·1e-4/4)·(36+36).
        let f = functions::cubic_sum(2);
        let terms = hessian_diag_term(&f, &[1.0, 1.0], 0.1, HESSIAN_FD_STEP).unwrap();
        let expect = (3.0 * 1e-4 / 4.0) * 72.0;
        assert!(
            (terms.diagonal - expect).abs() / expect < 1e-5,
            "diag {} vs {expect}",
            terms.diagonal
        );
    }

    #[test]
    fn fourth_moment_matches_gaussian() {
        let sigma: f64 = 0.7;
        let mut rng = stream_rng(5, Stream::Theory);
        let m4 = empirical_fourth_moment(sigma, 1_000_000, &mut rng);
        let expect = 3.0 * sigma.powi(4);
        assert!(
            (m4 - expect).abs() / expect < 0.02,
            "E[ε⁴] = {m4} vs {expect}"
        );
    }

    #[test]
    fn odd_moments_cancel() {
        // Empirical mean of εᵀJ vanishes like σ‖J‖/√n.
        let f = functions::random_two_layer(4, 6, 3, 0.5, 7);
        let x = [0.1, -0.3, 0.6, 0.2];
        let jac = f.jacobian(&x).unwrap();
        let sigma = 0.1;
        let n = 200_000;
        let mut rng = stream_rng(6, Stream::Theory);
        let mut acc = vec![0.0; f.out_dim()];
        for _ in 0..n {
            let eps: Vec<f64> = (0..4).map(|_| sigma * rng::normal(&mut rng)).collect();
            for k in 0..f.out_dim() {
                let dot: f64 = (0..4).map(|i| eps[i] * jac[k * 4 + i]).sum();
                acc[k] += dot;
            }
        }
        for (k, a) in acc.iter().enumerate() {
            let mean = a / n as f64;
            let row_norm: f64 = (0..4).map(|i| jac[k * 4 + i].powi(2)).sum::<f64>().sqrt();
            let bound = 4.0 * sigma * row_norm / (n as f64).sqrt();
            assert!(mean.abs() < bound, "row {k}: mean {mean}, bound {bound}");
        }
    }

    #[test]
    fn linear_function_residual_within_noise() {
        let w = vec![0.5, -1.0, 2.0, 0.3, 0.8, -0.4];
        let f = functions::linear_map(w, 2, 3);
        let x = [0.2, 0.5, -0.1];
        let mut rng = stream_rng(7, Stream::Theory);
        let summary =
            verify_expansion(&f, &x, &[1e-3, 3e-3, 1e-2], 20_000, &mut rng).unwrap();
        for r in &summary.reports {
            assert_eq!(r.hessian_term, 0.0, "linear map has zero Hessian");
            assert!(
                r.residual.abs() <= 3.0 * r.mc_std_err,
                "sigma {}: residual {} vs 3se {}",
                r.sigma,
                r.residual,
                3.0 * r.mc_std_err
            );
        }
        let slope = summary.log_log_slope.unwrap();
        assert!((1.95..=2.05).contains(&slope), "slope {slope}");
    }

    #[test]
    fn sigma_grid_must_span_a_decade() {
        let f = functions::identity(2);
        let mut rng = stream_rng(8, Stream::Theory);
        assert!(matches!(
            verify_expansion(&f, &[0.0, 0.0], &[1e-3, 2e-3], 100, &mut rng),
            Err(TheoryError::BadArgument(_))
        ));
    }

    #[test]
    fn mc_rejects_bad_arguments() {
        let f = functions::identity(2);
        let mut rng = stream_rng(9, Stream::Theory);
        assert!(mc_noise_stability(&f, &[0.0, 0.0], 0.0, 10, &mut rng).is_err());
        assert!(mc_noise_stability(&f, &[0.0, 0.0], 0.1, 1, &mut rng).is_err());
        assert!(lipschitz_ratio(&f, &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }
}
