//! Diagonal Gaussians, isotropic priors and Bernoullis: closed-form KLs,
//! reconstruction likelihoods and reparameterized sampling.
//!
//! Each quantity comes in two forms: a plain function on slices, and a tape
//! builder working row-wise on a batch (`[n × d]` in, `[n × 1]` out) so that
//! it can sit inside a differentiable loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Lower/upper clamp applied to every probability before a log.
pub const PROB_EPS: f64 = 1e-7;

/// Floor added to the softplus that produces encoder standard deviations.
pub const STD_FLOOR: f64 = 1e-4;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Shape {
                op: "DiagGaussian",
                lhs: (1, mean.len()),
                rhs: (1, std.len()),
            });
        }
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Contract("standard deviations must be > 0".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| {
                let u = (z - m) / s;
                -HALF_LN_2PI - s.ln() - 0.5 * u * u
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotropicPrior {
    pub dim: usize,
    pub sigma: f64,
}

impl IsotropicPrior {
    pub fn new(dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Contract(format!("prior sigma must be > 0, got {sigma}")));
        }
        Ok(Self { dim, sigma })
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        isotropic_log_density(z, self.sigma)
    }
}

pub fn isotropic_log_density(z: &[f64], sigma: f64) -> f64 {
    let ls = sigma.ln();
    z.iter()
        .map(|z| {
            let u = z / sigma;
            -HALF_LN_2PI - ls - 0.5 * u * u
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliParam {
    prob: f64,
}

impl BernoulliParam {
    /// Probability clamped into `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn new(prob: f64) -> Self {
        Self {
            prob: clamp_prob(prob),
        }
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }

    /// `log p(y)` for a hard label.
    pub fn log_prob(&self, y: f64) -> f64 {
        y * self.prob.ln() + (1.0 - y) * (1.0 - self.prob).ln()
    }
}

/// `mean + std ⊙ noise`.
pub fn reparam_sample(q: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != q.dim() {
        return Err(Error::Shape {
            op: "reparam_sample",
            lhs: (1, q.dim()),
            rhs: (1, noise.len()),
        });
    }
    Ok(q
        .mean
        .iter()
        .zip(&q.std)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// `KL(N(μ, diag σ²) ‖ N(0, s² I))`.
pub fn kl_diag_vs_isotropic(q: &DiagGaussian, p: &IsotropicPrior) -> Result<f64> {
    if q.dim() != p.dim {
        return Err(Error::Shape {
            op: "kl_diag_vs_isotropic",
            lhs: (1, q.dim()),
            rhs: (1, p.dim),
        });
    }
    let s = p.sigma;
    let s2 = s * s;
    Ok(q.mean
        .iter()
        .zip(&q.std)
        .map(|(m, sd)| (s / sd).ln() + (sd * sd + m * m) / (2.0 * s2) - 0.5)
        .sum())
}

/// `KL(Ber(π) ‖ Ber(α))`.
pub fn kl_bernoulli(q: BernoulliParam, p: BernoulliParam) -> f64 {
    let (pi, a) = (q.prob, p.prob);
    pi * (pi / a).ln() + (1.0 - pi) * ((1.0 - pi) / (1.0 - a)).ln()
}

/// `−Σ_d log N(x_d | mean_d, exp(logvar))` with one variance for all pixels.
pub fn gaussian_recon_nll(x: &[f64], mean: &[f64], shared_logvar: f64) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::Shape {
            op: "gaussian_recon_nll",
            lhs: (1, x.len()),
            rhs: (1, mean.len()),
        });
    }
    let inv_var = (-shared_logvar).exp();
    Ok(x.iter()
        .zip(mean)
        .map(|(x, m)| HALF_LN_2PI + 0.5 * shared_logvar + 0.5 * (x - m) * (x - m) * inv_var)
        .sum())
}

/// `−Σ_d [x_d log p_d + (1−x_d) log(1−p_d)]` with clamped probabilities.
pub fn bernoulli_recon_nll(x: &[f64], prob: &[f64]) -> Result<f64> {
    if x.len() != prob.len() {
        return Err(Error::Shape {
            op: "bernoulli_recon_nll",
            lhs: (1, x.len()),
            rhs: (1, prob.len()),
        });
    }
    Ok(x.iter()
        .zip(prob)
        .map(|(x, p)| {
            let p = clamp_prob(*p);
            -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
        })
        .sum())
}

/// Same as [`bernoulli_recon_nll`] parameterized by logits,
/// `Σ_d softplus(l_d) − x_d l_d`.
pub fn bernoulli_recon_nll_logits(x: &[f64], logits: &[f64]) -> f64 {
    x.iter()
        .zip(logits)
        .map(|(x, l)| crate::autodiff::tape::softplus(*l) - x * l)
        .sum()
}

/// Tape builders. All batch inputs are `[n × d]`; outputs are `[n × 1]`.
pub mod graph {
    use super::*;

    /// Encoder standard deviation from an unconstrained head output.
    pub fn positive_std(tape: &mut Tape, raw: Var) -> Var {
        let sp = tape.softplus(raw);
        tape.add_scalar(sp, STD_FLOOR)
    }

    pub fn reparam(tape: &mut Tape, mean: Var, std: Var, noise: Var) -> Result<Var> {
        let scaled = tape.mul(std, noise)?;
        tape.add(mean, scaled)
    }

    /// Row-wise `KL(N(μ, diag σ²) ‖ N(0, s² I))`.
    pub fn kl_diag_isotropic(tape: &mut Tape, mean: Var, std: Var, sigma: f64) -> Result<Var> {
        let d = tape.shape(mean).1 as f64;
        let m2 = tape.square(mean);
        let s2 = tape.square(std);
        let tot = tape.add(m2, s2)?;
        let quad = tape.scale(tot, 0.5 / (sigma * sigma));
        let log_std = tape.ln(std);
        let inner = tape.sub(quad, log_std)?;
        let summed = tape.sum_cols(inner);
        Ok(tape.add_scalar(summed, d * (sigma.ln() - 0.5)))
    }

    /// Row-wise `KL(Ber(π) ‖ Ber(α))` for `π: [n × 1]`.
    pub fn kl_bernoulli(tape: &mut Tape, pi: Var, alpha: f64) -> Result<Var> {
        let a = clamp_prob(alpha);
        let p = tape.clamp(pi, PROB_EPS, 1.0 - PROB_EPS);
        let q = {
            let neg = tape.neg(p);
            tape.add_scalar(neg, 1.0)
        };
        let lp = tape.ln(p);
        let lq = tape.ln(q);
        let lp = tape.add_scalar(lp, -a.ln());
        let lq = tape.add_scalar(lq, -(1.0 - a).ln());
        let t1 = tape.mul(p, lp)?;
        let t2 = tape.mul(q, lq)?;
        tape.add(t1, t2)
    }

    /// Row-wise `log π` and `log(1 − π)` after clamping.
    pub fn log_prob_pair(tape: &mut Tape, pi: Var) -> (Var, Var) {
        let p = tape.clamp(pi, PROB_EPS, 1.0 - PROB_EPS);
        let neg = tape.neg(p);
        let q = tape.add_scalar(neg, 1.0);
        (tape.ln(p), tape.ln(q))
    }

    /// `(log π, log(1 − π))` for `π = sigmoid(logits)`, computed as
    /// `−softplus(∓l)` so neither side saturates to `−∞`.
    pub fn log_prob_pair_logits(tape: &mut Tape, logits: Var) -> (Var, Var) {
        let neg = tape.neg(logits);
        let sp_neg = tape.softplus(neg);
        let sp_pos = tape.softplus(logits);
        (tape.neg(sp_neg), tape.neg(sp_pos))
    }

    /// Row-wise `KL(Ber(sigmoid(l)) ‖ Ber(α))` from logits.
    pub fn kl_bernoulli_logits(tape: &mut Tape, logits: Var, alpha: f64) -> Result<Var> {
        let a = clamp_prob(alpha);
        let (lp, lq) = log_prob_pair_logits(tape, logits);
        let p = tape.sigmoid(logits);
        let q = {
            let neg = tape.neg(p);
            tape.add_scalar(neg, 1.0)
        };
        let lp = tape.add_scalar(lp, -a.ln());
        let lq = tape.add_scalar(lq, -(1.0 - a).ln());
        let t1 = tape.mul(p, lp)?;
        let t2 = tape.mul(q, lq)?;
        tape.add(t1, t2)
    }

    /// Row-wise Gaussian log-likelihood with a shared `[1 × 1]` log-variance.
    pub fn gaussian_log_lik(tape: &mut Tape, x: Var, mean: Var, logvar: Var) -> Result<Var> {
        let d = tape.shape(x).1 as f64;
        let diff = tape.sub(x, mean)?;
        let sq = tape.square(diff);
        let sse = tape.sum_cols(sq);
        let neg_lv = tape.neg(logvar);
        let inv_var = tape.exp(neg_lv);
        let quad = tape.mul(sse, inv_var)?;
        let quad = tape.scale(quad, -0.5);
        let norm = tape.scale(logvar, -0.5 * d);
        let ll = tape.add(quad, norm)?;
        Ok(tape.add_scalar(ll, -d * HALF_LN_2PI))
    }

    /// Row-wise Bernoulli log-likelihood from probabilities (clamped).
    pub fn bernoulli_log_lik(tape: &mut Tape, x: Var, prob: Var) -> Result<Var> {
        let (lp, lq) = log_prob_pair(tape, prob);
        let xs = tape.value(x).clone();
        let one_minus = tape.constant(xs.mapv(|v| 1.0 - v));
        let a = tape.mul(x, lp)?;
        let b = tape.mul(one_minus, lq)?;
        let s = tape.add(a, b)?;
        Ok(tape.sum_cols(s))
    }

    /// Row-wise Bernoulli log-likelihood from logits, `Σ x·l − softplus(l)`.
    pub fn bernoulli_log_lik_logits(tape: &mut Tape, x: Var, logits: Var) -> Result<Var> {
        let xl = tape.mul(x, logits)?;
        let sp = tape.softplus(logits);
        let s = tape.sub(xl, sp)?;
        Ok(tape.sum_cols(s))
    }

    /// Row-wise `log N(z | 0, σ² I)`.
    pub fn isotropic_log_density(tape: &mut Tape, z: Var, sigma: f64) -> Var {
        let d = tape.shape(z).1 as f64;
        let sq = tape.square(z);
        let s = tape.sum_cols(sq);
        let s = tape.scale(s, -0.5 / (sigma * sigma));
        tape.add_scalar(s, -d * (HALF_LN_2PI + sigma.ln()))
    }

    /// Row-wise `log N(z | μ, diag σ²)`.
    pub fn diag_log_density(tape: &mut Tape, z: Var, mean: Var, std: Var) -> Result<Var> {
        let d = tape.shape(z).1 as f64;
        let diff = tape.sub(z, mean)?;
        let u = tape.div(diff, std)?;
        let u2 = tape.square(u);
        let u2 = tape.scale(u2, -0.5);
        let ls = tape.ln(std);
        let t = tape.sub(u2, ls)?;
        let s = tape.sum_cols(t);
        Ok(tape.add_scalar(s, -d * HALF_LN_2PI))
    }

    /// Constant noise matrix on the tape.
    pub fn noise(tape: &mut Tape, values: Matrix) -> Var {
        tape.constant(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn reparam_with_zero_noise_is_mean() {
        let q = DiagGaussian::new(vec![1.0, -2.0], vec![0.3, 4.0]).unwrap();
        assert_eq!(reparam_sample(&q, &[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn reparam_at_std_floor_ignores_noise() {
        let q = DiagGaussian::new(vec![0.5, 0.25], vec![STD_FLOOR, STD_FLOOR]).unwrap();
        let z = reparam_sample(&q, &[3.0, -3.0]).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-3 && (z[1] - 0.25).abs() < 1e-3);
    }

    #[test]
    fn reparam_monte_carlo_mean() {
        let q = DiagGaussian::new(vec![1.5, -0.7], vec![2.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let e: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = reparam_sample(&q, &e).unwrap();
            acc[0] += z[0];
            acc[1] += z[1];
        }
        for i in 0..2 {
            let se = q.std[i] / (n as f64).sqrt();
            assert!((acc[i] / n as f64 - q.mean[i]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn kl_identical_is_zero() {
        let q = DiagGaussian::new(vec![0.0; 3], vec![2.0; 3]).unwrap();
        let p = IsotropicPrior::new(3, 2.0).unwrap();
        assert!(kl_diag_vs_isotropic(&q, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_unit_shift_is_half() {
        let q = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let p = IsotropicPrior::new(1, 1.0).unwrap();
        assert!((kl_diag_vs_isotropic(&q, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    fn mc_kl(q: &DiagGaussian, p: &IsotropicPrior, n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut e = vec![0.0; q.dim()];
        for _ in 0..n {
            for v in e.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let z = reparam_sample(q, &e).unwrap();
            let d = q.log_density(&z) - p.log_density(&z);
            sum += d;
            sumsq += d * d;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn kl_wide_prior_matches_monte_carlo() {
        let q = DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
        let p = IsotropicPrior::new(1, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mc, se) = mc_kl(&q, &p, 1_000_000, &mut rng);
        let exact = kl_diag_vs_isotropic(&q, &p).unwrap();
        assert!((exact - mc).abs() < 3.0 * se, "exact {exact} mc {mc} se {se}");
    }

    #[test]
    fn kl_random_cases_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut misses = 0;
        for case in 0..20 {
            let d = 1 + case % 3;
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let std: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
            let q = DiagGaussian::new(mean, std).unwrap();
            let p = IsotropicPrior::new(d, rng.random_range(0.3..4.0)).unwrap();
            let (mc, se) = mc_kl(&q, &p, 1_000_000, &mut rng);
            let exact = kl_diag_vs_isotropic(&q, &p).unwrap();
            if (exact - mc).abs() >= 3.0 * se {
                misses += 1;
            }
        }
        // each case misses with probability ~0.3%; allow one unlucky draw
        assert!(misses <= 1, "{misses} of 20 cases outside 3 standard errors");
    }

    #[test]
    fn kl_bernoulli_cases() {
        let a = BernoulliParam::new(0.6);
        assert!(kl_bernoulli(a, a).abs() < 1e-15);
        let near_one = kl_bernoulli(BernoulliParam::new(1.0 - 1e-12), a);
        assert!((near_one + 0.6f64.ln()).abs() < 1e-5);
        // direct two-term sum
        let expected = 0.3 * (0.3f64 / 0.6).ln() + 0.7 * (0.7f64 / 0.4).ln();
        assert!((kl_bernoulli(BernoulliParam::new(0.3), a) - expected).abs() < 1e-15);
    }

    #[test]
    fn gaussian_nll_reference_values() {
        let d = 5;
        let x = vec![0.3; d];
        let v = gaussian_recon_nll(&x, &x, 0.0).unwrap();
        assert!((v - d as f64 * HALF_LN_2PI).abs() < 1e-12);
        let v = gaussian_recon_nll(&[1.0], &[0.0], 0.0).unwrap();
        assert!((v - (HALF_LN_2PI + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_nll_matches_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..7).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m: Vec<f64> = (0..7).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lv = -0.7;
        let sd = (0.5f64 * lv).exp();
        let direct: f64 = x
            .iter()
            .zip(&m)
            .map(|(x, m)| {
                let dens = (-(x - m) * (x - m) / (2.0 * sd * sd)).exp() / (sd * (2.0 * PI).sqrt());
                -dens.ln()
            })
            .sum();
        assert!((gaussian_recon_nll(&x, &m, lv).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_nll_reference_values() {
        let x = vec![1.0, 0.0, 1.0, 0.0];
        assert!(bernoulli_recon_nll(&x, &x).unwrap() < 1e-6);
        let half = vec![0.5; 4];
        assert!((bernoulli_recon_nll(&x, &half).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);
        let p = vec![0.9, 0.2, 0.35, 0.6];
        let direct = -(0.9f64.ln() + 0.8f64.ln() + 0.35f64.ln() + 0.4f64.ln());
        assert!((bernoulli_recon_nll(&x, &p).unwrap() - direct).abs() < 1e-12);
        let logits: Vec<f64> = p.iter().map(|p: &f64| (p / (1.0 - p)).ln()).collect();
        assert!((bernoulli_recon_nll_logits(&x, &logits) - direct).abs() < 1e-12);
    }

    #[test]
    fn graph_forms_match_plain_forms() {
        let mean = array![[0.3, -1.2, 0.8], [1.0, 0.0, -0.5]];
        let std = array![[0.5, 1.5, 0.2], [1.0, 2.0, 0.7]];
        let mut t = Tape::new();
        let m = t.constant(mean.clone());
        let s = t.constant(std.clone());
        let kl = graph::kl_diag_isotropic(&mut t, m, s, 0.7).unwrap();
        for r in 0..2 {
            let q = DiagGaussian::new(mean.row(r).to_vec(), std.row(r).to_vec()).unwrap();
            let p = IsotropicPrior::new(3, 0.7).unwrap();
            assert!((t.value(kl)[[r, 0]] - kl_diag_vs_isotropic(&q, &p).unwrap()).abs() < 1e-12);
        }

        let x = array![[0.1, 0.9, 0.4]];
        let mu = array![[0.2, 0.5, 0.4]];
        let xv = t.constant(x.clone());
        let mv = t.constant(mu.clone());
        let lv = t.scalar_constant(-1.3);
        let ll = graph::gaussian_log_lik(&mut t, xv, mv, lv).unwrap();
        let plain = gaussian_recon_nll(x.as_slice().unwrap(), mu.as_slice().unwrap(), -1.3).unwrap();
        assert!((t.value(ll)[[0, 0]] + plain).abs() < 1e-12);

        let pi = t.constant(array![[0.3], [0.95]]);
        let klb = graph::kl_bernoulli(&mut t, pi, 0.6).unwrap();
        assert!((t.value(klb)[[0, 0]] - kl_bernoulli(BernoulliParam::new(0.3), BernoulliParam::new(0.6))).abs() < 1e-12);
        assert!((t.value(klb)[[1, 0]] - kl_bernoulli(BernoulliParam::new(0.95), BernoulliParam::new(0.6))).abs() < 1e-12);

        let z = t.constant(array![[0.4, -0.3, 1.1]]);
        let lq = graph::diag_log_density(&mut t, z, m, s).unwrap();
        let q = DiagGaussian::new(mean.row(0).to_vec(), std.row(0).to_vec()).unwrap();
        assert!((t.value(lq)[[0, 0]] - q.log_density(&[0.4, -0.3, 1.1])).abs() < 1e-12);
        let lp = graph::isotropic_log_density(&mut t, z, 0.7);
        assert!((t.value(lp)[[0, 0]] - isotropic_log_density(&[0.4, -0.3, 1.1], 0.7)).abs() < 1e-12);
    }

    #[test]
    fn logit_forms_match_probability_forms() {
        let mut t = Tape::new();
        let l = t.constant(array![[-3.0], [0.0], [2.5]]);
        let (lp, lq) = graph::log_prob_pair_logits(&mut t, l);
        let kl = graph::kl_bernoulli_logits(&mut t, l, 0.6).unwrap();
        for (r, &x) in [-3.0f64, 0.0, 2.5].iter().enumerate() {
            let p = crate::autodiff::tape::sigmoid(x);
            assert!((t.value(lp)[[r, 0]] - p.ln()).abs() < 1e-12);
            assert!((t.value(lq)[[r, 0]] - (1.0 - p).ln()).abs() < 1e-12);
            let exact = kl_bernoulli(BernoulliParam::new(p), BernoulliParam::new(0.6));
            assert!((t.value(kl)[[r, 0]] - exact).abs() < 1e-12);
        }
        let big = t.constant(array![[80.0]]);
        let (_, lq) = graph::log_prob_pair_logits(&mut t, big);
        assert!(t.value(lq)[[0, 0]].is_finite());
    }

    proptest! {
        #[test]
        fn kl_gaussian_nonnegative(
            mean in proptest::collection::vec(-5.0f64..5.0, 1..6),
            log_std in proptest::collection::vec(-3.0f64..2.0, 6),
            log_sigma in -2.0f64..2.0,
        ) {
            let d = mean.len();
            let q = DiagGaussian::new(mean, log_std[..d].iter().map(|l| l.exp()).collect()).unwrap();
            let p = IsotropicPrior::new(d, log_sigma.exp()).unwrap();
            prop_assert!(kl_diag_vs_isotropic(&q, &p).unwrap() >= -1e-12);
        }

        #[test]
        fn kl_bernoulli_nonnegative(pi in 0.0f64..=1.0, alpha in 0.001f64..0.999) {
            prop_assert!(kl_bernoulli(BernoulliParam::new(pi), BernoulliParam::new(alpha)) >= -1e-12);
        }

        #[test]
        fn gaussian_nll_translation_consistent(
            x in proptest::collection::vec(-3.0f64..3.0, 4),
            m in proptest::collection::vec(-3.0f64..3.0, 4),
            shift in -10.0f64..10.0,
            lv in -3.0f64..2.0,
        ) {
            let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let ms: Vec<f64> = m.iter().map(|v| v + shift).collect();
            let a = gaussian_recon_nll(&x, &m, lv).unwrap();
            let b = gaussian_recon_nll(&xs, &ms, lv).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }
}
