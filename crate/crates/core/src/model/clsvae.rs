//! Clean-subspace VAE: separate encoders for a clean code `z_c` and a dirty
//! code `z_d`, a classifier `π([z_c; z_d])` for the inlier probability and one
//! decoder shared by the inlier path `[z_c; z_ε]` and the outlier path
//! `[z_c; z_d]`.

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{Decoder, GaussianEncoder, NetShape};
use super::{
    accumulate, column, mean_value, normal_matrix, Batch, LossContext, LossTerms, Model, ModelKind,
    ModelSpec, Ramps,
};
use crate::autodiff::{Activation, Bound, Init, Matrix, Mlp, ParamSet, Tape, Var};
use crate::data::PixelKind;
use crate::dcor;
use crate::distributions::{clamp_prob, graph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsvaeConfig {
    #[serde(default)]
    pub shape: NetShape,
    pub clean_dim: usize,
    pub dirty_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub sigma_c: f64,
    pub sigma_d: f64,
    pub sigma_eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_max: f64,
    pub lambda_ramp: f64,
    /// Ramp ratio of the KL weight; `None` disables annealing.
    pub kl_anneal_ratio: Option<f64>,
    pub use_stop_gradient: bool,
}

impl ClsvaeConfig {
    /// Synthetic-shapes settings.
    pub fn new(shape: NetShape) -> Self {
        Self {
            shape,
            clean_dim: 10,
            dirty_dim: 5,
            classifier_hidden: vec![7, 5],
            sigma_c: 0.5,
            sigma_d: 5.0,
            sigma_eps: 0.5,
            alpha: 0.6,
            beta: 1000.0,
            lambda_max: 100.0,
            lambda_ramp: 0.5,
            kl_anneal_ratio: Some(0.5),
            use_stop_gradient: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clean_dim == 0 || self.dirty_dim == 0 {
            return Err(Error::config("latent dimensions must be positive"));
        }
        for (name, v) in [
            ("sigma_c", self.sigma_c),
            ("sigma_d", self.sigma_d),
            ("sigma_eps", self.sigma_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sigma_c >= self.sigma_d {
            return Err(Error::config(format!(
                "sigma_c ({}) must be smaller than sigma_d ({})",
                self.sigma_c, self.sigma_d
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !(self.lambda_max >= 0.0) {
            return Err(Error::config("beta and lambda_max must be non-negative"));
        }
        check_ratio("lambda_ramp", Some(self.lambda_ramp))?;
        check_ratio("kl_anneal_ratio", self.kl_anneal_ratio)
    }
}

pub(crate) fn check_ratio(name: &str, r: Option<f64>) -> Result<()> {
    match r {
        Some(r) if !(r > 0.0 && r <= 1.0) => {
            Err(Error::config(format!("{name} must be in (0, 1], got {r}")))
        }
        _ => Ok(()),
    }
}

/// Standard-normal noise for one part of a batch.
#[derive(Clone, Debug)]
pub struct Noise {
    pub eps_c: Matrix,
    pub eps_d: Matrix,
    /// Already scaled by `σ_ε`.
    pub z_eps: Matrix,
}

/// Tape handles for the posterior of one batch part.
#[derive(Clone, Copy, Debug)]
pub struct Latents {
    pub mean_c: Var,
    pub std_c: Var,
    pub mean_d: Var,
    pub std_d: Var,
    pub z_c: Var,
    pub z_d: Var,
    /// Row-wise Gaussian KLs, `[n × 1]`.
    pub kl_c: Var,
    pub kl_d: Var,
}

#[derive(Clone, Debug)]
pub struct Clsvae {
    config: ClsvaeConfig,
    params: ParamSet,
    enc_c: GaussianEncoder,
    enc_d: GaussianEncoder,
    decoder: Decoder,
    classifier: Mlp,
}

impl Clsvae {
    pub fn new(config: ClsvaeConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let d = config.shape.input_dim;
        let hidden = config.shape.hidden.clone();
        let enc_c = GaussianEncoder::new(&mut params, "enc_c", d, &hidden, config.clean_dim, rng);
        let enc_d = GaussianEncoder::new(&mut params, "enc_d", d, &hidden, config.dirty_dim, rng);
        let latent = config.clean_dim + config.dirty_dim;
        let decoder = Decoder::new(&mut params, "dec", latent, &config.shape, rng);
        let mut sizes = vec![latent];
        sizes.extend_from_slice(&config.classifier_hidden);
        sizes.push(1);
        let classifier = Mlp::new(&mut params, "clf", &sizes, Init::XavierUniform, rng);
        Self {
            config,
            params,
            enc_c,
            enc_d,
            decoder,
            classifier,
        }
    }

    pub fn config(&self) -> &ClsvaeConfig {
        &self.config
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Noise {
        Noise {
            eps_c: normal_matrix(rng, n, self.config.clean_dim, 1.0),
            eps_d: normal_matrix(rng, n, self.config.dirty_dim, 1.0),
            z_eps: normal_matrix(rng, n, self.config.dirty_dim, self.config.sigma_eps),
        }
    }

    /// Encoder means and standard deviations, without sampling.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<((Var, Var), (Var, Var))> {
        Ok((
            self.enc_c.forward(tape, bound, x)?,
            self.enc_d.forward(tape, bound, x)?,
        ))
    }

    pub fn latents(&self, tape: &mut Tape, bound: &Bound, x: Var, noise: &Noise) -> Result<Latents> {
        let ((mean_c, std_c), (mean_d, std_d)) = self.encode(tape, bound, x)?;
        let ec = tape.constant(noise.eps_c.clone());
        let ed = tape.constant(noise.eps_d.clone());
        let z_c = graph::reparam(tape, mean_c, std_c, ec)?;
        let z_d = graph::reparam(tape, mean_d, std_d, ed)?;
        let kl_c = graph::kl_diag_isotropic(tape, mean_c, std_c, self.config.sigma_c)?;
        let kl_d = graph::kl_diag_isotropic(tape, mean_d, std_d, self.config.sigma_d)?;
        Ok(Latents {
            mean_c,
            std_c,
            mean_d,
            std_d,
            z_c,
            z_d,
            kl_c,
            kl_d,
        })
    }

    /// Classifier logits `[n × 1]`; with the stop-gradient flag `z_c` is
    /// detached before entering the classifier.
    pub fn classify_logits(&self, tape: &mut Tape, bound: &Bound, z_c: Var, z_d: Var) -> Result<Var> {
        let zc = if self.config.use_stop_gradient {
            tape.stop_gradient(z_c)
        } else {
            z_c
        };
        let z = tape.concat_cols(zc, z_d)?;
        self.classifier.forward(tape, bound, z, Activation::Identity)
    }

    /// Inlier probability per row, clamped into the open unit interval.
    pub fn classify(&self, z_c: &Matrix, z_d: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let zc = tape.constant(z_c.clone());
        let zd = tape.constant(z_d.clone());
        let l = self.classify_logits(&mut tape, &bound, zc, zd)?;
        let p = tape.sigmoid(l);
        Ok(tape.value(p).iter().map(|&v| clamp_prob(v)).collect())
    }

    /// Decoder output for `[z_c; tail]`.
    pub fn decode(&self, tape: &mut Tape, bound: &Bound, z_c: Var, tail: Var) -> Result<super::nets::DecoderOut> {
        if tape.shape(tail).1 != self.config.dirty_dim {
            return Err(Error::Shape {
                op: "clsvae decode tail",
                lhs: tape.shape(tail),
                rhs: (tape.shape(tail).0, self.config.dirty_dim),
            });
        }
        let z = tape.concat_cols(z_c, tail)?;
        self.decoder.forward(tape, bound, z)
    }

    /// Pixel-space decoder mean for `[z_c; tail]`.
    pub fn decode_mean(&self, z_c: &Matrix, tail: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let zc = tape.constant(z_c.clone());
        let t = tape.constant(tail.clone());
        let out = self.decode(&mut tape, &bound, zc, t)?;
        let m = self.decoder.mean(&mut tape, out);
        Ok(tape.value(m).clone())
    }

    /// Posterior means `(μ_c, μ_d)`.
    pub fn encode_means(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let ((mc, _), (md, _)) = self.encode(&mut tape, &bound, xv)?;
        Ok((tape.value(mc).clone(), tape.value(md).clone()))
    }

    /// Row-wise unlabelled ELBO
    /// `π·log p(x|[z_c; z_ε]) + (1−π)·log p(x|[z_c; z_d]) − KL_y − w·(KL_c + KL_d)`.
    /// Returns `(elbo, recon, kl_y)`, all `[n × 1]`.
    pub fn unlabelled_elbo(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        lat: &Latents,
        z_eps: Var,
        logits: Var,
        kl_weight: f64,
    ) -> Result<(Var, Var, Var)> {
        let out_eps = self.decode(tape, bound, lat.z_c, z_eps)?;
        let ll_eps = self.decoder.log_lik(tape, bound, x, out_eps)?;
        let out_d = self.decode(tape, bound, lat.z_c, lat.z_d)?;
        let ll_d = self.decoder.log_lik(tape, bound, x, out_d)?;
        let pi = tape.sigmoid(logits);
        let a = tape.mul(pi, ll_eps)?;
        let one_minus = {
            let n = tape.neg(pi);
            tape.add_scalar(n, 1.0)
        };
        let b = tape.mul(one_minus, ll_d)?;
        let recon = tape.add(a, b)?;
        let kl_y = graph::kl_bernoulli_logits(tape, logits, self.config.alpha)?;
        let kl = tape.add(lat.kl_c, lat.kl_d)?;
        let kl = tape.scale(kl, kl_weight);
        let elbo = tape.sub(recon, kl_y)?;
        let elbo = tape.sub(elbo, kl)?;
        Ok((elbo, recon, kl_y))
    }

    /// Row-wise labelled ELBO
    /// `y·log p(x|[z_c; z_ε]) + (1−y)·log p(x|[z_c; z_d]) + log p_α(y) − w·(KL_c + KL_d)`.
    ///
    /// The decoder sees one tail per row: `z_ε` for `y = 1`, `z_d` for
    /// `y = 0`. Returns `(elbo, recon)`.
    pub fn labelled_elbo(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        labels: &[f64],
        lat: &Latents,
        z_eps: Var,
        kl_weight: f64,
    ) -> Result<(Var, Var)> {
        let y = tape.constant(column(labels));
        let not_y = tape.constant(column(&labels.iter().map(|v| 1.0 - v).collect::<Vec<_>>()));
        let a = tape.mul(y, z_eps)?;
        let b = tape.mul(not_y, lat.z_d)?;
        let tail = tape.add(a, b)?;
        let out = self.decode(tape, bound, lat.z_c, tail)?;
        let recon = self.decoder.log_lik(tape, bound, x, out)?;
        let alpha = self.config.alpha;
        let log_py: Vec<f64> = labels
            .iter()
            .map(|y| y * alpha.ln() + (1.0 - y) * (1.0 - alpha).ln())
            .collect();
        let log_py = tape.constant(column(&log_py));
        let kl = tape.add(lat.kl_c, lat.kl_d)?;
        let kl = tape.scale(kl, kl_weight);
        let elbo = tape.add(recon, log_py)?;
        let elbo = tape.sub(elbo, kl)?;
        Ok((elbo, recon))
    }

    /// Row-wise single-sample bound `−y·log π − ω·(1−y)·log(1−π)`.
    pub fn wce_bound(&self, tape: &mut Tape, logits: Var, labels: &[f64], omega: f64) -> Result<Var> {
        let (lp, lq) = graph::log_prob_pair_logits(tape, logits);
        let y = tape.constant(column(labels));
        let w0 = tape.constant(column(
            &labels.iter().map(|v| omega * (1.0 - v)).collect::<Vec<_>>(),
        ));
        let a = tape.mul(y, lp)?;
        let b = tape.mul(w0, lq)?;
        let s = tape.add(a, b)?;
        Ok(tape.neg(s))
    }
}

impl Model for Clsvae {
    fn kind(&self) -> ModelKind {
        ModelKind::Clsvae
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Clsvae(self.config.clone())
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn ramps(&self) -> Ramps {
        Ramps {
            kl_ratio: self.config.kl_anneal_ratio,
            lambda: Some((self.config.lambda_max, self.config.lambda_ramp)),
        }
    }

    fn loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        ctx: &LossContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossTerms> {
        let (nu, nl) = (batch.n_unlabelled(), batch.n_labelled());
        if nu + nl == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if nl == 0 && self.config.beta > 0.0 && batch.weight_l > 0.0 {
            return Err(Error::Contract(
                "labelled rows are required when beta > 0".into(),
            ));
        }
        let mut total: Option<Var> = None;
        let mut recon_sum = 0.0;
        let mut kl_c_sum = 0.0;
        let mut kl_d_sum = 0.0;
        let mut kl_y = 0.0;
        let mut wce = 0.0;
        let mut zcs = Vec::new();
        let mut zds = Vec::new();

        if nu > 0 {
            let noise = self.draw_noise(rng, nu);
            let x = tape.constant(batch.unlabelled.clone());
            let lat = self.latents(tape, bound, x, &noise)?;
            let z_eps = tape.constant(noise.z_eps);
            let logits = self.classify_logits(tape, bound, lat.z_c, lat.z_d)?;
            let (elbo, recon, kly) =
                self.unlabelled_elbo(tape, bound, x, &lat, z_eps, logits, ctx.kl_weight)?;
            let m = tape.mean(elbo);
            let term = tape.scale(m, -batch.weight_u);
            total = Some(accumulate(tape, total, term)?);
            recon_sum += tape.value(recon).sum();
            kl_c_sum += tape.value(lat.kl_c).sum();
            kl_d_sum += tape.value(lat.kl_d).sum();
            kl_y = mean_value(tape, kly);
            zcs.push(lat.z_c);
            zds.push(lat.z_d);
        }

        if nl > 0 {
            let noise = self.draw_noise(rng, nl);
            let x = tape.constant(batch.labelled.clone());
            let lat = self.latents(tape, bound, x, &noise)?;
            let z_eps = tape.constant(noise.z_eps);
            let (elbo, recon) =
                self.labelled_elbo(tape, bound, x, &batch.labels, &lat, z_eps, ctx.kl_weight)?;
            let m = tape.mean(elbo);
            let term = tape.scale(m, -batch.weight_l);
            total = Some(accumulate(tape, total, term)?);

            let logits = self.classify_logits(tape, bound, lat.z_c, lat.z_d)?;
            let w = self.wce_bound(tape, logits, &batch.labels, ctx.omega)?;
            let wm = tape.mean(w);
            wce = tape.scalar(wm);
            let term = tape.scale(wm, self.config.beta);
            total = Some(accumulate(tape, total, term)?);

            recon_sum += tape.value(recon).sum();
            kl_c_sum += tape.value(lat.kl_c).sum();
            kl_d_sum += tape.value(lat.kl_d).sum();
            zcs.push(lat.z_c);
            zds.push(lat.z_d);
        }

        let mut total = total.expect("at least one part");
        let (zc, zd) = if zcs.len() == 2 {
            (tape.concat_rows(zcs[0], zcs[1])?, tape.concat_rows(zds[0], zds[1])?)
        } else {
            (zcs[0], zds[0])
        };
        let mut dc = 0.0;
        let mut dc_degenerate = false;
        if nu + nl >= 2 {
            if ctx.lambda_t > 0.0 {
                match dcor::distance_correlation_var(tape, zc, zd) {
                    Ok(v) => {
                        dc = tape.scalar(v);
                        let term = tape.scale(v, ctx.lambda_t);
                        total = tape.add(total, term)?;
                    }
                    Err(Error::DegenerateBatch) => {
                        warn!("degenerate latent batch; distance-correlation penalty skipped");
                        dc_degenerate = true;
                    }
                    Err(e) => return Err(e),
                }
            } else {
                match dcor::distance_correlation(tape.value(zc), tape.value(zd)) {
                    Ok(v) => dc = v,
                    Err(Error::DegenerateBatch) => dc_degenerate = true,
                    Err(e) => return Err(e),
                }
            }
        }

        let n = (nu + nl) as f64;
        let mut terms = LossTerms::new(total);
        terms.recon = recon_sum / n;
        terms.kl_c = kl_c_sum / n;
        terms.kl_d = kl_d_sum / n;
        terms.kl_y = kl_y;
        terms.wce = wce;
        terms.dc = dc;
        terms.dc_degenerate = dc_degenerate;
        Ok(terms)
    }

    /// `−log π([μ_c; μ_d])`.
    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let ((mc, _), (md, _)) = self.encode(&mut tape, &bound, xv)?;
        let logits = self.classify_logits(&mut tape, &bound, mc, md)?;
        let (lp, _) = graph::log_prob_pair_logits(&mut tape, logits);
        Ok(tape.value(lp).iter().map(|v| (-v).max(0.0)).collect())
    }

    /// Decoder mean of `[μ_c; 0]`.
    fn repair(&self, x: &Matrix) -> Result<Matrix> {
        let (mc, _) = self.encode_means(x)?;
        let zeros = Matrix::zeros((x.nrows(), self.config.dirty_dim));
        self.decode_mean(&mc, &zeros)
    }
}

impl Clsvae {
    pub fn pixel_kind(&self) -> PixelKind {
        self.config.shape.pixel_kind
    }
}
