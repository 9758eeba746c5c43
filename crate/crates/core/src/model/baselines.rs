//! Comparison models: an ℓ2-regularised VAE, a fully supervised conditional
//! VAE and a two-component Gaussian-mixture VAE with a trusted-set classifier.

use ndarray::{concatenate, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clsvae::check_ratio;
use super::nets::{Decoder, GaussianEncoder, NetShape};
use super::{
    accumulate, column, mean_value, normal_matrix, Batch, LossContext, LossTerms, Model, ModelKind,
    ModelSpec, Ramps,
};
use crate::autodiff::{Activation, Bound, Init, Matrix, Mlp, ParamRole, ParamSet, Tape, Var};
use crate::distributions::graph;
use crate::error::{Error, Result};

pub const BASELINE_LATENT: usize = 15;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {v}")))
    }
}

/// `[x; y]` with a constant label column.
pub fn append_label(x: &Matrix, y: f64) -> Matrix {
    let col = Matrix::from_elem((x.nrows(), 1), y);
    concatenate(Axis(1), &[x.view(), col.view()]).expect("same row count")
}

/// `[x; y]` with one label per row.
pub fn append_labels(x: &Matrix, y: &[f64]) -> Matrix {
    let col = column(y);
    concatenate(Axis(1), &[x.view(), col.view()]).expect("same row count")
}

/// Encoder plus decoder with one Gaussian latent.
#[derive(Clone, Debug)]
struct Vae {
    encoder: GaussianEncoder,
    decoder: Decoder,
    latent: usize,
}

/// Per-row pieces of a single-sample ELBO.
struct ElboParts {
    mean: Var,
    std: Var,
    recon: Var,
}

impl Vae {
    fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        shape: &NetShape,
        enc_input: usize,
        dec_extra: usize,
        latent: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = GaussianEncoder::new(params, "enc", enc_input, &shape.hidden, latent, rng);
        let decoder = Decoder::new(params, "dec", latent + dec_extra, shape, rng);
        Self {
            encoder,
            decoder,
            latent,
        }
    }

    /// Encode `enc_in`, sample once, decode `[z; dec_tail]` and score `x`.
    fn parts(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        enc_in: Var,
        dec_tail: Option<Var>,
        eps: Matrix,
    ) -> Result<ElboParts> {
        let (mean, std) = self.encoder.forward(tape, bound, enc_in)?;
        let e = tape.constant(eps);
        let z = graph::reparam(tape, mean, std, e)?;
        let dz = match dec_tail {
            Some(t) => tape.concat_cols(z, t)?,
            None => z,
        };
        let out = self.decoder.forward(tape, bound, dz)?;
        let recon = self.decoder.log_lik(tape, bound, x, out)?;
        Ok(ElboParts {
            mean,
            std,
            recon,
        })
    }

    /// Decoder mean at the posterior mean, plus the row-wise NLL of `x` there.
    fn reconstruct(
        &self,
        x: &Matrix,
        enc_in: Matrix,
        enc_tail_for_decoder: Option<Matrix>,
        params: &ParamSet,
    ) -> Result<(Matrix, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let ev = tape.constant(enc_in);
        let (mean, _) = self.encoder.forward(&mut tape, &bound, ev)?;
        let dz = match enc_tail_for_decoder {
            Some(t) => {
                let t = tape.constant(t);
                tape.concat_cols(mean, t)?
            }
            None => mean,
        };
        let out = self.decoder.forward(&mut tape, &bound, dz)?;
        let ll = self.decoder.log_lik(&mut tape, &bound, xv, out)?;
        let m = self.decoder.mean(&mut tape, out);
        Ok((tape.value(m).clone(), tape.value(ll).iter().map(|v| -v).collect()))
    }
}

fn weight_penalty(tape: &mut Tape, bound: &Bound, params: &ParamSet) -> Result<Option<Var>> {
    let mut acc = None;
    for id in params.ids() {
        if params.role(id) == ParamRole::Weight {
            let sq = tape.square(bound.var(id));
            let s = tape.sum(sq);
            acc = Some(accumulate(tape, acc, s)?);
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------- VAE-L2

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeL2Config {
    #[serde(default)]
    pub shape: NetShape,
    pub latent_dim: usize,
    /// Weight-decay coefficient on the full-data objective.
    pub l2: f64,
    pub kl_anneal_ratio: Option<f64>,
}

impl VaeL2Config {
    pub fn new(shape: NetShape) -> Self {
        Self {
            shape,
            latent_dim: BASELINE_LATENT,
            l2: 35.0,
            kl_anneal_ratio: Some(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        check_ratio("kl_anneal_ratio", self.kl_anneal_ratio)
    }
}

/// Unsupervised VAE with a standard-normal prior and weight decay on every
/// encoder and decoder weight matrix.
#[derive(Clone, Debug)]
pub struct VaeL2 {
    config: VaeL2Config,
    params: ParamSet,
    vae: Vae,
}

impl VaeL2 {
    pub fn new(config: VaeL2Config, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let d = config.shape.input_dim;
        let vae = Vae::new(&mut params, &config.shape, d, 0, config.latent_dim, rng);
        Self {
            config,
            params,
            vae,
        }
    }

    pub fn config(&self) -> &VaeL2Config {
        &self.config
    }

    /// Row-wise single-sample ELBO with the given standard-normal noise.
    pub fn elbo(&self, tape: &mut Tape, bound: &Bound, x: Var, eps: Matrix, kl_weight: f64) -> Result<Var> {
        let p = self.vae.parts(tape, bound, x, x, None, eps)?;
        let kl = graph::kl_diag_isotropic(tape, p.mean, p.std, 1.0)?;
        let kl = tape.scale(kl, kl_weight);
        tape.sub(p.recon, kl)
    }

    /// `[n × K]` importance log-weights `log p(x, z_k) − log q(z_k | x)`.
    pub fn iwae_log_weights<R: Rng + ?Sized>(&self, x: &Matrix, k: usize, rng: &mut R) -> Result<Matrix> {
        let n = x.nrows();
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let (mean, std) = self.vae.encoder.forward(&mut tape, &bound, xv)?;
        let mut out = Matrix::zeros((n, k));
        let mark = tape.len();
        for j in 0..k {
            let e = tape.constant(normal_matrix(rng, n, self.vae.latent, 1.0));
            let z = graph::reparam(&mut tape, mean, std, e)?;
            let dec = self.vae.decoder.forward(&mut tape, &bound, z)?;
            let ll = self.vae.decoder.log_lik(&mut tape, &bound, xv, dec)?;
            let lp = graph::isotropic_log_density(&mut tape, z, 1.0);
            let lq = graph::diag_log_density(&mut tape, z, mean, std)?;
            let w = tape.add(ll, lp)?;
            let w = tape.sub(w, lq)?;
            out.column_mut(j).assign(&tape.value(w).column(0));
            tape.truncate(mark);
        }
        Ok(out)
    }
}

impl Model for VaeL2 {
    fn kind(&self) -> ModelKind {
        ModelKind::VaeL2
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::VaeL2(self.config.clone())
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
            lambda: None,
        }
    }

    /// `−[w_u·mean ELBO_u + w_l·mean ELBO_l] + (λ/N)·Σ‖W‖²`; labels are
    /// ignored.
    fn loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        ctx: &LossContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossTerms> {
        let mut total = None;
        let mut recon = 0.0;
        let mut kl_sum = 0.0;
        let mut n = 0usize;
        for (x, w) in [(&batch.unlabelled, batch.weight_u), (&batch.labelled, batch.weight_l)] {
            if x.nrows() == 0 {
                continue;
            }
            let xv = tape.constant(x.clone());
            let eps = normal_matrix(rng, x.nrows(), self.vae.latent, 1.0);
            let p = self.vae.parts(tape, bound, xv, xv, None, eps)?;
            let kl = graph::kl_diag_isotropic(tape, p.mean, p.std, 1.0)?;
            let klw = tape.scale(kl, ctx.kl_weight);
            let elbo = tape.sub(p.recon, klw)?;
            let m = tape.mean(elbo);
            let term = tape.scale(m, -w);
            total = Some(accumulate(tape, total, term)?);
            recon += tape.value(p.recon).sum();
            kl_sum += tape.value(kl).sum();
            n += x.nrows();
        }
        let mut total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
        if self.config.l2 > 0.0 {
            if let Some(pen) = weight_penalty(tape, bound, &self.params)? {
                let pen = tape.scale(pen, self.config.l2 / ctx.dataset_size.max(1.0));
                total = tape.add(total, pen)?;
            }
        }
        let mut terms = LossTerms::new(total);
        terms.recon = recon / n as f64;
        terms.kl_c = kl_sum / n as f64;
        Ok(terms)
    }

    /// Reconstruction NLL at the posterior mean.
    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.vae.reconstruct(x, x.clone(), None, &self.params)?.1)
    }

    fn repair(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.vae.reconstruct(x, x.clone(), None, &self.params)?.0)
    }
}

// ---------------------------------------------------------------- CVAE

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    #[serde(default)]
    pub shape: NetShape,
    pub latent_dim: usize,
    /// Prior standard deviation.
    pub sigma: f64,
    pub kl_anneal_ratio: Option<f64>,
}

impl CvaeConfig {
    pub fn new(shape: NetShape) -> Self {
        Self {
            shape,
            latent_dim: BASELINE_LATENT,
            sigma: 0.5,
            kl_anneal_ratio: Some(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be positive"));
        }
        check_positive("sigma", self.sigma)?;
        check_ratio("kl_anneal_ratio", self.kl_anneal_ratio)
    }
}

/// Conditional VAE: the label is appended to both encoder and decoder
/// inputs. Trained on ground-truth labels for every instance.
#[derive(Clone, Debug)]
pub struct Cvae {
    config: CvaeConfig,
    params: ParamSet,
    vae: Vae,
}

impl Cvae {
    pub fn new(config: CvaeConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let d = config.shape.input_dim;
        let vae = Vae::new(&mut params, &config.shape, d + 1, 1, config.latent_dim, rng);
        Self {
            config,
            params,
            vae,
        }
    }

    /// Row-wise `(ELBO, KL)` given labels and noise.
    pub fn elbo(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: &Matrix,
        labels: &[f64],
        eps: Matrix,
        kl_weight: f64,
    ) -> Result<(Var, Var, Var)> {
        let xv = tape.constant(x.clone());
        let enc_in = tape.constant(append_labels(x, labels));
        let y = tape.constant(column(labels));
        let p = self.vae.parts(tape, bound, xv, enc_in, Some(y), eps)?;
        let kl = graph::kl_diag_isotropic(tape, p.mean, p.std, self.config.sigma)?;
        let klw = tape.scale(kl, kl_weight);
        Ok((tape.sub(p.recon, klw)?, p.recon, kl))
    }

    /// Decoder mean when encoding with `y_enc` and decoding with `y_dec`.
    pub fn reconstruct_with(&self, x: &Matrix, y_enc: f64, y_dec: f64) -> Result<(Matrix, Vec<f64>)> {
        let tail = Matrix::from_elem((x.nrows(), 1), y_dec);
        self.vae
            .reconstruct(x, append_label(x, y_enc), Some(tail), &self.params)
    }
}

impl Model for Cvae {
    fn kind(&self) -> ModelKind {
        ModelKind::Cvae
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Cvae(self.config.clone())
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn fully_supervised(&self) -> bool {
        true
    }

    fn ramps(&self) -> Ramps {
        Ramps {
            kl_ratio: self.config.kl_anneal_ratio,
            lambda: None,
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
        if batch.n_unlabelled() > 0 {
            return Err(Error::Contract(
                "the conditional VAE needs a label for every training row".into(),
            ));
        }
        let n = batch.n_labelled();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let eps = normal_matrix(rng, n, self.vae.latent, 1.0);
        let (elbo, recon, kl) = self.elbo(tape, bound, &batch.labelled, &batch.labels, eps, ctx.kl_weight)?;
        let m = tape.mean(elbo);
        let total = tape.neg(m);
        let mut terms = LossTerms::new(total);
        terms.recon = mean_value(tape, recon);
        terms.kl_c = mean_value(tape, kl);
        Ok(terms)
    }

    /// Reconstruction NLL with `y = 1` for both encoder and decoder.
    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.reconstruct_with(x, 1.0, 1.0)?.1)
    }

    /// Encode as an outlier, decode as an inlier.
    fn repair(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.reconstruct_with(x, 0.0, 1.0)?.0)
    }
}

// ---------------------------------------------------------------- VAEGMM

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaegmmConfig {
    #[serde(default)]
    pub shape: NetShape,
    pub latent_dim: usize,
    pub sigma_y1: f64,
    pub sigma_y0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kl_anneal_ratio: Option<f64>,
}

impl VaegmmConfig {
    pub fn new(shape: NetShape) -> Self {
        Self {
            shape,
            latent_dim: BASELINE_LATENT,
            sigma_y1: 0.9,
            sigma_y0: 5.0,
            alpha: 0.6,
            beta: 1000.0,
            kl_anneal_ratio: Some(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be positive"));
        }
        check_positive("sigma_y1", self.sigma_y1)?;
        check_positive("sigma_y0", self.sigma_y0)?;
        if self.sigma_y1 > self.sigma_y0 {
            return Err(Error::config(format!(
                "sigma_y1 ({}) must not exceed sigma_y0 ({})",
                self.sigma_y1, self.sigma_y0
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta must be non-negative"));
        }
        check_ratio("kl_anneal_ratio", self.kl_anneal_ratio)
    }
}

/// VAE whose prior is a zero-mean two-component Gaussian mixture indexed by
/// the inlier label, with a classifier `q(y | x)` on raw pixels.
#[derive(Clone, Debug)]
pub struct Vaegmm {
    config: VaegmmConfig,
    params: ParamSet,
    vae: Vae,
    classifier: Mlp,
}

impl Vaegmm {
    pub fn new(config: VaegmmConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let d = config.shape.input_dim;
        let vae = Vae::new(&mut params, &config.shape, d + 1, 0, config.latent_dim, rng);
        let mut sizes = vec![d];
        sizes.extend_from_slice(&config.shape.hidden);
        sizes.push(1);
        let classifier = Mlp::new(&mut params, "clf", &sizes, Init::KaimingUniform, rng);
        Self {
            config,
            params,
            vae,
            classifier,
        }
    }

    pub fn classify_logits(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        self.classifier.forward(tape, bound, x, Activation::Identity)
    }

    /// Row-wise `G(x, y) = log p(x | z) − w·KL(q(z | x, y) ‖ N(0, σ_y² I))`
    /// with one label per row. Returns `(G, recon, kl)`.
    pub fn branch(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: &Matrix,
        labels: &[f64],
        eps: Matrix,
        kl_weight: f64,
    ) -> Result<(Var, Var, Var)> {
        let xv = tape.constant(x.clone());
        let enc_in = tape.constant(append_labels(x, labels));
        let p = self.vae.parts(tape, bound, xv, enc_in, None, eps)?;
        let kl1 = graph::kl_diag_isotropic(tape, p.mean, p.std, self.config.sigma_y1)?;
        let kl0 = graph::kl_diag_isotropic(tape, p.mean, p.std, self.config.sigma_y0)?;
        let y = tape.constant(column(labels));
        let not_y = tape.constant(column(&labels.iter().map(|v| 1.0 - v).collect::<Vec<_>>()));
        let a = tape.mul(y, kl1)?;
        let b = tape.mul(not_y, kl0)?;
        let kl = tape.add(a, b)?;
        let klw = tape.scale(kl, kl_weight);
        Ok((tape.sub(p.recon, klw)?, p.recon, kl))
    }

    /// Row-wise unlabelled ELBO
    /// `π·G(x, 1) + (1−π)·G(x, 0) − KL(Ber(π) ‖ Ber(α))` from given branch
    /// values and classifier logits.
    pub fn unlabelled_elbo(&self, tape: &mut Tape, g1: Var, g0: Var, logits: Var) -> Result<(Var, Var)> {
        let pi = tape.sigmoid(logits);
        let a = tape.mul(pi, g1)?;
        let one_minus = {
            let n = tape.neg(pi);
            tape.add_scalar(n, 1.0)
        };
        let b = tape.mul(one_minus, g0)?;
        let mix = tape.add(a, b)?;
        let kly = graph::kl_bernoulli_logits(tape, logits, self.config.alpha)?;
        Ok((tape.sub(mix, kly)?, kly))
    }
}

impl Model for Vaegmm {
    fn kind(&self) -> ModelKind {
        ModelKind::Vaegmm
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Vaegmm(self.config.clone())
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
            lambda: None,
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
        let latent = self.vae.latent;
        let mut total = None;
        let mut recon = 0.0;
        let mut kl_sum = 0.0;
        let mut kl_y = 0.0;
        let mut wce = 0.0;

        if nu > 0 {
            let x = &batch.unlabelled;
            let (g1, r1, k1) = self.branch(tape, bound, x, &vec![1.0; nu], normal_matrix(rng, nu, latent, 1.0), ctx.kl_weight)?;
            let (g0, r0, k0) = self.branch(tape, bound, x, &vec![0.0; nu], normal_matrix(rng, nu, latent, 1.0), ctx.kl_weight)?;
            let xv = tape.constant(x.clone());
            let logits = self.classify_logits(tape, bound, xv)?;
            let (elbo, kly) = self.unlabelled_elbo(tape, g1, g0, logits)?;
            let m = tape.mean(elbo);
            let term = tape.scale(m, -batch.weight_u);
            total = Some(accumulate(tape, total, term)?);
            let pi: Vec<f64> = tape.value(logits).iter().map(|&l| crate::autodiff::tape::sigmoid(l)).collect();
            for (i, p) in pi.iter().enumerate() {
                recon += p * tape.value(r1)[[i, 0]] + (1.0 - p) * tape.value(r0)[[i, 0]];
                kl_sum += p * tape.value(k1)[[i, 0]] + (1.0 - p) * tape.value(k0)[[i, 0]];
            }
            kl_y = mean_value(tape, kly);
        }

        if nl > 0 {
            let x = &batch.labelled;
            let labels = &batch.labels;
            let (g, r, k) = self.branch(tape, bound, x, labels, normal_matrix(rng, nl, latent, 1.0), ctx.kl_weight)?;
            let alpha = self.config.alpha;
            let log_py: Vec<f64> = labels
                .iter()
                .map(|y| y * alpha.ln() + (1.0 - y) * (1.0 - alpha).ln())
                .collect();
            let log_py = tape.constant(column(&log_py));
            let elbo = tape.add(g, log_py)?;
            let m = tape.mean(elbo);
            let term = tape.scale(m, -batch.weight_l);
            total = Some(accumulate(tape, total, term)?);

            let xv = tape.constant(x.clone());
            let logits = self.classify_logits(tape, bound, xv)?;
            let (lp, lq) = graph::log_prob_pair_logits(tape, logits);
            let y = tape.constant(column(labels));
            let w0 = tape.constant(column(
                &labels.iter().map(|v| ctx.omega * (1.0 - v)).collect::<Vec<_>>(),
            ));
            let a = tape.mul(y, lp)?;
            let b = tape.mul(w0, lq)?;
            let s = tape.add(a, b)?;
            let wm = tape.mean(s);
            wce = -tape.scalar(wm);
            let term = tape.scale(wm, -self.config.beta);
            total = Some(accumulate(tape, total, term)?);
            recon += tape.value(r).sum();
            kl_sum += tape.value(k).sum();
        }

        let n = (nu + nl) as f64;
        let mut terms = LossTerms::new(total.expect("non-empty batch"));
        terms.recon = recon / n;
        terms.kl_c = kl_sum / n;
        terms.kl_y = kl_y;
        terms.wce = wce;
        Ok(terms)
    }

    /// `−log q(y = 1 | x)`.
    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let logits = self.classify_logits(&mut tape, &bound, xv)?;
        let (lp, _) = graph::log_prob_pair_logits(&mut tape, logits);
        Ok(tape.value(lp).iter().map(|v| (-v).max(0.0)).collect())
    }

    /// Decoder mean at the posterior mean of the inlier branch.
    fn repair(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.vae.reconstruct(x, append_label(x, 1.0), None, &self.params)?.0)
    }
}
