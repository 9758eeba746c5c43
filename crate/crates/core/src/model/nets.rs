//! Building blocks shared by every model: Gaussian encoders and pixel
//! likelihood decoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Bound, DenseLayer, Init, Mlp, ParamId, ParamRole, ParamSet, Tape, Var};
use crate::data::PixelKind;
use crate::distributions::graph;
use crate::error::Result;

/// Input width, pixel likelihood and hidden widths of an encoder/decoder
/// pair. The decoder mirrors the encoder's hidden widths.
///
/// `input_dim` and `pixel_kind` may be left out of configuration files; the
/// experiment layer fills them in from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default = "default_pixel_kind")]
    pub pixel_kind: PixelKind,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

impl Default for NetShape {
    fn default() -> Self {
        Self::new(0, PixelKind::Binary)
    }
}

fn default_pixel_kind() -> PixelKind {
    PixelKind::Binary
}

pub fn default_hidden() -> Vec<usize> {
    vec![200, 100, 50]
}

impl NetShape {
    pub fn new(input_dim: usize, pixel_kind: PixelKind) -> Self {
        Self {
            input_dim,
            pixel_kind,
            hidden: default_hidden(),
        }
    }

    fn decoder_hidden(&self) -> Vec<usize> {
        self.hidden.iter().rev().copied().collect()
    }
}

/// `x → (μ, σ)` with a shared ReLU trunk and two linear heads; σ goes
/// through softplus plus a small floor.
#[derive(Clone, Debug)]
pub struct GaussianEncoder {
    trunk: Option<Mlp>,
    mean: DenseLayer,
    raw_std: DenseLayer,
    pub input: usize,
    pub latent: usize,
}

impl GaussianEncoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: &[usize],
        latent: usize,
        rng: &mut R,
    ) -> Self {
        let (trunk, width) = if hidden.is_empty() {
            (None, input)
        } else {
            let mut sizes = vec![input];
            sizes.extend_from_slice(hidden);
            let trunk = Mlp::new(params, &format!("{name}.trunk"), &sizes, Init::KaimingUniform, rng);
            (Some(trunk), *hidden.last().expect("non-empty"))
        };
        let mean = DenseLayer::new(params, &format!("{name}.mean"), width, latent, Init::XavierUniform, rng);
        let raw_std = DenseLayer::new(params, &format!("{name}.std"), width, latent, Init::XavierUniform, rng);
        Self {
            trunk,
            mean,
            raw_std,
            input,
            latent,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        let h = match &self.trunk {
            Some(t) => t.forward(tape, bound, x, Activation::Relu)?,
            None => x,
        };
        let mean = self.mean.forward(tape, bound, h)?;
        let raw = self.raw_std.forward(tape, bound, h)?;
        Ok((mean, graph::positive_std(tape, raw)))
    }
}

/// Decoder output before the pixel link: logits for binary pixels, means for
/// continuous pixels.
#[derive(Clone, Copy, Debug)]
pub struct DecoderOut(pub Var);

/// `z → pixel likelihood parameters`. Continuous pixels use a Gaussian with
/// one learned log-variance shared by all pixels.
#[derive(Clone, Debug)]
pub struct Decoder {
    mlp: Mlp,
    logvar: Option<ParamId>,
    pub pixel_kind: PixelKind,
    pub input: usize,
}

/// Initial shared standard deviation of the Gaussian decoder, as a fraction
/// of the unit pixel range.
pub const INIT_DECODER_STD: f64 = 0.1;

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        shape: &NetShape,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend(shape.decoder_hidden());
        sizes.push(shape.input_dim);
        let mlp = Mlp::new(params, name, &sizes, Init::XavierUniform, rng);
        let logvar = match shape.pixel_kind {
            PixelKind::Continuous => Some(params.insert(
                format!("{name}.logvar"),
                ParamRole::Other,
                ndarray::arr2(&[[2.0 * INIT_DECODER_STD.ln()]]),
            )),
            PixelKind::Binary => None,
        };
        Self {
            mlp,
            logvar,
            pixel_kind: shape.pixel_kind,
            input,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<DecoderOut> {
        Ok(DecoderOut(self.mlp.forward(tape, bound, z, Activation::Identity)?))
    }

    /// Row-wise `log p(x | z)`, `[n × 1]`.
    pub fn log_lik(&self, tape: &mut Tape, bound: &Bound, x: Var, out: DecoderOut) -> Result<Var> {
        match self.logvar {
            None => graph::bernoulli_log_lik_logits(tape, x, out.0),
            Some(lv) => graph::gaussian_log_lik(tape, x, out.0, bound.var(lv)),
        }
    }

    /// Pixel-space mean: probabilities for binary pixels, means clamped to
    /// `[0, 1]` for continuous pixels.
    pub fn mean(&self, tape: &mut Tape, out: DecoderOut) -> Var {
        match self.pixel_kind {
            PixelKind::Binary => tape.sigmoid(out.0),
            PixelKind::Continuous => tape.clamp(out.0, 0.0, 1.0),
        }
    }

    pub fn logvar(&self) -> Option<ParamId> {
        self.logvar
    }
}
