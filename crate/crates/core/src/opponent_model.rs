//! Strategy encoder: maps the h-step history of joint pursuer
//! observations to a fixed-width model of the evading team's joint
//! strategy. One shared encoder serves every pursuer.

use rand_chacha::ChaCha8Rng;

use crate::nn_core::{MixedInput, MlpParams, NnError, Tape};

/// Default strategy-model width.
pub const DEFAULT_D_PI: usize = 64;
/// Hidden widths of the encoder.
pub const ENCODER_HIDDEN: [usize; 3] = [128, 128, 128];

/// Learned summary of the evading team's joint strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyModel(pub Vec<f64>);

impl StrategyModel {
    pub fn width(&self) -> usize {
        self.0.len()
    }
}

/// Zero model used at episode start, before any history exists.
pub fn init_strategy(d_pi: usize) -> StrategyModel {
    StrategyModel(vec![0.0; d_pi])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub mlp: MlpParams,
    pub d_pi: usize,
}

impl EncoderParams {
    /// Standard architecture: three ELU hidden layers of 128 units.
    pub fn new(window_width: usize, d_pi: usize, rng: &mut ChaCha8Rng) -> EncoderParams {
        Self::with_hidden(window_width, &ENCODER_HIDDEN, d_pi, rng)
    }

    /// Arbitrary hidden widths, for small instances in tests and checks.
    pub fn with_hidden(
        window_width: usize,
        hidden: &[usize],
        d_pi: usize,
        rng: &mut ChaCha8Rng,
    ) -> EncoderParams {
        let mut dims = vec![window_width];
        dims.extend_from_slice(hidden);
        dims.push(d_pi);
        EncoderParams {
            mlp: MlpParams::random(&dims, rng),
            d_pi,
        }
    }

    pub fn window_width(&self) -> usize {
        self.mlp.input_width()
    }

    /// Forward pass keeping the tape so a loss can backpropagate into the
    /// encoder parameters.
    pub fn encode(
        &self,
        idx: &[u32],
        val: &[f64],
        boost: Option<&[f64]>,
    ) -> Result<(StrategyModel, Tape), NnError> {
        let (out, tape) = self.mlp.forward_mixed(
            MixedInput {
                sparse_idx: idx,
                sparse_val: val,
                tail: &[],
            },
            boost,
        )?;
        Ok((StrategyModel(out), tape))
    }

    /// Inference-only forward pass.
    pub fn infer(
        &self,
        idx: &[u32],
        val: &[f64],
        boost: Option<&[f64]>,
    ) -> Result<StrategyModel, NnError> {
        let out = self.mlp.infer_mixed(
            MixedInput {
                sparse_idx: idx,
                sparse_val: val,
                tail: &[],
            },
            boost,
        )?;
        Ok(StrategyModel(out))
    }
}
