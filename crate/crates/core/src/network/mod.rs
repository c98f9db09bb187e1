//! Mini transformer encoder with summed coordinate embeddings, a sigmoid
//! verification head on `[CLS]`, and a masked-token head that reuses the
//! token embedding matrix.
//!
//! Everything runs in `f64` with hand-written backpropagation.

mod checkpoint;
mod model;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use model::{
    entail_probs, forward, loss_and_gradients, loss_value, masked_token_probs, BatchOutput, Gradients, LossSpec, LossValue,
    MaskedExample, Mode, TrainBatch, VerifyExample,
};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub max_rows: usize,
    pub max_cols: usize,
    pub max_rank: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ffn: 128,
            max_len: 128,
            vocab_size: 0,
            max_rows: 16,
            max_cols: 8,
            max_rank: 16,
            dropout: 0.1,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.d_ffn,
            self.max_len,
            self.vocab_size,
            self.max_rows,
            self.max_cols,
            self.max_rank,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    /// Fused query/key/value projection, `d_model x 3*d_model`.
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

/// All learnable tensors.
///
/// There is no separate masked-token projection: the head reads
/// `token_embedding` directly (see [`Params::lm_head_weight`]), so the two
/// can never diverge.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub segment_embedding: Array2<f64>,
    pub row_embedding: Array2<f64>,
    pub column_embedding: Array2<f64>,
    pub rank_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Array1<f64>,
    pub final_beta: Array1<f64>,
    pub head_hidden_w: Array2<f64>,
    pub head_hidden_b: Array1<f64>,
    pub head_out_w: Array1<f64>,
    pub head_out_b: Array1<f64>,
    pub lm_bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Gain,
}

macro_rules! tensor_list {
    ($p:expr, $slice:ident, $iter:ident) => {{
        let mut v = vec![
            ("token_embedding".to_string(), TensorKind::Weight, $p.token_embedding.$slice().unwrap()),
            ("position_embedding".to_string(), TensorKind::Weight, $p.position_embedding.$slice().unwrap()),
            ("segment_embedding".to_string(), TensorKind::Weight, $p.segment_embedding.$slice().unwrap()),
            ("row_embedding".to_string(), TensorKind::Weight, $p.row_embedding.$slice().unwrap()),
            ("column_embedding".to_string(), TensorKind::Weight, $p.column_embedding.$slice().unwrap()),
            ("rank_embedding".to_string(), TensorKind::Weight, $p.rank_embedding.$slice().unwrap()),
        ];
        for (i, l) in $p.layers.$iter().enumerate() {
            v.push((format!("layers.{i}.ln1_gamma"), TensorKind::Gain, l.ln1_gamma.$slice().unwrap()));
            v.push((format!("layers.{i}.ln1_beta"), TensorKind::Bias, l.ln1_beta.$slice().unwrap()));
            v.push((format!("layers.{i}.w_qkv"), TensorKind::Weight, l.w_qkv.$slice().unwrap()));
            v.push((format!("layers.{i}.b_qkv"), TensorKind::Bias, l.b_qkv.$slice().unwrap()));
            v.push((format!("layers.{i}.w_out"), TensorKind::Weight, l.w_out.$slice().unwrap()));
            v.push((format!("layers.{i}.b_out"), TensorKind::Bias, l.b_out.$slice().unwrap()));
            v.push((format!("layers.{i}.ln2_gamma"), TensorKind::Gain, l.ln2_gamma.$slice().unwrap()));
            v.push((format!("layers.{i}.ln2_beta"), TensorKind::Bias, l.ln2_beta.$slice().unwrap()));
            v.push((format!("layers.{i}.w_ff1"), TensorKind::Weight, l.w_ff1.$slice().unwrap()));
            v.push((format!("layers.{i}.b_ff1"), TensorKind::Bias, l.b_ff1.$slice().unwrap()));
            v.push((format!("layers.{i}.w_ff2"), TensorKind::Weight, l.w_ff2.$slice().unwrap()));
            v.push((format!("layers.{i}.b_ff2"), TensorKind::Bias, l.b_ff2.$slice().unwrap()));
        }
        v.push(("final_gamma".to_string(), TensorKind::Gain, $p.final_gamma.$slice().unwrap()));
        v.push(("final_beta".to_string(), TensorKind::Bias, $p.final_beta.$slice().unwrap()));
        v.push(("head_hidden_w".to_string(), TensorKind::Weight, $p.head_hidden_w.$slice().unwrap()));
        v.push(("head_hidden_b".to_string(), TensorKind::Bias, $p.head_hidden_b.$slice().unwrap()));
        v.push(("head_out_w".to_string(), TensorKind::Weight, $p.head_out_w.$slice().unwrap()));
        v.push(("head_out_b".to_string(), TensorKind::Bias, $p.head_out_b.$slice().unwrap()));
        v.push(("lm_bias".to_string(), TensorKind::Bias, $p.lm_bias.$slice().unwrap()));
        v
    }};
}

impl Params {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Params {
        let d = config.d_model;
        let layer = || LayerParams {
            ln1_gamma: Array1::zeros(d),
            ln1_beta: Array1::zeros(d),
            w_qkv: Array2::zeros((d, 3 * d)),
            b_qkv: Array1::zeros(3 * d),
            w_out: Array2::zeros((d, d)),
            b_out: Array1::zeros(d),
            ln2_gamma: Array1::zeros(d),
            ln2_beta: Array1::zeros(d),
            w_ff1: Array2::zeros((d, config.d_ffn)),
            b_ff1: Array1::zeros(config.d_ffn),
            w_ff2: Array2::zeros((config.d_ffn, d)),
            b_ff2: Array1::zeros(d),
        };
        Params {
            config: config.clone(),
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_len, d)),
            segment_embedding: Array2::zeros((2, d)),
            row_embedding: Array2::zeros((config.max_rows + 1, d)),
            column_embedding: Array2::zeros((config.max_cols + 1, d)),
            rank_embedding: Array2::zeros((config.max_rank + 1, d)),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            final_gamma: Array1::zeros(d),
            final_beta: Array1::zeros(d),
            head_hidden_w: Array2::zeros((d, d)),
            head_hidden_b: Array1::zeros(d),
            head_out_w: Array1::zeros(d),
            head_out_b: Array1::zeros(1),
            lm_bias: Array1::zeros(config.vocab_size),
        }
    }

    pub fn zeros_like(&self) -> Params {
        Params::zeros(&self.config)
    }

    /// Tensors in the fixed order used by the optimizer and the checkpoint format.
    pub fn tensors(&self) -> Vec<(String, TensorKind, &[f64])> {
        tensor_list!(self, as_slice, iter)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut [f64])> {
        tensor_list!(self, as_slice_mut, iter_mut)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// The masked-token output projection (`vocab_size x d_model`), which is
    /// the token embedding itself.
    pub fn lm_head_weight(&self) -> ndarray::ArrayView2<'_, f64> {
        self.token_embedding.view()
    }

    /// Copies every value into one flat vector in tensor order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "flat vector of {} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for (_, _, t) in self.tensors_mut() {
            t.copy_from_slice(&values[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    /// Adds `scale * other` element-wise.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, _, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// FNV-1a over the little-endian bytes of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, _, t) in self.tensors() {
            for v in t {
                for b in v.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Weights from a normal(0, init_std^2) truncated at two standard
/// deviations, zero biases, unit layer-norm gains.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Params> {
    config.validate()?;
    let mut params = Params::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = config.init_std;
    for (_, kind, t) in params.tensors_mut() {
        match kind {
            TensorKind::Weight => {
                for x in t.iter_mut() {
                    *x = loop {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        if z.abs() <= 2.0 {
                            break z * std;
                        }
                    };
                }
            }
            TensorKind::Gain => t.fill(1.0),
            TensorKind::Bias => t.fill(0.0),
        }
    }
    Ok(params)
}
