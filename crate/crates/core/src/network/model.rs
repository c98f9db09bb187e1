use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{LayerParams, ModelConfig, Params};
use crate::encoder::EncodedInput;
use crate::error::{Error, Result};
use crate::trainer::objective::{bce, bce_grad_wrt_prob, clamp_prob, PROB_EPS};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Dropout is active only in `Train`; masks are drawn from `seed` and the
/// example's index so a given step is exactly reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

impl Mode {
    fn rng_for(self, index: usize) -> Option<ChaCha8Rng> {
        match self {
            Mode::Eval => None,
            Mode::Train { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                Some(rng)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Entailment probability per instance.
    pub entail_probs: Vec<f64>,
    /// Masked-token logits, `attention_len x vocab_size` per instance.
    pub token_logits: Vec<Array2<f64>>,
}

struct LnTrace {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerTrace {
    ln1: LnTrace,
    a1: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln2: LnTrace,
    a2: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}

/// Everything the backward pass needs from one forward pass.
struct Trace {
    n: usize,
    emb_mask: Option<Array2<f64>>,
    layers: Vec<LayerTrace>,
    final_ln: LnTrace,
    z: Array2<f64>,
}

fn check_input(config: &ModelConfig, input: &EncodedInput) -> Result<()> {
    let n = input.attention_len;
    let streams = [
        input.segment_ids.len(),
        input.row_ids.len(),
        input.col_ids.len(),
        input.rank_ids.len(),
        input.position_ids.len(),
    ];
    if streams.iter().any(|&l| l != input.token_ids.len()) {
        return Err(Error::Dimension("coordinate streams differ in length".into()));
    }
    if n == 0 || n > input.token_ids.len() {
        return Err(Error::Dimension(format!(
            "attention_len {n} invalid for a stream of {}",
            input.token_ids.len()
        )));
    }
    let bounds = [
        ("token", &input.token_ids, config.vocab_size),
        ("position", &input.position_ids, config.max_len),
        ("segment", &input.segment_ids, 2),
        ("row", &input.row_ids, config.max_rows + 1),
        ("column", &input.col_ids, config.max_cols + 1),
        ("rank", &input.rank_ids, config.max_rank + 1),
    ];
    for (name, ids, limit) in bounds {
        if let Some(&bad) = ids[..n].iter().find(|&&id| id as usize >= limit) {
            return Err(Error::Dimension(format!("{name} id {bad} out of range (limit {limit})")));
        }
    }
    Ok(())
}

fn dropout_mask(rng: &mut Option<ChaCha8Rng>, shape: (usize, usize), p: f64) -> Option<Array2<f64>> {
    let rng = rng.as_mut()?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { 0.0 } else { keep }))
}

fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LnTrace) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * gamma + beta;
    (y, LnTrace { xhat, inv_std })
}

/// Returns dx; accumulates dgamma and dbeta.
fn layer_norm_backward(
    dy: &Array2<f64>,
    trace: &LnTrace,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &trace.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * gamma;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &trace.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1)) - &trace.xhat * &mean_dxhat_xhat.insert_axis(Axis(1));
    dx *= &trace.inv_std.view().insert_axis(Axis(1));
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub(crate) fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let max = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = v.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

fn layer_forward(
    x: &Array2<f64>,
    lp: &LayerParams,
    config: &ModelConfig,
    rng: &mut Option<ChaCha8Rng>,
) -> (Array2<f64>, LayerTrace) {
    let n = x.nrows();
    let d = config.d_model;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (a1, ln1) = layer_norm(x, &lp.ln1_gamma, &lp.ln1_beta);
    let qkv = a1.dot(&lp.w_qkv) + &lp.b_qkv;
    let mut ctx = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let mut p = q.dot(&k.t()) * scale;
        softmax_rows(&mut p);
        ctx.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&p.dot(&v));
        probs.push(p);
    }
    let attn = ctx.dot(&lp.w_out) + &lp.b_out;
    let attn_mask = dropout_mask(rng, (n, d), config.dropout);
    let h = x + &apply_mask(attn, &attn_mask);

    let (a2, ln2) = layer_norm(&h, &lp.ln2_gamma, &lp.ln2_beta);
    let f1 = a2.dot(&lp.w_ff1) + &lp.b_ff1;
    let g = f1.mapv(gelu);
    let f2 = g.dot(&lp.w_ff2) + &lp.b_ff2;
    let ffn_mask = dropout_mask(rng, (n, d), config.dropout);
    let out = h + &apply_mask(f2, &ffn_mask);
    (
        out,
        LayerTrace { ln1, a1, qkv, probs, ctx, attn_mask, ln2, a2, f1, g, ffn_mask },
    )
}

fn layer_backward(
    dout: Array2<f64>,
    lp: &LayerParams,
    t: &LayerTrace,
    gp: &mut LayerParams,
    config: &ModelConfig,
) -> Array2<f64> {
    let d = config.d_model;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let n = dout.nrows();

    // out = h + drop(g W2 + b2)
    let df2 = apply_mask(dout.clone(), &t.ffn_mask);
    gp.w_ff2 += &t.g.t().dot(&df2);
    gp.b_ff2 += &df2.sum_axis(Axis(0));
    let dg = df2.dot(&lp.w_ff2.t());
    let df1 = dg * &t.f1.mapv(gelu_grad);
    gp.w_ff1 += &t.a2.t().dot(&df1);
    gp.b_ff1 += &df1.sum_axis(Axis(0));
    let da2 = df1.dot(&lp.w_ff1.t());
    let mut dh_res = dout;
    dh_res += &layer_norm_backward(&da2, &t.ln2, &lp.ln2_gamma, &mut gp.ln2_gamma, &mut gp.ln2_beta);

    // h = x + drop(ctx Wo + bo)
    let dattn = apply_mask(dh_res.clone(), &t.attn_mask);
    gp.w_out += &t.ctx.t().dot(&dattn);
    gp.b_out += &dattn.sum_axis(Axis(0));
    let dctx = dattn.dot(&lp.w_out.t());

    let mut dqkv = Array2::zeros((n, 3 * d));
    for h in 0..config.n_heads {
        let cols = h * dh..(h + 1) * dh;
        let q = t.qkv.slice(s![.., cols.clone()]);
        let k = t.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = t.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let p = &t.probs[h];
        let dctx_h = dctx.slice(s![.., cols.clone()]);
        let dp = dctx_h.dot(&v.t());
        let dv = p.t().dot(&dctx_h);
        let row_dot = (&dp * p).sum_axis(Axis(1));
        let ds = (dp - &row_dot.insert_axis(Axis(1))) * p * scale;
        let dq = ds.dot(&k);
        let dk = ds.t().dot(&q);
        dqkv.slice_mut(s![.., cols]).assign(&dq);
        dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&dk);
        dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&dv);
    }
    gp.w_qkv += &t.a1.t().dot(&dqkv);
    gp.b_qkv += &dqkv.sum_axis(Axis(0));
    let da1 = dqkv.dot(&lp.w_qkv.t());
    dh_res += &layer_norm_backward(&da1, &t.ln1, &lp.ln1_gamma, &mut gp.ln1_gamma, &mut gp.ln1_beta);
    dh_res
}

/// Encoder pass over the unpadded prefix of `input`. Padding positions never
/// enter the computation, so they cannot influence any output.
fn encode_states(params: &Params, input: &EncodedInput, mut rng: Option<ChaCha8Rng>) -> Result<Trace> {
    let config = &params.config;
    check_input(config, input)?;
    let n = input.attention_len;
    let d = config.d_model;
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        let mut row = x.row_mut(i);
        row += &params.token_embedding.row(input.token_ids[i] as usize);
        row += &params.position_embedding.row(input.position_ids[i] as usize);
        row += &params.segment_embedding.row(input.segment_ids[i] as usize);
        row += &params.row_embedding.row(input.row_ids[i] as usize);
        row += &params.column_embedding.row(input.col_ids[i] as usize);
        row += &params.rank_embedding.row(input.rank_ids[i] as usize);
    }
    let emb_mask = dropout_mask(&mut rng, (n, d), config.dropout);
    x = apply_mask(x, &emb_mask);
    let mut layers = Vec::with_capacity(config.n_layers);
    for lp in &params.layers {
        let (next, trace) = layer_forward(&x, lp, config, &mut rng);
        layers.push(trace);
        x = next;
    }
    let (z, final_ln) = layer_norm(&x, &params.final_gamma, &params.final_beta);
    Ok(Trace { n, emb_mask, layers, final_ln, z })
}

struct HeadTrace {
    hidden: Array1<f64>,
    prob: f64,
}

fn verification_head(params: &Params, z: &Array2<f64>) -> HeadTrace {
    let cls = z.row(0);
    let hidden = (cls.dot(&params.head_hidden_w) + &params.head_hidden_b).mapv(f64::tanh);
    let logit = hidden.dot(&params.head_out_w) + params.head_out_b[0];
    HeadTrace { hidden, prob: sigmoid(logit) }
}

fn lm_logits_at(params: &Params, z: &Array2<f64>, position: usize) -> Array1<f64> {
    params.token_embedding.dot(&z.row(position)) + &params.lm_bias
}

/// Full forward pass: entailment probabilities and masked-token logits at
/// every unpadded position.
pub fn forward(params: &Params, batch: &[EncodedInput], mode: Mode) -> Result<BatchOutput> {
    let results: Vec<(f64, Array2<f64>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            let trace = encode_states(params, input, mode.rng_for(i))?;
            let head = verification_head(params, &trace.z);
            let logits = trace.z.dot(&params.lm_head_weight().t()) + &params.lm_bias;
            Ok((head.prob, logits))
        })
        .collect::<Result<_>>()?;
    let (entail_probs, token_logits) = results.into_iter().unzip();
    Ok(BatchOutput { entail_probs, token_logits })
}

/// Inference path: only the verification head, dropout off.
pub fn entail_probs(params: &Params, batch: &[EncodedInput]) -> Result<Vec<f64>> {
    batch
        .par_iter()
        .map(|input| {
            let trace = encode_states(params, input, None)?;
            Ok(verification_head(params, &trace.z).prob)
        })
        .collect()
}

/// Softmax over the vocabulary at one stream position, dropout off.
pub fn masked_token_probs(params: &Params, input: &EncodedInput, position: usize) -> Result<Array1<f64>> {
    if position >= input.attention_len {
        return Err(Error::Index { index: position, len: input.attention_len });
    }
    let trace = encode_states(params, input, None)?;
    Ok(softmax(lm_logits_at(params, &trace.z, position).view()))
}

#[derive(Debug, Clone)]
pub struct VerifyExample {
    pub input: EncodedInput,
    pub label: u8,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct MaskedExample {
    pub input: EncodedInput,
    /// Stream position whose token is predicted.
    pub position: usize,
    pub target: u32,
}

#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub verify: Vec<VerifyExample>,
    pub masked: Vec<MaskedExample>,
}

/// `loss = verify_scale * sum_i w_i * bce_i + masked_scale * sum_i ce_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub verify_scale: f64,
    pub masked_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    /// Unscaled weighted cross-entropy summed over the verification records.
    pub verify_sum: f64,
    /// Unscaled masked-token cross-entropy summed over the masked records.
    pub masked_sum: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same shapes as the parameters. `token_embedding` holds the total.
    pub params: Params,
    /// The part of the token-embedding gradient that arrived through the
    /// masked-token head.
    pub token_embedding_head_path: Array2<f64>,
}

impl Gradients {
    fn zeros(config: &ModelConfig) -> Self {
        Gradients {
            params: Params::zeros(config),
            token_embedding_head_path: Array2::zeros((config.vocab_size, config.d_model)),
        }
    }

    fn accumulate(&mut self, other: &Gradients) {
        self.params.add_scaled(&other.params, 1.0);
        self.token_embedding_head_path += &other.token_embedding_head_path;
    }

    /// Token-embedding gradient from the input lookup alone.
    pub fn token_embedding_input_path(&self) -> Array2<f64> {
        &self.params.token_embedding - &self.token_embedding_head_path
    }

    pub fn global_norm(&self) -> f64 {
        self.params
            .tensors()
            .iter()
            .flat_map(|t| t.2.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn backward_from_states(
    params: &Params,
    input: &EncodedInput,
    trace: &Trace,
    dz: Array2<f64>,
    grads: &mut Gradients,
) {
    let config = &params.config;
    let g = &mut grads.params;
    let mut dx = layer_norm_backward(&dz, &trace.final_ln, &params.final_gamma, &mut g.final_gamma, &mut g.final_beta);
    for (l, lt) in trace.layers.iter().enumerate().rev() {
        dx = layer_backward(dx, &params.layers[l], lt, &mut g.layers[l], config);
    }
    let dx0 = apply_mask(dx, &trace.emb_mask);
    for i in 0..trace.n {
        let row = dx0.row(i);
        let add = |table: &mut Array2<f64>, id: u32| {
            let mut r = table.row_mut(id as usize);
            r += &row;
        };
        add(&mut g.token_embedding, input.token_ids[i]);
        add(&mut g.position_embedding, input.position_ids[i]);
        add(&mut g.segment_embedding, input.segment_ids[i]);
        add(&mut g.row_embedding, input.row_ids[i]);
        add(&mut g.column_embedding, input.col_ids[i]);
        add(&mut g.rank_embedding, input.rank_ids[i]);
    }
}

fn verify_example_grad(
    params: &Params,
    ex: &VerifyExample,
    scale: f64,
    rng: Option<ChaCha8Rng>,
) -> Result<(f64, Gradients)> {
    let trace = encode_states(params, &ex.input, rng)?;
    let head = verification_head(params, &trace.z);
    let loss = ex.weight * bce(ex.label, head.prob);
    let mut grads = Gradients::zeros(&params.config);

    let dlogit = scale * ex.weight * bce_grad_wrt_prob(ex.label, head.prob) * head.prob * (1.0 - head.prob);
    let g = &mut grads.params;
    g.head_out_w.scaled_add(dlogit, &head.hidden);
    g.head_out_b[0] += dlogit;
    let dhpre = (&params.head_out_w * dlogit) * &head.hidden.mapv(|h| 1.0 - h * h);
    let cls = trace.z.row(0);
    for (i, c) in cls.iter().enumerate() {
        g.head_hidden_w.row_mut(i).scaled_add(*c, &dhpre);
    }
    g.head_hidden_b += &dhpre;
    let mut dz = Array2::zeros(trace.z.raw_dim());
    dz.row_mut(0).assign(&params.head_hidden_w.dot(&dhpre));
    backward_from_states(params, &ex.input, &trace, dz, &mut grads);
    Ok((loss, grads))
}

fn masked_example_grad(
    params: &Params,
    ex: &MaskedExample,
    scale: f64,
    rng: Option<ChaCha8Rng>,
) -> Result<(f64, Gradients)> {
    if ex.position >= ex.input.attention_len {
        return Err(Error::Index { index: ex.position, len: ex.input.attention_len });
    }
    if ex.target as usize >= params.config.vocab_size {
        return Err(Error::Dimension(format!("target id {} out of vocabulary", ex.target)));
    }
    let trace = encode_states(params, &ex.input, rng)?;
    let probs = softmax(lm_logits_at(params, &trace.z, ex.position).view());
    let p_target = probs[ex.target as usize];
    let loss = -clamp_prob(p_target).ln();
    let mut grads = Gradients::zeros(&params.config);

    // below the clamp floor the loss is flat in the logits
    if p_target >= PROB_EPS {
        let mut dlogits = probs * scale;
        dlogits[ex.target as usize] -= scale;
        let zpos = trace.z.row(ex.position);
        for (v, &dl) in dlogits.iter().enumerate() {
            if dl != 0.0 {
                grads.token_embedding_head_path.row_mut(v).scaled_add(dl, &zpos);
            }
        }
        grads.params.token_embedding += &grads.token_embedding_head_path;
        grads.params.lm_bias += &dlogits;
        let mut dz = Array2::zeros(trace.z.raw_dim());
        dz.row_mut(ex.position).assign(&params.token_embedding.t().dot(&dlogits));
        backward_from_states(params, &ex.input, &trace, dz, &mut grads);
    }
    Ok((loss, grads))
}

/// Loss and gradient for every parameter over a mixed batch.
///
/// Per-example gradients are computed in parallel and summed in batch
/// order, so the result does not depend on scheduling.
pub fn loss_and_gradients(
    params: &Params,
    batch: &TrainBatch,
    spec: &LossSpec,
    mode: Mode,
) -> Result<(LossValue, Gradients)> {
    let n_verify = batch.verify.len();
    let verify: Vec<(f64, Gradients)> = batch
        .verify
        .par_iter()
        .enumerate()
        .map(|(i, ex)| verify_example_grad(params, ex, spec.verify_scale, mode.rng_for(i)))
        .collect::<Result<_>>()?;
    let masked: Vec<(f64, Gradients)> = batch
        .masked
        .par_iter()
        .enumerate()
        .map(|(i, ex)| masked_example_grad(params, ex, spec.masked_scale, mode.rng_for(n_verify + i)))
        .collect::<Result<_>>()?;

    let mut grads = Gradients::zeros(&params.config);
    let mut value = LossValue::default();
    for (l, g) in &verify {
        value.verify_sum += l;
        grads.accumulate(g);
    }
    for (l, g) in &masked {
        value.masked_sum += l;
        grads.accumulate(g);
    }
    value.total = spec.verify_scale * value.verify_sum + spec.masked_scale * value.masked_sum;

    if !value.total.is_finite() {
        return Err(Error::NonFinite(format!("loss = {}", value.total)));
    }
    for (name, _, t) in grads.params.tensors() {
        if t.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok((value, grads))
}

/// Loss only, for finite-difference checks.
pub fn loss_value(params: &Params, batch: &TrainBatch, spec: &LossSpec, mode: Mode) -> Result<f64> {
    let n_verify = batch.verify.len();
    let mut total = 0.0;
    for (i, ex) in batch.verify.iter().enumerate() {
        let trace = encode_states(params, &ex.input, mode.rng_for(i))?;
        total += spec.verify_scale * ex.weight * bce(ex.label, verification_head(params, &trace.z).prob);
    }
    for (i, ex) in batch.masked.iter().enumerate() {
        let trace = encode_states(params, &ex.input, mode.rng_for(n_verify + i))?;
        let probs = softmax(lm_logits_at(params, &trace.z, ex.position).view());
        total += spec.masked_scale * -clamp_prob(probs[ex.target as usize]).ln();
    }
    Ok(total)
}
