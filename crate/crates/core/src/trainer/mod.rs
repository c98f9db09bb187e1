//! Training stages.
//!
//! - stage A: verification-only training; its best-validation parameters
//!   become the salience probe and the warm start for joint training.
//! - stage A': statement-only masked-token training for augmentation.
//! - joint: weighted verification loss over original and augmented records
//!   plus masked-salient-token prediction on entailed originals.

pub mod objective;
pub mod optim;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentor::masked_statement_input;
use crate::datamodel::{AugmentedInstance, Dataset, LabeledInstance, SalienceProfile, Split, Table, ENTAILED};
use crate::encoder::{encode, encode_ids, EncodedInput, Vocab, MASK};
use crate::error::{Error, Result};
use crate::eval::accuracy_on;
use crate::network::{
    init_params, loss_and_gradients, masked_token_probs, LossSpec, MaskedExample, ModelConfig, Mode, Params,
    TrainBatch, VerifyExample,
};
use crate::salience::most_salient;
use optim::{clip_grad_norm, AdamW, LinearSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskingStrategy {
    Salient,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugMode {
    Probabilistic,
    Uniform,
    Off,
}

/// Which count normalizes the verification term: `N_v * k` or `N_v * (k + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LvDenominator {
    K,
    #[serde(rename = "k_plus_1")]
    KPlus1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub k: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub masking_strategy: MaskingStrategy,
    pub aug_mode: AugMode,
    pub lv_denominator: LvDenominator,
    pub max_grad_norm: f64,
    /// Validation interval for best-checkpoint tracking.
    pub eval_every: usize,
    /// Stop early after this many steps; the schedule still spans `total_steps`.
    pub stop_after: Option<usize>,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            alpha: 0.5,
            k: 3,
            learning_rate: 3e-4,
            batch_size: 16,
            warmup_ratio: 0.1,
            total_steps: 3000,
            weight_decay: 0.01,
            seed: 7,
            masking_strategy: MaskingStrategy::Salient,
            aug_mode: AugMode::Probabilistic,
            lv_denominator: LvDenominator::K,
            max_grad_norm: 1.0,
            eval_every: 250,
            stop_after: None,
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            batch_size: 32,
            total_steps: 10_000,
            eval_every: 1000,
            ..TrainConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must be in [0, 1)");
        }
        if self.k == 0 || self.batch_size == 0 || self.total_steps == 0 || self.eval_every == 0 {
            return bad("k, batch_size, total_steps and eval_every must be positive");
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate must be positive and weight_decay non-negative");
        }
        Ok(())
    }

    pub fn schedule(&self) -> LinearSchedule {
        LinearSchedule::new(self.learning_rate, self.warmup_ratio, self.total_steps)
    }

    fn steps_to_run(&self) -> usize {
        self.stop_after.map_or(self.total_steps, |s| s.min(self.total_steps))
    }
}

/// One line of the step-indexed metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub lv_part: f64,
    pub lm_part: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub final_params: Params,
    pub best_params: Params,
    pub best_val_accuracy: f64,
    pub best_step: usize,
    pub metrics: Vec<MetricRecord>,
}

/// Cycles through indices in a fresh seeded permutation each epoch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        let mut s = EpochSampler { order: (0..n).collect(), pos: n, rng };
        s.reshuffle_if_needed();
        s
    }

    fn reshuffle_if_needed(&mut self) {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
    }

    fn batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                self.reshuffle_if_needed();
                let i = self.order[self.pos];
                self.pos += 1;
                i
            })
            .collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_STAGE_A: u64 = 1;
const STREAM_STAGE_A_PRIME: u64 = 2;
const STREAM_JOINT: u64 = 3;
const STREAM_AUX_POSITIONS: u64 = 4;

fn dropout_seed(seed: u64, stream: u64, step: usize) -> u64 {
    seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (step as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

fn encode_instance(inst: &LabeledInstance, dataset: &Dataset, vocab: &Vocab, max_len: usize) -> Result<EncodedInput> {
    encode(&inst.statement, dataset.table_of(inst), vocab, max_len).map(EncodedInput::trimmed)
}

/// Shared optimizer loop. `make_batch` returns the batch and loss scaling
/// for a step; `validate` scores the current parameters.
struct Loop<'a> {
    config: &'a TrainConfig,
    stream: u64,
}

impl Loop<'_> {
    fn run(
        &self,
        mut params: Params,
        mut make_batch: impl FnMut(usize) -> (TrainBatch, LossSpec),
        validate: impl Fn(&Params) -> Result<f64>,
    ) -> Result<TrainRun> {
        let config = self.config;
        let schedule = config.schedule();
        let mut opt = AdamW::new(params.num_params(), config.weight_decay);
        let mut metrics = Vec::new();
        let mut best_params = params.clone();
        let mut best_val = f64::NEG_INFINITY;
        let mut best_step = 0;
        let steps = config.steps_to_run();
        for step in 1..=steps {
            let (batch, spec) = make_batch(step);
            let mode = Mode::Train { seed: dropout_seed(config.seed, self.stream, step) };
            let (value, mut grads) = loss_and_gradients(&params, &batch, &spec, mode)
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("step {step}: {m}")),
                    other => other,
                })?;
            let norm = grads.global_norm();
            clip_grad_norm(&mut grads.params, norm, config.max_grad_norm);
            let lr = schedule.lr(step);
            opt.step(&mut params, &grads.params, lr);

            let mut record = MetricRecord {
                step,
                loss: value.total,
                lv_part: spec.verify_scale * value.verify_sum,
                lm_part: spec.masked_scale * value.masked_sum,
                lr,
                val_accuracy: None,
            };
            if step % config.eval_every == 0 || step == steps {
                let acc = validate(&params)?;
                record.val_accuracy = Some(acc);
                if acc > best_val {
                    best_val = acc;
                    best_params = params.clone();
                    best_step = step;
                }
            }
            metrics.push(record);
        }
        Ok(TrainRun {
            final_params: params,
            best_params,
            best_val_accuracy: best_val,
            best_step,
            metrics,
        })
    }
}

fn encoded_split(dataset: &Dataset, split: Split, vocab: &Vocab, max_len: usize) -> Result<Vec<(EncodedInput, u8)>> {
    dataset
        .split(split)
        .map(|i| Ok((encode_instance(i, dataset, vocab, max_len)?, i.label)))
        .collect()
}

/// Verification-only training with unweighted binary cross-entropy.
pub fn train_stage_a(
    dataset: &Dataset,
    vocab: &Vocab,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    let params = init_params(model_config, config.seed)?;
    let max_len = model_config.max_len;
    let train = encoded_split(dataset, Split::Train, vocab, max_len)?;
    let val = encoded_split(dataset, Split::Val, vocab, max_len)?;
    if train.is_empty() {
        return Err(Error::Integrity("no training instances".into()));
    }
    let mut sampler = EpochSampler::new(train.len(), stream_rng(config.seed, STREAM_STAGE_A));
    let b = config.batch_size;
    Loop { config, stream: STREAM_STAGE_A }.run(
        params,
        |_| {
            let verify = sampler
                .batch(b)
                .into_iter()
                .map(|i| VerifyExample { input: train[i].0.clone(), label: train[i].1, weight: 1.0 })
                .collect();
            (TrainBatch { verify, masked: vec![] }, LossSpec { verify_scale: 1.0 / b as f64, masked_scale: 0.0 })
        },
        |p| accuracy_on(p, &val),
    )
}

/// Statement-only masked-token training: one uniformly random position per
/// statement per step, no table tokens.
pub fn train_stage_a_prime(
    dataset: &Dataset,
    vocab: &Vocab,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    let params = init_params(model_config, config.seed.wrapping_add(1))?;
    let max_len = model_config.max_len;
    let train: Vec<&LabeledInstance> = dataset.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Integrity("no training instances".into()));
    }
    let held_out = mlm_eval_set(dataset, vocab, max_len, config.seed)?;
    let mut sampler = EpochSampler::new(train.len(), stream_rng(config.seed, STREAM_STAGE_A_PRIME));
    let mut pos_rng = stream_rng(config.seed, STREAM_STAGE_A_PRIME + 100);
    let b = config.batch_size;
    Loop { config, stream: STREAM_STAGE_A_PRIME }.run(
        params,
        |_| {
            let masked = sampler
                .batch(b)
                .into_iter()
                .map(|i| {
                    let s = &train[i].statement;
                    let idx = pos_rng.gen_range(0..s.len());
                    let (input, position) = masked_statement_input(s, idx, vocab, max_len)?;
                    Ok(MaskedExample { input: input.trimmed(), position, target: vocab.id(&s[idx]) })
                })
                .collect::<Result<Vec<_>>>()
                .expect("train statements fit max_len");
            (TrainBatch { verify: vec![], masked }, LossSpec { verify_scale: 0.0, masked_scale: 1.0 / b as f64 })
        },
        |p| mlm_accuracy(p, &held_out),
    )
}

/// Validation statements each masked at one seeded position.
pub fn mlm_eval_set(dataset: &Dataset, vocab: &Vocab, max_len: usize, seed: u64) -> Result<Vec<MaskedExample>> {
    let mut rng = stream_rng(seed, STREAM_STAGE_A_PRIME + 200);
    dataset
        .split(Split::Val)
        .map(|inst| {
            let idx = rng.gen_range(0..inst.statement.len());
            let (input, position) = masked_statement_input(&inst.statement, idx, vocab, max_len)?;
            Ok(MaskedExample { input: input.trimmed(), position, target: vocab.id(&inst.statement[idx]) })
        })
        .collect()
}

/// Fraction of masked positions whose argmax equals the target.
pub fn mlm_accuracy(params: &Params, examples: &[MaskedExample]) -> Result<f64> {
    use rayon::prelude::*;
    if examples.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|ex| {
            let probs = masked_token_probs(params, &ex.input, ex.position)?;
            let argmax = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b })
                .0;
            Ok(argmax as u32 == ex.target)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}

/// Masks one statement token of an entailed instance: the most salient one,
/// or a uniformly random one.
pub fn build_aux_example<R: Rng>(
    instance: &LabeledInstance,
    table: &Table,
    profile: Option<&SalienceProfile>,
    vocab: &Vocab,
    strategy: MaskingStrategy,
    max_len: usize,
    rng: &mut R,
) -> Result<MaskedExample> {
    if instance.label != ENTAILED {
        return Err(Error::RefutedInstance(instance.id.clone()));
    }
    let index = match strategy {
        MaskingStrategy::Salient => {
            let profile = profile.ok_or_else(|| Error::MissingProfile(instance.id.clone()))?;
            if profile.scores.len() != instance.statement.len() {
                return Err(Error::Integrity(format!("profile {} does not match its statement", instance.id)));
            }
            most_salient(profile)?
        }
        MaskingStrategy::Random => rng.gen_range(0..instance.statement.len()),
    };
    let mut ids: Vec<u32> = instance.statement.iter().map(|t| vocab.id(t)).collect();
    let target = ids[index];
    ids[index] = MASK;
    let input = encode_ids(&ids, table, vocab, max_len)?;
    Ok(MaskedExample { input: input.trimmed(), position: EncodedInput::statement_position(index), target })
}

/// Counts and normalizers of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointNormalizers {
    /// Original train instances.
    pub n_v: usize,
    /// Entailed original train instances.
    pub n_m: usize,
    /// Multiplier of `n_v` in the verification normalizer.
    pub k_eff: usize,
    /// Verification records (originals plus augments).
    pub records: usize,
}

impl JointNormalizers {
    /// Per-record scales for a step with the given batch sizes, chosen so that
    /// the expected step loss equals the full joint objective.
    pub fn step_spec(&self, alpha: f64, verify_batch: usize, masked_batch: usize) -> LossSpec {
        let verify_scale = if verify_batch == 0 {
            0.0
        } else {
            alpha / (self.n_v * self.k_eff) as f64 * (self.records as f64 / verify_batch as f64)
        };
        let masked_scale = if masked_batch == 0 { 0.0 } else { (1.0 - alpha) / masked_batch as f64 };
        LossSpec { verify_scale, masked_scale }
    }
}

/// The verification records used by joint training: the augmented file's
/// records when augmentation is on, otherwise the originals with weight 1.
pub fn verification_records(
    dataset: &Dataset,
    augmented: Option<&[AugmentedInstance]>,
    aug_mode: AugMode,
) -> Result<Vec<AugmentedInstance>> {
    let index = dataset.instance_index();
    match (aug_mode, augmented) {
        (AugMode::Off, _) => Ok(dataset.split(Split::Train).map(AugmentedInstance::original).collect()),
        (_, None) => Err(Error::Config("augmentation is on but no augmented records were given".into())),
        (_, Some(records)) => {
            for r in records {
                match index.get(r.source_id.as_str()) {
                    Some(src) if src.split == Split::Train && src.label == r.label => {}
                    _ => {
                        return Err(Error::Integrity(format!(
                            "augmented record from {} does not match a train instance",
                            r.source_id
                        )))
                    }
                }
            }
            Ok(records.to_vec())
        }
    }
}

pub fn joint_normalizers(dataset: &Dataset, records: usize, config: &TrainConfig) -> JointNormalizers {
    let n_v = dataset.split(Split::Train).count();
    let n_m = dataset.split(Split::Train).filter(|i| i.label == ENTAILED).count();
    let k_eff = match (config.aug_mode, config.lv_denominator) {
        (AugMode::Off, _) => 1,
        (_, LvDenominator::K) => config.k,
        (_, LvDenominator::KPlus1) => config.k + 1,
    };
    JointNormalizers { n_v, n_m, k_eff, records }
}

/// Salience-aware joint training, warm-started from `stage_a`.
///
/// Each step draws one verification batch from the (weighted) records and
/// one auxiliary batch of masked entailed originals. `alpha = 1` skips the
/// auxiliary batch, `alpha = 0` the verification batch.
pub fn train_joint(
    dataset: &Dataset,
    vocab: &Vocab,
    profiles: &[SalienceProfile],
    augmented: Option<&[AugmentedInstance]>,
    stage_a: &Params,
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    let max_len = stage_a.config.max_len;
    let index = dataset.instance_index();
    let records = verification_records(dataset, augmented, config.aug_mode)?;
    let verify: Vec<VerifyExample> = records
        .iter()
        .map(|r| {
            let src = index[r.source_id.as_str()];
            let input = encode(&r.statement, dataset.table_of(src), vocab, max_len)?;
            Ok(VerifyExample { input: input.trimmed(), label: r.label, weight: r.weight })
        })
        .collect::<Result<_>>()?;

    let by_id: HashMap<&str, &SalienceProfile> = profiles.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let mut pos_rng = stream_rng(config.seed, STREAM_AUX_POSITIONS);
    let mut entailed: Vec<&LabeledInstance> = dataset
        .split(Split::Train)
        .filter(|i| i.label == ENTAILED)
        .collect();
    entailed.sort_by(|a, b| a.id.cmp(&b.id));
    let aux: Vec<MaskedExample> = entailed
        .iter()
        .map(|inst| {
            build_aux_example(
                inst,
                dataset.table_of(inst),
                by_id.get(inst.id.as_str()).copied(),
                vocab,
                config.masking_strategy,
                max_len,
                &mut pos_rng,
            )
        })
        .collect::<Result<_>>()?;

    let norm = joint_normalizers(dataset, verify.len(), config);
    let use_verify = config.alpha > 0.0 && !verify.is_empty();
    let use_aux = config.alpha < 1.0 && !aux.is_empty();
    if !use_verify && !use_aux {
        return Err(Error::Integrity("joint training has nothing to train on".into()));
    }
    let val = encoded_split(dataset, Split::Val, vocab, max_len)?;
    let mut v_sampler = EpochSampler::new(verify.len().max(1), stream_rng(config.seed, STREAM_JOINT));
    let mut m_sampler = EpochSampler::new(aux.len().max(1), stream_rng(config.seed, STREAM_JOINT + 100));
    let b = config.batch_size;
    Loop { config, stream: STREAM_JOINT }.run(
        stage_a.clone(),
        |_| {
            let vb: Vec<VerifyExample> = if use_verify {
                v_sampler.batch(b).into_iter().map(|i| verify[i].clone()).collect()
            } else {
                vec![]
            };
            let mb: Vec<MaskedExample> = if use_aux {
                m_sampler.batch(b).into_iter().map(|i| aux[i].clone()).collect()
            } else {
                vec![]
            };
            let spec = norm.step_spec(config.alpha, vb.len(), mb.len());
            (TrainBatch { verify: vb, masked: mb }, spec)
        },
        |p| accuracy_on(p, &val),
    )
}
