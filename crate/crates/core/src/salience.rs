//! Counterfactual token salience.
//!
//! The salience of statement token `t` is the change in the probe's
//! confidence in the gold label when `t` alone is replaced by `[MASK]`:
//! `|P(y | S, T) - P(y | S'_t, T)|`.

use rayon::prelude::*;

use crate::datamodel::{Dataset, LabeledInstance, SalienceProfile, Table};
use crate::encoder::{encode_ids, EncodedInput, Vocab, MASK};
use crate::error::{Error, Result};
use crate::network::{entail_probs, Params};
use crate::text::is_punctuation;

/// Anything that scores entailment probabilities for encoded inputs.
pub trait Probe: Sync {
    fn vocab(&self) -> &Vocab;
    fn max_len(&self) -> usize;
    fn entail_probs(&self, inputs: &[EncodedInput]) -> Result<Vec<f64>>;
}

/// A frozen verification model used only for probing.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub params: Params,
    pub vocab: Vocab,
    pub max_len: usize,
}

impl ProbeModel {
    pub fn new(params: Params, vocab: Vocab) -> Self {
        let max_len = params.config.max_len;
        ProbeModel { params, vocab, max_len }
    }
}

impl Probe for ProbeModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn entail_probs(&self, inputs: &[EncodedInput]) -> Result<Vec<f64>> {
        entail_probs(&self.params, inputs)
    }
}

/// Encodes the statement followed by one copy per token with that token masked.
pub fn counterfactual_inputs<P: Probe + ?Sized>(
    statement: &[String],
    table: &Table,
    probe: &P,
) -> Result<Vec<EncodedInput>> {
    let ids: Vec<u32> = statement.iter().map(|t| probe.vocab().id(t)).collect();
    let mut inputs = Vec::with_capacity(ids.len() + 1);
    inputs.push(encode_ids(&ids, table, probe.vocab(), probe.max_len())?);
    for t in 0..ids.len() {
        let mut masked = ids.clone();
        masked[t] = MASK;
        inputs.push(encode_ids(&masked, table, probe.vocab(), probe.max_len())?);
    }
    Ok(inputs)
}

/// Probability the probe assigns to `label`.
pub fn gold_confidence(label: u8, p_entailed: f64) -> f64 {
    if label == 1 {
        p_entailed
    } else {
        1.0 - p_entailed
    }
}

pub fn estimate<P: Probe + ?Sized>(instance: &LabeledInstance, table: &Table, probe: &P) -> Result<SalienceProfile> {
    let inputs = counterfactual_inputs(&instance.statement, table, probe)?;
    let probs = probe.entail_probs(&inputs)?;
    let p = probs[0];
    // |P(y|S) - P(y|S')| is |p - p'| for either label; computing it this way
    // makes the score vector identical for y = 0 and y = 1.
    let scores = probs[1..].iter().map(|&pm| (p - pm).abs()).collect();
    Ok(SalienceProfile {
        instance_id: instance.id.clone(),
        scores,
        probe_prob_unmasked: gold_confidence(instance.label, p),
    })
}

/// Profiles for `instances` (in order), parallel across instances.
pub fn estimate_all<P: Probe + ?Sized>(
    instances: &[&LabeledInstance],
    dataset: &Dataset,
    probe: &P,
) -> Result<Vec<SalienceProfile>> {
    instances
        .par_iter()
        .map(|inst| estimate(inst, dataset.table_of(inst), probe))
        .collect()
}

/// Argmax of the scores; ties go to the lowest index.
pub fn most_salient(profile: &SalienceProfile) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in profile.scores.iter().enumerate() {
        if best.map_or(true, |b| s > profile.scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::EmptyProfile)
}

/// Argmin over non-punctuation tokens; ties go to the lowest index.
/// `None` when every token is punctuation.
pub fn least_salient(profile: &SalienceProfile, statement: &[String]) -> Result<Option<usize>> {
    if profile.scores.is_empty() {
        return Err(Error::EmptyProfile);
    }
    if profile.scores.len() != statement.len() {
        return Err(Error::Integrity(format!(
            "profile {} has {} scores for {} tokens",
            profile.instance_id,
            profile.scores.len(),
            statement.len()
        )));
    }
    let mut best: Option<usize> = None;
    for (i, (&s, tok)) in profile.scores.iter().zip(statement).enumerate() {
        if is_punctuation(tok) {
            continue;
        }
        if best.map_or(true, |b| s < profile.scores[b]) {
            best = Some(i);
        }
    }
    Ok(best)
}
