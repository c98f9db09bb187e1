//! Salience-aware augmentation: the least salient token of each training
//! statement is replaced by the top-k proposals of a statement-only masked
//! language model, each copy weighted by its proposal probability.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{AugmentedInstance, Dataset, LabeledInstance, SalienceProfile, Split, Table};
use crate::encoder::{encode_ids, EncodedInput, Vocab, MASK};
use crate::error::{Error, Result};
use crate::network::{masked_token_probs, Params};
use crate::salience::least_salient;
use crate::text::is_punctuation;

pub const DEFAULT_K: usize = 3;

/// A masked language model over statements alone.
pub trait MaskedLm: Sync {
    fn vocab(&self) -> &Vocab;
    fn max_len(&self) -> usize;
    /// Distribution over the vocabulary at `position` of `input`.
    fn masked_probs(&self, input: &EncodedInput, position: usize) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct MlmModel {
    pub params: Params,
    pub vocab: Vocab,
    pub max_len: usize,
}

impl MlmModel {
    pub fn new(params: Params, vocab: Vocab) -> Self {
        let max_len = params.config.max_len;
        MlmModel { params, vocab, max_len }
    }
}

impl MaskedLm for MlmModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn masked_probs(&self, input: &EncodedInput, position: usize) -> Result<Vec<f64>> {
        Ok(masked_token_probs(&self.params, input, position)?.to_vec())
    }
}

/// How augmented copies are weighted in the verification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Weight = proposal probability.
    Probabilistic,
    /// Every copy weighs 1.
    Uniform,
}

/// Statement-only encoding with `[MASK]` at `mask_index`, plus the stream
/// position of the mask.
pub fn masked_statement_input(
    statement: &[String],
    mask_index: usize,
    vocab: &Vocab,
    max_len: usize,
) -> Result<(EncodedInput, usize)> {
    if mask_index >= statement.len() {
        return Err(Error::Index { index: mask_index, len: statement.len() });
    }
    let mut ids: Vec<u32> = statement.iter().map(|t| vocab.id(t)).collect();
    ids[mask_index] = MASK;
    let input = encode_ids(&ids, &Table::empty(), vocab, max_len)?;
    Ok((input, EncodedInput::statement_position(mask_index)))
}

/// Top-k replacement tokens for the masked position, most probable first.
///
/// The original token, reserved tokens and punctuation are skipped; the
/// returned probabilities are the raw softmax values.
pub fn propose<M: MaskedLm + ?Sized>(
    statement: &[String],
    mask_index: usize,
    mlm: &M,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let (input, position) = masked_statement_input(statement, mask_index, mlm.vocab(), mlm.max_len())?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let probs = mlm.masked_probs(&input, position)?;
    let original = &statement[mask_index];
    let vocab = mlm.vocab();
    let mut candidates: Vec<(u32, f64)> = probs
        .iter()
        .enumerate()
        .map(|(id, &p)| (id as u32, p))
        .filter(|&(id, p)| {
            let tok = vocab.token(id);
            p > 0.0 && !Vocab::is_reserved(id) && tok != original && !is_punctuation(tok)
        })
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(candidates
        .into_iter()
        .take(k)
        .map(|(id, p)| (vocab.token(id).to_string(), p))
        .collect())
}

/// The original (weight 1) followed by one copy per proposal.
pub fn augment<M: MaskedLm + ?Sized>(
    instance: &LabeledInstance,
    profile: &SalienceProfile,
    mlm: &M,
    k: usize,
) -> Result<Vec<AugmentedInstance>> {
    if profile.instance_id != instance.id {
        return Err(Error::Integrity(format!(
            "profile {} does not belong to instance {}",
            profile.instance_id, instance.id
        )));
    }
    let mut out = vec![AugmentedInstance::original(instance)];
    let Some(index) = least_salient(profile, &instance.statement)? else {
        return Ok(out);
    };
    for (token, p) in propose(&instance.statement, index, mlm, k)? {
        let mut statement = instance.statement.clone();
        statement[index] = token.clone();
        out.push(AugmentedInstance {
            source_id: instance.id.clone(),
            statement,
            label: instance.label,
            replaced_index: Some(index),
            replacement: Some(token),
            weight: p,
        });
    }
    Ok(out)
}

/// Augments the train split, ordered by source instance id. Validation and
/// test instances are never touched.
pub fn augment_dataset<M: MaskedLm + ?Sized>(
    dataset: &Dataset,
    profiles: &[SalienceProfile],
    mlm: &M,
    k: usize,
    weighting: Weighting,
) -> Result<Vec<AugmentedInstance>> {
    let by_id: HashMap<&str, &SalienceProfile> = profiles.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let mut train: Vec<&LabeledInstance> = dataset.split(Split::Train).collect();
    train.sort_by(|a, b| a.id.cmp(&b.id));
    let per_instance: Vec<Vec<AugmentedInstance>> = train
        .par_iter()
        .map(|inst| {
            let profile = by_id
                .get(inst.id.as_str())
                .ok_or_else(|| Error::MissingProfile(inst.id.clone()))?;
            let mut records = augment(inst, profile, mlm, k)?;
            if weighting == Weighting::Uniform {
                records.iter_mut().for_each(|r| r.weight = 1.0);
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}
