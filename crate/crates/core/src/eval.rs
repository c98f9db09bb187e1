//! Evaluation, the four-arm ablation harness and salience heatmaps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{AugmentedInstance, Dataset, Difficulty, SalienceProfile, Split};
use crate::encoder::{encode, EncodedInput, Vocab};
use crate::error::{Error, Result};
use crate::network::{entail_probs, Params};
use crate::salience::{least_salient, most_salient, Probe};
use crate::trainer::{train_joint, AugMode, MaskingStrategy, TrainConfig};

const EVAL_CHUNK: usize = 32;

/// Fraction of `examples` whose thresholded prediction equals the label.
pub fn accuracy_on(params: &Params, examples: &[(EncodedInput, u8)]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let correct: usize = examples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let inputs: Vec<EncodedInput> = chunk.iter().map(|e| e.0.clone()).collect();
            let probs = entail_probs(params, &inputs)?;
            Ok(chunk.iter().zip(probs).filter(|(e, p)| predict(*p) == e.1).count())
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / examples.len() as f64)
}

/// Entailed iff p > 0.5.
pub fn predict(p_entailed: f64) -> u8 {
    u8::from(p_entailed > 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub accuracy: f64,
    pub simple_accuracy: f64,
    pub complex_accuracy: f64,
    pub n_instances: usize,
    pub n_simple: usize,
    pub n_complex: usize,
    pub checkpoint_id: String,
    pub config_echo: serde_json::Value,
}

impl EvalReport {
    /// Builds the report from `(label, difficulty, p_entailed)` triples.
    pub fn from_predictions(
        split: Split,
        predictions: &[(u8, Difficulty, f64)],
        checkpoint_id: String,
        config_echo: serde_json::Value,
    ) -> EvalReport {
        let mut n = [0usize; 2];
        let mut hit = [0usize; 2];
        for &(label, difficulty, p) in predictions {
            let d = usize::from(difficulty == Difficulty::Complex);
            n[d] += 1;
            hit[d] += usize::from(predict(p) == label);
        }
        let ratio = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
        EvalReport {
            split,
            accuracy: ratio(hit[0] + hit[1], n[0] + n[1]),
            simple_accuracy: ratio(hit[0], n[0]),
            complex_accuracy: ratio(hit[1], n[1]),
            n_instances: n[0] + n[1],
            n_simple: n[0],
            n_complex: n[1],
            checkpoint_id,
            config_echo,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "split     accuracy  simple            complex\n{:<9} {:>7.2}%  {:>7.2}% (n={:<4})  {:>7.2}% (n={})\n",
            self.split.name(),
            100.0 * self.accuracy,
            100.0 * self.simple_accuracy,
            self.n_simple,
            100.0 * self.complex_accuracy,
            self.n_complex
        )
    }
}

/// Scores `split` with the verification head only; the data is never augmented.
pub fn evaluate<P: Probe + ?Sized>(
    probe: &P,
    dataset: &Dataset,
    split: Split,
    checkpoint_id: &str,
    config_echo: serde_json::Value,
) -> Result<EvalReport> {
    let instances: Vec<_> = dataset.split(split).collect();
    let inputs: Vec<EncodedInput> = instances
        .iter()
        .map(|i| encode(&i.statement, dataset.table_of(i), probe.vocab(), probe.max_len()))
        .collect::<Result<_>>()?;
    let probs: Vec<f64> = inputs
        .par_chunks(EVAL_CHUNK)
        .map(|c| probe.entail_probs(c))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let triples: Vec<(u8, Difficulty, f64)> = instances
        .iter()
        .zip(&probs)
        .map(|(i, &p)| (i.label, i.difficulty, p))
        .collect();
    Ok(EvalReport::from_predictions(split, &triples, checkpoint_id.to_string(), config_echo))
}

/// One configuration of the ablation: either the auxiliary task alone (with a
/// masking strategy) or augmentation alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: &'static str,
    pub masking: MaskingStrategy,
    pub aug_mode: AugMode,
    /// Fixed alpha for augmentation-only arms; `None` keeps the base value.
    pub alpha: Option<f64>,
}

pub const ABLATION_ARMS: [AblationArm; 4] = [
    AblationArm { name: "salient", masking: MaskingStrategy::Salient, aug_mode: AugMode::Off, alpha: None },
    AblationArm { name: "random", masking: MaskingStrategy::Random, aug_mode: AugMode::Off, alpha: None },
    AblationArm {
        name: "probabilistic",
        masking: MaskingStrategy::Salient,
        aug_mode: AugMode::Probabilistic,
        alpha: Some(1.0),
    },
    AblationArm { name: "uniform", masking: MaskingStrategy::Salient, aug_mode: AugMode::Uniform, alpha: Some(1.0) },
];

impl AblationArm {
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            masking_strategy: self.masking,
            aug_mode: self.aug_mode,
            alpha: self.alpha.unwrap_or(base.alpha),
            ..base.clone()
        }
    }
}

/// Published full-scale reference accuracies (val, test) per arm. They are
/// shown next to desk-scale results and never compared against them.
pub const REFERENCE_ABLATION: [(&str, f64, f64); 4] = [
    ("salient", 82.4, 82.1),
    ("random", 82.1, 81.9),
    ("probabilistic", 81.8, 81.9),
    ("uniform", 81.5, 81.3),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub error: Option<String>,
    /// Fingerprint of the parameters the arm started from.
    pub init_fingerprint: String,
    pub reference_val: f64,
    pub reference_test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub stage_a_val_accuracy: f64,
    pub stage_a_test_accuracy: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn render(&self) -> String {
        let pct = |x: Option<f64>| x.map_or("   -  ".to_string(), |v| format!("{:6.2}", 100.0 * v));
        let mut s = String::from("arm            val     test    | reference val  test (full scale, not compared)\n");
        s += &format!(
            "{:<14} {}  {}  |\n",
            "stage-a",
            pct(Some(self.stage_a_val_accuracy)),
            pct(Some(self.stage_a_test_accuracy))
        );
        for r in &self.rows {
            s += &format!(
                "{:<14} {}  {}  | {:>13.1} {:>5.1}",
                r.arm,
                pct(r.val_accuracy),
                pct(r.test_accuracy),
                r.reference_val,
                r.reference_test
            );
            if let Some(e) = &r.error {
                s += &format!("  error: {e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Everything the ablation arms share.
pub struct AblationInputs<'a> {
    pub dataset: &'a Dataset,
    pub vocab: &'a Vocab,
    pub stage_a: &'a Params,
    pub profiles: &'a [SalienceProfile],
    /// Probabilistically weighted augmented records; the uniform arm resets
    /// their weights to 1.
    pub augmented: &'a [AugmentedInstance],
}

/// Trains the four arms from the shared stage-A parameters. A failing arm
/// is reported in its row and the remaining arms still run.
pub fn ablate(inputs: &AblationInputs, base: &TrainConfig) -> Result<AblationReport> {
    let split_examples = |split| -> Result<Vec<(EncodedInput, u8)>> {
        inputs
            .dataset
            .split(split)
            .map(|i| {
                let x = encode(&i.statement, inputs.dataset.table_of(i), inputs.vocab, inputs.stage_a.config.max_len)?;
                Ok((x, i.label))
            })
            .collect()
    };
    let val = split_examples(Split::Val)?;
    let test = split_examples(Split::Test)?;
    let uniform: Vec<AugmentedInstance> = inputs
        .augmented
        .iter()
        .map(|r| AugmentedInstance { weight: 1.0, ..r.clone() })
        .collect();

    let rows = ABLATION_ARMS
        .iter()
        .zip(REFERENCE_ABLATION)
        .map(|(arm, (_, ref_val, ref_test))| {
            let config = arm.train_config(base);
            let augmented = match arm.aug_mode {
                AugMode::Uniform => Some(uniform.as_slice()),
                _ => Some(inputs.augmented),
            };
            let outcome = train_joint(inputs.dataset, inputs.vocab, inputs.profiles, augmented, inputs.stage_a, &config)
                .and_then(|run| Ok((accuracy_on(&run.best_params, &val)?, accuracy_on(&run.best_params, &test)?)));
            let (val_accuracy, test_accuracy, error) = match outcome {
                Ok((v, t)) => (Some(v), Some(t), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            AblationRow {
                arm: arm.name.to_string(),
                val_accuracy,
                test_accuracy,
                error,
                init_fingerprint: format!("{:016x}", inputs.stage_a.fingerprint()),
                reference_val: ref_val,
                reference_test: ref_test,
            }
        })
        .collect();
    Ok(AblationReport {
        stage_a_val_accuracy: accuracy_on(inputs.stage_a, &val)?,
        stage_a_test_accuracy: accuracy_on(inputs.stage_a, &test)?,
        rows,
    })
}

/// A salience profile laid out for display, with its augmentation proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRecord {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    pub most_salient: usize,
    /// `None` when every token is punctuation.
    pub least_salient: Option<usize>,
    pub proposals: Vec<(String, f64)>,
}

/// Light to dark; monochrome-safe.
const SHADES: [char; 10] = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];

/// Score decile in 0..=9, clamped.
pub fn bucket(score: f64) -> usize {
    if !(score > 0.0) {
        return 0;
    }
    ((score * 10.0).floor() as usize).min(9)
}

pub fn heatmap_record(
    profile: &SalienceProfile,
    tokens: &[String],
    proposals: Vec<(String, f64)>,
) -> Result<HeatmapRecord> {
    if tokens.len() != profile.scores.len() {
        return Err(Error::Integrity(format!(
            "{} tokens but {} scores for {}",
            tokens.len(),
            profile.scores.len(),
            profile.instance_id
        )));
    }
    Ok(HeatmapRecord {
        instance_id: profile.instance_id.clone(),
        tokens: tokens.to_vec(),
        scores: profile.scores.clone(),
        most_salient: most_salient(profile)?,
        least_salient: least_salient(profile, tokens)?,
        proposals,
    })
}

impl HeatmapRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("heatmap records serialize")
    }

    pub fn from_json(line: &str) -> Result<HeatmapRecord> {
        serde_json::from_str(line).map_err(|e| Error::Parse { file: "heatmap".into(), line: 1, message: e.to_string() })
    }

    /// Text rendering: a shaded strip, then one row per token with its score
    /// bucket. `>` marks the most salient token (masked by the auxiliary
    /// task) and `<` the least salient one (replaced by augmentation).
    pub fn render(&self) -> String {
        let mut out = format!("{}\n", self.instance_id);
        let strip: Vec<String> = self
            .tokens
            .iter()
            .zip(&self.scores)
            .map(|(t, &s)| {
                let shade = SHADES[bucket(s)];
                format!("{shade}{t}{shade}")
            })
            .collect();
        out += &format!("  |{}|\n", strip.join("|"));
        let width = self.tokens.iter().map(|t| t.chars().count()).max().unwrap_or(0);
        for (i, (t, &s)) in self.tokens.iter().zip(&self.scores).enumerate() {
            let flag = if i == self.most_salient {
                "> most salient"
            } else if Some(i) == self.least_salient {
                "< least salient"
            } else {
                ""
            };
            let b = bucket(s);
            let bar: String = std::iter::repeat(SHADES[b]).take(b + 1).collect();
            let line = format!("  {i:>3} {t:<width$}  {s:.3}  d{b} {bar:<10} {flag}");
            out += line.trim_end();
            out.push('\n');
        }
        if !self.proposals.is_empty() {
            let p: Vec<String> = self.proposals.iter().map(|(t, w)| format!("{t} {w:.3}")).collect();
            out += &format!("  proposals: {}\n", p.join(", "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn hand_counted_accuracy() {
        let preds = [
            (1, Difficulty::Simple, 0.9),
            (0, Difficulty::Simple, 0.2),
            (1, Difficulty::Complex, 0.7),
            (0, Difficulty::Complex, 0.6),
        ];
        let r = EvalReport::from_predictions(Split::Val, &preds, "x".into(), serde_json::Value::Null);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.simple_accuracy, 1.0);
        assert_eq!(r.complex_accuracy, 0.5);
        assert_eq!(r.n_simple + r.n_complex, r.n_instances);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(predict(0.5), 0);
        assert_eq!(predict(0.5000001), 1);
    }

    #[test]
    fn four_isolated_arms() {
        assert_eq!(ABLATION_ARMS.len(), 4);
        let base = TrainConfig::desk();
        for arm in &ABLATION_ARMS[..2] {
            let c = arm.train_config(&base);
            assert_eq!(c.aug_mode, AugMode::Off);
            assert_eq!(c.alpha, base.alpha);
        }
        for arm in &ABLATION_ARMS[2..] {
            let c = arm.train_config(&base);
            assert_ne!(c.aug_mode, AugMode::Off);
            assert_eq!(c.alpha, 1.0);
        }
    }

    fn record(scores: &[f64], tokens: &str) -> HeatmapRecord {
        let p = SalienceProfile { instance_id: "h".into(), scores: scores.to_vec(), probe_prob_unmasked: 0.9 };
        heatmap_record(&p, &toks(tokens), vec![]).unwrap()
    }

    #[test]
    fn zero_scores_are_uniformly_light() {
        let r = record(&[0.0, 0.0, 0.0], "a b c");
        assert_eq!(r.most_salient, 0);
        assert!(r.scores.iter().all(|&s| bucket(s) == 0));
    }

    #[test]
    fn two_scores_two_buckets() {
        let r = record(&[0.05, 0.9], "a b");
        assert_ne!(bucket(0.05), bucket(0.9));
        assert_eq!((r.most_salient, r.least_salient), (1, Some(0)));
    }

    #[test]
    fn json_round_trip() {
        let mut r = record(&[0.1, 0.3], "x .");
        r.proposals = vec![("y".into(), 0.25)];
        let back = HeatmapRecord::from_json(&r.to_json()).unwrap();
        let _ = back.render();
        assert_eq!(HeatmapRecord::from_json(&back.to_json()).unwrap(), r);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let p = SalienceProfile { instance_id: "h".into(), scores: vec![0.1], probe_prob_unmasked: 0.9 };
        assert!(heatmap_record(&p, &toks("a b"), vec![]).is_err());
    }
}
