#![allow(dead_code)]

use tfv_salience::datamodel::{Dataset, LabeledInstance, Split, Table, ENTAILED};
use tfv_salience::encoder::{build_vocab, encode, encode_ids, EncodedInput, Vocab, MASK};
use tfv_salience::network::{
    entail_probs, loss_and_gradients, loss_value, LossSpec, MaskedExample, ModelConfig, Mode, Params, TrainBatch, VerifyExample,
};
use tfv_salience::synthgen::{generate_dataset, GenConfig};

pub fn small_gen(seed: u64) -> GenConfig {
    GenConfig { train_tables: 3, val_tables: 1, test_tables: 1, rows_min: 3, rows_max: 3, seed, ..GenConfig::default() }
}

pub fn small_dataset(seed: u64) -> (Dataset, Vocab) {
    let d = generate_dataset(&small_gen(seed)).unwrap().dataset;
    let v = build_vocab(&d).unwrap();
    (d, v)
}

/// Under 5k parameters for a vocabulary of about a hundred tokens.
pub fn grad_check_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ffn: 16,
        max_len: 40,
        vocab_size,
        max_rows: 4,
        max_cols: 4,
        max_rank: 4,
        dropout: 0.1,
        init_std: 0.3,
    }
}

/// Three weighted verification records and two masked entailed statements.
pub fn joint_batch(d: &Dataset, v: &Vocab, max_len: usize) -> TrainBatch {
    let train: Vec<_> = d.split(Split::Train).collect();
    let verify = train
        .iter()
        .take(3)
        .zip([1.0, 0.6, 0.25])
        .map(|(i, w)| VerifyExample {
            input: encode(&i.statement, d.table_of(i), v, max_len).unwrap().trimmed(),
            label: i.label,
            weight: w,
        })
        .collect();
    let masked = train
        .iter()
        .filter(|i| i.label == ENTAILED)
        .take(2)
        .map(|i| {
            let mut ids: Vec<u32> = i.statement.iter().map(|t| v.id(t)).collect();
            let target = ids[1];
            ids[1] = MASK;
            MaskedExample {
                input: encode_ids(&ids, d.table_of(i), v, max_len).unwrap().trimmed(),
                position: EncodedInput::statement_position(1),
                target,
            }
        })
        .collect();
    TrainBatch { verify, masked }
}

pub const JOINT_SPEC: LossSpec = LossSpec { verify_scale: 0.5 / 9.0, masked_scale: 0.25 };

/// Largest `|a - n| / max(|a|, |n|, floor)` over every parameter, comparing
/// analytic gradients with central differences of step `h`.
pub fn max_relative_error(params: &Params, batch: &TrainBatch, spec: &LossSpec, mode: Mode, h: f64, floor: f64) -> (f64, String) {
    let (_, grads) = loss_and_gradients(params, batch, spec, mode).unwrap();
    let analytic = grads.params.to_flat();
    let names: Vec<(String, usize)> = params.tensors().iter().map(|t| (t.0.clone(), t.2.len())).collect();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut worst = (0.0, String::new());
    for (i, &a) in analytic.iter().enumerate() {
        let mut x = base.clone();
        x[i] = base[i] + h;
        probe.set_flat(&x).unwrap();
        let up = loss_value(&probe, batch, spec, mode).unwrap();
        x[i] = base[i] - h;
        probe.set_flat(&x).unwrap();
        let down = loss_value(&probe, batch, spec, mode).unwrap();
        let n = (up - down) / (2.0 * h);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > worst.0 {
            let mut off = i;
            let mut name = String::new();
            for (nm, len) in &names {
                if off < *len {
                    name = format!("{nm}[{off}] analytic {a:e} numeric {n:e}");
                    break;
                }
                off -= len;
            }
            worst = (rel, name);
        }
    }
    worst
}

/// Salience by rewriting the statement text with `[MASK]` one token at a
/// time and re-encoding from scratch, one forward pass per input.
pub fn serial_salience(inst: &LabeledInstance, table: &Table, params: &Params, vocab: &Vocab, max_len: usize) -> Vec<f64> {
    let gold = |p: f64| if inst.label == 1 { p } else { 1.0 - p };
    let run = |s: &[String]| {
        let x = encode(s, table, vocab, max_len).unwrap();
        gold(entail_probs(params, &[x]).unwrap()[0])
    };
    let base = run(&inst.statement);
    (0..inst.statement.len())
        .map(|t| {
            let mut s = inst.statement.clone();
            s[t] = "[MASK]".to_string();
            (base - run(&s)).abs()
        })
        .collect()
}

pub mod augmentation {
    use std::collections::BTreeMap;
    use std::fs;

    use super::grad_check_config;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tfv_salience::augmentor::Weighting;
    use tfv_salience::config::{PipelineConfig, Preset};
    use tfv_salience::datamodel::{AugmentedInstance, Split};
    use tfv_salience::encoder::{Vocab, RESERVED_TOKENS};
    use tfv_salience::network::{init_params, save_checkpoint};
    use tfv_salience::pipeline::{self, Workdir, STAGE_A, STAGE_MLM};
    use tfv_salience::text::is_punctuation;

    fn setup() -> (tempfile::TempDir, Workdir, PipelineConfig) {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::new(dir.path());
        let config = PipelineConfig::preset(Preset::Desk);
        pipeline::gen_data(&config, &wd).unwrap();
        let vocab = wd.load_vocab().unwrap();
        for (stage, seed) in [(STAGE_A, 1), (STAGE_MLM, 2)] {
            fs::create_dir_all(wd.stage_dir(stage)).unwrap();
            let mut model = grad_check_config(vocab.len());
            model.max_len = 128;
            model.max_rows = 16;
            model.max_cols = 8;
            model.max_rank = 16;
            save_checkpoint(&init_params(&model, seed).unwrap(), &wd.best_checkpoint(stage)).unwrap();
        }
        pipeline::salience(&wd, None).unwrap();
        (dir, wd, config)
    }

    fn by_source(records: &[AugmentedInstance]) -> BTreeMap<&str, Vec<&AugmentedInstance>> {
        let mut m: BTreeMap<&str, Vec<&AugmentedInstance>> = BTreeMap::new();
        for r in records {
            m.entry(r.source_id.as_str()).or_default().push(r);
        }
        m
    }

    /// Panics on the first violation of the augmentation contract, checked on
    /// 200 random train instances of the desk dataset with k = 3.
    pub fn check_augmentation_contract() {
        let (_dir, wd, config) = setup();
        let files = ["tables.json", "instances.jsonl"];
        let before: Vec<Vec<u8>> = files.iter().map(|f| fs::read(wd.data().join(f)).unwrap()).collect();

        let (records, _) = pipeline::augment(&config, &wd, Weighting::Probabilistic).unwrap();
        let after: Vec<Vec<u8>> = files.iter().map(|f| fs::read(wd.data().join(f)).unwrap()).collect();
        assert_eq!(before, after, "dataset files changed");

        let dataset = wd.load_dataset().unwrap();
        let vocab = Vocab::load(&wd.vocab()).unwrap();
        let index = dataset.instance_index();
        let groups = by_source(&records);
        assert!(groups.keys().all(|id| index[id].split == Split::Train), "val/test instances were augmented");
        assert_eq!(groups.len(), dataset.split(Split::Train).count());

        let mut ids: Vec<&str> = groups.keys().copied().collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        for id in ids.into_iter().take(200) {
            let group = &groups[id];
            let src = index[id];
            assert!(group.len() <= 1 + config.train.k);
            assert!(group[0].is_original());
            assert_eq!(group[0].weight, 1.0);
            assert_eq!(group[0].statement, src.statement);
            assert_eq!(config.train.k, 3);
            let mut last = f64::INFINITY;
            for r in &group[1..] {
                assert!(r.weight > 0.0 && r.weight <= 1.0, "{id}: weight {}", r.weight);
                assert!(r.weight <= last, "{id}: weights increase");
                last = r.weight;
                let i = r.replaced_index.unwrap();
                let tok = r.replacement.as_deref().unwrap();
                assert_ne!(tok, src.statement[i]);
                assert!(!RESERVED_TOKENS.contains(&tok));
                assert!(!is_punctuation(tok));
                assert!(vocab.id(tok) as usize >= RESERVED_TOKENS.len());
                assert_eq!(r.label, src.label);
                for (j, (a, b)) in r.statement.iter().zip(&src.statement).enumerate() {
                    assert_eq!(a == b, j != i, "{id}: position {j}");
                }
            }
        }

        let (uniform, _) = pipeline::augment(&config, &wd, Weighting::Uniform).unwrap();
        assert!(uniform.iter().all(|r| r.weight == 1.0));
        assert_eq!(uniform.len(), records.len());
        let after: Vec<Vec<u8>> = files.iter().map(|f| fs::read(wd.data().join(f)).unwrap()).collect();
        assert_eq!(before, after);
    }
}
