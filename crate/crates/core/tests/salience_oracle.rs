mod common;

use common::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfv_salience::datamodel::{LabeledInstance, Split};
use tfv_salience::network::init_params;
use tfv_salience::salience::{estimate, estimate_all, ProbeModel};
use tfv_salience::synthgen::{generate_dataset, GenConfig};

#[test]
fn batched_estimate_matches_serial_oracle_on_50_instances() {
    let data = generate_dataset(&GenConfig { train_tables: 8, ..small_gen(21) }).unwrap().dataset;
    let vocab = tfv_salience::encoder::build_vocab(&data).unwrap();
    let params = init_params(&grad_check_config(vocab.len()), 2).unwrap();
    let probe = ProbeModel::new(params, vocab);
    let mut pool: Vec<&LabeledInstance> = data.split(Split::Train).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    pool.truncate(50);
    assert_eq!(pool.len(), 50);
    let profiles = estimate_all(&pool, &data, &probe).unwrap();
    for (inst, prof) in pool.iter().zip(&profiles) {
        let oracle = serial_salience(inst, data.table_of(inst), &probe.params, &probe.vocab, probe.max_len);
        assert_eq!(prof.scores.len(), oracle.len());
        for (a, b) in prof.scores.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9, "{}: {a} vs {b}", inst.id);
        }
    }
}

#[test]
fn constant_probe_gives_zero_salience() {
    let (d, v) = small_dataset(22);
    let mut params = init_params(&grad_check_config(v.len()), 3).unwrap();
    params.head_out_w.fill(0.0);
    params.head_out_b.fill(1.3);
    let probe = ProbeModel::new(params, v);
    for inst in d.split(Split::Train) {
        let p = estimate(inst, d.table_of(inst), &probe).unwrap();
        assert!(p.scores.iter().all(|&s| s < 1e-12));
    }
}

#[test]
fn label_complement_invariance_is_exact() {
    let (d, v) = small_dataset(23);
    let probe = ProbeModel::new(init_params(&grad_check_config(v.len()), 4).unwrap(), v);
    for inst in d.split(Split::Train) {
        let flipped = LabeledInstance { label: 1 - inst.label, ..inst.clone() };
        let a = estimate(inst, d.table_of(inst), &probe).unwrap();
        let b = estimate(&flipped, d.table_of(inst), &probe).unwrap();
        assert_eq!(a.scores, b.scores);
        assert!((a.probe_prob_unmasked + b.probe_prob_unmasked - 1.0).abs() < 1e-15);
    }
}
