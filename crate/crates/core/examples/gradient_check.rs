//! Central-difference check of the joint loss gradients on a model small
//! enough to perturb every parameter.
//!
//!     cargo run --release --example gradient_check

use tfv_salience::datamodel::{Split, ENTAILED};
use tfv_salience::encoder::{build_vocab, encode, encode_ids, EncodedInput, MASK};
use tfv_salience::network::{
    init_params, loss_and_gradients, loss_value, LossSpec, MaskedExample, ModelConfig, Mode, TrainBatch, VerifyExample,
};
use tfv_salience::synthgen::{generate_dataset, GenConfig};

fn main() -> tfv_salience::Result<()> {
    let gen = GenConfig { train_tables: 3, val_tables: 1, test_tables: 1, rows_min: 3, rows_max: 3, ..GenConfig::default() };
    let data = generate_dataset(&gen)?.dataset;
    let vocab = build_vocab(&data)?;
    let config = ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ffn: 16,
        max_len: 40,
        vocab_size: vocab.len(),
        max_rows: 4,
        max_cols: 4,
        max_rank: 4,
        dropout: 0.1,
        init_std: 0.3,
    };
    let params = init_params(&config, 5)?;

    let train: Vec<_> = data.split(Split::Train).collect();
    let mut batch = TrainBatch::default();
    for (inst, w) in train.iter().zip([1.0, 0.6, 0.25]) {
        let input = encode(&inst.statement, data.table_of(inst), &vocab, config.max_len)?.trimmed();
        batch.verify.push(VerifyExample { input, label: inst.label, weight: w });
    }
    for inst in train.iter().filter(|i| i.label == ENTAILED).take(2) {
        let mut ids: Vec<u32> = inst.statement.iter().map(|t| vocab.id(t)).collect();
        let target = std::mem::replace(&mut ids[1], MASK);
        let input = encode_ids(&ids, data.table_of(inst), &vocab, config.max_len)?.trimmed();
        batch.masked.push(MaskedExample { input, position: EncodedInput::statement_position(1), target });
    }
    let spec = LossSpec { verify_scale: 0.5 / 9.0, masked_scale: 0.25 };
    let mode = Mode::Train { seed: 9 };

    let (loss, grads) = loss_and_gradients(&params, &batch, &spec, mode)?;
    let analytic = grads.params.to_flat();
    let base = params.to_flat();
    let h = 1e-4;
    let mut probe = params.clone();
    let mut worst = 0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut x = base.clone();
        x[i] += h;
        probe.set_flat(&x)?;
        let up = loss_value(&probe, &batch, &spec, mode)?;
        x[i] = base[i] - h;
        probe.set_flat(&x)?;
        let down = loss_value(&probe, &batch, &spec, mode)?;
        let n = (up - down) / (2.0 * h);
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
    }
    println!("{} parameters, loss {:.6}, max relative error {worst:.3e}", params.num_params(), loss.total);
    Ok(())
}
