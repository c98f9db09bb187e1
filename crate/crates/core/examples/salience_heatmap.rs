//! Salience of a hand-written statement under a probe, rendered as a text
//! heatmap. Uses the stage-A checkpoint in the working directory when there
//! is one and a freshly initialized probe otherwise, so it runs standalone.
//!
//!     cargo run --release --example salience_heatmap -- [work]

use std::collections::BTreeSet;

use tfv_salience::datamodel::{ColumnType, Difficulty, LabeledInstance, Split, Table, ENTAILED};
use tfv_salience::encoder::Vocab;
use tfv_salience::eval::heatmap_record;
use tfv_salience::network::{init_params, load_checkpoint, ModelConfig};
use tfv_salience::pipeline::{Workdir, STAGE_A};
use tfv_salience::salience::{estimate, most_salient, ProbeModel};

fn main() -> tfv_salience::Result<()> {
    let table = Table {
        table_id: "formats".into(),
        caption: "e-book formats".into(),
        header: vec!["format".into(), "readers".into()],
        column_types: vec![ColumnType::Text, ColumnType::Numeric],
        rows: vec![vec!["mobipocket".into(), "3".into()], vec!["epub".into(), "5".into()]],
    };
    let statement: Vec<String> =
        "the readers of mobipocket is 3".split(' ').map(str::to_string).collect();
    let instance = LabeledInstance {
        id: "demo".into(),
        table_id: table.table_id.clone(),
        statement: statement.clone(),
        label: ENTAILED,
        difficulty: Difficulty::Simple,
        split: Split::Val,
    };

    let wd = Workdir::new(std::env::args().nth(1).unwrap_or_else(|| "work".into()));
    let probe = match (load_checkpoint(&wd.best_checkpoint(STAGE_A)), wd.load_vocab()) {
        (Ok(params), Ok(vocab)) => ProbeModel::new(params, vocab),
        _ => {
            println!("(no stage-A checkpoint found; probing an untrained model)");
            let words: BTreeSet<&String> = statement.iter().chain(&table.header).chain(table.rows.iter().flatten()).collect();
            let vocab = Vocab::from_tokens(words.into_iter().cloned())?;
            let config = ModelConfig { vocab_size: vocab.len(), ..ModelConfig::default() };
            ProbeModel::new(init_params(&config, 1)?, vocab)
        }
    };
    let profile = estimate(&instance, &table, &probe)?;
    println!("p(entailed) = {:.4}, most salient: {:?}", profile.probe_prob_unmasked, statement[most_salient(&profile)?]);
    print!("{}", heatmap_record(&profile, &statement, vec![])?.render());
    Ok(())
}
