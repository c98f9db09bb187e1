//! Salience profiles plus probabilistic augmentation of the train split.
//! Needs the stage-A and stage-A' checkpoints (train_baseline, then
//! `tfv train-mlm`) in the working directory.
//!
//!     cargo run --release --example augment -- work

use tfv_salience::augmentor::Weighting;
use tfv_salience::config::{PipelineConfig, Preset};
use tfv_salience::pipeline::{self, Workdir};

fn main() -> tfv_salience::Result<()> {
    let wd = Workdir::new(std::env::args().nth(1).unwrap_or_else(|| "work".into()));
    let config = PipelineConfig::preset(Preset::Desk);
    let (_, s) = pipeline::salience(&wd, None)?;
    println!("salience: {s}");
    let (records, s) = pipeline::augment(&config, &wd, Weighting::Probabilistic)?;
    println!("augment: {s}");
    // one source instance and its weighted variants
    if let Some(first) = records.first() {
        for r in records.iter().filter(|r| r.source_id == first.source_id) {
            println!("w={:.4}  {}", r.weight, r.statement.join(" "));
        }
    }
    Ok(())
}
