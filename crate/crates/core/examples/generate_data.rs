//! Generates the desk dataset into a working directory and prints split
//! statistics plus a few statements.
//!
//!     cargo run --release --example generate_data -- work

use tfv_salience::config::{PipelineConfig, Preset};
use tfv_salience::pipeline::{self, Workdir};

fn main() -> tfv_salience::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "work".into());
    let wd = Workdir::new(root);
    let config = PipelineConfig::preset(Preset::Desk);
    let summary = pipeline::gen_data(&config, &wd)?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    let dataset = wd.load_dataset()?;
    for inst in dataset.instances.iter().take(6) {
        println!("{} [{:?}, label {}] {}", inst.id, inst.difficulty, inst.label, inst.statement.join(" "));
    }
    Ok(())
}
