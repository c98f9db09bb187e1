//! Trains the verification-only baseline (stage A) on a generated dataset
//! and reports validation accuracy by difficulty.
//!
//!     cargo run --release --example generate_data -- work
//!     cargo run --release --example train_baseline -- work [steps]

use tfv_salience::config::{PipelineConfig, Preset};
use tfv_salience::datamodel::Split;
use tfv_salience::pipeline::{self, Workdir, STAGE_A};

fn main() -> tfv_salience::Result<()> {
    let mut args = std::env::args().skip(1);
    let wd = Workdir::new(args.next().unwrap_or_else(|| "work".into()));
    let mut config = PipelineConfig::preset(Preset::Desk);
    if let Some(steps) = args.next().and_then(|s| s.parse().ok()) {
        config.train.total_steps = steps;
    }
    let (run, summary) = pipeline::train_baseline(&config, &wd)?;
    for m in run.metrics.iter().filter(|m| m.val_accuracy.is_some()) {
        println!("step {:5}  loss {:.4}  val {:.3}", m.step, m.loss, m.val_accuracy.unwrap());
    }
    println!("{summary}");
    let report = pipeline::eval(&config, &wd, &wd.best_checkpoint(STAGE_A), Split::Val)?;
    print!("{}", report.render());
    Ok(())
}
