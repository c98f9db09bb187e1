//! The four ablation arms (salient vs random masking, probabilistic vs
//! uniform augmentation) from the same stage-A start. Run after `augment`.
//! Each arm is a full joint run, so this takes a while at desk scale;
//! pass a step count to shorten it.
//!
//!     cargo run --release --example ablation -- work [steps]

use tfv_salience::config::{PipelineConfig, Preset};
use tfv_salience::pipeline::{self, Workdir};

fn main() -> tfv_salience::Result<()> {
    let mut args = std::env::args().skip(1);
    let wd = Workdir::new(args.next().unwrap_or_else(|| "work".into()));
    let mut config = PipelineConfig::preset(Preset::Desk);
    if let Some(steps) = args.next().and_then(|s| s.parse().ok()) {
        config.train.total_steps = steps;
    }
    let report = pipeline::ablation(&config, &wd)?;
    print!("{}", report.render());
    Ok(())
}
