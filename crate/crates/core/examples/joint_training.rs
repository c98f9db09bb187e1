//! Salience-aware joint training from the stage-A checkpoint, compared with
//! the baseline on the validation split. Run after `augment`.
//!
//!     cargo run --release --example joint_training -- work [alpha]

use tfv_salience::config::{PipelineConfig, Preset};
use tfv_salience::datamodel::Split;
use tfv_salience::pipeline::{self, Workdir, STAGE_A, STAGE_JOINT};

fn main() -> tfv_salience::Result<()> {
    let mut args = std::env::args().skip(1);
    let wd = Workdir::new(args.next().unwrap_or_else(|| "work".into()));
    let mut config = PipelineConfig::preset(Preset::Desk);
    if let Some(alpha) = args.next().and_then(|s| s.parse().ok()) {
        config.train.alpha = alpha;
    }
    let (run, summary) = pipeline::joint(&config, &wd)?;
    for m in run.metrics.iter().step_by(250) {
        println!("step {:5}  loss {:.4}  (lv {:.4}, lm {:.4})", m.step, m.loss, m.lv_part, m.lm_part);
    }
    println!("{summary}");
    for stage in [STAGE_A, STAGE_JOINT] {
        let r = pipeline::eval(&config, &wd, &wd.best_checkpoint(stage), Split::Val)?;
        println!("{stage:8} val {:.3}  simple {:.3}  complex {:.3}", r.accuracy, r.simple_accuracy, r.complex_accuracy);
    }
    Ok(())
}
