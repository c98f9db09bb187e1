//! Every stage in order: data, baseline, masked LM, salience, augmentation,
//! joint training, evaluation and heatmaps. Pass `quick` to shrink every
//! schedule to a couple of hundred steps.
//!
//!     cargo run --release --example full_pipeline -- work [quick]

use tfv_salience::augmentor::Weighting;
use tfv_salience::config::{PipelineConfig, Preset};
use tfv_salience::datamodel::Split;
use tfv_salience::pipeline::{self, Workdir, STAGE_A, STAGE_JOINT};

fn main() -> tfv_salience::Result<()> {
    let mut args = std::env::args().skip(1);
    let wd = Workdir::new(args.next().unwrap_or_else(|| "work".into()));
    let mut config = PipelineConfig::preset(Preset::Desk);
    if args.next().as_deref() == Some("quick") {
        config.train.total_steps = 200;
        config.train.eval_every = 100;
        config.mlm.total_steps = 200;
        config.mlm.eval_every = 100;
    }
    println!("gen-data       {}", pipeline::gen_data(&config, &wd)?);
    println!("train-baseline {}", pipeline::train_baseline(&config, &wd)?.1);
    println!("train-mlm      {}", pipeline::train_mlm(&config, &wd)?.1);
    println!("salience       {}", pipeline::salience(&wd, None)?.1);
    println!("augment        {}", pipeline::augment(&config, &wd, Weighting::Probabilistic)?.1);
    println!("train-joint    {}", pipeline::joint(&config, &wd)?.1);
    for stage in [STAGE_A, STAGE_JOINT] {
        for split in [Split::Val, Split::Test] {
            let r = pipeline::eval(&config, &wd, &wd.best_checkpoint(stage), split)?;
            println!("{stage:8} {split:?}: {:.3} (simple {:.3}, complex {:.3})", r.accuracy, r.simple_accuracy, r.complex_accuracy);
        }
    }
    for record in pipeline::heatmaps(&config, &wd, None, 2)? {
        print!("{}", record.render());
    }
    Ok(())
}
