use std::path::PathBuf;

use clap::Args;
use imrk_core::detector::{HeadVariant, ModelConfig};
use imrk_core::training::{read_dataset, train, write_batch_csv, write_loss_csv, TrainConfig};

use super::{create_dir, require_exists, Outcome};
use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Mask head: baseline or improved.
    #[arg(long)]
    head: Option<HeadVariant>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Output directory for model.ckpt, loss.csv and batches.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: TrainArgs) -> Outcome {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let data = s.path("data", a.data)?;
    let head = s.get("head", a.head, HeadVariant::Improved)?;
    let d = TrainConfig::default();
    let tcfg = TrainConfig {
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        learning_rate: s.get("lr", a.lr, d.learning_rate)?,
        seed: s.get("seed", a.seed, d.seed)?,
        batch_size: s.get("batch-size", a.batch_size, d.batch_size)?,
        ..d
    };
    let out = s.path("out", a.out)?;
    let settings = s.finish()?;
    tcfg.validate()?;
    require_exists(&data)?;

    let scenes: Vec<_> = read_dataset(&data)?.into_iter().map(|(_, sc)| sc).collect();
    let image_size = scenes[0].image_size();
    let mcfg = ModelConfig {
        image_size,
        head,
        ..ModelConfig::default()
    };
    mcfg.validate()?;
    let total_batches = scenes.len().div_ceil(tcfg.batch_size) * tcfg.epochs;
    let result = train(&scenes, &tcfg, &mcfg, |b| {
        log::debug!("epoch {} step {} of {total_batches}: total {:.6}", b.epoch, b.step, b.loss.total);
    });
    let output = match result {
        Ok(o) => o,
        Err(e @ imrk_core::Error::Diverged { .. }) => return Err(CliError::from(e)),
        Err(e) => return Err(e.into()),
    };

    create_dir(&out)?;
    output.checkpoint.save(&out.join("model.ckpt"))?;
    write_loss_csv(&out.join("loss.csv"), &output.epochs)?;
    write_batch_csv(&out.join("batches.csv"), &output.batches)?;
    if let (Some(first), Some(last)) = (output.epochs.first(), output.epochs.last()) {
        println!(
            "head={head} epochs={} first_total={:.6} final_total={:.6}",
            tcfg.epochs, first.loss.total, last.loss.total
        );
    }

    let mut m = RunManifest::new("train", settings);
    m.seed = Some(tcfg.seed);
    m.config.insert("model".into(), mcfg.to_kv());
    m.config.insert("train".into(), tcfg.to_kv());
    m.input(&data);
    for f in ["model.ckpt", "loss.csv", "batches.csv"] {
        m.output(f);
    }
    Ok((m, out))
}
