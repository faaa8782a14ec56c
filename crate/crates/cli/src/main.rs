use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use t2s_core::analysis::{diagnostics, emit_report, evaluate, miou, FeatureKind};
use t2s_core::config::RunConfig;
use t2s_core::data::{load_dataset, save_dataset, DomainDataset, GroundTruth, SegSample};
use t2s_core::model::{load_checkpoint, ModelParams};
use t2s_core::numerics::Rng;
use t2s_core::trainer::{load_state, run, synthetic_corpus, Corpus, RunOptions};
use t2s_core::translate::{EngineKind, EngineSpec};
use t2s_core::Error;

#[derive(Parser)]
#[command(name = "t2s", about = "Pull-target-to-source domain adaptation at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Projector,
    Encoder,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a student/teacher pair and write checkpoint, logs and metrics.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Dataset root written by `gen-data`; synthesised from the config otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from `<out>/checkpoint.bin` when present.
        #[arg(long)]
        resume: bool,
        /// Write the first step's pair batch to this CSV file.
        #[arg(long)]
        dump_pairs: Option<PathBuf>,
    },
    /// Report per-class IoU and mIoU of a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Translate every image of `--src` and write a dataset with its labels.
    Translate {
        #[arg(long, default_value = "fda")]
        engine: String,
        #[arg(long, default_value_t = 0.09)]
        beta: f64,
        #[arg(long)]
        src: PathBuf,
        /// Reference images (FDA), paired round-robin.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Feature diagnostics and IoU of a checkpoint on labeled target data.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Labeled source data for the cross-domain similarity.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "projector")]
        features: Features,
    },
    /// Write the synthetic benchmark described by a config to disk.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> t2s_core::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn split_truth(ds: DomainDataset) -> (DomainDataset, GroundTruth) {
    let truth = GroundTruth::new(ds.samples.iter().map(|s| s.label.clone()).collect());
    (ds.unlabeled(), truth)
}

fn student_of(ckpt: &Path) -> t2s_core::Result<ModelParams> {
    Ok(load_checkpoint(ckpt)?.student)
}

fn execute(cmd: Cmd) -> t2s_core::Result<()> {
    match cmd {
        Cmd::Train {
            config,
            out,
            data,
            resume,
            dump_pairs,
        } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = match &data {
                Some(d) => Corpus::load(d)?,
                None => synthetic_corpus(&cfg)?,
            };
            let state = if resume { load_state(&out, &cfg)? } else { None };
            let opts = RunOptions {
                out_dir: Some(out.clone()),
                dump_pairs,
                run_name: "run".into(),
            };
            let result = run(&cfg, &corpus, state, &opts)?;
            let last = result.evals.last().expect("run always evaluates at the end");
            println!("step {} target mIoU {:.2}", last.step, 100.0 * last.miou);
        }
        Cmd::Eval { ckpt, data } => {
            let params = student_of(&ckpt)?;
            let (images, truth) = split_truth(load_dataset(&data)?);
            let report = miou(&evaluate(&params, &images, &truth)?)?;
            for (c, v) in report.per_class.iter().enumerate() {
                match v {
                    Some(v) => println!("class {c} IoU {:.2}", 100.0 * v),
                    None => println!("class {c} IoU -"),
                }
            }
            println!("mIoU {:.2}", 100.0 * report.mean);
        }
        Cmd::Translate {
            engine,
            beta,
            src,
            reference,
            out,
            seed,
        } => {
            let kind = EngineKind::parse(&engine).ok_or_else(|| Error::ConfigInvalid(format!("engine {engine:?}")))?;
            let spec = EngineSpec {
                kind,
                beta_fda: beta,
                ..EngineSpec::default()
            };
            spec.validate()?;
            let src = load_dataset(&src)?;
            let refs = reference.as_deref().map(load_dataset).transpose()?;
            let rng = Rng::new(seed).stream("translate");
            let samples = src
                .samples
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let r = refs.as_ref().map(|d| &d.samples[k % d.len()].image);
                    Ok(SegSample {
                        image: spec.apply(&s.image, r, &mut rng.fork(k as u64))?,
                        label: s.label.clone(),
                    })
                })
                .collect::<t2s_core::Result<Vec<_>>>()?;
            save_dataset(&DomainDataset::new(samples, src.domain, src.classes)?, &out)?;
        }
        Cmd::Analyze {
            ckpt,
            data,
            source,
            out,
            features,
        } => {
            let params = student_of(&ckpt)?;
            let kind = match features {
                Features::Projector => FeatureKind::Projector,
                Features::Encoder => FeatureKind::Encoder,
            };
            let (images, truth) = split_truth(load_dataset(&data)?);
            let have_source = source.is_some();
            let source = match &source {
                Some(p) => load_dataset(p)?,
                None => truth.attach(&images),
            };
            let mut d = diagnostics(&params, &source, &images, &truth, kind)?;
            if !have_source {
                d.similarity = vec![None; params.arch.classes];
            }
            emit_report(&d.rows("analyze", 0), &out)?;
            println!("mIoU {:.2}", 100.0 * d.miou);
        }
        Cmd::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            synthetic_corpus(&cfg)?.save(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
