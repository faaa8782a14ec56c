//! The adaptation loop: one step composes translation, pseudo-labelling,
//! mixing, pairing, the three losses, AdamW and the EMA update.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::{diagnostics, emit_report, evaluate, miou, FeatureKind, MetricRow};
use crate::config::{Mode, RunConfig};
use crate::data::{
    downsample_labels, downsample_plane, gen_synthetic_pair, load_dataset, save_dataset, BatchSampler, DomainDataset,
    GroundTruth, MiniBatch, SegSample,
};
use crate::error::{Error, Result};
use crate::losses::{class_confidence_many, pull_loss_grad, source_ce_grad, target_ce_grad};
use crate::model::{
    backward, forward_traced, init_params, load_checkpoint, pseudo_label_from_probs, save_checkpoint, Checkpoint,
    Gradients, Heads, ModelArch, ModelParams, OptimState, PseudoLabel, TeacherState, Trace, Upstream,
};
use crate::numerics::{Grid2D, LabelMap, Rng, NORM_EPS};
use crate::pairing::{build_pair_batch, PairBatch, PairingInputs, TargetView};
use crate::translate::{classmix, color_jitter, gaussian_blur};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Training data plus the held-out evaluation split.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub source: DomainDataset,
    /// Unlabeled.
    pub target: DomainDataset,
    pub eval_source: DomainDataset,
    /// Unlabeled; labels live in `eval_truth`.
    pub eval_target: DomainDataset,
    pub eval_truth: GroundTruth,
}

impl Corpus {
    const PARTS: [&'static str; 4] = ["source", "target", "eval_source", "eval_target"];

    /// Writes the four splits as dataset directories under `dir`. The
    /// held-out target split is written with its labels.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let eval_target = self.eval_truth.attach(&self.eval_target);
        for (name, ds) in Self::PARTS
            .iter()
            .zip([&self.source, &self.target, &self.eval_source, &eval_target])
        {
            save_dataset(ds, &dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let [source, target, eval_source, labeled] = Self::PARTS.map(|p| load_dataset(&dir.join(p)));
        let labeled = labeled?;
        Ok(Self {
            source: source?,
            target: target?.unlabeled(),
            eval_source: eval_source?,
            eval_target: labeled.unlabeled(),
            eval_truth: GroundTruth::new(labeled.samples.into_iter().map(|s| s.label).collect()),
        })
    }
}

/// The synthetic benchmark described by `cfg` (sizes, shift, data seed).
pub fn synthetic_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let root = Rng::new(cfg.data_seed);
    let train = gen_synthetic_pair(&cfg.data_config(), &root.stream("train"))?;
    let mut eval_cfg = cfg.data_config();
    eval_cfg.n_source = cfg.n_eval;
    eval_cfg.n_target = cfg.n_eval;
    let eval = gen_synthetic_pair(&eval_cfg, &root.stream("eval"))?;
    Ok(Corpus {
        source: train.source,
        target: train.target,
        eval_source: eval.source,
        eval_target: eval.target,
        eval_truth: eval.target_truth,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub student: ModelParams,
    pub teacher: TeacherState,
    pub opt: OptimState,
    /// Completed steps.
    pub step: u64,
    /// Target images consumed by training steps in this process.
    pub target_images_seen: u64,
}

impl TrainState {
    pub fn init(cfg: &RunConfig) -> Self {
        let student = init_params(&cfg.arch, &Rng::new(cfg.seed).stream("init"));
        Self {
            teacher: TeacherState::from_student(&student, cfg.eta),
            opt: OptimState::new(cfg.optim.clone(), &student),
            student,
            step: 0,
            target_images_seen: 0,
        }
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint {
            config_hash: cfg.hash(),
            step: self.step,
            student: self.student.clone(),
            teacher: self.teacher.params.clone(),
            first_moment: self.opt.first.clone(),
            second_moment: self.opt.second.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, cfg: &RunConfig) -> Result<Self> {
        if ck.config_hash != cfg.hash() {
            return Err(Error::ConfigInvalid(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        if ck.student.arch != cfg.arch {
            return Err(Error::ConfigInvalid("checkpoint architecture differs from config".into()));
        }
        let mut opt = OptimState::new(cfg.optim.clone(), &ck.student);
        opt.first = ck.first_moment;
        opt.second = ck.second_moment;
        opt.step = ck.step;
        Ok(Self {
            student: ck.student,
            teacher: TeacherState {
                params: ck.teacher,
                eta: cfg.eta,
            },
            opt,
            step: ck.step,
            target_images_seen: 0,
        })
    }
}

/// Which loss terms enter the objective. Training uses all of them; the
/// gradient checks isolate one at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub source: bool,
    pub target: bool,
    pub pull: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        source: true,
        target: true,
        pull: true,
    };
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub l_source: f64,
    pub l_target: f64,
    pub l_pull: f64,
    /// `λ·L_pull` as it entered the total.
    pub weighted_pull: f64,
    pub total: f64,
    /// Mean pseudo-label quality over the target batch.
    pub q_mean: f64,
    pub gamma: Option<f64>,
    /// Pulling weight per class, zero for inactive classes.
    pub weights: Vec<f64>,
}

impl StepLog {
    pub fn csv_header(classes: usize) -> String {
        let mut s = "step,l_source,l_target,l_pull,weighted_pull,total,q_mean,gamma".to_string();
        for c in 0..classes {
            s.push_str(&format!(",w{c}"));
        }
        s
    }

    pub fn csv_line(&self) -> String {
        let gamma = self.gamma.map(|g| g.to_string()).unwrap_or_default();
        let mut s = format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.l_source, self.l_target, self.l_pull, self.weighted_pull, self.total, self.q_mean, gamma
        );
        for w in &self.weights {
            s.push_str(&format!(",{w}"));
        }
        s
    }
}

/// Losses and student gradients at the current parameters.
#[derive(Clone, Debug)]
pub struct Objective {
    pub log: StepLog,
    pub grads: Gradients,
    pub pairs: Option<PairBatch>,
}

fn student_input(
    k: usize,
    batch: &MiniBatch<'_>,
    pl: &PseudoLabel,
    cfg: &RunConfig,
    rng: &Rng,
) -> Result<(Grid2D, LabelMap)> {
    let donor: &SegSample = batch.source[k % batch.source.len()];
    let mut r = rng.stream("mix").fork(k as u64);
    let (mut img, labels, _) = classmix(donor, &batch.target[k].image, &pl.labels, &mut r)?;
    if cfg.aug_jitter > 0.0 {
        img = color_jitter(&img, cfg.aug_jitter, &mut r);
    }
    if cfg.aug_blur > 0.0 {
        img = gaussian_blur(&img, cfg.aug_blur);
    }
    Ok((img, labels))
}

/// Backpropagate `d loss / d q` through `q = e / (‖e‖ + ε)` into the raw
/// embedding at each query site.
fn query_upstream(embeds: &[&Grid2D], pairs: &PairBatch, dq: &[Vec<Vec<f64>>], scale: f64) -> Vec<Grid2D> {
    let mut out: Vec<Grid2D> = embeds.iter().map(|e| Grid2D::zeros(e.height, e.width, e.channels)).collect();
    for (cp, grads) in pairs.classes.iter().zip(dq) {
        for (&(img, j), g) in cp.query_sites.iter().zip(grads) {
            let e = embeds[img].pixel(j);
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-300 {
                continue;
            }
            let d = n + NORM_EPS;
            let e_dot_g: f64 = e.iter().zip(g).map(|(a, b)| a * b).sum();
            let dst = out[img].pixel_mut(j);
            for ((o, &ev), &gv) in dst.iter_mut().zip(e).zip(g) {
                *o += scale * (gv / d - ev * e_dot_g / (d * d * n));
            }
        }
    }
    out
}

/// Evaluate the step objective and its student gradient without changing
/// any state. Randomness depends only on `(cfg.seed, step)`.
pub fn compute_objective(
    student: &ModelParams,
    teacher: &TeacherState,
    batch: &MiniBatch<'_>,
    cfg: &RunConfig,
    step: u64,
    terms: Terms,
) -> Result<Objective> {
    let uda = cfg.mode == Mode::Uda;
    if uda == batch.target.is_empty() || batch.source.is_empty() {
        return Err(Error::ConfigInvalid(format!(
            "batch with {} target images does not match {} mode",
            batch.target.len(),
            cfg.mode.as_str()
        )));
    }
    let classes = cfg.classes();
    let rng = Rng::new(cfg.seed).stream("step").fork(step);
    let lambda = cfg.loss.lambda_pull;
    let pull_on = lambda > 0.0;
    let self_train = uda && cfg.self_train;
    let ns = batch.source.len();
    let nt = batch.target.len();

    // (1) pseudo-target images
    let pseudo: Vec<Grid2D> = if pull_on {
        let tr = rng.stream("translate");
        batch
            .source
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut r = tr.fork(i as u64);
                let reference = if uda { Some(&batch.target[r.below(nt)].image) } else { None };
                cfg.engine.apply(&s.image, reference, &mut r)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    // (2) teacher on source and clean target
    let teacher_source: Vec<Grid2D> = if pull_on {
        batch
            .source
            .iter()
            .map(|s| Ok(forward_traced(&teacher.params, &s.image, Heads::PROJECTOR)?.proj.expect("projector").embed))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let teacher_target: Vec<Trace> = if uda && (self_train || pull_on) {
        let heads = Heads {
            segmentor: true,
            projector: pull_on,
        };
        batch
            .target
            .iter()
            .map(|s| forward_traced(&teacher.params, &s.image, heads))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    // (3) pseudo-labels at input resolution
    let pls: Vec<PseudoLabel> = teacher_target
        .iter()
        .map(|t| pseudo_label_from_probs(&t.seg.as_ref().expect("segmentor").probs, cfg.delta_p))
        .collect();
    let q_mean = if pls.is_empty() {
        0.0
    } else {
        pls.iter().map(|p| p.quality).sum::<f64>() / pls.len() as f64
    };

    // (4) mixed student inputs
    let mixed: Vec<(Grid2D, LabelMap)> = if self_train {
        (0..nt)
            .map(|k| student_input(k, batch, &pls[k], cfg, &rng))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    // (5) student forwards
    let src_traces: Vec<Trace> = batch
        .source
        .iter()
        .map(|s| forward_traced(student, &s.image, Heads::SEGMENTOR))
        .collect::<Result<_>>()?;
    let mix_traces: Vec<Trace> = mixed
        .iter()
        .map(|(img, _)| forward_traced(student, img, Heads::SEGMENTOR))
        .collect::<Result<_>>()?;
    let pt_traces: Vec<Trace> = pseudo
        .iter()
        .map(|img| forward_traced(student, img, Heads::PROJECTOR))
        .collect::<Result<_>>()?;
    let outputs = src_traces
        .iter()
        .chain(&mix_traces)
        .filter_map(|t| t.seg.as_ref().map(|s| &s.probs))
        .chain(pt_traces.iter().chain(&teacher_target).filter_map(|t| t.proj.as_ref().map(|p| &p.embed)));
    for g in outputs {
        if !g.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss(step));
        }
    }

    // (6) pairing
    let mut pairs = None;
    if pull_on {
        let stride = ModelArch::STRIDE;
        let src_low: Vec<LabelMap> = batch
            .source
            .iter()
            .map(|s| downsample_labels(&s.label, stride))
            .collect::<Result<_>>()?;
        let query_embeds: Vec<Grid2D> = pt_traces.iter().map(|t| t.proj.as_ref().expect("projector").embed.clone()).collect();
        let trg_embeds: Vec<Grid2D> = teacher_target
            .iter()
            .map(|t| t.proj.as_ref().expect("projector").embed.clone())
            .collect();
        let trg_labels: Vec<LabelMap> = pls
            .iter()
            .map(|p| downsample_labels(&p.labels, stride))
            .collect::<Result<_>>()?;
        let trg_conf: Vec<Grid2D> = pls.iter().map(|p| downsample_plane(&p.confidence, stride)).collect();
        let conf = uda.then(|| class_confidence_many(&pls, classes));
        let inputs = PairingInputs {
            query_embeds: &query_embeds,
            source_labels: &src_low,
            teacher_source: &teacher_source,
            target: uda.then_some(TargetView {
                embeds: &trg_embeds,
                labels: &trg_labels,
                confidence: &trg_conf,
            }),
            class_confidence: conf.as_ref(),
        };
        pairs = Some(build_pair_batch(&inputs, &cfg.pairing_config(), &cfg.loss, &rng.stream("pairs"))?);
    }

    // (7) losses and gradients
    let mut grads = Gradients::zeros_like(student);
    let mut l_source = 0.0;
    for (s, t) in batch.source.iter().zip(&src_traces) {
        let (l, mut g) = source_ce_grad(&t.seg.as_ref().expect("segmentor").probs, &s.label)?;
        l_source += l / ns as f64;
        if terms.source {
            g.data.iter_mut().for_each(|v| *v /= ns as f64);
            let up = Upstream {
                logits: Some(g),
                embed: None,
            };
            backward(student, t, &up, &mut grads)?;
        }
    }
    let mut l_target = 0.0;
    for (k, ((_, labels), t)) in mixed.iter().zip(&mix_traces).enumerate() {
        let q = pls[k].quality;
        let (l, mut g) = target_ce_grad(&t.seg.as_ref().expect("segmentor").probs, labels, q)?;
        l_target += l / nt as f64;
        if terms.target && q > 0.0 {
            g.data.iter_mut().for_each(|v| *v /= nt as f64);
            let up = Upstream {
                logits: Some(g),
                embed: None,
            };
            backward(student, t, &up, &mut grads)?;
        }
    }
    let mut l_pull = 0.0;
    let mut gamma = None;
    let mut weights = vec![0.0; classes];
    if let Some(pb) = &pairs {
        gamma = pb.gamma;
        for cp in &pb.classes {
            weights[cp.class] = cp.weight;
        }
        match pull_loss_grad(pb, &cfg.loss) {
            Ok((l, dq)) => {
                l_pull = l;
                if terms.pull {
                    let embeds: Vec<&Grid2D> = pt_traces.iter().map(|t| &t.proj.as_ref().expect("projector").embed).collect();
                    for (t, de) in pt_traces.iter().zip(query_upstream(&embeds, pb, &dq, lambda)) {
                        let up = Upstream {
                            logits: None,
                            embed: Some(de),
                        };
                        backward(student, t, &up, &mut grads)?;
                    }
                }
            }
            Err(Error::NoActiveClasses) => log::info!("step {step}: no active classes, pulling term skipped"),
            Err(e) => return Err(e),
        }
    }
    let weighted_pull = lambda * l_pull;
    let total = l_source + l_target + weighted_pull;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(step));
    }
    Ok(Objective {
        log: StepLog {
            step,
            l_source,
            l_target,
            l_pull,
            weighted_pull,
            total,
            q_mean,
            gamma,
            weights,
        },
        grads,
        pairs,
    })
}

/// One optimisation step: objective, AdamW, then the EMA update.
pub fn train_step(state: &mut TrainState, batch: &MiniBatch<'_>, cfg: &RunConfig) -> Result<Objective> {
    let obj = compute_objective(&state.student, &state.teacher, batch, cfg, state.step, Terms::ALL)?;
    if cfg.mode == Mode::Uda {
        state.target_images_seen += batch.target.len() as u64;
    }
    state.opt.step(&mut state.student, &obj.grads)?;
    state.teacher.ema_update(&state.student)?;
    state.step += 1;
    Ok(obj)
}

/// Batch for `step`; a pure function of `(cfg.seed, step)`.
pub fn draw_batch<'a>(corpus: &'a Corpus, cfg: &RunConfig, step: u64) -> MiniBatch<'a> {
    let root = Rng::new(cfg.seed).stream("batch");
    let source = BatchSampler::new(root.stream("source"), cfg.batch_source).draw(&corpus.source, step);
    let target = match cfg.mode {
        Mode::Uda => BatchSampler::new(root.stream("target"), cfg.batch_target).draw(&corpus.target, step),
        Mode::Dg => Vec::new(),
    };
    MiniBatch { source, target }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub miou: f64,
    pub iou: Vec<Option<f64>>,
}

/// Where `run` writes its artifacts. All optional.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Write the first executed step's pair batch to this CSV file.
    pub dump_pairs: Option<PathBuf>,
    /// Name used in `metrics.csv`.
    pub run_name: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: TrainState,
    pub logs: Vec<StepLog>,
    pub evals: Vec<EvalRecord>,
}

fn evaluate_state(state: &TrainState, corpus: &Corpus) -> Result<EvalRecord> {
    let r = miou(&evaluate(&state.student, &corpus.eval_target, &corpus.eval_truth)?)?;
    Ok(EvalRecord {
        step: state.step,
        miou: r.mean,
        iou: r.per_class,
    })
}

fn open_log(dir: &Path, classes: usize, append: bool) -> Result<BufWriter<File>> {
    let path = dir.join(LOSS_LOG_FILE);
    let exists = path.exists();
    let f = if append && exists {
        OpenOptions::new().append(true).open(&path)
    } else {
        File::create(&path)
    }
    .map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    if !(append && exists) {
        writeln!(w, "{}", StepLog::csv_header(classes)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(w)
}

fn save_state(dir: &Path, state: &TrainState, cfg: &RunConfig) -> Result<()> {
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &state.to_checkpoint(cfg))
}

/// Train until `cfg.iters` completed steps, starting from `resume` or a
/// fresh initialisation. Evaluates every `eval_every` steps and once at the
/// end; checkpoints every `ckpt_every` steps and at the end.
pub fn run(cfg: &RunConfig, corpus: &Corpus, resume: Option<TrainState>, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let mut state = resume.unwrap_or_else(|| TrainState::init(cfg));
    let resumed = state.step > 0;
    let mut log_file = None;
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(CONFIG_FILE);
        std::fs::write(&p, cfg.to_text()).map_err(|e| Error::io(&p, e))?;
        log_file = Some(open_log(dir, cfg.classes(), resumed)?);
    }
    let mut logs = Vec::new();
    let mut evals = Vec::new();
    while state.step < cfg.iters {
        let batch = draw_batch(corpus, cfg, state.step);
        let obj = train_step(&mut state, &batch, cfg)?;
        if let (Some(path), Some(pairs), true) = (&opts.dump_pairs, &obj.pairs, logs.is_empty()) {
            pairs.dump_csv(path)?;
        }
        if let (Some(w), Some(dir)) = (log_file.as_mut(), &opts.out_dir) {
            writeln!(w, "{}", obj.log.csv_line()).map_err(|e| Error::io(dir.join(LOSS_LOG_FILE), e))?;
        }
        if state.step.is_multiple_of(100) {
            log::info!(
                "step {} total {:.4} source {:.4} target {:.4} pull {:.4}",
                state.step,
                obj.log.total,
                obj.log.l_source,
                obj.log.l_target,
                obj.log.l_pull
            );
        }
        logs.push(obj.log);
        if cfg.eval_every > 0 && state.step.is_multiple_of(cfg.eval_every) && state.step < cfg.iters {
            evals.push(evaluate_state(&state, corpus)?);
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.ckpt_every > 0 && state.step.is_multiple_of(cfg.ckpt_every) && state.step < cfg.iters {
                if let Some(w) = log_file.as_mut() {
                    w.flush().map_err(|e| Error::io(dir.join(LOSS_LOG_FILE), e))?;
                }
                save_state(dir, &state, cfg)?;
            }
        }
    }
    evals.push(evaluate_state(&state, corpus)?);
    if let Some(dir) = &opts.out_dir {
        if let Some(mut w) = log_file {
            w.flush().map_err(|e| Error::io(dir.join(LOSS_LOG_FILE), e))?;
        }
        save_state(dir, &state, cfg)?;
        let name = if opts.run_name.is_empty() { "run" } else { &opts.run_name };
        let mut rows: Vec<MetricRow> = Vec::new();
        for e in &evals {
            rows.push(MetricRow::new(name, e.step, "miou", None, e.miou));
        }
        let d = diagnostics(
            &state.student,
            &corpus.eval_source,
            &corpus.eval_target,
            &corpus.eval_truth,
            FeatureKind::Projector,
        )?;
        rows.extend(d.rows(name, state.step).into_iter().filter(|r| r.metric != "miou"));
        emit_report(&rows, dir)?;
    }
    Ok(RunOutput { state, logs, evals })
}

/// Resume from `dir/checkpoint.bin` if present.
pub fn load_state(dir: &Path, cfg: &RunConfig) -> Result<Option<TrainState>> {
    let p = dir.join(CHECKPOINT_FILE);
    if !p.exists() {
        return Ok(None);
    }
    TrainState::from_checkpoint(load_checkpoint(&p)?, cfg).map(Some)
}
