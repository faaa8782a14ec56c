//! End-to-end acceptance suite. Each test prints one `[PASS]`/`[FAIL]`
//! line; the training-based checks share one set of runs.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use t2s_core::analysis::{diagnostics, Diagnostics, FeatureKind};
use t2s_core::config::{Mode, RunConfig};
use t2s_core::data::{Domain, DomainDataset, GroundTruth, SegSample};
use t2s_core::losses::{drw_weights, drw_weights_with, info_nce, mse_pull, ClassConfidence, DrwDivisor, PullKind};
use t2s_core::model::ModelParams;
use t2s_core::numerics::{dft2, percentile, Grid2D, LabelMap, Rng, IGNORE};
use t2s_core::pairing::{label_distribution, query_counts, sample_negatives, KeyDomain, NegativeKey, NegativePools};
use t2s_core::trainer::{
    compute_objective, draw_batch, run, synthetic_corpus, train_step, Corpus, RunOptions, StepLog, Terms, TrainState,
};
use t2s_core::translate::{fda_band, fda_translate, fda_translate_unclamped, EngineKind};

fn report(name: &str, pass: bool, detail: String) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn random_image(h: usize, w: usize, rng: &mut Rng) -> Grid2D {
    Grid2D::from_vec(h, w, 3, (0..h * w * 3).map(|_| rng.uniform()).collect()).unwrap()
}

/// Exactly normalised, unlike `l2_normalize`, which adds a guard to the norm.
fn unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

// ---------------------------------------------------------------------------
// gradient oracle

fn micro_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.arch.classes = 3;
    cfg.arch.enc1 = 4;
    cfg.arch.enc2 = 4;
    cfg.arch.feat_dim = 4;
    cfg.arch.proj_hidden = 4;
    cfg.arch.embed_dim = 4;
    cfg.height = 16;
    cfg.width = 16;
    cfg.n_source = 4;
    cfg.n_target = 4;
    cfg.n_eval = 2;
    cfg.n_queries = 6;
    cfg.m_negatives = 8;
    cfg.loss.lambda_pull = 1.0;
    cfg.delta_p = 0.34;
    cfg.optim.warmup = 0;
    cfg.eta = 0.9;
    cfg
}

/// Noise images over blocky labels. Flat colour regions put whole patches
/// of pre-activations on one ReLU kink, which a 1e-4 step can cross.
fn micro_corpus(cfg: &RunConfig) -> Corpus {
    let mut rng = Rng::new(77);
    let (h, w, c) = (cfg.height, cfg.width, cfg.classes());
    let mut sample = |labeled: bool| {
        let blocks: Vec<u8> = (0..16).map(|_| rng.below(c) as u8).collect();
        let label = LabelMap {
            height: h,
            width: w,
            data: (0..h * w)
                .map(|j| if labeled { blocks[(j / w) / (h / 4) * 4 + (j % w) / (w / 4)] } else { IGNORE })
                .collect(),
        };
        SegSample {
            image: random_image(h, w, &mut rng),
            label,
        }
    };
    let source: Vec<SegSample> = (0..cfg.n_source).map(|_| sample(true)).collect();
    let target: Vec<SegSample> = (0..cfg.n_target).map(|_| sample(false)).collect();
    let eval: Vec<SegSample> = (0..cfg.n_eval).map(|_| sample(true)).collect();
    let eval_target = DomainDataset::new(eval.clone(), Domain::Target, c).unwrap();
    Corpus {
        source: DomainDataset::new(source, Domain::Source, c).unwrap(),
        target: DomainDataset::new(target, Domain::Target, c).unwrap(),
        eval_source: DomainDataset::new(eval, Domain::Source, c).unwrap(),
        eval_truth: GroundTruth::new(eval_target.samples.iter().map(|s| s.label.clone()).collect()),
        eval_target: eval_target.unlabeled(),
    }
}

struct GradCheck {
    max_rel: f64,
    params: usize,
}

fn grad_check(cfg: &RunConfig, corpus: &Corpus, state: &TrainState, terms: Terms, pick: fn(&StepLog) -> f64) -> GradCheck {
    const EPS: f64 = 1e-4;
    // below this magnitude both gradients count as zero
    const FLOOR: f64 = 1e-6;
    let batch = draw_batch(corpus, cfg, state.step);
    let objective = |p: &ModelParams| {
        pick(&compute_objective(p, &state.teacher, &batch, cfg, state.step, terms).unwrap().log)
    };
    let analytic = compute_objective(&state.student, &state.teacher, &batch, cfg, state.step, terms)
        .unwrap()
        .grads;
    let mut p = state.student.clone();
    let mut max_rel: f64 = 0.0;
    for i in 0..p.data.len() {
        let orig = p.data[i];
        p.data[i] = orig + EPS;
        let up = objective(&p);
        p.data[i] = orig - EPS;
        let down = objective(&p);
        p.data[i] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let a = analytic.data[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        max_rel = max_rel.max(rel);
    }
    GradCheck {
        max_rel,
        params: p.data.len(),
    }
}

#[test]
fn gradient_oracle() {
    let start = Instant::now();
    let base = micro_config();
    let corpus = micro_corpus(&base);
    // move away from the symmetric initialisation first
    let mut state = TrainState::init(&base);
    for _ in 0..3 {
        let batch = draw_batch(&corpus, &base, state.step);
        train_step(&mut state, &batch, &base).unwrap();
    }
    let only = |source, target, pull| Terms { source, target, pull };
    let mut mse = base.clone();
    mse.loss.pull_kind = PullKind::Mse;
    let checks = [
        ("source", &base, only(true, false, false), (|l| l.l_source) as fn(&StepLog) -> f64),
        ("target", &base, only(false, true, false), |l| l.l_target),
        ("infonce", &base, only(false, false, true), |l| l.weighted_pull),
        ("mse", &mse, only(false, false, true), |l| l.weighted_pull),
        ("total", &base, Terms::ALL, |l| l.total),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, cfg, terms, pick) in checks {
        let batch = draw_batch(&corpus, cfg, state.step);
        let log = compute_objective(&state.student, &state.teacher, &batch, cfg, state.step, terms).unwrap().log;
        assert!(pick(&log) > 0.0, "{name} term is zero; the check would be vacuous");
        let g = grad_check(cfg, &corpus, &state, terms, pick);
        worst = worst.max(g.max_rel);
        parts.push(format!("{name} {:.1e} over {} params", g.max_rel, g.params));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "gradient oracle",
        worst < 1e-4 && secs < 60.0,
        format!("max rel err {worst:.2e} (< 1e-4), {secs:.1}s (< 60s); {}", parts.join(", ")),
    );
}

// ---------------------------------------------------------------------------
// loss oracles

#[test]
fn loss_oracles() {
    let mut rng = Rng::new(11);
    let tau = 0.2;
    let mut worst_nce: f64 = 0.0;
    let mut worst_mse: f64 = 0.0;
    for _ in 0..200 {
        let d = 2 + rng.below(31);
        let m = 1 + rng.below(64);
        let q = unit(d, &mut rng);
        let kp = unit(d, &mut rng);
        let negs: Vec<Vec<f64>> = (0..m).map(|_| unit(d, &mut rng)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let pos = (dot(&q, &kp) / tau).exp();
        let neg: f64 = negs.iter().map(|k| (dot(&q, k) / tau).exp()).sum();
        let direct = -(pos / (pos + neg)).ln();
        worst_nce = worst_nce.max((info_nce(&q, &kp, &negs, tau) - direct).abs());
        worst_mse = worst_mse.max((mse_pull(&q, &kp) - (2.0 - 2.0 * dot(&q, &kp))).abs());
    }
    report(
        "loss oracles",
        worst_nce < 1e-10 && worst_mse < 1e-12,
        format!("infonce max err {worst_nce:.1e} (< 1e-10), mse max err {worst_mse:.1e} (< 1e-12)"),
    );
}

// ---------------------------------------------------------------------------
// percentile threshold

fn sorted_percentile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

#[test]
fn percentile_threshold_contract() {
    let mut rng = Rng::new(21);
    let mut violations = 0;
    let mut mismatches = 0;
    let mut cases = 0;
    for _ in 0..1000 {
        let n = 1 + rng.below(300);
        // quantised values force ties
        let coarse = rng.bernoulli(0.3);
        let conf: Vec<f64> = (0..n)
            .map(|_| {
                let v = rng.uniform();
                if coarse {
                    (v * 8.0).floor() / 8.0
                } else {
                    v
                }
            })
            .collect();
        for alpha in [0.0, 0.1, 0.5, 0.9, 1.0] {
            cases += 1;
            let gamma = percentile(&conf, 100.0 * alpha).unwrap();
            let below = conf.iter().filter(|&&v| v < gamma).count();
            if below > (alpha * n as f64).ceil() as usize {
                violations += 1;
            }
            let oracle = sorted_percentile(&conf, 100.0 * alpha);
            let oracle_below = conf.iter().filter(|&&v| v < oracle).count();
            if oracle_below != below {
                mismatches += 1;
            }
        }
    }
    report(
        "percentile threshold contract",
        violations == 0 && mismatches == 0,
        format!("{cases} cases, {violations} bound violations, {mismatches} oracle mismatches"),
    );
}

// ---------------------------------------------------------------------------
// sampling

fn random_pools(rng: &mut Rng, classes: usize) -> NegativePools {
    let make = |domain, n: usize, rng: &mut Rng| -> Vec<NegativeKey> {
        (0..n)
            .map(|_| NegativeKey {
                vector: unit(4, rng),
                domain,
                label: rng.below(classes) as u8,
                confidence: rng.uniform(),
            })
            .collect()
    };
    let ns = 1 + rng.below(40);
    let nt = 1 + rng.below(40);
    let source_keys = make(KeyDomain::Source, ns, rng);
    let target_keys = make(KeyDomain::Target, nt, rng);
    let by_class = |keys: &[NegativeKey]| -> Vec<Vec<usize>> {
        (0..classes)
            .map(|c| (0..keys.len()).filter(|&i| keys[i].label as usize != c).collect())
            .collect()
    };
    NegativePools {
        source_by_class: by_class(&source_keys),
        target_by_class: by_class(&target_keys),
        source_keys,
        target_keys,
        gamma: Some(0.5),
    }
}

#[test]
fn sampling_contracts() {
    let mut rng = Rng::new(31);
    let mut denps_checked = 0;
    let mut denps_bad = 0;
    let mut repro_bad = 0;
    for trial in 0..200u64 {
        let classes = 2 + rng.below(5);
        let pools = random_pools(&mut rng, classes);
        let m = 2 * (1 + rng.below(64));
        for c in 0..classes {
            if pools.source_by_class[c].is_empty() || pools.target_by_class[c].is_empty() {
                continue;
            }
            denps_checked += 1;
            let draw = |seed| sample_negatives(&pools, c, m, &mut Rng::new(seed).fork(c as u64)).unwrap();
            let keys = draw(trial);
            let src = keys.iter().filter(|k| k.domain == KeyDomain::Source).count();
            let trg = keys.iter().filter(|k| k.domain == KeyDomain::Target).count();
            if src != m / 2 || trg != m / 2 || keys.iter().any(|k| k.label as usize == c) {
                denps_bad += 1;
            }
            let again = draw(trial);
            if keys.iter().zip(&again).any(|(a, b)| a.vector != b.vector || a.domain != b.domain) {
                repro_bad += 1;
            }
        }
    }

    let mut cbqs_bad = 0;
    for _ in 0..100 {
        let classes = 2 + rng.below(7);
        let n = 1 + rng.below(200);
        let (h, w) = (1 + rng.below(16), 1 + rng.below(16));
        let weights: Vec<f64> = (0..classes).map(|_| rng.uniform().powi(3)).collect();
        let total_w: f64 = weights.iter().sum();
        let labels: Vec<LabelMap> = (0..2)
            .map(|_| LabelMap {
                height: h,
                width: w,
                data: (0..h * w)
                    .map(|_| {
                        let mut u = rng.uniform() * total_w;
                        let mut c = 0;
                        while c + 1 < classes && u >= weights[c] {
                            u -= weights[c];
                            c += 1;
                        }
                        c as u8
                    })
                    .collect(),
            })
            .collect();
        let dist = label_distribution(&labels, classes).unwrap();
        let counts = query_counts(&dist, n, classes);
        let total = 2 * h * w;
        for c in 0..classes {
            let k = labels.iter().flat_map(|l| &l.data).filter(|&&v| v as usize == c).count();
            // exact ceil(C·k/total·n) in integers
            let oracle = (classes * k * n).div_ceil(total);
            if counts[c] != oracle {
                cbqs_bad += 1;
            }
        }
        if query_counts(&dist, n, classes) != counts {
            repro_bad += 1;
        }
    }
    report(
        "sampling contracts",
        denps_bad == 0 && cbqs_bad == 0 && repro_bad == 0 && denps_checked > 100,
        format!(
            "DENPS {denps_checked} draws, {denps_bad} off-split; CBQS 100 distributions, {cbqs_bad} count errors; {repro_bad} reproducibility failures"
        ),
    );
}

// ---------------------------------------------------------------------------
// re-weighting

#[test]
fn reweighting_contracts() {
    let mut rng = Rng::new(41);
    let mut sum_err: f64 = 0.0;
    let mut argmax_bad = 0;
    let mut uniform_err: f64 = 0.0;
    let mut divisor_err: f64 = 0.0;
    for _ in 0..100 {
        let classes = 2 + rng.below(18);
        let conf = ClassConfidence {
            per_class: (0..classes).map(|_| Some(rng.uniform_in(0.05, 0.99))).collect(),
        };
        let active: Vec<usize> = (0..classes).filter(|_| rng.bernoulli(0.8)).collect();
        if active.is_empty() {
            continue;
        }
        let w = drw_weights(&conf, 0.5, &active);
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
        let arg_w = (0..classes).max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap()).unwrap();
        let least = *active
            .iter()
            .min_by(|&&a, &&b| conf.per_class[a].partial_cmp(&conf.per_class[b]).unwrap())
            .unwrap();
        if arg_w != least {
            argmax_bad += 1;
        }
        let flat = drw_weights(&conf, 0.0, &active);
        for &c in &active {
            uniform_err = uniform_err.max((flat[c] - 1.0 / active.len() as f64).abs());
        }
        let a = drw_weights_with(&conf, 0.5, &active, DrwDivisor::Max);
        let b = drw_weights_with(&conf, 0.5, &active, DrwDivisor::Min);
        divisor_err = divisor_err.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    report(
        "re-weighting contracts",
        sum_err <= 1e-12 && argmax_bad == 0 && uniform_err <= 1e-12 && divisor_err < 1e-12,
        format!(
            "sum err {sum_err:.1e}, argmax misses {argmax_bad}, beta=0 err {uniform_err:.1e}, divisor diff {divisor_err:.1e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Fourier translation

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

#[test]
fn fourier_translation_contract() {
    let mut rng = Rng::new(51);
    let (h, w) = (32, 32);
    let mut phase_err: f64 = 0.0;
    let mut amp_err: f64 = 0.0;
    let mut identity_err: f64 = 0.0;
    let mut band_sizes = Vec::new();
    for _ in 0..20 {
        let src = random_image(h, w, &mut rng);
        let trg = random_image(h, w, &mut rng);
        let beta = rng.uniform_in(0.01, 0.2);
        let band = fda_band(h, w, beta);
        band_sizes.push(band.iter().filter(|&&b| b).count());
        let out = fda_translate_unclamped(&src, &trg, beta).unwrap();
        for ch in 0..3 {
            let fs = dft2(&src.channel(ch));
            let ft = dft2(&trg.channel(ch));
            let fo = dft2(&out.channel(ch));
            for i in 0..h * w {
                phase_err = phase_err.max(angle_diff(fo.phase(i), fs.phase(i)));
                if band[i] {
                    amp_err = amp_err.max((fo.amplitude(i) - ft.amplitude(i)).abs() / ft.amplitude(i));
                }
            }
        }
        identity_err = identity_err.max(fda_translate(&src, &trg, 0.0).unwrap().max_abs_diff(&src));
    }
    report(
        "fourier translation contract",
        phase_err < 1e-9 && amp_err < 1e-9 && identity_err < 1e-9,
        format!(
            "phase err {phase_err:.1e} rad, in-band amplitude rel err {amp_err:.1e}, beta=0 max diff {identity_err:.1e}, band sizes {}..{}",
            band_sizes.iter().min().unwrap(),
            band_sizes.iter().max().unwrap()
        ),
    );
}

// ---------------------------------------------------------------------------
// training runs shared by the directional checks

struct RunResult {
    miou: f64,
    diag: Diagnostics,
    elapsed: Duration,
}

struct Runs {
    source_only: Vec<RunResult>,
    baseline: Vec<RunResult>,
    full: Vec<RunResult>,
    dg: Vec<RunResult>,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn train(cfg: &RunConfig, corpus: &Corpus) -> RunResult {
    let start = Instant::now();
    let out = run(cfg, corpus, None, &RunOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let diag = diagnostics(
        &out.state.student,
        &corpus.eval_source,
        &corpus.eval_target,
        &corpus.eval_truth,
        FeatureKind::Projector,
    )
    .unwrap();
    RunResult {
        miou: out.evals.last().unwrap().miou,
        diag,
        elapsed,
    }
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let base = RunConfig::default();
        let corpus = synthetic_corpus(&base).unwrap();
        let variant = |f: &dyn Fn(&mut RunConfig)| -> Vec<RunResult> {
            SEEDS
                .iter()
                .map(|&seed| {
                    let mut cfg = base.clone();
                    cfg.seed = seed;
                    cfg.eval_every = cfg.iters + 1;
                    f(&mut cfg);
                    train(&cfg, &corpus)
                })
                .collect()
        };
        let source_only = variant(&|c| *c = c.clone().source_only());
        let baseline = variant(&|c| c.loss.lambda_pull = 0.0);
        let full = variant(&|_| {});
        let dg = variant(&|c| {
            c.mode = Mode::Dg;
            c.engine.kind = EngineKind::ColorJitter;
        });
        Runs {
            source_only,
            baseline,
            full,
            dg,
        }
    })
}

fn median_run(runs: &[RunResult]) -> &RunResult {
    let mut idx: Vec<usize> = (0..runs.len()).collect();
    idx.sort_by(|&a, &b| runs[a].miou.partial_cmp(&runs[b].miou).unwrap());
    &runs[idx[runs.len() / 2]]
}

fn mious(runs: &[RunResult]) -> String {
    runs.iter().map(|r| format!("{:.1}", 100.0 * r.miou)).collect::<Vec<_>>().join("/")
}

fn count_better(a: &[Option<f64>], b: &[Option<f64>], lower: bool) -> usize {
    a.iter()
        .zip(b)
        .filter(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => {
                if lower {
                    x < y
                } else {
                    x > y
                }
            }
            _ => false,
        })
        .count()
}

#[test]
fn adaptation_ordering() {
    let r = runs();
    let so = 100.0 * median_run(&r.source_only).miou;
    let base = 100.0 * median_run(&r.baseline).miou;
    let full = 100.0 * median_run(&r.full).miou;
    let slowest = [&r.source_only, &r.baseline, &r.full]
        .iter()
        .flat_map(|v| v.iter())
        .map(|x| x.elapsed.as_secs_f64())
        .fold(0.0, f64::max);
    report(
        "adaptation ordering",
        so < base && base < full && full >= so + 5.0 && full >= base + 1.0 && slowest < 1200.0,
        format!(
            "median target mIoU source-only {so:.1} [{}] < baseline {base:.1} [{}] < full {full:.1} [{}]; need full >= so+5 and >= baseline+1; slowest run {slowest:.0}s",
            mious(&r.source_only),
            mious(&r.baseline),
            mious(&r.full)
        ),
    );
}

#[test]
fn discriminativeness_direction() {
    let r = runs();
    let so = &median_run(&r.source_only).diag;
    let full = &median_run(&r.full).diag;
    let ccd = count_better(&full.ccd, &so.ccd, true);
    let pdd = count_better(&full.pdd, &so.pdd, true);
    report(
        "discriminativeness direction",
        ccd >= 3 && pdd >= 3,
        format!(
            "classes with lower CCD {ccd}/4, lower PDD {pdd}/4 (need >= 3 each); CCD full {:?} vs source-only {:?}; PDD full {:?} vs source-only {:?}",
            fmt(&full.ccd),
            fmt(&so.ccd),
            fmt(&full.pdd),
            fmt(&so.pdd)
        ),
    );
}

fn fmt(v: &[Option<f64>]) -> Vec<String> {
    v.iter().map(|x| x.map(|y| format!("{y:.3}")).unwrap_or("-".into())).collect()
}

#[test]
fn similarity_direction() {
    let r = runs();
    let so = &median_run(&r.source_only).diag;
    let full = &median_run(&r.full).diag;
    let n = count_better(&full.similarity, &so.similarity, false);
    report(
        "similarity direction",
        n >= 3,
        format!(
            "classes with higher cross-domain similarity {n}/4 (need >= 3); full {:?} vs source-only {:?}",
            fmt(&full.similarity),
            fmt(&so.similarity)
        ),
    );
}

#[test]
fn generalization_mode() {
    let r = runs();
    let so = 100.0 * median_run(&r.source_only).miou;
    let dg = 100.0 * median_run(&r.dg).miou;
    report(
        "generalization mode",
        dg >= so + 2.0,
        format!(
            "median unseen-target mIoU with pulling {dg:.1} [{}] vs source-only {so:.1} [{}] (need +2.0)",
            mious(&r.dg),
            mious(&r.source_only)
        ),
    );
}

// ---------------------------------------------------------------------------
// determinism and resume

#[test]
fn determinism_and_resume() {
    let mut cfg = RunConfig::default();
    cfg.iters = 24;
    cfg.eval_every = 0;
    cfg.n_source = 16;
    cfg.n_target = 16;
    cfg.n_eval = 4;
    cfg.optim.warmup = 4;
    let corpus = synthetic_corpus(&cfg).unwrap();
    let lines = |logs: &[StepLog]| logs.iter().map(|l| l.csv_line()).collect::<Vec<_>>();

    let a = run(&cfg, &corpus, None, &RunOptions::default()).unwrap();
    let b = run(&cfg, &corpus, None, &RunOptions::default()).unwrap();
    let same_logs = lines(&a.logs) == lines(&b.logs) && a.state == b.state;

    let dir = tempfile::tempdir().unwrap();
    let mut first = cfg.clone();
    first.iters = 10;
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    };
    let head = run(&first, &corpus, None, &opts).unwrap();
    let resumed_state = t2s_core::trainer::load_state(dir.path(), &cfg).unwrap().unwrap();
    let tail = run(&cfg, &corpus, Some(resumed_state), &opts).unwrap();
    let mut stitched = lines(&head.logs);
    stitched.extend(lines(&tail.logs));
    let resume_ok = stitched == lines(&a.logs)
        && tail.state.student == a.state.student
        && tail.state.teacher == a.state.teacher
        && tail.state.opt == a.state.opt;
    let on_disk = std::fs::read_to_string(dir.path().join("loss_log.csv")).unwrap();
    let disk_ok = on_disk.lines().skip(1).map(String::from).collect::<Vec<_>>() == lines(&a.logs);

    report(
        "determinism and resume",
        same_logs && resume_ok && disk_ok,
        format!(
            "repeat run bit-identical: {same_logs}; resume at step 10 matches uninterrupted {} steps: {resume_ok}; appended log file matches: {disk_ok}",
            cfg.iters
        ),
    );
}
