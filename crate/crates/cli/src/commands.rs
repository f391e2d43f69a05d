//! One function per subcommand. Every stage reads and writes inside the
//! run's output directory and leaves a copy of the resolved config there.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde_json::{json, Value};

use batstyler::array::ArrayFile;
use batstyler::classifier::{synth_training_set, train_linear, LinearHead};
use batstyler::config::RunConfig;
use batstyler::encoder::{BackendId, MockEncoder, TextEncoder};
use batstyler::etf::{build_etf as make_etf, verify_etf, EtfTemplate};
use batstyler::metrics::{
    evaluate as run_evaluate, metric_sc, metric_sd, timing_compare, DatasetManifest, MetricsReport,
};
use batstyler::semantics::llm::{HttpLlmClient, LlmClient, ReplayClient};
use batstyler::semantics::{
    build_css, CachedExtractor, CategorySet, CoarseExtractor, CoarseSemanticSet, CsgConfig,
    ExtractorKind, LlmExtractor, StubExtractor,
};
use batstyler::styles::{
    style_features, train_styles as run_train, BaselineLossConfig, EpochRecord, PseudoStyleSet,
    StyleInputs, StyleTrainOutcome, TrainMode,
};
use batstyler::synthetic::synthetic_categories;

use crate::exit::CliError;

pub const CONFIG_FILE: &str = "run_config.json";
pub const CSS_FILE: &str = "css.json";
pub const ETF_FILE: &str = "etf.bin";
pub const ETF_REPORT_FILE: &str = "etf_report.json";
pub const STYLES_FILE: &str = "styles.bin";
pub const STYLES_HISTORY_FILE: &str = "styles_history.csv";
pub const STYLES_REPORT_FILE: &str = "styles_report.json";
pub const HEAD_FILE: &str = "head.bin";
pub const HEAD_HISTORY_FILE: &str = "head_history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const DIVERSITY_FILE: &str = "diversity.json";
pub const BASELINES_FILE: &str = "baselines.json";
pub const TIMING_FILE: &str = "timing.json";

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn load(path: Option<&Path>, out: Option<PathBuf>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => RunConfig::load(p).context("loading config")?,
            None => RunConfig::default(),
        };
        let mut config = base.with_overrides(overrides)?;
        if let Some(out) = out {
            config.output_dir = out;
        }
        let config = config.resolve()?;
        if config.encoder.backend != BackendId::Mock {
            return Err(CliError::Config(
                "the CLI drives the mock backend only; external encoders are used through the library"
                    .into(),
            )
            .into());
        }
        let out = config.output_dir.clone();
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn encoder(&self) -> Result<MockEncoder> {
        Ok(self.config.encoder.build_mock()?)
    }

    fn categories(&self) -> Result<CategorySet> {
        self.config.categories.load().context("loading categories")
    }

    /// Creates the output directory and records the config in it.
    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        self.config.save(&self.path(CONFIG_FILE))?;
        Ok(())
    }

    fn require(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingInput(format!(
                "{} (run `{stage}` first)",
                p.display()
            ))
            .into())
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn extractor(ctx: &Context, csg: &CsgConfig) -> Result<CachedExtractor<Box<dyn CoarseExtractor>>> {
    let inner: Box<dyn CoarseExtractor> = match csg.extractor {
        ExtractorKind::Stub => Box::new(StubExtractor),
        ExtractorKind::Llm => {
            let client: Box<dyn LlmClient> = match &ctx.config.llm_fixture {
                Some(path) => Box::new(ReplayClient::load(path)?),
                None => Box::new(HttpLlmClient::from_env(ctx.config.llm.clone())?),
            };
            Box::new(LlmExtractor::new(client, ctx.config.llm.model.clone()))
        }
    };
    Ok(CachedExtractor::new(inner, csg.cache_path.as_deref())?)
}

pub fn extract_semantics(ctx: &Context) -> Result<()> {
    let stage = || "extract-semantics";
    ctx.prepare()?;
    let encoder = ctx.encoder()?;
    let categories = ctx.categories().with_context(stage)?;
    let ext = extractor(ctx, &ctx.config.csg).with_context(stage)?;
    let css = build_css(&categories, &encoder, &ctx.config.csg, &ext).with_context(stage)?;
    let path = ctx.path(CSS_FILE);
    write_json(&path, &css)?;
    println!(
        "{} leaf clusters, {} coarse terms (k={}, splits={}) -> {}",
        css.clusters.len(),
        css.len(),
        css.provenance.chosen_k,
        css.provenance.splits,
        path.display()
    );
    Ok(())
}

fn etf_meta(t: &EtfTemplate) -> Value {
    json!({"kind": "etf", "k": t.k(), "p": t.p(), "seed": t.seed()})
}

pub fn build_etf(ctx: &Context, tolerance: f64) -> Result<()> {
    ctx.prepare()?;
    let k = ctx.config.styles.k;
    let p = ctx.config.encoder.joint_dim;
    let etf = make_etf(k, p, ctx.config.seed).context("build-etf")?;
    let report = verify_etf(&etf, tolerance);
    ArrayFile::from_matrix(etf.matrix(), Some(etf_meta(&etf))).save(&ctx.path(ETF_FILE))?;
    write_json(&ctx.path(ETF_REPORT_FILE), &report)?;
    println!(
        "ETF k={k} p={p}: norm dev {:.2e}, off-diagonal dev {:.2e}, column sum {:.2e} -> {}",
        report.max_norm_deviation,
        report.max_offdiag_deviation,
        report.column_sum_norm,
        if report.passes { "pass" } else { "FAIL" }
    );
    if !report.passes {
        anyhow::bail!("build-etf: template failed verification at tolerance {tolerance}");
    }
    Ok(())
}

fn load_etf(ctx: &Context) -> Result<EtfTemplate> {
    let path = ctx.require(ETF_FILE, "build-etf")?;
    let arr = ArrayFile::load(&path)?;
    let seed = arr
        .meta
        .as_ref()
        .and_then(|m| m.get("seed"))
        .and_then(Value::as_u64)
        .unwrap_or_default();
    EtfTemplate::from_columns(arr.to_matrix()?, seed)
        .with_context(|| format!("reading {}", path.display()))
}

fn history_csv(mode: TrainMode, history: &[EpochRecord]) -> String {
    let (a, b) = match mode {
        TrainMode::Batstyler => ("l_ce", "l_sc"),
        _ => ("l_style", "l_content"),
    };
    let row = if mode == TrainMode::BaselineSequential {
        "style"
    } else {
        "epoch"
    };
    let mut out = format!("{row},{a},{b},total,lr,wall_clock_s\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.10},{:.10},{:.10},{:.10},{:.6}",
            r.epoch, r.diversity, r.consistency, r.total, r.lr, r.wall_clock_s
        );
    }
    out
}

fn train_once<T: TextEncoder + ?Sized>(
    mode: TrainMode,
    ctx: &Context,
    encoder: &T,
    categories: &CategorySet,
    css: Option<&CoarseSemanticSet>,
    etf: Option<&EtfTemplate>,
    seed: u64,
    baseline: &BaselineLossConfig,
) -> Result<StyleTrainOutcome> {
    let mut cfg = ctx.config.styles.clone();
    cfg.seed = seed;
    let inputs = StyleInputs {
        encoder,
        template: etf,
        css: css.map(CoarseSemanticSet::terms),
        categories: Some(categories),
    };
    Ok(run_train(mode, &cfg, baseline, inputs)?)
}

pub fn train_styles(ctx: &Context, mode: TrainMode) -> Result<()> {
    let stage = || format!("train-styles --mode {}", mode.as_str());
    ctx.prepare()?;
    let encoder = ctx.encoder()?;
    let categories = ctx.categories().with_context(stage)?;
    let (css, etf) = if mode == TrainMode::Batstyler {
        let css: CoarseSemanticSet =
            read_json(&ctx.require(CSS_FILE, "extract-semantics")?).with_context(stage)?;
        (Some(css), Some(load_etf(ctx).with_context(stage)?))
    } else {
        (None, None)
    };
    let checksum = encoder.parameter_checksum();
    let outcome = train_once(
        mode,
        ctx,
        &encoder,
        &categories,
        css.as_ref(),
        etf.as_ref(),
        ctx.config.seed,
        &ctx.config.baseline,
    )
    .with_context(stage)?;
    anyhow::ensure!(
        checksum == encoder.parameter_checksum(),
        "{}: encoder parameters changed during training",
        stage()
    );
    let meta = json!({
        "kind": "pseudo-styles",
        "mode": mode,
        "init_seed": outcome.styles.init_seed,
        "trained_epochs": outcome.styles.trained_epochs,
        "encoder": encoder.fingerprint(),
        "styles": ctx.config.styles,
        "baseline": ctx.config.baseline,
    });
    ArrayFile::from_matrix(&outcome.styles.theta, Some(meta)).save(&ctx.path(STYLES_FILE))?;
    fs::write(ctx.path(STYLES_HISTORY_FILE), history_csv(mode, &outcome.history))?;
    let feats = style_features(&outcome.styles, &encoder)?;
    let sd = metric_sd(&feats)?;
    write_json(
        &ctx.path(STYLES_REPORT_FILE),
        &json!({
            "mode": mode,
            "steps": outcome.steps,
            "wall_clock_s": outcome.wall_clock_s,
            "sd": sd,
        }),
    )?;
    let last = outcome.history.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!(
        "{}: {} styles, {} steps, final total {last:.6}, SD {sd:.4}, {:.2}s",
        mode.as_str(),
        outcome.styles.k(),
        outcome.steps,
        outcome.wall_clock_s
    );
    Ok(())
}

fn load_styles(ctx: &Context) -> Result<(PseudoStyleSet, Value)> {
    let path = ctx.require(STYLES_FILE, "train-styles")?;
    let arr = ArrayFile::load(&path)?;
    let meta = arr.meta.clone().unwrap_or(Value::Null);
    let init_seed = meta.get("init_seed").and_then(Value::as_u64).unwrap_or_default();
    let mut styles = PseudoStyleSet::from_matrix(arr.to_matrix()?, init_seed);
    styles.trained_epochs = meta
        .get("trained_epochs")
        .and_then(Value::as_u64)
        .unwrap_or_default() as usize;
    styles.mode = meta.get("mode").and_then(|m| serde_json::from_value(m.clone()).ok());
    anyhow::ensure!(
        styles.is_finite(),
        "{}: pseudo-styles contain non-finite values",
        path.display()
    );
    Ok((styles, meta))
}

pub fn train_classifier(ctx: &Context) -> Result<()> {
    let stage = || "train-classifier";
    ctx.prepare()?;
    let encoder = ctx.encoder()?;
    let categories = ctx.categories().with_context(stage)?;
    let (styles, _) = load_styles(ctx).with_context(stage)?;
    let set = synth_training_set(&styles, &categories, &encoder).with_context(stage)?;
    let outcome = train_linear(&ctx.config.classifier, &set).with_context(stage)?;
    let meta = json!({
        "kind": "linear-head",
        "classes": outcome.head.classes,
        "classifier": ctx.config.classifier,
    });
    ArrayFile::from_matrix(&outcome.head.weights, Some(meta)).save(&ctx.path(HEAD_FILE))?;
    let mut csv = String::from("epoch,loss,train_accuracy,lr\n");
    for r in &outcome.history {
        let _ = writeln!(csv, "{},{:.10},{:.6},{:.10}", r.epoch, r.loss, r.accuracy, r.lr);
    }
    fs::write(ctx.path(HEAD_HISTORY_FILE), csv)?;
    let acc = outcome.history.last().map(|r| r.accuracy).unwrap_or_default();
    println!(
        "head over {} classes from {} features, training top-1 {acc:.4}",
        categories.len(),
        set.len()
    );
    Ok(())
}

fn load_head(ctx: &Context) -> Result<LinearHead> {
    let path = ctx.require(HEAD_FILE, "train-classifier")?;
    let arr = ArrayFile::load(&path)?;
    let classes: Vec<String> = arr
        .meta
        .as_ref()
        .and_then(|m| m.get("classes"))
        .and_then(|c| serde_json::from_value(c.clone()).ok())
        .with_context(|| format!("{}: missing class names", path.display()))?;
    Ok(LinearHead {
        weights: arr.to_matrix()?,
        classes,
    })
}

pub fn evaluate(
    ctx: &Context,
    manifest: Option<&Path>,
    mock_sigma: &[f64],
    per_class: usize,
) -> Result<()> {
    let stage = || "evaluate";
    ctx.prepare()?;
    let encoder = ctx.encoder()?;
    let head = load_head(ctx).with_context(stage)?;
    let manifest = match manifest {
        Some(p) if p.is_dir() => DatasetManifest::from_directory(p)?,
        Some(p) => DatasetManifest::load_json(p)?,
        None => {
            let sigmas = if mock_sigma.is_empty() { &[0.0][..] } else { mock_sigma };
            let names: Vec<String> = sigmas.iter().map(|s| format!("mock-sigma-{s}")).collect();
            let domains: Vec<(&str, f64)> =
                names.iter().map(String::as_str).zip(sigmas.iter().copied()).collect();
            DatasetManifest::mock(&head.classes, &domains, per_class, ctx.config.seed)
        }
    };
    let images = encoder.image_encoder(head.classes.iter().cloned());
    let accuracy = run_evaluate(&manifest.records, &head, &images).with_context(stage)?;

    let mut report = MetricsReport {
        config_fingerprint: ctx.config.fingerprint(),
        ..Default::default()
    };
    if let Ok((styles, _)) = load_styles(ctx) {
        report.sd = Some(metric_sd(&style_features(&styles, &encoder)?)?);
        report.sc = Some(metric_sc(&styles, &head.classes, &encoder)?);
    }
    if let Ok(r) = read_json::<Value>(&ctx.path(STYLES_REPORT_FILE)) {
        report.stage1_seconds = r.get("wall_clock_s").and_then(Value::as_f64);
    }
    for (d, c) in &accuracy.per_domain {
        println!("{d}: {}/{} = {:.4}", c.correct, c.total, c.accuracy());
    }
    println!("macro accuracy {:.4}", accuracy.macro_accuracy);
    report.accuracy = Some(accuracy);
    write_json(&ctx.path(METRICS_FILE), &report)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Encoder, css and ETF for one synthetic replicate.
fn replicate(
    ctx: &Context,
    categories: &CategorySet,
    seed: u64,
) -> Result<(MockEncoder, CoarseSemanticSet, EtfTemplate)> {
    let spec = &ctx.config.encoder;
    let encoder = MockEncoder::new(spec.joint_dim, spec.token_dim, spec.seed.wrapping_add(seed));
    let csg = CsgConfig {
        extractor: ExtractorKind::Stub,
        cache_path: None,
        seed,
        ..ctx.config.csg.clone()
    };
    let css = build_css(categories, &encoder, &csg, &StubExtractor)?;
    let etf = make_etf(ctx.config.styles.k, spec.joint_dim, seed)?;
    Ok((encoder, css, etf))
}

pub fn diversity_report(
    ctx: &Context,
    counts: &[usize],
    groups: usize,
    seeds: u64,
    baseline_mode: TrainMode,
) -> Result<()> {
    let stage = || "diversity-report";
    anyhow::ensure!(seeds > 0, "diversity-report: --seeds must be positive");
    ctx.prepare()?;
    let mut rows = Vec::new();
    let mut csv = String::from("n,batstyler_sd,baseline_sd,batstyler_le_baseline\n");
    for &n in counts {
        let categories = synthetic_categories(n, groups)?.categories;
        let (mut bat, mut base) = (Vec::new(), Vec::new());
        for s in 0..seeds {
            let seed = ctx.config.seed.wrapping_add(s);
            let (enc, css, etf) = replicate(ctx, &categories, seed).with_context(stage)?;
            for (mode, sink) in [(TrainMode::Batstyler, &mut bat), (baseline_mode, &mut base)] {
                let out = train_once(
                    mode,
                    ctx,
                    &enc,
                    &categories,
                    Some(&css),
                    Some(&etf),
                    seed,
                    &ctx.config.baseline,
                )
                .with_context(stage)?;
                sink.push(metric_sd(&style_features(&out.styles, &enc)?)?);
            }
        }
        let (b, p) = (mean(&bat), mean(&base));
        println!("N={n}: SD batstyler {b:.4}, {} {p:.4}", baseline_mode.as_str());
        let _ = writeln!(csv, "{n},{b:.8},{p:.8},{}", b <= p);
        rows.push(json!({
            "n": n,
            "batstyler_sd": b,
            "baseline_sd": p,
            "batstyler_runs": bat,
            "baseline_runs": base,
        }));
    }
    fs::write(ctx.path("diversity.csv"), csv)?;
    write_json(
        &ctx.path(DIVERSITY_FILE),
        &json!({
            "baseline_mode": baseline_mode,
            "lambda": ctx.config.baseline.lambda,
            "groups": groups,
            "seeds": seeds,
            "rows": rows,
        }),
    )
}

pub fn compare_baselines(
    ctx: &Context,
    lambdas: &[f64],
    seeds: u64,
    baseline_mode: TrainMode,
) -> Result<()> {
    let stage = || "compare-baselines";
    anyhow::ensure!(seeds > 0, "compare-baselines: --seeds must be positive");
    anyhow::ensure!(
        baseline_mode != TrainMode::Batstyler,
        "compare-baselines: --baseline-mode must be a baseline"
    );
    ctx.prepare()?;
    let categories = ctx.categories().with_context(stage)?;
    let mut rows = Vec::new();
    let mut csv = String::from("lambda,sd,sc\n");
    for &lambda in lambdas {
        let baseline = BaselineLossConfig { lambda };
        baseline.validate()?;
        let (mut sd, mut sc) = (Vec::new(), Vec::new());
        for s in 0..seeds {
            let seed = ctx.config.seed.wrapping_add(s);
            let spec = &ctx.config.encoder;
            let enc = MockEncoder::new(spec.joint_dim, spec.token_dim, spec.seed.wrapping_add(seed));
            let out = train_once(baseline_mode, ctx, &enc, &categories, None, None, seed, &baseline)
                .with_context(stage)?;
            sd.push(metric_sd(&style_features(&out.styles, &enc)?)?);
            sc.push(metric_sc(&out.styles, categories.names(), &enc)?);
        }
        let (d, c) = (mean(&sd), mean(&sc));
        println!("lambda={lambda}: SD {d:.4}, SC {c:.4}");
        let _ = writeln!(csv, "{lambda},{d:.8},{c:.8}");
        rows.push(json!({"lambda": lambda, "sd": d, "sc": c, "sd_runs": sd, "sc_runs": sc}));
    }
    fs::write(ctx.path("baselines.csv"), csv)?;
    write_json(
        &ctx.path(BASELINES_FILE),
        &json!({"baseline_mode": baseline_mode, "seeds": seeds, "rows": rows}),
    )
}

pub fn timing_bench(ctx: &Context, repeats: usize, modes: &[TrainMode]) -> Result<()> {
    let stage = || "timing-bench";
    ctx.prepare()?;
    let categories = ctx.categories().with_context(stage)?;
    let (enc, css, etf) = replicate(ctx, &categories, ctx.config.seed).with_context(stage)?;
    let inputs = StyleInputs {
        encoder: &enc,
        template: Some(&etf),
        css: Some(css.terms()),
        categories: Some(&categories),
    };
    let table = timing_compare(modes, &ctx.config.styles, &ctx.config.baseline, inputs, repeats)
        .with_context(stage)?;
    for r in &table.rows {
        println!(
            "{}: median {:.3}s over {} runs (variance {:.2e}), {} steps",
            r.mode.as_str(),
            r.median_s,
            r.runs_s.len(),
            r.variance_s2,
            r.steps
        );
    }
    let speedup = table.speedup(TrainMode::Batstyler, TrainMode::BaselineSequential);
    if let Some(s) = speedup {
        println!("sequential / batstyler = {s:.2}x");
    }
    write_json(
        &ctx.path(TIMING_FILE),
        &json!({"table": table, "speedup": speedup, "css": css.len(), "categories": categories.len()}),
    )
}
