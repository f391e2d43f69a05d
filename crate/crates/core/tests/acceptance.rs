//! One PASS/FAIL line per acceptance criterion, with pinned tolerances.
//!
//! Lines go straight to the stdout handle so they show up without
//! `--nocapture`. The test fails if any criterion fails that is not listed
//! in `KNOWN_SHORTFALLS`.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use batstyler::array::{ArrayFile, Dtype};
use batstyler::classifier::{
    arcface_loss, synth_training_set, train_linear, training_accuracy, ClassifierConfig,
    LinearHead,
};
use batstyler::encoder::{JointFeature, MockEncoder, Provenance};
use batstyler::etf::{build_etf, verify_etf, EtfTemplate};
use batstyler::linalg::Matrix;
use batstyler::metrics::{evaluate, metric_sc, metric_sd, timing_compare, DatasetManifest};
use batstyler::semantics::llm::{LlmClient, ReplayClient};
use batstyler::semantics::{
    build_css, cluster, select_k, CachedExtractor, CategorySet, CsgConfig, LlmExtractor,
    StubExtractor,
};
use batstyler::styles::{
    etf_accuracy, loss_ce, style_features, train_styles, BaselineLossConfig, PseudoStyleSet,
    StyleInputs, StyleTrainConfig, StyleTrainOutcome, TrainMode,
};
use batstyler::synthetic::synthetic_categories;
use common::{
    best_partition, blobs, brute_select_k, dot, grad, lse_ce, pairwise_abs_mean,
    random_normals, random_units, silhouette_cos, unit, OracleMock,
};

/// Criteria expected to fail on the mock backend; see the README.
const KNOWN_SHORTFALLS: &[u8] = &[7];

const ETF_TOL: f64 = 1e-6;
const ETF_BUDGET_S: f64 = 5.0;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const ORACLE_TOL: f64 = 1e-10;
const CLOSED_FORM_TOL: f64 = 1e-9;
const PIPELINE_BUDGET_S: f64 = 300.0;
const LOSS_WINDOW: usize = 50;
const NOISY_FLOOR: f64 = 0.8;
const TREND_SEEDS: u64 = 5;
const SWEEP_SEEDS: u64 = 5;
const TIMING_REPEATS: usize = 5;
const SPEEDUP_FLOOR: f64 = 3.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mock encoder, stub css and ETF for one seeded replicate.
struct Replicate {
    enc: MockEncoder,
    cats: CategorySet,
    css: Vec<String>,
    etf: EtfTemplate,
}

impl Replicate {
    fn new(p: usize, d: usize, k: usize, cats: CategorySet, seed: u64) -> Self {
        let enc = MockEncoder::new(p, d, seed);
        let csg = CsgConfig {
            seed,
            ..CsgConfig::default()
        };
        let css = build_css(&cats, &enc, &csg, &StubExtractor).unwrap().css;
        Self {
            etf: build_etf(k, p, seed).unwrap(),
            enc,
            cats,
            css,
        }
    }

    fn inputs(&self) -> StyleInputs<'_, MockEncoder> {
        StyleInputs {
            encoder: &self.enc,
            template: Some(&self.etf),
            css: Some(&self.css),
            categories: Some(&self.cats),
        }
    }

    fn train(&self, mode: TrainMode, cfg: &StyleTrainConfig, lambda: f64) -> StyleTrainOutcome {
        train_styles(mode, cfg, &BaselineLossConfig { lambda }, self.inputs()).unwrap()
    }

    fn sd(&self, styles: &PseudoStyleSet) -> f64 {
        metric_sd(&style_features(styles, &self.enc).unwrap()).unwrap()
    }
}

fn etf_geometry() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut all = true;
    for k in [2usize, 4, 16, 80] {
        for p in [k, 512, 1024] {
            let r = verify_etf(&build_etf(k, p, 7).unwrap(), ETF_TOL);
            worst = worst
                .max(r.max_norm_deviation)
                .max(r.max_offdiag_deviation)
                .max(r.column_sum_norm);
            all &= r.passes && r.column_sum_norm <= ETF_TOL;
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        all && secs < ETF_BUDGET_S,
        format!("{cases} shapes, worst deviation {worst:.1e} (tol {ETF_TOL:.0e}), {secs:.2}s (< {ETF_BUDGET_S}s)"),
    )
}

fn gradient_fidelity() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, f) in grad::ALL {
        let worst = (0..GRAD_SEEDS).map(f).fold(0.0, f64::max);
        pass &= worst < GRAD_TOL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    outcome(
        pass,
        format!("{GRAD_SEEDS} seeds each, worst rel. error: {} (tol {GRAD_TOL:.0e})", parts.join(", ")),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let (p, d, k) = (24, 12, 5);
        let enc = MockEncoder::new(p, d, seed);
        let oracle = OracleMock::new(p, d, seed);
        let theta = PseudoStyleSet::from_matrix(
            Matrix::from_vec(k, d, random_normals(seed, 3, k * d)),
            seed,
        );
        let feats: Vec<Vec<f64>> = theta.rows().iter().map(|t| oracle.style(t)).collect();
        let sd = metric_sd(&style_features(&theta, &enc).unwrap()).unwrap();
        worst = worst.max((sd - pairwise_abs_mean(&feats)).abs());

        let names: Vec<String> = ["tabby cat", "oak", "fire truck"].map(String::from).to_vec();
        let mut sc = 0.0;
        for n in &names {
            for t in theta.rows() {
                sc += dot(&oracle.content(n), &oracle.style_content(t, n));
            }
        }
        sc /= (names.len() * k) as f64;
        worst = worst.max((metric_sc(&theta, &names, &enc).unwrap() - sc).abs());

        let etf = build_etf(k, p, seed).unwrap();
        let cols: Vec<Vec<f64>> = (0..k).map(|i| etf.column(i).to_vec()).collect();
        let units = random_units(seed, 6, p);
        let labels: Vec<usize> = (0..6).map(|i| i % k).collect();
        let jf: Vec<JointFeature> = units
            .iter()
            .map(|u| JointFeature::from_raw(u, Provenance::Style).unwrap())
            .collect();
        let ce = loss_ce(&jf, &etf, &labels, 2.0).unwrap();
        worst = worst.max((ce - lse_ce(&units, &cols, &labels, 2.0)).abs());

        let raw = random_normals(seed, 21, k * p);
        let head = LinearHead {
            weights: Matrix::from_vec(k, p, raw.clone()),
            classes: (0..k).map(|i| i.to_string()).collect(),
        };
        let rows: Vec<Vec<f64>> = raw.chunks(p).map(|r| unit(r.to_vec())).collect();
        let arc = arcface_loss(&head, &jf, &labels, 1.0, 0.0).unwrap();
        worst = worst.max((arc - lse_ce(&units, &rows, &labels, 1.0)).abs());
    }

    let mut cluster_mismatch = 0;
    for seed in 0..8u64 {
        let n = 6 + (seed as usize % 5);
        let groups = 2 + (seed as usize % 3);
        let mut sizes = vec![n / groups; groups];
        sizes[0] += n % groups;
        let pts: Vec<Vec<f64>> = blobs(seed + 100, &sizes, 4, 0.25).into_iter().map(unit).collect();
        let sel = select_k(&pts, 20, seed, 10).unwrap();
        let (k, labels) = brute_select_k(&pts, 20);
        if sel.k != k || sel.clustering.assignment != labels {
            cluster_mismatch += 1;
        }
        let chosen = sel.scores.iter().find(|(kk, _)| *kk == k).map_or(f64::NAN, |s| s.1);
        worst = worst.max((chosen - silhouette_cos(&pts, &labels)).abs());

        let km = cluster(&pts, groups, seed, 10).unwrap();
        if km.assignment != best_partition(&pts, groups).0 {
            cluster_mismatch += 1;
        }
    }
    outcome(
        worst < ORACLE_TOL && cluster_mismatch == 0,
        format!(
            "worst metric/loss gap {worst:.1e} (tol {ORACLE_TOL:.0e}), {cluster_mismatch} clustering mismatches over 16 brute-force instances"
        ),
    )
}

fn closed_form_ce() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in [2usize, 4, 16] {
        for s in [1.0, 5.0] {
            let t = build_etf(k, k, 1).unwrap();
            let feats: Vec<JointFeature> = (0..k)
                .map(|i| JointFeature::from_raw(t.column(i), Provenance::Style).unwrap())
                .collect();
            let labels: Vec<usize> = (0..k).collect();
            let kf = k as f64;
            let want = (1.0 + (kf - 1.0) * (-s * kf / (kf - 1.0)).exp()).ln();
            worst = worst.max((loss_ce(&feats, &t, &labels, s).unwrap() - want).abs());
        }
    }
    outcome(
        worst < CLOSED_FORM_TOL,
        format!("worst gap {worst:.1e} over K in {{2,4,16}}, s in {{1,5}} (tol {CLOSED_FORM_TOL:.0e})"),
    )
}

fn determinism() -> Outcome {
    let stage = |seed: u64| -> Vec<Vec<u8>> {
        let rep = Replicate::new(32, 16, 8, synthetic_categories(12, 3).unwrap().categories, seed);
        let mut out = vec![
            ArrayFile::from_matrix(rep.etf.matrix(), None).encode(Dtype::F64),
            serde_json::to_vec(&rep.css).unwrap(),
        ];
        let cfg = StyleTrainConfig { k: 8, epochs: 8, seed, ..Default::default() };
        let mut last = None;
        for mode in [TrainMode::Batstyler, TrainMode::BaselineParallel, TrainMode::BaselineSequential] {
            let styles = rep.train(mode, &cfg, 1.0).styles;
            out.push(ArrayFile::from_matrix(&styles.theta, None).encode(Dtype::F64));
            last = Some(styles);
        }
        let set = synth_training_set(&last.unwrap(), &rep.cats, &rep.enc).unwrap();
        let head = train_linear(&ClassifierConfig { seed, epochs: 5, ..Default::default() }, &set)
            .unwrap()
            .head;
        out.push(ArrayFile::from_matrix(&head.weights, None).encode(Dtype::F64));
        out
    };
    let a = stage(3);
    let b = stage(3);
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    outcome(
        a == b,
        format!("{same}/{} artifacts byte-identical (ETF, css, 3 style modes, head)", a.len()),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let syn = synthetic_categories(20, 4).unwrap();
    let names = syn.categories.names().to_vec();
    let rep = Replicate::new(64, 32, 16, syn.categories, 0);
    let cfg = StyleTrainConfig { k: 16, epochs: 300, ..Default::default() };
    let out = rep.train(TrainMode::Batstyler, &cfg, 1.0);
    let windows: Vec<f64> = out
        .history
        .chunks(LOSS_WINDOW)
        .map(|w| mean(&w.iter().map(|r| r.total).collect::<Vec<_>>()))
        .collect();
    let decreasing = windows.windows(2).all(|w| w[1] < w[0]);
    let etf_acc = etf_accuracy(&out.styles, &rep.etf, &rep.enc).unwrap();

    let set = synth_training_set(&out.styles, &rep.cats, &rep.enc).unwrap();
    let head = train_linear(&ClassifierConfig::default(), &set).unwrap().head;
    let head_acc = training_accuracy(&head, &set).unwrap();
    let images = rep.enc.image_encoder(names.iter().cloned());
    let clean = DatasetManifest::mock(&names, &[("clean", 0.0)], 10, 1);
    let noisy = DatasetManifest::mock(&names, &[("noisy", 0.2)], 10, 2);
    let clean_acc = evaluate(&clean.records, &head, &images).unwrap().macro_accuracy;
    let noisy_acc = evaluate(&noisy.records, &head, &images).unwrap().macro_accuracy;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        decreasing && etf_acc == 1.0 && clean_acc == 1.0 && noisy_acc >= NOISY_FLOOR && secs < PIPELINE_BUDGET_S,
        format!(
            "{LOSS_WINDOW}-epoch loss windows decreasing: {decreasing}, ETF acc {etf_acc:.3}, head train acc {head_acc:.3}, macro acc {clean_acc:.3} at sigma 0 and {noisy_acc:.3} at sigma 0.2 (floor {NOISY_FLOOR}), {secs:.1}s"
        ),
    )
}

fn diversity_trend() -> Outcome {
    let mut parts = Vec::new();
    let mut le_everywhere = true;
    let mut baseline_means = Vec::new();
    for n in [5usize, 50, 200] {
        let (mut bat, mut base) = (Vec::new(), Vec::new());
        for seed in 0..TREND_SEEDS {
            let cats = synthetic_categories(n, 4).unwrap().categories;
            let rep = Replicate::new(96, 96, 80, cats, seed);
            let bat_cfg = StyleTrainConfig { k: 80, logit_scale: 3.0, seed, ..Default::default() };
            let base_cfg = StyleTrainConfig { logit_scale: 1.0, ..bat_cfg.clone() };
            bat.push(rep.sd(&rep.train(TrainMode::Batstyler, &bat_cfg, 1.0).styles));
            base.push(rep.sd(&rep.train(TrainMode::BaselineSequential, &base_cfg, 1.0).styles));
        }
        let (b, s) = (mean(&bat), mean(&base));
        le_everywhere &= b <= s;
        baseline_means.push(s);
        parts.push(format!("N={n}: {b:.4} vs {s:.4}"));
    }
    let rising = baseline_means.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        le_everywhere && rising,
        format!(
            "mean SD batstyler vs sequential baseline over {TREND_SEEDS} seeds: {}; baseline non-decreasing in N: {rising}",
            parts.join(", ")
        ),
    )
}

fn lambda_sweep() -> Outcome {
    let (mut sd, mut sc) = ([Vec::new(), Vec::new()], [Vec::new(), Vec::new()]);
    for seed in 0..SWEEP_SEEDS {
        let rep = Replicate::new(64, 32, 16, synthetic_categories(20, 4).unwrap().categories, seed);
        let cfg = StyleTrainConfig { k: 16, epochs: 100, seed, ..Default::default() };
        for (i, lambda) in [0.1, 1.0].into_iter().enumerate() {
            let styles = rep.train(TrainMode::BaselineParallel, &cfg, lambda).styles;
            sd[i].push(rep.sd(&styles));
            sc[i].push(metric_sc(&styles, rep.cats.names(), &rep.enc).unwrap());
        }
    }
    let (sd_lo, sd_hi, sc_lo, sc_hi) = (mean(&sd[0]), mean(&sd[1]), mean(&sc[0]), mean(&sc[1]));
    outcome(
        sd_lo <= sd_hi && sc_lo <= sc_hi,
        format!(
            "{SWEEP_SEEDS} seeds, parallel baseline: SD {sd_lo:.4} (lambda 0.1) vs {sd_hi:.4} (1.0), SC {sc_lo:.4} vs {sc_hi:.4}"
        ),
    )
}

fn timing() -> Outcome {
    let rep = Replicate::new(96, 96, 80, synthetic_categories(200, 4).unwrap().categories, 0);
    let cfg = StyleTrainConfig { k: 80, epochs: 50, ..Default::default() };
    let modes = [TrainMode::Batstyler, TrainMode::BaselineSequential];
    let table = timing_compare(&modes, &cfg, &BaselineLossConfig::default(), rep.inputs(), TIMING_REPEATS).unwrap();
    let fast = table.row(TrainMode::Batstyler).unwrap();
    let slow = table.row(TrainMode::BaselineSequential).unwrap();
    let ratio = slow.median_s / fast.median_s;
    outcome(
        ratio >= SPEEDUP_FLOOR && fast.steps == slow.steps,
        format!(
            "K=80, N=200, {} coarse terms, {} steps each, median of {TIMING_REPEATS}: {:.3}s parallel vs {:.3}s sequential, speedup {ratio:.2}x (floor {SPEEDUP_FLOOR}x)",
            rep.css.len(), fast.steps, fast.median_s, slow.median_s
        ),
    )
}

fn csg_behavior() -> Outcome {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_replay.json");
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    let enc = MockEncoder::new(64, 32, 0);
    let cats = CategorySet::new(["tabby cat", "pickup truck", "tiger cat", "fire truck"]).unwrap();
    let run = || {
        let ex = CachedExtractor::new(
            LlmExtractor::new(ReplayClient::load(&fixture).unwrap(), "replay"),
            Some(&cache),
        )
        .unwrap();
        let css = build_css(&cats, &enc, &CsgConfig::default(), &ex).unwrap();
        (css.provenance.splits, ex.inner().client().request_count())
    };
    let (splits, first) = run();
    let (_, second) = run();
    outcome(
        splits == 1 && second == 0,
        format!("{splits} split(s), {first} requests on the first run, {second} on the cached rerun"),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(u8, &str, fn() -> Outcome); 10] = [
        (1, "ETF geometry", etf_geometry),
        (2, "gradient fidelity", gradient_fidelity),
        (3, "oracle equivalence", oracle_equivalence),
        (4, "closed-form CE", closed_form_ce),
        (5, "determinism", determinism),
        (6, "end-to-end mock pipeline", end_to_end),
        (7, "diversity trend", diversity_trend),
        (8, "lambda sweep", lambda_sweep),
        (9, "stage-one timing", timing),
        (10, "CSG split and cache", csg_behavior),
    ];
    let mut unexpected = Vec::new();
    let mut out = std::io::stdout();
    for (id, name, check) in criteria {
        let r = check();
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {id:>2} {verdict} {name}: {}", r.detail).unwrap();
        out.flush().unwrap();
        if !r.pass && !KNOWN_SHORTFALLS.contains(&id) {
            unexpected.push(id);
        }
    }
    assert!(unexpected.is_empty(), "unexpected failures: {unexpected:?}");
}
