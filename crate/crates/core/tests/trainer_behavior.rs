use batstyler::encoder::{MockEncoder, TextEncoder};
use batstyler::etf::{build_etf, EtfTemplate};
use batstyler::metrics::metric_sd;
use batstyler::semantics::{build_css, CategorySet, CsgConfig, StubExtractor};
use batstyler::styles::{
    etf_accuracy, style_features, train_styles, BaselineLossConfig, PseudoStyleSet,
    StyleInputs, StyleTrainConfig, TrainError, TrainMode,
};
use batstyler::synthetic::synthetic_categories;

struct Fixture {
    enc: MockEncoder,
    template: EtfTemplate,
    css: Vec<String>,
    cats: CategorySet,
}

fn fixture(p: usize, d: usize, k: usize, seed: u64) -> Fixture {
    let enc = MockEncoder::new(p, d, seed);
    let cats = synthetic_categories(20, 4).unwrap().categories;
    let css = build_css(&cats, &enc, &CsgConfig::default(), &StubExtractor).unwrap().css;
    Fixture {
        template: build_etf(k, p, seed).unwrap(),
        enc,
        css,
        cats,
    }
}

impl Fixture {
    fn inputs(&self) -> StyleInputs<'_, MockEncoder> {
        StyleInputs {
            encoder: &self.enc,
            template: Some(&self.template),
            css: Some(&self.css),
            categories: Some(&self.cats),
        }
    }
}

fn run(mode: TrainMode, cfg: &StyleTrainConfig, fx: &Fixture) -> batstyler::styles::StyleTrainOutcome {
    train_styles(mode, cfg, &BaselineLossConfig::default(), fx.inputs()).unwrap()
}

#[test]
fn zero_learning_rate_returns_the_initialization() {
    let fx = fixture(32, 16, 8, 1);
    for mode in [TrainMode::Batstyler, TrainMode::BaselineParallel, TrainMode::BaselineSequential] {
        let cfg = StyleTrainConfig { k: 8, epochs: 1, lr: 0.0, seed: 4, ..Default::default() };
        let out = run(mode, &cfg, &fx);
        let init = PseudoStyleSet::init(8, 16, cfg.init_std, 4);
        assert_eq!(out.styles.theta.data(), init.theta.data(), "{mode:?}");
    }
}

#[test]
fn same_seed_gives_identical_styles_and_history() {
    let fx = fixture(32, 16, 8, 2);
    for mode in [TrainMode::Batstyler, TrainMode::BaselineParallel, TrainMode::BaselineSequential] {
        let cfg = StyleTrainConfig { k: 8, epochs: 6, seed: 9, ..Default::default() };
        let a = run(mode, &cfg, &fx);
        let b = run(mode, &cfg, &fx);
        assert_eq!(a.styles, b.styles);
        let strip = |h: &[batstyler::styles::EpochRecord]| -> Vec<(usize, f64, f64, f64, f64)> {
            h.iter().map(|r| (r.epoch, r.diversity, r.consistency, r.total, r.lr)).collect()
        };
        assert_eq!(strip(&a.history), strip(&b.history));
    }
}

#[test]
fn sixteen_styles_separate_in_fifty_epochs() {
    let fx = fixture(64, 64, 16, 0);
    let cfg = StyleTrainConfig { k: 16, epochs: 50, logit_scale: 20.0, seed: 0, ..Default::default() };
    let before = fx.enc.parameter_checksum();
    let out = run(TrainMode::Batstyler, &cfg, &fx);
    assert_eq!(fx.enc.parameter_checksum(), before);
    assert_eq!(out.history.len(), 50);
    assert!(out.history.last().unwrap().total < out.history[0].total);
    assert_eq!(etf_accuracy(&out.styles, &fx.template, &fx.enc).unwrap(), 1.0);
    assert_eq!(out.steps, 50 * 4);

    let init = PseudoStyleSet::init(16, 64, cfg.init_std, 0);
    let sd0 = metric_sd(&style_features(&init, &fx.enc).unwrap()).unwrap();
    let sd1 = metric_sd(&style_features(&out.styles, &fx.enc).unwrap()).unwrap();
    assert!(sd1 < sd0, "{sd1} vs {sd0}");
}

#[test]
fn sequential_budget_matches_parallel_steps() {
    let fx = fixture(32, 16, 8, 3);
    let cfg = StyleTrainConfig { k: 8, epochs: 5, seed: 1, ..Default::default() };
    let par = run(TrainMode::BaselineParallel, &cfg, &fx);
    let seq = run(TrainMode::BaselineSequential, &cfg, &fx);
    assert_eq!(par.steps, cfg.total_steps());
    assert_eq!(seq.steps, cfg.total_steps());
    assert_eq!(seq.history.len(), 8);
    assert_eq!(par.history.len(), 5);
}

#[test]
fn single_batch_when_batch_equals_k() {
    let fx = fixture(32, 16, 4, 3);
    let cfg = StyleTrainConfig { k: 4, batch_size: 4, epochs: 3, seed: 1, ..Default::default() };
    assert_eq!(run(TrainMode::Batstyler, &cfg, &fx).steps, 3);
}

#[test]
fn missing_inputs_and_bad_configs_are_rejected() {
    let fx = fixture(32, 16, 8, 0);
    let cfg = StyleTrainConfig { k: 8, epochs: 1, ..Default::default() };
    let no_css = StyleInputs { css: None, ..fx.inputs() };
    assert!(matches!(
        train_styles(TrainMode::Batstyler, &cfg, &BaselineLossConfig::default(), no_css),
        Err(TrainError::MissingInput(_))
    ));
    let no_cats = StyleInputs { categories: None, ..fx.inputs() };
    assert!(matches!(
        train_styles(TrainMode::BaselineSequential, &cfg, &BaselineLossConfig::default(), no_cats),
        Err(TrainError::MissingInput(_))
    ));
    let bad = StyleTrainConfig { k: 8, batch_size: 3, ..Default::default() };
    assert!(matches!(
        train_styles(TrainMode::Batstyler, &bad, &BaselineLossConfig::default(), fx.inputs()),
        Err(TrainError::Config(_))
    ));
    let wrong_k = StyleTrainConfig { k: 12, epochs: 1, ..Default::default() };
    assert!(train_styles(TrainMode::Batstyler, &wrong_k, &BaselineLossConfig::default(), fx.inputs()).is_err());
}

#[test]
fn huge_learning_rate_is_reported_as_divergence() {
    let fx = fixture(32, 16, 8, 0);
    let cfg = StyleTrainConfig { k: 8, epochs: 3, lr: 1e308, seed: 0, ..Default::default() };
    let err = train_styles(TrainMode::Batstyler, &cfg, &BaselineLossConfig::default(), fx.inputs());
    assert!(matches!(err, Err(TrainError::Diverged { .. })), "{err:?}");
}
