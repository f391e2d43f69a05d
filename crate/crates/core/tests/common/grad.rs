//! Worst-row relative error between the library's analytic gradients and
//! central differences, one function per loss.

use batstyler::classifier::{arcface_loss, arcface_with_grad, LinearHead};
use batstyler::encoder::{JointFeature, MockEncoder, Provenance};
use batstyler::etf::build_etf;
use batstyler::linalg::Matrix;
use batstyler::semantics::CategorySet;
use batstyler::styles::{
    ce_objective, consistency_objective, loss_ce, loss_content, loss_sc, loss_style_orth,
    style_features, style_orth_objective, ConsistencyTarget, PseudoStyleSet,
};

use super::{fd_grad, random_normals, random_units, rel_err};

pub const H: f64 = 1e-5;
pub const P: usize = 32;
pub const D: usize = 16;
pub const K: usize = 4;

fn thetas(seed: u64) -> Vec<Vec<f64>> {
    random_normals(seed, 11, K * D).chunks(D).map(<[f64]>::to_vec).collect()
}

fn rows(theta: &[Vec<f64>]) -> Vec<&[f64]> {
    theta.iter().map(Vec::as_slice).collect()
}

fn worst_row(
    theta: &[Vec<f64>],
    analytic: &[Vec<f64>],
    value: impl Fn(&PseudoStyleSet) -> f64,
) -> f64 {
    analytic
        .iter()
        .enumerate()
        .map(|(r, grad)| {
            let numeric = fd_grad(
                |row| {
                    let mut all = theta.to_vec();
                    all[r] = row.to_vec();
                    value(&PseudoStyleSet::from_matrix(Matrix::from_rows(&all), 0))
                },
                &theta[r],
                H,
            );
            rel_err(grad, &numeric)
        })
        .fold(0.0, f64::max)
}

pub fn cross_entropy(seed: u64) -> f64 {
    let enc = MockEncoder::new(P, D, seed);
    let etf = build_etf(K, P, seed).unwrap();
    let theta = thetas(seed);
    let labels: Vec<usize> = (0..K).collect();
    let scale = 1.0 + (seed % 5) as f64;
    let g = ce_objective(&rows(&theta), &labels, &etf, &enc, scale).unwrap();
    worst_row(&theta, &g.grads, |s| {
        loss_ce(&style_features(s, &enc).unwrap(), &etf, &labels, scale).unwrap()
    })
}

pub fn coarse_consistency(seed: u64) -> f64 {
    let css: Vec<String> = vec!["cat".into(), "vehicle".into(), "tabby cat".into()];
    let enc = MockEncoder::new(P, D, seed);
    let theta = thetas(seed);
    let target = ConsistencyTarget::new(&css, &enc).unwrap();
    let g = consistency_objective(&rows(&theta), &target, &enc).unwrap();
    worst_row(&theta, &g.grads, |s| loss_sc(s, &css, &enc).unwrap())
}

pub fn fine_content(seed: u64) -> f64 {
    let cats = CategorySet::new(["dog", "tiger cat", "minivan", "sports car"]).unwrap();
    let enc = MockEncoder::new(P, D, seed);
    let theta = thetas(seed);
    let target = ConsistencyTarget::new(cats.names(), &enc).unwrap();
    let g = consistency_objective(&rows(&theta), &target, &enc).unwrap();
    worst_row(&theta, &g.grads, |s| loss_content(s, &cats, &enc).unwrap())
}

pub fn style_orthogonality(seed: u64) -> f64 {
    let enc = MockEncoder::new(P, D, seed);
    let theta = thetas(seed);
    let g = style_orth_objective(&rows(&theta), &enc).unwrap();
    worst_row(&theta, &g.grads, |s| {
        loss_style_orth(&style_features(s, &enc).unwrap())
    })
}

pub fn arcface_weights(seed: u64) -> f64 {
    let n = 3;
    let weights = Matrix::from_vec(n, P, random_normals(seed, 21, n * P));
    let feats: Vec<JointFeature> = random_units(seed, 6, P)
        .into_iter()
        .map(|v| JointFeature::from_raw(&v, Provenance::StyleContent).unwrap())
        .collect();
    let labels: Vec<usize> = (0..6).map(|i| i % n).collect();
    let views: Vec<&[f64]> = feats.iter().map(JointFeature::vector).collect();
    let (s, m) = (5.0, 0.5);
    let (_, grad) = arcface_with_grad(&weights, &views, &labels, s, m).unwrap();
    (0..n)
        .map(|r| {
            let numeric = fd_grad(
                |row| {
                    let mut w = weights.clone();
                    w.row_mut(r).copy_from_slice(row);
                    let head = LinearHead {
                        weights: w,
                        classes: vec![String::new(); n],
                    };
                    arcface_loss(&head, &feats, &labels, s, m).unwrap()
                },
                weights.row(r),
                H,
            );
            rel_err(grad.row(r), &numeric)
        })
        .fold(0.0, f64::max)
}

/// Every loss by name, for table-driven callers.
pub const ALL: [(&str, fn(u64) -> f64); 5] = [
    ("L_CE", cross_entropy),
    ("L_SC", coarse_consistency),
    ("L_content", fine_content),
    ("L_style", style_orthogonality),
    ("ArcFace", arcface_weights),
];
