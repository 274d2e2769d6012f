mod common;

use efa_taxon::classifiers::{self, FitOptions, Hyperparams, Method, ProbabilisticClassifier};
use efa_taxon::evaluation::{log_loss, nested_cv, stratified_kfold, tune, EvalConfig, Grids};
use efa_taxon::features::ComponentPolicy;
use efa_taxon::hierarchy::marginalize;
use efa_taxon::linalg::{rows, select_rows};
use efa_taxon::outline::ToothType;
use efa_taxon::{seed, Error};
use nalgebra::DMatrix;
use rand::Rng;

/// Multinomial logit data whose coefficient matrix has rank one.
fn low_rank_logit(n: usize, k: usize, d: usize, strength: f64, s: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = seed::rng(s);
    let u: Vec<f64> = (0..k).map(|_| common::normal(&mut rng)).collect();
    let v: Vec<f64> = (0..d).map(|_| common::normal(&mut rng)).collect();
    let x = common::random_matrix(n, d, &mut rng);
    let labels = (0..n)
        .map(|i| {
            let proj: f64 = (0..d).map(|j| v[j] * x[(i, j)]).sum();
            let logits: Vec<f64> = u.iter().map(|uk| strength * uk * proj).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut r = rng.random::<f64>() * total;
            for (c, wc) in w.iter().enumerate() {
                r -= wc;
                if r <= 0.0 {
                    return c;
                }
            }
            k - 1
        })
        .collect();
    (x, labels)
}

/// Pooled inner-CV log-loss of one setting, recomputed from scratch.
fn inner_cv_loss(x: &DMatrix<f64>, labels: &[usize], k: usize, h: &Hyperparams, inner_k: usize, s: u64) -> f64 {
    let plan = stratified_kfold(labels, inner_k, seed::derive_seed(s, &[0])).unwrap();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for f in 0..inner_k {
        let (tr, te) = (plan.train_rows(f), plan.test_rows(f));
        let ytr: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
        let m = classifiers::fit(&select_rows(x, &tr), &ytr, k, h, 0, &FitOptions::default()).unwrap();
        for &i in &te {
            pred.push(m.predict_proba(&rows(&select_rows(x, &[i]))[0]));
            truth.push(labels[i]);
        }
    }
    log_loss(&pred, &truth).unwrap()
}

#[test]
fn npmr_tuning_prefers_penalty_on_low_rank_data() {
    let (k, d) = (5, 8);
    let (x, labels) = low_rank_logit(80, k, d, 1.2, 17);
    let grid: Vec<Hyperparams> = [0.0, 0.005, 0.02, 0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&lambda| Hyperparams::Npmr { lambda })
        .collect();
    let seed = 4;
    let result = tune(&x, &labels, k, Method::Npmr, &grid, 5, seed, &FitOptions::default()).unwrap();
    let oracle: Vec<f64> = grid.iter().map(|h| inner_cv_loss(&x, &labels, k, h, 5, seed)).collect();
    for (score, want) in result.scores.iter().zip(&oracle) {
        let got = score.log_loss.unwrap();
        assert!((got - want).abs() < 1e-9, "{}: {got} vs oracle {want}", score.hyperparams);
    }
    let best = (0..grid.len()).min_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap();
    assert_eq!(result.chosen, grid[best]);
    match result.chosen {
        Hyperparams::Npmr { lambda } => assert!(lambda > 0.0, "unpenalized fit chosen: {oracle:?}"),
        other => panic!("{other}"),
    }
}

#[test]
fn lda_needs_no_tuning() {
    let (x, labels) = common::blobs(10, 3, 3, 3.0, 1);
    let r = tune(&x, &labels, 3, Method::Lda, &[], 5, 0, &FitOptions::default()).unwrap();
    assert_eq!(r.chosen, Hyperparams::Lda);
    assert!(r.scores.is_empty());
}

#[test]
fn empty_or_mismatched_grid_is_rejected() {
    let (x, labels) = common::blobs(10, 3, 3, 3.0, 1);
    let opts = FitOptions::default();
    let e = tune(&x, &labels, 3, Method::Rf, &[], 5, 0, &opts).unwrap_err();
    assert!(matches!(e, Error::InvalidHyperparameter(_)));
    let e = tune(&x, &labels, 3, Method::Rf, &[Hyperparams::Lda], 5, 0, &opts).unwrap_err();
    assert!(matches!(e, Error::InvalidHyperparameter(_)));
}

#[test]
fn one_point_grid_is_scored_and_chosen() {
    let (x, labels) = common::blobs(10, 3, 3, 3.0, 2);
    let h = Hyperparams::Nnet { size: 2, decay: 0.1 };
    let r = tune(&x, &labels, 3, Method::Nnet, &[h], 5, 0, &FitOptions::default()).unwrap();
    assert_eq!(r.chosen, h);
    assert_eq!(r.scores.len(), 1);
    assert!(r.scores[0].log_loss.unwrap() >= 0.0);
}

#[test]
fn tuning_ties_go_to_first_grid_point() {
    let (x, labels) = common::blobs(10, 2, 3, 3.0, 3);
    let h = Hyperparams::Npmr { lambda: 0.1 };
    let r = tune(&x, &labels, 2, Method::Npmr, &[h, h, h], 5, 0, &FitOptions::default()).unwrap();
    let s: Vec<f64> = r.scores.iter().map(|g| g.log_loss.unwrap()).collect();
    assert_eq!(s[0], s[1]);
    assert_eq!(s[1], s[2]);
    assert_eq!(r.chosen, h);
}

#[test]
fn rf_without_bootstrap_fits_training_rows_exactly() {
    let (x, labels) = common::blobs(20, 4, 3, 1.0, 6);
    let mut opts = FitOptions::default();
    opts.rf.bootstrap = false;
    opts.rf.n_trees = 25;
    let m = classifiers::fit(&x, &labels, 4, &Hyperparams::Rf { mtry: 3 }, 9, &opts).unwrap();
    let p: Vec<Vec<f64>> = rows(&x).iter().map(|r| m.predict_proba(r)).collect();
    assert_eq!(efa_taxon::evaluation::accuracy(&p, &labels).unwrap(), 1.0);
}

#[test]
fn folds_spread_each_species_evenly() {
    let data = common::labeled(&common::small_spec(9, 2), ToothType::LM2);
    let plan = stratified_kfold(&data.species, 6, 5).unwrap();
    for s in 0..data.taxonomy.n_species() {
        let per_fold: Vec<usize> = (0..6)
            .map(|f| plan.test_rows(f).iter().filter(|&&i| data.species[i] == s).count())
            .collect();
        let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
        assert!(hi - lo <= 1, "species {s}: {per_fold:?}");
    }
    let sizes = plan.fold_sizes();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
}

#[test]
fn fast_mode_thins_grids_and_forest() {
    let cfg = EvalConfig::default().with_fast(8);
    assert_eq!(cfg.fit.rf.n_trees, 250);
    assert_eq!(cfg.fast, Some(8));
    let full = Grids::full();
    assert_eq!(cfg.grids.svm_gamma.len(), full.svm_gamma.len().div_ceil(8));
    assert!(cfg.grids.svm_gamma.iter().all(|g| full.svm_gamma.contains(g)));
    assert_eq!(EvalConfig::default().with_fast(1), EvalConfig::default());
}

fn small_cfg() -> EvalConfig {
    let mut cfg = EvalConfig::default().with_fast(8);
    cfg.components = ComponentPolicy::Fixed(6);
    cfg
}

#[test]
fn nested_cv_report_invariants() {
    let data = common::labeled(&common::small_spec(10, 12), ToothType::UM1);
    let cfg = small_cfg();
    for method in [Method::Lda, Method::Npmr] {
        let report = nested_cv(&data, method, &cfg, 3).unwrap();
        assert_eq!(report.n, data.n());
        assert_eq!(report.predictions.len(), data.n());
        let mut seen = vec![0; data.n()];
        for p in &report.predictions {
            seen[p.row] += 1;
            assert_eq!(p.specimen_id, data.specimen_ids[p.row]);
            let m = marginalize(&p.species, &data.taxonomy).unwrap();
            for (a, b) in m.iter().zip(&p.tribe) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(report.max_consistency_error <= 1e-12);

        for level in [&report.tribe, &report.species] {
            assert!(level.log_loss >= 0.0);
            assert!((0.0..=1.0).contains(&level.accuracy));
            let total: usize = level.folds.iter().map(|f| f.size).sum();
            assert_eq!(total, data.n());
            let weighted: f64 = level.folds.iter().map(|f| f.accuracy * f.size as f64).sum::<f64>() / total as f64;
            assert!((weighted - level.accuracy).abs() < 1e-12, "{weighted} vs {}", level.accuracy);
            let diag: usize = (0..level.classes.len()).map(|c| level.confusion[c][c]).sum();
            assert_eq!(diag as f64 / data.n() as f64, level.accuracy);
        }
        assert_eq!(report.folds.len(), cfg.outer_folds);
        for f in &report.folds {
            assert_eq!(f.train_size + f.test_size, data.n());
            assert_eq!(f.pca_components, 6);
        }
        let again = nested_cv(&data, method, &cfg, 3).unwrap();
        assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
    }
}

#[test]
fn nested_cv_tribe_log_loss_matches_recomputation() {
    let data = common::labeled(&common::small_spec(10, 13), ToothType::UM3);
    let report = nested_cv(&data, Method::Lda, &small_cfg(), 0).unwrap();
    let mut by_row = report.predictions.clone();
    by_row.sort_by_key(|p| p.row);
    let tribe: Vec<Vec<f64>> = by_row.iter().map(|p| p.tribe.clone()).collect();
    let species: Vec<Vec<f64>> = by_row.iter().map(|p| p.species.clone()).collect();
    let clip = |p: f64| p.clamp(1e-15, 1.0 - 1e-15);
    let manual = |pred: &[Vec<f64>], y: &[usize]| -> f64 {
        -pred.iter().zip(y).map(|(p, &c)| clip(p[c]).ln()).sum::<f64>() / y.len() as f64
    };
    assert!((manual(&tribe, &data.tribes) - report.tribe.log_loss).abs() < 1e-12);
    assert!((manual(&species, &data.species) - report.species.log_loss).abs() < 1e-12);
}
