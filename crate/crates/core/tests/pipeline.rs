use lls_core::dataset::Split;
use lls_core::discretize::oracle_point_mass_groups;
use lls_core::discriminator::{cross_entropy, train_on_views, TrainConfig};
use lls_core::eval::{run_blind, run_pipeline, Mode, PipelineConfig};
use lls_core::synthgen::{make_block_instance, InstanceConfig, ProblemInstance};
use lls_core::{Error, ProblemParams};

fn instance(seed: u64, epsilon: f64, overlap: f64, n: usize) -> ProblemInstance {
    let params = ProblemParams {
        k: 3,
        r: 5,
        alpha: 0.5,
        kappa_max: 4.0,
        epsilon,
        m: 3,
        seed,
    };
    let cfg = InstanceConfig {
        p: 2,
        overlap_fraction: overlap,
        n_per_domain: n,
        ..InstanceConfig::default()
    };
    make_block_instance(&params, &cfg).unwrap()
}

#[test]
fn oracle_groups_are_pure_and_preserve_label_shift() {
    for seed in 0..3 {
        let inst = instance(seed, 0.1, 0.3, 4000);
        let data = inst.dataset().unwrap();
        let oracle = inst.oracle().unwrap();
        let xs: Vec<Vec<f64>> = data
            .records()
            .iter()
            .map(|rec| oracle.domain_posterior(&rec.features).unwrap().into_vec())
            .collect();
        let groups = oracle_point_mass_groups(&xs, 0.1, xs.len(), 1e-9);
        let labels = data.all_labels().unwrap();
        let q_dy = oracle.q_dy();

        // Groups sitting on a column of Q_{D|Y} are anchor groups and hold
        // exactly that class.
        let mut anchors_found = 0;
        for (g, rep) in groups.representatives.iter().enumerate() {
            let Some(y) = (0..3).find(|&y| {
                q_dy.column(y).as_slice().iter().zip(rep).all(|(a, b)| (a - b).abs() <= 1e-9)
            }) else {
                continue;
            };
            anchors_found += 1;
            let pure = labels.iter().zip(&groups.ids).filter(|(_, &id)| id == g).all(|(&lab, _)| lab == y);
            assert!(pure, "seed {seed}, group {g}");
        }
        assert_eq!(anchors_found, 3, "seed {seed}");

        // q(c | y, d) does not depend on d, up to sampling noise.
        let m = groups.m;
        for y in 0..3 {
            let mut pooled = vec![0usize; m];
            let mut per_domain = vec![vec![0usize; m]; 5];
            for ((rec, &id), &lab) in data.records().iter().zip(&groups.ids).zip(&labels) {
                if lab == y {
                    pooled[id] += 1;
                    per_domain[rec.domain][id] += 1;
                }
            }
            let n_y: usize = pooled.iter().sum();
            for hist in &per_domain {
                let n_yd: usize = hist.iter().sum();
                if n_yd < 200 {
                    continue;
                }
                for c in 0..m {
                    let p = pooled[c] as f64 / n_y as f64;
                    let q = hist[c] as f64 / n_yd as f64;
                    let sd = (p * (1.0 - p) / n_yd as f64).sqrt();
                    assert!((p - q).abs() <= 5.0 * sd + 1e-3, "seed {seed} y {y} c {c}: {p} vs {q}");
                }
            }
        }
    }
}

#[test]
fn early_stopping_returns_best_validation_snapshot() {
    let inst = instance(4, 0.1, 0.3, 400);
    let data = inst.dataset().unwrap().without_labels();
    let train = data.observed(&[Split::Train]);
    let valid = data.observed(&[Split::Valid]);
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 3,
        ..TrainConfig::default()
    };
    let (model, curves) = train_on_views(&train, &valid, 5, &cfg).unwrap();
    let preds = model.predict_batch(&valid.features).unwrap();
    let loss = cross_entropy(&preds, &valid.domains).unwrap();
    let best = curves.valid.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((loss - best).abs() < 1e-12, "{loss} vs {best}");
    assert_eq!(curves.valid[curves.best_epoch], best);
    assert!(curves.valid.iter().all(|&v| loss <= v));
    assert_eq!(curves.train.len(), curves.valid.len());
}

#[test]
fn predictions_do_not_depend_on_hidden_labels() {
    let inst = instance(5, 0.3, 0.0, 300);
    let data = inst.dataset().unwrap();
    let cfg = PipelineConfig::default();
    let oracle = inst.oracle().unwrap();
    for mode in [Mode::Oracle, Mode::Naive] {
        let a = run_blind(data, &inst.params, Some(&oracle), mode, &cfg).unwrap();
        let b = run_blind(&data.without_labels(), &inst.params, Some(&oracle), mode, &cfg).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.factorization, b.factorization);
    }
}

#[test]
fn oracle_run_on_easy_instance_is_exact() {
    let inst = instance(6, 0.3, 0.0, 300);
    let report = run_pipeline(&inst, Mode::Oracle, &PipelineConfig::default()).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert!(report.q_yd_error <= 1e-2);
    assert_eq!(report.to_json(), run_pipeline(&inst, Mode::Oracle, &PipelineConfig::default()).unwrap().to_json());
}

#[test]
fn stage_errors_name_the_stage() {
    let inst = instance(7, 0.1, 0.3, 100);
    let data = inst.dataset().unwrap();
    let err = run_blind(data, &inst.params, None, Mode::Oracle, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "discriminate", .. }));
    assert!(err.to_string().starts_with("discriminate: "));
}
