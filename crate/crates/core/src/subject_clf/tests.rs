use super::*;
use crate::dataset::TrialMeta;
use crate::grouping::{Category, Side};
use crate::synth::{generate, BehaviorSpec, Snr, SynthConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn trial(data: Array2<f64>) -> EpochedTrial {
    EpochedTrial {
        meta: TrialMeta {
            sentence_id: 0,
            sentiment: crate::dataset::Polarity::Neutral,
            last_word_valence: crate::dataset::Polarity::Neutral,
            response: Response::Agree,
            response_time_ms: Some(500.0),
        },
        data,
        sample_rate_hz: 200.0,
        epoch_start_ms: -200.0,
    }
}

fn small_cfg() -> BootstrapConfig {
    BootstrapConfig {
        n_boot: 40,
        feature_window_ms: Some(20.0),
        ..Default::default()
    }
}

#[test]
fn single_trial_single_draw() {
    let t = trial(Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64 * 0.25));
    let cfg = BootstrapConfig {
        n_boot: 1,
        trials_per_boot: 1,
        ..Default::default()
    };
    let b = bootstrap_trials(&[&t], "C001", &cfg).unwrap();
    assert_eq!(b, vec![t.data.clone()]);
}

#[test]
fn identical_trials_give_identical_bootstraps() {
    let t = trial(Array2::from_elem((2, 4), 0.75));
    let trials = vec![&t; 7];
    let b = bootstrap_trials(&trials, "D003", &BootstrapConfig::default()).unwrap();
    assert_eq!(b.len(), 200);
    assert!(b.iter().all(|m| m == t.data));
}

#[test]
fn bootstrap_mean_converges() {
    let mut r = rng::rng_from(5, &[]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let trials: Vec<EpochedTrial> = (0..12)
        .map(|_| trial(Array2::from_shape_fn((2, 3), |_| normal.sample(&mut r))))
        .collect();
    let refs: Vec<&EpochedTrial> = trials.iter().collect();
    let cfg = BootstrapConfig {
        n_boot: 10_000,
        trials_per_boot: 20,
        ..Default::default()
    };
    let boots = bootstrap_trials(&refs, "S010", &cfg).unwrap();
    let n = trials.len() as f64;
    for i in 0..2 {
        for j in 0..3 {
            let vals: Vec<f64> = trials.iter().map(|t| t.data[[i, j]]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let got = boots.iter().map(|b| b[[i, j]]).sum::<f64>() / boots.len() as f64;
            let tol = 3.0 * sd / ((cfg.trials_per_boot * cfg.n_boot) as f64).sqrt();
            assert!((got - mean).abs() <= tol, "({i},{j}): {got} vs {mean} ± {tol}");
        }
    }
}

#[test]
fn bootstrap_streams_depend_on_subject_and_seed() {
    let trials: Vec<EpochedTrial> = (0..5).map(|k| trial(Array2::from_elem((1, 2), k as f64))).collect();
    let refs: Vec<&EpochedTrial> = trials.iter().collect();
    let cfg = BootstrapConfig::default();
    let a = bootstrap_trials(&refs, "C001", &cfg).unwrap();
    assert_eq!(a, bootstrap_trials(&refs, "C001", &cfg).unwrap());
    assert_ne!(a, bootstrap_trials(&refs, "C002", &cfg).unwrap());
    assert_ne!(a, bootstrap_trials(&refs, "C001", &BootstrapConfig { rng_seed: 1, ..cfg }).unwrap());
}

#[test]
fn bootstrap_errors() {
    assert!(matches!(bootstrap_trials(&[], "C001", &BootstrapConfig::default()), Err(ClfError::NoTrials)));
    let t = trial(Array2::zeros((1, 1)));
    let bad = BootstrapConfig { n_boot: 0, ..Default::default() };
    assert!(matches!(bootstrap_trials(&[&t], "C001", &bad), Err(ClfError::Config(_))));
    let bad = BootstrapConfig { trials_per_boot: 0, ..Default::default() };
    assert!(bootstrap_trials(&[&t], "C001", &bad).is_err());
}

#[test]
fn probability_is_a_count_ratio() {
    let units = vec![Unit {
        id: "D001".into(),
        subject: 0,
        group: Group::D,
        label: true,
        x: Array2::zeros((200, 1)),
    }];
    let p = probabilities(&units, &[150]);
    assert_eq!(p[0].p_positive_class, 0.75);
    assert_eq!(p[0].n_boot_used, 200);
    assert_eq!(p[0].n_positive, 150);
}

#[test]
fn confusion_examples() {
    let c = confusion_at_threshold(&[0.9, 0.4, 0.2], &[true, true, false], 0.5).unwrap();
    assert_eq!((c.sensitivity, c.specificity), (0.5, 1.0));
    let c = confusion_at_threshold(&[0.9, 0.6, 0.1], &[true, true, false], 0.5).unwrap();
    assert_eq!((c.sensitivity, c.specificity), (1.0, 1.0));
    assert!(confusion_at_threshold(&[0.9], &[true], 0.5).is_err());
    assert!(confusion_at_threshold(&[0.9], &[true, false], 0.5).is_err());
}

proptest! {
    #[test]
    fn confusion_matches_brute_force(
        pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..40),
        threshold in 0.0f64..1.0,
    ) {
        let probs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let c = confusion_at_threshold(&probs, &labels, threshold).unwrap();
        let mut hits = [[0usize; 2]; 2];
        for i in 0..probs.len() {
            hits[labels[i] as usize][(probs[i] >= threshold) as usize] += 1;
        }
        prop_assert_eq!(c.tp, hits[1][1]);
        prop_assert_eq!(c.fn_, hits[1][0]);
        prop_assert_eq!(c.tn, hits[0][0]);
        prop_assert_eq!(c.fp, hits[0][1]);
        prop_assert_eq!(c.sensitivity, hits[1][1] as f64 / pos as f64);
        prop_assert_eq!(c.specificity, hits[0][0] as f64 / (labels.len() - pos) as f64);
    }

    #[test]
    fn folds_balance_gender(
        strata in prop::collection::vec((0u8..3, any::<bool>()), 5..80),
        seed in any::<u64>(),
    ) {
        let strata: Vec<(Gender, bool)> = strata
            .iter()
            .map(|&(g, c)| ([Gender::Female, Gender::Male, Gender::Other][g as usize], c))
            .collect();
        let folds = assign_folds(&strata, 5, seed);
        for g in [Gender::Female, Gender::Male, Gender::Other] {
            let counts: Vec<usize> = (0..5)
                .map(|f| (0..strata.len()).filter(|&i| folds[i] == f && strata[i].0 == g).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "gender {:?}: {:?}", g, counts);
        }
        let sizes: Vec<usize> = (0..5).map(|f| folds.iter().filter(|&&x| x == f).count()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

fn separable(c: usize, d: usize, s: usize, seed: u64) -> Dataset {
    let mut cfg = SynthConfig::desk(Snr::Separable).with_groups(c, d, s);
    cfg.rng_seed = seed;
    generate(&cfg).unwrap()
}

fn all_trials() -> TrialType {
    TrialType::Single(GroupingSpec::all())
}

#[test]
fn separable_cohort_is_classified_perfectly() {
    let ds = separable(10, 10, 0, 1);
    let res = run_subject_classification(
        &ds,
        &all_trials(),
        &ClassSplit::c_vs_d(),
        &ClassifierSpec::default(),
        &PrepConfig::default(),
        &small_cfg(),
    )
    .unwrap();
    assert_eq!(res.auc, 1.0);
    assert_eq!(res.probabilities.len(), 20);
    assert_eq!(res.folds.len(), 5);
    for p in &res.probabilities {
        assert_eq!(p.n_boot_used, 40);
        assert_eq!(p.n_positive as f64, p.p_positive_class * 40.0);
        if p.label {
            assert!(p.p_positive_class >= 0.9, "{}: {}", p.subject_id, p.p_positive_class);
        }
    }
}

#[test]
fn loso_and_candidates_and_mlp() {
    let ds = separable(6, 6, 0, 2);
    let cfg = BootstrapConfig {
        cv: CvScheme::Loso,
        n_boot: 20,
        feature_window_ms: Some(50.0),
        ..Default::default()
    };
    let grid = ClassifierSpec::SparseLogreg {
        lambdas: vec![0.05, 0.1, 0.3],
        fit: FitConfig::default(),
    };
    let res = run_subject_classification(&ds, &all_trials(), &ClassSplit::c_vs_d(), &grid, &PrepConfig::default(), &cfg).unwrap();
    assert_eq!(res.folds.len(), 12);
    assert!(res.folds.iter().all(|f| f.n_test_units == 1 && f.selected.starts_with("lambda=")));
    assert!(res.auc > 0.9);

    let mlp = ClassifierSpec::Mlp1Hidden {
        init_seeds: vec![0, 1],
        mlp: MlpConfig {
            hidden: 4,
            epochs: 100,
            ..Default::default()
        },
    };
    let res = run_subject_classification(&ds, &all_trials(), &ClassSplit::c_vs_d(), &mlp, &PrepConfig::default(), &cfg).unwrap();
    assert!(res.auc > 0.9, "mlp auc {}", res.auc);
}

#[test]
fn classifier_spec_serde() {
    let spec: ClassifierSpec = serde_json::from_str(r#"{"kind":"sparse_logreg","lambdas":[0.1,0.2]}"#).unwrap();
    assert_eq!(spec.candidates().len(), 2);
    let spec: ClassifierSpec = serde_json::from_str(r#"{"kind":"mlp_1hidden","mlp":{"hidden":3}}"#).unwrap();
    assert!(matches!(spec, ClassifierSpec::Mlp1Hidden { ref mlp, .. } if mlp.hidden == 3));
    assert!(serde_json::from_str::<ClassifierSpec>(r#"{"kind":"svm"}"#).is_err());
    let back: ClassifierSpec = serde_json::from_str(&serde_json::to_string(&ClassifierSpec::default()).unwrap()).unwrap();
    assert_eq!(back, ClassifierSpec::default());
    let bad = ClassifierSpec::SparseLogreg {
        lambdas: vec![],
        fit: FitConfig::default(),
    };
    assert!(bad.validate().is_err());
}

#[test]
fn contrast_and_exclusion() {
    let mut ds = separable(5, 5, 0, 3);
    ds.subjects[0].trials.retain(|t| t.meta.sentiment != crate::dataset::Polarity::Negative);
    let tt = TrialType::Contrast(GroupingSpec::new(Category::SentenceSentiment, Side::A));
    let res = run_subject_classification(&ds, &tt, &ClassSplit::c_vs_d(), &ClassifierSpec::default(), &PrepConfig::default(), &small_cfg())
        .unwrap();
    assert_eq!(res.excluded.len(), 1);
    assert_eq!(res.excluded[0].subject_id, "C001");
    assert_eq!(res.probabilities.len(), 9);
}

#[test]
fn single_class_training_fold_is_an_error() {
    // one positive subject under LOSO: its own fold trains on negatives only
    let ds = separable(4, 1, 0, 4);
    let cfg = BootstrapConfig { cv: CvScheme::Loso, ..small_cfg() };
    let err = run_subject_classification(&ds, &all_trials(), &ClassSplit::c_vs_d(), &ClassifierSpec::default(), &PrepConfig::default(), &cfg)
        .unwrap_err();
    assert!(matches!(err, ClfError::SingleClassFold { .. }), "{err}");
}

#[test]
fn identical_across_thread_counts() {
    let ds = separable(5, 5, 0, 5);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                run_subject_classification(&ds, &all_trials(), &ClassSplit::c_vs_d(), &ClassifierSpec::default(), &PrepConfig::default(), &small_cfg())
                    .unwrap()
            })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn full_budget_is_the_plain_run() {
    let ds = separable(5, 5, 0, 6);
    let cfg = small_cfg();
    let base = run_subject_classification(&ds, &all_trials(), &ClassSplit::c_vs_d(), &ClassifierSpec::default(), &PrepConfig::default(), &cfg)
        .unwrap();
    for axis in [BudgetAxis::TrialsTrainTest, BudgetAxis::TrialsTestOnly, BudgetAxis::DepressedSubjects] {
        let rows = budget_ablation(
            &ds,
            &all_trials(),
            &ClassSplit::c_vs_d(),
            &ClassifierSpec::default(),
            &PrepConfig::default(),
            &cfg,
            axis,
            &[1.0],
        )
        .unwrap();
        assert_eq!(rows[0].auc.to_bits(), base.auc.to_bits());
    }
    let err = budget_ablation(
        &ds,
        &all_trials(),
        &ClassSplit::c_vs_d(),
        &ClassifierSpec::default(),
        &PrepConfig::default(),
        &cfg,
        BudgetAxis::DepressedSubjects,
        &[0.01],
    );
    assert!(matches!(err, Err(ClfError::EmptyFraction { .. })));
    assert!(budget_ablation(
        &ds,
        &all_trials(),
        &ClassSplit::c_vs_d(),
        &ClassifierSpec::default(),
        &PrepConfig::default(),
        &cfg,
        BudgetAxis::TrialsTestOnly,
        &[1.5],
    )
    .is_err());
}

#[test]
fn test_only_budget_keeps_separable_auc() {
    let ds = separable(10, 10, 0, 7);
    let rows = budget_ablation(
        &ds,
        &all_trials(),
        &ClassSplit::c_vs_d(),
        &ClassifierSpec::default(),
        &PrepConfig::default(),
        &small_cfg(),
        BudgetAxis::TrialsTestOnly,
        &[1.0, 0.25],
    )
    .unwrap();
    assert!((rows[0].auc - rows[1].auc).abs() <= 0.05, "{rows:?}");
}

#[test]
fn train_and_test_budget_degrades_a_weak_effect() {
    let mut cfg = SynthConfig::desk(Snr::Weak).with_groups(12, 12, 0);
    cfg.rng_seed = 8;
    let ds = generate(&cfg).unwrap();
    let rows = budget_ablation(
        &ds,
        &all_trials(),
        &ClassSplit::c_vs_d(),
        &ClassifierSpec::default(),
        &PrepConfig::default(),
        &small_cfg(),
        BudgetAxis::TrialsTrainTest,
        &[1.0, 0.1],
    )
    .unwrap();
    assert!(rows[0].auc - rows[1].auc >= 0.02, "{rows:?}");
}

#[test]
fn transfer_to_shared_effect_group() {
    let mut cfg = SynthConfig::desk(Snr::Strong).with_groups(8, 8, 8);
    cfg.rng_seed = 9;
    let ds = generate(&cfg).unwrap();
    let rep = transfer_eval(
        &ds,
        &all_trials(),
        &ClassSplit::c_vs_d(),
        &[Group::S],
        &ClassifierSpec::default(),
        &PrepConfig::default(),
        &small_cfg(),
    )
    .unwrap();
    assert_eq!(rep.groups, vec![Group::C, Group::D, Group::S]);
    let (c, d, s) = (rep.mean_p[0], rep.mean_p[1], rep.mean_p[2]);
    assert!(d > c);
    assert!((s - d).abs() <= 0.1, "P(S) {s} vs P(D) {d}");
    // D and S both at P = 1 leave nothing to test
    assert!(rep.ttests.len() == 3 || rep.ttest_error.is_some());
    assert!(transfer_eval(
        &ds,
        &all_trials(),
        &ClassSplit::c_vs_d(),
        &[Group::D],
        &ClassifierSpec::default(),
        &PrepConfig::default(),
        &small_cfg(),
    )
    .is_err());
}

/// Full-size cohort (49/47/50) whose only group difference is the agreement
/// rate: `agree_c` for controls, `agree_ds` for both depressed groups.
#[test]
fn transfer_ttests_on_a_weak_effect() {
    let mut cfg = SynthConfig::desk(Snr::Weak).with_groups(8, 8, 8);
    cfg.rng_seed = 11;
    let ds = generate(&cfg).unwrap();
    let rep = transfer_eval(
        &ds,
        &all_trials(),
        &ClassSplit::c_vs_d(),
        &[Group::S],
        &ClassifierSpec::default(),
        &PrepConfig::default(),
        &small_cfg(),
    )
    .unwrap();
    assert_eq!(rep.ttests.len(), 3, "{:?}", rep.ttest_error);
    assert_eq!(rep.n_per_group, vec![8, 8, 8]);
    for t in &rep.ttests {
        assert!(t.p_adj >= t.p_raw && t.p_adj <= 1.0);
    }
}

fn behavioral_cohort(agree_c: f64, agree_ds: f64, seed: u64) -> Dataset {
    let mut cfg = SynthConfig::desk(Snr::Null).with_groups(49, 47, 50);
    cfg.n_samples = 60;
    cfg.effects.clear();
    cfg.rng_seed = seed;
    let mut b = BehaviorSpec::uniform(agree_c);
    let ds = BehaviorSpec::uniform(agree_ds).agree_prob;
    b.agree_prob.insert(Group::D, ds[&Group::D].clone());
    b.agree_prob.insert(Group::S, ds[&Group::S].clone());
    cfg.behavior = b;
    generate(&cfg).unwrap()
}

#[test]
fn behavioral_baseline_separates_response_profiles() {
    let ds = behavioral_cohort(0.8, 0.2, 10);
    let r = behavioral_baseline(&ds, &ClassSplit::c_vs_ds(), &DecodeConfig::default(), 0).unwrap();
    assert!(r.auc >= 0.9, "auc {}", r.auc);
    assert_eq!(r.scores.len(), 146);
    assert_eq!(r.model.n_features(), 4);
}

#[test]
fn behavioral_baseline_null() {
    for seed in 0..20 {
        let ds = behavioral_cohort(0.5, 0.5, 100 + seed);
        let r = behavioral_baseline(&ds, &ClassSplit::c_vs_ds(), &DecodeConfig::default(), seed).unwrap();
        assert!((0.35..=0.65).contains(&r.auc), "seed {seed}: {}", r.auc);
    }
}

#[test]
fn response_target_units() {
    let mut cfg = SynthConfig::desk(Snr::Null).with_groups(4, 4, 0);
    cfg.behavior = BehaviorSpec::uniform(0.5);
    let ds = generate(&cfg).unwrap();
    let bc = BootstrapConfig {
        target_label: TargetLabel::Response,
        ..small_cfg()
    };
    let res = run_subject_classification(&ds, &all_trials(), &ClassSplit::c_vs_d(), &ClassifierSpec::default(), &PrepConfig::default(), &bc)
        .unwrap();
    assert_eq!(res.probabilities.len(), 16);
    assert!(res.probabilities[0].subject_id.ends_with(":agree"));
    assert_eq!(res.labels().iter().filter(|&&l| l).count(), 8);
    let contrast = TrialType::Contrast(GroupingSpec::new(Category::SentenceSentiment, Side::A));
    assert!(run_subject_classification(&ds, &contrast, &ClassSplit::c_vs_d(), &ClassifierSpec::default(), &PrepConfig::default(), &bc).is_err());
}
