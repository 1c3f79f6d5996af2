use softseg::models::{fit_method, gradient_check};
use softseg::benchgen::generate_benchmark;
use softseg::{evaluate, regret, BenchConfig, DecisionLibrary, Family, FitConfig, Method, TruthMode, WeightModel};

fn small(seed: u64) -> BenchConfig {
    BenchConfig { n_total: 900, n_train: 600, d_sig: 2, d_nuis: 2, m: 12, j: 3, ..BenchConfig::panel_a(seed) }
}

fn fast() -> FitConfig {
    FitConfig { restarts: 1, max_epochs: 200, ..FitConfig::default() }
}

#[test]
fn regret_matches_a_hand_worked_library() {
    let lib = DecisionLibrary::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.6]]).unwrap();
    // true scores 1.0, 0.0, 0.6; estimated 0.3, 0.5, 0.48
    let r = regret(&[1.0, 0.0], &[0.3, 0.5], &lib).unwrap();
    assert_eq!((r.oracle_index, r.chosen_index), (0, 1));
    assert!((r.regret - 1.0).abs() < 1e-15);
    assert!((r.margin_gamma - 0.4).abs() < 1e-15);
    assert!(r.satisfies_transfer_bound());
}

#[test]
fn true_weights_give_zero_regret() {
    let b = generate_benchmark(&small(3), Family::TwoExpert, TruthMode::Soft).unwrap();
    let s = softseg::eval::evaluate_predictor(|x| b.truth.weight(x).unwrap(), &b.eval, &b.library).unwrap();
    assert_eq!(s.mean_regret, 0.0);
    assert_eq!(s.weight_mse, 0.0);
    assert_eq!(s.match_rate, 1.0);
}

#[test]
fn fitted_models_obey_the_transfer_bound_and_round_trip() {
    let b = generate_benchmark(&small(2), Family::TwoExpert, TruthMode::Soft).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for method in [Method::Pooled, Method::Otss, Method::Cluster] {
        let cfg = FitConfig { k: 2, ..fast() };
        let model = fit_method(method, &b.train, &b.val, &cfg).unwrap();
        let s = evaluate(&model, &b.eval, &b.library).unwrap();
        assert!(s.mean_regret.is_finite() && s.mean_regret >= 0.0);
        assert_eq!(s.transfer_violations, 0, "{method}");
        let path = dir.path().join(format!("{method}.json"));
        model.save(&path).unwrap();
        let back = WeightModel::load(&path).unwrap();
        for p in &b.eval[..20] {
            assert_eq!(back.predict_w(&p.context), model.predict_w(&p.context));
        }
    }
}

#[test]
fn otss_with_one_expert_is_pooled() {
    let b = generate_benchmark(&small(4), Family::TwoExpert, TruthMode::Soft).unwrap();
    let pooled = fit_method(Method::Pooled, &b.train, &b.val, &fast()).unwrap();
    let otss = fit_method(Method::Otss, &b.train, &b.val, &FitConfig { k: 1, ..fast() }).unwrap();
    let a = evaluate(&pooled, &b.eval, &b.library).unwrap().mean_regret;
    let c = evaluate(&otss, &b.eval, &b.library).unwrap().mean_regret;
    assert!((a - c).abs() <= 0.005, "pooled {a} otss(K=1) {c}");
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let b = generate_benchmark(&small(5), Family::TwoExpert, TruthMode::Soft).unwrap();
    assert!(gradient_check(Method::Otss, &b.train, &b.val, 2, 10, 1).unwrap() < 1e-4);
    assert!(gradient_check(Method::Mlp, &b.train, &b.val, 0, 10, 1).unwrap() < 1e-4);
    assert!(gradient_check(Method::Pooled, &b.train, &b.val, 1, 10, 1).is_err());
}

#[test]
fn matched_k_hard_truth_has_one_hot_gates() {
    let bc = BenchConfig { k: 3, ..small(6) };
    let b = generate_benchmark(&bc, Family::MatchedK, TruthMode::Hard).unwrap();
    for p in &b.eval[..50] {
        let g = b.truth.gate(&p.context);
        assert_eq!(g.iter().filter(|&&a| a == 1.0).count(), 1);
        assert_eq!(g.iter().sum::<f64>(), 1.0);
    }
}
