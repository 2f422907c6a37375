use spcl::evaldet::instance_label_accuracy;
use spcl::harness::synth::{generate_synthetic, SynthConfig};
use spcl::trainer::{self, Ablation, Convergence, TrainConfig};
use spcl::Label;

fn separable() -> SynthConfig {
    SynthConfig {
        num_bags: 40,
        n_per_bag: 16,
        class_sep: 12.0,
        noise_sigma: 0.3,
        class_noise_skew: 0.0,
        background_sigma: 0.3,
        saliency_reliability: 1.0,
        ..SynthConfig::default()
    }
}

#[test]
fn separable_corpus_is_labeled_perfectly() {
    let data = generate_synthetic(&separable()).unwrap().train;
    let mut cfg = TrainConfig::default();
    cfg.pace.quota_fraction = 0.2;
    cfg.pace.growth = 3.0;
    let (_, state) = trainer::train(&data, &cfg).unwrap();
    assert!(state.converged, "not converged after {} iterations", state.iteration);
    assert!(state.iteration <= 5, "{} iterations", state.iteration);
    assert_eq!(instance_label_accuracy(&data, &state.labels).unwrap(), 1.0);
}

#[test]
fn without_alternation_is_no_better_on_separable_data() {
    for seed in 0..5 {
        let synth = SynthConfig { seed, ..separable() };
        let data = generate_synthetic(&synth).unwrap().train;
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let (_, full) = trainer::train(&data, &cfg).unwrap();
        let (_, base) = trainer::train(&data, &cfg.clone().with_ablations([Ablation::NoAlternation])).unwrap();
        let (a, b) = (
            instance_label_accuracy(&data, &full.labels).unwrap(),
            instance_label_accuracy(&data, &base.labels).unwrap(),
        );
        assert!(b <= a, "seed {seed}: {b} > {a}");
        assert_eq!(base.log.len(), 1);
    }
}

#[test]
fn one_iteration_gives_one_record() {
    let data = generate_synthetic(&SynthConfig { num_bags: 20, ..SynthConfig::default() }).unwrap().train;
    let cfg = TrainConfig {
        max_iters: 1,
        ..TrainConfig::default()
    };
    let (_, state) = trainer::train(&data, &cfg).unwrap();
    assert_eq!((state.iteration, state.log.len()), (1, 1));
    assert!(!state.converged);
}

#[test]
fn runs_are_deterministic_and_feasible() {
    let data = generate_synthetic(&SynthConfig { num_bags: 30, ..SynthConfig::default() }).unwrap().train;
    let cfg = TrainConfig {
        max_iters: 6,
        convergence: Convergence::MaxItersOnly,
        ..TrainConfig::default()
    };
    let (d1, s1) = trainer::train(&data, &cfg).unwrap();
    let (d2, s2) = trainer::train(&data, &cfg).unwrap();
    assert_eq!(d1, d2);
    assert_eq!(s1.log, s2.log);
    assert_eq!(s1.log.len(), 6);
    for (k, bag) in data.bags.iter().enumerate() {
        for &c in &bag.weak_labels {
            assert!(s1.labels.bag(k).contains(&Label::Class(c)));
        }
    }
    let quotas: Vec<f64> = s1.log.iter().map(|r| r.per_class[0].quota).collect();
    assert!(quotas.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn every_ablation_trains() {
    let data = generate_synthetic(&SynthConfig { num_bags: 20, ..SynthConfig::default() }).unwrap().train;
    for a in Ablation::ALL {
        let cfg = TrainConfig::default().with_ablations([a]);
        let (_, state) = trainer::train(&data, &cfg).unwrap();
        assert!(!state.log.is_empty(), "{}", a.name());
        if matches!(a, Ablation::NoDiversity | Ablation::BasicSpcl) {
            assert!(state.log.iter().flat_map(|r| &r.per_class).all(|p| p.gamma == 0.0));
        }
        if a == Ablation::BasicSpcl {
            for r in &state.log {
                assert!(r.per_class.windows(2).all(|w| w[0].lambda == w[1].lambda));
            }
        }
    }
}
