use hetero_rlhf::btl::sigmoid;
use hetero_rlhf::data::{split_corpus, Corpus, FeatureVector, PreferenceRecord, SplitTag};
use hetero_rlhf::eval::win_rate;
use hetero_rlhf::linalg::dot;
use hetero_rlhf::reward::{fit_cluster_theta, train_naive, TrainConfig};
use hetero_rlhf::sim::{bayes_win_rate, generate, GroundTruth, SimConfig};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn group_records(c: &Corpus, gt: &GroundTruth, g: usize) -> Vec<PreferenceRecord> {
    c.workers()
        .iter()
        .filter(|w| gt.latent_group_of[w.worker_id()] == g)
        .flat_map(|w| w.records().iter().cloned())
        .collect()
}

#[test]
fn argmax_mode_bayes_rate_is_one() {
    let cfg = SimConfig { preference_temperature: 0.0, n_latent_groups: 3, worker_noise: 0.0, ..SimConfig::default() };
    let (corpus, gt) = generate(&cfg).unwrap();
    for r in bayes_win_rate(&gt, &corpus).unwrap() {
        assert_eq!(r.win_rate, Some(1.0));
    }
}

#[test]
fn label_noise_matches_mean_btl_probability() {
    for (temp, s) in [(1.0, 0), (0.5, 1), (3.0, 2)] {
        let cfg = SimConfig {
            n_latent_groups: 1,
            worker_noise: 0.0,
            preference_temperature: temp,
            shared_reward_scale: 1.0,
            seed: s,
            ..SimConfig::default()
        };
        let (corpus, gt) = generate(&cfg).unwrap();
        let bb = gt.backbone();
        let theta = &gt.group_thetas[0];
        let mut hits = 0.0;
        let mut expected = 0.0;
        let mut var = 0.0;
        for r in corpus.records() {
            let gap = bb.score(theta, r.chosen.as_slice()) - bb.score(theta, r.rejected.as_slice());
            let p = sigmoid(gap.abs() / temp);
            hits += if gap > 0.0 { 1.0 } else { 0.0 };
            expected += p;
            var += p * (1.0 - p);
        }
        let se = var.sqrt();
        assert!((hits - expected).abs() <= 2.0 * se, "T={temp}: {hits} vs {expected} ± {se}");
    }
}

/// One-dimensional truth with margins of exactly ±1, labelled by hand.
fn unit_margin_fixture(shuffle: bool) -> (Corpus, GroundTruth) {
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let hi = FeatureVector::new(vec![0.5]).unwrap();
    let lo = FeatureVector::new(vec![-0.5]).unwrap();
    let records = (0..n)
        .map(|j| {
            let better_first = rng.random::<f64>() < sigmoid(1.0);
            let better_first = if shuffle { rng.random::<bool>() } else { better_first };
            let (c, r) = if better_first { (hi.clone(), lo.clone()) } else { (lo.clone(), hi.clone()) };
            PreferenceRecord::new(format!("p{j}"), "w0", c, r).unwrap()
        })
        .collect();
    let corpus = Corpus::from_records(records, 1, SplitTag::Unsplit)
        .unwrap()
        .with_provenance(Some("hand".into()));
    let gt = GroundTruth {
        provenance: "hand".into(),
        feature_dim: 1,
        embedding_dim: 1,
        u: vec![0.0],
        v: vec![1.0],
        group_thetas: vec![vec![1.0]],
        latent_group_of: IndexMap::from([("w0".to_string(), 0)]),
        worker_embeddings: IndexMap::from([("w0".to_string(), vec![1.0])]),
    };
    (corpus, gt)
}

#[test]
fn unit_margins_give_sigmoid_one() {
    let (corpus, gt) = unit_margin_fixture(false);
    let rate = bayes_win_rate(&gt, &corpus).unwrap()[0].win_rate.unwrap();
    let p = sigmoid(1.0);
    let se = (p * (1.0 - p) / corpus.n_records() as f64).sqrt();
    assert!((rate - 0.731).abs() < 3.0 * se + 1e-3, "{rate}");
}

#[test]
fn shuffled_labels_give_one_half() {
    let (corpus, gt) = unit_margin_fixture(true);
    let rate = bayes_win_rate(&gt, &corpus).unwrap()[0].win_rate.unwrap();
    let se = (0.25 / corpus.n_records() as f64).sqrt();
    assert!((rate - 0.5).abs() < 3.0 * se, "{rate}");
}

#[test]
fn homogeneous_fit_approaches_bayes_rate() {
    let cfg = SimConfig { n_latent_groups: 1, worker_noise: 0.0, seed: 2, ..SimConfig::default() };
    let (corpus, gt) = generate(&cfg).unwrap();
    let (train, test) = split_corpus(&corpus, 0.8, 0).unwrap();
    let naive = train_naive(&train, &TrainConfig::default()).unwrap();
    let fitted = win_rate("naive", test.records(), |x| dot(&naive.w, x.as_slice())).win_rate.unwrap();
    let bayes = bayes_win_rate(&gt, &test.with_provenance(Some(gt.provenance.clone()))).unwrap()[0]
        .win_rate
        .unwrap();
    assert!((bayes - fitted).abs() < 0.03, "fitted {fitted} vs bayes {bayes}");
}

#[test]
fn antipodal_model_loses_on_the_other_group() {
    let (corpus, gt) = generate(&SimConfig { seed: 4, ..SimConfig::default() }).unwrap();
    let (train, test) = split_corpus(&corpus, 0.8, 0).unwrap();
    let bb = gt.backbone();
    let model = fit_cluster_theta(&group_records(&train, &gt, 0), &bb, &[0.0; 8], &TrainConfig::default()).unwrap();
    let other = group_records(&test, &gt, 1);
    let rate = win_rate("g0 on g1", &other, |x| bb.score(&model.theta, x.as_slice())).win_rate.unwrap();
    assert!(rate < 0.5, "{rate}");
    let own = group_records(&test, &gt, 0);
    assert!(win_rate("g0 on g0", &own, |x| bb.score(&model.theta, x.as_slice())).win_rate.unwrap() > 0.5);
}

#[test]
fn cross_group_rate_falls_with_separation() {
    let mut rates = Vec::new();
    for phi in [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI] {
        let (corpus, gt) = generate(&SimConfig { group_separation: phi, seed: 8, ..SimConfig::default() }).unwrap();
        rates.push(gt.cross_group_win_rate(&corpus, 0).unwrap()[1].win_rate.unwrap());
    }
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
    assert!(rates[2] < 0.5 && rates[0] > 0.5);
}
