use hetero_rlhf::clustering::{
    adjusted_rand_index, assign_workers, pca_project, run_algorithm1, spherical_kmeans, worker_log_likelihoods,
    ClusterAssignment, Init,
};
use hetero_rlhf::data::split_corpus;
use hetero_rlhf::eval::{compare_models, EvalScope};
use hetero_rlhf::reward::{
    fit_cluster_theta, fit_theta_design, reward_personal, train_joint, train_naive, ClusterModel, SharedBackbone, ThetaDesign,
    TrainConfig, WorkerEmbedding,
};
use hetero_rlhf::seed;
use hetero_rlhf::sim::{generate, GroundTruth, SimConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(groups: usize, seed_value: u64) -> SimConfig {
    SimConfig {
        n_workers: 30,
        n_latent_groups: groups,
        feature_dim: 16,
        embedding_dim: 8,
        pairs_per_worker: 200,
        group_separation: std::f64::consts::PI,
        worker_noise: 0.1,
        preference_temperature: 1.0,
        seed: seed_value,
        ..SimConfig::default()
    }
}

fn truth(gt: &GroundTruth) -> ClusterAssignment {
    let ids: Vec<&String> = gt.latent_group_of.keys().collect();
    ClusterAssignment::from_labels(gt.n_groups(), &ids, &gt.labels()).unwrap()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn pca_reconstruction_error_is_trailing_eigenvalue_mass() {
    for trial in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let (n, m) = (40, 16);
        let embs: Vec<WorkerEmbedding> = (0..n)
            .map(|i| WorkerEmbedding {
                worker_id: format!("w{i}"),
                // anisotropic so the leading axes are well separated
                e: (0..m).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64 * 0.3)).collect(),
            })
            .collect();
        let mean: Vec<f64> = (0..m).map(|j| embs.iter().map(|e| e.e[j]).sum::<f64>() / n as f64).collect();
        let cov: Vec<Vec<f64>> = (0..m)
            .map(|a| {
                (0..m)
                    .map(|b| embs.iter().map(|e| (e.e[a] - mean[a]) * (e.e[b] - mean[b])).sum::<f64>() / n as f64)
                    .collect()
            })
            .collect();
        let oracle = jacobi_eigenvalues(cov);
        let trailing: f64 = oracle[2..].iter().sum();

        let p = pca_project(&embs, 2).unwrap();
        for (a, b) in p.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "eigenvalue {a} vs oracle {b}");
        }
        let mut err = 0.0;
        for (e, (_, c)) in embs.iter().zip(&p.coords) {
            for j in 0..m {
                let rec: f64 = p.components.iter().zip(c).map(|(comp, ck)| ck * comp[j]).sum();
                err += (e.e[j] - mean[j] - rec).powi(2);
            }
        }
        err /= n as f64;
        assert!((err - trailing).abs() < 1e-8, "trial {trial}: reconstruction {err} vs oracle {trailing}");
    }
}

#[test]
fn assign_workers_examples() {
    let (corpus, gt) = generate(&fixture(2, 3)).unwrap();
    let bb = gt.backbone();
    let single = vec![ClusterModel { index: 0, theta: vec![0.3; 8], norm_bound: 5.0 }];
    let a = assign_workers(&corpus, &bb, &single).unwrap();
    assert!(a.labels().iter().all(|&l| l == 0));

    let twins = vec![single[0].clone(), ClusterModel { index: 1, ..single[0].clone() }];
    let a = assign_workers(&corpus, &bb, &twins).unwrap();
    assert!(a.labels().iter().all(|&l| l == 0));

    // true group parameters give the latent labels, and each worker's label
    // agrees with a direct likelihood comparison
    let oracle: Vec<ClusterModel> = gt
        .group_thetas
        .iter()
        .enumerate()
        .map(|(index, t)| ClusterModel { index, theta: t.clone(), norm_bound: 5.0 })
        .collect();
    let a = assign_workers(&corpus, &bb, &oracle).unwrap();
    assert_eq!(a, truth(&gt));
    for w in corpus.workers() {
        let ll: Vec<f64> = gt
            .group_thetas
            .iter()
            .map(|t| {
                w.records()
                    .iter()
                    .map(|r| {
                        let m = reward_personal(&bb, t, r.chosen.as_slice()).unwrap()
                            - reward_personal(&bb, t, r.rejected.as_slice()).unwrap();
                        -(1.0 + (-m).exp()).ln()
                    })
                    .sum()
            })
            .collect();
        let best = if ll[1] > ll[0] { 1 } else { 0 };
        assert_eq!(a.get(w.worker_id()), Some(best));
    }
}

#[test]
fn assignment_ignores_monotone_rescoring() {
    let (corpus, gt) = generate(&fixture(2, 4)).unwrap();
    let bb = gt.backbone();
    let models: Vec<ClusterModel> = (0..3)
        .map(|k| ClusterModel { index: k, theta: vec![0.2 * k as f64 - 0.2; 8], norm_bound: 5.0 })
        .collect();
    let scores = worker_log_likelihoods(&corpus, &bb, &models).unwrap();
    let a = assign_workers(&corpus, &bb, &models).unwrap();
    for (w, s) in corpus.workers().iter().zip(&scores) {
        let warped: Vec<f64> = s.iter().map(|x| (x / 100.0).exp() * 7.0 - 3.0).collect();
        let best = (0..warped.len()).fold(0, |b, k| if warped[k] > warped[b] { k } else { b });
        assert_eq!(a.get(w.worker_id()), Some(best));
    }
}

#[test]
fn single_cluster_is_one_pooled_fit() {
    let (corpus, gt) = generate(&fixture(2, 5)).unwrap();
    let bb = gt.backbone();
    let cfg = TrainConfig { seed: 11, ..TrainConfig::default() };
    let init = Init::Random { seed: 0 };
    let res = run_algorithm1(&corpus, &bb, 1, &cfg, init, 20).unwrap();
    assert_eq!(res.trace.rows.len(), 1);
    assert!(res.converged);

    let all: Vec<_> = corpus.records().cloned().collect();
    let direct = fit_theta_design(
        &ThetaDesign::new(&all, &bb).unwrap(),
        &[0.0; 8],
        &TrainConfig { seed: seed::derive(cfg.seed, 1), ..cfg },
    )
    .unwrap();
    assert_eq!(res.models[0].theta, direct.theta);
}

#[test]
fn too_many_clusters_is_a_config_error() {
    let (corpus, gt) = generate(&SimConfig { n_workers: 3, n_latent_groups: 1, ..fixture(1, 0) }).unwrap();
    let err = run_algorithm1(&corpus, &gt.backbone(), 4, &TrainConfig::default(), Init::Random { seed: 0 }, 5);
    assert!(matches!(err, Err(hetero_rlhf::Error::InvalidConfig(_))));
}

#[test]
fn trace_is_monotone_and_ends_at_fixed_point() {
    let cfg = TrainConfig::default();
    for (groups, s) in [(1, 0), (2, 1), (2, 2), (3, 3)] {
        let (corpus, gt) = generate(&fixture(groups, s)).unwrap();
        let bb = gt.backbone();
        for init in [Init::Random { seed: s }, Init::Random { seed: s + 100 }] {
            let res = run_algorithm1(&corpus, &bb, 2, &cfg, init, 20).unwrap();
            assert!(res.trace.is_monotone(), "groups {groups} seed {s}: {:?}", res.trace);
            assert!(res.trace.rows.len() <= 20);
            if res.converged {
                let again = assign_workers(&corpus, &bb, &res.models).unwrap();
                assert_eq!(again, res.assignment);
            }
            assert!(res.models.iter().all(|m| m.theta_norm() <= cfg.norm_bound + 1e-9));
        }
    }
}

#[test]
fn opposed_groups_are_recovered() {
    let (corpus, gt) = generate(&fixture(2, 0)).unwrap();
    let (train, _) = split_corpus(&corpus, 0.8, 0).unwrap();
    let cfg = TrainConfig::default();
    let (bb, embs) = train_joint(&train, &cfg, 8).unwrap();

    let km = spherical_kmeans(&embs, 2, 0, 100).unwrap();
    assert!(adjusted_rand_index(&km.assignment, &truth(&gt)).unwrap() >= 0.9);

    let init = Init::KMeans { embeddings: &embs, seed: 0, max_iters: 100 };
    let res = run_algorithm1(&train, &bb, 2, &cfg, init, 20).unwrap();
    assert!(adjusted_rand_index(&res.assignment, &truth(&gt)).unwrap() >= 0.9);

    // with the true backbone and a random start the alternation alone finds the groups
    let res = run_algorithm1(&train, &gt.backbone(), 2, &cfg, Init::Random { seed: 9 }, 20).unwrap();
    assert!(adjusted_rand_index(&res.assignment, &truth(&gt)).unwrap() >= 0.9);
}

#[test]
fn homogeneous_clusters_agree_on_shared_test_data() {
    let (corpus, _) = generate(&fixture(1, 6)).unwrap();
    let (train, test) = split_corpus(&corpus, 0.8, 0).unwrap();
    let cfg = TrainConfig::default();
    let (bb, embs) = train_joint(&train, &cfg, 8).unwrap();
    let init = Init::KMeans { embeddings: &embs, seed: 0, max_iters: 100 };
    let res = run_algorithm1(&train, &bb, 2, &cfg, init, 20).unwrap();
    let naive = train_naive(&train, &cfg).unwrap();
    let t = compare_models(&test, &naive, &bb, &res.models, &res.assignment, EvalScope::FullData).unwrap();
    let a = t.clusters[0].win_rate.unwrap();
    let b = t.clusters[1].win_rate.unwrap();
    assert!((a - b).abs() <= 0.02, "{a} vs {b}");
}

#[test]
fn fitted_theta_prefers_its_own_population() {
    let (corpus, gt) = generate(&fixture(2, 7)).unwrap();
    let (train, test) = split_corpus(&corpus, 0.8, 0).unwrap();
    let bb = gt.backbone();
    let by_group = |c: &hetero_rlhf::data::Corpus, g: usize| -> Vec<_> {
        c.workers()
            .iter()
            .filter(|w| gt.latent_group_of[w.worker_id()] == g)
            .flat_map(|w| w.records().iter().cloned())
            .collect()
    };
    let cfg = TrainConfig::default();
    let t0 = fit_cluster_theta(&by_group(&train, 0), &bb, &[0.0; 8], &cfg).unwrap();
    let t1 = fit_cluster_theta(&by_group(&train, 1), &bb, &[0.0; 8], &cfg).unwrap();
    let hold0 = ThetaDesign::new(&by_group(&test, 0), &bb).unwrap();
    assert!(hold0.log_likelihood(&t0.theta) > hold0.log_likelihood(&t1.theta));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fitted_theta_respects_the_norm_bound(
        seed_value in 0u64..1_000,
        bound in 0.01f64..3.0,
        lr in 0.01f64..2.0,
        epochs in 1usize..6,
        batch in 1usize..64,
        init_scale in 0.0f64..20.0,
    ) {
        let sim = SimConfig {
            n_workers: 4, n_latent_groups: 2, feature_dim: 6, embedding_dim: 3,
            pairs_per_worker: 20, worker_noise: 0.5, seed: seed_value, ..SimConfig::default()
        };
        let (corpus, gt) = generate(&sim).unwrap();
        let recs: Vec<_> = corpus.records().cloned().collect();
        let mut bb: SharedBackbone = gt.backbone();
        bb.v.as_mut_slice().iter_mut().for_each(|x| *x *= 5.0);
        let cfg = TrainConfig {
            learning_rate: lr, epochs, batch_size: batch, seed: seed_value, norm_bound: bound,
            ..TrainConfig::default()
        };
        let init = vec![init_scale; 3];
        let model = fit_cluster_theta(&recs, &bb, &init, &cfg).unwrap();
        prop_assert!(model.theta_norm() <= bound + 1e-9, "norm {} > {}", model.theta_norm(), bound);
    }
}
