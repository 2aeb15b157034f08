mod common;

use common::*;
use dagmix::causal::{joint_distribution, sample_data};
use dagmix::em::{e_step, fit, fit_from, m_step, FitOptions, Workspace};
use dagmix::inference::fit_standard_errors;
use dagmix::model::{param_layout, parse_model, ModelSpec};
use dagmix::random::{random_beta, random_model};
use dagmix::relabel::{align_to, relabel_latent};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random observed model with binary and ternary nodes.
fn random_observed(rng: &mut ChaCha8Rng, n: usize) -> ModelSpec {
    let nodes: Vec<String> = (0..n)
        .map(|i| {
            let parents: Vec<String> = (0..i)
                .filter(|_| rng.random_bool(0.5))
                .map(|j| format!("\"Z{}\"", j + 1))
                .collect();
            let c = rng.random_range(2..=3);
            format!(
                r#"{{"name":"Z{}","categories":{c},"link":"global","parents":[{}]}}"#,
                i + 1,
                parents.join(",")
            )
        })
        .collect();
    parse_model(&format!(r#"{{"nodes":[{}]}}"#, nodes.join(","))).unwrap()
}

#[test]
fn fully_observed_fit_matches_direct_logistic_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0;
    for _ in 0..10 {
        let n_nodes = rng.random_range(2..=4);
        let m = random_observed(&mut rng, n_nodes);
        let l = param_layout(&m);
        let truth = random_beta(&m, &l, &mut rng, 1.0);
        let data = simulate(&m, &truth, 4000, rng.random());
        let r = fit(&m, &data, &FitOptions::default()).unwrap();
        assert!(r.converged);
        for i in 0..m.n_nodes() {
            if m.nodes[i].n_categories != 2 {
                continue;
            }
            // design: intercept, then I(z_j >= l) per parent level
            let obs_pos = |v: usize| m.observed().iter().position(|&u| u == v).unwrap();
            let mut x = Vec::new();
            let mut y = Vec::new();
            for rec in &data.records {
                let mut row = vec![1.0];
                for &p in &m.nodes[i].parents {
                    let z = rec.categories[obs_pos(p)];
                    for level in 1..m.nodes[p].n_categories {
                        row.push(f64::from(u8::from(z >= level)));
                    }
                }
                x.push(row);
                y.push(rec.categories[obs_pos(i)] as f64);
            }
            let oracle = logistic_fit(&x, &y).expect("oracle converges");
            let fitted = &r.beta[l.blocks[i].range()];
            for (a, b) in fitted.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-6, "node {i}: {fitted:?} vs {oracle:?}");
            }
            compared += 1;
        }
    }
    assert!(compared >= 5);
}

#[test]
fn saturated_fit_reproduces_empirical_frequencies() {
    // explicit identity designs make every conditional saturated
    let m = parse_model(
        r#"{"nodes":[
            {"name":"A","categories":3,"link":"adjacent"},
            {"name":"B","categories":2,"link":"global","parents":["A"],
             "design":[[1,0,0],[0,1,0],[0,0,1]]},
            {"name":"C","categories":2,"link":"continuation","parents":["A","B"],
             "design":[[1,0,0,0,0,0],[0,1,0,0,0,0],[0,0,1,0,0,0],
                       [0,0,0,1,0,0],[0,0,0,0,1,0],[0,0,0,0,0,1]]}]}"#,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<(Vec<usize>, f64)> = (0..3)
        .flat_map(|a| (0..2).flat_map(move |b| (0..2).map(move |c| vec![a, b, c])))
        .map(|cell| (cell, rng.random_range(1..40) as f64))
        .collect();
    let total: f64 = rows.iter().map(|r| r.1).sum();
    let data = grouped(&m, &rows);
    let r = fit(&m, &data, &FitOptions::default()).unwrap();
    let joint = joint_distribution(&m, &param_layout(&m), &r.beta, &[]).unwrap();
    for (cell, w) in &rows {
        let p = joint.get(cell).unwrap();
        assert!((p - w / total).abs() < 1e-10, "{cell:?}: {p} vs {}", w / total);
    }
}

#[test]
fn doubling_weights_leaves_m_step_unchanged() {
    let m = lca(3);
    let l = param_layout(&m);
    let data = simulate(&m, &lca3_truth(), 500, 3);
    let mut doubled = data.clone();
    for r in &mut doubled.records {
        r.weight *= 2.0;
    }
    let start = lca3_truth();
    let (c1, _) = e_step(&m, &start, &data).unwrap();
    let (c2, _) = e_step(&m, &start, &doubled).unwrap();
    let b1 = m_step(&m, &c1).unwrap();
    let b2 = m_step(&m, &c2).unwrap();
    assert_eq!(b1.len(), l.len());
    for (a, b) in b1.iter().zip(&b2) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn lca_recovers_parameters_within_three_standard_errors() {
    let m = lca(3);
    let l = param_layout(&m);
    let truth = lca3_truth();
    let data = simulate(&m, &truth, 5000, 77);
    let opts = FitOptions {
        seed: 11,
        ..FitOptions::default()
    };
    let r = fit(&m, &data, &opts).unwrap();
    assert!(r.converged);
    let est = align_to(&m, &l, &r.beta, &truth);
    let se = fit_standard_errors(&m, &est, &data).unwrap();
    for k in 0..truth.len() {
        assert!(
            (est[k] - truth[k]).abs() < 3.0 * se[k],
            "{k}: {} vs {} (se {})",
            est[k],
            truth[k],
            se[k]
        );
    }
}

#[test]
fn relabeled_start_gives_relabeled_solution() {
    let m = lca(3);
    let l = param_layout(&m);
    let data = simulate(&m, &lca3_truth(), 1000, 8);
    let opts = FitOptions {
        tol_loglik: 1e-12,
        tol_param: 1e-9,
        ..FitOptions::default()
    };
    let start = vec![0.1, -0.5, 1.0, -0.2, 0.8, 0.3, -0.7];
    let a = fit_from(&m, &data, &start, &opts).unwrap();
    let swapped = relabel_latent(&m, &l, &start, 0, &[1, 0]).unwrap();
    let b = fit_from(&m, &data, &swapped, &opts).unwrap();
    assert!((a.loglik - b.loglik).abs() < 1e-10);
    let back = relabel_latent(&m, &l, &b.beta, 0, &[1, 0]).unwrap();
    for (x, y) in a.beta.iter().zip(&back) {
        assert!((x - y).abs() < 1e-5, "{:?} vs {:?}", a.beta, back);
    }
}

#[test]
fn fit_is_reproducible_for_a_seed() {
    let m = lca(3);
    let data = simulate(&m, &lca3_truth(), 400, 1);
    let opts = FitOptions {
        n_restarts: 4,
        seed: 99,
        ..FitOptions::default()
    };
    let a = fit(&m, &data, &opts).unwrap();
    let b = fit(&m, &data, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unidentified_fit_reports_singular_information() {
    let m = lca(2);
    let data = simulate(&m, &[0.2, -1.0, 2.0, -1.0, 2.0], 500, 4);
    let r = fit(
        &m,
        &data,
        &FitOptions {
            n_restarts: 2,
            ..FitOptions::default()
        },
    )
    .unwrap();
    let err = fit_standard_errors(&m, &r.beta, &data).unwrap_err();
    assert_eq!(err.kind(), "singular_information");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_trace_never_decreases(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=5);
        let m = random_model(&mut rng, n, 2, 3);
        let l = param_layout(&m);
        let truth = random_beta(&m, &l, &mut rng, 1.5);
        let data = sample_data(&m, &l, &truth, 300, rng.random(), &[]).unwrap().data;
        let opts = FitOptions { n_restarts: 1, max_iter: 300, seed, ..FitOptions::default() };
        let r = fit(&m, &data, &opts).unwrap();
        for w in r.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn completed_table_reproduces_observed_counts(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=5);
        let m = random_model(&mut rng, n, 2, 3);
        let l = param_layout(&m);
        let beta = random_beta(&m, &l, &mut rng, 1.5);
        let data = sample_data(&m, &l, &beta, 200, rng.random(), &[]).unwrap().data;
        let ws = Workspace::from_data(&m, &data).unwrap();
        let (completed, _) = ws.e_step(&beta, Default::default()).unwrap();
        for s in 0..completed.strata.len() {
            for (a, b) in completed.observed_margin(s).iter().zip(&completed.strata[s].counts) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
