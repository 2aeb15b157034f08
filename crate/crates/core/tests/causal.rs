mod common;

use common::*;
use dagmix::causal::{
    causal_effect, intervene, joint_distribution, natural_direct_effect, sample_data, EffectQuery, Intervention,
};
use dagmix::model::{param_layout, parse_model};
use dagmix::random::random_beta;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn intervention_matches_back_door_adjustment() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    for _ in 0..60 {
        let n = rng.random_range(2..=5);
        let m = random_binary_dag(&mut rng, n);
        let l = param_layout(&m);
        let beta = random_beta(&m, &l, &mut rng, 2.0);
        let x = rng.random_range(0..n - 1);
        let y = rng.random_range(x + 1..n);
        let xv = rng.random_range(0..2);
        // observational joint by direct enumeration
        let joint: Vec<(Vec<usize>, f64)> = binary_cells(n)
            .map(|z| {
                let p = (0..n)
                    .map(|i| {
                        let q = binary_prob(&m, &l, &beta, i, &z);
                        if z[i] == 1 {
                            q
                        } else {
                            1.0 - q
                        }
                    })
                    .product();
                (z, p)
            })
            .collect();
        let pa = &m.nodes[x].parents;
        // sum_pa P(y=1 | x, pa) P(pa)
        let mut oracle = 0.0;
        for cfg in binary_cells(pa.len()) {
            let matches_pa = |z: &[usize]| pa.iter().zip(&cfg).all(|(&p, &v)| z[p] == v);
            let p_pa: f64 = joint.iter().filter(|(z, _)| matches_pa(z)).map(|c| c.1).sum();
            let p_x_pa: f64 = joint
                .iter()
                .filter(|(z, _)| matches_pa(z) && z[x] == xv)
                .map(|c| c.1)
                .sum();
            let p_y_x_pa: f64 = joint
                .iter()
                .filter(|(z, _)| matches_pa(z) && z[x] == xv && z[y] == 1)
                .map(|c| c.1)
                .sum();
            if p_x_pa > 0.0 {
                oracle += p_y_x_pa / p_x_pa * p_pa;
            }
        }
        let t = intervene(&m, &l, &beta, &Intervention::new(vec![(x, xv)]), &[]).unwrap();
        let py = t.marginalize(&[y]).unwrap().values()[1];
        assert!((py - oracle).abs() < 1e-10, "{py} vs {oracle}");
        checked += 1;
    }
    assert_eq!(checked, 60);
}

#[test]
fn empty_intervention_is_the_joint() {
    let (m, l, beta) = chain();
    let a = intervene(&m, &l, &beta, &Intervention::default(), &[]).unwrap();
    let b = joint_distribution(&m, &l, &beta, &[]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn intervening_on_a_sink_leaves_other_marginals() {
    let (m, l, beta) = chain();
    let joint = joint_distribution(&m, &l, &beta, &[]).unwrap();
    let t = intervene(&m, &l, &beta, &Intervention::new(vec![(2, 1)]), &[]).unwrap();
    for v in [0, 1] {
        let a = t.marginalize(&[v]).unwrap();
        let b = joint.marginalize(&[v]).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}

#[test]
fn worked_chain_and_mediation_values() {
    let (m, l, beta) = chain();
    let q = EffectQuery {
        outcome: 2,
        treatment: vec![0],
        x1: vec![1],
        x0: vec![0],
        mediators: vec![],
        thresholds: vec![1],
    };
    let r = causal_effect(&m, &l, &beta, &q, &[]).unwrap();
    assert!((r[0] - 0.78 / 0.42).abs() < 1e-12);
    let same = EffectQuery {
        x1: vec![0],
        ..q.clone()
    };
    assert_eq!(causal_effect(&m, &l, &beta, &same, &[]).unwrap(), vec![1.0]);
    // every X -> Y path runs through M
    let nde = natural_direct_effect(
        &m,
        &l,
        &beta,
        &EffectQuery {
            mediators: vec![1],
            ..q
        },
        &[],
    )
    .unwrap();
    assert!((nde[0] - 1.0).abs() < 1e-12);

    let (m, l, beta) = mediation();
    let q = EffectQuery {
        outcome: 2,
        treatment: vec![0],
        x1: vec![1],
        x0: vec![0],
        mediators: vec![1],
        thresholds: vec![1],
    };
    let r = natural_direct_effect(&m, &l, &beta, &q, &[]).unwrap();
    assert!((r[0] - 0.66 / 0.26).abs() < 1e-12);
}

#[test]
fn direct_effect_equals_total_when_outcome_ignores_mediator() {
    let m = parse_model(
        r#"{"nodes":[
            {"name":"X","categories":3,"link":"adjacent"},
            {"name":"M","categories":2,"link":"global","parents":["X"]},
            {"name":"Y","categories":4,"link":"global","parents":["X"]}]}"#,
    )
    .unwrap();
    let l = param_layout(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let beta = random_beta(&m, &l, &mut rng, 1.5);
    let q = EffectQuery {
        outcome: 2,
        treatment: vec![0],
        x1: vec![2],
        x0: vec![0],
        mediators: vec![],
        thresholds: vec![1, 2, 3],
    };
    let te = causal_effect(&m, &l, &beta, &q, &[]).unwrap();
    let nde = natural_direct_effect(
        &m,
        &l,
        &beta,
        &EffectQuery {
            mediators: vec![1],
            ..q
        },
        &[],
    )
    .unwrap();
    for (a, b) in te.iter().zip(&nde) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn sampler_matches_joint() {
    let (m, l, beta) = chain();
    let n = 200_000;
    let s = sample_data(&m, &l, &beta, n, 17, &[]).unwrap();
    let joint = joint_distribution(&m, &l, &beta, &[]).unwrap();
    let mut counts = [0.0; 8];
    for r in &s.data.records {
        counts[r.categories[0] * 4 + r.categories[1] * 2 + r.categories[2]] += 1.0;
    }
    for (c, p) in counts.iter().zip(joint.values()) {
        assert!((c / n as f64 - p).abs() < 0.005);
    }
    let single = parse_model(r#"{"nodes":[{"name":"Z","categories":2,"link":"global"}]}"#).unwrap();
    let s = sample_data(&single, &param_layout(&single), &[0.0], 100_000, 3, &[]).unwrap();
    let mean = s.data.records.iter().map(|r| r.categories[0] as f64).sum::<f64>() / 1e5;
    assert!((mean - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt());
    let one = sample_data(&m, &l, &beta, 1, 3, &[]).unwrap();
    assert_eq!(one.data.records.len(), 1);
    assert_eq!(one.data.records[0].categories.len(), 3);
}
