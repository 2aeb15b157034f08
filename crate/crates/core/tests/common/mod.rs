#![allow(dead_code)]

use dagmix::causal::sample_data;
use dagmix::data::{Dataset, Record};
use dagmix::links::logit;
use dagmix::model::{param_layout, parse_model, ModelSpec, ParamLayout};

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Binary latent class model with `k` binary indicators.
pub fn lca(k: usize) -> ModelSpec {
    let mut nodes = vec![r#"{"name":"U","categories":2,"latent":true,"link":"adjacent"}"#.to_string()];
    for j in 0..k {
        nodes.push(format!(
            r#"{{"name":"Y{}","categories":2,"link":"global","parents":["U"]}}"#,
            j + 1
        ));
    }
    parse_model(&format!(r#"{{"nodes":[{}]}}"#, nodes.join(","))).unwrap()
}

/// Well separated classes: indicators mostly agree with the class.
pub fn lca3_truth() -> Vec<f64> {
    vec![0.4, -1.5, 3.0, -1.0, 2.5, 1.2, -2.6]
}

/// X -> M -> Y with P(X=1)=.5, P(M=1|X)=.2/.8, P(Y=1|M)=.3/.9.
pub fn chain() -> (ModelSpec, ParamLayout, Vec<f64>) {
    let m = parse_model(
        r#"{"nodes":[
            {"name":"X","categories":2,"link":"global"},
            {"name":"M","categories":2,"link":"global","parents":["X"]},
            {"name":"Y","categories":2,"link":"global","parents":["M"]}]}"#,
    )
    .unwrap();
    let l = param_layout(&m);
    let beta = vec![
        0.0,
        logit(0.2),
        logit(0.8) - logit(0.2),
        logit(0.3),
        logit(0.9) - logit(0.3),
    ];
    (m, l, beta)
}

/// X -> M, X -> Y, M -> Y with P(M=1|X=0)=.3, P(M=1|X=1)=.6 and
/// P(Y=1|X,M) = .2/.4/.6/.8 for (0,0)/(0,1)/(1,0)/(1,1).
pub fn mediation() -> (ModelSpec, ParamLayout, Vec<f64>) {
    let m = parse_model(
        r#"{"nodes":[
            {"name":"X","categories":2,"link":"global"},
            {"name":"M","categories":2,"link":"global","parents":["X"]},
            {"name":"Y","categories":2,"link":"global","parents":["X","M"]}]}"#,
    )
    .unwrap();
    let l = param_layout(&m);
    let beta = vec![
        0.3,
        logit(0.3),
        logit(0.6) - logit(0.3),
        logit(0.2),
        logit(0.6) - logit(0.2),
        logit(0.4) - logit(0.2),
    ];
    (m, l, beta)
}

/// `P(Z_i = 1 | parents)` for an all-binary model, read directly from the
/// coefficient block (intercept, then one slope per parent).
pub fn binary_prob(model: &ModelSpec, layout: &ParamLayout, beta: &[f64], node: usize, z: &[usize]) -> f64 {
    let b = &beta[layout.blocks[node].range()];
    let lam = b[0]
        + model.nodes[node]
            .parents
            .iter()
            .enumerate()
            .map(|(k, &p)| b[k + 1] * z[p] as f64)
            .sum::<f64>();
    expit(lam)
}

/// All assignments of `n` binary variables, first variable slowest.
pub fn binary_cells(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..1usize << n).map(move |k| (0..n).map(|i| (k >> (n - 1 - i)) & 1).collect())
}

/// Random recursive all-binary observed model.
pub fn random_binary_dag(rng: &mut impl rand::Rng, n: usize) -> ModelSpec {
    let nodes: Vec<String> = (0..n)
        .map(|i| {
            let parents: Vec<String> = (0..i)
                .filter(|_| rng.random_bool(0.5))
                .map(|j| format!("\"Z{}\"", j + 1))
                .collect();
            format!(
                r#"{{"name":"Z{}","categories":2,"link":"global","parents":[{}]}}"#,
                i + 1,
                parents.join(",")
            )
        })
        .collect();
    parse_model(&format!(r#"{{"nodes":[{}]}}"#, nodes.join(","))).unwrap()
}

pub fn simulate(model: &ModelSpec, beta: &[f64], n: usize, seed: u64) -> Dataset {
    sample_data(model, &param_layout(model), beta, n, seed, &[])
        .unwrap()
        .data
}

pub fn grouped(model: &ModelSpec, rows: &[(Vec<usize>, f64)]) -> Dataset {
    let mut d = Dataset::empty(model);
    for (c, w) in rows {
        d.push(Record {
            categories: c.clone(),
            covariates: vec![],
            weight: *w,
        })
        .unwrap();
    }
    d
}

/// Newton-Raphson logistic regression on unit rows; `None` if it fails to
/// converge (e.g. separated data).
pub fn logistic_fit(x: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let p = x[0].len();
    let mut b = vec![0.0; p];
    for _ in 0..100 {
        let mut g = vec![0.0; p];
        let mut h = vec![vec![0.0; p]; p];
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&b).map(|(a, c)| a * c).sum();
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            for s in 0..p {
                g[s] += (yi - mu) * row[s];
                for t in 0..p {
                    h[s][t] += w * row[s] * row[t];
                }
            }
        }
        let step = solve(h, g)?;
        for s in 0..p {
            b[s] += step[s];
        }
        if step.iter().all(|d| d.abs() < 1e-13) {
            return Some(b);
        }
        if b.iter().any(|v| v.abs() > 25.0) {
            return None;
        }
    }
    Some(b)
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}
