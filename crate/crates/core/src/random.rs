//! Random models and parameter points, for simulation studies and the
//! identifiability check.

use rand::Rng;

use crate::causal::node_cpt;
use crate::links::{uniform_logits, Link};
use crate::model::{param_layout, CovariateSlopes, ModelSpec, NodeSpec, ParamLayout, Slot};

/// Random recursive model with `n_nodes` nodes, at most `max_latent` latent
/// nodes (always leaving one observed) and up to `max_categories` categories.
pub fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    n_nodes: usize,
    max_latent: usize,
    max_categories: usize,
) -> ModelSpec {
    let n_nodes = n_nodes.max(1);
    let n_latent = rng.random_range(0..=max_latent.min(n_nodes - 1));
    let mut latent = vec![false; n_nodes];
    let mut placed = 0;
    while placed < n_latent {
        let k = rng.random_range(0..n_nodes);
        if !latent[k] {
            latent[k] = true;
            placed += 1;
        }
    }
    let links = [Link::Adjacent, Link::Global, Link::Continuation];
    let nodes = (0..n_nodes)
        .map(|pos| {
            let parents: Vec<usize> = (0..pos).filter(|_| rng.random_bool(0.5)).collect();
            NodeSpec {
                index: pos + 1,
                name: format!("Z{}", pos + 1),
                n_categories: rng.random_range(2..=max_categories.max(2)),
                is_latent: latent[pos],
                link: links[rng.random_range(0..3)],
                parents,
                covariates: Vec::new(),
                covariate_slopes: CovariateSlopes::Shared,
                design: None,
            }
        })
        .collect();
    ModelSpec {
        nodes,
        covariate_names: Vec::new(),
    }
}

/// Parameters with each free entry drawn uniformly on `[-scale, scale]`.
/// Global-link intercept increments beyond the first are drawn negative and
/// at least 0.05 away from zero so the cumulative logits stay decreasing.
pub fn random_beta<R: Rng + ?Sized>(model: &ModelSpec, layout: &ParamLayout, rng: &mut R, scale: f64) -> Vec<f64> {
    let mut beta = vec![0.0; layout.len()];
    let covs = vec![0.0; model.covariate_names.len()];
    for block in &layout.blocks {
        let node = &model.nodes[block.node];
        for _attempt in 0..100 {
            for (k, slot) in block.slots.iter().enumerate() {
                let mut v = rng.random_range(-scale..=scale);
                if node.link == Link::Global {
                    if let Slot::Intercept { level } = slot {
                        if *level >= 2 {
                            while v.abs() < 0.05 {
                                v = rng.random_range(-scale..=scale);
                            }
                            v = -v.abs();
                        }
                    }
                }
                beta[block.offset + k] = v;
            }
            if node_cpt(model, layout, &beta, block.node, &covs).is_ok() {
                break;
            }
            beta[block.range()].copy_from_slice(&null_block(model, layout, block.node));
        }
    }
    beta
}

/// Block that gives the node a uniform distribution and no regressor effects.
/// Explicit-design nodes get all zeros.
pub fn null_block(model: &ModelSpec, layout: &ParamLayout, node: usize) -> Vec<f64> {
    let n = &model.nodes[node];
    let block = &layout.blocks[node];
    let lam = uniform_logits(n.link, n.n_categories);
    block
        .slots
        .iter()
        .map(|s| match *s {
            Slot::Intercept { level } => {
                if level == 1 {
                    lam[0]
                } else {
                    lam[level - 1] - lam[level - 2]
                }
            }
            _ => 0.0,
        })
        .collect()
}

pub fn null_beta(model: &ModelSpec, layout: &ParamLayout) -> Vec<f64> {
    (0..model.n_nodes())
        .flat_map(|i| null_block(model, layout, i))
        .collect()
}

/// Convenience for tests and simulation: a random model with its layout.
pub fn random_model_with_layout<R: Rng + ?Sized>(
    rng: &mut R,
    n_nodes: usize,
    max_latent: usize,
    max_categories: usize,
) -> (ModelSpec, ParamLayout) {
    let m = random_model(rng, n_nodes, max_latent, max_categories);
    let l = param_layout(&m);
    (m, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_models_are_valid_and_beta_usable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let (m, l) = random_model_with_layout(&mut rng, n, 2, 4);
            assert!(validate(&m).is_valid());
            assert!(m.latent().len() <= 2 && !m.observed().is_empty());
            let beta = random_beta(&m, &l, &mut rng, 2.0);
            for i in 0..m.n_nodes() {
                node_cpt(&m, &l, &beta, i, &[]).unwrap();
            }
        }
    }

    #[test]
    fn null_block_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, l) = random_model_with_layout(&mut rng, 5, 1, 4);
        let beta = null_beta(&m, &l);
        for i in 0..m.n_nodes() {
            let cpt = node_cpt(&m, &l, &beta, i, &[]).unwrap();
            let c = m.nodes[i].n_categories as f64;
            assert!(cpt.values().iter().all(|&p| (p - 1.0 / c).abs() < 1e-12));
        }
    }
}
