//! Relabeling latent categories.
//!
//! Permuting the categories of a latent node leaves the observed-data
//! likelihood unchanged. A relabeled parameter vector is found by permuting
//! the latent's own distribution and re-expressing each child's effect
//! function `f(u)` as `f(perm[u])`; the constant `f(perm[0])` moves into the
//! child's first intercept.

use crate::error::{Error, Result};
use crate::links::{logits_to_probs, probs_to_logits};
use crate::model::{ModelSpec, ParamLayout, Slot};

fn is_permutation(perm: &[usize], c: usize) -> bool {
    let mut seen = vec![false; c];
    perm.len() == c && perm.iter().all(|&k| k < c && !std::mem::replace(&mut seen[k], true))
}

/// Whether categories of `latent` can be permuted within the parameterization:
/// binary latents always, larger ones only without parents or covariates, and
/// only when no child uses an explicit design.
pub fn can_relabel(model: &ModelSpec, latent: usize) -> bool {
    let n = &model.nodes[latent];
    if !n.is_latent || n.design.is_some() {
        return false;
    }
    if n.n_categories > 2 && (!n.parents.is_empty() || !n.covariates.is_empty()) {
        return false;
    }
    model.children(latent).iter().all(|&c| model.nodes[c].design.is_none())
}

/// Parameters under which new category `k` of `latent` plays the role of
/// old category `perm[k]`.
pub fn relabel_latent(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[f64],
    latent: usize,
    perm: &[usize],
) -> Result<Vec<f64>> {
    let node = &model.nodes[latent];
    let c = node.n_categories;
    if !is_permutation(perm, c) {
        return Err(Error::Query(format!("not a permutation of 0..{c}")));
    }
    if !can_relabel(model, latent) {
        return Err(Error::model(
            &node.name,
            "categories cannot be relabeled within this parameterization",
        ));
    }
    if beta.len() != layout.len() {
        return Err(Error::Dimension("parameter vector does not match the layout".into()));
    }
    let mut out = beta.to_vec();
    let block = &layout.blocks[latent];
    if perm.iter().enumerate().all(|(k, &p)| k == p) {
        return Ok(out);
    }
    if c == 2 {
        // swapping a binary node negates its single logit
        for k in block.range() {
            out[k] = -beta[k];
        }
    } else {
        let inc = &beta[block.range()];
        let lam: Vec<f64> = inc
            .iter()
            .scan(0.0, |acc, &b| {
                *acc += b;
                Some(*acc)
            })
            .collect();
        let probs = logits_to_probs(node.link, &lam)?;
        let permuted: Vec<f64> = perm.iter().map(|&k| probs[k]).collect();
        let new_lam = probs_to_logits(node.link, &permuted)?;
        for h in 0..new_lam.len() {
            let prev = if h == 0 { 0.0 } else { new_lam[h - 1] };
            out[block.offset + h] = new_lam[h] - prev;
        }
    }
    for child in model.children(latent) {
        let cb = &layout.blocks[child];
        let slope = |level: usize| {
            cb.slots
                .iter()
                .position(|s| *s == Slot::Parent { parent: latent, level })
                .map(|k| cb.offset + k)
                .expect("child block has a slope per latent level")
        };
        let f = |u: usize| (1..=u).map(|l| beta[slope(l)]).sum::<f64>();
        let g: Vec<f64> = perm.iter().map(|&k| f(k)).collect();
        for l in 1..c {
            out[slope(l)] = g[l] - g[l - 1];
        }
        let first = cb
            .slots
            .iter()
            .position(|s| *s == Slot::Intercept { level: 1 })
            .map(|k| cb.offset + k)
            .expect("child block has an intercept");
        out[first] += g[0];
    }
    Ok(out)
}

/// Orders the categories of every relabelable latent by ascending effect on
/// its first child, so that fits from different starts are comparable.
/// Latents that cannot be relabeled, or have no children, are left as fitted.
pub fn canonicalize(model: &ModelSpec, layout: &ParamLayout, beta: &[f64]) -> Vec<f64> {
    let mut out = beta.to_vec();
    for latent in model.latent() {
        let Some(&child) = model.children(latent).first() else {
            continue;
        };
        if !can_relabel(model, latent) {
            continue;
        }
        let c = model.nodes[latent].n_categories;
        let cb = &layout.blocks[child];
        let slopes: Vec<f64> = (1..c)
            .map(|level| {
                let k = cb
                    .slots
                    .iter()
                    .position(|s| *s == Slot::Parent { parent: latent, level })
                    .expect("child slope");
                out[cb.offset + k]
            })
            .collect();
        let effect: Vec<f64> = std::iter::once(0.0)
            .chain(slopes.iter().scan(0.0, |a, &b| {
                *a += b;
                Some(*a)
            }))
            .collect();
        let mut perm: Vec<usize> = (0..c).collect();
        perm.sort_by(|&a, &b| effect[a].total_cmp(&effect[b]).then(a.cmp(&b)));
        if let Ok(next) = relabel_latent(model, layout, &out, latent, &perm) {
            out = next;
        }
    }
    out
}

/// Among all relabelings of the relabelable latents, the one closest to
/// `target` in squared distance. Used to compare a fit with known values.
pub fn align_to(model: &ModelSpec, layout: &ParamLayout, beta: &[f64], target: &[f64]) -> Vec<f64> {
    let mut best = beta.to_vec();
    for latent in model.latent() {
        if !can_relabel(model, latent) {
            continue;
        }
        let c = model.nodes[latent].n_categories;
        let mut candidates = Vec::new();
        permutations(&mut (0..c).collect(), 0, &mut candidates);
        let dist = |b: &[f64]| b.iter().zip(target).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let current = best.clone();
        for perm in candidates {
            if let Ok(b) = relabel_latent(model, layout, &current, latent, &perm) {
                if dist(&b) < dist(&best) {
                    best = b;
                }
            }
        }
    }
    best
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for j in k..items.len() {
        items.swap(k, j);
        permutations(items, k + 1, out);
        items.swap(k, j);
    }
}
