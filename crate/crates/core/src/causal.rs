//! Conditional tables, joint and intervention distributions, total and
//! natural direct effects, and ancestral sampling.
//!
//! The joint is the product of every node's conditional table expanded onto
//! all nodes. An intervention drops the factors of the intervened nodes and
//! fixes their values in the remaining factors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::links::logits_to_probs_into;
use crate::model::{fill_design, ModelSpec, ParamLayout};
use crate::table::{lex_cell, n_cells, IndexCache, LexTable};
use crate::Scalar;

/// Conditional table of `node` over its parents then itself; each row sums to one.
pub fn node_cpt<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    node: usize,
    covariates: &[f64],
) -> Result<LexTable<T>> {
    if beta.len() != layout.len() {
        return Err(Error::Dimension(format!(
            "parameter vector has {} entries, layout needs {}",
            beta.len(),
            layout.len()
        )));
    }
    let n = &model.nodes[node];
    let block = &layout.blocks[node];
    let b = &beta[block.range()];
    let p = b.len();
    let c = n.n_categories;
    let m = c - 1;
    let parent_levels: Vec<usize> = n.parents.iter().map(|&j| model.nodes[j].n_categories).collect();
    let n_cfg = n_cells(&parent_levels);
    let mut x = vec![0.0; m * p];
    let mut lam = vec![T::zero(); m];
    let mut values = vec![T::zero(); n_cfg * c];
    for cfg in 0..n_cfg {
        let pc = lex_cell(&parent_levels, cfg);
        fill_design(model, layout, node, &pc, covariates, &mut x)?;
        for h in 0..m {
            lam[h] = x[h * p..(h + 1) * p]
                .iter()
                .zip(b)
                .fold(T::zero(), |acc, (&xv, &bv)| acc + T::from_f64(xv).unwrap() * bv);
        }
        logits_to_probs_into(n.link, &lam, &mut values[cfg * c..(cfg + 1) * c]).map_err(|e| match e {
            Error::InvalidCumulativeLogits => Error::model(&n.name, e.to_string()),
            other => other,
        })?;
    }
    let mut levels = parent_levels;
    levels.push(c);
    LexTable::new(model.family(node), levels, values)
}

pub fn node_cpts<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    covariates: &[f64],
) -> Result<Vec<LexTable<T>>> {
    (0..model.n_nodes())
        .map(|i| node_cpt(model, layout, beta, i, covariates))
        .collect()
}

/// Product of expanded conditional tables over all nodes in causal order.
pub fn joint_from_cpts<T: Scalar>(
    model: &ModelSpec,
    cpts: &[LexTable<T>],
    cache: Option<&IndexCache>,
) -> Result<LexTable<T>> {
    let all: Vec<usize> = (0..model.n_nodes()).collect();
    let levels = model.levels();
    let mut joint = LexTable::filled(all.clone(), levels.clone(), T::one())?;
    for cpt in cpts {
        let expanded = match cache {
            Some(c) => c.get(cpt.vars(), cpt.levels(), &all, &levels)?.apply(cpt)?,
            None => cpt.expand(&all, &levels)?,
        };
        joint.mul_assign_table(&expanded)?;
    }
    Ok(joint)
}

pub fn joint_distribution<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    covariates: &[f64],
) -> Result<LexTable<T>> {
    let cpts = node_cpts(model, layout, beta, covariates)?;
    joint_from_cpts(model, &cpts, None)
}

/// Distribution of the observed nodes with latents summed out.
pub fn observed_distribution<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    covariates: &[f64],
) -> Result<LexTable<T>> {
    joint_distribution(model, layout, beta, covariates)?.marginalize(&model.observed())
}

/// Nodes held fixed by external action, with their assigned categories.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Intervention {
    pub assignments: Vec<(usize, usize)>,
}

impl Intervention {
    pub fn new(assignments: Vec<(usize, usize)>) -> Self {
        Self { assignments }
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.assignments.iter().map(|a| a.0).collect()
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        for (k, &(node, value)) in self.assignments.iter().enumerate() {
            if node >= model.n_nodes() {
                return Err(Error::Query(format!("no node at position {node}")));
            }
            if value >= model.nodes[node].n_categories {
                return Err(Error::Query(format!(
                    "category {value} out of range for `{}`",
                    model.nodes[node].name
                )));
            }
            if self.assignments[..k].iter().any(|a| a.0 == node) {
                return Err(Error::Query(format!(
                    "node `{}` assigned twice",
                    model.nodes[node].name
                )));
            }
        }
        Ok(())
    }

    fn union(&self, other: &Intervention) -> Intervention {
        let mut a = self.assignments.clone();
        a.extend(other.assignments.iter().copied());
        Intervention { assignments: a }
    }
}

/// Truncated factorization: distribution over the non-intervened nodes.
pub fn intervene<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    iv: &Intervention,
    covariates: &[f64],
) -> Result<LexTable<T>> {
    iv.validate(model)?;
    let fixed = iv.nodes();
    let rest: Vec<usize> = (0..model.n_nodes()).filter(|i| !fixed.contains(i)).collect();
    let rest_levels: Vec<usize> = rest.iter().map(|&i| model.nodes[i].n_categories).collect();
    let mut out = LexTable::filled(rest.clone(), rest_levels.clone(), T::one())?;
    for &i in &rest {
        let cpt = node_cpt(model, layout, beta, i, covariates)?;
        let pins: Vec<(usize, usize)> = iv
            .assignments
            .iter()
            .copied()
            .filter(|(v, _)| cpt.position(*v).is_some())
            .collect();
        let sliced = if pins.is_empty() { cpt } else { cpt.fix(&pins)? };
        out.mul_assign_table(&sliced.expand(&rest, &rest_levels)?)?;
    }
    Ok(out)
}

/// `P(Y >= k)` from a marginal distribution of `Y`.
pub fn survival<T: Scalar>(marginal: &[T], k: usize) -> T {
    marginal[k.min(marginal.len())..].iter().fold(T::zero(), |a, &b| a + b)
}

/// Comparison of two treatment levels on an outcome, optionally holding
/// mediators at their reference-level distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectQuery {
    pub outcome: usize,
    pub treatment: Vec<usize>,
    pub x1: Vec<usize>,
    pub x0: Vec<usize>,
    pub mediators: Vec<usize>,
    /// Each `k` compares `P(Y >= k)`.
    pub thresholds: Vec<usize>,
}

impl EffectQuery {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let n = model.n_nodes();
        let bad = |m: String| Err(Error::Query(m));
        if self.outcome >= n {
            return bad("outcome is not a node".into());
        }
        if self.treatment.is_empty() {
            return bad("treatment set is empty".into());
        }
        if self.x1.len() != self.treatment.len() || self.x0.len() != self.treatment.len() {
            return bad("treatment levels do not match the treatment nodes".into());
        }
        let mut all = vec![self.outcome];
        for &v in self.treatment.iter().chain(&self.mediators) {
            if v >= n {
                return bad(format!("node position {v} out of range"));
            }
            if all.contains(&v) {
                return bad(format!(
                    "node `{}` appears in more than one of outcome, treatment and mediators",
                    model.nodes[v].name
                ));
            }
            all.push(v);
        }
        for (k, &t) in self.treatment.iter().enumerate() {
            let c = model.nodes[t].n_categories;
            if self.x1[k] >= c || self.x0[k] >= c {
                return bad(format!("treatment level out of range for `{}`", model.nodes[t].name));
            }
        }
        let cy = model.nodes[self.outcome].n_categories;
        if self.thresholds.is_empty() {
            return bad("no thresholds".into());
        }
        if let Some(k) = self.thresholds.iter().find(|&&k| k == 0 || k >= cy) {
            return bad(format!("threshold {k} must lie in 1..{cy}"));
        }
        Ok(())
    }

    fn level(&self, x: &[usize]) -> Intervention {
        Intervention::new(self.treatment.iter().copied().zip(x.iter().copied()).collect())
    }

    pub fn x1_intervention(&self) -> Intervention {
        self.level(&self.x1)
    }

    pub fn x0_intervention(&self) -> Intervention {
        self.level(&self.x0)
    }
}

/// Survival probabilities under the comparison and reference levels.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalPair<T> {
    pub treated: Vec<T>,
    pub reference: Vec<T>,
}

impl<T: Scalar> SurvivalPair<T> {
    pub fn ratios(&self) -> Result<Vec<T>> {
        let tiny = T::from_f64(1e-300).unwrap_or_else(T::min_positive_value);
        self.treated
            .iter()
            .zip(&self.reference)
            .map(|(&a, &b)| {
                if b < tiny {
                    Err(Error::ZeroReferenceSurvival)
                } else {
                    Ok(a / b)
                }
            })
            .collect()
    }

    /// Weighted average of several pairs, e.g. over covariate strata.
    pub fn average(pairs: &[(SurvivalPair<T>, f64)]) -> Option<SurvivalPair<T>> {
        let first = pairs.first()?;
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let k = first.0.treated.len();
        let mut treated = vec![T::zero(); k];
        let mut reference = vec![T::zero(); k];
        for (pair, w) in pairs {
            let w = T::from_f64(w / total).unwrap();
            for j in 0..k {
                treated[j] = treated[j] + w * pair.treated[j];
                reference[j] = reference[j] + w * pair.reference[j];
            }
        }
        Some(SurvivalPair { treated, reference })
    }
}

fn outcome_marginal<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    iv: &Intervention,
    outcome: usize,
    covariates: &[f64],
) -> Result<Vec<T>> {
    Ok(intervene(model, layout, beta, iv, covariates)?
        .marginalize(&[outcome])?
        .into_values())
}

pub fn total_effect_survival<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    q: &EffectQuery,
    covariates: &[f64],
) -> Result<SurvivalPair<T>> {
    q.validate(model)?;
    let y1 = outcome_marginal(model, layout, beta, &q.x1_intervention(), q.outcome, covariates)?;
    let y0 = outcome_marginal(model, layout, beta, &q.x0_intervention(), q.outcome, covariates)?;
    Ok(SurvivalPair {
        treated: q.thresholds.iter().map(|&k| survival(&y1, k)).collect(),
        reference: q.thresholds.iter().map(|&k| survival(&y0, k)).collect(),
    })
}

/// `P(Y >= k | do(x1)) / P(Y >= k | do(x0))` for each threshold.
pub fn causal_effect<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    q: &EffectQuery,
    covariates: &[f64],
) -> Result<Vec<T>> {
    if !q.mediators.is_empty() {
        return Err(Error::Query("total effects take no mediators".into()));
    }
    total_effect_survival(model, layout, beta, q, covariates)?.ratios()
}

pub fn natural_direct_survival<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    q: &EffectQuery,
    covariates: &[f64],
) -> Result<SurvivalPair<T>> {
    q.validate(model)?;
    if q.mediators.is_empty() {
        return Err(Error::Query("natural direct effects need at least one mediator".into()));
    }
    let x0 = q.x0_intervention();
    let x1 = q.x1_intervention();
    let weights = intervene(model, layout, beta, &x0, covariates)?.marginalize(&q.mediators)?;
    // marginalize keeps the table's order, which is causal order
    let med_vars = weights.vars().to_vec();
    let med_levels = weights.levels().to_vec();
    let k = q.thresholds.len();
    let mut treated = vec![T::zero(); k];
    let mut reference = vec![T::zero(); k];
    for (idx, &w) in weights.values().iter().enumerate() {
        let cfg = lex_cell(&med_levels, idx);
        let m = Intervention::new(med_vars.iter().copied().zip(cfg).collect());
        let y1 = outcome_marginal(model, layout, beta, &x1.union(&m), q.outcome, covariates)?;
        let y0 = outcome_marginal(model, layout, beta, &x0.union(&m), q.outcome, covariates)?;
        for (j, &t) in q.thresholds.iter().enumerate() {
            treated[j] = treated[j] + w * survival(&y1, t);
            reference[j] = reference[j] + w * survival(&y0, t);
        }
    }
    Ok(SurvivalPair { treated, reference })
}

/// Survival ratios with mediators averaged over their distribution under
/// the reference treatment level.
pub fn natural_direct_effect<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[T],
    q: &EffectQuery,
    covariates: &[f64],
) -> Result<Vec<T>> {
    natural_direct_survival(model, layout, beta, q, covariates)?.ratios()
}

/// Sampled observations plus the latent categories that generated them.
#[derive(Clone, Debug)]
pub struct Sample {
    pub data: Dataset,
    /// Per unit, one category per latent node in causal order.
    pub latent: Vec<Vec<usize>>,
}

/// `n` independent draws by ancestral sampling in causal order.
pub fn sample_data(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[f64],
    n: usize,
    seed: u64,
    covariates: &[f64],
) -> Result<Sample> {
    if n == 0 {
        return Err(Error::Data("sample size must be at least 1".into()));
    }
    let cpts = node_cpts(model, layout, beta, covariates)?;
    let strides: Vec<Vec<usize>> = (0..model.n_nodes())
        .map(|i| crate::table::strides(cpts[i].levels()))
        .collect();
    let observed = model.observed();
    let latent = model.latent();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::empty(model);
    data.records.reserve(n);
    let mut latent_out = Vec::with_capacity(n);
    let mut z = vec![0usize; model.n_nodes()];
    for _ in 0..n {
        for i in 0..model.n_nodes() {
            let fam = cpts[i].vars();
            let c = model.nodes[i].n_categories;
            let row = fam[..fam.len() - 1]
                .iter()
                .zip(&strides[i])
                .fold(0, |acc, (&v, &s)| acc + z[v] * s);
            let probs = &cpts[i].values()[row..row + c];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut draw = c - 1;
            for (h, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    draw = h;
                    break;
                }
            }
            z[i] = draw;
        }
        data.records.push(Record {
            categories: observed.iter().map(|&i| z[i]).collect(),
            covariates: covariates.to_vec(),
            weight: 1.0,
        });
        latent_out.push(latent.iter().map(|&i| z[i]).collect());
    }
    Ok(Sample {
        data,
        latent: latent_out,
    })
}
