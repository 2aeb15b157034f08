//! Maximum likelihood estimation by EM.
//!
//! E-step: for every stratum and observed cell, the joint probability of each
//! latent configuration gives posterior weights that split the cell count
//! across latent configurations. M-step: each node's conditional model is
//! refitted on the completed counts by Fisher scoring with step halving,
//! starting from the current estimate, so the completed-data likelihood
//! never decreases.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{joint_from_cpts, node_cpt};
use crate::data::{Dataset, Stratum};
use crate::error::{Error, Result};
use crate::links::{dprobs_dlogits_into, logits_to_probs_into, Link};
use crate::model::{fill_design, param_layout, ModelSpec, ParamLayout};
use crate::random::null_block;
use crate::relabel::canonicalize;
use crate::table::{lex_cell, n_cells, strides, IndexCache, KahanSum, LexTable};

/// Linear predictors beyond this bound are rejected during the M-step line search.
pub const LAMBDA_MAX: f64 = 30.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EStepStrategy {
    /// Pick whichever route touches fewer cells.
    #[default]
    Auto,
    /// Build the full joint table per stratum through the table engine.
    Dense,
    /// Multiply conditional probabilities only for observed data cells.
    CellWise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MStepMode {
    /// Run node-wise scoring to convergence.
    #[default]
    Full,
    /// One accepted scoring step per node (generalized EM).
    SingleStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol_loglik: f64,
    pub tol_param: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// Relative size of the random perturbation of the initial posteriors.
    pub perturbation: f64,
    /// Bound on initial coefficients.
    pub init_clamp: f64,
    pub mstep: MStepMode,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub max_halvings: usize,
    pub estep: EStepStrategy,
    /// Reorder latent categories after fitting, see [`crate::relabel::canonicalize`].
    pub canonicalize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol_loglik: 1e-8,
            tol_param: 1e-6,
            n_restarts: 10,
            seed: 0,
            perturbation: 0.05,
            init_clamp: 3.0,
            mstep: MStepMode::Full,
            inner_tol: 1e-9,
            inner_max_iter: 100,
            max_halvings: 20,
            estep: EStepStrategy::Auto,
            canonicalize: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Converged,
    MaxIter,
    SingleStep,
    /// No admissible ascent step; the estimate sits at the logit bound or the
    /// edge of the valid region.
    Boundary,
    /// No completed counts for the node.
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostic {
    pub node: String,
    pub status: NodeStatus,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub seed: u64,
    pub stream: u64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub labels: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub loglik: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: Vec<RestartRecord>,
    pub best_restart: usize,
    pub n_params: usize,
    pub n_obs: f64,
    pub aic: f64,
    pub bic: f64,
    pub diagnostics: Vec<NodeDiagnostic>,
}

/// Completed counts: for every stratum and observed data cell, the cell
/// count split over latent configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletedTable {
    pub strata: Vec<Stratum>,
    pub n_latent_configs: usize,
    /// Per stratum, `cells.len() x n_latent_configs`, latent index fastest.
    pub weights: Vec<Vec<f64>>,
}

impl CompletedTable {
    /// Latent-summed counts per data cell of stratum `s`.
    pub fn observed_margin(&self, s: usize) -> Vec<f64> {
        self.weights[s]
            .chunks(self.n_latent_configs)
            .map(|w| w.iter().sum())
            .collect()
    }

    /// Dense table over all nodes for stratum `s`.
    pub fn to_lex_table(&self, model: &ModelSpec, s: usize) -> Result<LexTable<f64>> {
        let observed = model.observed();
        let latent = model.latent();
        let levels = model.levels();
        let obs_levels = model.observed_levels();
        let lat_levels = model.latent_levels();
        let all_strides = strides(&levels);
        let mut out = LexTable::filled((0..model.n_nodes()).collect(), levels, 0.0)?;
        let h_n = self.n_latent_configs;
        for (k, &cell) in self.strata[s].cells.iter().enumerate() {
            let oc = lex_cell(&obs_levels, cell);
            let base: usize = observed.iter().zip(&oc).map(|(&v, &z)| z * all_strides[v]).sum();
            for h in 0..h_n {
                let lc = lex_cell(&lat_levels, h);
                let idx = base + latent.iter().zip(&lc).map(|(&v, &z)| z * all_strides[v]).sum::<usize>();
                out.values_mut()[idx] += self.weights[s][k * h_n + h];
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// workspace

/// Design rows of one node for one (group, parent configuration).
#[derive(Clone, Debug)]
struct RowDesign {
    /// Offset of this row's counts in the node's count buffer.
    count_offset: usize,
    /// `(c-1) x p`, row-major.
    x: Vec<f64>,
}

/// Index structures for one model and one set of strata, built once per fit.
pub struct Workspace {
    model: ModelSpec,
    layout: ParamLayout,
    strata: Vec<Stratum>,
    n_lat: usize,
    n_nodes: usize,
    /// Per stratum, `cells x nodes`: family-table offset from observed coordinates.
    obs_off: Vec<Vec<usize>>,
    /// `latent configs x nodes`: family-table offset from latent coordinates.
    lat_off: Vec<usize>,
    /// Nodes whose tables depend on covariates.
    cov_nodes: Vec<bool>,
    /// Per node, the size of one group's count buffer.
    family_cells: Vec<usize>,
    /// Per node, all (group, parent configuration) design rows.
    rows: Vec<Vec<RowDesign>>,
    cache: IndexCache,
}

/// Conditional tables for every stratum; covariate-free nodes are shared.
struct Cpts {
    shared: Vec<Option<Vec<f64>>>,
    per_stratum: Vec<Vec<Option<Vec<f64>>>>,
}

impl Cpts {
    fn tables(&self, s: usize) -> Vec<&[f64]> {
        self.shared
            .iter()
            .enumerate()
            .map(|(i, t)| match t {
                Some(v) => v.as_slice(),
                None => self.per_stratum[s][i].as_deref().expect("stratum table"),
            })
            .collect()
    }
}

impl Workspace {
    pub fn new(model: &ModelSpec, strata: Vec<Stratum>) -> Result<Self> {
        let layout = param_layout(model);
        let n_nodes = model.n_nodes();
        let observed = model.observed();
        let latent = model.latent();
        let obs_levels = model.observed_levels();
        let lat_levels = model.latent_levels();
        let n_obs_cells = n_cells(&obs_levels);
        let n_lat = n_cells(&lat_levels);
        for s in &strata {
            if s.covariates.len() != model.covariate_names.len() {
                return Err(Error::Data(format!(
                    "stratum has {} covariates, model has {}",
                    s.covariates.len(),
                    model.covariate_names.len()
                )));
            }
            if s.cells.iter().any(|&c| c >= n_obs_cells) || s.cells.len() != s.counts.len() {
                return Err(Error::Data("stratum cells do not fit the observed table".into()));
            }
        }
        // family strides per node, keyed by variable
        let fam_strides: Vec<Vec<(usize, usize)>> = (0..n_nodes)
            .map(|i| {
                let fam = model.family(i);
                let lv: Vec<usize> = fam.iter().map(|&v| model.nodes[v].n_categories).collect();
                fam.into_iter().zip(strides(&lv)).collect()
            })
            .collect();
        let offset = |i: usize, vars: &[usize], coords: &[usize]| -> usize {
            fam_strides[i]
                .iter()
                .map(|&(v, st)| vars.iter().position(|&u| u == v).map_or(0, |k| coords[k] * st))
                .sum()
        };
        let mut lat_off = Vec::with_capacity(n_lat * n_nodes);
        for h in 0..n_lat {
            let lc = lex_cell(&lat_levels, h);
            for i in 0..n_nodes {
                lat_off.push(offset(i, &latent, &lc));
            }
        }
        let obs_off: Vec<Vec<usize>> = strata
            .iter()
            .map(|s| {
                let mut v = Vec::with_capacity(s.cells.len() * n_nodes);
                for &cell in &s.cells {
                    let oc = lex_cell(&obs_levels, cell);
                    for i in 0..n_nodes {
                        v.push(offset(i, &observed, &oc));
                    }
                }
                v
            })
            .collect();
        let cov_nodes: Vec<bool> = model.nodes.iter().map(|n| !n.covariates.is_empty()).collect();
        let family_cells: Vec<usize> = (0..n_nodes)
            .map(|i| model.n_parent_configs(i) * model.nodes[i].n_categories)
            .collect();
        let mut rows = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let n = &model.nodes[i];
            let p = layout.blocks[i].slots.len();
            let m = n.n_logits();
            let pl: Vec<usize> = n.parents.iter().map(|&j| model.nodes[j].n_categories).collect();
            let n_cfg = n_cells(&pl);
            let groups: Vec<&[f64]> = if cov_nodes[i] {
                strata.iter().map(|s| s.covariates.as_slice()).collect()
            } else {
                vec![&[]]
            };
            let zero_cov = vec![0.0; model.covariate_names.len()];
            let mut node_rows = Vec::with_capacity(groups.len() * n_cfg);
            for (g, covs) in groups.iter().enumerate() {
                let covs = if cov_nodes[i] { *covs } else { zero_cov.as_slice() };
                for cfg in 0..n_cfg {
                    let mut x = vec![0.0; m * p];
                    fill_design(model, &layout, i, &lex_cell(&pl, cfg), covs, &mut x)?;
                    node_rows.push(RowDesign {
                        count_offset: g * family_cells[i] + cfg * n.n_categories,
                        x,
                    });
                }
            }
            rows.push(node_rows);
        }
        Ok(Self {
            model: model.clone(),
            layout,
            strata,
            n_lat,
            n_nodes,
            obs_off,
            lat_off,
            cov_nodes,
            family_cells,
            rows,
            cache: IndexCache::new(),
        })
    }

    pub fn from_data(model: &ModelSpec, data: &Dataset) -> Result<Self> {
        check_compatible(model, data)?;
        Self::new(model, data.strata())
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn total_count(&self) -> f64 {
        self.strata.iter().map(Stratum::total).sum()
    }

    fn cpts(&self, beta: &[f64]) -> Result<Cpts> {
        if beta.len() != self.layout.len() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, model needs {}",
                beta.len(),
                self.layout.len()
            )));
        }
        if let Some(k) = beta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("parameter {k} is not finite")));
        }
        let zero = vec![0.0; self.model.covariate_names.len()];
        let shared = (0..self.n_nodes)
            .map(|i| {
                if self.cov_nodes[i] {
                    Ok(None)
                } else {
                    Ok(Some(node_cpt(&self.model, &self.layout, beta, i, &zero)?.into_values()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let per_stratum = if self.cov_nodes.iter().any(|&c| c) {
            self.strata
                .iter()
                .map(|s| {
                    (0..self.n_nodes)
                        .map(|i| {
                            if self.cov_nodes[i] {
                                Ok(Some(
                                    node_cpt(&self.model, &self.layout, beta, i, &s.covariates)?.into_values(),
                                ))
                            } else {
                                Ok(None)
                            }
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Cpts { shared, per_stratum })
    }

    fn use_dense(&self, strategy: EStepStrategy) -> bool {
        match strategy {
            EStepStrategy::Dense => true,
            EStepStrategy::CellWise => false,
            EStepStrategy::Auto => {
                let joint = n_cells(&self.model.levels()) as f64;
                let dense = joint * self.strata.len() as f64;
                let cellwise: f64 = self.strata.iter().map(|s| (s.cells.len() * self.n_lat) as f64).sum();
                dense < cellwise
            }
        }
    }

    /// Joint probabilities of every (data cell, latent configuration) in stratum `s`.
    fn stratum_joint(&self, cpts: &Cpts, s: usize, dense: bool) -> Result<Vec<f64>> {
        let tabs = cpts.tables(s);
        let cells = &self.strata[s].cells;
        let h_n = self.n_lat;
        let n = self.n_nodes;
        let mut out = vec![0.0; cells.len() * h_n];
        if dense {
            let tables: Vec<LexTable<f64>> = (0..n)
                .map(|i| {
                    let fam = self.model.family(i);
                    let lv = fam.iter().map(|&v| self.model.nodes[v].n_categories).collect();
                    LexTable::new(fam, lv, tabs[i].to_vec())
                })
                .collect::<Result<_>>()?;
            let joint = joint_from_cpts(&self.model, &tables, Some(&self.cache))?;
            let mut order = self.model.observed();
            order.extend(self.model.latent());
            let lv: Vec<usize> = order.iter().map(|&v| self.model.nodes[v].n_categories).collect();
            let map = self.cache.get(joint.vars(), joint.levels(), &order, &lv)?;
            let arranged = map.apply_values(joint.values())?;
            for (k, &cell) in cells.iter().enumerate() {
                out[k * h_n..(k + 1) * h_n].copy_from_slice(&arranged[cell * h_n..(cell + 1) * h_n]);
            }
        } else {
            let obs = &self.obs_off[s];
            for k in 0..cells.len() {
                let o = &obs[k * n..(k + 1) * n];
                for h in 0..h_n {
                    let l = &self.lat_off[h * n..(h + 1) * n];
                    let mut p = 1.0;
                    for i in 0..n {
                        p *= tabs[i][o[i] + l[i]];
                    }
                    out[k * h_n + h] = p;
                }
            }
        }
        Ok(out)
    }

    fn zero_cell(&self, s: usize, k: usize) -> Error {
        Error::ZeroProbabilityCell {
            stratum: s,
            cell: lex_cell(&self.model.observed_levels(), self.strata[s].cells[k]),
        }
    }

    /// Completed table and observed-data log-likelihood at `beta`.
    pub fn e_step(&self, beta: &[f64], strategy: EStepStrategy) -> Result<(CompletedTable, f64)> {
        let cpts = self.cpts(beta)?;
        let dense = self.use_dense(strategy);
        let h_n = self.n_lat;
        let per: Vec<(Vec<f64>, Vec<f64>)> = (0..self.strata.len())
            .into_par_iter()
            .map(|s| {
                let mut joint = self.stratum_joint(&cpts, s, dense)?;
                let counts = &self.strata[s].counts;
                let mut ll = Vec::with_capacity(counts.len());
                for (k, &nk) in counts.iter().enumerate() {
                    let row = &mut joint[k * h_n..(k + 1) * h_n];
                    let pj: f64 = row.iter().sum();
                    if !(pj > 0.0) || !pj.is_finite() {
                        return Err(self.zero_cell(s, k));
                    }
                    for v in row.iter_mut() {
                        *v = nk * (*v / pj);
                    }
                    ll.push(nk * pj.ln());
                }
                Ok((joint, ll))
            })
            .collect::<Result<_>>()?;
        let mut total = KahanSum::default();
        let mut weights = Vec::with_capacity(per.len());
        for (w, ll) in per {
            for v in ll {
                total.add(v);
            }
            weights.push(w);
        }
        Ok((
            CompletedTable {
                strata: self.strata.clone(),
                n_latent_configs: h_n,
                weights,
            },
            total.value(),
        ))
    }

    /// `log P(cell)` for every data cell, per stratum.
    pub fn cell_log_probs(&self, beta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let cpts = self.cpts(beta)?;
        let h_n = self.n_lat;
        (0..self.strata.len())
            .map(|s| {
                let joint = self.stratum_joint(&cpts, s, false)?;
                joint
                    .chunks(h_n)
                    .enumerate()
                    .map(|(k, row)| {
                        let pj: f64 = row.iter().sum();
                        if pj > 0.0 && pj.is_finite() {
                            Ok(pj.ln())
                        } else {
                            Err(self.zero_cell(s, k))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn loglik(&self, beta: &[f64]) -> Result<f64> {
        let lp = self.cell_log_probs(beta)?;
        let mut acc = KahanSum::default();
        for (s, row) in lp.iter().enumerate() {
            for (v, n) in row.iter().zip(&self.strata[s].counts) {
                acc.add(n * v);
            }
        }
        Ok(acc.value())
    }

    /// Per-node completed counts, one buffer per node (groups concatenated).
    fn node_counts(&self, completed: &CompletedTable) -> Result<Vec<Vec<f64>>> {
        if completed.strata.len() != self.strata.len() || completed.n_latent_configs != self.n_lat {
            return Err(Error::Dimension("completed table does not match the workspace".into()));
        }
        let n = self.n_nodes;
        let h_n = self.n_lat;
        let mut counts: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let groups = if self.cov_nodes[i] { self.strata.len() } else { 1 };
                vec![0.0; groups * self.family_cells[i]]
            })
            .collect();
        for (s, w) in completed.weights.iter().enumerate() {
            let obs = &self.obs_off[s];
            for k in 0..self.strata[s].cells.len() {
                let o = &obs[k * n..(k + 1) * n];
                for h in 0..h_n {
                    let wt = w[k * h_n + h];
                    if wt == 0.0 {
                        continue;
                    }
                    let l = &self.lat_off[h * n..(h + 1) * n];
                    for i in 0..n {
                        let g = if self.cov_nodes[i] { s * self.family_cells[i] } else { 0 };
                        counts[i][g + o[i] + l[i]] += wt;
                    }
                }
            }
        }
        Ok(counts)
    }

    /// Node-wise maximization of the completed-data likelihood, starting at `start`.
    pub fn m_step(
        &self,
        completed: &CompletedTable,
        start: &[f64],
        options: &FitOptions,
    ) -> Result<(Vec<f64>, Vec<NodeDiagnostic>)> {
        let counts = self.node_counts(completed)?;
        let scoring = ScoringOptions {
            max_iter: match options.mstep {
                MStepMode::Full => options.inner_max_iter,
                MStepMode::SingleStep => 1,
            },
            tol: options.inner_tol,
            max_halvings: options.max_halvings,
        };
        let fits: Vec<NodeFit> = (0..self.n_nodes)
            .into_par_iter()
            .map(|i| {
                let block = self.layout.blocks[i].range();
                self.fit_node(i, &counts[i], &start[block], &scoring)
            })
            .collect::<Result<_>>()?;
        let mut beta = Vec::with_capacity(start.len());
        let mut diag = Vec::with_capacity(fits.len());
        for (i, f) in fits.into_iter().enumerate() {
            beta.extend_from_slice(&f.beta);
            diag.push(NodeDiagnostic {
                node: self.model.nodes[i].name.clone(),
                status: f.status,
                iterations: f.iterations,
            });
        }
        Ok((beta, diag))
    }

    fn fit_node(&self, i: usize, counts: &[f64], start: &[f64], opts: &ScoringOptions) -> Result<NodeFit> {
        let node = &self.model.nodes[i];
        let problem = NodeProblem {
            link: node.link,
            c: node.n_categories,
            p: start.len(),
            rows: &self.rows[i],
            counts,
        };
        problem.fit(start, opts).map_err(|e| match e {
            Error::ScoringDiverged(_) => Error::ScoringDiverged(node.name.clone()),
            other => other,
        })
    }

    /// Completed table from uniform posteriors with a multiplicative
    /// perturbation `1 + delta * u`, `u` uniform on [-1, 1].
    fn perturbed_completion<R: Rng>(&self, rng: &mut R, delta: f64) -> CompletedTable {
        let h_n = self.n_lat;
        let weights = self
            .strata
            .iter()
            .map(|s| {
                let mut w = Vec::with_capacity(s.cells.len() * h_n);
                for &nk in &s.counts {
                    let raw: Vec<f64> = (0..h_n).map(|_| 1.0 + delta * rng.random_range(-1.0..=1.0)).collect();
                    let tot: f64 = raw.iter().sum();
                    w.extend(raw.iter().map(|r| nk * r / tot));
                }
                w
            })
            .collect();
        CompletedTable {
            strata: self.strata.clone(),
            n_latent_configs: h_n,
            weights,
        }
    }

    /// Initial estimate: perturbed uniform posteriors, one scoring step from
    /// the uniform model, coefficients clamped to `[-clamp, clamp]`.
    pub fn initialize<R: Rng>(&self, rng: &mut R, options: &FitOptions) -> Result<Vec<f64>> {
        let completed = self.perturbed_completion(rng, options.perturbation);
        let counts = self.node_counts(&completed)?;
        let scoring = ScoringOptions {
            max_iter: 1,
            tol: options.inner_tol,
            max_halvings: options.max_halvings,
        };
        let mut beta = Vec::with_capacity(self.layout.len());
        for i in 0..self.n_nodes {
            let null = null_block(&self.model, &self.layout, i);
            let fitted = self.fit_node(i, &counts[i], &null, &scoring)?;
            let clamped: Vec<f64> = fitted
                .beta
                .iter()
                .map(|v| v.clamp(-options.init_clamp, options.init_clamp))
                .collect();
            let problem = NodeProblem {
                link: self.model.nodes[i].link,
                c: self.model.nodes[i].n_categories,
                p: clamped.len(),
                rows: &self.rows[i],
                counts: &counts[i],
            };
            if problem.loglik(&clamped, true).is_some() {
                beta.extend(clamped);
            } else {
                beta.extend(null);
            }
        }
        Ok(beta)
    }

    /// EM from a given starting point.
    pub fn run(&self, start: Vec<f64>, options: &FitOptions) -> Result<RunOutcome> {
        let mut beta = start;
        let (mut completed, mut ll) = self.e_step(&beta, options.estep)?;
        let mut trace = vec![ll];
        let mut converged = false;
        let mut iterations = 0;
        let mut diagnostics = Vec::new();
        while iterations < options.max_iter {
            iterations += 1;
            let (next, diag) = self.m_step(&completed, &beta, options)?;
            let (next_completed, next_ll) = self.e_step(&next, options.estep)?;
            let dparam = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let dll = (next_ll - ll).abs();
            beta = next;
            completed = next_completed;
            ll = next_ll;
            trace.push(ll);
            diagnostics = diag;
            if dll < options.tol_loglik && dparam < options.tol_param {
                converged = true;
                break;
            }
        }
        Ok(RunOutcome {
            beta,
            loglik: ll,
            trace,
            iterations,
            converged,
            diagnostics,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<NodeDiagnostic>,
}

fn check_compatible(model: &ModelSpec, data: &Dataset) -> Result<()> {
    if data.observed != model.observed() || data.levels != model.observed_levels() {
        return Err(Error::Data(
            "dataset columns do not match the model's observed nodes".into(),
        ));
    }
    if data.covariate_names != model.covariate_names {
        return Err(Error::Data("dataset covariates do not match the model".into()));
    }
    if data.total_weight() <= 0.0 {
        return Err(Error::Data("dataset has no positive weight".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// node-wise Fisher scoring

struct ScoringOptions {
    max_iter: usize,
    tol: f64,
    max_halvings: usize,
}

struct NodeFit {
    beta: Vec<f64>,
    status: NodeStatus,
    iterations: usize,
}

/// Weighted multinomial likelihood of one node given its design rows.
struct NodeProblem<'a> {
    link: Link,
    c: usize,
    p: usize,
    rows: &'a [RowDesign],
    counts: &'a [f64],
}

impl NodeProblem<'_> {
    fn logits(&self, row: &RowDesign, beta: &[f64], lam: &mut [f64]) {
        let p = self.p;
        for (h, l) in lam.iter_mut().enumerate() {
            *l = row.x[h * p..(h + 1) * p].iter().zip(beta).map(|(x, b)| x * b).sum();
        }
    }

    /// Log-likelihood, or `None` if `beta` gives an invalid or (with
    /// `bounded`) out-of-range linear predictor for any row.
    fn loglik(&self, beta: &[f64], bounded: bool) -> Option<f64> {
        let c = self.c;
        let mut lam = vec![0.0; c - 1];
        let mut probs = vec![0.0; c];
        let mut acc = KahanSum::default();
        for row in self.rows {
            self.logits(row, beta, &mut lam);
            if bounded && lam.iter().any(|l| l.abs() > LAMBDA_MAX) {
                return None;
            }
            logits_to_probs_into(self.link, &lam, &mut probs).ok()?;
            let w = &self.counts[row.count_offset..row.count_offset + c];
            for (wh, ph) in w.iter().zip(&probs) {
                if *wh > 0.0 {
                    if !(*ph > 0.0) {
                        return None;
                    }
                    acc.add(wh * ph.ln());
                }
            }
        }
        let v = acc.value();
        v.is_finite().then_some(v)
    }

    /// Log-likelihood, score and expected information.
    fn derivatives(&self, beta: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let (c, p) = (self.c, self.p);
        let m = c - 1;
        let mut lam = vec![0.0; m];
        let mut probs = vec![0.0; c];
        let mut dp = vec![0.0; c * m];
        let mut jac = vec![0.0; c * p];
        let mut grad = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let mut acc = KahanSum::default();
        for row in self.rows {
            let w = &self.counts[row.count_offset..row.count_offset + c];
            let n_r: f64 = w.iter().sum();
            if n_r <= 0.0 {
                continue;
            }
            self.logits(row, beta, &mut lam);
            dprobs_dlogits_into(self.link, &lam, &mut probs, &mut dp).ok()?;
            for h in 0..c {
                for s in 0..p {
                    jac[h * p + s] = (0..m).map(|k| dp[h * m + k] * row.x[k * p + s]).sum();
                }
            }
            for h in 0..c {
                let ph = probs[h];
                if w[h] > 0.0 {
                    if !(ph > 0.0) {
                        return None;
                    }
                    acc.add(w[h] * ph.ln());
                }
                if ph < 1e-300 {
                    continue;
                }
                let jh = &jac[h * p..(h + 1) * p];
                let gw = w[h] / ph;
                let iw = n_r / ph;
                for s in 0..p {
                    grad[s] += gw * jh[s];
                    for t in 0..p {
                        info[s * p + t] += iw * jh[s] * jh[t];
                    }
                }
            }
        }
        let v = acc.value();
        v.is_finite().then_some((v, grad, info))
    }

    fn fit(&self, start: &[f64], opts: &ScoringOptions) -> Result<NodeFit> {
        let p = self.p;
        let mut beta = start.to_vec();
        let total: f64 = self.counts.iter().sum();
        if p == 0 || total <= 0.0 {
            return Ok(NodeFit {
                beta,
                status: NodeStatus::Empty,
                iterations: 0,
            });
        }
        let (mut ll, mut grad, mut info) = self
            .derivatives(&beta)
            .ok_or_else(|| Error::ScoringDiverged(String::new()))?;
        let mut status = NodeStatus::MaxIter;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let delta = solve_spd(&info, &grad, p);
            let dmax = delta.iter().fold(0.0f64, |a, d| a.max(d.abs()));
            if !dmax.is_finite() {
                status = NodeStatus::Boundary;
                break;
            }
            if dmax < opts.tol {
                // the last Newton step is tiny; taking it squares the error
                let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + d).collect();
                if self.loglik(&cand, true).is_some_and(|l| l >= ll) {
                    beta = cand;
                }
                status = NodeStatus::Converged;
                break;
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
                if let Some(l) = self.loglik(&cand, true) {
                    if l >= ll {
                        accepted = Some(cand);
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some(cand) = accepted else {
                status = if dmax < opts.tol.sqrt() {
                    NodeStatus::Converged
                } else {
                    NodeStatus::Boundary
                };
                break;
            };
            iterations += 1;
            beta = cand;
            match self.derivatives(&beta) {
                Some((l, g, f)) => {
                    ll = l;
                    grad = g;
                    info = f;
                }
                None => return Err(Error::ScoringDiverged(String::new())),
            }
            if step * dmax < opts.tol {
                status = NodeStatus::Converged;
                break;
            }
            if opts.max_iter == 1 {
                status = NodeStatus::SingleStep;
            }
        }
        Ok(NodeFit {
            beta,
            status,
            iterations,
        })
    }
}

/// Solves `info * x = grad` for a symmetric positive semidefinite `info`,
/// adding a growing ridge when the Cholesky factorization fails.
fn solve_spd(info: &[f64], grad: &[f64], p: usize) -> Vec<f64> {
    let a = DMatrix::from_row_slice(p, p, info);
    let b = DVector::from_column_slice(grad);
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(&b).iter().copied().collect();
    }
    let scale = (0..p).map(|k| a[(k, k)].abs()).fold(0.0, f64::max).max(1.0);
    let mut ridge = 1e-10 * scale;
    for _ in 0..20 {
        let mut r = a.clone();
        for k in 0..p {
            r[(k, k)] += ridge;
        }
        if let Some(ch) = r.cholesky() {
            return ch.solve(&b).iter().copied().collect();
        }
        ridge *= 10.0;
    }
    vec![f64::NAN; p]
}

// ---------------------------------------------------------------------------
// public operations

/// Completed table and observed-data log-likelihood.
pub fn e_step(model: &ModelSpec, beta: &[f64], data: &Dataset) -> Result<(CompletedTable, f64)> {
    Workspace::from_data(model, data)?.e_step(beta, EStepStrategy::Auto)
}

/// Maximizes the completed-data likelihood node by node, starting from the
/// uniform model.
pub fn m_step(model: &ModelSpec, completed: &CompletedTable) -> Result<Vec<f64>> {
    let ws = Workspace::new(model, completed.strata.clone())?;
    let start = crate::random::null_beta(model, ws.layout());
    Ok(ws.m_step(completed, &start, &FitOptions::default())?.0)
}

/// As [`m_step`], starting from `start`; the completed-data likelihood does
/// not decrease relative to `start`.
pub fn m_step_from(model: &ModelSpec, completed: &CompletedTable, start: &[f64]) -> Result<Vec<f64>> {
    let ws = Workspace::new(model, completed.strata.clone())?;
    Ok(ws.m_step(completed, start, &FitOptions::default())?.0)
}

pub fn initialize(model: &ModelSpec, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
    let ws = Workspace::from_data(model, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ws.initialize(&mut rng, &FitOptions::default())
}

/// Observed-data log-likelihood with latents summed out.
pub fn loglik(model: &ModelSpec, beta: &[f64], data: &Dataset) -> Result<f64> {
    Workspace::from_data(model, data)?.loglik(beta)
}

/// Multi-start EM; returns the restart with the highest final log-likelihood.
pub fn fit(model: &ModelSpec, data: &Dataset, options: &FitOptions) -> Result<FitResult> {
    let ws = Workspace::from_data(model, data)?;
    fit_workspace(&ws, options)
}

pub fn fit_workspace(ws: &Workspace, options: &FitOptions) -> Result<FitResult> {
    // without latent nodes every start completes the data identically
    let n_restarts = if ws.model.latent().is_empty() {
        1
    } else {
        options.n_restarts.max(1)
    };
    let runs: Vec<(RestartRecord, Option<RunOutcome>)> = (0..n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(r as u64);
            let outcome = ws
                .initialize(&mut rng, options)
                .and_then(|start| ws.run(start, options));
            match outcome {
                Ok(o) => (
                    RestartRecord {
                        restart: r,
                        seed: options.seed,
                        stream: r as u64,
                        loglik: o.loglik,
                        iterations: o.iterations,
                        converged: o.converged,
                        error: None,
                    },
                    Some(o),
                ),
                Err(e) => (
                    RestartRecord {
                        restart: r,
                        seed: options.seed,
                        stream: r as u64,
                        loglik: f64::NEG_INFINITY,
                        iterations: 0,
                        converged: false,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (_, o))| o.is_some())
        .fold(None::<usize>, |acc, (k, (rec, _))| match acc {
            Some(b) if runs[b].0.loglik >= rec.loglik => Some(b),
            _ => Some(k),
        });
    let Some(best) = best else {
        let msg = runs
            .iter()
            .filter_map(|(r, _)| r.error.clone())
            .next()
            .unwrap_or_default();
        return Err(Error::Numerical(format!("every restart failed: {msg}")));
    };
    let restarts: Vec<RestartRecord> = runs.iter().map(|(r, _)| r.clone()).collect();
    let outcome = runs[best].1.clone().expect("best restart has an outcome");
    let outcome_beta = if options.canonicalize {
        canonicalize(&ws.model, &ws.layout, &outcome.beta)
    } else {
        outcome.beta.clone()
    };
    Ok(make_result(ws, outcome_beta, outcome, restarts, best))
}

/// Single EM run from `start`, without restarts.
pub fn fit_from(model: &ModelSpec, data: &Dataset, start: &[f64], options: &FitOptions) -> Result<FitResult> {
    let ws = Workspace::from_data(model, data)?;
    let outcome = ws.run(start.to_vec(), options)?;
    let rec = RestartRecord {
        restart: 0,
        seed: options.seed,
        stream: 0,
        loglik: outcome.loglik,
        iterations: outcome.iterations,
        converged: outcome.converged,
        error: None,
    };
    let beta = outcome.beta.clone();
    Ok(make_result(&ws, beta, outcome, vec![rec], 0))
}

fn make_result(
    ws: &Workspace,
    beta: Vec<f64>,
    outcome: RunOutcome,
    restarts: Vec<RestartRecord>,
    best: usize,
) -> FitResult {
    let n_params = ws.layout.len();
    let n_obs = ws.total_count();
    let ll = outcome.loglik;
    FitResult {
        labels: ws.layout.labels(&ws.model),
        beta,
        se: None,
        loglik: ll,
        trace: outcome.trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
        restarts,
        best_restart: best,
        n_params,
        n_obs,
        aic: -2.0 * ll + 2.0 * n_params as f64,
        bic: -2.0 * ll + n_params as f64 * n_obs.ln(),
        diagnostics: outcome
            .diagnostics
            .into_iter()
            .filter(|d| d.status == NodeStatus::Boundary)
            .collect(),
    }
}
