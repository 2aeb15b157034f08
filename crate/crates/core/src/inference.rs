//! Standard errors and the numerical local-identifiability check.
//!
//! Scores are central finite differences of `log P(cell)`, latents summed
//! out, so every link and design is handled by the same code path that
//! evaluates the likelihood.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::observed_distribution;
use crate::data::Dataset;
use crate::em::Workspace;
use crate::error::{Error, Result};
use crate::model::{param_layout, validate, ModelSpec};
use crate::random::random_beta;

/// Relative finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted condition number of the information matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Smallest accepted `sigma_min / sigma_max` of the identifiability Jacobian.
pub const RANK_TOL: f64 = 1e-7;

fn step(b: f64) -> f64 {
    FD_STEP * b.abs().max(1.0)
}

/// Per-unit score vectors with frequency weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub n_params: usize,
    /// Row-major, `weights.len() x n_params`.
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ScoreMatrix {
    pub fn n_rows(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.scores[r * self.n_params..(r + 1) * self.n_params]
    }

    /// Weighted column sums: the score of the whole sample.
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params];
        for (r, &w) in self.weights.iter().enumerate() {
            for (o, s) in out.iter_mut().zip(self.row(r)) {
                *o += w * s;
            }
        }
        out
    }
}

/// Gradient of `log P(cell)` for every data cell of the workspace, one row
/// per (stratum, cell) with the cell count as weight.
pub fn cell_scores(ws: &Workspace, beta: &[f64]) -> Result<ScoreMatrix> {
    let p = beta.len();
    let diffs: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|k| central_difference(ws, beta, k, step(beta[k])))
        .collect::<Result<_>>()?;
    Ok(assemble(ws, &diffs))
}

/// As [`cell_scores`], with Richardson extrapolation over steps `h` and `h/2`.
pub fn cell_scores_richardson(ws: &Workspace, beta: &[f64]) -> Result<ScoreMatrix> {
    let p = beta.len();
    let diffs: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|k| {
            let h = step(beta[k]);
            let d1 = central_difference(ws, beta, k, h)?;
            let d2 = central_difference(ws, beta, k, h / 2.0)?;
            Ok(d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect())
        })
        .collect::<Result<_>>()?;
    Ok(assemble(ws, &diffs))
}

/// Derivative of every cell's log-probability with respect to `beta[k]`,
/// cells of all strata concatenated.
fn central_difference(ws: &Workspace, beta: &[f64], k: usize, h: f64) -> Result<Vec<f64>> {
    let eval = |delta: f64| -> Result<Vec<f64>> {
        let mut b = beta.to_vec();
        b[k] += delta;
        let lp = ws
            .cell_log_probs(&b)
            .map_err(|e| Error::Numerical(format!("log-likelihood not finite at a perturbed point: {e}")))?;
        Ok(lp.into_iter().flatten().collect())
    };
    let up = eval(h)?;
    let down = eval(-h)?;
    Ok(up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

fn assemble(ws: &Workspace, diffs: &[Vec<f64>]) -> ScoreMatrix {
    let p = diffs.len();
    let weights: Vec<f64> = ws.strata().iter().flat_map(|s| s.counts.iter().copied()).collect();
    let mut scores = vec![0.0; weights.len() * p];
    for (k, d) in diffs.iter().enumerate() {
        for (r, v) in d.iter().enumerate() {
            scores[r * p + k] = *v;
        }
    }
    ScoreMatrix {
        n_params: p,
        scores,
        weights,
    }
}

/// One score row per record of `data`, weighted by the record weight.
pub fn unit_scores(model: &ModelSpec, beta: &[f64], data: &Dataset) -> Result<ScoreMatrix> {
    let ws = Workspace::from_data(model, data)?;
    let cells = cell_scores(&ws, beta)?;
    Ok(expand_to_units(&ws, &cells, data))
}

pub fn unit_scores_richardson(model: &ModelSpec, beta: &[f64], data: &Dataset) -> Result<ScoreMatrix> {
    let ws = Workspace::from_data(model, data)?;
    let cells = cell_scores_richardson(&ws, beta)?;
    Ok(expand_to_units(&ws, &cells, data))
}

fn expand_to_units(ws: &Workspace, cells: &ScoreMatrix, data: &Dataset) -> ScoreMatrix {
    let p = cells.n_params;
    let mut row_of: HashMap<(Vec<u64>, usize), usize> = HashMap::new();
    let mut r = 0;
    for s in ws.strata() {
        let key: Vec<u64> = s.covariates.iter().map(|v| v.to_bits()).collect();
        for &cell in &s.cells {
            row_of.insert((key.clone(), cell), r);
            r += 1;
        }
    }
    let mut scores = Vec::with_capacity(data.records.len() * p);
    let mut weights = Vec::with_capacity(data.records.len());
    for rec in &data.records {
        let key: Vec<u64> = rec.covariates.iter().map(|v| v.to_bits()).collect();
        match row_of.get(&(key, data.cell_index(rec))) {
            Some(&k) => scores.extend_from_slice(cells.row(k)),
            // zero-weight records never enter the likelihood
            None => scores.extend(std::iter::repeat_n(0.0, p)),
        }
        weights.push(rec.weight);
    }
    ScoreMatrix {
        n_params: p,
        scores,
        weights,
    }
}

/// Outer-product estimate `sum_u w_u s_u s_u'`.
pub fn expected_information(scores: &ScoreMatrix) -> DMatrix<f64> {
    let p = scores.n_params;
    let mut f = DMatrix::zeros(p, p);
    for (r, &w) in scores.weights.iter().enumerate() {
        let s = scores.row(r);
        for a in 0..p {
            let wa = w * s[a];
            for b in a..p {
                f[(a, b)] += wa * s[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            f[(a, b)] = f[(b, a)];
        }
    }
    f
}

/// Model-based information `sum_s n_s sum_j P_s(j) s_j s_j'`, summing over
/// every observed cell of each stratum rather than the data cells only.
pub fn model_information(model: &ModelSpec, beta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
    let n_cells = model.n_observed_cells();
    let strata: Vec<_> = data
        .strata()
        .into_iter()
        .map(|s| {
            let total = s.total();
            crate::data::Stratum {
                covariates: s.covariates,
                cells: (0..n_cells).collect(),
                counts: vec![total; n_cells],
            }
        })
        .collect();
    let ws = Workspace::new(model, strata)?;
    let lp = ws.cell_log_probs(beta)?;
    let mut scores = cell_scores(&ws, beta)?;
    for (w, l) in scores.weights.iter_mut().zip(lp.iter().flatten()) {
        *w *= l.exp();
    }
    Ok(expected_information(&scores))
}

/// Square roots of the diagonal of `F^-1`.
pub fn standard_errors(f: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = f.nrows();
    if p == 0 {
        return Ok(Vec::new());
    }
    if f.ncols() != p {
        return Err(Error::Dimension("information matrix is not square".into()));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("information matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(f.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularInformation { condition });
    }
    let inv = f
        .clone()
        .cholesky()
        .ok_or(Error::SingularInformation { condition })?
        .inverse();
    Ok((0..p).map(|k| inv[(k, k)].sqrt()).collect())
}

/// Outer-product standard errors at `beta`.
pub fn fit_standard_errors(model: &ModelSpec, beta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    let ws = Workspace::from_data(model, data)?;
    standard_errors(&expected_information(&cell_scores(&ws, beta)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub beta: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rank: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub verdict: String,
    pub identified: bool,
    pub n_params: usize,
    pub observed_df: usize,
    pub n_points: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub points: Vec<PointReport>,
}

/// Rank of the Jacobian of observed cell probabilities at `n_points` random
/// parameter points. Covariates, if any, are held at zero.
pub fn identifiability_check(model: &ModelSpec, n_points: usize, seed: u64) -> Result<IdentifiabilityReport> {
    if n_points == 0 {
        return Err(Error::Query("at least one point is required".into()));
    }
    let report = validate(model);
    if !report.is_valid() {
        let v = &report.violations[0];
        return Err(v.to_error());
    }
    let layout = param_layout(model);
    let p = layout.len();
    let df = report.observed_df;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let betas: Vec<Vec<f64>> = (0..n_points)
        .map(|_| random_beta(model, &layout, &mut rng, 2.0))
        .collect();
    let zero = vec![0.0; model.covariate_names.len()];
    let points = betas
        .into_par_iter()
        .map(|beta| {
            let probs =
                |b: &[f64]| -> Result<Vec<f64>> { Ok(observed_distribution(model, &layout, b, &zero)?.into_values()) };
            let base_len = probs(&beta)?.len();
            let mut jac = DMatrix::zeros(base_len, p);
            for k in 0..p {
                let h = step(beta[k]);
                let mut up = beta.clone();
                up[k] += h;
                let mut down = beta.clone();
                down[k] -= h;
                let (a, b) = (probs(&up)?, probs(&down)?);
                for r in 0..base_len {
                    jac[(r, k)] = (a[r] - b[r]) / (2.0 * h);
                }
            }
            let sv = if p == 0 {
                Vec::new()
            } else {
                let mut v: Vec<f64> = jac.singular_values().iter().copied().collect();
                v.resize(p, 0.0);
                v
            };
            let sigma_max = sv.iter().copied().fold(0.0, f64::max);
            let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
            let rank = sv
                .iter()
                .filter(|&&s| sigma_max > 0.0 && s / sigma_max > RANK_TOL)
                .count();
            Ok(PointReport {
                beta,
                sigma_min: if p == 0 { 0.0 } else { sigma_min },
                sigma_max,
                rank,
                pass: rank == p && p <= df,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let identified = points.iter().all(|pt| pt.pass);
    Ok(IdentifiabilityReport {
        verdict: if identified { "identified" } else { "not identified" }.to_string(),
        identified,
        n_params: p,
        observed_df: df,
        n_points,
        seed,
        tolerance: RANK_TOL,
        points,
    })
}
