//! Observations of the observed nodes, with optional numeric covariates and
//! case weights, and their grouping into covariate strata.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::table::n_cells;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// One category code per observed node, in causal order.
    pub categories: Vec<usize>,
    pub covariates: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Positions of the observed nodes in the model.
    pub observed: Vec<usize>,
    pub names: Vec<String>,
    pub levels: Vec<usize>,
    pub covariate_names: Vec<String>,
    pub records: Vec<Record>,
}

/// Units sharing one covariate vector, grouped by observed cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub covariates: Vec<f64>,
    /// Lexicographic indices into the observed table, ascending.
    pub cells: Vec<usize>,
    pub counts: Vec<f64>,
}

impl Stratum {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

impl Dataset {
    pub fn empty(model: &ModelSpec) -> Self {
        let observed = model.observed();
        Self {
            names: observed.iter().map(|&i| model.nodes[i].name.clone()).collect(),
            levels: observed.iter().map(|&i| model.nodes[i].n_categories).collect(),
            observed,
            covariate_names: model.covariate_names.clone(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if record.categories.len() != self.levels.len() {
            return Err(Error::Data(format!(
                "record has {} categories, expected {}",
                record.categories.len(),
                self.levels.len()
            )));
        }
        for (k, (&c, &l)) in record.categories.iter().zip(&self.levels).enumerate() {
            if c >= l {
                return Err(Error::Data(format!(
                    "category {c} of `{}` exceeds its {l} levels",
                    self.names[k]
                )));
            }
        }
        if record.covariates.len() != self.covariate_names.len() {
            return Err(Error::Data(format!(
                "record has {} covariates, expected {}",
                record.covariates.len(),
                self.covariate_names.len()
            )));
        }
        if record.covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite covariate value".into()));
        }
        if !(record.weight >= 0.0) || !record.weight.is_finite() {
            return Err(Error::Data(format!("invalid weight {}", record.weight)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.records.iter().map(|r| r.weight).sum()
    }

    pub fn has_covariates(&self) -> bool {
        !self.covariate_names.is_empty()
    }

    pub fn cell_index(&self, record: &Record) -> usize {
        record
            .categories
            .iter()
            .zip(&self.levels)
            .fold(0, |acc, (&c, &l)| acc * l + c)
    }

    pub fn n_observed_cells(&self) -> usize {
        n_cells(&self.levels)
    }

    /// Groups records by covariate vector (first-appearance order) and,
    /// within each, by observed cell. Zero-weight cells are dropped.
    pub fn strata(&self) -> Vec<Stratum> {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut groups: Vec<(Vec<f64>, BTreeMap<usize, f64>)> = Vec::new();
        for r in &self.records {
            let key: Vec<u64> = r.covariates.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                groups.push((r.covariates.clone(), BTreeMap::new()));
                groups.len() - 1
            });
            *groups[g].1.entry(self.cell_index(r)).or_insert(0.0) += r.weight;
        }
        groups
            .into_iter()
            .map(|(covariates, cells)| {
                let (cells, counts): (Vec<usize>, Vec<f64>) = cells.into_iter().filter(|&(_, w)| w > 0.0).unzip();
                Stratum {
                    covariates,
                    cells,
                    counts,
                }
            })
            .filter(|s| !s.cells.is_empty())
            .collect()
    }

    /// One record per distinct (covariates, cell) with summed weight.
    pub fn grouped(&self) -> Dataset {
        let mut out = Dataset {
            records: Vec::new(),
            ..self.clone()
        };
        for s in self.strata() {
            for (&cell, &w) in s.cells.iter().zip(&s.counts) {
                out.records.push(Record {
                    categories: crate::table::lex_cell(&self.levels, cell),
                    covariates: s.covariates.clone(),
                    weight: w,
                });
            }
        }
        out
    }

    /// Replicates records into unit weight rows; weights must be integers.
    pub fn ungrouped(&self) -> Result<Dataset> {
        let mut out = Dataset {
            records: Vec::new(),
            ..self.clone()
        };
        for r in &self.records {
            if r.weight.fract() != 0.0 {
                return Err(Error::Data(format!("weight {} is not an integer count", r.weight)));
            }
            for _ in 0..r.weight as u64 {
                out.records.push(Record {
                    weight: 1.0,
                    ..r.clone()
                });
            }
        }
        Ok(out)
    }

    /// Reads a CSV with a header naming the observed nodes, any covariates
    /// and an optional `weight` column.
    pub fn from_csv<R: Read>(model: &ModelSpec, reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut ds = Dataset::empty(model);
        let mut node_col = vec![None; ds.names.len()];
        let mut cov_col = vec![None; ds.covariate_names.len()];
        let mut weight_col = None;
        for (c, h) in headers.iter().enumerate() {
            if h == "weight" {
                weight_col = Some(c);
            } else if let Some(k) = ds.names.iter().position(|n| n == h) {
                node_col[k] = Some(c);
            } else if let Some(k) = ds.covariate_names.iter().position(|n| n == h) {
                cov_col[k] = Some(c);
            } else if model.position_of(h).is_some() {
                return Err(Error::Data(format!("column `{h}` is a latent node")));
            } else {
                return Err(Error::Data(format!("unknown column `{h}`")));
            }
        }
        let node_col: Vec<usize> = node_col
            .iter()
            .zip(&ds.names)
            .map(|(c, n)| c.ok_or_else(|| Error::Data(format!("missing column `{n}`"))))
            .collect::<Result<_>>()?;
        let cov_col: Vec<usize> = cov_col
            .iter()
            .zip(&ds.covariate_names)
            .map(|(c, n)| c.ok_or_else(|| Error::Data(format!("missing covariate column `{n}`"))))
            .collect::<Result<_>>()?;
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let field = |c: usize| row.get(c).unwrap_or("");
            let at = |msg: String| Error::Data(format!("row {}: {msg}", line + 2));
            let categories = node_col
                .iter()
                .map(|&c| {
                    field(c)
                        .parse::<usize>()
                        .map_err(|_| at(format!("bad category `{}`", field(c))))
                })
                .collect::<Result<Vec<_>>>()?;
            let covariates = cov_col
                .iter()
                .map(|&c| {
                    field(c)
                        .parse::<f64>()
                        .map_err(|_| at(format!("bad covariate `{}`", field(c))))
                })
                .collect::<Result<Vec<_>>>()?;
            let weight = match weight_col {
                Some(c) => field(c)
                    .parse::<f64>()
                    .map_err(|_| at(format!("bad weight `{}`", field(c))))?,
                None => 1.0,
            };
            ds.push(Record {
                categories,
                covariates,
                weight,
            })
            .map_err(|e| at(e.to_string()))?;
        }
        Ok(ds)
    }

    /// Writes the CSV read by [`Dataset::from_csv`]. The weight column is
    /// emitted only when some weight differs from 1.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let with_weight = self.records.iter().any(|r| r.weight != 1.0);
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.names.clone();
        header.extend(self.covariate_names.iter().cloned());
        if with_weight {
            header.push("weight".into());
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = r.categories.iter().map(usize::to_string).collect();
            row.extend(r.covariates.iter().map(|v| v.to_string()));
            if with_weight {
                row.push(r.weight.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
