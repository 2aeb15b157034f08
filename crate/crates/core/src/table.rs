//! Dense probability and frequency tables in lexicographic order.
//!
//! A [`LexTable`] stores one value per cell of the cross-classification of
//! its variables. Cells are laid out so that the categories of later-listed
//! variables run fastest. Reordering, expansion onto a superset of variables
//! and marginalization are all driven by flat [`IndexMap`]s that can be built
//! once and reused across iterations.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::Scalar;

/// Row-major strides: the last variable has stride 1.
pub fn strides(levels: &[usize]) -> Vec<usize> {
    let mut out = vec![1; levels.len()];
    for k in (0..levels.len().saturating_sub(1)).rev() {
        out[k] = out[k + 1] * levels[k + 1];
    }
    out
}

pub fn n_cells(levels: &[usize]) -> usize {
    levels.iter().product()
}

/// Mixed-radix encoding of `cell`, last variable fastest.
pub fn lex_index(levels: &[usize], cell: &[usize]) -> Result<usize> {
    if levels.len() != cell.len() {
        return Err(Error::Dimension(format!(
            "cell has {} coordinates, table has {} variables",
            cell.len(),
            levels.len()
        )));
    }
    let mut idx = 0;
    for (pos, (&c, &l)) in cell.iter().zip(levels).enumerate() {
        if c >= l {
            return Err(Error::OutOfRange {
                pos,
                coord: c,
                level: l,
            });
        }
        idx = idx * l + c;
    }
    Ok(idx)
}

/// Inverse of [`lex_index`]. `index` must be below the number of cells.
pub fn lex_cell(levels: &[usize], mut index: usize) -> Vec<usize> {
    let mut cell = vec![0; levels.len()];
    for k in (0..levels.len()).rev() {
        cell[k] = index % levels[k];
        index /= levels[k];
    }
    cell
}

/// Advances `cell` to the next cell in lexicographic order. Returns the
/// position of the coordinate that was incremented, or `None` on wrap-around.
#[inline]
pub(crate) fn odometer_step(levels: &[usize], cell: &mut [usize]) -> Option<usize> {
    for k in (0..levels.len()).rev() {
        cell[k] += 1;
        if cell[k] < levels[k] {
            return Some(k);
        }
        cell[k] = 0;
    }
    None
}

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> Default for KahanSum<T> {
    fn default() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }
}

impl<T: Scalar> KahanSum<T> {
    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp + ((self.sum - t) + x);
        } else {
            self.comp = self.comp + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

pub fn kahan_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut acc = KahanSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexTable<T> {
    vars: Vec<usize>,
    levels: Vec<usize>,
    values: Vec<T>,
}

fn check_distinct(vars: &[usize]) -> Result<()> {
    for (k, v) in vars.iter().enumerate() {
        if vars[..k].contains(v) {
            return Err(Error::Variables(format!("variable {v} listed twice")));
        }
    }
    Ok(())
}

impl<T: Scalar> LexTable<T> {
    pub fn new(vars: Vec<usize>, levels: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if vars.len() != levels.len() {
            return Err(Error::Dimension(format!(
                "{} variables but {} levels",
                vars.len(),
                levels.len()
            )));
        }
        check_distinct(&vars)?;
        if values.len() != n_cells(&levels) {
            return Err(Error::Dimension(format!(
                "table over levels {levels:?} needs {} values, got {}",
                n_cells(&levels),
                values.len()
            )));
        }
        Ok(Self { vars, levels, values })
    }

    pub fn filled(vars: Vec<usize>, levels: Vec<usize>, value: T) -> Result<Self> {
        let n = n_cells(&levels);
        Self::new(vars, levels, vec![value; n])
    }

    /// Table over no variables holding a single value.
    pub fn scalar(value: T) -> Self {
        Self {
            vars: Vec::new(),
            levels: Vec::new(),
            values: vec![value],
        }
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }

    pub fn level_of(&self, var: usize) -> Option<usize> {
        self.position(var).map(|p| self.levels[p])
    }

    pub fn get(&self, cell: &[usize]) -> Result<T> {
        Ok(self.values[lex_index(&self.levels, cell)?])
    }

    pub fn total(&self) -> T {
        kahan_sum(self.values.iter().copied())
    }

    /// Sums out every variable not in `keep`. The result lists the kept
    /// variables in their original relative order.
    pub fn marginalize(&self, keep: &[usize]) -> Result<Self> {
        for v in keep {
            if self.position(*v).is_none() {
                return Err(Error::Variables(format!(
                    "cannot keep variable {v}: not in table over {:?}",
                    self.vars
                )));
            }
        }
        check_distinct(keep)?;
        let to: Vec<usize> = self.vars.iter().copied().filter(|v| keep.contains(v)).collect();
        let map = IndexMap::between(&self.vars, &self.levels, &to, &self.levels_for(&to))?;
        map.apply(self)
    }

    /// Replicates entries onto `target_vars`, a superset of this table's
    /// variables in any order.
    pub fn expand(&self, target_vars: &[usize], target_levels: &[usize]) -> Result<Self> {
        let map = IndexMap::between(&self.vars, &self.levels, target_vars, target_levels)?;
        map.apply(self)
    }

    /// Permutes the variable order.
    pub fn reorder(&self, vars: &[usize]) -> Result<Self> {
        if vars.len() != self.vars.len() {
            return Err(Error::Variables(format!(
                "{vars:?} is not a permutation of {:?}",
                self.vars
            )));
        }
        let levels = self.levels_for(vars);
        let map = IndexMap::between(&self.vars, &self.levels, vars, &levels)?;
        map.apply(self)
    }

    /// Slice of the table at fixed values of some variables; the fixed
    /// variables are removed from the result.
    pub fn fix(&self, assignments: &[(usize, usize)]) -> Result<Self> {
        let mut fixed = vec![None; self.vars.len()];
        for &(var, value) in assignments {
            let pos = self
                .position(var)
                .ok_or_else(|| Error::Variables(format!("cannot fix variable {var}: not in table")))?;
            if value >= self.levels[pos] {
                return Err(Error::OutOfRange {
                    pos,
                    coord: value,
                    level: self.levels[pos],
                });
            }
            fixed[pos] = Some(value);
        }
        let st = strides(&self.levels);
        let mut base = 0;
        let mut vars = Vec::new();
        let mut levels = Vec::new();
        let mut free_strides = Vec::new();
        for (pos, f) in fixed.iter().enumerate() {
            match f {
                Some(v) => base += v * st[pos],
                None => {
                    vars.push(self.vars[pos]);
                    levels.push(self.levels[pos]);
                    free_strides.push(st[pos]);
                }
            }
        }
        let n = n_cells(&levels);
        let mut values = Vec::with_capacity(n);
        let mut cell = vec![0; levels.len()];
        let mut src = base;
        loop {
            values.push(self.values[src]);
            match odometer_step(&levels, &mut cell) {
                Some(k) => {
                    src += free_strides[k];
                    for j in k + 1..levels.len() {
                        src -= (levels[j] - 1) * free_strides[j];
                    }
                }
                None => break,
            }
        }
        Self::new(vars, levels, values)
    }

    /// Elementwise product with a table over the same variables in the same order.
    pub fn mul_assign_table(&mut self, other: &Self) -> Result<()> {
        if self.vars != other.vars || self.levels != other.levels {
            return Err(Error::Variables(format!(
                "elementwise product needs identical variables, got {:?} and {:?}",
                self.vars, other.vars
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = *a * *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.values {
            *v = *v * factor;
        }
    }

    fn levels_for(&self, vars: &[usize]) -> Vec<usize> {
        vars.iter().map(|v| self.level_of(*v).unwrap_or(0)).collect()
    }

    /// Debug dump: one row per cell with its coordinates and value.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::new();
        let header: Vec<String> = self
            .vars
            .iter()
            .map(|&v| names.get(v).cloned().unwrap_or_else(|| format!("v{v}")))
            .chain(std::iter::once("value".to_string()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        if self.vars.is_empty() {
            let _ = writeln!(out, "{}", self.values[0]);
            return out;
        }
        let mut cell = vec![0; self.levels.len()];
        let mut idx = 0;
        loop {
            for c in &cell {
                let _ = write!(out, "{c},");
            }
            let _ = writeln!(out, "{}", self.values[idx]);
            idx += 1;
            if odometer_step(&self.levels, &mut cell).is_none() {
                break;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    /// Target is a permutation of the source variables; gather.
    Reorder,
    /// Target is a strict superset; gather with replication.
    Expand,
    /// Target is a strict subset; scatter-add with compensated summation.
    Marginalize,
    /// Target is a strict subset; gather the cell with dropped variables at 0.
    Select,
}

/// Precomputed flat index array between two table shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMap {
    kind: MapKind,
    from_vars: Vec<usize>,
    from_levels: Vec<usize>,
    to_vars: Vec<usize>,
    to_levels: Vec<usize>,
    index: Vec<usize>,
}

/// Builds the map from a table over `from_vars` to one over `to_vars`.
/// `levels` is indexed by variable id.
pub fn build_index_map(from_vars: &[usize], to_vars: &[usize], levels: &[usize]) -> Result<IndexMap> {
    let lv = |vars: &[usize]| -> Result<Vec<usize>> {
        vars.iter()
            .map(|&v| {
                levels
                    .get(v)
                    .copied()
                    .ok_or_else(|| Error::Variables(format!("no level given for variable {v}")))
            })
            .collect()
    };
    IndexMap::between(from_vars, &lv(from_vars)?, to_vars, &lv(to_vars)?)
}

impl IndexMap {
    pub fn between(from_vars: &[usize], from_levels: &[usize], to_vars: &[usize], to_levels: &[usize]) -> Result<Self> {
        check_distinct(from_vars)?;
        check_distinct(to_vars)?;
        if from_vars.len() != from_levels.len() || to_vars.len() != to_levels.len() {
            return Err(Error::Dimension("variables and levels differ in length".into()));
        }
        let to_in_from = to_vars.iter().all(|v| from_vars.contains(v));
        let from_in_to = from_vars.iter().all(|v| to_vars.contains(v));
        let kind = match (to_in_from, from_in_to) {
            (true, true) => MapKind::Reorder,
            (false, true) => MapKind::Expand,
            (true, false) => MapKind::Marginalize,
            (false, false) => {
                return Err(Error::Variables(format!(
                    "incompatible variable sets {from_vars:?} and {to_vars:?}"
                )))
            }
        };
        for (k, v) in to_vars.iter().enumerate() {
            if let Some(p) = from_vars.iter().position(|u| u == v) {
                if from_levels[p] != to_levels[k] {
                    return Err(Error::Variables(format!(
                        "variable {v} has {} levels in source but {} in target",
                        from_levels[p], to_levels[k]
                    )));
                }
            }
        }
        let index = match kind {
            MapKind::Reorder | MapKind::Expand | MapKind::Select => {
                gather_index(from_vars, from_levels, to_vars, to_levels)
            }
            MapKind::Marginalize => gather_index(to_vars, to_levels, from_vars, from_levels),
        };
        Ok(Self {
            kind,
            from_vars: from_vars.to_vec(),
            from_levels: from_levels.to_vec(),
            to_vars: to_vars.to_vec(),
            to_levels: to_levels.to_vec(),
            index,
        })
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn index(&self) -> &[usize] {
        &self.index
    }

    pub fn from_vars(&self) -> &[usize] {
        &self.from_vars
    }

    pub fn to_vars(&self) -> &[usize] {
        &self.to_vars
    }

    pub fn to_levels(&self) -> &[usize] {
        &self.to_levels
    }

    pub fn target_len(&self) -> usize {
        n_cells(&self.to_levels)
    }

    /// The registered inverse. Reorder maps invert to the reverse permutation,
    /// expansions to a selection of one replicate; marginalization has no inverse.
    pub fn inverse(&self) -> Result<IndexMap> {
        match self.kind {
            MapKind::Reorder => Self::between(&self.to_vars, &self.to_levels, &self.from_vars, &self.from_levels),
            MapKind::Expand => {
                let index = gather_index(&self.to_vars, &self.to_levels, &self.from_vars, &self.from_levels);
                Ok(Self {
                    kind: MapKind::Select,
                    from_vars: self.to_vars.clone(),
                    from_levels: self.to_levels.clone(),
                    to_vars: self.from_vars.clone(),
                    to_levels: self.from_levels.clone(),
                    index,
                })
            }
            MapKind::Marginalize | MapKind::Select => Err(Error::Variables(
                "marginalization and selection maps have no registered inverse".into(),
            )),
        }
    }

    /// Applies the map to raw values laid out as the source shape.
    pub fn apply_values<T: Scalar>(&self, src: &[T]) -> Result<Vec<T>> {
        if src.len() != n_cells(&self.from_levels) {
            return Err(Error::Dimension(format!(
                "map expects {} source values, got {}",
                n_cells(&self.from_levels),
                src.len()
            )));
        }
        Ok(match self.kind {
            MapKind::Reorder | MapKind::Expand | MapKind::Select => self.index.iter().map(|&s| src[s]).collect(),
            MapKind::Marginalize => {
                let mut acc = vec![KahanSum::<T>::default(); self.target_len()];
                for (s, &t) in self.index.iter().enumerate() {
                    acc[t].add(src[s]);
                }
                acc.iter().map(KahanSum::value).collect()
            }
        })
    }

    pub fn apply<T: Scalar>(&self, t: &LexTable<T>) -> Result<LexTable<T>> {
        if t.vars != self.from_vars || t.levels != self.from_levels {
            return Err(Error::Variables(format!(
                "map built for {:?} applied to table over {:?}",
                self.from_vars, t.vars
            )));
        }
        LexTable::new(
            self.to_vars.clone(),
            self.to_levels.clone(),
            self.apply_values(&t.values)?,
        )
    }
}

/// For every cell of the `to` shape, the flat index of its projection onto
/// the `from` shape. Every `from` variable must appear in `to`.
fn gather_index(from_vars: &[usize], from_levels: &[usize], to_vars: &[usize], to_levels: &[usize]) -> Vec<usize> {
    let from_strides = strides(from_levels);
    let step: Vec<usize> = to_vars
        .iter()
        .map(|v| from_vars.iter().position(|u| u == v).map_or(0, |p| from_strides[p]))
        .collect();
    let n = n_cells(to_levels);
    let mut out = Vec::with_capacity(n);
    let mut cell = vec![0; to_levels.len()];
    let mut src = 0usize;
    loop {
        out.push(src);
        match odometer_step(to_levels, &mut cell) {
            Some(k) => {
                src += step[k];
                for j in k + 1..to_levels.len() {
                    src -= (to_levels[j] - 1) * step[j];
                }
            }
            None => break,
        }
    }
    out
}

type MapKey = (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>);

/// Index maps keyed by source and target shape, built on first use.
#[derive(Debug, Default)]
pub struct IndexCache {
    maps: Mutex<HashMap<MapKey, Arc<IndexMap>>>,
}

impl IndexCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(
        &self,
        from_vars: &[usize],
        from_levels: &[usize],
        to_vars: &[usize],
        to_levels: &[usize],
    ) -> Result<Arc<IndexMap>> {
        let key = (
            from_vars.to_vec(),
            from_levels.to_vec(),
            to_vars.to_vec(),
            to_levels.to_vec(),
        );
        let mut maps = self.maps.lock().expect("index cache poisoned");
        if let Some(m) = maps.get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(IndexMap::between(from_vars, from_levels, to_vars, to_levels)?);
        maps.insert(key, Arc::clone(&m));
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.maps.lock().expect("index cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
