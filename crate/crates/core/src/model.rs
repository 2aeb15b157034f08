//! Model structure: ordered nodes, latent flags, links, parent sets and the
//! regression design of each node's logits.
//!
//! Nodes are stored in causal order. Parents are held as 0-based positions
//! into [`ModelSpec::nodes`], sorted ascending, so every parent precedes its
//! child. The default regression design is additive on the link scale with
//! incremental intercepts:
//!
//! ```text
//! lam_h = sum_{l<=h} b0_l + sum_{j in pa} sum_{l=1}^{c_j-1} b_jl * I(z_j >= l) + covariate terms
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::Link;
use crate::table::n_cells;
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSlopes {
    /// One slope per covariate, shared by every logit of the node.
    #[default]
    Shared,
    /// One slope per covariate per logit.
    PerLogit,
}

/// Explicit design for a node's parent effects. One row per
/// (parent configuration, logit) pair, parent configurations in lexicographic
/// order over the sorted parents, logits running fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub rows: Vec<Vec<f64>>,
}

impl Design {
    pub fn n_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    /// 1-based position in causal order.
    pub index: usize,
    pub name: String,
    pub n_categories: usize,
    pub is_latent: bool,
    pub link: Link,
    /// 0-based node positions, ascending.
    pub parents: Vec<usize>,
    /// Positions into [`ModelSpec::covariate_names`].
    pub covariates: Vec<usize>,
    pub covariate_slopes: CovariateSlopes,
    pub design: Option<Design>,
}

impl NodeSpec {
    pub fn n_logits(&self) -> usize {
        self.n_categories - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub nodes: Vec<NodeSpec>,
    pub covariate_names: Vec<String>,
}

impl ModelSpec {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, pos: usize) -> &NodeSpec {
        &self.nodes[pos]
    }

    pub fn position_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    /// Category counts indexed by node position.
    pub fn levels(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.n_categories).collect()
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_latent).collect()
    }

    pub fn latent(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_latent).collect()
    }

    pub fn observed_levels(&self) -> Vec<usize> {
        self.observed().iter().map(|&i| self.nodes[i].n_categories).collect()
    }

    pub fn latent_levels(&self) -> Vec<usize> {
        self.latent().iter().map(|&i| self.nodes[i].n_categories).collect()
    }

    pub fn n_observed_cells(&self) -> usize {
        n_cells(&self.observed_levels())
    }

    pub fn n_latent_configs(&self) -> usize {
        n_cells(&self.latent_levels())
    }

    pub fn children(&self, pos: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].parents.contains(&pos))
            .collect()
    }

    /// Number of parent configurations of a node.
    pub fn n_parent_configs(&self, pos: usize) -> usize {
        self.nodes[pos]
            .parents
            .iter()
            .map(|&j| self.nodes[j].n_categories)
            .product()
    }

    /// Variables of a node's conditional table: its parents then itself.
    pub fn family(&self, pos: usize) -> Vec<usize> {
        let mut v = self.nodes[pos].parents.clone();
        v.push(pos);
        v
    }

    pub fn has_covariates(&self) -> bool {
        !self.covariate_names.is_empty()
    }
}

// ---------------------------------------------------------------------------
// document schema

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariates: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    name: String,
    categories: usize,
    #[serde(default)]
    latent: bool,
    link: String,
    #[serde(default)]
    parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    covariates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariate_slopes: Option<CovariateSlopes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    design: Option<Vec<Vec<f64>>>,
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Syntax(e.to_string()))?;
    if doc.nodes.is_empty() {
        return Err(Error::InvalidModel("model has no nodes".into()));
    }
    let mut seen = HashSet::new();
    for n in &doc.nodes {
        if !seen.insert(n.name.as_str()) {
            return Err(Error::model(&n.name, "duplicate node name"));
        }
    }
    let mut covariate_names: Vec<String> = doc.covariates.clone().unwrap_or_default();
    let declared = doc.covariates.is_some();
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for (pos, nd) in doc.nodes.iter().enumerate() {
        let link: Link = nd.link.parse().map_err(|e: String| Error::model(&nd.name, e))?;
        let mut parents = Vec::with_capacity(nd.parents.len());
        for pname in &nd.parents {
            let p = doc
                .nodes
                .iter()
                .position(|m| &m.name == pname)
                .ok_or_else(|| Error::model(&nd.name, format!("unknown parent `{pname}`")))?;
            if p >= pos {
                return Err(Error::model(
                    &nd.name,
                    format!("non-recursive parent reference `{pname}`"),
                ));
            }
            if parents.contains(&p) {
                return Err(Error::model(&nd.name, format!("duplicate parent `{pname}`")));
            }
            parents.push(p);
        }
        parents.sort_unstable();
        let mut covariates = Vec::with_capacity(nd.covariates.len());
        for cname in &nd.covariates {
            let k = match covariate_names.iter().position(|c| c == cname) {
                Some(k) => k,
                None if !declared => {
                    covariate_names.push(cname.clone());
                    covariate_names.len() - 1
                }
                None => return Err(Error::model(&nd.name, format!("covariate `{cname}` not declared"))),
            };
            if covariates.contains(&k) {
                return Err(Error::model(&nd.name, format!("duplicate covariate `{cname}`")));
            }
            covariates.push(k);
        }
        nodes.push(NodeSpec {
            index: pos + 1,
            name: nd.name.clone(),
            n_categories: nd.categories,
            is_latent: nd.latent,
            link,
            parents,
            covariates,
            covariate_slopes: nd.covariate_slopes.unwrap_or_default(),
            design: nd.design.clone().map(|rows| Design { rows }),
        });
    }
    let model = ModelSpec { nodes, covariate_names };
    let report = validate(&model);
    if let Some(v) = report.violations.first() {
        return Err(match &v.node {
            Some(n) => Error::model(n, &v.reason),
            None => Error::InvalidModel(v.reason.clone()),
        });
    }
    Ok(model)
}

/// Serializes a model to the document schema accepted by [`parse_model`].
pub fn emit_model(model: &ModelSpec) -> String {
    let doc = ModelDoc {
        nodes: model
            .nodes
            .iter()
            .map(|n| NodeDoc {
                name: n.name.clone(),
                categories: n.n_categories,
                latent: n.is_latent,
                link: n.link.name().to_string(),
                parents: n.parents.iter().map(|&p| model.nodes[p].name.clone()).collect(),
                covariates: n.covariates.iter().map(|&k| model.covariate_names[k].clone()).collect(),
                covariate_slopes: (n.covariate_slopes != CovariateSlopes::Shared).then_some(n.covariate_slopes),
                design: n.design.as_ref().map(|d| d.rows.clone()),
            })
            .collect(),
        covariates: Some(model.covariate_names.clone()),
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}

// ---------------------------------------------------------------------------
// validation

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub node: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// (node name, free parameters).
    pub node_params: Vec<(String, usize)>,
    pub n_params: usize,
    pub observed_cells: usize,
    /// Cells of the observed table minus one.
    pub observed_df: usize,
}

impl Violation {
    pub fn to_error(&self) -> Error {
        match &self.node {
            Some(n) => Error::model(n, &self.reason),
            None => Error::InvalidModel(self.reason.clone()),
        }
    }
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(model: &ModelSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |node: Option<&str>, reason: String| {
        violations.push(Violation {
            node: node.map(str::to_string),
            reason,
        })
    };
    if model.nodes.is_empty() {
        push(None, "model has no nodes".into());
    }
    let mut names = HashSet::new();
    for (pos, n) in model.nodes.iter().enumerate() {
        let name = Some(n.name.as_str());
        if n.index != pos + 1 {
            push(name, format!("index {} does not match position {}", n.index, pos + 1));
        }
        if !names.insert(n.name.as_str()) {
            push(name, "duplicate node name".into());
        }
        if n.n_categories < 2 {
            push(name, format!("needs at least 2 categories, has {}", n.n_categories));
        }
        let mut seen = HashSet::new();
        for &p in &n.parents {
            if p >= pos {
                push(name, format!("non-recursive parent reference (position {})", p + 1));
            }
            if !seen.insert(p) {
                push(name, "duplicate parent".into());
            }
        }
        if n.parents.windows(2).any(|w| w[0] > w[1]) {
            push(name, "parents must be sorted in causal order".into());
        }
        let mut cseen = HashSet::new();
        for &k in &n.covariates {
            if k >= model.covariate_names.len() {
                push(name, format!("covariate index {k} out of range"));
            }
            if !cseen.insert(k) {
                push(name, "duplicate covariate".into());
            }
        }
        if let Some(d) = &n.design {
            let parents_ok = n.parents.iter().all(|&p| p < model.nodes.len());
            if parents_ok && n.n_categories >= 2 {
                let want = model.n_parent_configs(pos) * (n.n_categories - 1);
                if d.rows.len() != want {
                    push(name, format!("design has {} rows, expected {want}", d.rows.len()));
                }
            }
            let w = d.n_cols();
            if w == 0 {
                push(name, "design has no columns".into());
            }
            if d.rows.iter().any(|r| r.len() != w) {
                push(name, "design rows differ in width".into());
            }
            if d.rows.iter().flatten().any(|v| !v.is_finite()) {
                push(name, "design has non-finite entries".into());
            }
        }
    }
    if !model.nodes.is_empty() && model.nodes.iter().all(|n| n.is_latent) {
        push(None, "at least one node must be observed".into());
    }

    let structurally_ok = violations.is_empty();
    let (node_params, n_params) = if structurally_ok {
        let layout = param_layout(model);
        let np: Vec<(String, usize)> = model
            .nodes
            .iter()
            .zip(&layout.blocks)
            .map(|(n, b)| (n.name.clone(), b.slots.len()))
            .collect();
        (np, layout.len())
    } else {
        (Vec::new(), 0)
    };
    let observed_cells = if model.nodes.iter().all(|n| n.n_categories >= 1) {
        model.n_observed_cells()
    } else {
        0
    };
    ValidationReport {
        violations,
        node_params,
        n_params,
        observed_cells,
        observed_df: observed_cells.saturating_sub(1),
    }
}

// ---------------------------------------------------------------------------
// parameter layout

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Slot {
    /// Incremental intercept `b0_l`, `level` in 1..c.
    Intercept { level: usize },
    /// Slope on `I(z_parent >= level)`.
    Parent { parent: usize, level: usize },
    /// Column of an explicit design.
    Design { column: usize },
    /// Covariate slope; `logit` is set for per-logit slopes.
    Covariate { covariate: usize, logit: Option<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeBlock {
    pub node: usize,
    pub offset: usize,
    pub slots: Vec<Slot>,
}

impl NodeBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.slots.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub blocks: Vec<NodeBlock>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.slots.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, node: usize) -> &NodeBlock {
        &self.blocks[node]
    }

    /// (node, slot) for a flat index.
    pub fn locate(&self, flat: usize) -> Option<(usize, Slot)> {
        self.blocks
            .iter()
            .find(|b| b.range().contains(&flat))
            .map(|b| (b.node, b.slots[flat - b.offset]))
    }

    pub fn flat_index(&self, node: usize, slot: Slot) -> Option<usize> {
        let b = self.blocks.get(node)?;
        b.slots.iter().position(|s| *s == slot).map(|k| b.offset + k)
    }

    pub fn labels(&self, model: &ModelSpec) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| b.slots.iter().map(move |s| slot_label(model, b.node, *s)))
            .collect()
    }
}

/// Parameter label in the `β_{i j l}` convention: node index, regressor
/// source (0 for intercepts) and level, with a dot after any two-digit index.
pub fn slot_label(model: &ModelSpec, node: usize, slot: Slot) -> String {
    let i = node + 1;
    let dot = |x: usize| if x >= 10 { "." } else { "" };
    match slot {
        Slot::Intercept { level } => format!("β_{{{i}{}0{level}}}", dot(i)),
        Slot::Parent { parent, level } => {
            let j = parent + 1;
            format!("β_{{{i}{}{j}{}{level}}}", dot(i), dot(j))
        }
        Slot::Design { column } => format!("β_{{{i}.d{}}}", column + 1),
        Slot::Covariate { covariate, logit } => {
            let name = &model.covariate_names[covariate];
            match logit {
                Some(h) => format!("β_{{{i}.{name}.{h}}}"),
                None => format!("β_{{{i}.{name}}}"),
            }
        }
    }
}

pub fn param_layout(model: &ModelSpec) -> ParamLayout {
    let mut blocks = Vec::with_capacity(model.nodes.len());
    let mut offset = 0;
    for (pos, n) in model.nodes.iter().enumerate() {
        let mut slots = Vec::new();
        match &n.design {
            None => {
                slots.extend((1..n.n_categories).map(|level| Slot::Intercept { level }));
                for &p in &n.parents {
                    slots.extend((1..model.nodes[p].n_categories).map(|level| Slot::Parent { parent: p, level }));
                }
            }
            Some(d) => slots.extend((0..d.n_cols()).map(|column| Slot::Design { column })),
        }
        for &k in &n.covariates {
            match n.covariate_slopes {
                CovariateSlopes::Shared => slots.push(Slot::Covariate {
                    covariate: k,
                    logit: None,
                }),
                CovariateSlopes::PerLogit => slots.extend((1..n.n_categories).map(|h| Slot::Covariate {
                    covariate: k,
                    logit: Some(h),
                })),
            }
        }
        let len = slots.len();
        blocks.push(NodeBlock {
            node: pos,
            offset,
            slots,
        });
        offset += len;
    }
    ParamLayout { blocks }
}

/// Lexicographic index of the parent configuration read from a full assignment.
pub fn parent_config_index(model: &ModelSpec, node: usize, assignment: &[usize]) -> usize {
    model.nodes[node]
        .parents
        .iter()
        .fold(0, |acc, &p| acc * model.nodes[p].n_categories + assignment[p])
}

/// Fills the `(c-1) x p` row-major design matrix of `node` for one parent
/// configuration (categories of the sorted parents) and covariate vector.
pub fn fill_design(
    model: &ModelSpec,
    layout: &ParamLayout,
    node: usize,
    parent_config: &[usize],
    covariates: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = &model.nodes[node];
    let block = &layout.blocks[node];
    let p = block.slots.len();
    let m = n.n_logits();
    if parent_config.len() != n.parents.len() {
        return Err(Error::Dimension(format!(
            "node `{}` has {} parents, got configuration of length {}",
            n.name,
            n.parents.len(),
            parent_config.len()
        )));
    }
    if out.len() != m * p {
        return Err(Error::Dimension(format!(
            "design buffer for node `{}` must hold {} values",
            n.name,
            m * p
        )));
    }
    if covariates.len() != model.covariate_names.len() {
        return Err(Error::Dimension(format!(
            "expected {} covariate values, got {}",
            model.covariate_names.len(),
            covariates.len()
        )));
    }
    for (k, (&z, &par)) in parent_config.iter().zip(&n.parents).enumerate() {
        if z >= model.nodes[par].n_categories {
            return Err(Error::OutOfRange {
                pos: k,
                coord: z,
                level: model.nodes[par].n_categories,
            });
        }
    }
    let config_index = parent_config
        .iter()
        .zip(&n.parents)
        .fold(0, |acc, (&z, &par)| acc * model.nodes[par].n_categories + z);
    let zval = |par: usize| -> usize {
        let k = n.parents.iter().position(|&q| q == par).unwrap_or(0);
        parent_config[k]
    };
    for h in 1..=m {
        let row = &mut out[(h - 1) * p..h * p];
        for (s, slot) in block.slots.iter().enumerate() {
            row[s] = match *slot {
                Slot::Intercept { level } => f64::from(u8::from(level <= h)),
                Slot::Parent { parent, level } => f64::from(u8::from(zval(parent) >= level)),
                Slot::Design { column } => {
                    n.design.as_ref().expect("design slot implies design").rows[config_index * m + h - 1][column]
                }
                Slot::Covariate { covariate, logit } => match logit {
                    Some(g) if g != h => 0.0,
                    _ => covariates[covariate],
                },
            };
        }
    }
    Ok(())
}

/// Logits of `node` for one parent configuration and covariate vector.
pub fn linear_predictor<T: Scalar>(
    model: &ModelSpec,
    layout: &ParamLayout,
    node: usize,
    parent_config: &[usize],
    covariates: &[f64],
    beta_block: &[T],
) -> Result<Vec<T>> {
    let p = layout.blocks[node].slots.len();
    if beta_block.len() != p {
        return Err(Error::Dimension(format!(
            "node `{}` expects {p} coefficients, got {}",
            model.nodes[node].name,
            beta_block.len()
        )));
    }
    let m = model.nodes[node].n_logits();
    let mut x = vec![0.0; m * p];
    fill_design(model, layout, node, parent_config, covariates, &mut x)?;
    Ok((0..m)
        .map(|h| {
            x[h * p..(h + 1) * p]
                .iter()
                .zip(beta_block)
                .fold(T::zero(), |acc, (&xv, &b)| acc + T::from_f64(xv).unwrap() * b)
        })
        .collect())
}

/// Human-readable summary: index, name, number of categories, link and parents.
pub fn describe(model: &ModelSpec) -> String {
    let names: Vec<String> = model
        .nodes
        .iter()
        .map(|n| {
            if n.is_latent {
                format!("{}*", n.name)
            } else {
                n.name.clone()
            }
        })
        .collect();
    let wname = names.iter().map(|s| s.chars().count()).max().unwrap_or(1).max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>3}  {:<wname$}  {:>6}  {:>5}  pa_i",
        "i", "Z_i", "n.cat.", "logit"
    );
    for (n, shown) in model.nodes.iter().zip(&names) {
        let parents = if n.parents.is_empty() {
            "-".to_string()
        } else {
            n.parents
                .iter()
                .map(|&p| model.nodes[p].name.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let covs = if n.covariates.is_empty() {
            String::new()
        } else {
            format!(
                "  [covariates: {}]",
                n.covariates
                    .iter()
                    .map(|&k| model.covariate_names[k].as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        };
        let pad = wname - shown.chars().count();
        let _ = writeln!(
            out,
            "{:>3}  {}{}  {:>6}  {:>5}  {}{}",
            n.index,
            shown,
            " ".repeat(pad),
            n.n_categories,
            n.link.code(),
            parents,
            covs
        );
    }
    let report = validate(model);
    let _ = writeln!(out, "latent nodes marked with *");
    let _ = writeln!(
        out,
        "free parameters: {}; observed cells: {}; observed df: {}",
        report.n_params, report.observed_cells, report.observed_df
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const LCA3: &str = r#"{"nodes":[
        {"name":"U","categories":2,"latent":true,"link":"adjacent"},
        {"name":"A","categories":2,"link":"global","parents":["U"]},
        {"name":"B","categories":2,"link":"global","parents":["U"]},
        {"name":"C","categories":2,"link":"global","parents":["U"]}]}"#;

    #[test]
    fn smallest_model() {
        let m = parse_model(r#"{"nodes":[{"name":"Z","categories":2,"link":"global"}]}"#).unwrap();
        assert_eq!(m.n_nodes(), 1);
        assert!(m.nodes[0].parents.is_empty());
        assert_eq!(param_layout(&m).len(), 1);
    }

    #[test]
    fn forward_parent_reference_is_rejected() {
        let doc = r#"{"nodes":[
            {"name":"A","categories":2,"link":"global"},
            {"name":"B","categories":2,"link":"global","parents":["C"]},
            {"name":"C","categories":2,"link":"global"}]}"#;
        match parse_model(doc) {
            Err(Error::Model { node, reason }) => {
                assert_eq!(node, "B");
                assert!(reason.contains("non-recursive parent reference"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_errors() {
        let one_cat = r#"{"nodes":[{"name":"A","categories":1,"link":"global"}]}"#;
        assert!(matches!(parse_model(one_cat), Err(Error::Model { .. })));
        let bad_link = r#"{"nodes":[{"name":"A","categories":2,"link":"probit"}]}"#;
        assert!(matches!(parse_model(bad_link), Err(Error::Model { .. })));
        let dup = r#"{"nodes":[{"name":"A","categories":2,"link":"g"},{"name":"A","categories":2,"link":"g"}]}"#;
        assert!(matches!(parse_model(dup), Err(Error::Model { .. })));
        let dup_parent = r#"{"nodes":[{"name":"A","categories":2,"link":"g"},{"name":"B","categories":2,"link":"g","parents":["A","A"]}]}"#;
        assert!(matches!(parse_model(dup_parent), Err(Error::Model { .. })));
        assert!(matches!(parse_model("{nodes"), Err(Error::Syntax(_))));
        let all_latent = r#"{"nodes":[{"name":"A","categories":2,"latent":true,"link":"a"}]}"#;
        assert!(matches!(parse_model(all_latent), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn validate_reports_duplicate_parent() {
        let mut m = parse_model(LCA3).unwrap();
        m.nodes[2].parents = vec![0, 0];
        let r = validate(&m);
        assert!(r.violations.iter().any(|v| v.reason == "duplicate parent"));
    }

    #[test]
    fn lca_counts() {
        let m = parse_model(LCA3).unwrap();
        let r = validate(&m);
        assert!(r.is_valid());
        assert_eq!(r.n_params, 7);
        assert_eq!(r.observed_df, 7);
        assert_eq!(param_layout(&m).len(), 7);
    }

    #[test]
    fn layout_examples() {
        let m = parse_model(r#"{"nodes":[{"name":"Z","categories":4,"link":"global"}]}"#).unwrap();
        assert_eq!(param_layout(&m).len(), 3);
        let m = parse_model(
            r#"{"nodes":[{"name":"P","categories":3,"link":"global"},
                         {"name":"Z","categories":3,"link":"global","parents":["P"]}]}"#,
        )
        .unwrap();
        assert_eq!(param_layout(&m).blocks[1].slots.len(), 4);
    }

    #[test]
    fn labels_follow_subscript_convention() {
        let mut nodes = Vec::new();
        for k in 0..14 {
            nodes.push(format!(
                r#"{{"name":"N{k}","categories":3,"link":"global","parents":[{}]}}"#,
                if k == 13 { r#""N7""# } else { "" }
            ));
        }
        let m = parse_model(&format!(r#"{{"nodes":[{}]}}"#, nodes.join(","))).unwrap();
        assert_eq!(slot_label(&m, 13, Slot::Parent { parent: 7, level: 1 }), "β_{14.81}");
        assert_eq!(slot_label(&m, 3, Slot::Intercept { level: 2 }), "β_{402}");
    }

    #[test]
    fn linear_predictor_examples() {
        let m = parse_model(
            r#"{"nodes":[{"name":"P","categories":3,"link":"global"},
                         {"name":"Z","categories":2,"link":"global","parents":["P"]}]}"#,
        )
        .unwrap();
        let l = param_layout(&m);
        let beta = [0.5f64, 1.0, -0.5];
        let lam = linear_predictor(&m, &l, 1, &[2], &[], &beta).unwrap();
        assert!((lam[0] - 1.0).abs() < 1e-15);
        let lam = linear_predictor(&m, &l, 1, &[0], &[], &beta).unwrap();
        assert!((lam[0] - 0.5).abs() < 1e-15);
        let lam = linear_predictor(&m, &l, 0, &[], &[], &[1.0, -2.0]).unwrap();
        assert_eq!(lam, vec![1.0, -1.0]);
        assert!(linear_predictor(&m, &l, 1, &[0], &[], &beta[..2]).is_err());
        assert!(linear_predictor(&m, &l, 1, &[3], &[], &beta).is_err());
    }

    #[test]
    fn covariates_and_design_override() {
        let doc = r#"{"nodes":[
            {"name":"P","categories":2,"link":"global"},
            {"name":"Z","categories":3,"link":"adjacent","parents":["P"],
             "covariates":["age"],"covariate_slopes":"per_logit",
             "design":[[1,0,0],[0,1,0],[1,0,1],[0,1,1]]}]}"#;
        let m = parse_model(doc).unwrap();
        assert_eq!(m.covariate_names, vec!["age".to_string()]);
        let l = param_layout(&m);
        assert_eq!(l.blocks[1].slots.len(), 5);
        let lam = linear_predictor(&m, &l, 1, &[1], &[2.0], &[0.1f64, 0.2, 0.3, 1.0, -1.0]).unwrap();
        assert!((lam[0] - (0.1 + 0.3 + 2.0)).abs() < 1e-15);
        assert!((lam[1] - (0.2 + 0.3 - 2.0)).abs() < 1e-15);
        let bad = doc.replace("[0,1,1]]", "]");
        assert!(parse_model(&bad.replace(",]", "]")).is_err());
    }

    #[test]
    fn describe_lists_parents() {
        let m = parse_model(LCA3).unwrap();
        let s = describe(&m);
        assert!(s.contains("U*"));
        assert!(s.lines().nth(2).unwrap().trim_end().ends_with('U'));
    }

    pub(crate) fn random_model_strategy() -> impl Strategy<Value = ModelSpec> {
        (1usize..=8, any::<u64>()).prop_map(|(n, seed)| {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            crate::random::random_model(&mut rng, n, 2, 4)
        })
    }

    proptest! {
        #[test]
        fn layout_length_formula(m in random_model_strategy()) {
            let expected: usize = m.nodes.iter().map(|n| {
                (n.n_categories - 1)
                    + n.parents.iter().map(|&p| m.nodes[p].n_categories - 1).sum::<usize>()
                    + n.covariates.len()
            }).sum();
            let layout = param_layout(&m);
            prop_assert_eq!(layout.len(), expected);
            let mut seen = vec![false; layout.len()];
            for b in &layout.blocks {
                for (k, s) in b.slots.iter().enumerate() {
                    let f = layout.flat_index(b.node, *s).unwrap();
                    prop_assert_eq!(f, b.offset + k);
                    prop_assert!(!seen[f]);
                    seen[f] = true;
                    prop_assert_eq!(layout.locate(f), Some((b.node, *s)));
                }
            }
            prop_assert!(seen.iter().all(|&x| x));
        }

        #[test]
        fn emit_parse_round_trip(m in random_model_strategy()) {
            let back = parse_model(&emit_model(&m)).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn validate_accepts_generated_rejects_mutations(m in random_model_strategy(), pick in any::<usize>()) {
            prop_assert!(validate(&m).is_valid());
            let with_parents: Vec<usize> = (0..m.n_nodes()).filter(|&i| !m.nodes[i].parents.is_empty()).collect();
            if !with_parents.is_empty() {
                let i = with_parents[pick % with_parents.len()];
                let mut bad = m.clone();
                let k = bad.nodes[i].parents.len() - 1;
                bad.nodes[i].parents[k] = i + pick % (m.n_nodes() - i);
                prop_assert!(!validate(&bad).is_valid());
            }
        }
    }
}
