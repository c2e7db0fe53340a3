use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::DataError;
use crate::lclang::{plan_path, PathStep, ResolvedStep};
use crate::schema::{ConceptGraph, ConceptKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataNode {
    pub id: String,
    pub concept: String,
    #[serde(default)]
    pub features: Vec<f64>,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, bool>,
}

/// Instance JSON for one sample.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawSample {
    #[serde(default)]
    pub nodes: Vec<RawNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub has_a: Vec<(String, String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawNode {
    pub id: String,
    pub concept: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, Value>,
}

/// Instance graph of one sample. Nodes are kept sorted by id.
#[derive(Debug, Clone, Default)]
pub struct DataNodeGraph {
    nodes: Vec<DataNode>,
    index: HashMap<String, usize>,
    contains: Vec<(usize, usize)>,
    has_a: Vec<(usize, String, usize)>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    /// Members of each composite, in schema argument order.
    args: Vec<Vec<(String, usize)>>,
    member_of: Vec<Vec<(usize, String)>>,
}

fn label_value(node: &str, concept: &str, v: &Value) -> Result<bool, DataError> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) if n.as_f64() == Some(0.0) => Ok(false),
        Value::Number(n) if n.as_f64() == Some(1.0) => Ok(true),
        other => Err(DataError::Schema(format!(
            "label `{concept}` of node `{node}` must be 0 or 1, found {other}"
        ))),
    }
}

impl DataNodeGraph {
    pub fn from_raw(raw: RawSample, graph: &ConceptGraph) -> Result<Self, DataError> {
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for n in raw.nodes {
            let concept = graph
                .concept(&n.concept)
                .ok_or_else(|| DataError::UnknownConcept(n.concept.clone()))?;
            if concept.kind == ConceptKind::Decision {
                return Err(DataError::Schema(format!(
                    "node `{}` has decision concept `{}`; nodes must be basic or compositional",
                    n.id, n.concept
                )));
            }
            let mut labels = BTreeMap::new();
            for (c, v) in &n.labels {
                if !graph.is_decision(c) || graph.base(c).ok() != Some(n.concept.as_str()) {
                    return Err(DataError::Schema(format!(
                        "node `{}` of concept `{}` cannot carry label `{c}`",
                        n.id, n.concept
                    )));
                }
                labels.insert(c.clone(), label_value(&n.id, c, v)?);
            }
            if n.features.iter().any(|x| !x.is_finite()) {
                return Err(DataError::Schema(format!("node `{}` has non-finite features", n.id)));
            }
            nodes.push(DataNode { id: n.id, concept: n.concept, features: n.features, attrs: n.attrs, labels });
        }
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(DataError::Schema(format!("node id `{}` appears twice", n.id)));
            }
        }
        let lookup = |id: &str| {
            index.get(id).copied().ok_or_else(|| DataError::DanglingLink(id.to_string()))
        };

        let n = nodes.len();
        let mut dng = DataNodeGraph {
            children: vec![Vec::new(); n],
            parents: vec![Vec::new(); n],
            args: vec![Vec::new(); n],
            member_of: vec![Vec::new(); n],
            ..Default::default()
        };

        for (p, c) in &raw.contains {
            let (pi, ci) = (lookup(p)?, lookup(c)?);
            if !graph.has_contains(&nodes[pi].concept, &nodes[ci].concept) {
                return Err(DataError::Schema(format!(
                    "`{}` does not contain `{}` in the schema (link {p} -> {c})",
                    nodes[pi].concept, nodes[ci].concept
                )));
            }
            dng.contains.push((pi, ci));
            dng.children[pi].push(ci);
            dng.parents[ci].push(pi);
        }

        let mut slots: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); n];
        for (comp, arg, member) in &raw.has_a {
            let (ci, mi) = (lookup(comp)?, lookup(member)?);
            let target = graph.has_a_target(&nodes[ci].concept, arg).ok_or_else(|| {
                DataError::Schema(format!("`{}` has no argument `{arg}` (node `{comp}`)", nodes[ci].concept))
            })?;
            if graph.base(target).ok() != Some(nodes[mi].concept.as_str()) {
                return Err(DataError::Schema(format!(
                    "argument `{arg}` of `{comp}` expects `{target}`, found `{}` node `{member}`",
                    nodes[mi].concept
                )));
            }
            if slots[ci].insert(arg.clone(), mi).is_some() {
                return Err(DataError::Schema(format!("argument `{arg}` of `{comp}` is linked twice")));
            }
            dng.has_a.push((ci, arg.clone(), mi));
            dng.member_of[mi].push((ci, arg.clone()));
        }
        for (i, node) in nodes.iter().enumerate() {
            for (arg, _) in graph.has_a_args(&node.concept) {
                match slots[i].get(&arg) {
                    Some(&m) => dng.args[i].push((arg, m)),
                    None => return Err(DataError::MissingArg { node: node.id.clone(), arg }),
                }
            }
        }
        for list in dng.children.iter_mut().chain(dng.parents.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        dng.nodes = nodes;
        dng.index = index;
        Ok(dng)
    }

    pub fn to_raw(&self) -> RawSample {
        RawSample {
            nodes: self
                .nodes
                .iter()
                .map(|n| RawNode {
                    id: n.id.clone(),
                    concept: n.concept.clone(),
                    features: n.features.clone(),
                    attrs: n.attrs.clone(),
                    labels: n.labels.iter().map(|(k, &v)| (k.clone(), Value::from(u8::from(v)))).collect(),
                })
                .collect(),
            contains: self.contains.iter().map(|&(p, c)| (self.nodes[p].id.clone(), self.nodes[c].id.clone())).collect(),
            has_a: self
                .has_a
                .iter()
                .map(|(c, a, m)| (self.nodes[*c].id.clone(), a.clone(), self.nodes[*m].id.clone()))
                .collect(),
        }
    }

    pub fn nodes(&self) -> &[DataNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&DataNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains_links(&self) -> usize {
        self.contains.len()
    }

    pub fn has_a_links(&self) -> usize {
        self.has_a.len()
    }

    /// Members of a composite node in schema argument order.
    pub(crate) fn members(&self, node: usize) -> &[(String, usize)] {
        &self.args[node]
    }

    /// Nodes whose concept is the base of `concept`, sorted by id.
    pub fn candidates(&self, graph: &ConceptGraph, concept: &str) -> Result<Vec<&DataNode>, DataError> {
        Ok(self.candidate_positions(graph, concept)?.into_iter().map(|i| &self.nodes[i]).collect())
    }

    pub(crate) fn candidate_positions(&self, graph: &ConceptGraph, concept: &str) -> Result<Vec<usize>, DataError> {
        let base = graph.base(concept).map_err(|_| DataError::UnknownConcept(concept.to_string()))?;
        Ok((0..self.nodes.len()).filter(|&i| self.nodes[i].concept == base).collect())
    }

    /// Follows a path from `node`. The result is sorted by id and may be empty.
    pub fn resolve_path(
        &self,
        graph: &ConceptGraph,
        node: &str,
        steps: &[PathStep],
    ) -> Result<Vec<&DataNode>, DataError> {
        let start = self.position(node).ok_or_else(|| DataError::DanglingLink(node.to_string()))?;
        let (plan, _) = plan_path(graph, &self.nodes[start].concept, steps).map_err(DataError::BadPath)?;
        Ok(self.follow(start, &plan).into_iter().map(|i| &self.nodes[i]).collect())
    }

    pub(crate) fn follow(&self, start: usize, plan: &[ResolvedStep]) -> Vec<usize> {
        let mut frontier = vec![start];
        for step in plan {
            let mut next = Vec::new();
            for &n in &frontier {
                match step {
                    ResolvedStep::Member(arg) => {
                        next.extend(self.args[n].iter().filter(|(a, _)| a == arg).map(|&(_, m)| m));
                    }
                    ResolvedStep::Children(c) => {
                        next.extend(self.children[n].iter().copied().filter(|&k| self.nodes[k].concept == *c));
                    }
                    ResolvedStep::Parents(c) => {
                        next.extend(self.parents[n].iter().copied().filter(|&k| self.nodes[k].concept == *c));
                    }
                    ResolvedStep::Via { relation, arg } => {
                        for (comp, slot) in &self.member_of[n] {
                            if self.nodes[*comp].concept == *relation && slot != arg {
                                next.extend(self.args[*comp].iter().filter(|(a, _)| a == arg).map(|&(_, m)| m));
                            }
                        }
                    }
                }
            }
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        frontier
    }
}

/// Parses one sample.
pub fn load_data(json: &str, graph: &ConceptGraph) -> Result<DataNodeGraph, DataError> {
    let raw: RawSample = serde_json::from_str(json).map_err(|e| DataError::Schema(e.to_string()))?;
    let dng = DataNodeGraph::from_raw(raw, graph)?;
    check_dimensions(std::slice::from_ref(&dng))?;
    Ok(dng)
}

/// Parses either one sample object or an array of samples.
pub fn load_dataset(json: &str, graph: &ConceptGraph) -> Result<Vec<DataNodeGraph>, DataError> {
    let value: Value = serde_json::from_str(json).map_err(|e| DataError::Schema(e.to_string()))?;
    let raws: Vec<RawSample> = match value {
        Value::Array(_) => serde_json::from_value(value),
        _ => serde_json::from_value(value).map(|r| vec![r]),
    }
    .map_err(|e| DataError::Schema(e.to_string()))?;
    let samples = raws.into_iter().map(|r| DataNodeGraph::from_raw(r, graph)).collect::<Result<Vec<_>, _>>()?;
    check_dimensions(&samples)?;
    Ok(samples)
}

/// Feature dimension must agree per concept across a dataset.
pub fn check_dimensions(samples: &[DataNodeGraph]) -> Result<BTreeMap<String, usize>, DataError> {
    let mut dims: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        for n in s.nodes() {
            let d = *dims.entry(n.concept.clone()).or_insert(n.features.len());
            if d != n.features.len() {
                return Err(DataError::Schema(format!(
                    "node `{}` has {} features, other `{}` nodes have {d}",
                    n.id,
                    n.features.len(),
                    n.concept
                )));
            }
        }
    }
    Ok(dims)
}
