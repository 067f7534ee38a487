//! JSON documents: tree specs, weight specs and tree functions.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::address::VertexAddress;
use crate::error::{Error, Result};
use crate::space::{TreeFunction, WeightMap};
use crate::tree::{validate_graph, FiniteGraph, TreeModel, ValidationReport, Violation, Window};

pub const TREE_SCHEMA: &str = "treeshift/tree/v1";
pub const WEIGHTS_SCHEMA: &str = "treeshift/weights/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    KaryRooted,
    KaryUnrooted,
    BilateralLine,
    UnilateralLeafLine,
    GraftedFreeEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graft_at: Option<VertexAddress>,
    pub window: Window,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeSpec {
    Finite {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        root: Option<String>,
        edges: Vec<(String, String)>,
    },
    Family {
        family: Family,
        params: FamilyParams,
    },
}

fn check_schema(value: &Value, expected: &str) -> Result<()> {
    match value.get("schema") {
        None => Ok(()),
        Some(Value::String(s)) if s == expected => Ok(()),
        Some(other) => Err(Error::Parse(format!("expected schema {expected:?}, found {other}"))),
    }
}

fn parse_value(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

impl TreeSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let value = parse_value(text)?;
        check_schema(&value, TREE_SCHEMA)?;
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
    }

    fn graph(&self) -> Option<FiniteGraph> {
        match self {
            TreeSpec::Finite { root, edges } => Some(FiniteGraph { root: root.clone(), edges: edges.clone() }),
            TreeSpec::Family { .. } => None,
        }
    }

    fn family_problems(&self) -> Vec<String> {
        let TreeSpec::Family { family, params } = self else { return Vec::new() };
        let mut out = Vec::new();
        let k = params.k.unwrap_or(2);
        match family {
            Family::KaryRooted | Family::KaryUnrooted | Family::GraftedFreeEnd if k == 0 => {
                out.push("k must be at least 1".to_string());
            }
            Family::BilateralLine if params.k.is_some_and(|k| k != 1) => {
                out.push("the bilateral line has every outdegree 1; drop k or set it to 1".to_string());
            }
            _ => {}
        }
        if let (Family::GraftedFreeEnd, Some(g)) = (family, &params.graft_at) {
            if g.up() != 0 || g.path().iter().any(|&i| i >= k.max(1)) {
                out.push(format!("graft_at {g} is not a vertex of the {k}-ary rooted tree"));
            }
        } else if params.graft_at.is_some() {
            out.push("graft_at only applies to grafted_free_end".to_string());
        }
        out
    }

    /// Tree-axiom violations of the spec. Families hold by construction, so
    /// only their parameters are checked.
    pub fn validate(&self) -> ValidationReport {
        match self.graph() {
            Some(g) => validate_graph(&g),
            None => ValidationReport {
                violations: self
                    .family_problems()
                    .into_iter()
                    .map(|reason| Violation::InvalidFamily { reason })
                    .collect(),
            },
        }
    }

    pub fn build(&self) -> Result<TreeModel> {
        if let Some(g) = self.graph() {
            return TreeModel::finite(&g);
        }
        let problems = self.family_problems();
        if !problems.is_empty() {
            return Err(Error::InvalidTree(problems.join("; ")));
        }
        let TreeSpec::Family { family, params } = self else { unreachable!() };
        let k = params.k.unwrap_or(2);
        let w = params.window;
        match family {
            Family::KaryRooted => TreeModel::kary_rooted(k, w.down),
            Family::KaryUnrooted => TreeModel::kary_unrooted(k, w),
            Family::BilateralLine => Ok(TreeModel::bilateral_line(w)),
            Family::UnilateralLeafLine => Ok(TreeModel::unilateral_leaf_line(w.up)),
            Family::GraftedFreeEnd => TreeModel::grafted_free_end(
                k,
                params.graft_at.clone().unwrap_or_else(|| VertexAddress::from_path(vec![1.min(k - 1)])),
                w.down,
            ),
        }
    }
}

pub fn weights_from_json(text: &str) -> Result<WeightMap> {
    let value = parse_value(text)?;
    check_schema(&value, WEIGHTS_SCHEMA)?;
    let mut value = value;
    if let Value::Object(map) = &mut value {
        map.remove("schema");
    }
    let w: WeightMap = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    w.check()?;
    Ok(w)
}

pub fn function_from_json(text: &str) -> Result<TreeFunction> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Structure;

    #[test]
    fn finite_spec_round_trip() {
        let text = r#"{"schema":"treeshift/tree/v1","kind":"finite","root":"a","edges":[["a","b"],["b","c"]]}"#;
        let spec = TreeSpec::from_json(text).unwrap();
        assert!(spec.validate().is_valid());
        assert_eq!(spec.build().unwrap().finite_tree().unwrap().len(), 3);
    }

    #[test]
    fn family_specs() {
        let text =
            r#"{"kind":"family","family":"grafted_free_end","params":{"k":2,"graft_at":"0.1","window":{"down":9}}}"#;
        let m = TreeSpec::from_json(text).unwrap().build().unwrap();
        assert!(matches!(m.structure(), Structure::GraftedFreeEnd { k: 2, .. }));
        assert_eq!(m.window(), Window { up: 0, down: 9 });
        let bad = r#"{"kind":"family","family":"kary_rooted","params":{"k":0,"window":{"down":3}}}"#;
        let spec = TreeSpec::from_json(bad).unwrap();
        assert!(!spec.validate().is_valid());
        assert!(spec.build().is_err());
    }

    #[test]
    fn schema_mismatch_and_garbage_are_parse_errors() {
        assert!(matches!(TreeSpec::from_json("{not json"), Err(Error::Parse(_))));
        let wrong = r#"{"schema":"other","kind":"finite","edges":[]}"#;
        assert!(matches!(TreeSpec::from_json(wrong), Err(Error::Parse(_))));
    }

    #[test]
    fn weight_documents() {
        let w = weights_from_json(r#"{"schema":"treeshift/weights/v1","kind":"distance_to_H","s":3,"anchor":"*"}"#)
            .unwrap();
        assert_eq!(w, WeightMap::DistanceToH { s: 3.0, anchor: VertexAddress::base() });
        let t = weights_from_json(r#"{"kind":"table","entries":{"*":2.0,"0":0.5}}"#).unwrap();
        assert!(matches!(t, WeightMap::Table { .. }));
        assert!(matches!(weights_from_json(r#"{"kind":"table","entries":{"*":0}}"#), Err(Error::InvalidWeights(_))));
    }
}
