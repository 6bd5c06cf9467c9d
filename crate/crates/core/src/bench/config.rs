use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::index::Distance;

/// One algorithm entry. Field names follow the ANN-benchmarks layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchEntry {
    pub name: String,
    #[serde(default)]
    pub library: Option<String>,
    #[serde(deserialize_with = "one_or_many")]
    pub method: Vec<String>,
    #[serde(deserialize_with = "one_or_many")]
    pub space: Vec<String>,
    pub run_groups: IndexMap<String, RunGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunGroup {
    /// One value list per parameter named in the group key.
    pub query_args: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub entries: Vec<BenchEntry>,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Hnsw,
    BruteForce,
}

impl Algorithm {
    pub fn from_method(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "hnsw" | "hnswlib" | "ft-ann" => Some(Algorithm::Hnsw),
            "bruteforce" | "brute-force" | "bruteforce-blas" | "flat" | "exact" => Some(Algorithm::BruteForce),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hnsw => "hnsw",
            Algorithm::BruteForce => "bruteforce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    K,
    M,
    EfConstruction,
    EfSearch,
}

impl Param {
    pub fn from_name(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "k" => Some(Param::K),
            "m" => Some(Param::M),
            "ef_construction" | "efconstruction" | "ef-construction" => Some(Param::EfConstruction),
            "ef_search" | "ef" | "efsearch" | "ef-search" => Some(Param::EfSearch),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::K => "k",
            Param::M => "M",
            Param::EfConstruction => "ef_construction",
            Param::EfSearch => "ef_search",
        }
    }
}

/// One point of the expanded configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchInstance {
    pub name: String,
    pub method: String,
    pub algorithm: Algorithm,
    pub space: Distance,
    pub group: String,
    pub params: Vec<(Param, u64)>,
}

impl BenchInstance {
    pub fn param(&self, p: Param) -> Option<u64> {
        self.params.iter().find(|(q, _)| *q == p).map(|(_, v)| *v)
    }

    pub fn params_text(&self) -> String {
        let parts: Vec<String> = self.params.iter().map(|(p, v)| format!("{}={v}", p.name())).collect();
        parts.join(",")
    }
}

impl fmt::Display for BenchInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}[{}]", self.name, self.space.name(), self.params_text())
    }
}

fn schema_err(field: impl Into<String>, msg: impl Into<String>) -> BenchError {
    BenchError::Schema {
        line: None,
        field: field.into(),
        msg: msg.into(),
    }
}

fn yaml_err(e: serde_yaml::Error) -> BenchError {
    BenchError::Schema {
        line: e.location().map(|l| l.line()),
        field: String::new(),
        msg: e.to_string(),
    }
}

impl BenchConfig {
    /// Accepts either a top-level list of entries, or nested mappings
    /// (`point type → distance → entries`) whose leaves are such lists.
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let root: serde_yaml::Value = serde_yaml::from_str(text).map_err(yaml_err)?;
        let entries = match root {
            serde_yaml::Value::Sequence(_) => serde_yaml::from_str::<Vec<BenchEntry>>(text).map_err(yaml_err)?,
            serde_yaml::Value::Mapping(_) => {
                let nested: IndexMap<String, IndexMap<String, Vec<BenchEntry>>> =
                    serde_yaml::from_str(text).map_err(yaml_err)?;
                nested.into_values().flat_map(|m| m.into_values().flatten()).collect()
            }
            _ => return Err(schema_err("", "expected a list of entries or a mapping of lists")),
        };
        let cfg = BenchConfig { entries };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.entries.is_empty() {
            return Err(schema_err("", "no entries"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let at = |f: &str| format!("entries[{i}] ({}).{f}", e.name);
            if e.method.is_empty() {
                return Err(schema_err(at("method"), "empty"));
            }
            for m in &e.method {
                if Algorithm::from_method(m).is_none() {
                    return Err(schema_err(at("method"), format!("unknown method {m:?}")));
                }
            }
            if e.space.is_empty() {
                return Err(schema_err(at("space"), "empty"));
            }
            for s in &e.space {
                if !matches!(s.to_ascii_lowercase().as_str(), "cosine" | "l2" | "ip") {
                    return Err(schema_err(at("space"), format!("{s:?} is not one of cosine, l2, ip")));
                }
            }
            if e.run_groups.is_empty() {
                return Err(schema_err(at("run_groups"), "empty"));
            }
            for (g, rg) in &e.run_groups {
                let field = at(&format!("run_groups.{g}.query_args"));
                let names: Vec<&str> = g.split(',').collect();
                for n in &names {
                    if Param::from_name(n).is_none() {
                        return Err(schema_err(at("run_groups"), format!("unknown parameter {n:?}")));
                    }
                }
                if rg.query_args.len() != names.len() {
                    return Err(schema_err(
                        field,
                        format!("{} value lists for {} parameters", rg.query_args.len(), names.len()),
                    ));
                }
                if rg.query_args.iter().any(Vec::is_empty) {
                    return Err(schema_err(field, "empty value list"));
                }
            }
        }
        Ok(())
    }

    /// Cartesian expansion in entry, method, space, run-group, argument
    /// order. Repeated values within a list are dropped after their first
    /// occurrence.
    pub fn expand_instances(&self) -> Vec<BenchInstance> {
        let mut out = Vec::new();
        for e in &self.entries {
            for method in &e.method {
                let algorithm = Algorithm::from_method(method).expect("validated");
                for space in &e.space {
                    let space = Distance::from_name(space).expect("validated");
                    for (group, rg) in &e.run_groups {
                        let params: Vec<Param> =
                            group.split(',').map(|n| Param::from_name(n).expect("validated")).collect();
                        let lists: Vec<Vec<u64>> = rg.query_args.iter().map(|l| dedup(l)).collect();
                        for combo in product(&lists) {
                            out.push(BenchInstance {
                                name: e.name.clone(),
                                method: method.clone(),
                                algorithm,
                                space,
                                group: group.clone(),
                                params: params.iter().copied().zip(combo).collect(),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn dedup(values: &[u64]) -> Vec<u64> {
    let mut seen = std::collections::HashSet::new();
    values.iter().copied().filter(|v| seen.insert(*v)).collect()
}

/// Row-major product: the last list varies fastest.
fn product(lists: &[Vec<u64>]) -> Vec<Vec<u64>> {
    lists.iter().fold(vec![Vec::new()], |acc, list| {
        acc.iter()
            .flat_map(|prefix| {
                list.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = "- name: x\n  method: hnsw\n  space: cosine\n  run_groups:\n    k:\n      query_args: [[5]]\n";

    #[test]
    fn single_instance() {
        let cfg = BenchConfig::parse(ONE).unwrap();
        let inst = cfg.expand_instances();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].param(Param::K), Some(5));
        assert_eq!(inst[0].to_string(), "x-cosine[k=5]");
    }

    #[test]
    fn product_order_and_dedup() {
        let text = "- name: a\n  method: [flat]\n  space: [l2, ip]\n  run_groups:\n    k:\n      query_args: [[3, 1, 3, 2]]\n";
        let inst = BenchConfig::parse(text).unwrap().expand_instances();
        let got: Vec<(Distance, u64)> = inst.iter().map(|i| (i.space, i.params[0].1)).collect();
        use Distance::*;
        assert_eq!(
            got,
            vec![(SquaredL2, 3), (SquaredL2, 1), (SquaredL2, 2), (InnerProduct, 3), (InnerProduct, 1), (InnerProduct, 2)]
        );
        let two = "- name: a\n  method: hnsw\n  space: cosine\n  run_groups:\n    M,ef_construction:\n      query_args: [[4, 8], [50, 100, 150]]\n";
        let inst = BenchConfig::parse(two).unwrap().expand_instances();
        assert_eq!(inst.len(), 6);
        assert_eq!(inst[1].params_text(), "M=4,ef_construction=100");
        assert_eq!(inst[3].params_text(), "M=8,ef_construction=50");
    }

    #[test]
    fn schema_errors() {
        let empty_groups = "- name: x\n  method: hnsw\n  space: cosine\n  run_groups: {}\n";
        assert!(matches!(BenchConfig::parse(empty_groups), Err(BenchError::Schema { .. })));
        let unknown_field = format!("{ONE}  colour: red\n");
        match BenchConfig::parse(&unknown_field) {
            Err(BenchError::Schema { line, msg, .. }) => {
                assert!(line.is_some());
                assert!(msg.contains("colour"));
            }
            other => panic!("{other:?}"),
        }
        let bad_space = ONE.replace("cosine", "hamming");
        assert!(BenchConfig::parse(&bad_space).is_err());
        let empty_args = ONE.replace("[[5]]", "[[]]");
        assert!(BenchConfig::parse(&empty_args).is_err());
        assert!(BenchConfig::parse(&ONE.replace("hnsw", "annoy")).is_err());
    }

    #[test]
    fn nested_layout() {
        let nested = format!("float:\n  any:\n{}", ONE.lines().map(|l| format!("    {l}\n")).collect::<String>());
        assert_eq!(BenchConfig::parse(&nested).unwrap().expand_instances().len(), 1);
    }
}
