//! Tab-separated dataset directories.
//!
//! ```text
//! <dir>/entities.txt    id<TAB>name[<TAB>description]
//! <dir>/relations.txt   id[<TAB>name[<TAB>description]]
//! <dir>/train.txt       head<TAB>relation<TAB>tail
//! <dir>/valid.txt       optional
//! <dir>/test.txt        optional
//! ```
//!
//! Ids are raw strings. Entities and relations are numbered in file order.
//! A blank name falls back to the raw id. Lines starting with `#` and empty
//! lines are skipped.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use mocosa_core::graph::{EntityRecord, RelationRecord, SplitTriples};
use mocosa_core::{EntityId, KnowledgeGraph, RelationId, Triple};

use crate::error::{CliError, Result};

pub const ENTITY_FILE: &str = "entities.txt";
pub const RELATION_FILE: &str = "relations.txt";
pub const SPLIT_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: KnowledgeGraph,
    pub entity_ids: Vec<String>,
    /// Raw ids of base relations.
    pub relation_ids: Vec<String>,
}

impl Dataset {
    pub fn entity_raw(&self, e: EntityId) -> &str {
        &self.entity_ids[e.0]
    }

    /// Raw id of a relation; inverse relations read `inverse of: <raw>`.
    pub fn relation_raw(&self, r: RelationId) -> String {
        let n = self.relation_ids.len();
        if r.0 < n {
            self.relation_ids[r.0].clone()
        } else {
            mocosa_core::graph::inverse_relation_name(&self.relation_ids[r.0 - n])
        }
    }
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(CliError::Missing {
            artifact: "dataset file",
            path: path.to_path_buf(),
        });
    }
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Non-blank, non-comment lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

struct Declared {
    raw: Vec<String>,
    names: Vec<String>,
    descriptions: Vec<String>,
    lookup: HashMap<String, usize>,
}

fn read_declarations(path: &Path, what: &str) -> Result<Declared> {
    let text = read(path)?;
    let mut d = Declared {
        raw: Vec::new(),
        names: Vec::new(),
        descriptions: Vec::new(),
        lookup: HashMap::new(),
    };
    for (n, line) in lines(&text) {
        let mut cols = line.splitn(3, '\t');
        let raw = cols.next().unwrap_or("").trim();
        if raw.is_empty() {
            return Err(parse_err(path, n, format!("{what} line has an empty id")));
        }
        if d.lookup.insert(raw.to_string(), d.raw.len()).is_some() {
            return Err(parse_err(path, n, format!("{what} {raw:?} declared twice")));
        }
        let name = cols.next().map(str::trim).filter(|s| !s.is_empty()).unwrap_or(raw);
        let desc = cols.next().map(str::trim).unwrap_or("");
        d.raw.push(raw.to_string());
        d.names.push(name.to_string());
        d.descriptions.push(desc.to_string());
    }
    Ok(d)
}

fn read_triples(path: &Path, entities: &Declared, relations: &Declared) -> Result<Vec<Triple>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (n, line) in lines(&text) {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(parse_err(
                path,
                n,
                format!("expected 3 tab-separated fields, found {}", cols.len()),
            ));
        }
        let ent = |raw: &str| {
            entities
                .lookup
                .get(raw)
                .copied()
                .ok_or_else(|| parse_err(path, n, format!("undeclared entity {raw:?}")))
        };
        let h = ent(cols[0])?;
        let r = relations
            .lookup
            .get(cols[1])
            .copied()
            .ok_or_else(|| parse_err(path, n, format!("undeclared relation {:?}", cols[1])))?;
        let t = ent(cols[2])?;
        out.push(Triple::new(h, r, t));
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(CliError::Missing {
            artifact: "dataset directory",
            path: dir.to_path_buf(),
        });
    }
    let entities = read_declarations(&dir.join(ENTITY_FILE), "entity")?;
    let relations = read_declarations(&dir.join(RELATION_FILE), "relation")?;
    let mut splits: [Vec<Triple>; 3] = Default::default();
    for (i, file) in SPLIT_FILES.iter().enumerate() {
        let path: PathBuf = dir.join(file);
        if i > 0 && !path.exists() {
            continue;
        }
        splits[i] = read_triples(&path, &entities, &relations)?;
    }
    let [train, valid, test] = splits;
    let entity_records = (0..entities.raw.len())
        .map(|i| EntityRecord {
            id: EntityId(i),
            name: entities.names[i].clone(),
            description: entities.descriptions[i].clone(),
        })
        .collect();
    let relation_records = (0..relations.raw.len())
        .map(|i| RelationRecord {
            id: RelationId(i),
            name: relations.names[i].clone(),
            description: relations.descriptions[i].clone(),
        })
        .collect();
    let graph = KnowledgeGraph::build(entity_records, relation_records, SplitTriples { train, valid, test })?;
    Ok(Dataset {
        graph,
        entity_ids: entities.raw,
        relation_ids: relations.raw,
    })
}
