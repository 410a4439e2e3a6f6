//! Statement files, split directories and vocabulary manifests.
//!
//! A dataset directory holds `train.<ext>`, `valid.<ext>` and `test.<ext>`,
//! plus optional `entities.vocab` / `relations.vocab` manifests that pin the
//! id assignment. Two record formats are understood:
//!
//! * `jsonl-statements`: `{"head": "a", "relation": "r", "tail": "b", "qualifiers": [["q", "x"]]}`
//! * `tsv-flat`: `h<TAB>r<TAB>t<TAB>qr1<TAB>qe1...`
//!
//! Blank lines and lines starting with `#` are skipped in both.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{hex_digest, KnowledgeGraph, Qualifier, Split, Statement, Vocabulary};
use crate::error::{Error, Result};

pub const ENTITY_MANIFEST: &str = "entities.vocab";
pub const RELATION_MANIFEST: &str = "relations.vocab";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    #[default]
    JsonlStatements,
    TsvFlat,
}

impl DatasetFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DatasetFormat::JsonlStatements => "jsonl",
            DatasetFormat::TsvFlat => "tsv",
        }
    }

    /// Guesses the format from the split files present in `dir`.
    pub fn detect(dir: &Path) -> Option<Self> {
        [DatasetFormat::JsonlStatements, DatasetFormat::TsvFlat]
            .into_iter()
            .find(|f| dir.join(format!("train.{}", f.extension())).is_file())
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::JsonlStatements => "jsonl-statements",
            DatasetFormat::TsvFlat => "tsv-flat",
        })
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl-statements" | "jsonl" => Ok(DatasetFormat::JsonlStatements),
            "tsv-flat" | "tsv" => Ok(DatasetFormat::TsvFlat),
            other => Err(Error::UnknownFormat(other.to_owned())),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NameRepr {
    Text(String),
    Number(i64),
}

impl NameRepr {
    fn into_string(self) -> String {
        match self {
            NameRepr::Text(s) => s,
            NameRepr::Number(n) => n.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    head: NameRepr,
    relation: NameRepr,
    tail: NameRepr,
    #[serde(default)]
    qualifiers: Vec<(NameRepr, NameRepr)>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    head: &'a str,
    relation: &'a str,
    tail: &'a str,
    qualifiers: Vec<(&'a str, &'a str)>,
}

/// A statement with names still unresolved.
struct NamedStatement {
    head: String,
    relation: String,
    tail: String,
    qualifiers: Vec<(String, String)>,
}

fn parse_line(line: &str, format: DatasetFormat) -> std::result::Result<NamedStatement, String> {
    match format {
        DatasetFormat::JsonlStatements => {
            let rec: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            Ok(NamedStatement {
                head: rec.head.into_string(),
                relation: rec.relation.into_string(),
                tail: rec.tail.into_string(),
                qualifiers: rec
                    .qualifiers
                    .into_iter()
                    .map(|(r, e)| (r.into_string(), e.into_string()))
                    .collect(),
            })
        }
        DatasetFormat::TsvFlat => {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() < 3 || fields.len() % 2 == 0 {
                return Err(format!(
                    "expected head, relation, tail and qualifier pairs, found {} fields",
                    fields.len()
                ));
            }
            if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
                return Err(format!("field {} is empty", pos + 1));
            }
            Ok(NamedStatement {
                head: fields[0].to_owned(),
                relation: fields[1].to_owned(),
                tail: fields[2].to_owned(),
                qualifiers: fields[3..]
                    .chunks(2)
                    .map(|p| (p[0].to_owned(), p[1].to_owned()))
                    .collect(),
            })
        }
    }
}

fn read_statements(
    path: &Path,
    format: DatasetFormat,
    split: Split,
    graph: &mut KnowledgeGraph,
) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut count = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let named = parse_line(line, format).map_err(|message| Error::Parse {
            path: path.to_owned(),
            line: lineno + 1,
            message,
        })?;
        let statement = Statement {
            head: graph.entities.intern(&named.head),
            relation: graph.relations.intern(&named.relation),
            tail: graph.entities.intern(&named.tail),
            qualifiers: named
                .qualifiers
                .iter()
                .map(|(r, e)| Qualifier {
                    relation: graph.relations.intern(r),
                    entity: graph.entities.intern(e),
                })
                .collect(),
        };
        graph.push(statement, split)?;
        count += 1;
    }
    Ok(count)
}

/// Loads a dataset directory (or a single statement file, treated as the
/// training split).
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<KnowledgeGraph> {
    let mut graph = KnowledgeGraph::default();
    if path.is_file() {
        read_statements(path, format, Split::Train, &mut graph)?;
        if graph.is_empty() {
            return Err(Error::NoStatements(path.to_owned()));
        }
        return Ok(graph);
    }
    if !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset path does not exist"),
        ));
    }

    let ext = format.extension();
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    for entry in entries {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if !matches!(stem, "train" | "valid" | "test") {
            return Err(Error::UnknownSplitFile(p));
        }
    }

    let ent_manifest = path.join(ENTITY_MANIFEST);
    if ent_manifest.is_file() {
        graph.entities = read_manifest(&ent_manifest)?;
    }
    let rel_manifest = path.join(RELATION_MANIFEST);
    if rel_manifest.is_file() {
        graph.relations = read_manifest(&rel_manifest)?;
    }

    for split in Split::ALL {
        let file = split_path(path, split, format);
        if file.is_file() {
            read_statements(&file, format, split, &mut graph)?;
        }
    }
    if graph.is_empty() {
        return Err(Error::NoStatements(path.to_owned()));
    }
    Ok(graph)
}

pub fn split_path(dir: &Path, split: Split, format: DatasetFormat) -> PathBuf {
    dir.join(format!("{}.{}", split.as_str(), format.extension()))
}

fn format_statement(graph: &KnowledgeGraph, s: &Statement, format: DatasetFormat) -> String {
    let e = |id: usize| graph.entities.name(id).unwrap_or("?");
    let r = |id: usize| graph.relations.name(id).unwrap_or("?");
    match format {
        DatasetFormat::JsonlStatements => serde_json::to_string(&OutRecord {
            head: e(s.head),
            relation: r(s.relation),
            tail: e(s.tail),
            qualifiers: s
                .qualifiers
                .iter()
                .map(|q| (r(q.relation), e(q.entity)))
                .collect(),
        })
        .expect("record serializes"),
        DatasetFormat::TsvFlat => {
            let mut fields = vec![e(s.head), r(s.relation), e(s.tail)];
            for q in &s.qualifiers {
                fields.push(r(q.relation));
                fields.push(e(q.entity));
            }
            fields.join("\t")
        }
    }
}

/// Writes one file per non-empty split, plus the vocabulary manifests.
pub fn write_dataset(graph: &KnowledgeGraph, dir: &Path, format: DatasetFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for split in Split::ALL {
        let mut out = String::new();
        for s in graph.split(split) {
            out.push_str(&format_statement(graph, s, format));
            out.push('\n');
        }
        if out.is_empty() {
            continue;
        }
        let path = split_path(dir, split, format);
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    write_manifest(graph, dir)
}

pub fn write_manifest(graph: &KnowledgeGraph, dir: &Path) -> Result<()> {
    for (vocab, file) in [
        (&graph.entities, ENTITY_MANIFEST),
        (&graph.relations, RELATION_MANIFEST),
    ] {
        let path = dir.join(file);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for (id, name) in vocab.names().iter().enumerate() {
            writeln!(f, "{id}\t{name}").map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Reads `id<TAB>name` lines; ids must be dense and in order.
pub fn read_manifest(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vocab = Vocabulary::new();
    for (lineno, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: lineno + 1,
            message,
        };
        let (id, name) = raw
            .split_once('\t')
            .ok_or_else(|| parse_err("expected id<TAB>name".into()))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad id '{id}'")))?;
        if id != vocab.len() {
            return Err(parse_err(format!(
                "expected id {}, found {id}",
                vocab.len()
            )));
        }
        if vocab.intern(name) != id {
            return Err(parse_err(format!("duplicate name '{name}'")));
        }
    }
    Ok(vocab)
}

/// SHA-256 over the split files and manifests of a dataset directory.
pub fn dataset_checksum(path: &Path) -> Result<String> {
    let mut files = Vec::new();
    if path.is_file() {
        files.push(path.to_owned());
    } else {
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if p.is_file() {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
        h.update(f.file_name().unwrap_or_default().as_encoded_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex_digest(&h.finalize()))
}
