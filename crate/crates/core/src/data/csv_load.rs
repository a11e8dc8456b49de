use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// A CSV column addressed by position or by header name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSchema {
    pub name: String,
    pub label_column: ColumnRef,
    pub text_columns: Vec<ColumnRef>,
    /// Smallest label value in the file, 0 or 1.
    pub label_base: i64,
    pub n_classes: usize,
    pub has_header: bool,
}

impl DatasetSchema {
    /// `label,title,description`, labels 1..=4, no header.
    pub fn ag_news() -> Self {
        Self {
            name: "ag_news".into(),
            label_column: ColumnRef::Index(0),
            text_columns: vec![ColumnRef::Index(1), ColumnRef::Index(2)],
            label_base: 1,
            n_classes: 4,
            has_header: false,
        }
    }

    /// `label,title,content`, labels 1..=14, no header.
    pub fn dbpedia14() -> Self {
        Self {
            name: "dbpedia14".into(),
            n_classes: 14,
            ..Self::ag_news()
        }
    }

    /// `text,label` with a header row, labels 0/1.
    pub fn imdb() -> Self {
        Self {
            name: "imdb".into(),
            label_column: ColumnRef::Index(1),
            text_columns: vec![ColumnRef::Index(0)],
            label_base: 0,
            n_classes: 2,
            has_header: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ag_news" => Ok(Self::ag_news()),
            "dbpedia14" => Ok(Self::dbpedia14()),
            "imdb" => Ok(Self::imdb()),
            other => Err(Error::config(
                "dataset",
                format!("unknown dataset `{other}` (expected ag_news, dbpedia14, imdb or generic)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "must be at least 2"));
        }
        if self.text_columns.is_empty() {
            return Err(Error::config("text_columns", "must name at least one column"));
        }
        if !matches!(self.label_base, 0 | 1) {
            return Err(Error::config("label_base", "must be 0 or 1"));
        }
        let named = std::iter::once(&self.label_column)
            .chain(&self.text_columns)
            .any(|c| matches!(c, ColumnRef::Name(_)));
        if named && !self.has_header {
            return Err(Error::config("has_header", "named columns need a header row"));
        }
        Ok(())
    }

    /// Starts from the `dataset` preset (ag_news when absent, or an empty
    /// schema for `generic`) and applies any explicit keys.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut schema = match doc.get("dataset") {
            None => Self::ag_news(),
            Some("generic") => Self {
                name: "generic".into(),
                label_column: ColumnRef::Index(0),
                text_columns: Vec::new(),
                label_base: 0,
                n_classes: 0,
                has_header: false,
            },
            Some(name) => Self::preset(name)?,
        };
        if let Some(c) = doc.parse_opt::<ColumnRef>("label_column")? {
            schema.label_column = c;
        }
        if let Some(cols) = doc.get("text_columns") {
            schema.text_columns = cols
                .split(',')
                .filter(|c| !c.trim().is_empty())
                .map(|c| c.parse().expect("infallible"))
                .collect();
        }
        if let Some(b) = doc.parse_opt("label_base")? {
            schema.label_base = b;
        }
        if let Some(n) = doc.parse_opt("n_classes")? {
            if schema.name != "generic" && n != schema.n_classes {
                return Err(Error::config(
                    "n_classes",
                    format!("dataset `{}` has {} classes, not {n}", schema.name, schema.n_classes),
                ));
            }
            schema.n_classes = n;
        }
        if let Some(h) = doc.parse_opt("has_header")? {
            schema.has_header = h;
        }
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("dataset", &self.name);
        doc.set("label_column", &self.label_column);
        let cols: Vec<String> = self.text_columns.iter().map(ToString::to_string).collect();
        doc.set("text_columns", cols.join(","));
        doc.set("label_base", self.label_base);
        doc.set("n_classes", self.n_classes);
        doc.set("has_header", self.has_header);
        doc
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadedCsv {
    pub examples: Vec<Example>,
    /// Rows dropped for bad quoting, missing columns or unparsable labels.
    pub skipped: usize,
}

fn resolve(col: &ColumnRef, headers: Option<&csv::StringRecord>) -> Result<usize> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => headers
            .and_then(|h| h.iter().position(|f| f.trim() == name))
            .ok_or_else(|| Error::Data(format!("column `{name}` not found in header"))),
    }
}

/// Reads `(text, label)` pairs. Text columns are joined with ". ";
/// labels are shifted down by `label_base`.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<LoadedCsv> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_from(file, schema)
}

pub fn load_csv_from<R: std::io::Read>(reader: R, schema: &DatasetSchema) -> Result<LoadedCsv> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(reader);
    let headers = if schema.has_header {
        Some(rdr.headers().map_err(|e| Error::Data(format!("cannot read header: {e}")))?.clone())
    } else {
        None
    };
    let label_col = resolve(&schema.label_column, headers.as_ref())?;
    let text_cols = schema
        .text_columns
        .iter()
        .map(|c| resolve(c, headers.as_ref()))
        .collect::<Result<Vec<_>>>()?;

    let mut out = LoadedCsv::default();
    for (i, record) in rdr.records().enumerate() {
        let Ok(record) = record else {
            out.skipped += 1;
            continue;
        };
        let row = record.position().map_or(i + 1, |p| p.line() as usize);
        let Some(raw) = record.get(label_col).and_then(|l| l.trim().parse::<i64>().ok()) else {
            out.skipped += 1;
            continue;
        };
        let parts: Option<Vec<&str>> = text_cols.iter().map(|&c| record.get(c)).collect();
        let Some(parts) = parts else {
            out.skipped += 1;
            continue;
        };
        let label = raw - schema.label_base;
        if label < 0 || label >= schema.n_classes as i64 {
            return Err(Error::LabelOutOfRange {
                row,
                label: raw,
                n_classes: schema.n_classes,
            });
        }
        out.examples.push(Example {
            text: parts.join(". "),
            label: label as usize,
        });
    }
    Ok(out)
}
