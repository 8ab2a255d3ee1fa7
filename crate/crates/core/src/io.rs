//! File formats.
//!
//! * table JSON: `{"variables": [{"name": "H", "levels": 2}, ...], "counts": [...]}`
//!   with counts in canonical cell order;
//! * table CSV: one row per cell, a column per variable holding 0-based
//!   levels, plus a `count` column; absent cells count zero;
//! * model JSON: a list of generators, each a list of variable names;
//! * family JSON: a list of model JSONs;
//! * report JSON: a serialized [`FitReport`];
//! * edge JSON: a serialized [`EdgeMarginals`] bundle.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cycle::EdgeMarginals;
use crate::error::{Error, Result};
use crate::ips::FitReport;
use crate::models::GeneratingClass;
use crate::tables::{CellIndex, DenseTable, Schema, Variable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableFile {
    pub variables: Vec<Variable>,
    pub counts: Vec<i64>,
}

/// Integer counts with their schema.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    pub schema: Schema,
    pub counts: Vec<i64>,
}

impl CountTable {
    pub fn new(schema: Schema, counts: Vec<i64>) -> Result<Self> {
        if counts.len() != schema.cell_count() {
            return Err(Error::LengthMismatch { expected: schema.cell_count(), got: counts.len() });
        }
        Ok(CountTable { schema, counts })
    }

    /// Relative frequencies.
    pub fn frequencies(&self) -> Result<DenseTable> {
        DenseTable::from_counts(self.schema.clone(), &self.counts)
    }
}

pub fn read_table_json<R: Read>(reader: R) -> Result<CountTable> {
    let f: TableFile = serde_json::from_reader(reader)?;
    CountTable::new(Schema::new(f.variables)?, f.counts)
}

pub fn write_table_json<W: Write>(table: &CountTable, writer: W) -> Result<()> {
    let f = TableFile { variables: table.schema.variables().to_vec(), counts: table.counts.clone() };
    serde_json::to_writer_pretty(writer, &f)?;
    Ok(())
}

pub fn read_table_csv<R: Read>(reader: R) -> Result<CountTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let count_col = header
        .iter()
        .position(|h| h == "count")
        .ok_or_else(|| Error::Schema("CSV table needs a `count` column".into()))?;
    let names: Vec<&String> = header.iter().enumerate().filter(|(k, _)| *k != count_col).map(|(_, h)| h).collect();
    let mut rows = Vec::new();
    let mut levels = vec![0usize; names.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse_err = |what: &str, v: &str| Error::Schema(format!("row {}: invalid {what} `{v}`", line + 1));
        let mut cell = Vec::with_capacity(names.len());
        let mut count = 0i64;
        for (k, field) in rec.iter().enumerate() {
            let field = field.trim();
            if k == count_col {
                count = field.parse().map_err(|_| parse_err("count", field))?;
            } else {
                let v: usize = field.parse().map_err(|_| parse_err("level", field))?;
                let slot = cell.len();
                levels[slot] = levels[slot].max(v + 1);
                cell.push(v);
            }
        }
        if cell.len() != names.len() {
            return Err(Error::Schema(format!("row {} has {} fields", line + 1, rec.len())));
        }
        rows.push((cell, count));
    }
    let schema = Schema::new(names.iter().zip(&levels).map(|(n, &l)| Variable::new(n.as_str(), l.max(1))).collect())?;
    let mut counts = vec![0i64; schema.cell_count()];
    let mut seen = vec![false; schema.cell_count()];
    for (cell, count) in rows {
        let flat = schema.flat_index(&CellIndex { levels: cell })?;
        if std::mem::replace(&mut seen[flat], true) {
            return Err(Error::Schema(format!("cell {flat} listed twice")));
        }
        counts[flat] = count;
    }
    CountTable::new(schema, counts)
}

pub fn write_table_csv<W: Write>(table: &CountTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = table.schema.variables().iter().map(|v| v.name.as_str()).collect();
    header.push("count");
    w.write_record(&header)?;
    for (flat, &c) in table.counts.iter().enumerate() {
        let mut rec: Vec<String> = table.schema.cell_of(flat).levels.iter().map(|l| l.to_string()).collect();
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a table as CSV when the extension is `.csv`, as JSON otherwise.
pub fn read_table(path: &Path) -> Result<CountTable> {
    let f = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_table_csv(f)
    } else {
        read_table_json(f)
    }
}

pub fn write_table(table: &CountTable, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_table_csv(table, f)
    } else {
        write_table_json(table, f)
    }
}

pub fn read_model_json<R: Read>(reader: R, schema: &Schema) -> Result<GeneratingClass> {
    let names: Vec<Vec<String>> = serde_json::from_reader(reader)?;
    GeneratingClass::from_names(schema, &names)
}

pub fn write_model_json<W: Write>(model: &GeneratingClass, schema: &Schema, writer: W) -> Result<()> {
    serde_json::to_writer(writer, &model.to_names(schema))?;
    Ok(())
}

pub fn read_family_json<R: Read>(reader: R, schema: &Schema) -> Result<Vec<GeneratingClass>> {
    let names: Vec<Vec<Vec<String>>> = serde_json::from_reader(reader)?;
    names.iter().map(|m| GeneratingClass::from_names(schema, m)).collect()
}

pub fn write_family_json<W: Write>(family: &[GeneratingClass], schema: &Schema, writer: W) -> Result<()> {
    let names: Vec<Vec<Vec<String>>> = family.iter().map(|m| m.to_names(schema)).collect();
    serde_json::to_writer_pretty(writer, &names)?;
    Ok(())
}

/// Schema spanned by the variable names a model mentions, in order of first
/// appearance, each with `levels` levels.
pub fn schema_from_model_names(names: &[Vec<String>], levels: usize) -> Result<Schema> {
    let mut seen: Vec<String> = Vec::new();
    for n in names.iter().flatten() {
        if !seen.contains(n) {
            seen.push(n.clone());
        }
    }
    Schema::new(seen.into_iter().map(|n| Variable::new(n, levels)).collect())
}

pub fn read_report_json<R: Read>(reader: R) -> Result<FitReport> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn write_report_json<W: Write>(report: &FitReport, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, report)?;
    Ok(())
}

/// Reads an edge bundle, applying the same validation as [`EdgeMarginals::new`].
pub fn read_edges_json<R: Read>(reader: R) -> Result<EdgeMarginals> {
    let raw: EdgeMarginals = serde_json::from_reader(reader)?;
    EdgeMarginals::new(raw.variables, raw.edges)
}

pub fn write_edges_json<W: Write>(edges: &EdgeMarginals, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, edges)?;
    Ok(())
}
