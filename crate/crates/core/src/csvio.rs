//! Shared CSV helpers. Reals are written with 17 significant digits so every
//! value reparses to the identical `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// One parsed data row with its 1-based source line.
#[derive(Debug, Clone)]
pub struct Row {
    pub line: u64,
    pub values: Vec<f64>,
}

/// Reads a numeric table, checking the header matches `columns` exactly.
pub fn read_table<R: Read>(r: R, columns: &[&str]) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.len() != columns.len() || header.iter().zip(columns).any(|(h, c)| h != *c) {
        return Err(Error::Parse {
            line: 1,
            reason: format!(
                "expected header `{}`, found `{}`",
                columns.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let values = rec
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    reason: format!("`{field}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Row { line, values });
    }
    Ok(rows)
}

/// Writes a header plus rows of reals.
pub fn write_table<W: Write>(w: W, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(columns)?;
    for row in rows {
        wtr.write_record(row.iter().map(|v| fmt(*v)))?;
    }
    wtr.flush()?;
    Ok(())
}
