//! File formats: dataset CSV (`y,x1,...,xq`), single-column vectors and JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::weights::WeightMatrix;

/// Response and covariates as read from CSV, before weights are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
}

impl Table {
    pub fn into_dataset(self, w: WeightMatrix) -> Result<Dataset> {
        Dataset::new(self.y, self.x, w)
    }
}

fn parse_field(s: &str, row: usize, col: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("row {row}, column '{col}': '{s}' is not a number")))
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("y") {
        return Err(Error::InvalidInput("dataset header must start with 'y'".into()));
    }
    for (k, h) in header.iter().enumerate().skip(1) {
        if *h != format!("x{k}") {
            return Err(Error::InvalidInput(format!("expected column 'x{k}', found '{h}'")));
        }
    }
    let q = header.len() - 1;
    let mut y = Vec::new();
    let mut xs = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "row {} has {} fields, header has {}",
                row + 1,
                rec.len(),
                header.len()
            )));
        }
        y.push(parse_field(&rec[0], row + 1, "y")?);
        for k in 1..=q {
            xs.push(parse_field(&rec[k], row + 1, &header[k])?);
        }
    }
    let n = y.len();
    Ok(Table {
        y,
        x: DMatrix::from_row_slice(n, q, &xs),
    })
}

pub fn write_table<W: Write>(writer: W, y: &[f64], x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} responses, {} covariate rows", y.len(), x.nrows())));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend((1..=x.ncols()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (s, yv) in y.iter().enumerate() {
        let mut rec = vec![yv.to_string()];
        rec.extend(x.row(s).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table_file(path: impl AsRef<Path>) -> Result<Table> {
    read_table(BufReader::new(File::open(path)?))
}

pub fn write_dataset_file(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_table(BufWriter::new(File::create(path)?), data.y(), data.x())
}

/// One named column of numbers.
pub fn write_column_file(path: impl AsRef<Path>, name: &str, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([name])?;
    for v in values {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_column_file(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let name = rdr.headers()?.get(0).unwrap_or("").to_string();
    rdr.records()
        .enumerate()
        .map(|(i, rec)| parse_field(rec?.get(0).unwrap_or(""), i + 1, &name))
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
