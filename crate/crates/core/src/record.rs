//! Party-local tabular data: a record identifier plus string attributes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub rid: String,
    pub values: Vec<String>,
}

impl Record {
    pub fn new<S: Into<String>>(rid: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Self {
            rid: rid.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }
}

/// A party's database. All records share the attribute layout in `attrs`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Database {
    attrs: Vec<String>,
    records: Vec<Record>,
}

impl Database {
    pub fn new<S: Into<String>>(attrs: impl IntoIterator<Item = S>, records: Vec<Record>) -> Result<Self> {
        let attrs: Vec<String> = attrs.into_iter().map(Into::into).collect();
        if let Some(bad) = records.iter().find(|r| r.values.len() != attrs.len()) {
            return Err(Error::Config(format!(
                "record {} has {} values, expected {}",
                bad.rid,
                bad.values.len(),
                attrs.len()
            )));
        }
        Ok(Self { attrs, records })
    }

    pub fn attrs(&self) -> &[String] {
        &self.attrs
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn attr_index(&self, name: &str) -> Result<usize> {
        self.attrs
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attr_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.attr_index(n.as_ref())).collect()
    }

    /// Values of the given attribute columns for one record.
    pub fn project<'a>(&self, record: &'a Record, idx: &[usize]) -> Vec<&'a str> {
        idx.iter().map(|&i| record.values[i].as_str()).collect()
    }

    /// Reads a CSV whose first column is the record id.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() {
            return Err(Error::Config("CSV has no columns".into()));
        }
        let attrs: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let mut it = row.iter();
            let rid = it.next().unwrap_or_default().to_string();
            records.push(Record::new(rid, it.map(str::to_string)));
        }
        Database::new(attrs, records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["rid"];
        header.extend(self.attrs.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.rid.as_str()];
            row.extend(r.values.iter().map(String::as_str));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}
