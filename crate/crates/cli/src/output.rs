use std::fs;
use std::io::{self, Write};
use std::path::Path;

use pca_gcb::io::to_json_string;
use serde::Serialize;

use crate::manifest::RunManifest;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a RunManifest,
    result: &'a T,
}

/// A CSV table with string cells.
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn sink(path: Option<&Path>, text: &str) -> io::Result<()> {
    match path {
        Some(p) => fs::write(p, text),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}

pub fn json<T: Serialize>(
    path: Option<&Path>,
    manifest: &RunManifest,
    result: &T,
) -> io::Result<()> {
    let mut text = to_json_string(&Envelope { manifest, result });
    text.push('\n');
    sink(path, &text)
}

/// CSV preceded by the manifest as a `#` comment line.
pub fn csv(path: Option<&Path>, manifest: &RunManifest, table: &Table) -> io::Result<()> {
    let mut text = format!(
        "# manifest: {}\n",
        serde_json::to_string(manifest).expect("manifest serializes")
    );
    text.push_str(&table.header.join(","));
    text.push('\n');
    for row in &table.rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    sink(path, &text)
}
