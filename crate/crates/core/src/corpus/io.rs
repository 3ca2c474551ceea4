//! JSONL persistence for datasets: `catalog.jsonl` plus one query file per
//! split, one JSON object per line, newline-terminated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CorpusError, Dataset, ProductRecord, QueryRecord};

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CorpusError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Load and validate a dataset from three JSONL files. Product text is
/// normalized (lowercased, whitespace collapsed) on the way in.
pub fn load_dataset(
    catalog_path: &Path,
    train_path: &Path,
    test_path: &Path,
) -> Result<Dataset, CorpusError> {
    let mut catalog: Vec<ProductRecord> = read_jsonl(catalog_path)?;
    for p in &mut catalog {
        p.normalize();
    }
    let dataset = Dataset {
        catalog,
        train_queries: read_jsonl::<QueryRecord>(train_path)?,
        test_queries: read_jsonl::<QueryRecord>(test_path)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Write a dataset as three JSONL files; `load_dataset` inverts this exactly.
pub fn save_dataset(
    dataset: &Dataset,
    catalog_path: &Path,
    train_path: &Path,
    test_path: &Path,
) -> Result<(), CorpusError> {
    write_jsonl(catalog_path, &dataset.catalog)?;
    write_jsonl(train_path, &dataset.train_queries)?;
    write_jsonl(test_path, &dataset.test_queries)?;
    Ok(())
}
