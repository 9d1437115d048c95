//! JSON-lines datasets: one `{"id", "scores", "positives"}` object per line,
//! and a ground-truth sidecar of `{"id", "p_true"}` objects.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fpcp_core::{Error as CoreError, ScoredExample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Upper bound on the number of labels in a single record.
pub const MAX_SCORES_PER_RECORD: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    scores: Vec<f64>,
    positives: Vec<usize>,
}

/// Per-label true probabilities for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub id: String,
    pub p_true: Vec<f64>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_owned()))
        .collect();
    if lines.is_empty() {
        log::warn!("{}: empty file, no records loaded", path.display());
    }
    Ok(lines)
}

fn parse_record(path: &Path, line: usize, text: &str) -> Result<(ScoredExample, usize)> {
    let rec: Record = serde_json::from_str(text).map_err(|source| Error::Parse {
        path: path.to_owned(),
        line,
        source,
    })?;
    if rec.scores.len() > MAX_SCORES_PER_RECORD {
        return Err(Error::Record {
            path: path.to_owned(),
            line,
            message: format!(
                "{} scores exceed the limit of {MAX_SCORES_PER_RECORD}",
                rec.scores.len()
            ),
        });
    }
    ScoredExample::sanitized(rec.id, rec.scores, rec.positives).map_err(|e| match e {
        CoreError::InvalidExample(violations) => Error::InvalidRecord {
            path: path.to_owned(),
            line,
            violations,
        },
        other => Error::Core(other),
    })
}

/// Loads a dataset, clamping finite scores outside `[0, 1]` with a warning.
///
/// Errors name the first offending line.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<ScoredExample>> {
    let path = path.as_ref();
    let parsed: Vec<Result<(ScoredExample, usize)>> = read_lines(path)?
        .par_iter()
        .map(|(line, text)| parse_record(path, *line, text))
        .collect();
    let mut out = Vec::with_capacity(parsed.len());
    let mut clamped = 0;
    for r in parsed {
        let (ex, c) = r?;
        clamped += c;
        out.push(ex);
    }
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} score(s) into [0, 1]", path.display());
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes one record per line; scores round-trip exactly through
/// [`load_dataset`].
pub fn save_dataset(data: &[ScoredExample], path: impl AsRef<Path>) -> Result<()> {
    write_lines(
        path.as_ref(),
        data.iter().map(|ex| Record {
            id: ex.id.clone(),
            scores: ex.scores.clone(),
            positives: ex.positives.as_slice().to_vec(),
        }),
    )
}

pub fn save_truth(truth: &[TruthRecord], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), truth.iter())
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    read_lines(path)?
        .iter()
        .map(|(line, text)| {
            serde_json::from_str(text).map_err(|source| Error::Parse {
                path: path.to_owned(),
                line: *line,
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn round_trip_preserves_bits() {
        let data = vec![
            ScoredExample::new("a", vec![0.1, 1.0 / 3.0, 0.0, 1.0, 5e-324], [1, 3]),
            ScoredExample::new(
                "b",
                vec![0.123_456_789_012_345_67],
                fpcp_core::LabelSet::new(),
            ),
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&data, f.path()).unwrap();
        assert_eq!(load_dataset(f.path()).unwrap(), data);
    }

    #[test]
    fn bad_positive_reports_line_number() {
        let f = write(
            "{\"id\":\"a\",\"scores\":[0.5],\"positives\":[]}\n\
             {\"id\":\"b\",\"scores\":[0.1,0.2,0.3,0.4,0.5],\"positives\":[99]}\n",
        );
        let err = load_dataset(f.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { line: 2, .. }), "{err}");
        assert!(err.to_string().contains(":2: positive index out of range"));
    }

    #[test]
    fn malformed_json_reports_line_number() {
        let f = write("{\"id\":\"a\",\"scores\":[0.5],\"positives\":[]}\n\n{oops\n");
        let err = load_dataset(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn out_of_range_scores_are_clamped() {
        let f = write("{\"id\":\"a\",\"scores\":[1.0000001,-0.2,0.5],\"positives\":[0]}\n");
        let data = load_dataset(f.path()).unwrap();
        assert_eq!(data[0].scores, vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        let f = write("");
        assert!(load_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn oversized_record_is_rejected() {
        let scores = vec![0.5; MAX_SCORES_PER_RECORD + 1];
        let line = serde_json::json!({"id": "x", "scores": scores, "positives": []});
        let f = write(&format!("{line}\n"));
        assert!(matches!(
            load_dataset(f.path()).unwrap_err(),
            Error::Record { line: 1, .. }
        ));
    }

    #[test]
    fn truth_round_trip() {
        let truth = vec![TruthRecord {
            id: "a".into(),
            p_true: vec![0.25, 0.75],
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        save_truth(&truth, f.path()).unwrap();
        assert_eq!(load_truth(f.path()).unwrap(), truth);
    }
}
