//! `adlog-v1`: a header line followed by one JSON record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LoggedRecord;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "adlog-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: String,
    /// Name of the context feature schema.
    pub context_schema: String,
    pub context_len: usize,
    #[serde(default)]
    pub constraints_hash: Option<String>,
}

impl LogHeader {
    pub fn new(context_schema: &str, context_len: usize, constraints_hash: Option<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            context_schema: context_schema.to_string(),
            context_len,
            constraints_hash,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// Fail on the first malformed line.
    Strict,
    /// Skip malformed lines and report them.
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct LogFile {
    pub header: Option<LogHeader>,
    pub records: Vec<LoggedRecord>,
    /// `(line number, message)` for every skipped line in lenient mode.
    pub errors: Vec<(usize, String)>,
}

pub fn write_log(path: impl AsRef<Path>, header: &LogHeader, records: &[LoggedRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        if r.context.len() != header.context_len {
            return Err(Error::Data(format!(
                "context length {} does not match header {}",
                r.context.len(),
                header.context_len
            )));
        }
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log(path: impl AsRef<Path>, mode: ReadMode) -> Result<LogFile> {
    let reader = BufReader::new(File::open(path)?);
    let mut log = LogFile::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(header) = &log.header else {
            let header: LogHeader = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: line_no,
                message: format!("bad header: {e}"),
            })?;
            if header.schema_version != SCHEMA_VERSION {
                return Err(Error::Schema {
                    found: header.schema_version,
                    expected: SCHEMA_VERSION.to_string(),
                });
            }
            log.header = Some(header);
            continue;
        };
        let parsed = serde_json::from_str::<LoggedRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                if r.context.len() == header.context_len {
                    Ok(r)
                } else {
                    Err(format!(
                        "context length {} does not match header {}",
                        r.context.len(),
                        header.context_len
                    ))
                }
            });
        match (parsed, mode) {
            (Ok(r), _) => log.records.push(r),
            (Err(message), ReadMode::Strict) => {
                return Err(Error::Malformed {
                    line: line_no,
                    message,
                })
            }
            (Err(message), ReadMode::Lenient) => {
                log::warn!("skipping malformed record at line {line_no}: {message}");
                log.errors.push((line_no, message));
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::{CatalogKey, FeedAction};
    use crate::dataset::testutil::record;
    use crate::rewards::{AdsSignals, SatSignals};

    fn sample(n: usize) -> Vec<LoggedRecord> {
        (0..n)
            .map(|i| {
                let mut r = record(
                    &format!("u{}", i % 37),
                    FeedAction::from_mask((i % 3) as u32 * 2).unwrap(),
                    CatalogKey::new((i % 2) as u32, if i % 5 == 0 { None } else { Some(i as u32 % 7) }),
                    1.0 / (1 + i % 7) as f64,
                );
                r.context = vec![i as f64 * 0.1, (i as f64).sqrt(), -1.0 / 3.0];
                r.sat_signals = SatSignals {
                    engagements: (i % 4) as u32,
                    pct_video_watch: (i % 10) as f64 / 9.7,
                    rank_i: 1,
                    rank_d: 1 + (i % 3) as u32,
                    session_minutes: i as f64 * 0.37,
                    ..Default::default()
                };
                r.ads_signals = AdsSignals {
                    impressions: 1,
                    clicks: (i % 2) as u32,
                    installs: 0,
                };
                r.retention_label = (i % 2 == 0).then_some(1);
                r.revenue_label = (i % 3 == 0).then_some(i as f64 * 0.01);
                r.timestamp = 1_700_000_000_000 + i as i64;
                r
            })
            .collect()
    }

    fn header() -> LogHeader {
        LogHeader::new("test", 3, None)
    }

    #[test]
    fn round_trip_preserves_order_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let records = sample(1000);
        write_log(&path, &header(), &records).unwrap();
        let back = read_log(&path, ReadMode::Strict).unwrap();
        assert_eq!(back.header.unwrap(), header());
        assert_eq!(back.records, records);
    }

    #[test]
    fn malformed_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_log(&path, &header(), &sample(100)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[42] = "{\"context\": [1.0, oops";
        std::fs::write(&path, lines.join("\n")).unwrap();

        match read_log(&path, ReadMode::Strict) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 43),
            other => panic!("expected malformed error, got {other:?}"),
        }
        let lenient = read_log(&path, ReadMode::Lenient).unwrap();
        assert_eq!(lenient.records.len(), 99);
        assert_eq!(lenient.errors.len(), 1);
        assert_eq!(lenient.errors[0].0, 43);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let log = read_log(&path, ReadMode::Strict).unwrap();
        assert!(log.records.is_empty());
        assert!(log.header.is_none());
    }

    #[test]
    fn schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.jsonl");
        let mut h = header();
        h.schema_version = "adlog-v2".into();
        std::fs::write(&path, serde_json::to_string(&h).unwrap()).unwrap();
        assert!(matches!(read_log(&path, ReadMode::Lenient), Err(Error::Schema { .. })));
    }

    #[test]
    fn context_length_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut records = sample(3);
        records[1].context.push(0.0);
        assert!(write_log(&path, &header(), &records).is_err());
    }
}
