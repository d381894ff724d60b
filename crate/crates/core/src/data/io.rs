//! CSV and binary feature files.
//!
//! CSV: header `label,f0,…,f{d−1}` plus `,source_id,delta` when any record is
//! synthetic; LF line endings; features written as the shortest decimal that
//! round-trips their 32-bit value.
//!
//! Binary, little-endian: magic `CAFV`, `u16` version 1, `u32` d_f, `u64`
//! record count, then per record `i32` label, `u8` provenance flag (0 real,
//! 1 synthetic), `[i64 source_id, i32 delta]` if synthetic, and d_f `f32`
//! features.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureRecord, Provenance, Split};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CAFV";
const VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FeatureFormat::Csv => "csv",
            FeatureFormat::Binary => "bin",
        }
    }
}

impl std::str::FromStr for FeatureFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(FeatureFormat::Csv),
            "binary" | "bin" => Ok(FeatureFormat::Binary),
            other => Err(format!("unknown format `{other}` (expected csv or binary)")),
        }
    }
}

pub fn save_features(dataset: &Dataset, path: &Path, format: FeatureFormat) -> Result<()> {
    let bytes = match format {
        FeatureFormat::Csv => encode_csv(dataset).into_bytes(),
        FeatureFormat::Binary => encode_binary(dataset),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path, format: FeatureFormat, split: Split) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        FeatureFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|_| Error::Format {
                path: path.into(),
                message: "not valid UTF-8".into(),
            })?;
            decode_csv(&text, path, split)
        }
        FeatureFormat::Binary => decode_binary(&bytes, path, split),
    }
}

fn encode_csv(dataset: &Dataset) -> String {
    let synthetic = dataset
        .records()
        .iter()
        .any(|r| matches!(r.provenance, Provenance::Synthetic { .. }));
    let mut out = String::from("label");
    for i in 0..dataset.feature_dim() {
        let _ = write!(out, ",f{i}");
    }
    if synthetic {
        out.push_str(",source_id,delta");
    }
    out.push('\n');
    for r in dataset.records() {
        let _ = write!(out, "{}", r.label);
        for &v in &r.features {
            let _ = write!(out, ",{}", v as f32);
        }
        if synthetic {
            match r.provenance {
                Provenance::Real => out.push_str(",,"),
                Provenance::Synthetic { source_id, delta } => {
                    let _ = write!(out, ",{source_id},{delta}");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn decode_csv(text: &str, path: &Path, split: Split) -> Result<Dataset> {
    let err = |line: usize, message: String| Error::Csv {
        path: path.into(),
        line,
        message,
    };
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"label") {
        return Err(err(1, format!("header must start with `label`, got `{header}`")));
    }
    let with_provenance = columns.len() >= 3 && columns[columns.len() - 2..] == ["source_id", "delta"];
    let feature_cols = &columns[1..columns.len() - if with_provenance { 2 } else { 0 }];
    for (i, c) in feature_cols.iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(err(1, format!("expected column `f{i}`, got `{c}`")));
        }
    }
    let d = feature_cols.len();

    let mut records = Vec::new();
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(err(line_no, format!("expected {} cells, found {}", columns.len(), cells.len())));
        }
        let label: i32 = cells[0]
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("label `{}` is not an integer", cells[0])))?;
        let mut features = Vec::with_capacity(d);
        for (j, cell) in cells[1..=d].iter().enumerate() {
            let v: f32 = cell
                .trim()
                .parse()
                .map_err(|_| err(line_no, format!("column f{j}: `{cell}` is not a number")))?;
            features.push(f64::from(v));
        }
        let provenance = if with_provenance {
            let (sid, delta) = (cells[d + 1].trim(), cells[d + 2].trim());
            match (sid.is_empty(), delta.is_empty()) {
                (true, true) => Provenance::Real,
                (false, false) => Provenance::Synthetic {
                    source_id: sid
                        .parse()
                        .map_err(|_| err(line_no, format!("source_id `{sid}` is not an integer")))?,
                    delta: delta
                        .parse()
                        .map_err(|_| err(line_no, format!("delta `{delta}` is not an integer")))?,
                },
                _ => return Err(err(line_no, "source_id and delta must both be set or both empty".into())),
            }
        } else {
            Provenance::Real
        };
        records.push(FeatureRecord {
            id: records.len() as u64,
            features,
            label,
            provenance,
        });
    }
    Dataset::new(records, d, split)
}

fn encode_binary(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + dataset.len() * (5 + 4 * dataset.feature_dim()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.feature_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for r in dataset.records() {
        out.extend_from_slice(&r.label.to_le_bytes());
        match r.provenance {
            Provenance::Real => out.push(0),
            Provenance::Synthetic { source_id, delta } => {
                out.push(1);
                out.extend_from_slice(&(source_id as i64).to_le_bytes());
                out.extend_from_slice(&delta.to_le_bytes());
            }
        }
        for &v in &r.features {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
    /// Smallest total size consistent with what has been read so far.
    needed: u64,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.into(),
                expected: self.needed.max((self.pos + n) as u64),
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

fn decode_binary(bytes: &[u8], path: &Path, split: Split) -> Result<Dataset> {
    let format_err = |message: String| Error::Format {
        path: path.into(),
        message,
    };
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
        needed: HEADER_LEN,
    };
    if r.take(4)? != MAGIC {
        return Err(format_err("bad magic bytes, expected `CAFV`".into()));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let d = u32::from_le_bytes(r.array()?) as usize;
    let count = u64::from_le_bytes(r.array()?);
    let min_record = 4 + 1 + 4 * d as u64;
    r.needed = HEADER_LEN.saturating_add(count.saturating_mul(min_record));
    if r.needed > bytes.len() as u64 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: r.needed,
            actual: bytes.len() as u64,
        });
    }

    let mut records = Vec::with_capacity(count as usize);
    for id in 0..count {
        let label = i32::from_le_bytes(r.array()?);
        let provenance = match r.take(1)?[0] {
            0 => Provenance::Real,
            1 => {
                r.needed += 12;
                let source_id = i64::from_le_bytes(r.array()?);
                let delta = i32::from_le_bytes(r.array()?);
                if source_id < 0 {
                    return Err(format_err(format!("record {id}: negative source id {source_id}")));
                }
                Provenance::Synthetic {
                    source_id: source_id as u64,
                    delta,
                }
            }
            flag => return Err(format_err(format!("record {id}: invalid provenance flag {flag}"))),
        };
        let mut features = Vec::with_capacity(d);
        for _ in 0..d {
            features.push(f64::from(f32::from_le_bytes(r.array()?)));
        }
        records.push(FeatureRecord {
            id,
            features,
            label,
            provenance,
        });
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes after {count} records", bytes.len() - r.pos)));
    }
    Dataset::new(records, d, split)
}

/// `label,count` CSV of a class histogram.
pub fn histogram_csv(hist: &BTreeMap<i32, usize>) -> String {
    let mut out = String::from("label,count\n");
    for (label, count) in hist {
        let _ = writeln!(out, "{label},{count}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Dataset {
        Dataset::new(
            vec![
                FeatureRecord::real(0, 16, vec![0.5, 0.25]),
                FeatureRecord {
                    id: 1,
                    features: vec![0.1, 3.0e-8],
                    label: 17,
                    provenance: Provenance::Synthetic { source_id: 0, delta: 1 },
                },
            ],
            2,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn parses_csv_example() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "label,f0,f1\n16,0.5,0.25\n17,1.0,0.0").unwrap();
        let d = load_features(&p, FeatureFormat::Csv, Split::Train).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.feature_dim(), 2);
        assert_eq!(d.labels(), &[16, 17]);
        assert_eq!(d.records()[0].features, vec![0.5, 0.25]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "label,f0,f1\n16,0.5\n").unwrap();
        let e = load_features(&p, FeatureFormat::Csv, Split::Train).unwrap_err();
        assert!(matches!(e, Error::Csv { line: 2, .. }), "{e}");
        fs::write(&p, "label,f0,f1\n16,0.5,abc\n").unwrap();
        let e = load_features(&p, FeatureFormat::Csv, Split::Train).unwrap_err();
        assert!(e.to_string().contains("abc"), "{e}");
        fs::write(&p, "lbl,f0\n").unwrap();
        assert!(load_features(&p, FeatureFormat::Csv, Split::Train).is_err());
    }

    #[test]
    fn csv_keeps_provenance() {
        let text = encode_csv(&sample());
        assert!(text.starts_with("label,f0,f1,source_id,delta\n16,0.5,0.25,,\n"));
        let back = decode_csv(&text, Path::new("mem"), Split::Train).unwrap();
        assert_eq!(back.records()[1].provenance, Provenance::Synthetic { source_id: 0, delta: 1 });
    }

    #[test]
    fn csv_uses_shortest_f32_text() {
        let text = encode_csv(&sample());
        assert!(text.contains(",0.1,0.00000003,"), "{text}");
    }

    #[test]
    fn empty_dataset_binary_has_count_zero() {
        let d = Dataset::new(vec![], 3, Split::Test).unwrap();
        let bytes = encode_binary(&d);
        assert_eq!(bytes.len() as u64, HEADER_LEN);
        assert_eq!(&bytes[10..18], &0u64.to_le_bytes());
        let back = decode_binary(&bytes, Path::new("mem"), Split::Test).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.feature_dim(), 3);
    }

    #[test]
    fn truncated_binary_names_byte_counts() {
        let bytes = encode_binary(&sample());
        let cut = &bytes[..bytes.len() - 3];
        match decode_binary(cut, Path::new("mem"), Split::Train).unwrap_err() {
            Error::Truncated { expected, actual, .. } => {
                assert_eq!(actual, cut.len() as u64);
                assert_eq!(expected, bytes.len() as u64);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_binary(&sample());
        bytes[0] = b'X';
        assert!(decode_binary(&bytes, Path::new("mem"), Split::Train)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let mut bytes = encode_binary(&sample());
        bytes[4] = 2;
        assert!(decode_binary(&bytes, Path::new("mem"), Split::Train)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    proptest! {
        #[test]
        fn binary_roundtrip_is_byte_identical(
            rows in prop::collection::vec((0i32..200, prop::collection::vec(-1e6f32..1e6, 3), prop::option::of((0u64..1000, -3i32..4))), 0..20)
        ) {
            let records: Vec<FeatureRecord> = rows.into_iter().enumerate().map(|(i, (label, f, prov))| FeatureRecord {
                id: i as u64,
                features: f.into_iter().map(f64::from).collect(),
                label,
                provenance: prov.map_or(Provenance::Real, |(source_id, delta)| Provenance::Synthetic { source_id, delta }),
            }).collect();
            let d = Dataset::new(records, 3, Split::Train).unwrap();
            let bytes = encode_binary(&d);
            let back = decode_binary(&bytes, Path::new("mem"), Split::Train).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(encode_binary(&back), bytes);
            let text = encode_csv(&d);
            let from_csv = decode_csv(&text, Path::new("mem"), Split::Train).unwrap();
            prop_assert_eq!(&from_csv, &d);
        }
    }
}
