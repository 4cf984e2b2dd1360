//! Plain-text keyframe-to-frame correspondence datasets.
//!
//! Each record is a header line
//!
//! ```text
//! pair <id> <seq> <qw> <qx> <qy> <qz> <tx> <ty> <tz> <noiseless:0|1> <n>
//! ```
//!
//! followed by `n` lines `fx fy fz fx' fy' fz'`: the keyframe bearing and the
//! current-frame bearing. The pose maps keyframe coordinates into the current
//! frame (`p' = R p + t`). Fields are whitespace separated, lines end in LF,
//! and reals are written with 17 significant digits. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{Bearing, Rotation};
use crate::relpose5::BearingPair;

/// Unit-norm slack accepted (and repaired) when reading bearings and
/// quaternions.
pub const NORM_TOLERANCE: f64 = 1e-6;
pub const MIN_PAIRS_PER_RECORD: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}:{line}: {reason}", file.display())]
    Parse { file: PathBuf, line: usize, reason: String },
    #[error("{}:{line}: invalid record: {reason}", file.display())]
    Validation { file: PathBuf, line: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid record {pair_id}: {reason}")]
    InvalidRecord { pair_id: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceRecord {
    pub pair_id: u64,
    /// Sequence name; must not contain whitespace.
    pub source_sequence: String,
    pub bearings: Vec<BearingPair>,
    pub gt_rotation: Rotation,
    pub gt_translation: Vector3<f64>,
    pub noiseless: bool,
}

impl CorrespondenceRecord {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |reason: String| DatasetError::InvalidRecord { pair_id: self.pair_id, reason };
        if self.bearings.len() < MIN_PAIRS_PER_RECORD {
            return Err(fail(format!("{} pairs, need at least {MIN_PAIRS_PER_RECORD}", self.bearings.len())));
        }
        if self.source_sequence.is_empty() || self.source_sequence.chars().any(char::is_whitespace) {
            return Err(fail(format!("sequence name {:?} is empty or contains whitespace", self.source_sequence)));
        }
        if !self.gt_translation.iter().all(|v| v.is_finite()) {
            return Err(fail("non-finite translation".into()));
        }
        Ok(())
    }
}

fn fmt_real(out: &mut String, v: f64) {
    // `{:e}` with 16 fractional digits is 17 significant digits.
    let _ = write!(out, " {v:.16e}");
}

pub fn format_dataset(records: &[CorrespondenceRecord]) -> Result<String, DatasetError> {
    let mut out = String::new();
    for rec in records {
        rec.validate()?;
        let q = UnitQuaternion::from_rotation_matrix(&rec.gt_rotation);
        let _ = write!(out, "pair {} {}", rec.pair_id, rec.source_sequence);
        for v in [q.w, q.i, q.j, q.k] {
            fmt_real(&mut out, v);
        }
        for v in rec.gt_translation.iter() {
            fmt_real(&mut out, *v);
        }
        let _ = writeln!(out, " {} {}", u8::from(rec.noiseless), rec.bearings.len());
        for p in &rec.bearings {
            let mut line = String::new();
            for v in p.f.iter().chain(p.f_prime.iter()) {
                fmt_real(&mut line, *v);
            }
            out.push_str(&line[1..]);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_dataset(records: &[CorrespondenceRecord], path: &Path) -> Result<(), DatasetError> {
    let text = format_dataset(records)?;
    fs::write(path, text).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

pub fn read_dataset(path: &Path) -> Result<Vec<CorrespondenceRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&text, path)
}

struct Cursor<'a> {
    file: &'a Path,
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Cursor<'a> {
    /// Next non-blank, non-comment line with its 1-based number.
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.lines.by_ref() {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Some((i + 1, trimmed));
            }
        }
        None
    }

    fn parse_err(&self, line: usize, reason: impl Into<String>) -> DatasetError {
        DatasetError::Parse { file: self.file.to_path_buf(), line, reason: reason.into() }
    }

    fn invalid(&self, line: usize, reason: impl Into<String>) -> DatasetError {
        DatasetError::Validation { file: self.file.to_path_buf(), line, reason: reason.into() }
    }
}

fn parse_reals<const N: usize>(fields: &[&str], what: &str) -> Result<[f64; N], String> {
    if fields.len() != N {
        return Err(format!("expected {N} values for {what}, found {}", fields.len()));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse::<f64>().map_err(|_| format!("{what}: cannot parse {f:?} as a real"))?;
        if !o.is_finite() {
            return Err(format!("{what}: non-finite value {f:?}"));
        }
    }
    Ok(out)
}

fn unit_or_reason(v: Vector3<f64>) -> Result<Bearing, String> {
    let n = v.norm();
    if (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(format!("bearing norm {n} is not within {NORM_TOLERANCE:e} of 1"));
    }
    if n != 1.0 && (n - 1.0).abs() > 1e-12 {
        log::debug!("renormalising bearing with norm {n}");
    }
    Ok(Unit::new_normalize(v))
}

/// Parses the text format; `file` is only used for error messages.
pub fn parse_dataset(text: &str, file: &Path) -> Result<Vec<CorrespondenceRecord>, DatasetError> {
    let mut cur = Cursor { file, lines: text.lines().enumerate().peekable() };
    let mut records = Vec::new();
    while let Some((lineno, line)) = cur.next_line() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "pair" {
            return Err(cur.parse_err(lineno, format!("expected a `pair` header, found {:?}", fields[0])));
        }
        if fields.len() != 12 {
            return Err(cur.parse_err(lineno, format!("header has {} fields, expected 12", fields.len())));
        }
        let pair_id: u64 = fields[1].parse().map_err(|_| cur.parse_err(lineno, format!("bad pair id {:?}", fields[1])))?;
        let source_sequence = fields[2].to_string();
        let q = parse_reals::<4>(&fields[3..7], "quaternion").map_err(|r| cur.parse_err(lineno, r))?;
        let t = parse_reals::<3>(&fields[7..10], "translation").map_err(|r| cur.parse_err(lineno, r))?;
        let noiseless = match fields[10] {
            "0" => false,
            "1" => true,
            other => return Err(cur.parse_err(lineno, format!("noiseless flag must be 0 or 1, found {other:?}"))),
        };
        let n: usize = fields[11].parse().map_err(|_| cur.parse_err(lineno, format!("bad pair count {:?}", fields[11])))?;

        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let qn = quat.norm();
        if (qn - 1.0).abs() > NORM_TOLERANCE {
            return Err(cur.invalid(lineno, format!("rotation is not orthonormal: quaternion norm {qn}")));
        }
        let gt_rotation = UnitQuaternion::from_quaternion(quat).to_rotation_matrix();
        if n < MIN_PAIRS_PER_RECORD {
            return Err(cur.invalid(lineno, format!("{n} pairs, need at least {MIN_PAIRS_PER_RECORD}")));
        }

        let mut bearings = Vec::with_capacity(n);
        for k in 0..n {
            let Some((ln, body)) = cur.next_line() else {
                return Err(cur.parse_err(lineno, format!("record {pair_id} ends after {k} of {n} bearing lines")));
            };
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.first() == Some(&"pair") {
                return Err(cur.parse_err(ln, format!("record {pair_id} has only {k} of {n} bearing lines")));
            }
            let v = parse_reals::<6>(&fields, "bearing pair").map_err(|r| cur.parse_err(ln, r))?;
            let f = unit_or_reason(Vector3::new(v[0], v[1], v[2])).map_err(|r| cur.invalid(ln, r))?;
            let fp = unit_or_reason(Vector3::new(v[3], v[4], v[5])).map_err(|r| cur.invalid(ln, r))?;
            bearings.push(BearingPair::new(f, fp));
        }
        records.push(CorrespondenceRecord {
            pair_id,
            source_sequence,
            bearings,
            gt_rotation,
            gt_translation: Vector3::new(t[0], t[1], t[2]),
            noiseless,
        });
    }
    Ok(records)
}

/// At most `target_per_sequence` records per sequence, drawn uniformly
/// without replacement; original order is kept.
pub fn subsample(records: &[CorrespondenceRecord], target_per_sequence: usize, seed: u64) -> Vec<CorrespondenceRecord> {
    let mut by_seq: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_seq.entry(r.source_sequence.as_str()).or_default().push(i);
    }
    let mut keep = vec![false; records.len()];
    for (stream, idx) in by_seq.values().enumerate() {
        if idx.len() <= target_per_sequence {
            idx.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        for k in sample(&mut rng, idx.len(), target_per_sequence) {
            keep[idx[k]] = true;
        }
    }
    records.iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use rand::Rng;

    fn random_bearing(rng: &mut ChaCha8Rng) -> Bearing {
        Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0)))
    }

    fn random_record(rng: &mut ChaCha8Rng, id: u64, seq: &str) -> CorrespondenceRecord {
        let n = rng.random_range(5..30);
        CorrespondenceRecord {
            pair_id: id,
            source_sequence: seq.to_string(),
            bearings: (0..n).map(|_| BearingPair::new(random_bearing(rng), random_bearing(rng))).collect(),
            gt_rotation: so3_exp(&Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))),
            gt_translation: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            noiseless: rng.random_bool(0.5),
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let records: Vec<_> = (0..300).map(|i| random_record(&mut rng, i, ["fr1_xyz", "fr3_near"][i as usize % 2])).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.txt");
        write_dataset(&records, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.pair_id, b.pair_id);
            assert_eq!(a.source_sequence, b.source_sequence);
            assert_eq!(a.noiseless, b.noiseless);
            assert!((a.gt_rotation.matrix() - b.gt_rotation.matrix()).amax() <= 1e-15);
            assert!((a.gt_translation - b.gt_translation).amax() <= 1e-15);
            for (p, q) in a.bearings.iter().zip(&b.bearings) {
                assert!((p.f.as_ref() - q.f.as_ref()).amax() <= 1e-15);
                assert!((p.f_prime.as_ref() - q.f_prime.as_ref()).amax() <= 1e-15);
            }
        }
    }

    const HEADER: &str = "pair 7 seq 1 0 0 0 0.1 0 0 1 5\n";
    const LINE: &str = "0 0 1 0 0 1\n";

    #[test]
    fn short_bearing_line_names_line() {
        let text = format!("{HEADER}{LINE}{LINE}0 0 1 0 0\n{LINE}{LINE}");
        let err = parse_dataset(&text, Path::new("d.txt")).unwrap_err();
        match err {
            DatasetError::Parse { line, ref reason, .. } => {
                assert_eq!(line, 4);
                assert!(reason.contains("expected 6"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().starts_with("d.txt:4:"));
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let text = format!("pair 7 seq 1.001 0 0 0 0.1 0 0 1 5\n{}", LINE.repeat(5));
        assert!(matches!(parse_dataset(&text, Path::new("d")), Err(DatasetError::Validation { line: 1, .. })));
    }

    #[test]
    fn bearings_near_unit_are_renormalised() {
        let text = format!("{HEADER}0 0 1.0000004 0 0 1\n{}", LINE.repeat(4));
        let recs = parse_dataset(&text, Path::new("d")).unwrap();
        assert!((recs[0].bearings[0].f.norm() - 1.0).abs() < 1e-15);
        let text = format!("{HEADER}0 0 1.1 0 0 1\n{}", LINE.repeat(4));
        assert!(matches!(parse_dataset(&text, Path::new("d")), Err(DatasetError::Validation { line: 2, .. })));
    }

    #[test]
    fn truncated_and_malformed_records() {
        let text = format!("{HEADER}{}", LINE.repeat(3));
        assert!(matches!(parse_dataset(&text, Path::new("d")), Err(DatasetError::Parse { line: 1, .. })));
        let text = "pair x seq 1 0 0 0 0 0 0 1 5\n";
        assert!(matches!(parse_dataset(text, Path::new("d")), Err(DatasetError::Parse { line: 1, .. })));
        let text = format!("pair 1 seq 1 0 0 0 0 0 0 1 4\n{}", LINE.repeat(4));
        assert!(matches!(parse_dataset(&text, Path::new("d")), Err(DatasetError::Validation { .. })));
        let text = "hello\n";
        assert!(matches!(parse_dataset(text, Path::new("d")), Err(DatasetError::Parse { line: 1, .. })));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = format!("# generated\n\n{HEADER}{}", LINE.repeat(5));
        assert_eq!(parse_dataset(&text, Path::new("d")).unwrap().len(), 1);
    }

    #[test]
    fn subsample_per_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let mut records: Vec<_> = (0..3000).map(|i| random_record(&mut rng, i, "a")).collect();
        records.extend((3000..3100).map(|i| random_record(&mut rng, i, "b")));
        let sub = subsample(&records, 300, 1);
        assert_eq!(sub.iter().filter(|r| r.source_sequence == "a").count(), 300);
        assert_eq!(sub.iter().filter(|r| r.source_sequence == "b").count(), 100);
        assert_eq!(sub, subsample(&records, 300, 1));
        let ids = |v: &[CorrespondenceRecord]| v.iter().map(|r| r.pair_id).collect::<Vec<_>>();
        assert_ne!(ids(&sub), ids(&subsample(&records, 300, 2)));
        // Original order preserved.
        assert!(ids(&sub).windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample(&records[..10], 300, 5), records[..10].to_vec());
    }

    #[test]
    fn invalid_record_not_written() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let mut rec = random_record(&mut rng, 1, "has space");
        assert!(format_dataset(std::slice::from_ref(&rec)).is_err());
        rec.source_sequence = "ok".into();
        rec.bearings.truncate(4);
        assert!(format_dataset(&[rec]).is_err());
    }
}
