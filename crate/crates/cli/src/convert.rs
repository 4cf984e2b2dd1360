//! Import of correspondence tables in a flat CSV layout, one bearing pair
//! per row:
//!
//! ```text
//! pair_id,sequence,qw,qx,qy,qz,tx,ty,tz,fx,fy,fz,fx2,fy2,fz2
//! ```
//!
//! Rows of one pair must repeat the same pose; rows of different pairs may
//! interleave. Records keep the order in which their ids first appear.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use vo_core::datasetio::{CorrespondenceRecord, NORM_TOLERANCE};
use vo_core::BearingPair;

const COLUMNS: [&str; 15] =
    ["pair_id", "sequence", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "fx", "fy", "fz", "fx2", "fy2", "fz2"];

pub(crate) fn read_flat_csv(path: &Path) -> Result<Vec<CorrespondenceRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_flat_csv(&text).with_context(|| format!("in {}", path.display()))
}

fn unit(v: Vector3<f64>, what: &str) -> Result<Unit<Vector3<f64>>> {
    let n = v.norm();
    if (n - 1.0).abs() > NORM_TOLERANCE {
        bail!("{what} has norm {n}, not within {NORM_TOLERANCE:e} of 1");
    }
    Ok(Unit::new_normalize(v))
}

/// Parses the flat layout; `noiseless` is false on every record.
pub fn parse_flat_csv(text: &str) -> Result<Vec<CorrespondenceRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != COLUMNS {
        bail!("expected columns {}, found {}", COLUMNS.join(","), found.join(","));
    }
    let mut records: Vec<CorrespondenceRecord> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = rec.with_context(|| format!("line {line}"))?;
        let pair_id: u64 = rec[0].parse().with_context(|| format!("line {line}: pair_id {:?}", &rec[0]))?;
        let mut v = [0.0f64; 13];
        for (k, x) in v.iter_mut().enumerate() {
            let field = &rec[k + 2];
            *x = field.parse().with_context(|| format!("line {line}: {} {field:?}", COLUMNS[k + 2]))?;
            if !x.is_finite() {
                bail!("line {line}: {} is not finite", COLUMNS[k + 2]);
            }
        }
        let q: Quaternion<f64> = Quaternion::new(v[0], v[1], v[2], v[3]);
        if (q.norm() - 1.0).abs() > NORM_TOLERANCE {
            bail!("line {line}: quaternion norm {} is not within {NORM_TOLERANCE:e} of 1", q.norm());
        }
        let rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let translation = Vector3::new(v[4], v[5], v[6]);
        let pair = BearingPair::new(
            unit(Vector3::new(v[7], v[8], v[9]), "keyframe bearing").with_context(|| format!("line {line}"))?,
            unit(Vector3::new(v[10], v[11], v[12]), "current bearing").with_context(|| format!("line {line}"))?,
        );
        match index.get(&pair_id) {
            Some(&i) => {
                let r = &mut records[i];
                if r.source_sequence != rec[1] || (r.gt_rotation.matrix() - rotation.matrix()).amax() > 1e-12 || r.gt_translation != translation {
                    bail!("line {line}: pair {pair_id} changes its sequence or pose");
                }
                r.bearings.push(pair);
            }
            None => {
                index.insert(pair_id, records.len());
                records.push(CorrespondenceRecord {
                    pair_id,
                    source_sequence: rec[1].to_string(),
                    bearings: vec![pair],
                    gt_rotation: rotation,
                    gt_translation: translation,
                    noiseless: false,
                });
            }
        }
    }
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(id: u64, n: usize) -> String {
        (0..n)
            .map(|i| {
                let x = 0.1 * i as f64;
                let f = Vector3::new(x, 0.2, 1.0).normalize();
                format!("{id},seqA,1,0,0,0,0.5,0,0,{},{},{},{},{},{}\n", f.x, f.y, f.z, f.x, f.y, f.z)
            })
            .collect()
    }

    #[test]
    fn groups_rows_by_pair() {
        let text = format!("{}\n{}{}{}", COLUMNS.join(","), rows(4, 3), rows(9, 6), rows(4, 3));
        let recs = parse_flat_csv(&text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!((recs[0].pair_id, recs[0].bearings.len()), (4, 6));
        assert_eq!((recs[1].pair_id, recs[1].bearings.len()), (9, 6));
        assert_eq!(recs[0].gt_translation, Vector3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let header = COLUMNS.join(",");
        assert!(parse_flat_csv("a,b,c\n").is_err());
        // Too few pairs for a record.
        assert!(parse_flat_csv(&format!("{header}\n{}", rows(1, 3))).is_err());
        let bad_q = rows(1, 6).replace("seqA,1,0,0,0", "seqA,2,0,0,0");
        let err = parse_flat_csv(&format!("{header}\n{bad_q}")).unwrap_err();
        assert!(format!("{err:#}").contains("line 2"), "{err:#}");
        let conflicting = format!("{header}\n{}{}", rows(1, 5), rows(1, 1).replace("0.5,0,0", "0.4,0,0"));
        assert!(parse_flat_csv(&conflicting).is_err());
    }
}
