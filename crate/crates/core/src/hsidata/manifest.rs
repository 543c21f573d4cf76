use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One imaged slice and the bulk reference of the sample it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub belly_id: String,
    pub slice_id: String,
    pub cube_path: PathBuf,
    pub mask_path: PathBuf,
    pub reference: f64,
    #[serde(default)]
    pub group: Option<String>,
}

/// Reads a manifest CSV; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let mut rec: SampleRecord = row?;
        if !(0.0..=100.0).contains(&rec.reference) {
            return Err(Error::invalid(format!(
                "reference {} for {} outside [0, 100]",
                rec.reference, rec.belly_id
            )));
        }
        if rec.group.as_deref() == Some("") {
            rec.group = None;
        }
        if rec.cube_path.is_relative() {
            rec.cube_path = base.join(&rec.cube_path);
        }
        if rec.mask_path.is_relative() {
            rec.mask_path = base.join(&rec.mask_path);
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for rec in records {
        writer.serialize(rec)?;
    }
    writer.flush().map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            SampleRecord {
                belly_id: "b0".into(),
                slice_id: "s0".into(),
                cube_path: "cubes/b0.hsc".into(),
                mask_path: "masks/b0.msk".into(),
                reference: 31.5,
                group: Some("F2".into()),
            },
            SampleRecord {
                belly_id: "b1".into(),
                slice_id: "s0".into(),
                cube_path: "b1.hsc".into(),
                mask_path: "b1.msk".into(),
                reference: 12.0,
                group: None,
            },
        ];
        let path = dir.path().join("manifest.csv");
        write_manifest(&recs, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back[0].cube_path, dir.path().join("cubes/b0.hsc"));
        assert_eq!(back[1].group, None);
        assert_eq!(back[0].reference, 31.5);
    }

    #[test]
    fn rejects_out_of_range_reference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "belly_id,slice_id,cube_path,mask_path,reference,group\nb,s,c,m,120,\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
