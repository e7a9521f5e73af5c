//! Dataset directory format: `samples.csv` (long format), `provenance.csv`, `meta.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ClassLabel, Dataset, Machine, Normalization, Provenance, ProvenanceStore, Sample, SampleId,
    CHANNELS,
};
use crate::error::{Error, Result};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const PROVENANCE_FILE: &str = "provenance.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "T")]
    pub window: usize,
    pub channels: Vec<String>,
    pub normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    sample_id: SampleId,
    t: usize,
    ch0: f64,
    ch1: f64,
    ch2: f64,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceRow {
    sample_id: SampleId,
    machine: Machine,
    class_label: ClassLabel,
}

pub fn write_dataset(
    dir: &Path,
    samples: &[Sample],
    provenance: &ProvenanceStore,
    meta: &DatasetMeta,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join(SAMPLES_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    for s in samples {
        for (t, row) in s.rows().iter().enumerate() {
            w.serialize(SampleRow {
                sample_id: s.id,
                t,
                ch0: row[0],
                ch1: row[1],
                ch2: row[2],
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(PROVENANCE_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    let mut ids: Vec<_> = provenance.iter().collect();
    ids.sort_by_key(|(id, _)| *id);
    for (id, p) in ids {
        w.serialize(ProvenanceRow {
            sample_id: id,
            machine: p.machine,
            class_label: p.class_label,
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_vec_pretty(meta)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed(format!("{}: {other:?}", path.display())),
    }
}

/// Reads the raw (un-normalized) sample matrix and its metadata. Does not touch
/// `provenance.csv`.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetMeta)> {
    let path = dir.join(META_FILE);
    let meta: DatasetMeta =
        serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;

    let path = dir.join(SAMPLES_FILE);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| csv_io(&path, e))?;
    let mut rows: BTreeMap<SampleId, Vec<Option<[f64; CHANNELS]>>> = BTreeMap::new();
    for rec in rdr.deserialize::<SampleRow>() {
        let r = rec?;
        if r.t >= meta.window {
            return Err(Error::Malformed(format!(
                "sample {} has t = {} beyond window {}",
                r.sample_id, r.t, meta.window
            )));
        }
        let slots = rows
            .entry(r.sample_id)
            .or_insert_with(|| vec![None; meta.window]);
        if slots[r.t].replace([r.ch0, r.ch1, r.ch2]).is_some() {
            return Err(Error::Malformed(format!(
                "duplicate row for sample {} t = {}",
                r.sample_id, r.t
            )));
        }
    }
    let samples = rows
        .into_iter()
        .map(|(id, slots)| {
            let full: Option<Vec<_>> = slots.into_iter().collect();
            full.map(|r| Sample::from_rows(id, &r))
                .ok_or_else(|| Error::Malformed(format!("sample {id} is missing time steps")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(samples)?, meta))
}

/// Loads the dataset and applies global min-max normalization.
pub fn load_normalized(dir: &Path) -> Result<(Dataset, DatasetMeta, Normalization)> {
    let (mut ds, meta) = load_dataset(dir)?;
    let norm = super::normalize_minmax(ds.samples_mut())?;
    Ok((ds, meta, norm))
}

/// Hidden ground truth for oracles and metrics.
pub fn load_provenance(dir: &Path) -> Result<ProvenanceStore> {
    let path = dir.join(PROVENANCE_FILE);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| csv_io(&path, e))?;
    let mut store = ProvenanceStore::new();
    for rec in rdr.deserialize::<ProvenanceRow>() {
        let r = rec?;
        store.insert(
            r.sample_id,
            Provenance {
                machine: r.machine,
                class_label: r.class_label,
            },
        );
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![
            Sample::from_rows(3, &[[0.0, 1.0, 2.0], [0.5, 1.5, 2.5]]),
            Sample::from_rows(7, &[[1.0, 0.0, 2.0], [0.25, 1.0, 3.0]]),
        ];
        let mut prov = ProvenanceStore::new();
        prov.insert(
            3,
            Provenance {
                machine: Machine::S1,
                class_label: ClassLabel::Normal,
            },
        );
        prov.insert(
            7,
            Provenance {
                machine: Machine::L1,
                class_label: ClassLabel::Abnormal,
            },
        );
        let meta = DatasetMeta {
            window: 2,
            channels: vec!["x".into(), "y".into(), "z".into()],
            normalization: Normalization::fit(&samples).unwrap(),
        };
        write_dataset(dir.path(), &samples, &prov, &meta).unwrap();

        let (ds, meta2) = load_dataset(dir.path()).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(ds.samples(), &samples[..]);
        let prov2 = load_provenance(dir.path()).unwrap();
        assert_eq!(prov2.get(7).unwrap().machine, Machine::L1);

        let (norm_ds, _, norm) = load_normalized(dir.path()).unwrap();
        assert_eq!(norm, meta.normalization);
        assert_eq!(norm_ds.get(3).unwrap().channel(0), &[0.0, 0.5]);
    }

    #[test]
    fn missing_directory_is_io_failure() {
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/ads")),
            Err(Error::Io { .. })
        ));
    }
}
