//! On-disk beat directories.
//!
//! A directory holds one `beat_NNNNNN.bin` per beat (little-endian `f64`,
//! the `5 x T` EGM block followed by the `12 x T` ECG block, both row-major),
//! a `beats.toml` header describing shapes, channel names and sample rate,
//! and an `index.csv` mapping beat ids to files and to the train/test split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BeatRecord, Dataset, Split, ECG_CHANNELS, ECG_LEAD_NAMES, EGM_CHANNELS, EGM_CHANNEL_NAMES};
use crate::{Error, Result};

pub const HEADER_FILE: &str = "beats.toml";
pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatDirHeader {
    pub sample_rate_hz: f64,
    pub beat_len: usize,
    pub dtype: String,
    pub egm_shape: [usize; 2],
    pub ecg_shape: [usize; 2],
    pub egm_channels: Vec<String>,
    pub ecg_channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexRow {
    beat_id: u64,
    patient_id: u64,
    split: String,
    file: String,
}

pub fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64_le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(path, "length is not a multiple of 8 bytes"));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn write_beat_dir(dir: &Path, dataset: &Dataset, sample_rate_hz: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let beat_len = dataset.beats.first().map_or(0, |b| b.len);
    let header = BeatDirHeader {
        sample_rate_hz,
        beat_len,
        dtype: "f64le".into(),
        egm_shape: [EGM_CHANNELS, beat_len],
        ecg_shape: [ECG_CHANNELS, beat_len],
        egm_channels: EGM_CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        ecg_channels: ECG_LEAD_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::format(dir.join(HEADER_FILE), e))?;
    fs::write(dir.join(HEADER_FILE), text)?;

    let mut split = vec![""; dataset.beats.len()];
    for &i in &dataset.split.train {
        split[i] = "train";
    }
    for &i in &dataset.split.test {
        split[i] = "test";
    }
    let index_path = dir.join(INDEX_FILE);
    let mut index = csv::Writer::from_path(&index_path).map_err(|e| Error::format(&index_path, e))?;
    for (beat, split) in dataset.beats.iter().zip(split) {
        if beat.len != beat_len {
            return Err(Error::Shape(format!("beat {} has length {}, expected {beat_len}", beat.beat_id, beat.len)));
        }
        let file = format!("beat_{:06}.bin", beat.beat_id);
        let mut values = beat.egm.clone();
        values.extend_from_slice(&beat.ecg);
        write_f64_le(&dir.join(&file), &values)?;
        index
            .serialize(IndexRow { beat_id: beat.beat_id, patient_id: beat.patient_id, split: split.into(), file })
            .map_err(|e| Error::format(&index_path, e))?;
    }
    index.flush()?;
    Ok(())
}

pub fn read_header(dir: &Path) -> Result<BeatDirHeader> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path)?;
    let header: BeatDirHeader = toml::from_str(&text).map_err(|e| Error::format(&path, e))?;
    if header.egm_shape != [EGM_CHANNELS, header.beat_len] || header.ecg_shape != [ECG_CHANNELS, header.beat_len] {
        return Err(Error::format(&path, "channel shapes do not match 5 EGM / 12 ECG channels"));
    }
    if header.dtype != "f64le" {
        return Err(Error::format(&path, format!("unsupported dtype {}", header.dtype)));
    }
    Ok(header)
}

/// Load a beat directory written by [`write_beat_dir`], keeping its split.
pub fn read_beat_dir(dir: &Path) -> Result<Dataset> {
    let header = read_header(dir)?;
    let index_path = dir.join(INDEX_FILE);
    let mut reader = csv::Reader::from_path(&index_path).map_err(|e| Error::format(&index_path, e))?;
    let mut beats = Vec::new();
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for row in reader.deserialize::<IndexRow>() {
        let row = row.map_err(|e| Error::format(&index_path, e))?;
        let path = dir.join(&row.file);
        let values = read_f64_le(&path)?;
        let n_egm = EGM_CHANNELS * header.beat_len;
        if values.len() != n_egm + ECG_CHANNELS * header.beat_len {
            return Err(Error::format(&path, "sample count does not match the header shapes"));
        }
        match row.split.as_str() {
            "train" => split.train.push(beats.len()),
            "test" => split.test.push(beats.len()),
            other => return Err(Error::format(&index_path, format!("unknown split {other:?}"))),
        }
        beats.push(BeatRecord::new(
            row.beat_id,
            row.patient_id,
            header.beat_len,
            values[..n_egm].to_vec(),
            values[n_egm..].to_vec(),
        )?);
    }
    Ok(Dataset { beats, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beat_dir_round_trip() {
        let beats: Vec<BeatRecord> = (0..4)
            .map(|i| {
                let egm = (0..5 * 8).map(|j| (i * 100 + j) as f64 * 0.25).collect();
                let ecg = (0..12 * 8).map(|j| -(j as f64) / (i + 1) as f64).collect();
                BeatRecord::new(i, 9, 8, egm, ecg).unwrap()
            })
            .collect();
        let ds = Dataset::with_random_split(beats, 5).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_beat_dir(tmp.path(), &ds, 1000.0).unwrap();
        let back = read_beat_dir(tmp.path()).unwrap();
        assert_eq!(back.beats, ds.beats);
        let train: Vec<u64> = back.train().map(|b| b.beat_id).collect();
        let mut want: Vec<u64> = ds.train().map(|b| b.beat_id).collect();
        want.sort();
        let mut got = train.clone();
        got.sort();
        assert_eq!(got, want);
        let header = read_header(tmp.path()).unwrap();
        assert_eq!(header.ecg_channels.len(), 12);
        assert_eq!(header.egm_shape, [5, 8]);
    }

    #[test]
    fn truncated_beat_file_is_rejected() {
        let beats: Vec<BeatRecord> =
            (0..2).map(|i| BeatRecord::new(i, 0, 4, vec![1.0; 20], vec![2.0; 48]).unwrap()).collect();
        let ds = Dataset::with_random_split(beats, 1).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_beat_dir(tmp.path(), &ds, 1000.0).unwrap();
        fs::write(tmp.path().join("beat_000001.bin"), [0u8; 16]).unwrap();
        assert!(matches!(read_beat_dir(tmp.path()), Err(Error::Format { .. })));
    }
}
