//! Balanced train/test datasets and their on-disk form.
//!
//! A dataset directory holds `index.json` (spec, frame count, per-frame
//! split, label, SNR and byte offset) and `frames.bin`, the frames back to
//! back as little-endian f32, each `2 x N` with the in-phase row first.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{awgn, frame, modulate, ModulationFormat, Shaping, SignalFrame};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

pub const INDEX_FILE: &str = "index.json";
pub const BLOB_FILE: &str = "frames.bin";
pub const DATASET_FORMAT: &str = "invoamc-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub formats: Vec<ModulationFormat>,
    /// Samples per frame.
    pub n: usize,
    pub frames_per_format_per_snr: usize,
    pub snr_list_db: Vec<f64>,
    pub sps: usize,
    pub rrc_rolloff: f64,
    pub rrc_span_symbols: usize,
    pub seed: u64,
    pub split_fraction: f64,
    pub random_phase: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            formats: ModulationFormat::ALL.to_vec(),
            n: 256,
            frames_per_format_per_snr: 400,
            snr_list_db: vec![-10.0, -6.0, -2.0, 0.0, 2.0, 6.0, 10.0],
            sps: 8,
            rrc_rolloff: 0.35,
            rrc_span_symbols: 8,
            seed: 0,
            split_fraction: 0.8,
            random_phase: true,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.formats.is_empty() {
            return bad("dataset needs at least one format".into());
        }
        for (i, f) in self.formats.iter().enumerate() {
            if self.formats[..i].contains(f) {
                return bad(format!("format {f} listed twice"));
            }
        }
        if self.n == 0 || self.sps == 0 {
            return bad("frame length and samples per symbol must be positive".into());
        }
        if self.frames_per_format_per_snr < 2 {
            return bad("need at least two frames per cell to split".into());
        }
        if self.snr_list_db.is_empty() {
            return bad("SNR list is empty".into());
        }
        if self
            .snr_list_db
            .iter()
            .any(|s| s.is_nan() || *s == f64::NEG_INFINITY)
        {
            return bad("SNR values must be numbers".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!(
                "split_fraction must be in (0, 1), got {}",
                self.split_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.rrc_rolloff) {
            return bad(format!(
                "rrc_rolloff must be in [0, 1], got {}",
                self.rrc_rolloff
            ));
        }
        let (tr, te) = self.cell_split();
        if tr == 0 || te == 0 {
            return bad("split leaves an empty train or test share".into());
        }
        Ok(())
    }

    /// Frames per cell in the train and test splits.
    pub fn cell_split(&self) -> (usize, usize) {
        let n = self.frames_per_format_per_snr;
        let tr = ((n as f64) * self.split_fraction).round() as usize;
        (tr.min(n), n - tr.min(n))
    }

    pub fn class_names(&self) -> Vec<String> {
        self.formats.iter().map(|f| f.name().to_string()).collect()
    }

    fn shaping(&self) -> Shaping {
        Shaping {
            n: self.n,
            sps: self.sps,
            rolloff: self.rrc_rolloff,
            span: self.rrc_span_symbols,
            random_phase: self.random_phase,
        }
    }

    fn symbols_per_frame(&self) -> usize {
        self.n.div_ceil(self.sps) + self.rrc_span_symbols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<SignalFrame>,
    pub test: Vec<SignalFrame>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.spec.formats.len()
    }

    /// Keep only frames whose SNR is in `snrs`, in both splits.
    pub fn restrict_snr(&self, snrs: &[f64]) -> Dataset {
        let keep = |v: &Vec<SignalFrame>| {
            v.iter()
                .filter(|f| snrs.contains(&f.snr_db))
                .cloned()
                .collect()
        };
        Dataset {
            spec: DatasetSpec {
                snr_list_db: self
                    .spec
                    .snr_list_db
                    .iter()
                    .copied()
                    .filter(|s| snrs.contains(s))
                    .collect(),
                ..self.spec.clone()
            },
            train: keep(&self.train),
            test: keep(&self.test),
        }
    }
}

/// One frame: sub-seeded by (seed, format, SNR, index) so the result does not
/// depend on generation order.
fn make_frame(spec: &DatasetSpec, label: usize, snr_db: f64, index: usize) -> Result<SignalFrame> {
    let fmt = spec.formats[label];
    let seed = derive_seed(spec.seed, &[fmt as u64, snr_db.to_bits(), index as u64]);
    let mut rng = Rng::new(seed);
    let s = modulate(fmt, spec.symbols_per_frame(), &mut rng, &spec.shaping())?;
    let x = awgn(&s, snr_db, &mut rng)?;
    frame(&x, spec.n, label, snr_db)
}

/// Generate every (format, SNR) cell and split each one `split_fraction`
/// train / rest test.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n_train, _) = spec.cell_split();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, _) in spec.formats.iter().enumerate() {
        for &snr in &spec.snr_list_db {
            for k in 0..spec.frames_per_format_per_snr {
                let f = make_frame(spec, label, snr, k)?;
                if k < n_train {
                    train.push(f);
                } else {
                    test.push(f);
                }
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        train,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub split: Split,
    pub label: usize,
    pub snr_db: f64,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Index {
    format: String,
    version: u32,
    byte_order: String,
    blob: String,
    blob_bytes: usize,
    spec: DatasetSpec,
    frame_count: usize,
    frames: Vec<FrameRecord>,
}

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut frames = Vec::new();
    let all = ds
        .train
        .iter()
        .map(|f| (Split::Train, f))
        .chain(ds.test.iter().map(|f| (Split::Test, f)));
    for (split, f) in all {
        if f.iq.dims() != [2, ds.spec.n] {
            return Err(Error::InvalidArgument(format!(
                "frame has shape {:?}, dataset expects [2, {}]",
                f.iq.dims(),
                ds.spec.n
            )));
        }
        frames.push(FrameRecord {
            split,
            label: f.label,
            snr_db: f.snr_db,
            offset: bytes.len(),
        });
        for v in f.iq.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let index = Index {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        byte_order: "little-endian f32".into(),
        blob: BLOB_FILE.into(),
        blob_bytes: bytes.len(),
        spec: ds.spec.clone(),
        frame_count: frames.len(),
        frames,
    };
    let blob = dir.join(BLOB_FILE);
    fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let path = dir.join(INDEX_FILE);
    fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: Index =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("bad index: {e}")))?;
    if index.format != DATASET_FORMAT || index.version != DATASET_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported dataset {} v{}", index.format, index.version),
        ));
    }
    if index.frame_count != index.frames.len() {
        return Err(Error::format(&path, "frame count does not match index"));
    }
    let blob = dir.join(&index.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != index.blob_bytes {
        return Err(Error::format(
            &blob,
            format!(
                "blob has {} bytes, index says {}",
                bytes.len(),
                index.blob_bytes
            ),
        ));
    }
    let n = index.spec.n;
    let classes = index.spec.formats.len();
    let frame_bytes = 2 * n * 4;
    let mut ds = Dataset {
        spec: index.spec,
        train: Vec::new(),
        test: Vec::new(),
    };
    for rec in index.frames {
        if rec.label >= classes {
            return Err(Error::format(
                &path,
                format!("label {} out of range", rec.label),
            ));
        }
        let raw = bytes
            .get(rec.offset..rec.offset + frame_bytes)
            .ok_or_else(|| {
                Error::format(&blob, format!("frame at byte {} runs past end", rec.offset))
            })?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let f = SignalFrame {
            iq: Tensor::from_vec(&[2, n], data)?,
            label: rec.label,
            snr_db: rec.snr_db,
        };
        match rec.split {
            Split::Train => ds.train.push(f),
            Split::Test => ds.test.push(f),
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn small() -> DatasetSpec {
        DatasetSpec {
            n: 64,
            frames_per_format_per_snr: 10,
            snr_list_db: vec![-4.0, 0.0, 4.0, 8.0, 12.0],
            seed: 11,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn counts_and_stratification() {
        let spec = DatasetSpec {
            frames_per_format_per_snr: 100,
            ..small()
        };
        let ds = generate_dataset(&spec).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 3000);
        assert_eq!((ds.train.len(), ds.test.len()), (2400, 600));
        let mut cells: HashMap<(usize, u64), (usize, usize)> = HashMap::new();
        for f in &ds.train {
            cells.entry((f.label, f.snr_db.to_bits())).or_default().0 += 1;
        }
        for f in &ds.test {
            cells.entry((f.label, f.snr_db.to_bits())).or_default().1 += 1;
        }
        assert_eq!(cells.len(), 30);
        assert!(cells.values().all(|&c| c == (80, 20)));
        let mut hist = [0usize; 6];
        ds.train.iter().for_each(|f| hist[f.label] += 1);
        assert!(hist.iter().all(|&h| h == 400));
    }

    #[test]
    fn deterministic_and_distinct() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&DatasetSpec {
            seed: 12,
            ..small()
        })
        .unwrap();
        assert_ne!(a.train[0], c.train[0]);
        let mut seen = HashSet::new();
        for f in a.train.iter().chain(&a.test) {
            let key: Vec<u32> = f.iq.data().iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key), "duplicate frame");
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        let ds = generate_dataset(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.spec, ds.spec);
        for (a, b) in ds
            .train
            .iter()
            .chain(&ds.test)
            .zip(back.train.iter().chain(&back.test))
        {
            assert_eq!(a.label, b.label);
            assert_eq!(a.snr_db.to_bits(), b.snr_db.to_bits());
            let ab: Vec<u32> = a.iq.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.iq.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let ds = generate_dataset(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let blob = dir.path().join(BLOB_FILE);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..100]).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            DatasetSpec {
                split_fraction: 1.0,
                ..small()
            },
            DatasetSpec {
                formats: vec![],
                ..small()
            },
            DatasetSpec {
                snr_list_db: vec![],
                ..small()
            },
            DatasetSpec {
                frames_per_format_per_snr: 1,
                ..small()
            },
        ] {
            assert!(generate_dataset(&spec).is_err());
        }
    }

    #[test]
    fn higher_snr_cleaner_frames() {
        // estimate per-frame SNR by regenerating the clean signal for each draw
        let spec = DatasetSpec {
            n: 128,
            snr_list_db: vec![-6.0, 0.0, 6.0],
            frames_per_format_per_snr: 100,
            ..small()
        };
        let mut means = Vec::new();
        for &snr in &spec.snr_list_db {
            let mut acc = 0.0;
            for k in 0..100 {
                let fmt = spec.formats[k % 6];
                let seed = derive_seed(spec.seed, &[fmt as u64, snr.to_bits(), k as u64]);
                let mut rng = Rng::new(seed);
                let s = modulate(fmt, spec.symbols_per_frame(), &mut rng, &spec.shaping()).unwrap();
                let x = awgn(&s, snr, &mut rng).unwrap();
                let noise: Vec<_> = x.iter().zip(&s).map(|(a, b)| a - b).collect();
                acc += 10.0
                    * (super::super::mean_power(&s) / super::super::mean_power(&noise)).log10();
            }
            means.push(acc / 100.0);
        }
        assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    }
}
