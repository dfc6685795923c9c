//! Model files.
//!
//! Layout: the magic bytes `PITR`, a little-endian `u32` format version, a
//! little-endian `u64` payload length, then a JSON payload. The payload is
//! tagged by `content` and holds either a full `ItrModel` (variant, fitted
//! state, score spec, covariate encoding) or a bare forest with its config.
//! Floats are written with round-trip precision, so a reloaded model predicts
//! bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestConfig, RandomForest};
use crate::itr::{Estimator, ItrModel};
use crate::learner::ProbabilisticClassifier;

pub const MAGIC: [u8; 4] = *b"PITR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "content", rename_all = "snake_case")]
pub enum StoredModel {
    ItrModel(ItrModel),
    Forest { config: ForestConfig, forest: RandomForest },
}

impl StoredModel {
    fn validate(&self) -> Result<()> {
        match self {
            StoredModel::ItrModel(m) => validate_itr(m),
            StoredModel::Forest { forest, .. } => forest.validate(),
        }
    }
}

fn validate_itr(model: &ItrModel) -> Result<()> {
    let features = 2 * model.dim();
    let check = |f: &RandomForest| -> Result<()> {
        f.validate()?;
        if f.n_features() != features {
            return Err(Error::ModelFormat(format!(
                "forest expects {} features but the encoding yields {features}",
                f.n_features()
            )));
        }
        Ok(())
    };
    match model.estimator() {
        Estimator::Knn { model: knn } => {
            if knn.data().dim() != model.dim() {
                return Err(Error::ModelFormat("kNN data dimension differs from the encoding".into()));
            }
        }
        Estimator::FullPairs { forest, .. } => check(forest)?,
        Estimator::Bagged { ensemble, .. } => {
            if ensemble.learners.is_empty() || ensemble.learners.len() != ensemble.sizes.len() {
                return Err(Error::ModelFormat("bagged model has no learners".into()));
            }
            ensemble.learners.iter().try_for_each(check)?;
        }
    }
    Ok(())
}

pub fn write_stored<W: Write>(model: &StoredModel, mut writer: W) -> Result<()> {
    let payload = serde_json::to_vec(model)?;
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    writer
        .write_all(&header)
        .and_then(|_| writer.write_all(&payload))
        .and_then(|_| writer.flush())
        .map_err(|e| Error::io("writing model", e))
}

pub fn read_stored<R: Read>(mut reader: R) -> Result<StoredModel> {
    let mut header = [0u8; 16];
    reader.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::ModelFormat("file too short for a model header".into()),
        _ => Error::io("reading model", e),
    })?;
    if header[..4] != MAGIC {
        return Err(Error::ModelFormat("missing PITR magic bytes".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let mut payload = Vec::new();
    reader
        .take(len)
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("reading model", e))?;
    if payload.len() as u64 != len {
        return Err(Error::ModelFormat(format!(
            "payload truncated: expected {len} bytes, found {}",
            payload.len()
        )));
    }
    let model: StoredModel =
        serde_json::from_slice(&payload).map_err(|e| Error::ModelFormat(format!("bad payload: {e}")))?;
    model.validate()?;
    Ok(model)
}

pub fn write_model<W: Write>(model: &ItrModel, writer: W) -> Result<()> {
    write_stored(&StoredModel::ItrModel(model.clone()), writer)
}

pub fn read_model<R: Read>(reader: R) -> Result<ItrModel> {
    match read_stored(reader)? {
        StoredModel::ItrModel(m) => Ok(m),
        StoredModel::Forest { .. } => Err(Error::ModelFormat(
            "file holds a bare forest, not a treatment rule".into(),
        )),
    }
}

pub fn save_model(model: &ItrModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_model(model, BufWriter::new(f))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ItrModel> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_model(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrialDataset;
    use crate::forest::fit_forest;
    use crate::itr::{fit_bagged, fit_full_pairs, fit_knn, BaggingConfig};
    use crate::knn::KnnConfig;
    use crate::score::{PriorityLevel, Score, ScoreSpec};

    fn spec() -> ScoreSpec {
        ScoreSpec::new(vec![PriorityLevel::binary()]).unwrap()
    }

    fn data() -> TrialDataset {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.37, (i % 3) as f64]).collect();
        let ys: Vec<Vec<f64>> = (0..12).map(|i| vec![(i % 2) as f64]).collect();
        let vs: Vec<Vec<f64>> = (0..12).map(|i| vec![((i + 1) % 3 == 0) as u8 as f64]).collect();
        TrialDataset::from_arrays(xs.clone(), ys, xs, vs).unwrap()
    }

    fn round_trip(model: &ItrModel) -> ItrModel {
        let mut buf = Vec::new();
        write_model(model, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"PITR");
        read_model(buf.as_slice()).unwrap()
    }

    #[test]
    fn every_variant_round_trips() {
        let forest = ForestConfig { n_trees: 4, min_leaf: 1, seed: 3, ..Default::default() };
        let models = [
            fit_knn(&data(), &spec(), KnnConfig { c: 3, e: 4, metric: Default::default() }).unwrap(),
            fit_full_pairs(&data(), &spec(), &forest).unwrap(),
            fit_bagged(&data(), &spec(), &BaggingConfig { bags: 3, q: Some(0.8), seed: 1 }, &forest).unwrap(),
        ];
        for m in &models {
            let back = round_trip(m);
            assert_eq!(&back, m);
            for x in [[0.1, 0.0], [2.3, 1.0], [-7.0, 2.0]] {
                assert_eq!(back.ipb_encoded(&x).unwrap().to_bits(), m.ipb_encoded(&x).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn bare_forest_round_trips() {
        let feats = vec![vec![0.1, 0.2], vec![0.5, 0.9], vec![1.0, 0.0]];
        let labels = vec![Score::Favorable, Score::Neutral, Score::Unfavorable];
        let config = ForestConfig { n_trees: 3, min_leaf: 1, ..Default::default() };
        let forest = fit_forest(&config, &feats, &labels).unwrap();
        let stored = StoredModel::Forest { config, forest };
        let mut buf = Vec::new();
        write_stored(&stored, &mut buf).unwrap();
        assert_eq!(read_stored(buf.as_slice()).unwrap(), stored);
        assert!(read_model(buf.as_slice()).is_err());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = fit_knn(&data(), &spec(), KnnConfig { c: 1, e: 1, metric: Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_model(bad_magic.as_slice()), Err(Error::ModelFormat(_))));

        let mut bad_version = buf.clone();
        bad_version[4] = 9;
        assert!(matches!(read_model(bad_version.as_slice()), Err(Error::ModelFormat(_))));

        let truncated = &buf[..buf.len() - 5];
        assert!(matches!(read_model(truncated), Err(Error::ModelFormat(_))));
        assert!(matches!(read_model(&buf[..7]), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pitr");
        let m = fit_knn(&data(), &spec(), KnnConfig { c: 2, e: 2, metric: Default::default() }).unwrap();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        assert!(load_model(dir.path().join("missing")).is_err());
    }
}
