use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, train_with, EpochLog, EvalReport, SgdConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::rng::{derive_seed, Rng};
use crate::signal::Dataset;

const INIT_TAG: u64 = 0x696e6974;

/// Model, optimizer and data selection for one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    /// Keep only frames at these SNRs, in both splits. `None` keeps all.
    pub snr_db: Option<Vec<f64>>,
}

impl TrainConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.model.validate()?;
        cfg.sgd.validate()?;
        Ok(cfg)
    }

    /// The dataset as this run sees it.
    pub fn select(&self, ds: &Dataset) -> Result<Dataset> {
        let ds = match &self.snr_db {
            Some(snrs) => ds.restrict_snr(snrs),
            None => ds.clone(),
        };
        if ds.train.is_empty() || ds.test.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "SNR selection {:?} leaves an empty split",
                self.snr_db
            )));
        }
        if ds.num_classes() != self.model.num_classes {
            return Err(Error::InvalidConfig(format!(
                "model has {} classes, dataset has {}",
                self.model.num_classes,
                ds.num_classes()
            )));
        }
        Ok(ds)
    }
}

/// Freshly initialised model for `cfg`, seeded from the optimizer seed.
pub fn init_model(cfg: &TrainConfig) -> Result<Model<f32>> {
    Model::build(
        &cfg.model,
        &mut Rng::new(derive_seed(cfg.sgd.seed, &[INIT_TAG])),
    )
}

/// Initialise and train on the selected training split.
pub fn fit(
    cfg: &TrainConfig,
    ds: &Dataset,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model<f32>, Vec<EpochLog>)> {
    let ds = cfg.select(ds)?;
    let mut model = init_model(cfg)?;
    let history = train_with(&mut model, &ds.train, &cfg.sgd, on_epoch)?;
    Ok((model, history))
}

/// Train, then evaluate on the selected test split.
pub fn run_experiment(
    cfg: &TrainConfig,
    ds: &Dataset,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model<f32>, EvalReport)> {
    let (mut model, history) = fit(cfg, ds, on_epoch)?;
    let selected = cfg.select(ds)?;
    let mut report = evaluate(&mut model, &selected.test, &selected.spec.class_names())?;
    report.loss_history = history;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Operator;

    #[test]
    fn config_file_round_trip_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        let cfg = TrainConfig {
            snr_db: Some(vec![10.0]),
            model: ModelConfig::default().with_operator(Operator::Convolution),
            ..Default::default()
        };
        fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(TrainConfig::from_file(&path).unwrap(), cfg);

        fs::write(&path, r#"{"sgd": {"lr": 0.1}}"#).unwrap();
        assert_eq!(TrainConfig::from_file(&path).unwrap().sgd.lr, 0.1);

        fs::write(&path, r#"{"sgd": {"learning_rate": 0.1}}"#).unwrap();
        assert!(TrainConfig::from_file(&path).is_err());
        fs::write(&path, r#"{"sgd": {"momentum": 1.5}}"#).unwrap();
        assert!(TrainConfig::from_file(&path).is_err());
        fs::write(&path, "not json").unwrap();
        assert!(TrainConfig::from_file(&path).is_err());
    }
}
