//! End-to-end commands shared by the CLI and the acceptance harness.

use std::io::Write;
use std::path::{Path, PathBuf};

use rotunroll_core::data::{Dataset, Split};
use rotunroll_core::network::{NetworkConfig, UnrolledNetwork};
use rotunroll_core::train::{evaluate, EpochMetrics, Evaluation, Trainer};

use crate::checkpoint::{Checkpoint, TrainState};
use crate::config::{DatasetKind, TrainConfig};
use crate::datasets::{self, Warnings};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,sparsity,stability_margin";

pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.train_loss, m.train_acc, m.test_acc, m.sparsity, m.stability_margin
        ));
    }
    out
}

/// The checkpoint path with its extension replaced by `.csv`.
pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("csv")
}

pub fn load_limited(
    kind: DatasetKind,
    split: Split,
    data_dir: &Path,
    limit: Option<usize>,
) -> Result<(Dataset, Warnings)> {
    let (d, w) = datasets::load(kind, split, data_dir)?;
    Ok((limit.map_or(d.clone(), |n| d.take(n)), w))
}

pub struct TrainOutcome {
    pub net: UnrolledNetwork,
    pub log: Vec<EpochMetrics>,
    pub warnings: Warnings,
}

/// Loads data for `cfg`, trains, then writes the checkpoint to `out` and the
/// metrics next to it. `progress` sees each epoch row as it is produced.
pub fn train_to_files(
    cfg: &TrainConfig,
    data_dir: &Path,
    out: &Path,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net_cfg = NetworkConfig::preset(cfg.model, cfg.dataset.geometry());
    let mut warnings = Vec::new();
    let mut trainer = Trainer::new(net_cfg, cfg.options)?;
    let log = if cfg.options.epochs == 0 {
        Vec::new()
    } else {
        let (train, w1) = load_limited(cfg.dataset, Split::Train, data_dir, cfg.train_limit)?;
        let (test, w2) = load_limited(cfg.eval_dataset(), Split::Test, data_dir, cfg.test_limit)?;
        warnings.extend(w1);
        warnings.extend(w2);
        trainer.run(&train, &test, |row, _| {
            progress(row);
            true
        })?
    };
    let checkpoint = Checkpoint {
        state: TrainState {
            model: Some(cfg.model.name().to_string()),
            dataset: Some(cfg.dataset.name().to_string()),
            options: cfg.options,
            rng_word_pos: trainer.rng_word_pos(),
            epoch: trainer.epoch(),
        },
        net: trainer.into_net(),
    };
    checkpoint.save(out)?;
    let csv = metrics_path(out);
    std::fs::File::create(&csv)
        .and_then(|mut f| f.write_all(metrics_csv(&log).as_bytes()))
        .map_err(|e| Error::io(&csv, e))?;
    Ok(TrainOutcome {
        net: checkpoint.net,
        log,
        warnings,
    })
}

/// Rejects a dataset whose image shape differs from the network input.
pub fn check_geometry(net: &UnrolledNetwork, data: &Dataset) -> Result<()> {
    let want = net.config().input;
    let found = data.image_shape();
    if want != found {
        return Err(Error::Mismatch(format!(
            "network expects {}×{}×{} images, dataset holds {}×{}×{}",
            want[0], want[1], want[2], found[0], found[1], found[2]
        )));
    }
    Ok(())
}

pub fn evaluate_checked(net: &UnrolledNetwork, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    check_geometry(net, data)?;
    if data.is_empty() {
        return Err(Error::MissingData(format!("{} holds no samples", data.provenance())));
    }
    Ok(evaluate(net, data, batch_size)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_columns() {
        let row = EpochMetrics {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.25,
            test_acc: 0.125,
            sparsity: 0.75,
            stability_margin: 1.5,
        };
        assert_eq!(
            metrics_csv(&[row]),
            format!("{METRICS_HEADER}\n1,0.5,0.25,0.125,0.75,1.5\n")
        );
        assert_eq!(metrics_csv(&[]), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn metrics_path_replaces_extension() {
        assert_eq!(metrics_path(Path::new("out/r90.ckpt")), PathBuf::from("out/r90.csv"));
    }
}
