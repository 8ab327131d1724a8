use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{lr_at, TrainConfig};
use super::optimizer::OptimizerState;
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::metrics::EvalReport;
use crate::model::{Checkpoint, FlexGcnModel, ModelParams};
use crate::numerics::Matrix;

const DROPOUT_SALT: u64 = 0x6472_6f70_6f75_7400;

/// One row of the metric stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mpjpe: f64,
    pub val_pa_mpjpe: f64,
}

/// Receives one record per completed epoch.
pub trait MetricSink {
    fn record(&mut self, row: &EpochRecord) -> Result<()>;
}

impl MetricSink for Vec<EpochRecord> {
    fn record(&mut self, row: &EpochRecord) -> Result<()> {
        self.push(row.clone());
        Ok(())
    }
}

/// Discards every record.
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

/// Streams records as CSV with header
/// `epoch,lr,train_loss,val_mpjpe,val_pa_mpjpe`.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(w: W) -> Self {
        Self {
            writer: csv::Writer::from_writer(w),
        }
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer
            .into_inner()
            .map_err(|e| Error::io("<metrics>", e.into_error()))
    }
}

impl<W: Write> MetricSink for CsvSink<W> {
    fn record(&mut self, row: &EpochRecord) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| Error::io("<metrics>", e))
    }
}

/// Snapshot handed to step observers after every optimizer update.
pub struct StepInfo<'a> {
    pub step: usize,
    pub epoch: usize,
    pub batch_loss: f64,
    pub optimizer: &'a OptimizerState,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last step.
    pub model: FlexGcnModel,
    /// Parameters with the lowest validation MPJPE.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_mpjpe: f64,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn best_model(&self) -> Result<FlexGcnModel> {
        FlexGcnModel::from_checkpoint(&self.best)
    }
}

/// Predictions scaled back to millimeters, aggregated over `dataset`.
pub fn evaluate(
    model: &FlexGcnModel,
    dataset: &Dataset,
    target_unit_mm: f64,
) -> Result<EvalReport> {
    let preds = dataset
        .samples
        .iter()
        .map(|s| Ok(model.predict(&s.joints_2d)?.scale(target_unit_mm)))
        .collect::<Result<Vec<Matrix>>>()?;
    EvalReport::from_pairs(
        dataset
            .samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| (&s.joints_3d, p, s.action.as_deref())),
        model.skeleton().root(),
    )
}

pub fn train(
    model: FlexGcnModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    sink: &mut dyn MetricSink,
) -> Result<TrainOutcome> {
    train_observed(model, dataset, cfg, sink, |_| {})
}

/// Mini-batch AMSGrad training with per-epoch validation.
///
/// Batches are reshuffled every epoch from `(seed, epoch)`; each sample's
/// dropout masks come from its own stream, so a run is reproducible from the
/// seed alone. When `val_fraction` is 0 the training set doubles as the
/// validation set.
pub fn train_observed<F>(
    mut model: FlexGcnModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    sink: &mut dyn MetricSink,
    mut on_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&StepInfo<'_>),
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    let n = model.n_joints();
    if let Some(bad) = dataset.samples.iter().find(|s| s.n_joints() != n) {
        return Err(Error::shape("train", (n, 3), bad.joints_3d.shape()));
    }
    let (train_set, mut val_set) = dataset.split_holdout(cfg.val_fraction)?;
    if val_set.is_empty() {
        val_set = train_set.clone();
    }
    let targets: Vec<Matrix> = train_set
        .samples
        .iter()
        .map(|s| s.joints_3d.scale(1.0 / cfg.target_unit_mm))
        .collect();

    let mut params = model.params();
    let mut opt = OptimizerState::new(&params);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut steps = 0usize;
    let mut sample_counter = 0u64;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batches(train_set.len(), cfg.batch_size, cfg.seed, epoch as u64)? {
            if steps >= max_steps {
                break;
            }
            let mut grad_sum: Option<ModelParams> = None;
            let mut batch_loss = 0.0;
            for &i in &batch {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);
                rng.set_stream(sample_counter);
                sample_counter += 1;
                let x = &train_set.samples[i].joints_2d;
                let (l, g) =
                    model.backward_step(x, &targets[i], cfg.alpha, Mode::Train, &mut rng)?;
                batch_loss += l;
                match grad_sum.as_mut() {
                    None => grad_sum = Some(g),
                    Some(acc) => acc.add_scaled(&g, 1.0)?,
                }
            }
            let mut grads = grad_sum.expect("batches are nonempty");
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut params, &grads, lr)?;
            model.set_params(&params)?;
            steps += 1;
            loss_sum += batch_loss;
            seen += batch.len();
            on_step(&StepInfo {
                step: steps,
                epoch,
                batch_loss: batch_loss / batch.len() as f64,
                optimizer: &opt,
            });
        }
        if seen == 0 {
            break;
        }

        let report = evaluate(&model, &val_set, cfg.target_unit_mm)?;
        let row = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            val_mpjpe: report.mpjpe_mm,
            val_pa_mpjpe: report.pa_mpjpe_mm,
        };
        sink.record(&row)?;
        history.push(row);
        if best.as_ref().map_or(true, |(v, _, _)| report.mpjpe_mm < *v) {
            best = Some((report.mpjpe_mm, epoch, model.to_checkpoint()));
        }
        if steps >= max_steps {
            break;
        }
    }

    let (best_val_mpjpe, best_epoch, best) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        best_val_mpjpe,
        history,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, SynthConfig};
    use crate::graph::SkeletonGraph;

    fn tiny() -> (Dataset, TrainConfig, SkeletonGraph) {
        let g = SkeletonGraph::h36m();
        let data = synthesize(&SynthConfig::h36m(12, 5), &g).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            hidden: 8,
            blocks: 1,
            lr0: 0.01,
            ..TrainConfig::default()
        };
        (data, cfg, g)
    }

    #[test]
    fn streams_one_row_per_epoch() {
        let (data, cfg, g) = tiny();
        let mut rows = Vec::new();
        let out = train(cfg.build_model(&g).unwrap(), &data, &cfg, &mut rows).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(out.history, rows);
        // 12 samples, 2 held out, batches of 4
        assert_eq!(out.steps, 9);
        let best = rows
            .iter()
            .map(|r| r.val_mpjpe)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_mpjpe, best);
        let reloaded = out.best_model().unwrap();
        let report = evaluate(
            &reloaded,
            &data.split_holdout(0.1).unwrap().1,
            cfg.target_unit_mm,
        )
        .unwrap();
        assert_eq!(report.mpjpe_mm, best);
    }

    #[test]
    fn max_steps_stops_early() {
        let (data, mut cfg, g) = tiny();
        cfg.max_steps = Some(4);
        let out = train(cfg.build_model(&g).unwrap(), &data, &cfg, &mut NullSink).unwrap();
        assert_eq!(out.steps, 4);
        assert_eq!(out.history.len(), 2);
    }

    #[test]
    fn empty_dataset_rejected() {
        let (_, cfg, g) = tiny();
        let r = train(
            cfg.build_model(&g).unwrap(),
            &Dataset::default(),
            &cfg,
            &mut NullSink,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn csv_sink_header() {
        let mut sink = CsvSink::new(Vec::new());
        sink.record(&EpochRecord {
            epoch: 0,
            lr: 0.5,
            train_loss: 1.0,
            val_mpjpe: 2.0,
            val_pa_mpjpe: 3.0,
        })
        .unwrap();
        let text = String::from_utf8(sink.into_inner().unwrap()).unwrap();
        assert_eq!(
            text,
            "epoch,lr,train_loss,val_mpjpe,val_pa_mpjpe\n0,0.5,1.0,2.0,3.0\n"
        );
    }
}
