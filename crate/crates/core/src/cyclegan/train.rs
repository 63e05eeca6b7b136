//! The training loop: per batch, one discriminator step then one generator
//! step, with seeded shuffling, full loss history, periodic checkpoints,
//! and a moving-average convergence stop.
//!
//! Determinism: every random choice flows through per-epoch substreams of
//! the config seed, and all floating-point reductions run in a fixed order,
//! so (dataset, config, seed) pins the whole trajectory bit-for-bit. Epoch
//! substreams also make resumed runs identical to uninterrupted ones.

use super::{phrases_to_batch, CycleGan, GanError, TrainingConfig};
use crate::dataset::LabeledDataset;
use crate::neural::Tensor;
use crate::rng::SeedRng;
use std::io::Write;
use std::path::Path;

type Result<T> = std::result::Result<T, GanError>;

/// Loss components of one batch, as recorded in the history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub batch: usize,
    pub g_total: f64,
    pub adv_ab: f64,
    pub adv_ba: f64,
    pub cyc_aba: f64,
    pub cyc_bab: f64,
    pub mixed_ab: f64,
    pub mixed_ba: f64,
    pub d_total: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub d_a_mixed: f64,
    pub d_b_mixed: f64,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str = "epoch,batch,g_total,adv_ab,adv_ba,cyc_aba,cyc_bab,\
                                          mixed_ab,mixed_ba,d_total,d_a,d_b,d_a_mixed,d_b_mixed";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.batch,
            self.g_total,
            self.adv_ab,
            self.adv_ba,
            self.cyc_aba,
            self.cyc_bab,
            self.mixed_ab,
            self.mixed_ba,
            self.d_total,
            self.d_a,
            self.d_b,
            self.d_a_mixed,
            self.d_b_mixed
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainingHistory {
    pub rows: Vec<HistoryRow>,
    /// Epoch the moving-average stop fired at, if it did.
    pub converged_at_epoch: Option<usize>,
    /// Epochs actually run in this call.
    pub epochs_run: usize,
}

impl TrainingHistory {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", HistoryRow::CSV_HEADER)?;
        for row in &self.rows {
            writeln!(w, "{}", row.to_csv_line())?;
        }
        Ok(())
    }

    /// Mean generator total per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<(usize, f64)> {
        let mut means: Vec<(usize, f64, usize)> = Vec::new();
        for row in &self.rows {
            match means.last_mut() {
                Some((e, sum, n)) if *e == row.epoch => {
                    *sum += row.g_total;
                    *n += 1;
                }
                _ => means.push((row.epoch, row.g_total, 1)),
            }
        }
        means
            .into_iter()
            .map(|(e, sum, n)| (e, sum / n as f64))
            .collect()
    }
}

/// Observer for progress reporting; methods default to no-ops.
pub trait ProgressSink {
    fn on_batch(&mut self, _row: &HistoryRow) {}
    fn on_epoch(&mut self, _epoch: usize, _mean_g: f64, _mean_d: f64) {}
    fn on_checkpoint(&mut self, _path: &Path) {}
    fn on_converged(&mut self, _epoch: usize) {}
}

/// Sink that ignores everything.
pub struct NullSink;

impl ProgressSink for NullSink {}

/// Convergence window (epochs) for the moving-average stop.
const CONVERGENCE_WINDOW: usize = 10;
/// Relative change threshold between consecutive window means.
const CONVERGENCE_EPS: f64 = 1e-4;

/// Train in place for `cfg.epochs` epochs (or until converged), starting the
/// epoch counter at `start_epoch` so resumed runs share the seed schedule.
///
/// Each batch runs the discriminator step first, then the generator step;
/// checkpoints are written to `checkpoint_dir` every `checkpoint_every`
/// epochs plus a final `latest.mstc`.
pub fn train<S: ProgressSink>(
    model: &mut CycleGan<f32>,
    dataset: &LabeledDataset,
    cfg: &TrainingConfig,
    start_epoch: usize,
    checkpoint_dir: Option<&Path>,
    sink: &mut S,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    let n_a = dataset.negative.len();
    let n_b = dataset.positive.len();
    let n_m = dataset.mixed_pool.len();
    let batches = n_a.min(n_b) / cfg.batch_size;
    if batches == 0 || n_m == 0 {
        return Err(GanError::EmptyDataset);
    }

    let mut history = TrainingHistory::default();
    let mut epoch_means: Vec<f64> = Vec::new();

    for epoch in start_epoch..start_epoch + cfg.epochs {
        let mut rng = SeedRng::substream(cfg.seed, epoch as u64);
        let mut idx_a: Vec<usize> = (0..n_a).collect();
        let mut idx_b: Vec<usize> = (0..n_b).collect();
        let mut idx_m: Vec<usize> = (0..n_m).collect();
        rng.shuffle(&mut idx_a);
        rng.shuffle(&mut idx_b);
        rng.shuffle(&mut idx_m);

        let mut g_sum = 0.0;
        let mut d_sum = 0.0;
        for batch in 0..batches {
            let lo = batch * cfg.batch_size;
            let batch_a = gather_batch(dataset, Domain::Negative, &idx_a[lo..lo + cfg.batch_size])?;
            let batch_b = gather_batch(dataset, Domain::Positive, &idx_b[lo..lo + cfg.batch_size])?;
            let m_idx: Vec<usize> = (0..cfg.batch_size)
                .map(|i| idx_m[(lo + i) % n_m])
                .collect();
            let batch_m = gather_batch(dataset, Domain::Mixed, &m_idx)?;

            // Discriminator step.
            model.d_a.zero_grad();
            model.d_b.zero_grad();
            model.d_a_m.zero_grad();
            model.d_b_m.zero_grad();
            let d_losses =
                model.discriminator_losses(&batch_a, &batch_b, &batch_m, cfg.gamma_mixed)?;
            if let Some(component) = d_losses.first_non_finite() {
                return Err(GanError::NonFiniteLoss {
                    component: component.to_string(),
                    epoch,
                    batch,
                });
            }
            step_network(&mut model.d_a, &mut model.opt_d_a)?;
            step_network(&mut model.d_b, &mut model.opt_d_b)?;
            step_network(&mut model.d_a_m, &mut model.opt_d_a_m)?;
            step_network(&mut model.d_b_m, &mut model.opt_d_b_m)?;

            // Generator step against the freshly updated discriminators.
            model.g_ab.zero_grad();
            model.g_ba.zero_grad();
            let g_losses =
                model.generator_losses(&batch_a, &batch_b, cfg.lambda_cycle, cfg.gamma_mixed)?;
            if let Some(component) = g_losses.first_non_finite() {
                return Err(GanError::NonFiniteLoss {
                    component: component.to_string(),
                    epoch,
                    batch,
                });
            }
            step_generator(&mut model.g_ab, &mut model.opt_g_ab)?;
            step_generator(&mut model.g_ba, &mut model.opt_g_ba)?;

            let row = HistoryRow {
                epoch,
                batch,
                g_total: g_losses.total,
                adv_ab: g_losses.adv_ab,
                adv_ba: g_losses.adv_ba,
                cyc_aba: g_losses.cyc_aba,
                cyc_bab: g_losses.cyc_bab,
                mixed_ab: g_losses.mixed_ab,
                mixed_ba: g_losses.mixed_ba,
                d_total: d_losses.total,
                d_a: d_losses.d_a,
                d_b: d_losses.d_b,
                d_a_mixed: d_losses.d_a_mixed,
                d_b_mixed: d_losses.d_b_mixed,
            };
            g_sum += row.g_total;
            d_sum += row.d_total;
            sink.on_batch(&row);
            history.rows.push(row);
        }

        let mean_g = g_sum / batches as f64;
        let mean_d = d_sum / batches as f64;
        epoch_means.push(mean_g);
        history.epochs_run += 1;
        sink.on_epoch(epoch, mean_g, mean_d);

        let completed = epoch + 1;
        if let Some(dir) = checkpoint_dir {
            if completed % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("checkpoint_epoch_{completed:04}.mstc"));
                super::save_checkpoint_with_progress(model, cfg, completed as u64, &path)?;
                sink.on_checkpoint(&path);
            }
        }

        if converged(&epoch_means) {
            history.converged_at_epoch = Some(epoch);
            sink.on_converged(epoch);
            break;
        }
    }

    if let Some(dir) = checkpoint_dir {
        let completed = start_epoch + history.epochs_run;
        let path = dir.join("latest.mstc");
        super::save_checkpoint_with_progress(model, cfg, completed as u64, &path)?;
        sink.on_checkpoint(&path);
    }
    Ok(history)
}

/// Moving-average stop: the mean generator loss over the last
/// `CONVERGENCE_WINDOW` epochs moved by less than `CONVERGENCE_EPS`
/// relative to the previous window position.
fn converged(epoch_means: &[f64]) -> bool {
    let w = CONVERGENCE_WINDOW;
    let n = epoch_means.len();
    if n < w + 1 {
        return false;
    }
    let ma_now: f64 = epoch_means[n - w..].iter().sum::<f64>() / w as f64;
    let ma_prev: f64 = epoch_means[n - w - 1..n - 1].iter().sum::<f64>() / w as f64;
    (ma_now - ma_prev).abs() / ma_prev.abs().max(1e-12) < CONVERGENCE_EPS
}

enum Domain {
    Negative,
    Positive,
    Mixed,
}

fn gather_batch(
    dataset: &LabeledDataset,
    domain: Domain,
    indices: &[usize],
) -> Result<Tensor<f32>> {
    let phrases: Vec<&crate::pianoroll::PianoRollPhrase> = match domain {
        Domain::Negative => indices
            .iter()
            .map(|&i| &dataset.negative[i].phrase)
            .collect(),
        Domain::Positive => indices
            .iter()
            .map(|&i| &dataset.positive[i].phrase)
            .collect(),
        Domain::Mixed => indices.iter().map(|&i| &dataset.mixed_pool[i]).collect(),
    };
    phrases_to_batch(&phrases)
}

fn step_generator(
    g: &mut super::Generator<f32>,
    opt: &mut crate::neural::AdamState<f32>,
) -> Result<()> {
    let mut params: Vec<&mut crate::neural::Param<f32>> =
        g.params_mut().into_iter().map(|(_, p)| p).collect();
    opt.step(&mut params)?;
    Ok(())
}

fn step_network(
    d: &mut super::Discriminator<f32>,
    opt: &mut crate::neural::AdamState<f32>,
) -> Result<()> {
    let mut params: Vec<&mut crate::neural::Param<f32>> =
        d.params_mut().into_iter().map(|(_, p)| p).collect();
    opt.step(&mut params)?;
    Ok(())
}
