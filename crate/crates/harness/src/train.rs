use std::time::Instant;

use log::{debug, info};
use pgps_core::metrics::{fg_voxel_fraction, unique_class_fraction, EpochTiming, IterationRecord, RunTrace};
use pgps_core::sampler::{BatchAddress, Dataset, PatchBatch, Sampler};
use pgps_core::schedule::{build_schedule, CurriculumSchedule, SamplingPolicy};
use pgps_segnet::net::stack_images;
use pgps_segnet::{clip_grad_norm, loss_dice_ce, poly_lr, SegNet, Sgd};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// A run is aborted once its loss exceeds this multiple of the first loss.
pub const DIVERGENCE_FACTOR: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: SegNet,
    pub trace: RunTrace,
    pub schedule: CurriculumSchedule,
}

pub fn run_schedule(cfg: &ExperimentConfig, policy: &SamplingPolicy, fraction: f64) -> Result<CurriculumSchedule> {
    Ok(build_schedule(
        policy,
        &cfg.arch(),
        cfg.target_patch,
        cfg.default_batch,
        cfg.total_epochs,
        cfg.scaled_iterations(fraction),
    )?)
}

/// Flattens a batch into the network input and the matching label vector.
pub fn batch_tensors(batch: &PatchBatch) -> (pgps_segnet::Tensor, Vec<u16>) {
    let size = batch.patch_size();
    let x = stack_images(batch.patches.iter().map(|p| p.image.as_slice()), size);
    let labels = batch.patches.iter().flat_map(|p| p.labels.iter().copied()).collect();
    (x, labels)
}

/// Trains a fresh network on `train` under `policy` for one training-length
/// fraction. The run seed drives both the initialisation and the sampler.
pub fn run_training(
    cfg: &ExperimentConfig,
    train: &Dataset,
    policy: &SamplingPolicy,
    seed: u64,
    fraction: f64,
) -> Result<TrainOutcome> {
    let policy = SamplingPolicy {
        seed,
        ..policy.clone()
    };
    let schedule = run_schedule(cfg, &policy, fraction)?;
    let mut net = SegNet::new(cfg.net_config(train.num_classes, seed))?;
    if cfg.network.zero_head {
        net.zero_head();
    }
    train_with_schedule(cfg, train, &policy, schedule, net)
}

pub fn train_with_schedule(
    cfg: &ExperimentConfig,
    train: &Dataset,
    policy: &SamplingPolicy,
    schedule: CurriculumSchedule,
    mut net: SegNet,
) -> Result<TrainOutcome> {
    let sampler = Sampler::new(train, policy.clone(), cfg.workers)?;
    let opt_spec = &cfg.optimizer;
    let mut opt = Sgd::new(net.num_params(), opt_spec.momentum, opt_spec.nesterov);
    let total = schedule.total_iterations();
    let mut trace = RunTrace::default();
    let mut initial_loss = None;
    let mut global_iter = 0usize;
    let mut epoch = 0u64;

    for (stage_index, stage) in schedule.stages.iter().enumerate() {
        debug!(
            "stage {stage_index}: patch {:?} batch {} for {} epochs",
            stage.patch_size, stage.batch_size, stage.epochs
        );
        for _ in 0..stage.epochs {
            let started = Instant::now();
            for iteration in 0..stage.iterations_per_epoch {
                let addr = BatchAddress {
                    epoch,
                    iteration: iteration as u64,
                };
                let batch = sampler.batch(&schedule, stage_index, addr)?;
                let (x, labels) = batch_tensors(&batch);
                let (logits, cache) = net.forward(&x)?;
                let out = loss_dice_ce(&logits, &labels)?;
                let initial = *initial_loss.get_or_insert(out.loss);
                if !out.loss.is_finite() || out.loss > DIVERGENCE_FACTOR * initial {
                    return Err(Error::Diverged {
                        iteration: global_iter,
                        stage: stage_index,
                        loss: out.loss,
                        initial,
                    });
                }
                let mut grads = net.backward(&cache, &out.grad);
                if let Some(max) = opt_spec.clip_norm {
                    clip_grad_norm(&mut grads, max);
                }
                let lr = poly_lr(opt_spec.base_lr, global_iter, total);
                opt.step(&mut net.params, &grads, lr);
                trace.push(IterationRecord {
                    stage_index,
                    fg_voxel_fraction: fg_voxel_fraction(&batch),
                    unique_class_fraction: unique_class_fraction(&batch, train.num_classes),
                    tensor_voxels: batch.tensor_voxels,
                    loss: out.loss,
                });
                global_iter += 1;
            }
            trace.epochs.push(EpochTiming {
                stage_index,
                seconds: started.elapsed().as_secs_f64(),
            });
            epoch += 1;
        }
    }
    info!(
        "{}: {} iterations, {} iterated voxels, final loss {:.4}",
        schedule.mode,
        trace.records.len(),
        trace.iterated_voxels,
        trace.records.last().map_or(f64::NAN, |r| r.loss)
    );
    Ok(TrainOutcome { net, trace, schedule })
}
