//! Batch assembly: foreground-forced and random crops, the four batch
//! construction strategies, mirror augmentation and progressive-resolution
//! batches.
//!
//! Every patch slot draws from its own counter-addressed stream, so a batch
//! depends only on `(seed, epoch, iteration)` and never on how many workers
//! assembled it.

use log::debug;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{Domain, RngStream};
use crate::schedule::{fg_patch_count, BatchStrategy, CurriculumSchedule, SamplingPolicy, StagePlan};
use crate::volume::{crop, resample_image_trilinear, resample_labels_nearest, voxel_count, Patch, PatchKind, Shape3, Volume};

/// A volume together with the voxel positions of every foreground class.
#[derive(Debug, Clone)]
pub struct IndexedVolume {
    pub volume: Volume,
    /// `class_voxels[c]` lists linear indices of class `c` voxels; entry 0 is empty.
    class_voxels: Vec<Vec<u32>>,
}

impl IndexedVolume {
    pub fn new(volume: Volume) -> Self {
        let mut class_voxels = vec![Vec::new(); volume.num_classes as usize];
        for (i, &l) in volume.labels.iter().enumerate() {
            if l != 0 {
                class_voxels[l as usize].push(i as u32);
            }
        }
        Self { volume, class_voxels }
    }

    pub fn present_foreground(&self) -> Vec<u16> {
        (1..self.class_voxels.len())
            .filter(|&c| !self.class_voxels[c].is_empty())
            .map(|c| c as u16)
            .collect()
    }
}

/// Read-only training dataset shared by all workers.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub volumes: Vec<IndexedVolume>,
    pub num_classes: u16,
}

impl Dataset {
    pub fn new(volumes: Vec<Volume>) -> Result<Self> {
        let num_classes = volumes.first().ok_or(Error::EmptyDataset)?.num_classes;
        if volumes.iter().any(|v| v.num_classes != num_classes) {
            return Err(Error::Format("volumes disagree on num_classes".into()));
        }
        Ok(Self {
            volumes: volumes.into_iter().map(IndexedVolume::new).collect(),
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

/// Where a batch sits in training; selects its random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BatchAddress {
    pub epoch: u64,
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub patches: Vec<Patch>,
    pub stage_index: usize,
    pub tensor_voxels: u64,
    /// Number of slots that requested a foreground patch.
    pub fg_requested: usize,
}

impl PatchBatch {
    pub fn patch_size(&self) -> Shape3 {
        self.patches.first().map(|p| p.size).unwrap_or([0; 3])
    }

    pub fn fg_patches(&self) -> usize {
        self.patches
            .iter()
            .filter(|p| matches!(p.kind, PatchKind::Foreground(_)))
            .count()
    }
}

fn patch_stream(seed: u64, addr: BatchAddress, slot: usize) -> RngStream {
    RngStream::new(seed, Domain::Patch, [addr.epoch, addr.iteration, slot as u64])
}

/// Valid origin range upper bound per axis (0 when the patch overhangs).
fn max_origin(dims: Shape3, size: Shape3) -> Shape3 {
    std::array::from_fn(|a| dims[a].saturating_sub(size[a]))
}

/// Crop a patch centred on a uniformly chosen voxel of a uniformly chosen
/// foreground class present in the volume.
pub fn sample_fg_patch(source: &IndexedVolume, patch_size: Shape3, rng: &mut RngStream) -> Result<Patch> {
    let classes = source.present_foreground();
    if classes.is_empty() {
        return Err(Error::NoForeground);
    }
    let class = classes[rng.below(classes.len())];
    let voxels = &source.class_voxels[class as usize];
    let idx = voxels[rng.below(voxels.len())] as usize;
    let dims = source.volume.dims;
    let center = [idx / (dims[1] * dims[2]), (idx / dims[2]) % dims[1], idx % dims[2]];
    let hi = max_origin(dims, patch_size);
    let origin: Shape3 = std::array::from_fn(|a| center[a].saturating_sub(patch_size[a] / 2).min(hi[a]));
    let mut patch = crop(&source.volume, origin, patch_size)?;
    patch.kind = PatchKind::Foreground(class);
    Ok(patch)
}

/// Crop at an origin drawn uniformly over all in-bounds origins.
pub fn sample_random_patch(volume: &Volume, patch_size: Shape3, rng: &mut RngStream) -> Result<Patch> {
    let hi = max_origin(volume.dims, patch_size);
    let origin: Shape3 = std::array::from_fn(|a| rng.below(hi[a] + 1));
    crop(volume, origin, patch_size)
}

#[derive(Debug, Clone, Copy)]
struct SlotJob {
    patient: usize,
    foreground: bool,
}

fn distinct_pair(n: usize, rng: &mut RngStream) -> (usize, usize) {
    let a = rng.below(n);
    let mut b = rng.below(n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

fn plan_slots(
    strategy: BatchStrategy,
    n: usize,
    batch: usize,
    fg: usize,
    rng: &mut RngStream,
) -> Result<Vec<SlotJob>> {
    let random = batch - fg;
    let needs_two = matches!(strategy, BatchStrategy::SplitCrop | BatchStrategy::MultiCrop);
    if needs_two && n < 2 {
        return Err(Error::DatasetTooSmall {
            strategy: strategy.name(),
            needed: 2,
            got: n,
        });
    }
    let job = |patient, foreground| SlotJob { patient, foreground };
    let jobs = match strategy {
        BatchStrategy::SplitCrop => {
            let (a, b) = distinct_pair(n, rng);
            let mut jobs = vec![job(a, true); fg];
            jobs.extend(std::iter::repeat_n(job(b, false), random));
            jobs
        }
        BatchStrategy::MultiCrop => {
            let (a, b) = distinct_pair(n, rng);
            let (fg_a, rnd_a) = (fg.div_ceil(2), random.div_ceil(2));
            let mut jobs = vec![job(a, true); fg_a];
            jobs.extend(std::iter::repeat_n(job(b, true), fg - fg_a));
            jobs.extend(std::iter::repeat_n(job(a, false), rnd_a));
            jobs.extend(std::iter::repeat_n(job(b, false), random - rnd_a));
            jobs
        }
        BatchStrategy::SingleVolume => {
            let a = rng.below(n);
            let mut jobs = vec![job(a, true); fg];
            jobs.extend(std::iter::repeat_n(job(a, false), random));
            jobs
        }
        BatchStrategy::SingleCrop => {
            let patients: Vec<usize> = if n >= batch {
                // partial Fisher-Yates
                let mut ids: Vec<usize> = (0..n).collect();
                for i in 0..batch {
                    let j = i + rng.below(n - i);
                    ids.swap(i, j);
                }
                ids.truncate(batch);
                ids
            } else {
                (0..batch).map(|_| rng.below(n)).collect()
            };
            patients
                .into_iter()
                .enumerate()
                .map(|(slot, p)| job(p, slot < fg))
                .collect()
        }
    };
    Ok(jobs)
}

fn fill_slot(dataset: &Dataset, job: SlotJob, size: Shape3, seed: u64, addr: BatchAddress, slot: usize) -> Result<Patch> {
    let source = &dataset.volumes[job.patient];
    let mut rng = patch_stream(seed, addr, slot);
    let mut patch = if job.foreground {
        match sample_fg_patch(source, size, &mut rng) {
            Err(Error::NoForeground) => {
                debug!("patient {} has no foreground; drawing a random patch", job.patient);
                sample_random_patch(&source.volume, size, &mut rng)?
            }
            other => other?,
        }
    } else {
        sample_random_patch(&source.volume, size, &mut rng)?
    };
    patch.patient_id = job.patient;
    Ok(patch)
}

/// Crop a batch of `batch` patches of `size`. `pool` runs slots in parallel.
fn assemble_crops(
    strategy: BatchStrategy,
    dataset: &Dataset,
    size: Shape3,
    batch: usize,
    policy: &SamplingPolicy,
    addr: BatchAddress,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(Vec<Patch>, usize)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fg = fg_patch_count(policy.fg_ratio_rule, batch);
    let mut rng = RngStream::new(policy.seed, Domain::Batch, [addr.epoch, addr.iteration, 0]);
    let jobs = plan_slots(strategy, dataset.len(), batch, fg, &mut rng)?;
    let fill = |(slot, job): (usize, &SlotJob)| fill_slot(dataset, *job, size, policy.seed, addr, slot);
    let patches = match pool {
        Some(pool) => pool.install(|| jobs.par_iter().enumerate().map(fill).collect::<Result<Vec<_>>>())?,
        None => jobs.iter().enumerate().map(fill).collect::<Result<Vec<_>>>()?,
    };
    Ok((patches, fg))
}

/// Assemble one training batch for `stage` by cropping at the stage patch size.
pub fn assemble_batch(
    strategy: BatchStrategy,
    dataset: &Dataset,
    stage: &StagePlan,
    stage_index: usize,
    policy: &SamplingPolicy,
    addr: BatchAddress,
) -> Result<PatchBatch> {
    assemble_batch_in(strategy, dataset, stage, stage_index, policy, addr, None)
}

pub fn assemble_batch_in(
    strategy: BatchStrategy,
    dataset: &Dataset,
    stage: &StagePlan,
    stage_index: usize,
    policy: &SamplingPolicy,
    addr: BatchAddress,
    pool: Option<&rayon::ThreadPool>,
) -> Result<PatchBatch> {
    let (patches, fg_requested) = assemble_crops(
        strategy,
        dataset,
        stage.patch_size,
        stage.batch_size,
        policy,
        addr,
        pool,
    )?;
    Ok(PatchBatch {
        tensor_voxels: stage.tensor_voxels(),
        patches,
        stage_index,
        fg_requested,
    })
}

/// Progressive-resolution batch: crop at `target`, then resample every patch
/// down (or up) to the stage patch size.
pub fn assemble_progres_batch(
    dataset: &Dataset,
    stage: &StagePlan,
    stage_index: usize,
    target: Shape3,
    policy: &SamplingPolicy,
    addr: BatchAddress,
    pool: Option<&rayon::ThreadPool>,
) -> Result<PatchBatch> {
    let (mut patches, fg_requested) = assemble_crops(
        policy.batch_strategy,
        dataset,
        target,
        stage.batch_size,
        policy,
        addr,
        pool,
    )?;
    let size = stage.patch_size;
    if size != target {
        let resample = |p: &mut Patch| -> Result<()> {
            p.image = resample_image_trilinear(&p.image, p.size, size)?;
            p.labels = resample_labels_nearest(&p.labels, p.size, size)?;
            p.size = size;
            Ok(())
        };
        match pool {
            Some(pool) => pool.install(|| patches.par_iter_mut().try_for_each(resample))?,
            None => patches.iter_mut().try_for_each(resample)?,
        }
    }
    Ok(PatchBatch {
        tensor_voxels: stage.tensor_voxels(),
        patches,
        stage_index,
        fg_requested,
    })
}

/// Flip each patch along each enabled axis with probability one half.
pub fn mirror_augment(mut batch: PatchBatch, mirror_axes: &[usize], seed: u64, addr: BatchAddress) -> PatchBatch {
    if mirror_axes.is_empty() {
        return batch;
    }
    for (slot, patch) in batch.patches.iter_mut().enumerate() {
        let mut rng = RngStream::new(seed, Domain::Mirror, [addr.epoch, addr.iteration, slot as u64]);
        for axis in 0..3 {
            // always draw, so enabling one axis does not shift the others
            let flip = rng.coin();
            if flip && mirror_axes.contains(&axis) {
                patch.flip(axis);
            }
        }
    }
    batch
}

/// Produces the training batches of a schedule, optionally with several
/// assembly workers.
pub struct Sampler<'a> {
    pub dataset: &'a Dataset,
    pub policy: SamplingPolicy,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Sampler<'a> {
    pub fn new(dataset: &'a Dataset, policy: SamplingPolicy, workers: usize) -> Result<Self> {
        policy.validate()?;
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Policy(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { dataset, policy, pool })
    }

    /// The augmented batch for `(stage, epoch, iteration)` of `schedule`.
    pub fn batch(&self, schedule: &CurriculumSchedule, stage_index: usize, addr: BatchAddress) -> Result<PatchBatch> {
        let stage = &schedule.stages[stage_index];
        let batch = if schedule.crop_size(stage_index) != stage.patch_size {
            assemble_progres_batch(
                self.dataset,
                stage,
                stage_index,
                schedule.target_patch,
                &self.policy,
                addr,
                self.pool.as_ref(),
            )?
        } else {
            assemble_batch_in(
                self.policy.batch_strategy,
                self.dataset,
                stage,
                stage_index,
                &self.policy,
                addr,
                self.pool.as_ref(),
            )?
        };
        Ok(mirror_augment(batch, &self.policy.mirror_axes, self.policy.seed, addr))
    }
}

/// Voxel count of a batch tensor.
pub fn batch_voxels(batch: &PatchBatch) -> usize {
    batch.patches.iter().map(|p| voxel_count(p.size)).sum()
}
