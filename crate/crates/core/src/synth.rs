//! Deterministic synthetic segmentation datasets.
//!
//! Each volume holds ellipsoidal objects rasterized class by class (higher
//! class ids overwrite lower ones) over a noisy background. Volumes are
//! generated independently from their own random stream, so the dataset is
//! identical however the work is split across threads.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, RngStream};
use crate::volume::{linear_index, voxel_count, Shape3, Volume};

fn default_ellipticity() -> f64 {
    0.25
}

fn default_contrast() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_volumes: usize,
    /// Inclusive per-axis range of volume dims.
    pub dims_min: Shape3,
    pub dims_max: Shape3,
    /// Including background.
    pub num_classes: u16,
    /// Inclusive range of objects per foreground class per volume.
    pub objects_per_class: (usize, usize),
    /// Inclusive radius range (voxels) for each foreground class, index 0 = class 1.
    pub radius: Vec<(f64, f64)>,
    /// When set, the radius of class 1 is derived so that its expected voxel
    /// frequency matches this value; class 1 should be the smallest class.
    #[serde(default)]
    pub smallest_class_frequency: Option<f64>,
    /// Class pairs `(lower, upper)` that share an intensity and are told apart
    /// only by lying in the lower or upper half of axis 2.
    #[serde(default)]
    pub directional_pairs: Vec<(u16, u16)>,
    /// Relative semi-axis jitter; 0 gives balls.
    #[serde(default = "default_ellipticity")]
    pub ellipticity: f64,
    /// Intensity step between consecutive class means.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn object_radius_range(&self, class: u16) -> (f64, f64) {
        if class == 1 {
            if let Some(f) = self.smallest_class_frequency {
                let r = self.radius_for_frequency(f);
                return (r, r);
            }
        }
        self.radius[class as usize - 1]
    }

    /// Ball radius whose expected total volume over the mean object count
    /// equals `freq` of the mean volume.
    fn radius_for_frequency(&self, freq: f64) -> f64 {
        let mean_vox: f64 = (0..3)
            .map(|a| (self.dims_min[a] + self.dims_max[a]) as f64 / 2.0)
            .product();
        let objects = (self.objects_per_class.0 + self.objects_per_class.1) as f64 / 2.0;
        (3.0 * freq * mean_vox / (4.0 * PI * objects.max(1.0))).cbrt()
    }

    fn side_of(&self, class: u16) -> Option<bool> {
        self.directional_pairs.iter().find_map(|&(lo, hi)| {
            if class == lo {
                Some(false)
            } else if class == hi {
                Some(true)
            } else {
                None
            }
        })
    }

    fn intensity(&self, class: u16) -> f64 {
        let base = self
            .directional_pairs
            .iter()
            .find(|&&(_, hi)| hi == class)
            .map(|&(lo, _)| lo)
            .unwrap_or(class);
        base as f64 * self.contrast
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.num_volumes == 0 {
            return bad("num_volumes must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if (0..3).any(|a| self.dims_min[a] == 0 || self.dims_min[a] > self.dims_max[a]) {
            return bad(format!("bad dims range {:?}..{:?}", self.dims_min, self.dims_max));
        }
        if self.radius.len() + 1 < self.num_classes as usize {
            return bad(format!(
                "{} radius ranges for {} foreground classes",
                self.radius.len(),
                self.num_classes - 1
            ));
        }
        if self.objects_per_class.0 > self.objects_per_class.1 {
            return bad("objects_per_class range is empty".into());
        }
        if let Some(f) = self.smallest_class_frequency {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("frequency {f} outside (0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.ellipticity) {
            return bad(format!("ellipticity {} outside [0, 1)", self.ellipticity));
        }
        for &(lo, hi) in &self.directional_pairs {
            if lo == 0 || hi == 0 || lo == hi || lo >= self.num_classes || hi >= self.num_classes {
                return bad(format!("bad directional pair ({lo}, {hi})"));
            }
        }
        for class in 1..self.num_classes {
            let (rlo, rhi) = self.object_radius_range(class);
            if !(rlo > 0.0 && rlo <= rhi) {
                return bad(format!("class {class}: bad radius range ({rlo}, {rhi})"));
            }
            let reach = rhi * (1.0 + self.ellipticity);
            let span = 2.0 * reach.ceil() + 1.0;
            for a in 0..3 {
                let mut room = self.dims_min[a] as f64;
                if a == 2 && self.side_of(class).is_some() {
                    room = (self.dims_min[2] / 2) as f64;
                }
                if span > room {
                    return bad(format!(
                        "class {class} objects of radius {rhi:.2} do not fit axis {a} ({room} voxels)"
                    ));
                }
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.unit()
}

fn generate_one(spec: &SynthSpec, index: usize) -> Volume {
    let mut rng = RngStream::new(spec.seed, Domain::Synth, [index as u64, 0, 0]);
    let dims: Shape3 = std::array::from_fn(|a| spec.dims_min[a] + rng.below(spec.dims_max[a] - spec.dims_min[a] + 1));
    let n = voxel_count(dims);
    let mut labels = vec![0u16; n];

    for class in 1..spec.num_classes {
        let (olo, ohi) = spec.objects_per_class;
        let count = olo + rng.below(ohi - olo + 1);
        let (rlo, rhi) = spec.object_radius_range(class);
        for _ in 0..count {
            let r = uniform(&mut rng, rlo, rhi);
            let semi: [f64; 3] =
                std::array::from_fn(|_| r * (1.0 + spec.ellipticity * (2.0 * rng.unit() - 1.0)));
            // centres keep the whole ellipsoid inside its allowed region
            let center: [f64; 3] = std::array::from_fn(|a| {
                let reach = semi[a].ceil();
                let (mut lo, mut hi) = (reach, dims[a] as f64 - 1.0 - reach);
                if a == 2 {
                    let half = (dims[2] / 2) as f64;
                    match spec.side_of(class) {
                        Some(false) => hi = half - 1.0 - reach,
                        Some(true) => lo = half + reach,
                        None => {}
                    }
                }
                uniform(&mut rng, lo, hi.max(lo))
            });
            rasterize(&mut labels, dims, center, semi, class);
        }
    }

    let normal = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    let image = labels
        .iter()
        .map(|&l| {
            let noise = if spec.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            (spec.intensity(l) + noise) as f32
        })
        .collect();

    Volume::new(dims, [1.0; 3], spec.num_classes, image, labels).expect("generator keeps volume invariants")
}

fn rasterize(labels: &mut [u16], dims: Shape3, center: [f64; 3], semi: [f64; 3], class: u16) {
    let range = |a: usize| {
        let lo = (center[a] - semi[a]).floor().max(0.0) as usize;
        let hi = ((center[a] + semi[a]).ceil() as usize).min(dims[a] - 1);
        lo..=hi
    };
    for i in range(0) {
        let di = (i as f64 - center[0]) / semi[0];
        for j in range(1) {
            let dj = (j as f64 - center[1]) / semi[1];
            for k in range(2) {
                let dk = (k as f64 - center[2]) / semi[2];
                if di * di + dj * dj + dk * dk <= 1.0 {
                    labels[linear_index(dims, i, j, k)] = class;
                }
            }
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<Volume>> {
    spec.validate()?;
    Ok((0..spec.num_volumes)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCharacteristics {
    pub num_classes: u16,
    pub dataset_size: usize,
    pub patch_to_volume_coverage: f64,
    pub smallest_class_frequency: f64,
    /// False when no foreground class occurs anywhere; the frequency is then 0.
    pub smallest_class_defined: bool,
}

/// Task measures: class count, dataset size, patch-to-volume coverage (patch
/// voxels over median volume voxels) and the frequency of the rarest
/// foreground class (per-class frequency averaged over volumes, then the
/// minimum over classes that occur at least once).
pub fn measure_characteristics(dataset: &[Volume], patch: Shape3) -> Result<TaskCharacteristics> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    let num_classes = first.num_classes;

    let mut sizes: Vec<usize> = dataset.iter().map(Volume::voxels).collect();
    sizes.sort_unstable();
    let mid = sizes.len() / 2;
    let median = if sizes.len() % 2 == 1 {
        sizes[mid] as f64
    } else {
        (sizes[mid - 1] + sizes[mid]) as f64 / 2.0
    };

    let mut freq_sum = vec![0.0f64; num_classes as usize];
    let mut seen = vec![false; num_classes as usize];
    for v in dataset {
        let counts = v.class_counts();
        for c in 1..num_classes as usize {
            freq_sum[c] += counts[c] as f64 / v.voxels() as f64;
            seen[c] |= counts[c] > 0;
        }
    }
    let smallest = (1..num_classes as usize)
        .filter(|&c| seen[c])
        .map(|c| freq_sum[c] / dataset.len() as f64)
        .min_by(f64::total_cmp);

    Ok(TaskCharacteristics {
        num_classes,
        dataset_size: dataset.len(),
        patch_to_volume_coverage: voxel_count(patch) as f64 / median,
        smallest_class_frequency: smallest.unwrap_or(0.0),
        smallest_class_defined: smallest.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SynthSpec {
        SynthSpec {
            num_volumes: 4,
            dims_min: [16, 16, 16],
            dims_max: [18, 20, 16],
            num_classes: 3,
            objects_per_class: (1, 2),
            radius: vec![(2.0, 3.0), (3.0, 4.0)],
            smallest_class_frequency: None,
            directional_pairs: vec![],
            ellipticity: 0.25,
            contrast: 1.0,
            noise: 0.1,
            seed: 5,
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&base()).unwrap();
        let b = generate(&base()).unwrap();
        assert_eq!(a, b);
        let mut other = base();
        other.seed = 6;
        assert_ne!(generate(&other).unwrap(), a);
    }

    #[test]
    fn background_only() {
        let mut s = base();
        s.num_classes = 1;
        s.radius.clear();
        let vols = generate(&s).unwrap();
        for v in vols {
            assert!(v.labels.iter().all(|&l| l == 0));
            let mean = v.image.iter().map(|&x| x as f64).sum::<f64>() / v.voxels() as f64;
            assert!(mean.abs() < 0.02);
        }
    }

    #[test]
    fn ball_volume_matches_analytic() {
        let r = 4.0;
        let d = 24;
        let s = SynthSpec {
            num_volumes: 20,
            dims_min: [d; 3],
            dims_max: [d; 3],
            num_classes: 2,
            objects_per_class: (1, 1),
            radius: vec![(r, r)],
            ellipticity: 0.0,
            ..base()
        };
        let expected = 4.0 / 3.0 * PI * r.powi(3) / (d * d * d) as f64;
        for v in generate(&s).unwrap() {
            let fg = v.labels.iter().filter(|&&l| l == 1).count() as f64 / v.voxels() as f64;
            assert!((fg / expected - 1.0).abs() < 0.10, "{fg} vs {expected}");
        }
    }

    #[test]
    fn directional_classes_stay_in_their_half() {
        let s = SynthSpec {
            num_classes: 3,
            directional_pairs: vec![(1, 2)],
            radius: vec![(2.0, 3.0), (2.0, 3.0)],
            dims_min: [16, 16, 20],
            dims_max: [16, 16, 20],
            num_volumes: 10,
            ..base()
        };
        for v in generate(&s).unwrap() {
            let half = v.dims[2] / 2;
            for (idx, &l) in v.labels.iter().enumerate() {
                let k = idx % v.dims[2];
                match l {
                    1 => assert!(k < half),
                    2 => assert!(k >= half),
                    _ => {}
                }
            }
            assert!(v.labels.contains(&1) && v.labels.contains(&2));
        }
    }

    #[test]
    fn infeasible_specs() {
        let mut s = base();
        s.radius[1] = (9.0, 12.0);
        assert!(matches!(generate(&s), Err(Error::InfeasibleSpec(_))));
        let mut s = base();
        s.smallest_class_frequency = Some(1.5);
        assert!(generate(&s).is_err());
        let mut s = base();
        s.radius.pop();
        assert!(generate(&s).is_err());
    }

    #[test]
    fn calibrated_smallest_class() {
        let s = SynthSpec {
            num_volumes: 20,
            dims_min: [40, 40, 40],
            dims_max: [40, 40, 40],
            num_classes: 3,
            objects_per_class: (1, 1),
            radius: vec![(1.0, 1.0), (6.0, 8.0)],
            smallest_class_frequency: Some(0.005),
            ..base()
        };
        let vols = generate(&s).unwrap();
        let c = measure_characteristics(&vols, [16, 16, 16]).unwrap();
        assert!((c.smallest_class_frequency / 0.005 - 1.0).abs() < 0.25, "{}", c.smallest_class_frequency);
    }

    #[test]
    fn characteristics_coverage_and_empty() {
        let v = Volume::new([2, 2, 2], [1.0; 3], 2, vec![0.0; 8], vec![0; 8]).unwrap();
        let c = measure_characteristics(&[v.clone(), v], [2, 2, 2]).unwrap();
        assert_eq!(c.patch_to_volume_coverage, 1.0);
        assert_eq!(c.smallest_class_frequency, 0.0);
        assert!(!c.smallest_class_defined);
        assert!(measure_characteristics(&[], [1, 1, 1]).is_err());
    }

    #[test]
    fn characteristics_match_counting() {
        let mk = |dims: Shape3, labels: Vec<u16>| {
            Volume::new(dims, [1.0; 3], 3, vec![0.0; labels.len()], labels).unwrap()
        };
        // volume A: 8 voxels, class1=2, class2=1; B: 12 voxels, class1=0, class2=3; C: 8 voxels, class1=1, class2=4
        let a = mk([2, 2, 2], vec![1, 1, 2, 0, 0, 0, 0, 0]);
        let b = mk([2, 2, 3], vec![2, 2, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let c = mk([2, 2, 2], vec![1, 2, 2, 2, 2, 0, 0, 0]);
        let ch = measure_characteristics(&[a, b, c], [2, 2, 1]).unwrap();
        let class1: f64 = (2.0 / 8.0 + 0.0 / 12.0 + 1.0 / 8.0) / 3.0;
        let class2 = (1.0 / 8.0 + 3.0 / 12.0 + 4.0 / 8.0) / 3.0;
        assert_eq!(ch.num_classes, 3);
        assert_eq!(ch.dataset_size, 3);
        assert!((ch.smallest_class_frequency - class1.min(class2)).abs() < 1e-15);
        assert_eq!(ch.patch_to_volume_coverage, 4.0 / 8.0);
    }
}
