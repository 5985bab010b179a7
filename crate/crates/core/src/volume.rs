//! Volumes, patches and the crop/resample primitives shared by every other
//! module.
//!
//! Layout is row-major with axis 0 slowest: voxel `(i, j, k)` of a volume with
//! dims `(d0, d1, d2)` lives at `(i * d1 + j) * d2 + k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel triple (sizes, origins, dims), axis 0 first.
pub type Shape3 = [usize; 3];

pub fn voxel_count(shape: Shape3) -> usize {
    shape[0] * shape[1] * shape[2]
}

#[inline]
pub fn linear_index(dims: Shape3, i: usize, j: usize, k: usize) -> usize {
    (i * dims[1] + j) * dims[2] + k
}

fn check_shape(shape: Shape3) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::ZeroSize(shape));
    }
    Ok(())
}

/// A 3D scalar image with an aligned label map.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: Shape3,
    pub spacing: [f32; 3],
    pub num_classes: u16,
    pub image: Vec<f32>,
    pub labels: Vec<u16>,
}

impl Volume {
    pub fn new(
        dims: Shape3,
        spacing: [f32; 3],
        num_classes: u16,
        image: Vec<f32>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        check_shape(dims)?;
        let n = voxel_count(dims);
        if image.len() != n {
            return Err(Error::PayloadLength {
                expected: n,
                got: image.len(),
            });
        }
        if labels.len() != n {
            return Err(Error::PayloadLength {
                expected: n,
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        Ok(Self {
            dims,
            spacing,
            num_classes,
            image,
            labels,
        })
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.dims)
    }

    /// Number of voxels per class id, indexed by class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Foreground class ids present in the label map, ascending.
    pub fn present_foreground(&self) -> Vec<u16> {
        self.class_counts()
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &c)| c > 0)
            .map(|(id, _)| id as u16)
            .collect()
    }
}

/// How a patch was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchKind {
    Foreground(u16),
    Random,
}

/// A training crop with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: Shape3,
    pub origin: Shape3,
    pub image: Vec<f32>,
    pub labels: Vec<u16>,
    pub patient_id: usize,
    pub kind: PatchKind,
}

impl Patch {
    pub fn voxels(&self) -> usize {
        voxel_count(self.size)
    }

    pub fn contains_class(&self, class: u16) -> bool {
        self.labels.contains(&class)
    }

    /// Flip image and labels together along `axis`.
    pub fn flip(&mut self, axis: usize) {
        flip_in_place(&mut self.image, self.size, axis);
        flip_in_place(&mut self.labels, self.size, axis);
    }
}

pub(crate) fn flip_in_place<T>(data: &mut [T], dims: Shape3, axis: usize) {
    let [d0, d1, d2] = dims;
    match axis {
        0 => {
            for i in 0..d0 / 2 {
                let mirror = d0 - 1 - i;
                for j in 0..d1 {
                    for k in 0..d2 {
                        data.swap(linear_index(dims, i, j, k), linear_index(dims, mirror, j, k));
                    }
                }
            }
        }
        1 => {
            for i in 0..d0 {
                for j in 0..d1 / 2 {
                    let mirror = d1 - 1 - j;
                    for k in 0..d2 {
                        data.swap(linear_index(dims, i, j, k), linear_index(dims, i, mirror, k));
                    }
                }
            }
        }
        2 => {
            for row in data.chunks_mut(d2) {
                row.reverse();
            }
        }
        _ => panic!("axis {axis} out of range"),
    }
}

/// Copy a `size` region starting at `origin` out of `volume`.
///
/// Anything past the volume bounds reads as image 0.0 and label 0. Origins
/// beyond the last voxel are clamped to it, and the clamped origin is recorded
/// on the patch.
pub fn crop(volume: &Volume, origin: Shape3, size: Shape3) -> Result<Patch> {
    check_shape(size)?;
    let dims = volume.dims;
    let origin: Shape3 = std::array::from_fn(|a| origin[a].min(dims[a] - 1));
    let n = voxel_count(size);
    let mut image = vec![0.0f32; n];
    let mut labels = vec![0u16; n];

    // in-bounds extent per axis
    let extent: Shape3 = std::array::from_fn(|a| size[a].min(dims[a] - origin[a]));
    for i in 0..extent[0] {
        for j in 0..extent[1] {
            let src = linear_index(dims, origin[0] + i, origin[1] + j, origin[2]);
            let dst = linear_index(size, i, j, 0);
            image[dst..dst + extent[2]].copy_from_slice(&volume.image[src..src + extent[2]]);
            labels[dst..dst + extent[2]].copy_from_slice(&volume.labels[src..src + extent[2]]);
        }
    }

    Ok(Patch {
        size,
        origin,
        image,
        labels,
        patient_id: 0,
        kind: PatchKind::Random,
    })
}

/// Corner-aligned source coordinate of output index `i`.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in as f64 - 1.0) / 2.0
    } else {
        (i * (n_in - 1)) as f64 / (n_out - 1) as f64
    }
}

/// Trilinear resampling with corner-aligned coordinates.
pub fn resample_image_trilinear(image: &[f32], dims: Shape3, new_dims: Shape3) -> Result<Vec<f32>> {
    check_shape(dims)?;
    check_shape(new_dims)?;
    if image.len() != voxel_count(dims) {
        return Err(Error::PayloadLength {
            expected: voxel_count(dims),
            got: image.len(),
        });
    }
    if dims == new_dims {
        return Ok(image.to_vec());
    }

    // per-axis (lower index, upper index, weight of upper)
    let taps: [Vec<(usize, usize, f64)>; 3] = std::array::from_fn(|a| {
        (0..new_dims[a])
            .map(|i| {
                let x = source_coord(i, dims[a], new_dims[a]);
                let lo = (x.floor() as usize).min(dims[a] - 1);
                let hi = (lo + 1).min(dims[a] - 1);
                (lo, hi, x - lo as f64)
            })
            .collect()
    });

    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let at = |i, j, k| image[linear_index(dims, i, j, k)] as f64;

    let mut out = Vec::with_capacity(voxel_count(new_dims));
    for &(i0, i1, ti) in &taps[0] {
        for &(j0, j1, tj) in &taps[1] {
            for &(k0, k1, tk) in &taps[2] {
                let c00 = lerp(at(i0, j0, k0), at(i0, j0, k1), tk);
                let c01 = lerp(at(i0, j1, k0), at(i0, j1, k1), tk);
                let c10 = lerp(at(i1, j0, k0), at(i1, j0, k1), tk);
                let c11 = lerp(at(i1, j1, k0), at(i1, j1, k1), tk);
                let c0 = lerp(c00, c01, tj);
                let c1 = lerp(c10, c11, tj);
                out.push(lerp(c0, c1, ti) as f32);
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour label resampling under the same coordinate mapping as
/// [`resample_image_trilinear`]. Ties go to the lower source index.
pub fn resample_labels_nearest(labels: &[u16], dims: Shape3, new_dims: Shape3) -> Result<Vec<u16>> {
    check_shape(dims)?;
    check_shape(new_dims)?;
    if labels.len() != voxel_count(dims) {
        return Err(Error::PayloadLength {
            expected: voxel_count(dims),
            got: labels.len(),
        });
    }
    let index: [Vec<usize>; 3] = std::array::from_fn(|a| {
        (0..new_dims[a])
            .map(|i| {
                let x = source_coord(i, dims[a], new_dims[a]);
                ((x - 0.5).ceil().max(0.0) as usize).min(dims[a] - 1)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(voxel_count(new_dims));
    for &i in &index[0] {
        for &j in &index[1] {
            for &k in &index[2] {
                out.push(labels[linear_index(dims, i, j, k)]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_volume(dims: Shape3, num_classes: u16) -> Volume {
        let n = voxel_count(dims);
        let image = (0..n).map(|v| v as f32).collect();
        let labels = (0..n).map(|v| (v % num_classes as usize) as u16).collect();
        Volume::new(dims, [1.0; 3], num_classes, image, labels).unwrap()
    }

    #[test]
    fn rejects_bad_payloads() {
        assert!(matches!(
            Volume::new([2, 2, 2], [1.0; 3], 2, vec![0.0; 7], vec![0; 8]),
            Err(Error::PayloadLength { .. })
        ));
        assert!(matches!(
            Volume::new([1, 1, 1], [1.0; 3], 2, vec![0.0], vec![2]),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            Volume::new([0, 1, 1], [1.0; 3], 2, vec![], vec![]),
            Err(Error::ZeroSize(_))
        ));
    }

    #[test]
    fn full_crop_is_identity() {
        let v = ramp_volume([3, 4, 5], 3);
        let p = crop(&v, [0, 0, 0], v.dims).unwrap();
        assert_eq!(p.image, v.image);
        assert_eq!(p.labels, v.labels);
        assert_eq!(p.origin, [0, 0, 0]);
    }

    #[test]
    fn single_voxel_crop() {
        let mut v = ramp_volume([2, 2, 2], 3);
        v.image[0] = 7.0;
        v.labels[0] = 2;
        let p = crop(&v, [0, 0, 0], [1, 1, 1]).unwrap();
        assert_eq!(p.image, vec![7.0]);
        assert_eq!(p.labels, vec![2]);
    }

    #[test]
    fn zero_size_crop_errors() {
        let v = ramp_volume([2, 2, 2], 2);
        assert!(crop(&v, [0, 0, 0], [1, 0, 1]).is_err());
    }

    #[test]
    fn overhanging_crop_matches_prepadded_reference() {
        let dims = [5, 4, 4];
        let v = ramp_volume(dims, 4);
        let size = [4, 4, 4];
        let origin = [dims[0] - 2, 0, 0];
        let p = crop(&v, origin, size).unwrap();

        // reference: build an explicitly padded volume then crop in-bounds
        let padded_dims = [dims[0] + 2, dims[1], dims[2]];
        let mut img = vec![0.0f32; voxel_count(padded_dims)];
        let mut lab = vec![0u16; voxel_count(padded_dims)];
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    img[linear_index(padded_dims, i, j, k)] = v.image[linear_index(dims, i, j, k)];
                    lab[linear_index(padded_dims, i, j, k)] = v.labels[linear_index(dims, i, j, k)];
                }
            }
        }
        let padded = Volume::new(padded_dims, [1.0; 3], 4, img, lab).unwrap();
        let reference = crop(&padded, origin, size).unwrap();
        assert_eq!(p.image, reference.image);
        assert_eq!(p.labels, reference.labels);
        assert_eq!(p.origin, origin);
        // last two planes are padding
        let plane = size[1] * size[2];
        assert!(p.image[2 * plane..].iter().all(|&x| x == 0.0));
        assert!(p.labels[2 * plane..].iter().all(|&x| x == 0));
    }

    #[test]
    fn constant_image_resamples_to_constant() {
        let img = vec![3.5f32; 5 * 6 * 7];
        for new in [[2, 3, 4], [9, 1, 11], [1, 1, 1], [10, 12, 14]] {
            let out = resample_image_trilinear(&img, [5, 6, 7], new).unwrap();
            assert_eq!(out.len(), voxel_count(new));
            assert!(out.iter().all(|&x| x == 3.5));
        }
    }

    #[test]
    fn identity_resampling() {
        let v = ramp_volume([3, 4, 5], 3);
        assert_eq!(resample_image_trilinear(&v.image, v.dims, v.dims).unwrap(), v.image);
        assert_eq!(resample_labels_nearest(&v.labels, v.dims, v.dims).unwrap(), v.labels);
    }

    #[test]
    fn ramp_downsample_corner_aligned() {
        let img = vec![0.0, 1.0, 2.0, 3.0];
        let out = resample_image_trilinear(&img, [4, 1, 1], [2, 1, 1]).unwrap();
        assert_eq!(out, vec![0.0, 3.0]);
        let up = resample_image_trilinear(&img, [4, 1, 1], [7, 1, 1]).unwrap();
        assert_eq!(up, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        let center = resample_image_trilinear(&img, [4, 1, 1], [1, 1, 1]).unwrap();
        assert_eq!(center, vec![1.5]);
    }

    /// Brute-force nearest source centre, lower index on ties.
    fn nearest_oracle(labels: &[u16], dims: Shape3, new_dims: Shape3) -> Vec<u16> {
        let coord = |i: usize, n_in: usize, n_out: usize| {
            if n_out == 1 {
                (n_in as f64 - 1.0) / 2.0
            } else {
                i as f64 * (n_in as f64 - 1.0) / (n_out as f64 - 1.0)
            }
        };
        let nearest = |x: f64, n: usize| {
            let mut best = 0;
            for j in 1..n {
                if (j as f64 - x).abs() < (best as f64 - x).abs() {
                    best = j;
                }
            }
            best
        };
        let mut out = vec![];
        for i in 0..new_dims[0] {
            for j in 0..new_dims[1] {
                for k in 0..new_dims[2] {
                    let si = nearest(coord(i, dims[0], new_dims[0]), dims[0]);
                    let sj = nearest(coord(j, dims[1], new_dims[1]), dims[1]);
                    let sk = nearest(coord(k, dims[2], new_dims[2]), dims[2]);
                    out.push(labels[linear_index(dims, si, sj, sk)]);
                }
            }
        }
        out
    }

    #[test]
    fn checkerboard_nearest_matches_oracle() {
        let dims = [4, 4, 4];
        let mut labels = vec![0u16; 64];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    labels[linear_index(dims, i, j, k)] = ((i + j + k) % 2) as u16;
                }
            }
        }
        for new in [[2, 2, 2], [3, 3, 3], [1, 2, 3], [7, 5, 6]] {
            assert_eq!(
                resample_labels_nearest(&labels, dims, new).unwrap(),
                nearest_oracle(&labels, dims, new),
                "{new:?}"
            );
        }
    }

    #[test]
    fn uniform_labels_stay_uniform() {
        let labels = vec![3u16; 60];
        let out = resample_labels_nearest(&labels, [3, 4, 5], [6, 2, 9]).unwrap();
        assert!(out.iter().all(|&l| l == 3));
    }

    #[test]
    fn flip_twice_is_identity() {
        let v = ramp_volume([3, 4, 5], 3);
        let mut p = crop(&v, [0, 0, 0], v.dims).unwrap();
        for axis in 0..3 {
            p.flip(axis);
            assert_ne!(p.image, v.image);
            p.flip(axis);
            assert_eq!(p.image, v.image);
            assert_eq!(p.labels, v.labels);
        }
    }

    #[test]
    fn flip_axis0_reverses_planes() {
        let v = ramp_volume([2, 1, 2], 2);
        let mut p = crop(&v, [0, 0, 0], v.dims).unwrap();
        p.flip(0);
        assert_eq!(p.image, vec![2.0, 3.0, 0.0, 1.0]);
    }
}
