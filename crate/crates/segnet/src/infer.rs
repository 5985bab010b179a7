use pgps_core::volume::{linear_index, voxel_count};
use pgps_core::Shape3;

use crate::error::{Error, Result};
use crate::loss::softmax;
use crate::net::SegNet;
use crate::tensor::Tensor;

/// Window origins along one axis: half-window steps, spread evenly so the
/// first window starts at 0 and the last ends at the border.
pub fn window_positions(extent: usize, window: usize) -> Vec<usize> {
    if extent <= window {
        return vec![0];
    }
    let span = extent - window;
    let steps = (span as f64 / (window as f64 * 0.5)).ceil() as usize + 1;
    let mut pos: Vec<usize> = (0..steps)
        .map(|i| (i as f64 * span as f64 / (steps - 1) as f64).round() as usize)
        .collect();
    // odd windows can round two steps onto one origin
    pos.dedup();
    pos
}

/// Tiles the image with overlapping windows, averages softmax probabilities
/// where windows overlap and returns the per-voxel argmax (lowest class wins
/// ties). Axes shorter than the window are zero-padded and cropped back.
pub fn sliding_window_predict(net: &SegNet, image: &[f32], dims: Shape3, window: Shape3) -> Result<Vec<u16>> {
    if image.len() != voxel_count(dims) {
        return Err(Error::Shape(format!("{} image values for dims {dims:?}", image.len())));
    }
    net.config.check_input(window)?;
    let padded: Shape3 = std::array::from_fn(|a| dims[a].max(window[a]));
    let k = net.config.num_classes as usize;
    let pv = voxel_count(padded);
    let mut probs = vec![0.0f64; k * pv];
    let mut hits = vec![0u32; pv];
    let wv = voxel_count(window);

    let positions: [Vec<usize>; 3] = std::array::from_fn(|a| window_positions(padded[a], window[a]));
    for &o0 in &positions[0] {
        for &o1 in &positions[1] {
            for &o2 in &positions[2] {
                let mut data = vec![0.0; wv];
                for i in 0..window[0] {
                    for j in 0..window[1] {
                        for l in 0..window[2] {
                            let (x, y, z) = (o0 + i, o1 + j, o2 + l);
                            if x < dims[0] && y < dims[1] && z < dims[2] {
                                data[linear_index(window, i, j, l)] = image[linear_index(dims, x, y, z)] as f64;
                            }
                        }
                    }
                }
                let p = softmax(&net.logits(&Tensor::from_data(1, 1, window, data))?);
                for i in 0..window[0] {
                    for j in 0..window[1] {
                        for l in 0..window[2] {
                            let w = linear_index(window, i, j, l);
                            let g = linear_index(padded, o0 + i, o1 + j, o2 + l);
                            hits[g] += 1;
                            for c in 0..k {
                                probs[c * pv + g] += p.data[c * wv + w];
                            }
                        }
                    }
                }
            }
        }
    }

    let mut labels = vec![0u16; voxel_count(dims)];
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let g = linear_index(padded, x, y, z);
                let n = hits[g] as f64;
                let mut best = 0;
                let mut best_p = probs[g] / n;
                for c in 1..k {
                    let p = probs[c * pv + g] / n;
                    if p > best_p {
                        best = c;
                        best_p = p;
                    }
                }
                labels[linear_index(dims, x, y, z)] = best as u16;
            }
        }
    }
    Ok(labels)
}

/// Per-voxel argmax of one forward pass.
pub fn argmax_labels(logits: &Tensor) -> Vec<u16> {
    let v = logits.spatial();
    let mut out = Vec::with_capacity(logits.n * v);
    for b in 0..logits.n {
        for i in 0..v {
            let mut best = 0;
            for c in 1..logits.c {
                if logits.data[(b * logits.c + c) * v + i] > logits.data[(b * logits.c + best) * v + i] {
                    best = c;
                }
            }
            out.push(best as u16);
        }
    }
    out
}
