use pgps_core::metrics::mean_fg_dice;
use pgps_core::{Shape3, Volume};
use pgps_segnet::{sliding_window_predict, SegNet};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeDice {
    pub index: usize,
    /// Mean foreground Dice; `None` when no foreground occurs in either map.
    pub dice: Option<f64>,
}

/// Sliding-window prediction and mean foreground Dice per held-out volume.
pub fn evaluate(net: &SegNet, volumes: &[(usize, &Volume)], window: Shape3) -> Result<Vec<VolumeDice>> {
    volumes
        .iter()
        .map(|&(index, v)| {
            let pred = sliding_window_predict(net, &v.image, v.dims, window)?;
            let score = mean_fg_dice(&pred, &v.labels, v.num_classes)?;
            Ok(VolumeDice {
                index,
                dice: score.mean,
            })
        })
        .collect()
}

/// Mean over volumes with a defined Dice; 0 when none is defined.
pub fn mean_dice(scores: &[VolumeDice]) -> f64 {
    let defined: Vec<f64> = scores.iter().filter_map(|s| s.dice).collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}
