use std::ops::Range;

use super::FisherDiagonal;
use crate::error::{Error, Result};
use crate::network::BlockMap;

/// `1 - d^2` where `d` is the Frechet distance between the two diagonals
/// after each is scaled to unit trace (restricted to `block` if given).
///
/// For diagonal matrices `d^2 = 1/2 sum_i (sqrt(a_i) - sqrt(b_i))^2`, which
/// lies in `[0, 1]`: 0 for identical shapes, 1 for disjoint support.
pub fn fisher_overlap(
    f1: &FisherDiagonal,
    f2: &FisherDiagonal,
    block: Option<Range<usize>>,
) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::DimensionMismatch {
            what: "fisher overlap",
            expected: f1.len(),
            found: f2.len(),
        });
    }
    let range = block.unwrap_or(0..f1.len());
    if range.end > f1.len() || range.start > range.end {
        return Err(Error::invalid(format!(
            "block {range:?} outside 0..{}",
            f1.len()
        )));
    }
    let (a, b) = (&f1.values()[range.clone()], &f2.values()[range.clone()]);
    let (ta, tb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if ta <= 0.0 || tb <= 0.0 {
        return Err(Error::invalid(format!(
            "fisher block {range:?} is all zero; unit-trace normalization undefined"
        )));
    }
    let d2 = 0.5
        * a.iter()
            .zip(b)
            .map(|(x, y)| {
                let diff = (x / ta).sqrt() - (y / tb).sqrt();
                diff * diff
            })
            .sum::<f64>();
    Ok((1.0 - d2).clamp(0.0, 1.0))
}

/// Overlap per layer, each layer normalized independently.
pub fn layer_overlaps(
    f1: &FisherDiagonal,
    f2: &FisherDiagonal,
    blocks: &BlockMap,
) -> Result<Vec<f64>> {
    blocks
        .layers()
        .iter()
        .map(|l| fisher_overlap(f1, f2, Some(l.span())))
        .collect()
}
