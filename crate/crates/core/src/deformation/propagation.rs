//! Propagation candidates from combined opposite trajectories.

use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::raster::{Pixel, Raster};

/// Lowest-cost pixel on ray `i` joined with ray `i + X/2`, for each of the
/// `X/2` pairs. The centre only wins when both rays are just the centre; cost
/// ties go to the lowest (row, column).
pub(crate) fn candidates_with(
    center: Pixel,
    lengths: &[usize],
    pixel_at: impl Fn(usize, usize) -> Pixel,
    cost: &Raster<f32>,
    out: &mut Vec<Pixel>,
) -> Result<()> {
    let x = lengths.len();
    if x % 2 == 1 {
        return Err(Error::Parameter(format!(
            "propagation pairs opposite rays and needs an even ray count, got {x}"
        )));
    }
    out.clear();
    for i in 0..x / 2 {
        let mut best: Option<(f32, (i32, i32), Pixel)> = None;
        for ray in [i, i + x / 2] {
            for k in 1..lengths[ray] {
                let p = pixel_at(ray, k);
                let c = cost[p];
                let better = match best {
                    None => true,
                    Some((bc, key, _)) => c < bc || (c == bc && p.scan_key() < key),
                };
                if better {
                    best = Some((c, p.scan_key(), p));
                }
            }
        }
        out.push(best.map_or(center, |b| b.2));
    }
    Ok(())
}

pub fn propagation_candidates(trajectories: &[Trajectory], cost: &Raster<f32>) -> Result<Vec<Pixel>> {
    let center = trajectories
        .first()
        .map(|t| t.origin)
        .ok_or_else(|| Error::Parameter("no trajectories".into()))?;
    let lengths: Vec<usize> = trajectories.iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    candidates_with(center, &lengths, |i, k| trajectories[i].pixels[k], cost, &mut out)?;
    Ok(out)
}
