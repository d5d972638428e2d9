//! Kadanoff block-spin coarse-graining on disjoint 2×2 tiles.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Spin, SpinGrid};
use crate::mcmc::SampleSet;
use crate::rng::fair_spin;

/// Sign of each 2×2 tile sum, with `tie` consulted for zero sums in
/// row-major tile order.
pub fn block_spin_with(grid: &SpinGrid, mut tie: impl FnMut() -> Spin) -> Result<SpinGrid> {
    let side = grid.side();
    if !side.is_multiple_of(2) {
        return Err(Error::NotDivisible { side, steps: 1 });
    }
    let half = side / 2;
    let mut out = Vec::with_capacity(half * half);
    for by in 0..half {
        for bx in 0..half {
            let (x, y) = (2 * bx, 2 * by);
            let sum = grid.get(x, y) as i32 + grid.get(x + 1, y) as i32 + grid.get(x, y + 1) as i32 + grid.get(x + 1, y + 1) as i32;
            out.push(match sum {
                s if s > 0 => 1,
                s if s < 0 => -1,
                _ => tie(),
            });
        }
    }
    SpinGrid::from_spins(half, out)
}

/// Block spin with ties broken by a fair coin from `rng`.
pub fn block_spin<R: Rng + ?Sized>(grid: &SpinGrid, rng: &mut R) -> Result<SpinGrid> {
    block_spin_with(grid, || fair_spin(rng))
}

/// `steps` successive block-spin transformations of every grid; element
/// `k` of the result holds the ensemble after `k + 1` steps.
pub fn rg_flow<R: Rng + ?Sized>(samples: &SampleSet, steps: usize, rng: &mut R) -> Result<Vec<SampleSet>> {
    let side = samples.geometry().side();
    if steps == 0 || steps >= usize::BITS as usize || !side.is_multiple_of(1 << steps) || side >> steps < 2 {
        return Err(Error::NotDivisible { side, steps });
    }
    let mut out: Vec<SampleSet> = Vec::with_capacity(steps);
    for k in 0..steps {
        let src = if k == 0 { samples } else { &out[k - 1] };
        let geom = src.geometry().with_side(src.geometry().side() / 2)?;
        let grids = src.grids().iter().map(|g| block_spin(g, rng)).collect::<Result<Vec<_>>>()?;
        let next = SampleSet::new(geom, samples.temperature(), grids)?;
        out.push(next);
    }
    Ok(out)
}
