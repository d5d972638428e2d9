//! Periodic L×L lattice with power-law couplings `J(r) = r^-alpha`.
//!
//! Distances are minimum-image Euclidean distances on the torus, so the
//! coupling between two sites depends only on their displacement and the
//! whole interaction fits in one L×L table.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::fair_spin;

pub type Spin = i8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeGeometry {
    side: usize,
    alpha: f64,
    mu: f64,
}

impl LatticeGeometry {
    pub fn new(side: usize, alpha: f64, mu: f64) -> Result<Self> {
        if side < 2 {
            return Err(Error::InvalidGeometry("side length must be at least 2"));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidGeometry("alpha must be positive and finite"));
        }
        if !mu.is_finite() {
            return Err(Error::InvalidGeometry("mu must be finite"));
        }
        Ok(Self { side, alpha, mu })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn mu(&self) -> f64 {
        self.mu
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.side * self.side
    }

    /// Same couplings on a lattice of a different side.
    pub fn with_side(&self, side: usize) -> Result<Self> {
        Self::new(side, self.alpha, self.mu)
    }
}

/// Minimum-image offset along one axis of a ring of length `side`.
#[inline]
pub fn min_image(d: usize, side: usize) -> usize {
    let d = d % side;
    d.min(side - d)
}

/// Squared minimum-image distance for displacement `(dx, dy)`.
#[inline]
pub fn min_image_dist2(dx: usize, dy: usize, side: usize) -> usize {
    let x = min_image(dx, side);
    let y = min_image(dy, side);
    x * x + y * y
}

/// Squared minimum-image distance between sites `i` and `j` (row-major).
#[inline]
pub fn site_dist2(i: usize, j: usize, side: usize) -> usize {
    let (xi, yi) = (i % side, i / side);
    let (xj, yj) = (j % side, j / side);
    min_image_dist2(xj + side - xi, yj + side - yi, side)
}

/// `J(dx, dy)` for every torus displacement, row-major over `(dy, dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingKernel {
    side: usize,
    table: Vec<f64>,
}

impl CouplingKernel {
    pub fn build(geom: &LatticeGeometry) -> Self {
        let side = geom.side();
        let mut table = vec![0.0; side * side];
        for dy in 0..side {
            for dx in 0..side {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let r = libm::sqrt(min_image_dist2(dx, dy, side) as f64);
                table[dy * side + dx] = libm::pow(r, -geom.alpha());
            }
        }
        Self { side, table }
    }

    /// Kernel with every coupling zero.
    pub fn zero(side: usize) -> Self {
        Self { side, table: vec![0.0; side * side] }
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn coupling(&self, dx: usize, dy: usize) -> f64 {
        self.table[(dy % self.side) * self.side + dx % self.side]
    }

    /// Coupling between row-major sites `i` and `j`.
    #[inline]
    pub fn between(&self, i: usize, j: usize) -> f64 {
        let s = self.side;
        let dx = (j % s + s - i % s) % s;
        let dy = (j / s + s - i / s) % s;
        self.table[dy * s + dx]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }
}

/// Build the coupling table for `geom`.
pub fn build_kernel(geom: &LatticeGeometry) -> CouplingKernel {
    CouplingKernel::build(geom)
}

/// L×L configuration of ±1 spins, row-major with site `(x, y)` at `y * L + x`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinGrid {
    side: usize,
    spins: Vec<Spin>,
}

impl SpinGrid {
    pub fn uniform(side: usize, spin: Spin) -> Result<Self> {
        check_spin(spin)?;
        Ok(Self { side, spins: vec![spin; side * side] })
    }

    pub fn from_spins(side: usize, spins: Vec<Spin>) -> Result<Self> {
        if spins.len() != side * side {
            return Err(Error::DimensionMismatch { expected: side * side, actual: spins.len() });
        }
        if let Some(&bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidSpin(bad));
        }
        Ok(Self { side, spins })
    }

    pub fn random<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Self {
        let spins = (0..side * side).map(|_| fair_spin(rng)).collect();
        Self { side, spins }
    }

    pub fn checkerboard(side: usize) -> Self {
        let spins = (0..side * side)
            .map(|i| if (i % side + i / side).is_multiple_of(2) { 1 } else { -1 })
            .collect();
        Self { side, spins }
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.spins.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    #[inline]
    pub fn spins(&self) -> &[Spin] {
        &self.spins
    }

    pub fn into_spins(self) -> Vec<Spin> {
        self.spins
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Spin {
        self.spins[y * self.side + x]
    }

    #[inline]
    pub fn at(&self, index: usize) -> Spin {
        self.spins[index]
    }

    pub fn site_index(&self, x: usize, y: usize) -> Result<usize> {
        if x >= self.side || y >= self.side {
            return Err(Error::SiteOutOfRange { x, y, side: self.side });
        }
        Ok(y * self.side + x)
    }

    #[inline]
    pub fn flip(&mut self, index: usize) {
        self.spins[index] = -self.spins[index];
    }

    /// Global spin flip.
    pub fn negated(&self) -> Self {
        Self { side: self.side, spins: self.spins.iter().map(|s| -s).collect() }
    }

    pub fn magnetization(&self) -> f64 {
        let sum: i64 = self.spins.iter().map(|&s| s as i64).sum();
        sum as f64 / self.spins.len() as f64
    }
}

impl AsRef<[Spin]> for SpinGrid {
    fn as_ref(&self) -> &[Spin] {
        &self.spins
    }
}

fn check_spin(s: Spin) -> Result<()> {
    if s == 1 || s == -1 {
        Ok(())
    } else {
        Err(Error::InvalidSpin(s))
    }
}

fn check_dims(grid: &SpinGrid, kernel: &CouplingKernel) -> Result<()> {
    if grid.side() != kernel.side() {
        return Err(Error::DimensionMismatch { expected: kernel.side(), actual: grid.side() });
    }
    Ok(())
}

/// `sum_{j != i} J_ij s_j` at row-major site `i`; no bounds or size checks.
pub fn local_field_at(grid: &SpinGrid, index: usize, kernel: &CouplingKernel) -> f64 {
    let s = grid.side();
    let (xi, yi) = (index % s, index / s);
    let spins = grid.spins();
    let table = kernel.table();
    let mut field = 0.0;
    for yj in 0..s {
        let dy = (yj + s - yi) % s;
        let row = &table[dy * s..(dy + 1) * s];
        let srow = &spins[yj * s..(yj + 1) * s];
        // dx = (xj - xi) mod s, split into the two contiguous runs
        for (xj, &sj) in srow.iter().enumerate().skip(xi) {
            field += row[xj - xi] * sj as f64;
        }
        for (xj, &sj) in srow.iter().enumerate().take(xi) {
            field += row[xj + s - xi] * sj as f64;
        }
    }
    field
}

pub fn local_field(grid: &SpinGrid, site: (usize, usize), kernel: &CouplingKernel) -> Result<f64> {
    check_dims(grid, kernel)?;
    let index = grid.site_index(site.0, site.1)?;
    Ok(local_field_at(grid, index, kernel))
}

/// Local field at every site, O(N^2).
pub fn all_local_fields(grid: &SpinGrid, kernel: &CouplingKernel) -> Vec<f64> {
    (0..grid.len()).map(|i| local_field_at(grid, i, kernel)).collect()
}

/// `H = -sum_{pairs} J_ij s_i s_j - mu sum_j s_j`, each unordered pair once.
pub fn total_energy(grid: &SpinGrid, kernel: &CouplingKernel, geom: &LatticeGeometry) -> Result<f64> {
    check_dims(grid, kernel)?;
    if grid.side() != geom.side() {
        return Err(Error::DimensionMismatch { expected: geom.side(), actual: grid.side() });
    }
    let mut pair = 0.0;
    let mut field_term = 0.0;
    for i in 0..grid.len() {
        let si = grid.at(i) as f64;
        pair += si * local_field_at(grid, i, kernel);
        field_term += si;
    }
    Ok(-0.5 * pair - geom.mu() * field_term)
}

/// Energy change from flipping the spin at row-major site `index`.
pub fn flip_delta(grid: &SpinGrid, index: usize, kernel: &CouplingKernel, mu: f64) -> f64 {
    2.0 * grid.at(index) as f64 * (local_field_at(grid, index, kernel) + mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn geom(l: usize) -> LatticeGeometry {
        LatticeGeometry::new(l, 3.0, 0.0).unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(LatticeGeometry::new(1, 3.0, 0.0).is_err());
        assert!(LatticeGeometry::new(4, 0.0, 0.0).is_err());
        assert!(LatticeGeometry::new(4, -1.0, 0.0).is_err());
        assert!(LatticeGeometry::new(4, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn kernel_values_on_ten_by_ten() {
        let k = build_kernel(&geom(10));
        assert_eq!(k.coupling(0, 0), 0.0);
        assert_eq!(k.coupling(1, 0), 1.0);
        assert_eq!(k.coupling(2, 0), 0.125);
        assert_eq!(k.coupling(9, 0), 1.0);
        assert!((k.coupling(1, 1) - libm::pow(2f64.sqrt(), -3.0)).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_ground_energy() {
        // Pairs of a 2x2 torus: 4 at distance 1 (edges), 2 at distance sqrt 2 (diagonals).
        let g = geom(2);
        let k = build_kernel(&g);
        let grid = SpinGrid::uniform(2, 1).unwrap();
        let expected = -(4.0 * 1.0 + 2.0 * libm::pow(2f64.sqrt(), -3.0));
        let e = total_energy(&grid, &k, &g).unwrap();
        assert!((e - expected).abs() < 1e-12, "{e} vs {expected}");
    }

    #[test]
    fn zero_kernel_has_zero_field() {
        let mut rng = seeded(1);
        let grid = SpinGrid::random(5, &mut rng);
        let k = CouplingKernel::zero(5);
        assert_eq!(local_field(&grid, (2, 3), &k).unwrap(), 0.0);
    }

    #[test]
    fn uniform_field_is_site_independent() {
        let k = build_kernel(&geom(6));
        let grid = SpinGrid::uniform(6, 1).unwrap();
        let total: f64 = k.table().iter().sum();
        for i in 0..36 {
            assert!((local_field_at(&grid, i, &k) - total).abs() < 1e-12);
        }
    }

    #[test]
    fn field_matches_direct_sum_on_three_by_three() {
        let mut rng = seeded(5);
        let grid = SpinGrid::random(3, &mut rng);
        let k = build_kernel(&geom(3));
        for i in 0..9 {
            let (xi, yi) = (i % 3, i / 3);
            let mut direct = 0.0;
            for j in 0..9 {
                if j == i {
                    continue;
                }
                let (xj, yj) = (j % 3, j / 3);
                let dx = (xi as i64 - xj as i64).unsigned_abs() as usize;
                let dy = (yi as i64 - yj as i64).unsigned_abs() as usize;
                let rx = dx.min(3 - dx) as f64;
                let ry = dy.min(3 - dy) as f64;
                direct += grid.at(j) as f64 / libm::pow((rx * rx + ry * ry).sqrt(), 3.0);
            }
            let f = local_field(&grid, (xi, yi), &k).unwrap();
            assert!((f - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_site() {
        let grid = SpinGrid::uniform(3, 1).unwrap();
        let k = build_kernel(&geom(3));
        assert!(matches!(local_field(&grid, (3, 0), &k), Err(Error::SiteOutOfRange { .. })));
        let k4 = build_kernel(&geom(4));
        assert!(matches!(local_field(&grid, (0, 0), &k4), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_invalid_spins() {
        assert_eq!(SpinGrid::from_spins(2, vec![1, 0, 1, 1]), Err(Error::InvalidSpin(0)));
        assert!(SpinGrid::from_spins(2, vec![1, 1, 1]).is_err());
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(side in 2usize..12, alpha in 0.5f64..5.0) {
            let k = build_kernel(&LatticeGeometry::new(side, alpha, 0.0).unwrap());
            for dy in 0..side {
                for dx in 0..side {
                    let j = k.coupling(dx, dy);
                    prop_assert!(j.is_finite() && j >= 0.0);
                    prop_assert_eq!(j, k.coupling((side - dx) % side, (side - dy) % side));
                }
            }
        }

        #[test]
        fn energy_even_without_field(side in 2usize..7, seed in any::<u64>()) {
            let g = geom(side);
            let k = build_kernel(&g);
            let grid = SpinGrid::random(side, &mut seeded(seed));
            let e1 = total_energy(&grid, &k, &g).unwrap();
            let e2 = total_energy(&grid.negated(), &k, &g).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-9);
        }

        #[test]
        fn flip_changes_energy_by_delta(side in 2usize..7, mu in -1.0f64..1.0, seed in any::<u64>(), site in any::<prop::sample::Index>()) {
            let g = LatticeGeometry::new(side, 3.0, mu).unwrap();
            let k = build_kernel(&g);
            let grid = SpinGrid::random(side, &mut seeded(seed));
            let i = site.index(grid.len());
            let before = total_energy(&grid, &k, &g).unwrap();
            let delta = flip_delta(&grid, i, &k, mu);
            let mut flipped = grid.clone();
            flipped.flip(i);
            let after = total_energy(&flipped, &k, &g).unwrap();
            prop_assert!((after - before - delta).abs() < 1e-9);
        }
    }
}
