//! Metropolis single-site sampling of the long-range lattice.
//!
//! A [`Chain`] keeps the local field of every site cached, so a proposal
//! costs O(1) and an accepted flip costs one O(N) pass over the coupling
//! table. The cache is rebuilt from scratch every [`REFRESH_INTERVAL`]
//! accepted flips to bound floating-point drift.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{all_local_fields, total_energy, CouplingKernel, LatticeGeometry, SpinGrid};
use crate::rng::{derive_seed, seeded, uniform};

/// Accepted flips between full recomputations of the field cache.
pub const REFRESH_INTERVAL: u64 = 1_000_000;

/// Largest lattice (in sites) that [`exact_enumeration`] accepts.
pub const MAX_ENUMERATION_SITES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub temperature: f64,
    /// Single-site proposals discarded before the first retained sample.
    pub burn_in: u64,
    /// Proposals between retained samples.
    pub stride: u64,
    pub seed: u64,
}

impl McmcConfig {
    /// Defaults: 500 sweeps of burn-in and one sweep between samples.
    pub fn for_geometry(geom: &LatticeGeometry, temperature: f64, seed: u64) -> Self {
        let n = geom.sites() as u64;
        Self { temperature, burn_in: 500 * n, stride: n, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig("temperature must be finite and non-negative"));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be positive"));
        }
        Ok(())
    }
}

/// A batch of configurations sharing one lattice, tagged with the
/// temperature they were generated at.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    geometry: LatticeGeometry,
    temperature: f64,
    grids: Vec<SpinGrid>,
}

impl SampleSet {
    pub fn new(geometry: LatticeGeometry, temperature: f64, grids: Vec<SpinGrid>) -> Result<Self> {
        if let Some(bad) = grids.iter().find(|g| g.side() != geometry.side()) {
            return Err(Error::DimensionMismatch { expected: geometry.side(), actual: bad.side() });
        }
        Ok(Self { geometry, temperature, grids })
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn grids(&self) -> &[SpinGrid] {
        &self.grids
    }

    pub fn into_grids(self) -> Vec<SpinGrid> {
        self.grids
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    /// Every grid globally flipped.
    pub fn negated(&self) -> Self {
        Self {
            geometry: self.geometry,
            temperature: self.temperature,
            grids: self.grids.iter().map(SpinGrid::negated).collect(),
        }
    }

    pub fn mean_abs_magnetization(&self) -> f64 {
        if self.grids.is_empty() {
            return 0.0;
        }
        self.grids.iter().map(|g| g.magnetization().abs()).sum::<f64>() / self.grids.len() as f64
    }
}

/// Metropolis rule: accept with probability `min(1, exp(-delta_e / T))`.
/// At `T = 0` only non-positive energy changes are accepted.
#[inline]
pub fn metropolis_accept<R: Rng + ?Sized>(delta_e: f64, temperature: f64, rng: &mut R) -> bool {
    if delta_e <= 0.0 {
        return true;
    }
    if temperature <= 0.0 {
        return false;
    }
    uniform(rng) < libm::exp(-delta_e / temperature)
}

/// Adds `scale * J(i, j)` to `fields[j]` for every site `j`.
fn add_coupling_column(kernel: &CouplingKernel, i: usize, scale: f64, fields: &mut [f64]) {
    let s = kernel.side();
    let table = kernel.table();
    let (xi, yi) = (i % s, i / s);
    for yj in 0..s {
        let dy = (yj + s - yi) % s;
        let row = &table[dy * s..(dy + 1) * s];
        let out = &mut fields[yj * s..(yj + 1) * s];
        let (left, right) = out.split_at_mut(xi);
        // xj >= xi: dx = xj - xi
        for (f, j) in right.iter_mut().zip(&row[..s - xi]) {
            *f += scale * j;
        }
        // xj < xi: dx = xj + s - xi
        for (f, j) in left.iter_mut().zip(&row[s - xi..]) {
            *f += scale * j;
        }
    }
}

/// Single Markov chain with a cached local-field array.
#[derive(Debug, Clone)]
pub struct Chain<'k> {
    geometry: LatticeGeometry,
    kernel: &'k CouplingKernel,
    grid: SpinGrid,
    fields: Vec<f64>,
    since_refresh: u64,
    proposals: u64,
    accepted: u64,
}

impl<'k> Chain<'k> {
    pub fn new(geometry: LatticeGeometry, kernel: &'k CouplingKernel, grid: SpinGrid) -> Result<Self> {
        if kernel.side() != geometry.side() {
            return Err(Error::DimensionMismatch { expected: geometry.side(), actual: kernel.side() });
        }
        if grid.side() != geometry.side() {
            return Err(Error::DimensionMismatch { expected: geometry.side(), actual: grid.side() });
        }
        let fields = all_local_fields(&grid, kernel);
        Ok(Self { geometry, kernel, grid, fields, since_refresh: 0, proposals: 0, accepted: 0 })
    }

    /// Chain started from independent fair-coin spins.
    pub fn random<R: Rng + ?Sized>(geometry: LatticeGeometry, kernel: &'k CouplingKernel, rng: &mut R) -> Result<Self> {
        let grid = SpinGrid::random(geometry.side(), rng);
        Self::new(geometry, kernel, grid)
    }

    pub fn grid(&self) -> &SpinGrid {
        &self.grid
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    /// Energy change of flipping site `i` in the current state.
    #[inline]
    pub fn delta_energy(&self, i: usize) -> f64 {
        2.0 * self.grid.at(i) as f64 * (self.fields[i] + self.geometry.mu())
    }

    /// Flip site `i` unconditionally, keeping the field cache consistent.
    pub fn flip(&mut self, i: usize) {
        self.grid.flip(i);
        let new = self.grid.at(i) as f64;
        add_coupling_column(self.kernel, i, 2.0 * new, &mut self.fields);
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh();
        }
    }

    /// Recompute every cached field from scratch.
    pub fn refresh(&mut self) {
        self.fields = all_local_fields(&self.grid, self.kernel);
        self.since_refresh = 0;
    }

    /// One Metropolis proposal at a uniformly chosen site. Returns whether
    /// the flip was accepted.
    pub fn step<R: Rng + ?Sized>(&mut self, temperature: f64, rng: &mut R) -> bool {
        let i = rng.random_range(0..self.grid.len());
        let de = self.delta_energy(i);
        self.proposals += 1;
        let accepted = metropolis_accept(de, temperature, rng);
        if accepted {
            self.accepted += 1;
            self.flip(i);
        }
        accepted
    }

    pub fn run<R: Rng + ?Sized>(&mut self, proposals: u64, temperature: f64, rng: &mut R) {
        for _ in 0..proposals {
            self.step(temperature, rng);
        }
    }

    pub fn energy(&self) -> f64 {
        let pair: f64 = self
            .grid
            .spins()
            .iter()
            .zip(&self.fields)
            .map(|(&s, f)| s as f64 * f)
            .sum();
        let m: f64 = self.grid.spins().iter().map(|&s| s as f64).sum();
        -0.5 * pair - self.geometry.mu() * m
    }
}

/// Random start, `cfg.burn_in` discarded proposals, then `n_samples` grids
/// retained one every `cfg.stride` proposals. Fully determined by `cfg.seed`.
pub fn run_chain(
    geom: &LatticeGeometry,
    kernel: &CouplingKernel,
    cfg: &McmcConfig,
    n_samples: usize,
) -> Result<SampleSet> {
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let mut rng = seeded(cfg.seed);
    let mut chain = Chain::random(*geom, kernel, &mut rng)?;
    chain.run(cfg.burn_in, cfg.temperature, &mut rng);
    let mut grids = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        chain.run(cfg.stride, cfg.temperature, &mut rng);
        grids.push(chain.grid().clone());
    }
    SampleSet::new(*geom, cfg.temperature, grids)
}

/// One chain per temperature; chain `k` is seeded with `seed_base + k`.
pub fn run_temperature_scan(
    geom: &LatticeGeometry,
    kernel: &CouplingKernel,
    temperatures: &[f64],
    burn_in: u64,
    stride: u64,
    seed_base: u64,
    n_samples: usize,
) -> Result<Vec<SampleSet>> {
    temperatures
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let cfg = McmcConfig { temperature: t, burn_in, stride, seed: derive_seed(seed_base, k as u64) };
            run_chain(geom, kernel, &cfg, n_samples)
        })
        .collect()
}

/// Exact Boltzmann averages over all `2^N` states of a small lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactObservables {
    pub sites: usize,
    pub mean_magnetization: f64,
    pub mean_abs_magnetization: f64,
    pub mean_energy: f64,
    /// `<s_i s_j>` row-major, `sites x sites`.
    pub pair_correlations: Vec<f64>,
}

impl ExactObservables {
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pair_correlations[i * self.sites + j]
    }
}

pub fn exact_enumeration(geom: &LatticeGeometry, kernel: &CouplingKernel, temperature: f64) -> Result<ExactObservables> {
    let n = geom.sites();
    if n > MAX_ENUMERATION_SITES {
        return Err(Error::TooLarge { size: n, limit: MAX_ENUMERATION_SITES });
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidConfig("exact enumeration needs a positive finite temperature"));
    }
    let states = 1usize << n;
    let mut energies = Vec::with_capacity(states);
    let mut spins = vec![0i8; n];
    for code in 0..states {
        decode_state(code, &mut spins);
        let grid = SpinGrid::from_spins(geom.side(), spins.clone())?;
        energies.push(total_energy(&grid, kernel, geom)?);
    }
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);

    let mut z = 0.0;
    let mut m = 0.0;
    let mut abs_m = 0.0;
    let mut e = 0.0;
    let mut pairs = vec![0.0; n * n];
    for (code, &energy) in energies.iter().enumerate() {
        let w = libm::exp(-(energy - e_min) / temperature);
        decode_state(code, &mut spins);
        let mag = spins.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
        z += w;
        m += w * mag;
        abs_m += w * libm::fabs(mag);
        e += w * energy;
        for i in 0..n {
            for j in 0..n {
                pairs[i * n + j] += w * (spins[i] * spins[j]) as f64;
            }
        }
    }
    pairs.iter_mut().for_each(|p| *p /= z);
    Ok(ExactObservables {
        sites: n,
        mean_magnetization: m / z,
        mean_abs_magnetization: abs_m / z,
        mean_energy: e / z,
        pair_correlations: pairs,
    })
}

/// Bit `i` of `code` set means spin `i` is +1.
pub fn decode_state(code: usize, out: &mut [i8]) {
    for (i, s) in out.iter_mut().enumerate() {
        *s = if code >> i & 1 == 1 { 1 } else { -1 };
    }
}
