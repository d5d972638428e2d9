//! Greedy layer-wise stacked RBMs and `<v h>` correlation maps comparing
//! them with block-spin RG.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{site_dist2, SpinGrid};
use crate::linalg::{axpy, Matrix};
use crate::mcmc::SampleSet;
use crate::rbm::{train, HiddenStats, RbmParams, TrainConfig};
use crate::rg::block_spin;
use crate::rng::{derive_seed, seeded};

/// Node counts of the full-size stack, 64×64 down to 8×8.
pub const PAPER_LAYER_SIZES: [usize; 4] = [4096, 1024, 256, 64];

/// Node counts of the desk-scale stack, 32×32 down to 4×4.
pub const DESK_LAYER_SIZES: [usize; 4] = [1024, 256, 64, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct StackSpec {
    layer_sizes: Vec<usize>,
    train: Vec<TrainConfig>,
}

impl StackSpec {
    /// Each size must be exactly a quarter of the previous one; one
    /// training config per layer.
    pub fn new(layer_sizes: Vec<usize>, train: Vec<TrainConfig>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig("a stack needs at least one layer"));
        }
        if train.len() != layer_sizes.len() - 1 {
            return Err(Error::DimensionMismatch { expected: layer_sizes.len() - 1, actual: train.len() });
        }
        for w in layer_sizes.windows(2) {
            if w[0] % 4 != 0 || w[1] * 4 != w[0] {
                return Err(Error::InvalidConfig("consecutive layer sizes must shrink by exactly 1/4"));
            }
        }
        Ok(Self { layer_sizes, train })
    }

    /// Same training config for every layer, with per-layer seeds
    /// `seed + layer_index`.
    pub fn uniform(layer_sizes: Vec<usize>, cfg: TrainConfig) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let train = (0..n).map(|k| TrainConfig { seed: derive_seed(cfg.seed, k as u64), ..cfg }).collect();
        Self::new(layer_sizes, train)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn train_configs(&self) -> &[TrainConfig] {
        &self.train
    }

    pub fn depth(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedStack {
    pub layers: Vec<RbmParams>,
    /// Reconstruction-error trace of each layer.
    pub traces: Vec<Vec<f64>>,
}

fn propagation_seed(cfg: &TrainConfig) -> u64 {
    derive_seed(cfg.seed, 1 << 32)
}

fn sample_hidden_layer<R: Rng + ?Sized>(params: &RbmParams, data: &[Vec<i8>], stats: HiddenStats, rng: &mut R) -> Vec<Vec<i8>> {
    let mut mean = vec![0.0; params.n_hidden()];
    data.iter()
        .map(|v| {
            let mut h = vec![0i8; params.n_hidden()];
            params.sample_hidden_into(v, &mut mean, &mut h, rng);
            if stats == HiddenStats::Expectation {
                // sign of the conditional mean; ties go to +1
                h.iter_mut().zip(&mean).for_each(|(s, m)| *s = if *m >= 0.0 { 1 } else { -1 });
            }
            h
        })
        .collect()
}

/// Train layer 1 on the raw samples, then each later layer on hidden states
/// sampled from the layer below.
pub fn train_stack(samples: &SampleSet, spec: &StackSpec) -> Result<TrainedStack> {
    let n0 = spec.layer_sizes[0];
    if samples.geometry().sites() != n0 {
        return Err(Error::DimensionMismatch { expected: n0, actual: samples.geometry().sites() });
    }
    let mut data: Vec<Vec<i8>> = samples.grids().iter().map(|g| g.spins().to_vec()).collect();
    let mut layers = Vec::with_capacity(spec.depth());
    let mut traces = Vec::with_capacity(spec.depth());
    for (k, cfg) in spec.train.iter().enumerate() {
        let trained = train(&data, spec.layer_sizes[k + 1], cfg)?;
        if k + 1 < spec.depth() {
            let mut rng = seeded(propagation_seed(cfg));
            data = sample_hidden_layer(&trained.params, &data, HiddenStats::Sampled, &mut rng);
        }
        layers.push(trained.params);
        traces.push(trained.trace);
    }
    Ok(TrainedStack { layers, traces })
}

/// Hidden configurations of every layer for `samples`, each reshaped into
/// a square lattice. Element `k` holds the output of layer `k + 1`.
pub fn stack_hidden_sets<R: Rng + ?Sized>(samples: &SampleSet, layers: &[RbmParams], rng: &mut R) -> Result<Vec<SampleSet>> {
    let mut data: Vec<Vec<i8>> = samples.grids().iter().map(|g| g.spins().to_vec()).collect();
    let mut out = Vec::with_capacity(layers.len());
    for p in layers {
        if data.first().map(Vec::len) != Some(p.n_visible()) {
            return Err(Error::DimensionMismatch { expected: p.n_visible(), actual: data.first().map_or(0, Vec::len) });
        }
        data = sample_hidden_layer(p, &data, HiddenStats::Sampled, rng);
        let side = square_side(p.n_hidden())?;
        let geom = samples.geometry().with_side(side)?;
        let grids = data.iter().map(|h| SpinGrid::from_spins(side, h.clone())).collect::<Result<Vec<_>>>()?;
        out.push(SampleSet::new(geom, samples.temperature(), grids)?);
    }
    Ok(out)
}

fn square_side(n: usize) -> Result<usize> {
    let s = libm::sqrt(n as f64) as usize;
    (s.saturating_sub(1)..=s + 1)
        .find(|&c| c * c == n)
        .ok_or(Error::InvalidConfig("layer size is not a square lattice"))
}

/// `<v_i h_a>` for one hidden index, laid out over the input lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct VhCorrelationMap {
    pub layer: usize,
    pub hidden_index: usize,
    pub side: usize,
    /// Row-major over the input lattice.
    pub values: Vec<f64>,
}

impl VhCorrelationMap {
    pub fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let m = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
    }
}

/// Every `<v_i h_a>` at one layer: row `a` is the map of hidden unit `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct VhCorrelations {
    pub layer: usize,
    pub side: usize,
    pub matrix: Matrix,
}

impl VhCorrelations {
    pub fn n_hidden(&self) -> usize {
        self.matrix.rows()
    }

    pub fn map(&self, hidden_index: usize) -> Result<VhCorrelationMap> {
        if hidden_index >= self.n_hidden() {
            return Err(Error::IndexOutOfRange { index: hidden_index, limit: self.n_hidden() });
        }
        Ok(VhCorrelationMap {
            layer: self.layer,
            hidden_index,
            side: self.side,
            values: self.matrix.row(hidden_index).to_vec(),
        })
    }

    /// Hidden indices sorted by decreasing map variance.
    pub fn ranked_by_variance(&self) -> Vec<(usize, f64)> {
        let mut r: Vec<(usize, f64)> = (0..self.n_hidden())
            .map(|a| (a, self.map(a).map(|m| m.variance()).unwrap_or(0.0)))
            .collect();
        r.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        r
    }
}

fn accumulate_vh(acc: &mut Matrix, v: &[i8], h: &[i8]) {
    let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    for (a, &ha) in h.iter().enumerate() {
        axpy(ha as f64, &vf, acc.row_mut(a));
    }
}

fn finish(mut acc: Matrix, n: usize, layer: usize, side: usize) -> VhCorrelations {
    let inv = 1.0 / n as f64;
    acc.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
    VhCorrelations { layer, side, matrix: acc }
}

fn check_layer(layer: usize, limit: usize) -> Result<()> {
    if layer == 0 || layer > limit {
        return Err(Error::IndexOutOfRange { index: layer, limit });
    }
    Ok(())
}

/// `<v h>` between the input spins and hidden states propagated through
/// `layer` (1-based) layers of the stack.
pub fn vh_correlations_rbm<R: Rng + ?Sized>(
    samples: &SampleSet,
    layers: &[RbmParams],
    layer: usize,
    stats: HiddenStats,
    rng: &mut R,
) -> Result<VhCorrelations> {
    check_layer(layer, layers.len())?;
    if samples.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let side = samples.geometry().side();
    if layers[0].n_visible() != side * side {
        return Err(Error::DimensionMismatch { expected: layers[0].n_visible(), actual: side * side });
    }
    let nh = layers[layer - 1].n_hidden();
    let mut acc = Matrix::zeros(nh, side * side);
    let mut means: Vec<Vec<f64>> = layers[..layer].iter().map(|p| vec![0.0; p.n_hidden()]).collect();
    for g in samples.grids() {
        let mut x = g.spins().to_vec();
        for (p, mean) in layers[..layer].iter().zip(&mut means) {
            let mut h = vec![0i8; p.n_hidden()];
            p.sample_hidden_into(&x, mean, &mut h, rng);
            if stats == HiddenStats::Expectation {
                h.iter_mut().zip(mean.iter()).for_each(|(s, m)| *s = if *m >= 0.0 { 1 } else { -1 });
            }
            x = h;
        }
        accumulate_vh(&mut acc, g.spins(), &x);
    }
    Ok(finish(acc, samples.len(), layer, side))
}

/// `<v h>` between the input spins and `layer` block-spin steps.
pub fn vh_correlations_rg<R: Rng + ?Sized>(samples: &SampleSet, layer: usize, rng: &mut R) -> Result<VhCorrelations> {
    let side = samples.geometry().side();
    if layer == 0 || layer >= usize::BITS as usize || !side.is_multiple_of(1 << layer) || side >> layer == 0 {
        return Err(Error::NotDivisible { side, steps: layer });
    }
    if samples.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let coarse = side >> layer;
    let mut acc = Matrix::zeros(coarse * coarse, side * side);
    for g in samples.grids() {
        let mut h = g.clone();
        for _ in 0..layer {
            h = block_spin(&h, rng)?;
        }
        accumulate_vh(&mut acc, g.spins(), h.spins());
    }
    Ok(finish(acc, samples.len(), layer, side))
}

pub fn vh_map_rbm<R: Rng + ?Sized>(
    samples: &SampleSet,
    layers: &[RbmParams],
    layer: usize,
    hidden_index: usize,
    rng: &mut R,
) -> Result<VhCorrelationMap> {
    vh_correlations_rbm(samples, layers, layer, HiddenStats::Sampled, rng)?.map(hidden_index)
}

pub fn vh_map_rg<R: Rng + ?Sized>(samples: &SampleSet, layer: usize, block_index: usize, rng: &mut R) -> Result<VhCorrelationMap> {
    vh_correlations_rg(samples, layer, rng)?.map(block_index)
}

/// Fine-lattice sites summarized by coarse site `block_index` after
/// `layer` block-spin steps.
pub fn source_block(side: usize, layer: usize, block_index: usize) -> Vec<usize> {
    let b = 1usize << layer;
    let coarse = side / b;
    let (bx, by) = (block_index % coarse, block_index / coarse);
    let mut out = Vec::with_capacity(b * b);
    for y in by * b..(by + 1) * b {
        for x in bx * b..(bx + 1) * b {
            out.push(y * side + x);
        }
    }
    out
}

/// Mean `|<v h>|` over the source block and over sites farther than
/// `min_distance` (torus distance to the nearest block site).
pub fn locality_contrast(map: &VhCorrelationMap, min_distance: f64) -> (f64, f64) {
    let block = source_block(map.side, map.layer, map.hidden_index);
    let inside = block.iter().map(|&i| libm::fabs(map.values[i])).sum::<f64>() / block.len() as f64;
    let d2_min = min_distance * min_distance;
    let (mut far, mut n) = (0.0, 0usize);
    for (i, v) in map.values.iter().enumerate() {
        let d2 = block.iter().map(|&j| site_dist2(i, j, map.side)).min().unwrap_or(0);
        if d2 as f64 > d2_min {
            far += libm::fabs(*v);
            n += 1;
        }
    }
    (inside, if n == 0 { f64::NAN } else { far / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LatticeGeometry;
    use crate::rg::block_spin_with;
    use crate::rng::fair_spin;

    fn random_set(side: usize, n: usize, seed: u64) -> SampleSet {
        let mut rng = seeded(seed);
        let geom = LatticeGeometry::new(side, 3.0, 0.0).unwrap();
        SampleSet::new(geom, 7.7, (0..n).map(|_| SpinGrid::random(side, &mut rng)).collect()).unwrap()
    }

    #[test]
    fn spec_enforces_quarter_shrink() {
        let cfg = TrainConfig::default();
        assert!(StackSpec::uniform(PAPER_LAYER_SIZES.to_vec(), cfg).is_ok());
        assert!(StackSpec::uniform(DESK_LAYER_SIZES.to_vec(), cfg).is_ok());
        assert!(StackSpec::uniform(vec![1024, 512, 128], cfg).is_err());
        assert!(StackSpec::new(vec![64, 16], vec![]).is_err());
        let s = StackSpec::uniform(vec![64, 16, 4], TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_eq!(s.train_configs()[1].seed, 11);
    }

    #[test]
    fn stack_shapes_and_determinism() {
        let set = random_set(8, 40, 1);
        let cfg = TrainConfig { steps: 5, batch_size: 10, learning_rate: 0.01, seed: 4, ..TrainConfig::default() };
        let spec = StackSpec::uniform(vec![64, 16, 4], cfg).unwrap();
        let a = train_stack(&set, &spec).unwrap();
        assert_eq!(a.layers.len(), 2);
        assert_eq!((a.layers[0].n_visible(), a.layers[0].n_hidden()), (64, 16));
        assert_eq!((a.layers[1].n_visible(), a.layers[1].n_hidden()), (16, 4));
        assert_eq!(a, train_stack(&set, &spec).unwrap());
        let hidden = stack_hidden_sets(&set, &a.layers, &mut seeded(0)).unwrap();
        assert_eq!(hidden[0].geometry().side(), 4);
        assert_eq!(hidden[1].geometry().side(), 2);
        assert!(hidden.iter().all(|h| h.len() == 40));
        assert!(train_stack(&random_set(4, 10, 0), &spec).is_err());
    }

    #[test]
    fn dead_hidden_unit_has_flat_map() {
        let set = random_set(8, 4000, 2);
        let mut p = RbmParams::random(64, 16, 1.0, &mut seeded(3));
        for i in 0..64 {
            p.weights.set(i, 5, 0.0);
        }
        p.hidden_bias[5] = 0.0;
        let map = vh_map_rbm(&set, &[p], 1, 5, &mut seeded(1)).unwrap();
        let bound = 3.0 / libm::sqrt(4000.0);
        // a few entries may exceed 3 sigma by chance; require the bulk inside
        let inside = map.values.iter().filter(|v| v.abs() < bound).count();
        assert!(inside >= 60, "{inside}");
        assert!(map.values.iter().all(|v| v.abs() < 5.0 * bound));
    }

    #[test]
    fn index_checks() {
        let set = random_set(8, 3, 0);
        let p = RbmParams::zeros(64, 16);
        assert!(vh_map_rbm(&set, std::slice::from_ref(&p), 2, 0, &mut seeded(0)).is_err());
        assert!(vh_map_rbm(&set, &[p], 1, 16, &mut seeded(0)).is_err());
        assert!(vh_map_rg(&set, 0, 0, &mut seeded(0)).is_err());
        assert!(vh_map_rg(&set, 1, 16, &mut seeded(0)).is_err());
    }

    #[test]
    fn ordered_ensemble_gives_unit_map() {
        let geom = LatticeGeometry::new(8, 3.0, 0.0).unwrap();
        let set = SampleSet::new(geom, 0.0, vec![SpinGrid::uniform(8, 1).unwrap(); 5]).unwrap();
        for layer in 1..=3 {
            let c = vh_correlations_rg(&set, layer, &mut seeded(0)).unwrap();
            assert!(c.matrix.as_slice().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn rg_maps_are_bounded_and_local_for_noise() {
        let set = random_set(8, 2000, 5);
        let c = vh_correlations_rg(&set, 1, &mut seeded(0)).unwrap();
        assert!(c.matrix.as_slice().iter().all(|x| (-1.0..=1.0).contains(x)));
        for a in 0..c.n_hidden() {
            let (inside, far) = locality_contrast(&c.map(a).unwrap(), 2.0);
            assert!(inside > 0.3 && far < 0.1, "{inside} {far}");
        }
    }

    #[test]
    fn symmetrized_ensemble_map_is_flip_invariant() {
        let base = random_set(4, 50, 8);
        let mut grids = base.grids().to_vec();
        grids.extend(base.negated().into_grids());
        let sym = SampleSet::new(*base.geometry(), 1.0, grids).unwrap();
        let flipped = sym.negated();
        let map = |s: &SampleSet, mirror: bool| {
            let mut rng = seeded(6);
            let mut acc = Matrix::zeros(4, 16);
            for g in s.grids() {
                let h = block_spin_with(g, || if mirror { -fair_spin(&mut rng) } else { fair_spin(&mut rng) }).unwrap();
                accumulate_vh(&mut acc, g.spins(), h.spins());
            }
            acc
        };
        assert_eq!(map(&sym, false), map(&flipped, true));
    }

    #[test]
    fn source_blocks() {
        assert_eq!(source_block(4, 1, 0), vec![0, 1, 4, 5]);
        assert_eq!(source_block(4, 1, 3), vec![10, 11, 14, 15]);
        assert_eq!(source_block(8, 2, 1).len(), 16);
    }

    #[test]
    fn ranking_orders_by_variance() {
        let m = Matrix::from_vec(2, 4, vec![0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 1.0, -1.0]);
        let c = VhCorrelations { layer: 1, side: 2, matrix: m };
        assert_eq!(c.ranked_by_variance()[0].0, 1);
    }
}
