//! Magnetization, spin and energy-density two-point correlators, power-law
//! fits for scaling dimensions, and `T_c` from the `Delta_eps = 1` crossing.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{all_local_fields, min_image_dist2, CouplingKernel, SpinGrid};
use crate::mcmc::SampleSet;

pub fn magnetization(grid: &SpinGrid) -> f64 {
    grid.magnetization()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatorBin {
    pub distance: f64,
    /// Squared distance; an exact key for the bin.
    pub dist2: usize,
    pub mean: f64,
    /// Number of (sample, ordered site pair) products averaged.
    pub count: u64,
    /// Standard error of `mean` across samples.
    pub std_err: f64,
}

/// Two-point correlator binned by exact minimum-image distance, ascending.
/// The first bin is `r = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorProfile {
    pub bins: Vec<CorrelatorBin>,
}

impl CorrelatorProfile {
    pub fn at_dist2(&self, dist2: usize) -> Option<&CorrelatorBin> {
        self.bins.iter().find(|b| b.dist2 == dist2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelatorMode {
    /// `<s_i s_j>` as is.
    #[default]
    Raw,
    /// `<s_i s_j> - <s>^2`, with `<s>` the ensemble and lattice mean.
    Connected,
}

/// Displacement-to-bin lookup for one lattice side.
struct DistanceBins {
    /// Sorted distinct squared distances.
    dist2: Vec<usize>,
    /// Bin of displacement `dy * side + dx`.
    of_displacement: Vec<usize>,
    /// Displacements per bin.
    multiplicity: Vec<usize>,
}

impl DistanceBins {
    fn new(side: usize) -> Self {
        let mut keys = BTreeMap::new();
        for dy in 0..side {
            for dx in 0..side {
                keys.insert(min_image_dist2(dx, dy, side), 0usize);
            }
        }
        let dist2: Vec<usize> = keys.keys().copied().collect();
        for (i, d) in dist2.iter().enumerate() {
            keys.insert(*d, i);
        }
        let mut multiplicity = vec![0; dist2.len()];
        let mut of_displacement = Vec::with_capacity(side * side);
        for dy in 0..side {
            for dx in 0..side {
                let b = keys[&min_image_dist2(dx, dy, side)];
                multiplicity[b] += 1;
                of_displacement.push(b);
            }
        }
        Self { dist2, of_displacement, multiplicity }
    }
}

/// Binned `<x_i x_j>` over all ordered site pairs of every sample, where
/// `values` holds one length-`side^2` field per sample.
fn binned_correlator<'a>(side: usize, values: impl Iterator<Item = &'a [f64]>) -> CorrelatorProfile {
    let bins = DistanceBins::new(side);
    let n = side * side;
    let nb = bins.dist2.len();
    let mut sum = vec![0.0; nb];
    let mut sum_sq = vec![0.0; nb];
    let mut samples = 0u64;
    let mut per_disp = vec![0.0; n];
    let mut per_bin = vec![0.0; nb];
    for x in values {
        debug_assert_eq!(x.len(), n);
        per_disp.iter_mut().for_each(|v| *v = 0.0);
        for yi in 0..side {
            for xi in 0..side {
                let xv = x[yi * side + xi];
                if xv == 0.0 {
                    continue;
                }
                for dy in 0..side {
                    let yj = (yi + dy) % side;
                    let row = &x[yj * side..(yj + 1) * side];
                    let out = &mut per_disp[dy * side..(dy + 1) * side];
                    // dx = xj - xi (mod side), as two contiguous runs
                    let (head, tail) = out.split_at_mut(side - xi);
                    for (o, r) in head.iter_mut().zip(&row[xi..]) {
                        *o += xv * r;
                    }
                    for (o, r) in tail.iter_mut().zip(&row[..xi]) {
                        *o += xv * r;
                    }
                }
            }
        }
        per_bin.iter_mut().for_each(|v| *v = 0.0);
        for (d, &b) in bins.of_displacement.iter().enumerate() {
            per_bin[b] += per_disp[d];
        }
        for b in 0..nb {
            let mean = per_bin[b] / (bins.multiplicity[b] * n) as f64;
            sum[b] += mean;
            sum_sq[b] += mean * mean;
        }
        samples += 1;
    }
    let s = samples as f64;
    let out = (0..nb)
        .map(|b| {
            let mean = sum[b] / s;
            let var = if samples > 1 { ((sum_sq[b] - s * mean * mean) / (s - 1.0)).max(0.0) } else { 0.0 };
            CorrelatorBin {
                distance: libm::sqrt(bins.dist2[b] as f64),
                dist2: bins.dist2[b],
                mean,
                count: samples * (bins.multiplicity[b] * n) as u64,
                std_err: libm::sqrt(var / s),
            }
        })
        .collect();
    CorrelatorProfile { bins: out }
}

fn require_samples(samples: &SampleSet, needed: usize) -> Result<()> {
    if samples.len() < needed {
        return Err(Error::NotEnoughSamples { needed, got: samples.len() });
    }
    Ok(())
}

/// Spin two-point correlator, binned by distance.
pub fn spin_correlator(samples: &SampleSet, mode: CorrelatorMode) -> Result<CorrelatorProfile> {
    require_samples(samples, 2)?;
    let side = samples.geometry().side();
    let fields: Vec<Vec<f64>> = samples
        .grids()
        .iter()
        .map(|g| g.spins().iter().map(|&s| s as f64).collect())
        .collect();
    let mut profile = binned_correlator(side, fields.iter().map(Vec::as_slice));
    if mode == CorrelatorMode::Connected {
        let total: f64 = fields.iter().flatten().sum();
        let m = total / (fields.len() * side * side) as f64;
        for b in &mut profile.bins {
            b.mean -= m * m;
        }
    }
    Ok(profile)
}

/// Per-sample energy density `eps_i = s_i * field_i - mean_i`, where the
/// mean of `s_i * field_i` is taken over the ensemble at each site.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDensityField {
    pub values: Vec<Vec<f64>>,
    pub mean_field: Vec<f64>,
    pub n_samples: usize,
}

pub fn energy_density(samples: &SampleSet, kernel: &CouplingKernel) -> Result<EnergyDensityField> {
    require_samples(samples, 2)?;
    if kernel.side() != samples.geometry().side() {
        return Err(Error::DimensionMismatch { expected: samples.geometry().side(), actual: kernel.side() });
    }
    let n = samples.geometry().sites();
    let mut values: Vec<Vec<f64>> = samples
        .grids()
        .iter()
        .map(|g| {
            let f = all_local_fields(g, kernel);
            g.spins().iter().zip(f).map(|(&s, h)| s as f64 * h).collect()
        })
        .collect();
    let mut mean = vec![0.0; n];
    for v in &values {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let ns = values.len() as f64;
    mean.iter_mut().for_each(|m| *m /= ns);
    for v in &mut values {
        for (x, m) in v.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    Ok(EnergyDensityField { values, mean_field: mean, n_samples: samples.len() })
}

/// Energy-density two-point correlator, binned by distance.
pub fn energy_correlator(samples: &SampleSet, kernel: &CouplingKernel) -> Result<CorrelatorProfile> {
    let eps = energy_density(samples, kernel)?;
    Ok(binned_correlator(samples.geometry().side(), eps.values.iter().map(Vec::as_slice)))
}

/// `C(r) = B / r^(2 Delta)` fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub delta: f64,
    /// Standard error of `delta` from the regression residuals.
    pub delta_err: f64,
    pub amplitude: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub r_range: (f64, f64),
    pub bins_used: usize,
}

/// Least-squares line through `(ln r, ln C)` over bins with
/// `r_min <= r <= r_max` and `C > 0`.
pub fn fit_power_law(profile: &CorrelatorProfile, r_min: f64, r_max: f64) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> = profile
        .bins
        .iter()
        .filter(|b| b.distance > 0.0 && b.distance >= r_min - 1e-12 && b.distance <= r_max + 1e-12)
        .filter(|b| b.mean > 0.0 && b.mean.is_finite())
        .map(|b| (libm::log(b.distance), libm::log(b.mean)))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::TooFewBins { usable: n });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let slope_err = libm::sqrt(ss_res / (nf - 2.0) / sxx);
    Ok(PowerLawFit {
        delta: -slope / 2.0 + 0.0,
        delta_err: slope_err / 2.0,
        amplitude: libm::exp(intercept),
        residual: libm::sqrt(ss_res / nf),
        r_range: (r_min, r_max),
        bins_used: n,
    })
}

/// Default fit window `[1, L/2]`.
pub fn default_fit_window(side: usize) -> (f64, f64) {
    (1.0, side as f64 / 2.0)
}

/// Direction of a level crossing in increasing `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Any,
    Upward,
    Downward,
}

/// First crossing of `value = target` in the given direction, scanning in
/// increasing `T` and interpolating linearly. Non-finite values are
/// skipped. A point sitting exactly on the target counts when the curve
/// arrives there from the allowed side (or starts there).
pub fn find_crossing(curve: &[(f64, f64)], target: f64, direction: Crossing) -> Result<f64> {
    let mut pts: Vec<(f64, f64)> = curve.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let allowed = |from: f64| match direction {
        Crossing::Any => true,
        Crossing::Upward => from < 0.0,
        Crossing::Downward => from > 0.0,
    };
    for (k, p) in pts.iter().enumerate() {
        let d = p.1 - target;
        if d == 0.0 && (k == 0 || allowed(pts[k - 1].1 - target)) {
            return Ok(p.0);
        }
        if let Some(next) = pts.get(k + 1) {
            let d1 = next.1 - target;
            if d * d1 < 0.0 && allowed(d) {
                return Ok(p.0 + (next.0 - p.0) * d / (d - d1));
            }
        }
    }
    Err(Error::NoCrossing { target })
}

/// `T_c` as the first temperature where `Delta_eps` rises through 1.
/// Downward crossings deep in the ordered phase are ignored.
pub fn find_tc(delta_eps_curve: &[(f64, f64)]) -> Result<f64> {
    find_crossing(delta_eps_curve, 1.0, Crossing::Upward)
}

/// Linear interpolation of a curve at `t`; `None` outside its range.
pub fn interpolate(curve: &[(f64, f64)], t: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = curve.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.windows(2).find(|w| w[0].0 <= t && t <= w[1].0).map(|w| {
        if w[1].0 == w[0].0 {
            w[0].1
        } else {
            w[0].1 + (w[1].1 - w[0].1) * (t - w[0].0) / (w[1].0 - w[0].0)
        }
    })
}

/// Mean and batch-means standard error of a correlated time series.
pub fn batch_means(values: &[f64], n_batches: usize) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let nb = n_batches.min(n).max(2);
    let size = n / nb;
    if size == 0 {
        return (mean, f64::NAN);
    }
    let means: Vec<f64> = (0..nb)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bm = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|m| (m - bm) * (m - bm)).sum::<f64>() / (nb - 1) as f64;
    (mean, libm::sqrt(var / nb as f64))
}
