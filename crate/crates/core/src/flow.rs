//! RBM flows `v1 -> h1 -> v2 -> h2 -> ...` and their measurements.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{CouplingKernel, SpinGrid};
use crate::mcmc::SampleSet;
use crate::observables::{energy_correlator, fit_power_law, spin_correlator, CorrelatorMode, PowerLawFit};
use crate::rbm::RbmParams;
use crate::thermometer::{measure_set, TemperatureReading, ThermometerModel};

/// Default flow length.
pub const DEFAULT_FLOW_LENGTH: usize = 50;

/// Steps averaged by [`plateau`].
pub const PLATEAU_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStep {
    /// 1-based; step 1 is the seed ensemble.
    pub step: usize,
    pub samples: SampleSet,
    pub delta_s: Option<PowerLawFit>,
    pub delta_eps: Option<PowerLawFit>,
    pub temperature: Option<TemperatureReading>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub steps: Vec<FlowStep>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn delta_s(&self) -> Vec<Option<f64>> {
        self.steps.iter().map(|s| s.delta_s.map(|f| f.delta)).collect()
    }

    pub fn delta_eps(&self) -> Vec<Option<f64>> {
        self.steps.iter().map(|s| s.delta_eps.map(|f| f.delta)).collect()
    }

    pub fn mean_temperature(&self) -> Vec<Option<f64>> {
        self.steps.iter().map(|s| s.temperature.as_ref().map(|t| t.mean_temperature)).collect()
    }
}

/// Alternately sample hidden and visible layers starting from `seed_set`,
/// keeping every visible ensemble. `length` counts visible ensembles, seed
/// included.
pub fn rbm_flow<R: Rng + ?Sized>(seed_set: &SampleSet, params: &RbmParams, length: usize, rng: &mut R) -> Result<FlowTrace> {
    if length == 0 {
        return Err(Error::InvalidConfig("flow length must be positive"));
    }
    let geom = *seed_set.geometry();
    if geom.sites() != params.n_visible() {
        return Err(Error::DimensionMismatch { expected: params.n_visible(), actual: geom.sites() });
    }
    let mut steps = Vec::with_capacity(length);
    steps.push(FlowStep { step: 1, samples: seed_set.clone(), delta_s: None, delta_eps: None, temperature: None });
    let mut h_mean = vec![0.0; params.n_hidden()];
    let mut h = vec![0i8; params.n_hidden()];
    let mut v_mean = vec![0.0; params.n_visible()];
    for k in 2..=length {
        let prev = &steps[k - 2].samples;
        let mut grids = Vec::with_capacity(prev.len());
        for g in prev.grids() {
            let mut v = vec![0i8; params.n_visible()];
            params.sample_hidden_into(g.spins(), &mut h_mean, &mut h, rng);
            params.sample_visible_into(&h, &mut v_mean, &mut v, rng);
            grids.push(SpinGrid::from_spins(geom.side(), v)?);
        }
        let samples = SampleSet::new(geom, seed_set.temperature(), grids)?;
        steps.push(FlowStep { step: k, samples, delta_s: None, delta_eps: None, temperature: None });
    }
    Ok(FlowTrace { steps })
}

/// Fit `Delta_s` and `Delta_eps` in `window` and read the thermometer at
/// every step. Failed fits are recorded as `None`.
pub fn measure_flow(
    trace: &mut FlowTrace,
    kernel: &CouplingKernel,
    thermometer: Option<&ThermometerModel>,
    window: (f64, f64),
) -> Result<()> {
    for step in &mut trace.steps {
        let s = &step.samples;
        if kernel.side() != s.geometry().side() {
            return Err(Error::DimensionMismatch { expected: s.geometry().side(), actual: kernel.side() });
        }
        step.delta_s = spin_correlator(s, CorrelatorMode::Raw).ok().and_then(|p| fit_power_law(&p, window.0, window.1).ok());
        step.delta_eps = energy_correlator(s, kernel).ok().and_then(|p| fit_power_law(&p, window.0, window.1).ok());
        step.temperature = match thermometer {
            Some(t) => Some(measure_set(t, s)?),
            None => None,
        };
    }
    Ok(())
}

/// Mean and standard deviation of the last `window` entries, skipping
/// missing values. `None` if nothing in the window is present.
pub fn plateau(values: &[Option<f64>], window: usize) -> Option<(f64, f64)> {
    let start = values.len().saturating_sub(window);
    let xs: Vec<f64> = values[start..].iter().flatten().copied().collect();
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, libm::sqrt(var)))
}
