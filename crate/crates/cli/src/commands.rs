use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use lrflow_core::flow::{measure_flow, rbm_flow};
use lrflow_core::geometry::build_kernel;
use lrflow_core::mcmc::{run_chain, McmcConfig, SampleSet};
use lrflow_core::observables::{
    default_fit_window, energy_correlator, find_tc, fit_power_law, interpolate, spin_correlator, CorrelatorMode,
    PowerLawFit,
};
use lrflow_core::rbm::{train, RbmParams};
use lrflow_core::rg::rg_flow;
use lrflow_core::rng::{derive_seed, seeded};
use lrflow_core::stack::{
    stack_hidden_sets, train_stack, vh_correlations_rbm, vh_correlations_rg, StackSpec, VhCorrelations,
};
use lrflow_core::thermometer::{labeled_from_sets, measure_set, train_thermometer, TemperatureReading, ThermometerModel};
use lrflow_core::LatticeGeometry;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{
    encode_pgm, read_rbm, read_samples, read_thermometer, write_bytes, write_rbm, write_samples, write_thermometer,
    Cell, Csv,
};

/// Number of top-variance hidden units per layer exported as graymaps.
pub const PGM_PER_LAYER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Sample,
    Scaling,
    RbmTrain,
    Thermo,
    Flow,
    Stack,
    Rg,
    Vh,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Scaling => "scaling",
            Self::RbmTrain => "rbm-train",
            Self::Thermo => "thermo",
            Self::Flow => "flow",
            Self::Stack => "stack",
            Self::Rg => "rg",
            Self::Vh => "vh",
        }
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(dir.display().to_string())),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn sample_file_name(side: usize, temperature: f64) -> String {
    format!("samples_L{side}_T{temperature:.2}.spnl")
}

pub fn thermometer_file_name(side: usize) -> String {
    format!("thermo_L{side}.thrm")
}

/// Chain seed for one (size, temperature) pair, independent of which
/// other sizes or temperatures are sampled alongside it.
pub fn chain_seed(base: u64, side: usize, temperature: f64) -> u64 {
    derive_seed(base, ((side as u64) << 32) | (temperature * 100.0).round() as u64)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
    written: Vec<PathBuf>,
}

impl<'a> Ctx<'a> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn geometry(&self, side: usize) -> CliResult<LatticeGeometry> {
        Ok(LatticeGeometry::new(side, self.cfg.lattice.alpha, self.cfg.lattice.mu)?)
    }

    fn csv(&self, seed: u64, header: &[&str]) -> Csv {
        Csv::new(&self.hash, seed, header)
    }

    fn csv_with_probs(&self, seed: u64, head: &[&str], classes: &[f64]) -> Csv {
        let mut cols: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        cols.extend(classes.iter().map(|t| format!("p_T{t}")));
        Csv::with_columns(&self.hash, seed, cols)
    }

    fn emit_csv(&mut self, name: &str, csv: &Csv) -> CliResult<()> {
        let p = self.path(name);
        csv.write(&p)?;
        self.written.push(p);
        Ok(())
    }

    fn emit_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(name);
        write_bytes(&p, bytes)?;
        self.written.push(p);
        Ok(())
    }

    fn load_samples(&self, side: usize, temperature: f64) -> CliResult<SampleSet> {
        let (_, set) = read_samples(&self.path(&sample_file_name(side, temperature)), self.cfg.lattice.mu)?;
        if set.geometry().side() != side {
            return Err(CliError::format(&self.path(&sample_file_name(side, temperature)), "lattice size mismatch"));
        }
        Ok(set)
    }

    fn load_thermometer(&self, side: usize) -> CliResult<ThermometerModel> {
        let p = self.path(&thermometer_file_name(side));
        let m = read_thermometer(&p)?;
        if m.input_dim() != side * side {
            return Err(CliError::format(&p, "thermometer input size does not match its file name"));
        }
        Ok(m)
    }
}

fn require(paths: &[(PathBuf, &'static str)]) -> CliResult<()> {
    match paths.iter().find(|(p, _)| !p.is_file()) {
        Some((p, producer)) => Err(CliError::missing(p, producer)),
        None => Ok(()),
    }
}

/// Checks the command's inputs, takes the output lock, runs it and
/// returns the files written.
pub fn run(command: Command, cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let mut ctx = Ctx { cfg, hash: cfg.hash(), written: Vec::new() };
    require(&inputs(command, &ctx))?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    match command {
        Command::Sample => cmd_sample(&mut ctx)?,
        Command::Scaling => cmd_scaling(&mut ctx)?,
        Command::RbmTrain => cmd_rbm_train(&mut ctx)?,
        Command::Thermo => cmd_thermo(&mut ctx)?,
        Command::Flow => cmd_flow(&mut ctx)?,
        Command::Stack => cmd_stack(&mut ctx)?,
        Command::Rg => cmd_rg(&mut ctx)?,
        Command::Vh => cmd_vh(&mut ctx)?,
    }
    Ok(ctx.written)
}

fn inputs(command: Command, ctx: &Ctx<'_>) -> Vec<(PathBuf, &'static str)> {
    let cfg = ctx.cfg;
    let l = cfg.lattice.side;
    let samples = |side: usize, temps: &[f64]| -> Vec<(PathBuf, &'static str)> {
        temps.iter().map(|&t| (ctx.path(&sample_file_name(side, t)), "sample")).collect()
    };
    let thermo = |side: usize| (ctx.path(&thermometer_file_name(side)), "thermo");
    let stack_side = cfg.stack_side().unwrap_or(0);
    let stack_seed = || samples(stack_side, &[cfg.stack.seed_temperature]);
    let coarse_sides = |steps: usize| (1..=steps).map(move |k| stack_side >> k);
    match command {
        Command::Sample => Vec::new(),
        Command::Scaling => samples(l, &cfg.mcmc.temps),
        Command::RbmTrain => samples(l, &cfg.rbm.train_temps),
        Command::Thermo => cfg.thermometer_sizes().into_iter().flat_map(|s| samples(s, cfg.thermometer_temps())).collect(),
        Command::Flow => {
            let mut v = samples(l, &[cfg.flow.seed_temperature]);
            v.push((ctx.path("rbm.rbmw"), "rbm-train"));
            if cfg.flow.measure_temperature {
                v.push(thermo(l));
            }
            v
        }
        Command::Stack => {
            let mut v = stack_seed();
            if cfg.stack.measure_temperature {
                v.extend(coarse_sides(cfg.stack_layer_sizes().len() - 1).map(thermo));
            }
            v
        }
        Command::Rg => {
            let mut v = stack_seed();
            if cfg.stack.measure_temperature {
                v.extend(coarse_sides(cfg.stack.rg_steps).map(thermo));
            }
            v
        }
        Command::Vh => {
            let mut v = stack_seed();
            let depth = cfg.stack_layer_sizes().len() - 1;
            v.extend((1..=depth).map(|k| (ctx.path(&format!("stack_layer{k}.rbmw")), "stack")));
            v
        }
    }
}

fn cmd_sample(ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.cfg;
    for side in cfg.sample_sizes() {
        let geom = ctx.geometry(side)?;
        let kernel = build_kernel(&geom);
        for &t in &cfg.mcmc.temps {
            let seed = chain_seed(cfg.mcmc.seed, side, t);
            let mc = McmcConfig { temperature: t, burn_in: cfg.burn_in(side), stride: cfg.stride(side), seed };
            let set = run_chain(&geom, &kernel, &mc, cfg.mcmc.n_samples)?;
            let p = ctx.path(&sample_file_name(side, t));
            write_samples(&p, &set, seed)?;
            ctx.written.push(p);
        }
    }
    Ok(())
}

fn fit_cells(fit: Option<&PowerLawFit>) -> [Cell; 3] {
    match fit {
        Some(f) => [f.delta.into(), f.delta_err.into(), f.residual.into()],
        None => [Cell::Empty, Cell::Empty, Cell::Empty],
    }
}

fn cmd_scaling(ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let l = cfg.lattice.side;
    let kernel = build_kernel(&ctx.geometry(l)?);
    let (r_min, r_max) = default_fit_window(l);
    let mut csv = ctx.csv(
        cfg.mcmc.seed,
        &["T", "delta_s", "delta_s_err", "residual_s", "delta_e", "delta_e_err", "residual_e", "mean_abs_m"],
    );
    let (mut ds_curve, mut de_curve) = (Vec::new(), Vec::new());
    for &t in &cfg.mcmc.temps {
        let set = ctx.load_samples(l, t)?;
        let fs = spin_correlator(&set, CorrelatorMode::Raw).ok().and_then(|p| fit_power_law(&p, r_min, r_max).ok());
        let fe = energy_correlator(&set, &kernel).ok().and_then(|p| fit_power_law(&p, r_min, r_max).ok());
        if let Some(f) = &fs {
            ds_curve.push((t, f.delta));
        }
        if let Some(f) = &fe {
            de_curve.push((t, f.delta));
        }
        let [a, b, c] = fit_cells(fs.as_ref());
        let [d, e, f] = fit_cells(fe.as_ref());
        csv.row([Cell::from(t), a, b, c, d, e, f, Cell::from(set.mean_abs_magnetization())]);
    }
    ctx.emit_csv("scaling.csv", &csv)?;
    let tc = find_tc(&de_curve).ok();
    let mut tcsv = ctx.csv(cfg.mcmc.seed, &["tc", "delta_s_at_tc"]);
    tcsv.row([Cell::from(tc), Cell::from(tc.and_then(|t| interpolate(&ds_curve, t)))]);
    ctx.emit_csv("tc.csv", &tcsv)
}

fn load_training_data(ctx: &Ctx<'_>, side: usize, temps: &[f64]) -> CliResult<Vec<SampleSet>> {
    temps.iter().map(|&t| ctx.load_samples(side, t)).collect()
}

fn cmd_rbm_train(ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let sets = load_training_data(ctx, cfg.lattice.side, &cfg.rbm.train_temps)?;
    let data: Vec<&[i8]> = sets.iter().flat_map(|s| s.grids().iter().map(|g| g.spins())).collect();
    let trained = train(&data, cfg.rbm.n_hidden, &cfg.rbm_train_config())?;
    let p = ctx.path("rbm.rbmw");
    write_rbm(&p, &trained.params)?;
    ctx.written.push(p);
    let mut csv = ctx.csv(cfg.rbm.seed, &["step", "reconstruction_error"]);
    for (k, e) in trained.trace.iter().enumerate() {
        csv.row([Cell::from(k + 1), Cell::from(*e)]);
    }
    ctx.emit_csv("rbm_trace.csv", &csv)
}

fn reading_cells(r: Option<&TemperatureReading>, n_classes: usize) -> Vec<Cell> {
    match r {
        Some(r) => [Cell::from(r.mean_temperature), Cell::from(r.argmax_temperature)]
            .into_iter()
            .chain(r.probabilities.iter().map(|&p| Cell::from(p)))
            .collect(),
        None => vec![Cell::Empty; 2 + n_classes],
    }
}

fn cmd_thermo(ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let temps = cfg.thermometer_temps().to_vec();
    let mut summary = ctx.csv(cfg.thermometer.seed, &["L", "holdout_accuracy", "final_loss"]);
    for (k, side) in cfg.thermometer_sizes().into_iter().enumerate() {
        let sets = load_training_data(ctx, side, &temps)?;
        let tcfg = cfg.thermometer_config(k);
        let trained = train_thermometer(&labeled_from_sets(&sets), &temps, &tcfg)?;
        let p = ctx.path(&thermometer_file_name(side));
        write_thermometer(&p, &trained.model)?;
        ctx.written.push(p);
        let mut curve = ctx.csv_with_probs(tcfg.seed, &["T", "mean_temperature", "argmax_temperature"], &temps);
        for set in &sets {
            let r = measure_set(&trained.model, set)?;
            curve.row(std::iter::once(Cell::from(set.temperature())).chain(reading_cells(Some(&r), temps.len())));
        }
        ctx.emit_csv(&format!("thermo_L{side}.csv"), &curve)?;
        summary.row([Cell::from(side), Cell::from(trained.holdout_accuracy), Cell::from(trained.epoch_loss.last().copied())]);
    }
    ctx.emit_csv("thermo_summary.csv", &summary)
}

fn cmd_flow(ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let l = cfg.lattice.side;
    let t0 = cfg.flow.seed_temperature;
    let seed_set = ctx.load_samples(l, t0)?;
    let params = read_rbm(&ctx.path("rbm.rbmw"), "rbm-train")?;
    let thermo = if cfg.flow.measure_temperature { Some(ctx.load_thermometer(l)?) } else { None };
    let kernel = build_kernel(&ctx.geometry(l)?);
    let mut rng = seeded(cfg.flow.seed);
    let mut trace = rbm_flow(&seed_set, &params, cfg.flow.length, &mut rng)?;
    measure_flow(&mut trace, &kernel, thermo.as_ref(), default_fit_window(l))?;
    let classes = thermo.as_ref().map(|m| m.classes.clone()).unwrap_or_default();
    let mut csv = ctx.csv_with_probs(
        cfg.flow.seed,
        &["step", "delta_s", "delta_s_err", "delta_e", "delta_e_err", "mean_abs_m", "temp_mean", "temp_argmax"],
        &classes,
    );
    for s in &trace.steps {
        let mut row = vec![
            Cell::from(s.step),
            Cell::from(s.delta_s.map(|f| f.delta)),
            Cell::from(s.delta_s.map(|f| f.delta_err)),
            Cell::from(s.delta_eps.map(|f| f.delta)),
            Cell::from(s.delta_eps.map(|f| f.delta_err)),
            Cell::from(s.samples.mean_abs_magnetization()),
        ];
        row.extend(reading_cells(s.temperature.as_ref(), classes.len()));
        csv.row(row);
    }
    ctx.emit_csv(&format!("flow_T{t0:.2}.csv"), &csv)
}

fn stack_seed_set(ctx: &Ctx<'_>) -> CliResult<SampleSet> {
    let side = ctx.cfg.stack_side().ok_or(CliError::Config("stack input is not square".into()))?;
    ctx.load_samples(side, ctx.cfg.stack.seed_temperature)
}

/// Rows of `(index, side, reading...)` for a chain of coarse ensembles.
fn temperature_table(ctx: &Ctx<'_>, label: &str, seed: u64, sets: &[SampleSet]) -> CliResult<Csv> {
    let models = sets
        .iter()
        .map(|s| ctx.load_thermometer(s.geometry().side()))
        .collect::<CliResult<Vec<_>>>()?;
    let classes = models.first().map(|m| m.classes.clone()).unwrap_or_default();
    let mut csv = ctx.csv_with_probs(seed, &[label, "L", "mean_temperature", "argmax_temperature"], &classes);
    for (k, (set, model)) in sets.iter().zip(&models).enumerate() {
        if model.classes != classes {
            return Err(CliError::Config("thermometers must share one class grid".into()));
        }
        let r = measure_set(model, set)?;
        csv.row([Cell::from(k + 1), Cell::from(set.geometry().side())].into_iter().chain(reading_cells(Some(&r), classes.len())));
    }
    Ok(csv)
}

fn cmd_stack(ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let seed_set = stack_seed_set(ctx)?;
    let spec = StackSpec::uniform(cfg.stack_layer_sizes(), cfg.stack_train_config())?;
    let trained = train_stack(&seed_set, &spec)?;
    for (k, layer) in trained.layers.iter().enumerate() {
        let p = ctx.path(&format!("stack_layer{}.rbmw", k + 1));
        write_rbm(&p, layer)?;
        ctx.written.push(p);
    }
    let mut trace = ctx.csv(cfg.stack.seed, &["layer", "step", "reconstruction_error"]);
    for (k, t) in trained.traces.iter().enumerate() {
        for (s, e) in t.iter().enumerate() {
            trace.row([Cell::from(k + 1), Cell::from(s + 1), Cell::from(*e)]);
        }
    }
    ctx.emit_csv("stack_trace.csv", &trace)?;
    if cfg.stack.measure_temperature {
        let mut rng = seeded(derive_seed(cfg.stack.seed, 1 << 40));
        let hidden = stack_hidden_sets(&seed_set, &trained.layers, &mut rng)?;
        let csv = temperature_table(ctx, "layer", cfg.stack.seed, &hidden)?;
        ctx.emit_csv("stack_temps.csv", &csv)?;
    }
    Ok(())
}

fn cmd_rg(ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let seed_set = stack_seed_set(ctx)?;
    let mut rng = seeded(cfg.stack.seed);
    let steps = rg_flow(&seed_set, cfg.stack.rg_steps, &mut rng)?;
    for (k, set) in steps.iter().enumerate() {
        let p = ctx.path(&format!("rg_step{}.spnl", k + 1));
        write_samples(&p, set, cfg.stack.seed)?;
        ctx.written.push(p);
    }
    if cfg.stack.measure_temperature {
        let csv = temperature_table(ctx, "step", cfg.stack.seed, &steps)?;
        ctx.emit_csv("rg_temps.csv", &csv)?;
    }
    Ok(())
}

fn emit_vh(ctx: &mut Ctx<'_>, source: &str, c: &VhCorrelations, manifest: &mut Csv) -> CliResult<()> {
    let n = c.side * c.side;
    let mut cols = vec!["hidden_index".to_owned()];
    cols.extend((0..n).map(|i| format!("v{i}")));
    let mut m = Csv::with_columns(&ctx.hash, ctx.cfg.stack.seed, cols);
    for a in 0..c.n_hidden() {
        m.row(std::iter::once(Cell::from(a)).chain(c.matrix.row(a).iter().map(|&x| Cell::from(x))));
    }
    let matrix_name = format!("vh_{source}_l{}.csv", c.layer);
    ctx.emit_csv(&matrix_name, &m)?;
    for (rank, (a, var)) in c.ranked_by_variance().into_iter().enumerate() {
        let pgm = if rank < PGM_PER_LAYER {
            let name = format!("vh_{source}_l{}_h{a}.pgm", c.layer);
            ctx.emit_bytes(&name, &encode_pgm(c.matrix.row(a), c.side))?;
            name
        } else {
            String::new()
        };
        manifest.row([
            Cell::from(source),
            Cell::from(c.layer),
            Cell::from(a),
            Cell::from(var),
            Cell::from(rank + 1),
            Cell::from(matrix_name.as_str()),
            Cell::Text(pgm),
        ]);
    }
    Ok(())
}

fn cmd_vh(ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let seed_set = stack_seed_set(ctx)?;
    let depth = cfg.stack_layer_sizes().len() - 1;
    let layers = (1..=depth)
        .map(|k| read_rbm(&ctx.path(&format!("stack_layer{k}.rbmw")), "stack"))
        .collect::<CliResult<Vec<RbmParams>>>()?;
    let mut manifest = ctx.csv(cfg.stack.seed, &["source", "layer", "hidden_index", "variance", "rank", "matrix_file", "pgm_file"]);
    let mut rng = seeded(derive_seed(cfg.stack.seed, 2 << 40));
    for layer in 1..=depth {
        let c = vh_correlations_rbm(&seed_set, &layers, layer, cfg.rbm.hidden.into(), &mut rng)?;
        emit_vh(ctx, "rbm", &c, &mut manifest)?;
    }
    for layer in 1..=depth {
        let c = vh_correlations_rg(&seed_set, layer, &mut rng)?;
        emit_vh(ctx, "rg", &c, &mut manifest)?;
    }
    ctx.emit_csv("vh_manifest.csv", &manifest)
}
