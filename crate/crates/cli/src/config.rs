//! Experiment configuration: TOML file, command-line overrides, validation.

use std::fmt;
use std::path::{Path, PathBuf};

use mmwave_mdp::channel::{calibrate_matrix, CalibrationTargets};
use mmwave_mdp::{ChannelMatrix, RateTable, SchemeKind, SimConfig, SolverParams};
use serde::{Deserialize, Serialize};

pub const CACHE_ENV: &str = "MMWAVE_MDP_CACHE";
pub const DEFAULT_CACHE: &str = "policy-cache";
pub const DEFAULT_SWEEP_OH: [f64; 4] = [0.03, 0.06, 0.10, 0.30];
pub const DEFAULT_SWEEP_UES: [u32; 4] = [3, 4, 5, 6];

/// Bad configuration or arguments; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub scenario: ScenarioSection,
    pub solver: SolverSection,
    pub simulation: SimulationSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub bss: Option<usize>,
    pub ues: Option<Vec<u32>>,
    pub oh: Option<f64>,
    pub preset: Option<String>,
    /// Inline transition matrix, rows summing to 1.
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Calibrate a matrix from a stationary law and mean holding times.
    pub calibrate: Option<CalibrateSection>,
    /// Rate per channel state, outage first.
    pub rates: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub stationary: Vec<f64>,
    pub holding: Vec<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub omega: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_sweeps: Option<usize>,
    /// Outer best-response iterations; defaults to 50·N.
    pub max_outer: Option<usize>,
    pub initial_seed: Option<u64>,
    pub allow_unconverged: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub slots: Option<u64>,
    pub warmup: Option<u64>,
    /// Number of seeds, starting at `first_seed`.
    pub seeds: Option<u64>,
    pub first_seed: Option<u64>,
    pub schemes: Option<Vec<String>>,
    pub ub_charges_oh: Option<bool>,
    pub bandwidth_hz: Option<f64>,
    pub slot_seconds: Option<f64>,
    pub symbols_per_slot: Option<u32>,
    pub data_symbols: Option<u32>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub oh: Option<Vec<f64>>,
    pub ues: Option<Vec<u32>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("invalid config {}: {e}", path.display())))
    }
}

/// Values given on the command line; each one wins over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub oh: Option<Vec<f64>>,
    pub ues: Option<Vec<u32>>,
    pub bss: Option<usize>,
    pub slots: Option<u64>,
    pub seeds: Option<u64>,
    pub out: Option<PathBuf>,
    pub schemes: Option<Vec<String>>,
}

/// Which command the experiment is resolved for; it decides the defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Single,
    Sweep,
}

/// Fully resolved experiment, also serialized into the run manifest.
#[derive(Clone, Debug, Serialize)]
pub struct Experiment {
    pub bss: usize,
    pub ues: Vec<u32>,
    pub oh: Vec<f64>,
    pub channel_source: String,
    pub channel: Vec<Vec<f64>>,
    pub channel_hash: String,
    pub rates: Vec<f64>,
    pub omega: f64,
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub max_outer: Option<usize>,
    pub initial_seed: u64,
    pub allow_unconverged: bool,
    pub slots: u64,
    pub warmup: u64,
    pub seeds: Vec<u64>,
    pub schemes: Vec<String>,
    pub ub_charges_oh: bool,
    pub bandwidth_hz: f64,
    pub slot_seconds: f64,
    pub symbols_per_slot: u32,
    pub data_symbols: u32,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(skip)]
    matrix: Option<ChannelMatrix>,
}

fn resolve_channel(s: &ScenarioSection, preset_flag: Option<&String>) -> anyhow::Result<(String, ChannelMatrix)> {
    let preset = preset_flag.or(s.preset.as_ref());
    let given = [preset.is_some(), s.matrix.is_some(), s.calibrate.is_some()].iter().filter(|&&b| b).count();
    // A preset flag replaces whatever channel the file describes.
    if preset_flag.is_none() && given > 1 {
        return Err(config_error("give only one of scenario.preset, scenario.matrix and scenario.calibrate"));
    }
    if let Some(name) = preset {
        let m = ChannelMatrix::preset(name).ok_or_else(|| {
            config_error(format!(
                "unknown channel preset `{name}` (available: {})",
                ChannelMatrix::preset_names().join(", ")
            ))
        })?;
        return Ok((name.clone(), m));
    }
    if let Some(rows) = &s.matrix {
        let m = ChannelMatrix::from_rows(rows).map_err(|e| config_error(format!("scenario.matrix: {e}")))?;
        return Ok(("inline".into(), m));
    }
    if let Some(c) = &s.calibrate {
        let targets = CalibrationTargets::new(c.stationary.clone(), c.holding.clone())
            .map_err(|e| config_error(format!("scenario.calibrate: {e}")))?;
        let cal = calibrate_matrix(&targets)?;
        return Ok(("calibrated".into(), cal.matrix));
    }
    Ok((mmwave_mdp::channel::URBAN_NLOS_DOMINANT.into(), ChannelMatrix::urban_nlos_dominant()))
}

fn check_schemes(names: &[String]) -> anyhow::Result<Vec<String>> {
    if names.is_empty() {
        return Err(config_error("at least one scheme is required"));
    }
    let mut out: Vec<String> = Vec::new();
    for n in names {
        let kind: SchemeKind = n.parse().map_err(|e: mmwave_mdp::Error| config_error(e.to_string()))?;
        if !out.iter().any(|o| o == kind.name()) {
            out.push(kind.name().to_string());
        }
    }
    Ok(out)
}

impl Experiment {
    pub fn resolve(file: &FileConfig, flags: &Overrides, mode: Mode) -> anyhow::Result<Self> {
        let s = &file.scenario;
        let (channel_source, matrix) = resolve_channel(s, flags.preset.as_ref())?;
        let k = matrix.k();
        let rates = match &s.rates {
            Some(r) => r.clone(),
            None if k == 3 => RateTable::default().as_slice().to_vec(),
            None => return Err(config_error(format!("scenario.rates is required for a {k}-state channel"))),
        };
        let table = RateTable::new(rates.clone()).map_err(|e| config_error(format!("scenario.rates: {e}")))?;
        if table.k() != k {
            return Err(config_error(format!("{} rates given for a {k}-state channel", table.k())));
        }

        let (default_ues, default_oh) = match mode {
            Mode::Single => (vec![3], vec![0.1]),
            Mode::Sweep => (DEFAULT_SWEEP_UES.to_vec(), DEFAULT_SWEEP_OH.to_vec()),
        };
        let file_ues = match mode {
            Mode::Single => s.ues.clone(),
            Mode::Sweep => file.sweep.ues.clone().or_else(|| s.ues.clone()),
        };
        let file_oh = match mode {
            Mode::Single => s.oh.map(|o| vec![o]),
            Mode::Sweep => file.sweep.oh.clone().or_else(|| s.oh.map(|o| vec![o])),
        };
        let ues = flags.ues.clone().or(file_ues).unwrap_or(default_ues);
        let oh = flags.oh.clone().or(file_oh).unwrap_or(default_oh);
        if ues.is_empty() || ues.contains(&0) {
            return Err(config_error("UE counts must be positive"));
        }
        if oh.is_empty() {
            return Err(config_error("at least one handover cost is required"));
        }
        if let Some(bad) = oh.iter().find(|o| !(0.0..=1.0).contains(*o)) {
            return Err(config_error(format!("handover cost {bad} outside [0, 1]")));
        }
        let bss = flags.bss.or(s.bss).unwrap_or(3);
        if bss == 0 || bss > u8::MAX as usize {
            return Err(config_error(format!("number of BSs {bss} out of range")));
        }

        let sv = &file.solver;
        let solver = SolverParams {
            omega: sv.omega.unwrap_or(0.9),
            epsilon: sv.epsilon.unwrap_or(1e-6),
            max_sweeps: sv.max_sweeps.unwrap_or(10_000),
        };
        solver.validate().map_err(|e| config_error(e.to_string()))?;

        let sim = &file.simulation;
        let count = flags.seeds.or(sim.seeds).unwrap_or(20);
        if count == 0 {
            return Err(config_error("at least one seed is required"));
        }
        let first = sim.first_seed.unwrap_or(0);
        let default_schemes: Vec<String> = SchemeKind::ALL.iter().map(|k| k.name().to_string()).collect();
        let schemes = check_schemes(&flags.schemes.clone().or(sim.schemes.clone()).unwrap_or(default_schemes))?;

        let cache_dir = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or(file.output.cache.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE));

        let exp = Experiment {
            bss,
            ues,
            oh,
            channel_source,
            channel: matrix.rows(),
            channel_hash: matrix.fingerprint(),
            rates,
            omega: solver.omega,
            epsilon: solver.epsilon,
            max_sweeps: solver.max_sweeps,
            max_outer: sv.max_outer,
            initial_seed: sv.initial_seed.unwrap_or(0),
            allow_unconverged: sv.allow_unconverged.unwrap_or(false),
            slots: flags.slots.or(sim.slots).unwrap_or(100_000),
            warmup: sim.warmup.unwrap_or(1_000),
            seeds: (first..first + count).collect(),
            schemes,
            ub_charges_oh: sim.ub_charges_oh.unwrap_or(true),
            bandwidth_hz: sim.bandwidth_hz.unwrap_or(1e9),
            slot_seconds: sim.slot_seconds.unwrap_or(125e-6),
            symbols_per_slot: sim.symbols_per_slot.unwrap_or(30),
            data_symbols: sim.data_symbols.unwrap_or(24),
            out_dir: flags.out.clone().or(file.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out")),
            cache_dir,
            matrix: Some(matrix),
        };
        // Catches slot/warmup and radio inconsistencies up front.
        exp.sim_config(exp.ues[0], exp.oh[0]).validate().map_err(|e| config_error(e.to_string()))?;
        Ok(exp)
    }

    pub fn matrix(&self) -> &ChannelMatrix {
        self.matrix.as_ref().expect("resolved experiments carry their matrix")
    }

    pub fn rate_table(&self) -> RateTable {
        RateTable::new(self.rates.clone()).expect("validated at resolution")
    }

    pub fn solver(&self) -> SolverParams {
        SolverParams { omega: self.omega, epsilon: self.epsilon, max_sweeps: self.max_sweeps }
    }

    pub fn max_outer(&self, n: u32) -> usize {
        self.max_outer.unwrap_or(50 * n as usize)
    }

    pub fn scheme_kinds(&self) -> Vec<SchemeKind> {
        self.schemes.iter().map(|s| s.parse().expect("validated at resolution")).collect()
    }

    pub fn wants_mdp(&self) -> bool {
        self.schemes.iter().any(|s| s == SchemeKind::Mdp.name())
    }

    pub fn sim_config(&self, n: u32, oh: f64) -> SimConfig {
        let mut c = SimConfig::new(self.bss, n as usize, self.matrix().clone(), self.rate_table(), oh);
        c.slots = self.slots;
        c.warmup = self.warmup;
        c.seeds = self.seeds.clone();
        c.ub_charges_oh = self.ub_charges_oh;
        c.bandwidth_hz = self.bandwidth_hz;
        c.slot_seconds = self.slot_seconds;
        c.symbols_per_slot = self.symbols_per_slot;
        c.data_symbols = self.data_symbols;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(toml_text: &str, flags: Overrides) -> anyhow::Result<Experiment> {
        let file: FileConfig = toml::from_str(toml_text)?;
        Experiment::resolve(&file, &flags, Mode::Single)
    }

    #[test]
    fn defaults() {
        let e = resolve("", Overrides::default()).unwrap();
        assert_eq!((e.bss, e.ues.clone(), e.oh.clone()), (3, vec![3], vec![0.1]));
        assert_eq!(e.seeds, (0..20).collect::<Vec<_>>());
        assert_eq!(e.rates, vec![0.0, 1.0, 4.0]);
        assert_eq!(e.schemes.len(), 5);
    }

    #[test]
    fn flags_win_over_file() {
        let text = "[scenario]\nbss = 2\noh = 0.3\n[simulation]\nslots = 5000\nseeds = 4\n";
        let e = resolve(text, Overrides { bss: Some(4), slots: Some(9000), ..Default::default() }).unwrap();
        assert_eq!((e.bss, e.slots, e.oh.clone(), e.seeds.len()), (4, 9000, vec![0.3], 4));
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[scenario]\npreset = \"nowhere\"\n",
            "[scenario]\noh = 1.5\n",
            "[scenario]\nrates = [0.0, 1.0]\n",
            "[simulation]\nschemes = [\"greedy\"]\n",
            "[simulation]\nslots = 10\nwarmup = 10\n",
            "[scenario]\nunknown_key = 1\n",
        ] {
            let err = resolve(text, Overrides::default());
            let err = match err {
                Err(e) => e,
                Ok(_) => panic!("accepted {text:?}"),
            };
            assert!(err.downcast_ref::<ConfigError>().is_some() || err.downcast_ref::<toml::de::Error>().is_some());
        }
    }

    #[test]
    fn inline_and_calibrated_channels() {
        let e = resolve(
            "[scenario]\nmatrix = [[0.5, 0.5], [0.25, 0.75]]\nrates = [0.0, 2.0]\n",
            Overrides::default(),
        )
        .unwrap();
        assert_eq!((e.channel_source.as_str(), e.matrix().k()), ("inline", 2));
        let e = resolve(
            "[scenario]\ncalibrate = { stationary = [0.2, 0.5, 0.3], holding = [2.0, 5.0, 1.5] }\n",
            Overrides::default(),
        )
        .unwrap();
        assert_eq!(e.channel_source, "calibrated");
    }
}
