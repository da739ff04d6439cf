//! Synthetic injection scenarios: generation, noisy forecasts, thermal-limit
//! calibration, scenario selection and the on-disk scenario format.
//!
//! All generated values are kept on a micro-MW grid so that the balance
//! between production and consumption is exact and the CSV files (six
//! decimals) round-trip bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{expand_topology, GeneratorKind, GridCase, Topology};
use crate::power_flow::{DcModel, Injections, PowerFlowError};

/// Timesteps per day at 5-minute resolution.
pub const STEPS_PER_DAY: usize = 288;
pub const RESOLUTION_MINUTES: u32 = 5;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("scenario does not match case: {0}")]
    Mismatch(String),
    #[error("infeasible generation config: {0}")]
    InfeasibleConfig(String),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("empty scenario set")]
    EmptyScenarioSet,
    #[error("unknown line {0}")]
    UnknownLine(u32),
    #[error("overload rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("requested {requested} scenarios from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

/// Injection time series with forecasts for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    /// 0 = Monday.
    pub start_weekday: u8,
    pub resolution_minutes: u32,
    pub injections: Vec<Injections>,
    /// `forecasts[t]` is the forecast of `injections[t]` issued at `t − 1`.
    pub forecasts: Vec<Injections>,
    pub difficulty: Option<Difficulty>,
    /// Set when loads were scaled down to stay within thermal capacity.
    pub load_scaled: bool,
}

impl Scenario {
    pub fn from_series(
        id: impl Into<String>,
        seed: u64,
        start_weekday: u8,
        injections: Vec<Injections>,
        forecasts: Vec<Injections>,
    ) -> Self {
        Scenario {
            id: id.into(),
            seed,
            start_weekday,
            resolution_minutes: RESOLUTION_MINUTES,
            injections,
            forecasts,
            difficulty: None,
            load_scaled: false,
        }
    }

    pub fn horizon(&self) -> usize {
        self.injections.len()
    }

    pub fn check_case(&self, case: &GridCase) -> Result<(), ScenarioError> {
        if self.injections.is_empty() {
            return Err(ScenarioError::Mismatch("empty horizon".into()));
        }
        if self.forecasts.len() != self.injections.len() {
            return Err(ScenarioError::Mismatch(format!(
                "{} forecasts for {} timesteps",
                self.forecasts.len(),
                self.injections.len()
            )));
        }
        for (t, x) in self.injections.iter().chain(&self.forecasts).enumerate() {
            x.check_shape(case)
                .map_err(|e| ScenarioError::Mismatch(format!("row {}: {e}", t % self.horizon())))?;
        }
        Ok(())
    }
}

/// Parameters of the synthetic winter profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Total demand scale in MW (peak of the daily shape on a weekday).
    pub load_scale_mw: f64,
    /// Night-time floor of the daily shape.
    pub load_base: f64,
    pub morning_peak_hour: f64,
    pub evening_peak_hour: f64,
    pub morning_amplitude: f64,
    pub evening_amplitude: f64,
    /// Width (hours) of both daily peaks.
    pub peak_width_hours: f64,
    /// Daytime plateau between the peaks.
    pub daytime_plateau: f64,
    pub weekend_factor: f64,
    /// Day-to-day lognormal spread of the demand level.
    pub daily_level_sigma: f64,
    /// Per-step multiplicative lognormal noise.
    pub load_noise_sigma: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    pub solar_daily_mean: f64,
    pub solar_daily_sd: f64,
    pub solar_daily_autocorrelation: f64,
    /// Mean wind output, fraction of pmax.
    pub wind_mean: f64,
    pub wind_sd: f64,
    /// AR(1) coefficient at 5-minute resolution.
    pub wind_autocorrelation: f64,
    /// Correlation between wind innovations and the daily solar shock.
    pub wind_solar_correlation: f64,
    /// Nuclear baseload, fraction of pmax.
    pub nuclear_level: f64,
    pub nuclear_daily_spread: f64,
    /// Maximum nuclear ramp per step, fraction of pmax.
    pub nuclear_ramp: f64,
    pub forecast_sigma: f64,
    /// Minimum load scale factor accepted before the config is infeasible.
    pub min_load_scale: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            load_scale_mw: 259.0,
            load_base: 0.68,
            morning_peak_hour: 9.0,
            evening_peak_hour: 19.0,
            morning_amplitude: 0.17,
            evening_amplitude: 0.27,
            peak_width_hours: 1.8,
            daytime_plateau: 0.1,
            weekend_factor: 0.85,
            daily_level_sigma: 0.04,
            load_noise_sigma: 0.01,
            sunrise_hour: 8.0,
            sunset_hour: 17.0,
            solar_daily_mean: 0.55,
            solar_daily_sd: 0.25,
            solar_daily_autocorrelation: 0.6,
            wind_mean: 0.35,
            wind_sd: 0.2,
            wind_autocorrelation: 0.97,
            wind_solar_correlation: 0.0,
            nuclear_level: 0.9,
            nuclear_daily_spread: 0.05,
            nuclear_ramp: 0.002,
            forecast_sigma: 0.05,
            min_load_scale: 0.5,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("load_scale_mw", self.load_scale_mw),
            ("load_base", self.load_base),
            ("peak_width_hours", self.peak_width_hours),
            ("weekend_factor", self.weekend_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("morning_amplitude", self.morning_amplitude),
            ("evening_amplitude", self.evening_amplitude),
            ("daytime_plateau", self.daytime_plateau),
            ("daily_level_sigma", self.daily_level_sigma),
            ("load_noise_sigma", self.load_noise_sigma),
            ("solar_daily_sd", self.solar_daily_sd),
            ("wind_sd", self.wind_sd),
            ("forecast_sigma", self.forecast_sigma),
            ("nuclear_ramp", self.nuclear_ramp),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ScenarioError::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.sunset_hour <= self.sunrise_hour {
            return Err(ScenarioError::InvalidConfig("sunset_hour must follow sunrise_hour".into()));
        }
        for (name, v) in [
            ("wind_autocorrelation", self.wind_autocorrelation),
            ("solar_daily_autocorrelation", self.solar_daily_autocorrelation),
            ("wind_solar_correlation", self.wind_solar_correlation),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(ScenarioError::InvalidConfig(format!("{name} must lie in [-1, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Normalized daily demand shape at hour `h`.
    pub fn load_shape(&self, h: f64) -> f64 {
        let w2 = 2.0 * self.peak_width_hours * self.peak_width_hours;
        let bump = |center: f64| (-(h - center).powi(2) / w2).exp();
        let day = if (7.0..21.0).contains(&h) {
            (PI * (h - 7.0) / 14.0).sin()
        } else {
            0.0
        };
        self.load_base
            + self.morning_amplitude * bump(self.morning_peak_hour)
            + self.evening_amplitude * bump(self.evening_peak_hour)
            + self.daytime_plateau * day
    }

    /// Daylight bell in [0, 1], zero outside sunrise..sunset.
    pub fn solar_shape(&self, h: f64) -> f64 {
        if h <= self.sunrise_hour || h >= self.sunset_hour {
            0.0
        } else {
            (PI * (h - self.sunrise_hour) / (self.sunset_hour - self.sunrise_hour))
                .sin()
                .powf(1.5)
        }
    }
}

fn micro(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

fn from_micro(n: i64) -> f64 {
    n as f64 / 1e6
}

/// Rounds a value to the 6-decimal grid used by scenario files.
pub fn round_micro(x: f64) -> f64 {
    from_micro(micro(x))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-seed for `(stream, index)` under a base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}

const FORECAST_STREAM: u64 = 0x00F0_CA57;

/// Multiplies each component by `1 + ε`, `ε ~ N(0, σ)`, clipped at 0.
pub fn make_forecast(next: &Injections, sigma: f64, seed: u64) -> Injections {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |x: &f64| {
        let eps: f64 = rng.sample(StandardNormal);
        round_micro((x * (1.0 + sigma * eps)).max(0.0))
    };
    let generators = next.generators.iter().map(&mut noisy).collect();
    let loads = next.loads.iter().map(&mut noisy).collect();
    Injections { generators, loads }
}

/// Generates one winter scenario; deterministic in `(config, horizon, seed)`.
pub fn generate(case: &GridCase, config: &GenerationConfig, horizon: usize, seed: u64) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    if horizon == 0 {
        return Err(ScenarioError::InvalidConfig("horizon must be at least 1".into()));
    }
    let gens = case.generators();
    let thermal: Vec<usize> = (0..gens.len()).filter(|&g| gens[g].kind == GeneratorKind::Thermal).collect();
    if thermal.is_empty() {
        return Err(ScenarioError::InfeasibleConfig("case has no thermal generator to balance demand".into()));
    }
    let thermal_pmax: i64 = thermal.iter().map(|&g| micro(gens[g].pmax)).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_weekday = rng.random_range(0..7u8);
    let days = horizon.div_ceil(STEPS_PER_DAY);

    let mut day_level = Vec::with_capacity(days);
    let mut solar_amp = Vec::with_capacity(days);
    let mut solar_shock = Vec::with_capacity(days);
    let mut nuclear_target = Vec::with_capacity(days);
    let rho = config.solar_daily_autocorrelation;
    let mut amp = config.solar_daily_mean;
    for _ in 0..days {
        let z_level: f64 = rng.sample(StandardNormal);
        day_level.push((config.daily_level_sigma * z_level).exp());
        let z_sun: f64 = rng.sample(StandardNormal);
        amp = config.solar_daily_mean
            + rho * (amp - config.solar_daily_mean)
            + config.solar_daily_sd * (1.0 - rho * rho).sqrt() * z_sun;
        solar_amp.push(amp.clamp(0.05, 1.0));
        solar_shock.push(z_sun);
        let u: f64 = rng.random_range(-1.0..=1.0);
        nuclear_target.push((config.nuclear_level + config.nuclear_daily_spread * u).clamp(0.0, 1.0));
    }

    let phi = config.wind_autocorrelation;
    let c = config.wind_solar_correlation;
    let mut wind_state: Vec<f64> = gens
        .iter()
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            config.wind_mean + config.wind_sd * z
        })
        .collect();
    let mut nuclear_state: Vec<f64> = gens.iter().map(|_| nuclear_target[0]).collect();

    let keys: Vec<f64> = case.loads().iter().map(|l| l.key_factor).collect();
    let mut injections = Vec::with_capacity(horizon);
    let mut load_scaled = false;
    for t in 0..horizon {
        let day = t / STEPS_PER_DAY;
        let hour = (t % STEPS_PER_DAY) as f64 * RESOLUTION_MINUTES as f64 / 60.0;
        let weekday = (start_weekday as usize + day) % 7;
        let week_factor = if weekday >= 5 { config.weekend_factor } else { 1.0 };
        let z_noise: f64 = rng.sample(StandardNormal);
        let total = config.load_scale_mw
            * config.load_shape(hour)
            * week_factor
            * day_level[day]
            * (config.load_noise_sigma * z_noise).exp();
        let mut loads: Vec<i64> = keys.iter().map(|k| micro(total * k)).collect();

        let mut prod = vec![0i64; gens.len()];
        for (g, gen) in gens.iter().enumerate() {
            prod[g] = match gen.kind {
                GeneratorKind::Solar => micro(gen.pmax * solar_amp[day] * config.solar_shape(hour)),
                GeneratorKind::Wind => {
                    let n: f64 = rng.sample(StandardNormal);
                    let e = c * solar_shock[day] + (1.0 - c * c).sqrt() * n;
                    let w = config.wind_mean
                        + phi * (wind_state[g] - config.wind_mean)
                        + config.wind_sd * (1.0 - phi * phi).sqrt() * e;
                    wind_state[g] = w;
                    micro(gen.pmax * w.clamp(0.0, 1.0))
                }
                GeneratorKind::Nuclear => {
                    let step = config.nuclear_ramp;
                    let cur = nuclear_state[g];
                    let next = cur + (nuclear_target[day] - cur).clamp(-step, step);
                    nuclear_state[g] = next;
                    micro(gen.pmax * next)
                }
                GeneratorKind::Thermal => 0,
            };
        }

        let others: i64 = prod.iter().sum();
        let demand: i64 = loads.iter().sum();
        let mut residual = demand - others;
        if residual < 0 {
            curtail(&mut prod, gens, -residual);
            residual = 0;
        } else if residual > thermal_pmax {
            let scale = (others + thermal_pmax) as f64 / demand as f64;
            if scale < config.min_load_scale {
                return Err(ScenarioError::InfeasibleConfig(format!(
                    "t={t}: thermal capacity covers only {:.1}% of demand",
                    scale * 100.0
                )));
            }
            for l in loads.iter_mut() {
                *l = (*l as f64 * scale).floor() as i64;
            }
            load_scaled = true;
            residual = loads.iter().sum::<i64>() - others;
        }
        let mut assigned = 0;
        for (i, &g) in thermal.iter().enumerate() {
            let share = if i + 1 == thermal.len() {
                residual - assigned
            } else {
                (residual as i128 * micro(gens[g].pmax) as i128 / thermal_pmax as i128) as i64
            };
            prod[g] = share;
            assigned += share;
        }

        injections.push(Injections {
            generators: prod.into_iter().map(from_micro).collect(),
            loads: loads.into_iter().map(from_micro).collect(),
        });
    }

    let forecasts = injections
        .iter()
        .enumerate()
        .map(|(t, x)| make_forecast(x, config.forecast_sigma, derive_seed(seed, FORECAST_STREAM, t as u64)))
        .collect();

    Ok(Scenario {
        id: format!("scenario-{seed}"),
        seed,
        start_weekday,
        resolution_minutes: RESOLUTION_MINUTES,
        injections,
        forecasts,
        difficulty: None,
        load_scaled,
    })
}

/// Removes `excess` micro-MW from renewables first, then nuclear.
fn curtail(prod: &mut [i64], gens: &[crate::grid::Generator], mut excess: i64) {
    for kinds in [&[GeneratorKind::Wind, GeneratorKind::Solar][..], &[GeneratorKind::Nuclear][..]] {
        let idx: Vec<usize> = (0..gens.len()).filter(|&g| kinds.contains(&gens[g].kind)).collect();
        let available: i64 = idx.iter().map(|&g| prod[g]).sum();
        if available == 0 || excess == 0 {
            continue;
        }
        let cut = excess.min(available);
        let mut done = 0;
        for (i, &g) in idx.iter().enumerate() {
            let share = if i + 1 == idx.len() {
                cut - done
            } else {
                (cut as i128 * prod[g] as i128 / available as i128) as i64
            };
            prod[g] -= share;
            done += share;
        }
        excess -= cut;
    }
}

/// Generates `count` scenarios with ids `scenario_000…` and seeds derived
/// from `seed`.
pub fn generate_set(
    case: &GridCase,
    config: &GenerationConfig,
    count: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Scenario>, ScenarioError> {
    (0..count)
        .map(|i| {
            let mut s = generate(case, config, horizon, derive_seed(seed, 0x5CE7, i as u64))?;
            s.id = format!("scenario_{i:03}");
            Ok(s)
        })
        .collect()
}

/// Per-line currents of a fixed topology over every timestep of every
/// scenario, grouped by line.
pub fn fixed_topology_currents(
    case: &GridCase,
    scenarios: &[Scenario],
    topology: &Topology,
) -> Result<Vec<Vec<f64>>, ScenarioError> {
    let model = DcModel::new(case, expand_topology(case, topology));
    let mut per_line = vec![Vec::new(); case.lines().len()];
    for s in scenarios {
        s.check_case(case)?;
        for x in &s.injections {
            let r = model.solve(x)?;
            for (l, &i) in r.currents_a.iter().enumerate() {
                per_line[l].push(i);
            }
        }
    }
    Ok(per_line)
}

/// Sets limits from do-nothing runs in the reference topology: target lines
/// get the `(1 − rate)` empirical quantile of their current, so a fraction
/// `rate` of samples sits at or above the limit; other lines get 1.05 × the
/// maximum observed current.
pub fn calibrate_thermal_limits(
    case: &GridCase,
    scenarios: &[Scenario],
    target_lines: &[u32],
    overload_rate: f64,
) -> Result<GridCase, ScenarioError> {
    if scenarios.is_empty() {
        return Err(ScenarioError::EmptyScenarioSet);
    }
    if !(0.0..1.0).contains(&overload_rate) {
        return Err(ScenarioError::InvalidRate(overload_rate));
    }
    let mut targets = BTreeSet::new();
    for &id in target_lines {
        targets.insert(case.line_index(id).ok_or(ScenarioError::UnknownLine(id))?);
    }
    let currents = fixed_topology_currents(case, scenarios, &Topology::reference(case))?;
    let limits: Vec<f64> = currents
        .into_iter()
        .enumerate()
        .map(|(l, mut samples)| {
            samples.sort_by(f64::total_cmp);
            let max = *samples.last().expect("non-empty");
            let limit = if targets.contains(&l) {
                upper_quantile(&samples, overload_rate)
            } else {
                1.05 * max
            };
            limit.max(f64::MIN_POSITIVE)
        })
        .collect();
    case.with_thermal_limits(&limits)
        .map_err(|e| ScenarioError::InvalidConfig(e.to_string()))
}

/// Threshold such that `floor(rate · n)` of the sorted samples lie at or
/// above it; with `rate · n < 1` it sits just above the maximum.
fn upper_quantile(sorted: &[f64], rate: f64) -> f64 {
    let n = sorted.len();
    let allowed = (rate * n as f64).floor() as usize;
    if allowed == 0 {
        sorted[n - 1].next_up()
    } else {
        sorted[n - allowed]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTime {
    None,
    Night,
    Morning,
    Afternoon,
    Evening,
}

impl TaskTime {
    pub fn of_hour(hour: usize) -> TaskTime {
        match hour {
            0..=5 => TaskTime::Night,
            6..=11 => TaskTime::Morning,
            12..=17 => TaskTime::Afternoon,
            _ => TaskTime::Evening,
        }
    }
}

/// Baseline outcomes on one scenario, the input to selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAssessment {
    pub id: String,
    pub horizon: usize,
    pub start_weekday: u8,
    /// Timesteps where the do-nothing agent sees an overload.
    pub dn_overload_times: Vec<usize>,
    /// Whether DN finished the scenario in hard mode.
    pub dn_finishes: bool,
    /// Per constant-topology baseline, whether it finished in hard mode.
    pub dn_tau_finishes: Vec<bool>,
}

impl ScenarioAssessment {
    pub fn difficulty(&self) -> Difficulty {
        if self.dn_overload_times.is_empty() {
            Difficulty::Easy
        } else if self.dn_finishes || self.dn_tau_finishes.iter().any(|&f| f) {
            Difficulty::Medium
        } else {
            Difficulty::Hard
        }
    }

    /// Time of day when most DN overloads occur.
    pub fn task_time(&self) -> TaskTime {
        let mut counts: BTreeMap<TaskTime, usize> = BTreeMap::new();
        for &t in &self.dn_overload_times {
            let hour = (t % STEPS_PER_DAY) * RESOLUTION_MINUTES as usize / 60;
            *counts.entry(TaskTime::of_hour(hour)).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(k, _)| k)
            .unwrap_or(TaskTime::None)
    }

    pub fn starts_on_weekend(&self) -> bool {
        self.start_weekday >= 5
    }

    pub fn horizon_days(&self) -> usize {
        self.horizon.div_ceil(STEPS_PER_DAY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedScenario {
    pub id: String,
    pub difficulty: Difficulty,
    pub task_time: TaskTime,
    pub weekend_start: bool,
    pub horizon_days: usize,
}

/// Picks `count` scenarios covering as many distinct
/// (difficulty, task time, weekday/weekend, horizon) buckets as possible:
/// buckets are visited round-robin in sorted order, ids in sorted order
/// within a bucket.
pub fn select_scenarios(pool: &[ScenarioAssessment], count: usize) -> Result<Vec<SelectedScenario>, ScenarioError> {
    if count > pool.len() {
        return Err(ScenarioError::PoolTooSmall {
            requested: count,
            available: pool.len(),
        });
    }
    let mut buckets: BTreeMap<(Difficulty, TaskTime, bool, usize), Vec<&ScenarioAssessment>> = BTreeMap::new();
    for a in pool {
        buckets
            .entry((a.difficulty(), a.task_time(), a.starts_on_weekend(), a.horizon_days()))
            .or_default()
            .push(a);
    }
    for list in buckets.values_mut() {
        list.sort_by(|a, b| a.id.cmp(&b.id));
    }
    let mut out = Vec::with_capacity(count);
    let mut round = 0;
    while out.len() < count {
        for (&(difficulty, task_time, weekend_start, horizon_days), list) in &buckets {
            if out.len() == count {
                break;
            }
            if let Some(a) = list.get(round) {
                out.push(SelectedScenario {
                    id: a.id.clone(),
                    difficulty,
                    task_time,
                    weekend_start,
                    horizon_days,
                });
            }
        }
        round += 1;
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    id: String,
    seed: u64,
    horizon: usize,
    start_weekday: u8,
    resolution_minutes: u32,
    #[serde(default)]
    load_scaled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty: Option<Difficulty>,
}

fn header(case: &GridCase) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain(case.generators().iter().map(|g| format!("gen_{}", g.id)))
        .chain(case.loads().iter().map(|l| format!("load_{}", l.id)))
        .collect()
}

fn write_series(path: &Path, case: &GridCase, rows: &[Injections]) -> Result<(), ScenarioError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| ScenarioError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let to_parse_err = |e: csv::Error| ScenarioError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    w.write_record(header(case)).map_err(to_parse_err)?;
    for (t, x) in rows.iter().enumerate() {
        let record = std::iter::once(t.to_string())
            .chain(x.generators.iter().chain(&x.loads).map(|v| format!("{v:.6}")));
        w.write_record(record).map_err(to_parse_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn read_series(path: &Path, case: &GridCase) -> Result<Vec<Injections>, ScenarioError> {
    let parse_err = |message: String| ScenarioError::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => ScenarioError::Io {
                path: path.display().to_string(),
                source,
            },
            other => parse_err(format!("{other:?}")),
        })?;
    let expected = header(case);
    let got: Vec<String> = r
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != expected {
        return Err(parse_err(format!("header {got:?} does not match case columns {expected:?}")));
    }
    let n_gen = case.generators().len();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let t: usize = record[0]
            .parse()
            .map_err(|_| parse_err(format!("row {}: field `t` is not an integer", i + 1)))?;
        if t != i {
            return Err(parse_err(format!("row {}: expected t={i}, got {t}", i + 1)));
        }
        let mut values = Vec::with_capacity(record.len() - 1);
        for (c, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("row {}: field `{}` is not a number", i + 1, expected[c])))?;
            values.push(v);
        }
        let loads = values.split_off(n_gen);
        rows.push(Injections {
            generators: values,
            loads,
        });
    }
    Ok(rows)
}

/// Writes `<dir>/injections.csv`, `<dir>/forecasts.csv` and `<dir>/meta`.
pub fn write_scenario(dir: &Path, case: &GridCase, scenario: &Scenario) -> Result<(), ScenarioError> {
    scenario.check_case(case)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_series(&dir.join("injections.csv"), case, &scenario.injections)?;
    write_series(&dir.join("forecasts.csv"), case, &scenario.forecasts)?;
    let meta = Meta {
        id: scenario.id.clone(),
        seed: scenario.seed,
        horizon: scenario.horizon(),
        start_weekday: scenario.start_weekday,
        resolution_minutes: scenario.resolution_minutes,
        load_scaled: scenario.load_scaled,
        difficulty: scenario.difficulty,
    };
    let path = dir.join("meta");
    let text = toml::to_string(&meta).expect("meta serializes");
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn read_scenario(dir: &Path, case: &GridCase) -> Result<Scenario, ScenarioError> {
    let meta_path = dir.join("meta");
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: Meta = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: meta_path.display().to_string(),
        message: e.to_string(),
    })?;
    let injections = read_series(&dir.join("injections.csv"), case)?;
    let forecasts = read_series(&dir.join("forecasts.csv"), case)?;
    if injections.len() != meta.horizon {
        return Err(ScenarioError::Parse {
            path: meta_path.display().to_string(),
            message: format!("field `horizon` is {} but injections.csv has {} rows", meta.horizon, injections.len()),
        });
    }
    let scenario = Scenario {
        id: meta.id,
        seed: meta.seed,
        start_weekday: meta.start_weekday,
        resolution_minutes: meta.resolution_minutes,
        injections,
        forecasts,
        difficulty: meta.difficulty,
        load_scaled: meta.load_scaled,
    };
    scenario.check_case(case)?;
    Ok(scenario)
}

/// Scenario directories (those holding a `meta` file) under `root`, sorted.
/// `root` itself is returned when it is a scenario directory.
pub fn list_scenario_dirs(root: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    if root.join("meta").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn read_scenarios(root: &Path, case: &GridCase) -> Result<Vec<Scenario>, ScenarioError> {
    list_scenario_dirs(root)?
        .iter()
        .map(|d| read_scenario(d, case))
        .collect()
}
