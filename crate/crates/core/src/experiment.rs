//! Experiment runner: resolves a configuration, computes every cell
//! (method x seed x setting), then writes CSV/SVG artifacts and a manifest.
//!
//! Computation finishes before anything is written, so a failing cell leaves
//! the output directory untouched; a failing write removes the files written
//! so far.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{run_intrinsic_loop, run_maxent, BonusKind, IntrinsicConfig};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::goals::{brute_force_optimal_target, hitting_objective, optimal_target, smooth_goal_density, GoalMetric, GoalSpec};
use crate::io::{emit_heatmap, fmt_f64, heatmap_svg, metric_fields, write_text, CsvTable, METRIC_COLUMNS};
use crate::marginal::{entropy, random_simplex, Policy, StateMarginal};
use crate::mdp::{Gridworld, GridworldSpec, TabularMDP};
use crate::sm4::{run_sm4, DiscriminatorMode, Sm4Config};
use crate::smm::{
    run_fictitious_play, run_greedy_alternation, verify_minmax_equivalence, IterationMetrics, LoopConfig,
    MarginalKind, Mode,
};
use crate::solvers::RewardTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    MarginalHeatmap,
    Oscillation,
    StochasticitySweep,
    Sm4Ablation,
    HaAblation,
    GoalTarget,
    VerifyProp1,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::MarginalHeatmap,
        Self::Oscillation,
        Self::StochasticitySweep,
        Self::Sm4Ablation,
        Self::HaAblation,
        Self::GoalTarget,
        Self::VerifyProp1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MarginalHeatmap => "marginal-heatmap",
            Self::Oscillation => "oscillation",
            Self::StochasticitySweep => "stochasticity-sweep",
            Self::Sm4Ablation => "sm4-ablation",
            Self::HaAblation => "ha-ablation",
            Self::GoalTarget => "goal-target",
            Self::VerifyProp1 => "verify-prop1",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{name}'")))
    }

    fn valid_methods(self) -> &'static [&'static str] {
        match self {
            Self::MarginalHeatmap | Self::StochasticitySweep => {
                &["smm", "inverse", "forward", "count", "pseudocount", "rnd", "maxent"]
            }
            Self::Oscillation => &["greedy", "fictitious"],
            Self::HaAblation => &["count", "pseudocount", "forward", "inverse", "rnd"],
            Self::Sm4Ablation | Self::GoalTarget | Self::VerifyProp1 => &[],
        }
    }

    fn default_methods(self) -> Vec<String> {
        let names: &[&str] = match self {
            Self::MarginalHeatmap | Self::StochasticitySweep => &["smm", "inverse", "forward", "count", "maxent"],
            other => other.valid_methods(),
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// The didactic environment: a cross of two hallways (horizontal arms of 5
/// cells, vertical arms of 2) with the noisy TV and the start at the
/// intersection.
pub fn didactic_spec(xi: f64) -> GridworldSpec {
    GridworldSpec::cross_with_arms(5, 2, 0.1, xi, 50)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub env: GridworldSpec,
    pub methods: Vec<String>,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub mode: Mode,
    /// Noisy-TV settings for the stochasticity sweep.
    pub xi_grid: Vec<f64>,
    /// Restart probability of the damped chain used for stationary marginals.
    pub damping: f64,
    pub planning_horizon: usize,
    pub skills: Vec<usize>,
    pub discriminator: DiscriminatorMode,
    /// Random instances for goal-target and verify-prop1.
    pub instances: usize,
    pub epsilons: Vec<f64>,
    /// Largest corridor length for goal-target instances.
    pub goal_states: usize,
    pub burn_in: usize,
}

const KNOWN_KEYS: [&str; 17] = [
    "slip_success_prob",
    "xi",
    "horizon",
    "methods",
    "iterations",
    "seeds",
    "mode",
    "episodes_per_iter",
    "xi_grid",
    "damping",
    "planning_horizon",
    "skills",
    "discriminator",
    "instances",
    "epsilons",
    "goal_states",
    "burn_in",
];

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            env: didactic_spec(0.0),
            methods: kind.default_methods(),
            iterations: match kind {
                ExperimentKind::Oscillation => 100,
                _ => 50,
            },
            seeds: vec![0],
            out_dir: out_dir.into(),
            mode: Mode::Exact,
            xi_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            damping: 0.01,
            planning_horizon: 50,
            skills: vec![1, 2, 4],
            discriminator: DiscriminatorMode::Exact,
            instances: match kind {
                ExperimentKind::GoalTarget => 50,
                _ => 100,
            },
            epsilons: vec![0.0, 1.0],
            goal_states: 10,
            burn_in: 10,
        }
    }

    /// Applies a key/value config on top of the defaults for `kind`.
    pub fn from_kv(kind: ExperimentKind, kv: &KvConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        if let Some(bad) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown config key '{bad}'")));
        }
        let mut cfg = Self::new(kind, out_dir);
        if kv.layout().is_some() {
            cfg.env = GridworldSpec::from_kv(kv)?;
        } else {
            if let Some(slip) = kv.get_f64("slip_success_prob")? {
                cfg.env.slip_success_prob = slip;
            }
            if let Some(xi) = kv.get_f64("xi")? {
                cfg.env.noisy_tv_xi = xi;
            }
            if let Some(h) = kv.get_usize("horizon")? {
                cfg.env.horizon = h;
            }
            cfg.env.validate()?;
        }
        if let Some(m) = kv.get_list("methods") {
            cfg.methods = m;
        }
        if let Some(n) = kv.get_usize("iterations")? {
            cfg.iterations = n;
        }
        if let Some(s) = kv.get_u64_list("seeds")? {
            cfg.seeds = s;
        }
        match kv.get("mode") {
            None | Some("exact") => {}
            Some("sampled") => {
                cfg.mode = Mode::Sampled { episodes_per_iter: kv.get_usize("episodes_per_iter")?.unwrap_or(10) }
            }
            Some(other) => return Err(Error::Config(format!("unknown mode '{other}'"))),
        }
        if let Some(x) = kv.get_f64_list("xi_grid")? {
            cfg.xi_grid = x;
        }
        if let Some(d) = kv.get_f64("damping")? {
            cfg.damping = d;
        }
        if let Some(h) = kv.get_usize("planning_horizon")? {
            cfg.planning_horizon = h;
        }
        if let Some(list) = kv.get_list("skills") {
            cfg.skills = list
                .iter()
                .map(|v| v.parse().map_err(|_| Error::Config(format!("'skills' entry is not a count: '{v}'"))))
                .collect::<Result<_>>()?;
        }
        match kv.get("discriminator") {
            None | Some("exact") => {}
            Some("fitted") => cfg.discriminator = DiscriminatorMode::Fitted,
            Some(other) => return Err(Error::Config(format!("unknown discriminator '{other}'"))),
        }
        if let Some(n) = kv.get_usize("instances")? {
            cfg.instances = n;
        }
        if let Some(e) = kv.get_f64_list("epsilons")? {
            cfg.epsilons = e;
        }
        if let Some(n) = kv.get_usize("goal_states")? {
            cfg.goal_states = n;
        }
        if let Some(n) = kv.get_usize("burn_in")? {
            cfg.burn_in = n;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("at least one iteration is required".into()));
        }
        let valid = self.kind.valid_methods();
        if let Some(bad) = self.methods.iter().find(|m| !valid.contains(&m.as_str())) {
            return Err(Error::Config(format!("unknown method '{bad}' for {}", self.kind.name())));
        }
        if !valid.is_empty() && self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if let Some(x) = self.xi_grid.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Config(format!("xi {x} outside [0, 1]")));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping {} outside (0, 1]", self.damping)));
        }
        if self.planning_horizon == 0 {
            return Err(Error::Config("planning horizon must be at least 1".into()));
        }
        if self.skills.contains(&0) {
            return Err(Error::Config("skill counts must be positive".into()));
        }
        if self.kind == ExperimentKind::GoalTarget && !(3..=50).contains(&self.goal_states) {
            return Err(Error::Config("goal_states must be between 3 and 50".into()));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Config("epsilons must be >= 0".into()));
        }
        Gridworld::new(&self.env).map(|_| ())
    }

    /// Canonical text of every resolved setting; its SHA-256 is the config hash.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        writeln!(out, "kind = {}", self.kind.name()).unwrap();
        writeln!(out, "methods = {}", self.methods.join(",")).unwrap();
        writeln!(out, "iterations = {}", self.iterations).unwrap();
        writeln!(out, "seeds = {}", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")).unwrap();
        match self.mode {
            Mode::Exact => writeln!(out, "mode = exact").unwrap(),
            Mode::Sampled { episodes_per_iter } => {
                writeln!(out, "mode = sampled\nepisodes_per_iter = {episodes_per_iter}").unwrap()
            }
        }
        writeln!(out, "xi_grid = {}", list(&self.xi_grid)).unwrap();
        writeln!(out, "damping = {}", fmt_f64(self.damping)).unwrap();
        writeln!(out, "planning_horizon = {}", self.planning_horizon).unwrap();
        writeln!(out, "skills = {}", self.skills.iter().map(usize::to_string).collect::<Vec<_>>().join(",")).unwrap();
        writeln!(out, "discriminator = {:?}", self.discriminator).unwrap();
        writeln!(out, "instances = {}", self.instances).unwrap();
        writeln!(out, "epsilons = {}", list(&self.epsilons)).unwrap();
        writeln!(out, "goal_states = {}", self.goal_states).unwrap();
        writeln!(out, "burn_in = {}", self.burn_in).unwrap();
        out.push_str(&self.env.to_config_string());
        out
    }

    pub fn config_hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn loop_config(&self, seed: u64) -> LoopConfig {
        LoopConfig::default().with_iterations(self.iterations).with_mode(self.mode).with_seed(seed)
    }

    fn stationary(&self) -> MarginalKind {
        MarginalKind::Stationary { damping: self.damping, planning_horizon: self.planning_horizon }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub kind: String,
    pub config_hash: String,
    pub artifacts: Vec<String>,
    pub version: String,
    pub timings: Vec<Timing>,
}

enum Artifact {
    Csv(CsvTable),
    Svg { marginal: StateMarginal, world: Box<Gridworld>, title: String },
}

type Outputs = Vec<(String, Artifact)>;

/// Runs an experiment on a pool of `jobs` threads and writes its artifacts
/// and `manifest.json` under `config.out_dir`.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<RunManifest> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let outputs = pool.install(|| compute(config))?;
    let compute_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let mut written: Vec<PathBuf> = Vec::new();
    let mut names = Vec::new();
    for (name, artifact) in &outputs {
        let path = config.out_dir.join(name);
        let result = match artifact {
            Artifact::Csv(table) => table.write(&path),
            Artifact::Svg { marginal, world, title } => emit_heatmap(marginal, world, title, &path),
        };
        if let Err(e) = result {
            cleanup(&written);
            return Err(e);
        }
        written.push(path);
        names.push(name.clone());
    }
    let manifest = RunManifest {
        kind: config.kind.name().to_string(),
        config_hash: config.config_hash(),
        artifacts: names,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timings: vec![
            Timing { stage: "compute".into(), seconds: compute_seconds },
            Timing { stage: "write".into(), seconds: started.elapsed().as_secs_f64() },
        ],
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    if let Err(e) = write_text(&config.out_dir.join("manifest.json"), &(json + "\n")) {
        cleanup(&written);
        return Err(e);
    }
    Ok(manifest)
}

fn cleanup(paths: &[PathBuf]) {
    for p in paths {
        let _ = std::fs::remove_file(p);
    }
}

fn compute(config: &ExperimentConfig) -> Result<Outputs> {
    match config.kind {
        ExperimentKind::MarginalHeatmap => marginal_heatmaps(config),
        ExperimentKind::Oscillation => oscillation(config),
        ExperimentKind::StochasticitySweep => stochasticity_sweep(config),
        ExperimentKind::Sm4Ablation => sm4_ablation(config),
        ExperimentKind::HaAblation => ha_ablation(config),
        ExperimentKind::GoalTarget => goal_targets(config),
        ExperimentKind::VerifyProp1 => verify_prop1(config),
    }
}

/// Marginal reported for a method: the historical average for SMM, the last
/// iterate for the bonus baselines, the soft-optimal policy for MaxEnt.
pub fn method_marginal(method: &str, world: &Gridworld, base: &LoopConfig) -> Result<StateMarginal> {
    let mdp = world.mdp();
    let ns = mdp.num_states();
    match method {
        "smm" => Ok(run_fictitious_play(mdp, &StateMarginal::uniform(ns), base)?.ha_marginal()),
        "maxent" => run_maxent(mdp, &RewardTable::zeros(ns), base, 1.0),
        other => {
            let cfg = IntrinsicConfig::new(base.clone(), BonusKind::parse(other)?);
            Ok(run_intrinsic_loop(mdp, &world.coordinates(), &RewardTable::zeros(ns), &cfg)?.evaluation_marginal())
        }
    }
}

fn marginal_heatmaps(config: &ExperimentConfig) -> Result<Outputs> {
    let world = Gridworld::new(&config.env)?;
    let cells: Vec<(u64, &String)> =
        config.seeds.iter().flat_map(|&s| config.methods.iter().map(move |m| (s, m))).collect();
    let marginals = cells
        .par_iter()
        .map(|(seed, method)| {
            let base = config.loop_config(*seed).with_split(world.half_split());
            method_marginal(method, &world, &base)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = CsvTable::new(&["seed", "method", "state", "row", "col", "prob", "log_prob_nats"]);
    let mut out = Vec::new();
    for ((seed, method), m) in cells.iter().zip(marginals) {
        for (s, cell) in world.cells().iter().enumerate() {
            let p = m.probs()[s];
            table.push(vec![
                seed.to_string(),
                method.to_string(),
                s.to_string(),
                cell.row.to_string(),
                cell.col.to_string(),
                fmt_f64(p),
                fmt_f64(p.ln()),
            ])?;
        }
        out.push((
            format!("heatmap_{method}_seed{seed}.svg"),
            Artifact::Svg {
                title: format!("{method} seed {seed} entropy {:.4} nats", entropy(&m)),
                marginal: m,
                world: Box::new(world.clone()),
            },
        ));
    }
    out.insert(0, ("marginals.csv".into(), Artifact::Csv(table)));
    Ok(out)
}

/// Fraction of consecutive iterations after `burn_in` whose
/// `mass_left − mass_right` values have strictly opposite signs.
pub fn sign_alternation_rate(metrics: &[IterationMetrics], burn_in: usize) -> f64 {
    let diffs: Vec<f64> =
        metrics.iter().filter(|m| m.iteration > burn_in).map(|m| m.mass_left - m.mass_right).collect();
    if diffs.len() < 2 {
        return 0.0;
    }
    let flips = diffs.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    flips as f64 / (diffs.len() - 1) as f64
}

fn metrics_csv(rows: &[IterationMetrics], extra: &[(&str, Vec<String>)]) -> Result<CsvTable> {
    let mut header: Vec<&str> = METRIC_COLUMNS.to_vec();
    header.extend(extra.iter().map(|(h, _)| *h));
    let mut table = CsvTable::new(&header);
    for (i, m) in rows.iter().enumerate() {
        let mut fields = metric_fields(m);
        fields.extend(extra.iter().map(|(_, col)| col[i].clone()));
        table.push(fields)?;
    }
    Ok(table)
}

fn oscillation(config: &ExperimentConfig) -> Result<Outputs> {
    let world = Gridworld::new(&config.env)?;
    let target = StateMarginal::uniform(world.num_states());
    let cells: Vec<(u64, &String)> =
        config.seeds.iter().flat_map(|&s| config.methods.iter().map(move |m| (s, m))).collect();
    let runs = cells
        .par_iter()
        .map(|(seed, method)| {
            let base = config.loop_config(*seed).with_split(world.half_split());
            if method.as_str() == "greedy" {
                run_greedy_alternation(world.mdp(), &target, &base)
            } else {
                run_fictitious_play(world.mdp(), &target, &base)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary =
        CsvTable::new(&["seed", "method", "alternation_rate", "final_kl_to_target_nats", "final_entropy_ha_nats"]);
    let mut out = Vec::new();
    for ((seed, method), run) in cells.iter().zip(&runs) {
        let last = run.metrics.last().expect("nonempty run");
        summary.push(vec![
            seed.to_string(),
            method.to_string(),
            fmt_f64(sign_alternation_rate(&run.metrics, config.burn_in)),
            fmt_f64(last.kl_to_target),
            fmt_f64(last.entropy_ha),
        ])?;
        out.push((format!("oscillation_{method}_seed{seed}.csv"), Artifact::Csv(metrics_csv(&run.metrics, &[])?)));
    }
    out.insert(0, ("oscillation_summary.csv".into(), Artifact::Csv(summary)));
    Ok(out)
}

fn stochasticity_sweep(config: &ExperimentConfig) -> Result<Outputs> {
    let mut cells = Vec::new();
    for method in &config.methods {
        for &seed in &config.seeds {
            for &xi in &config.xi_grid {
                cells.push((method, seed, xi));
            }
        }
    }
    let entropies = cells
        .par_iter()
        .map(|(method, seed, xi)| {
            let world = Gridworld::new(&config.env.with_xi(*xi))?;
            let base = config.loop_config(*seed).with_marginal(config.stationary());
            Ok(entropy(&method_marginal(method, &world, &base)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut out = Vec::new();
    for method in &config.methods {
        let mut table = CsvTable::new(&["method", "xi", "seed", "stationary_entropy_nats"]);
        for ((m, seed, xi), h) in cells.iter().zip(&entropies) {
            if *m == method {
                table.push(vec![method.clone(), fmt_f64(*xi), seed.to_string(), fmt_f64(*h)])?;
            }
        }
        out.push((format!("sweep_{method}.csv"), Artifact::Csv(table)));
    }
    Ok(out)
}

fn sm4_ablation(config: &ExperimentConfig) -> Result<Outputs> {
    let world = Gridworld::new(&config.env)?;
    let target = StateMarginal::uniform(world.num_states());
    let cells: Vec<(usize, u64)> =
        config.skills.iter().flat_map(|&n| config.seeds.iter().map(move |&s| (n, s))).collect();
    let runs = cells
        .par_iter()
        .map(|(n, seed)| {
            let mut cfg = Sm4Config::new(config.loop_config(*seed).with_split(world.half_split()), *n);
            cfg.discriminator = config.discriminator;
            run_sm4(world.mdp(), &target, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary =
        CsvTable::new(&["skills", "seed", "final_kl_to_target_nats", "final_entropy_ha_nats", "final_jensen_gap_nats"]);
    let mut out = Vec::new();
    for ((n, seed), run) in cells.iter().zip(&runs) {
        let last = run.metrics.last().expect("nonempty run");
        summary.push(vec![
            n.to_string(),
            seed.to_string(),
            fmt_f64(last.mixture.kl_to_target),
            fmt_f64(last.mixture.entropy_ha),
            fmt_f64(last.jensen_gap),
        ])?;
        let mixture: Vec<IterationMetrics> = run.metrics.iter().map(|m| m.mixture).collect();
        let gaps = run.metrics.iter().map(|m| fmt_f64(m.jensen_gap)).collect();
        let comps = run
            .metrics
            .iter()
            .map(|m| m.component_entropies.iter().map(|h| fmt_f64(*h)).collect::<Vec<_>>().join(" "))
            .collect();
        out.push((
            format!("sm4_n{n}_seed{seed}.csv"),
            Artifact::Csv(metrics_csv(&mixture, &[("jensen_gap_nats", gaps), ("component_entropies_nats", comps)])?),
        ));
        if *seed == config.seeds[0] {
            for z in 0..*n {
                out.push((
                    format!("sm4_n{n}_z{z}.svg"),
                    Artifact::Svg {
                        marginal: run.component_ha(z),
                        world: Box::new(world.clone()),
                        title: format!("component {z} of {n}"),
                    },
                ));
            }
        }
    }
    out.insert(0, ("sm4_summary.csv".into(), Artifact::Csv(summary)));
    Ok(out)
}

fn ha_ablation(config: &ExperimentConfig) -> Result<Outputs> {
    let world = Gridworld::new(&config.env)?;
    let ns = world.num_states();
    let cells: Vec<(&String, u64)> =
        config.methods.iter().flat_map(|m| config.seeds.iter().map(move |&s| (m, s))).collect();
    let runs = cells
        .par_iter()
        .map(|(method, seed)| {
            let base = config.loop_config(*seed).with_split(world.half_split());
            let cfg = IntrinsicConfig::new(base, BonusKind::parse(method)?).with_historical_average(true);
            run_intrinsic_loop(world.mdp(), &world.coordinates(), &RewardTable::zeros(ns), &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = CsvTable::new(&["method", "seed", "entropy_ha_nats", "entropy_final_nats"]);
    let mut out = Vec::new();
    for ((method, seed), run) in cells.iter().zip(&runs) {
        let last = run.state.metrics.last().expect("nonempty run");
        table.push(vec![method.to_string(), seed.to_string(), fmt_f64(last.entropy_ha), fmt_f64(last.entropy_iterate)])?;
        out.push((format!("ha_{method}_seed{seed}.csv"), Artifact::Csv(metrics_csv(&run.state.metrics, &[])?)));
    }
    out.insert(0, ("ha_ablation.csv".into(), Artifact::Csv(table)));
    Ok(out)
}

/// A random goal density on a corridor of 3 to `max_states` cells.
pub fn random_goal_instance(rng: &mut ChaCha8Rng, max_states: usize) -> (StateMarginal, Vec<[f64; 2]>) {
    use rand::Rng;
    let n = rng.random_range(3..=max_states);
    let goal = StateMarginal::new(random_simplex(n, rng)).expect("simplex point");
    (goal, (0..n).map(|c| [0.0, c as f64]).collect())
}

pub const BRUTE_FORCE_STEPS: usize = 200_000;
pub const BRUTE_FORCE_RATE: f64 = 0.5;

fn goal_targets(config: &ExperimentConfig) -> Result<Outputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds[0]);
    let instances: Vec<_> = (0..config.instances).map(|_| random_goal_instance(&mut rng, config.goal_states)).collect();
    let cells: Vec<(usize, f64)> =
        (0..instances.len()).flat_map(|i| config.epsilons.iter().map(move |&e| (i, e))).collect();
    let results = cells
        .par_iter()
        .map(|&(i, eps)| {
            let (goal, coords) = &instances[i];
            let spec = GoalSpec::new(goal.clone(), eps, GoalMetric::LInf)?;
            let smoothed = smooth_goal_density(&spec, coords)?;
            let rule = optimal_target(&spec, coords)?;
            let brute = brute_force_optimal_target(&spec, coords, BRUTE_FORCE_STEPS, BRUTE_FORCE_RATE)?;
            let f_rule = hitting_objective(&rule, &spec, coords)?;
            let f_brute = hitting_objective(&brute, &spec, coords)?;
            Ok((smoothed, rule, brute, f_rule, f_brute))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut states = CsvTable::new(&["instance", "epsilon", "state", "p_goal", "p_smoothed", "p_sqrt_rule", "p_brute_force"]);
    let mut objective =
        CsvTable::new(&["instance", "epsilon", "f_sqrt_rule", "f_brute_force", "linf_sqrt_rule_vs_brute_force"]);
    for (&(i, eps), (smoothed, rule, brute, f_rule, f_brute)) in cells.iter().zip(&results) {
        let goal = &instances[i].0;
        for s in 0..goal.num_states() {
            states.push(vec![
                i.to_string(),
                fmt_f64(eps),
                s.to_string(),
                fmt_f64(goal.probs()[s]),
                fmt_f64(smoothed.values[s]),
                fmt_f64(rule.probs()[s]),
                fmt_f64(brute.probs()[s]),
            ])?;
        }
        let linf = rule.probs().iter().zip(brute.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        objective.push(vec![i.to_string(), fmt_f64(eps), fmt_f64(*f_rule), fmt_f64(*f_brute), fmt_f64(linf)])?;
    }
    Ok(vec![
        ("goal_targets.csv".into(), Artifact::Csv(states)),
        ("goal_objective.csv".into(), Artifact::Csv(objective)),
    ])
}

/// A random 6-state, 3-action instance: MDP, stationary policy and target.
pub fn random_prop1_instance(rng: &mut ChaCha8Rng) -> Result<(TabularMDP, Policy, StateMarginal)> {
    let mdp = TabularMDP::random(6, 3, 10, rng)?;
    let policy = Policy::random_stationary(6, 3, rng);
    let target = StateMarginal::new(random_simplex(6, rng))?;
    Ok((mdp, policy, target))
}

fn verify_prop1(config: &ExperimentConfig) -> Result<Outputs> {
    let mut table = CsvTable::new(&["seed", "instance", "lhs_nats", "rhs_nats", "gap_nats"]);
    for &seed in &config.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..config.instances {
            let (mdp, policy, target) = random_prop1_instance(&mut rng)?;
            let r = verify_minmax_equivalence(&mdp, &policy, &target)?;
            table.push(vec![seed.to_string(), i.to_string(), fmt_f64(r.lhs), fmt_f64(r.rhs), fmt_f64(r.gap)])?;
        }
    }
    Ok(vec![("prop1.csv".into(), Artifact::Csv(table))])
}

/// Renders one heatmap to a string; used by the golden-file test.
pub fn render_heatmap(marginal: &StateMarginal, world: &Gridworld, title: &str) -> Result<String> {
    heatmap_svg(marginal, world, title)
}

/// Reads a config file, or returns the defaults for `kind` when `path` is `None`.
pub fn load_config(kind: ExperimentKind, path: Option<&Path>, out_dir: &Path) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::new(kind, out_dir)),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ExperimentConfig::from_kv(kind, &KvConfig::parse(&text)?, out_dir)
        }
    }
}
