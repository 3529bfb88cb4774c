//! Finite MDPs, the didactic gridworld builders and episode simulation.
//!
//! Transition tensors are stored densely as `P[s][a][s']` flattened in
//! row-major order. Every constructor validates row sums, so downstream code
//! can treat a [`TabularMDP`] as well formed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::marginal::{random_simplex, Policy};

const ROW_TOL: f64 = 1e-12;

/// A finite-horizon MDP with dense transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMDP {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    initial: Vec<f64>,
    horizon: usize,
}

impl TabularMDP {
    /// Builds an MDP from a flattened `P[s][a][s']` tensor.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        initial: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Dimension("an MDP needs at least one state and one action".into()));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::Dimension(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            )));
        }
        if initial.len() != num_states {
            return Err(Error::Dimension(format!(
                "initial distribution has {} entries, expected {num_states}",
                initial.len()
            )));
        }
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = &transition[(s * num_actions + a) * num_states..][..num_states];
                check_distribution(row, ROW_TOL)
                    .map_err(|e| Error::Distribution(format!("P[{s}][{a}]: {e}")))?;
            }
        }
        check_distribution(&initial, ROW_TOL)
            .map_err(|e| Error::Distribution(format!("initial distribution: {e}")))?;
        Ok(Self { num_states, num_actions, transition, initial, horizon })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Next-state distribution `P[s][a][·]`.
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.num_actions + a) * self.num_states..][..self.num_states]
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// Same dynamics with a different episode length.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(Self { horizon, ..self.clone() })
    }

    /// Same dynamics with a different initial distribution.
    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self> {
        Self::new(self.num_states, self.num_actions, self.transition.clone(), initial, self.horizon)
    }

    /// Dense random MDP: every transition row and the initial distribution
    /// drawn from a flat Dirichlet.
    pub fn random<R: Rng + ?Sized>(num_states: usize, num_actions: usize, horizon: usize, rng: &mut R) -> Result<Self> {
        let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            transition.extend(random_simplex(num_states, rng));
        }
        let initial = random_simplex(num_states, rng);
        Self::new(num_states, num_actions, transition, initial, horizon)
    }

    /// Two states, two actions; action `a` moves deterministically to state `a`.
    /// Episodes start uniformly at random.
    pub fn two_state_symmetric(horizon: usize) -> Result<Self> {
        let transition = vec![
            1.0, 0.0, 0.0, 1.0, // from state 0
            1.0, 0.0, 0.0, 1.0, // from state 1
        ];
        Self::new(2, 2, transition, vec![0.5, 0.5], horizon)
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.num_states() != self.num_states || policy.num_actions() != self.num_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.num_states(),
                policy.num_actions(),
                self.num_states,
                self.num_actions
            )));
        }
        if !policy.is_stationary() && policy.len() != self.horizon {
            return Err(Error::Dimension(format!(
                "non-stationary policy has {} steps, horizon is {}",
                policy.len(),
                self.horizon
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_distribution(p: &[f64], tol: f64) -> std::result::Result<(), String> {
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(format!("entry {i} is {v}"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Row-stochastic `S x S` matrix induced by one step of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        for i in 0..n {
            check_distribution(&data[i * n..(i + 1) * n], ROW_TOL)
                .map_err(|e| Error::Distribution(format!("row {i}: {e}")))?;
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Row vector times matrix.
    pub fn left_multiply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += vi * m;
            }
        }
        out
    }
}

/// `M[s][s'] = Σ_a π(a|s) P[s][a][s']` for one action-distribution table
/// (`table[s * A + a]`).
pub fn policy_transition_matrix(mdp: &TabularMDP, table: &[f64]) -> Result<TransitionMatrix> {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    if table.len() != ns * na {
        return Err(Error::Dimension(format!(
            "action table has {} entries, expected {}",
            table.len(),
            ns * na
        )));
    }
    let mut data = vec![0.0; ns * ns];
    for s in 0..ns {
        let out = &mut data[s * ns..(s + 1) * ns];
        for a in 0..na {
            let pa = table[s * na + a];
            if pa == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(mdp.next_state_probs(s, a)) {
                *o += pa * p;
            }
        }
    }
    TransitionMatrix::new(ns, data)
}

/// One sampled episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub seed: u64,
}

/// Samples one episode of length `T` with a fresh generator seeded by `seed`.
pub fn sample_episode(mdp: &TabularMDP, policy: &Policy, seed: u64) -> Result<Trajectory> {
    mdp.check_policy(policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (states, actions) = rollout(mdp, policy, &mut rng);
    Ok(Trajectory { states, actions, seed })
}

/// Samples an episode from a caller-owned generator. The policy must already
/// be validated against the MDP.
pub(crate) fn rollout<R: Rng + ?Sized>(
    mdp: &TabularMDP,
    policy: &Policy,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let horizon = mdp.horizon;
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut s = sample_categorical(&mdp.initial, rng);
    for t in 0..horizon {
        let a = sample_categorical(policy.action_probs(t, s), rng);
        states.push(s);
        actions.push(a);
        if t + 1 < horizon {
            s = sample_categorical(mdp.next_state_probs(s, a), rng);
        }
    }
    (states, actions)
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// A grid cell, `(row, col)` with rows growing downwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub row: i64,
    pub col: i64,
}

impl Cell {
    pub const fn new(row: i64, col: i64) -> Self {
        Self { row, col }
    }

    fn offset(self, (dr, dc): (i64, i64)) -> Self {
        Self::new(self.row + dr, self.col + dc)
    }
}

/// Action order: up, down, left, right.
pub const MOVES: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
pub const ACTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

/// Layout and dynamics parameters of a gridworld with an optional noisy-TV cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridworldSpec {
    pub cells: BTreeSet<Cell>,
    /// Episodes start here; defaults to the TV cell, then the first cell.
    pub start: Option<Cell>,
    pub noisy_tv_cell: Option<Cell>,
    pub noisy_tv_xi: f64,
    /// Probability the commanded move is executed; otherwise a uniformly random move is taken.
    pub slip_success_prob: f64,
    pub horizon: usize,
}

impl GridworldSpec {
    /// Two hallways crossing at their midpoints, each arm `arm_length` cells
    /// long, with the noisy TV at the intersection. Episodes start at the
    /// intersection.
    pub fn cross(arm_length: usize, slip_success_prob: f64, xi: f64, horizon: usize) -> Self {
        Self::cross_with_arms(arm_length, arm_length, slip_success_prob, xi, horizon)
    }

    /// Cross with separate horizontal and vertical arm lengths.
    pub fn cross_with_arms(
        horizontal_arm: usize,
        vertical_arm: usize,
        slip_success_prob: f64,
        xi: f64,
        horizon: usize,
    ) -> Self {
        let (h, v) = (horizontal_arm as i64, vertical_arm as i64);
        let center = Cell::new(v, h);
        let mut cells = BTreeSet::new();
        for c in 0..=2 * h {
            cells.insert(Cell::new(v, c));
        }
        for r in 0..=2 * v {
            cells.insert(Cell::new(r, h));
        }
        Self {
            cells,
            start: Some(center),
            noisy_tv_cell: Some(center),
            noisy_tv_xi: xi,
            slip_success_prob,
            horizon,
        }
    }

    pub fn with_xi(&self, xi: f64) -> Self {
        Self { noisy_tv_xi: xi, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Layout("layout has no passable cells".into()));
        }
        if !(0.0..=1.0).contains(&self.slip_success_prob) {
            return Err(Error::Config(format!(
                "slip_success_prob {} outside [0, 1]",
                self.slip_success_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.noisy_tv_xi) {
            return Err(Error::Config(format!("xi {} outside [0, 1]", self.noisy_tv_xi)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        match self.noisy_tv_cell {
            Some(tv) if !self.cells.contains(&tv) => {
                return Err(Error::Layout(format!("noisy TV cell {tv:?} is not passable")));
            }
            None if self.noisy_tv_xi != 0.0 => {
                return Err(Error::Config("xi is set but the layout has no noisy TV cell".into()));
            }
            _ => {}
        }
        if let Some(start) = self.start {
            if !self.cells.contains(&start) {
                return Err(Error::Layout(format!("start cell {start:?} is not passable")));
            }
        }
        let first = *self.cells.iter().next().expect("nonempty");
        let mut seen = BTreeSet::from([first]);
        let mut queue = VecDeque::from([first]);
        while let Some(c) = queue.pop_front() {
            for m in MOVES {
                let n = c.offset(m);
                if self.cells.contains(&n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        if seen.len() != self.cells.len() {
            return Err(Error::Layout(format!(
                "layout is disconnected: {} of {} cells reachable",
                seen.len(),
                self.cells.len()
            )));
        }
        Ok(())
    }

    /// Reads the plain-text format written by [`GridworldSpec::to_config_string`].
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvConfig::parse(text)?;
        for key in kv.keys() {
            if !matches!(key, "slip_success_prob" | "xi" | "horizon") {
                return Err(Error::Config(format!("unknown gridworld key '{key}'")));
            }
        }
        Self::from_kv(&kv)
    }

    pub(crate) fn from_kv(kv: &KvConfig) -> Result<Self> {
        let rows = kv
            .layout()
            .ok_or_else(|| Error::Config("missing 'layout:' block".into()))?;
        let mut cells = BTreeSet::new();
        let (mut start, mut tv) = (None, None);
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::new(r as i64, c as i64);
                match ch {
                    '#' | ' ' => continue,
                    '.' => {}
                    'S' => set_once(&mut start, cell, 'S')?,
                    'T' => set_once(&mut tv, cell, 'T')?,
                    other => {
                        return Err(Error::Config(format!(
                            "unexpected layout character '{other}' at row {r}, column {c}"
                        )))
                    }
                }
                cells.insert(cell);
            }
        }
        let xi = kv.get_f64("xi")?.unwrap_or(0.0);
        let spec = Self {
            cells,
            start,
            noisy_tv_cell: tv,
            noisy_tv_xi: xi,
            slip_success_prob: kv.get_f64("slip_success_prob")?.unwrap_or(0.1),
            horizon: kv
                .get_usize("horizon")?
                .ok_or_else(|| Error::Config("missing 'horizon'".into()))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical text form; `parse(to_config_string())` reproduces the spec.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "slip_success_prob = {}", self.slip_success_prob).unwrap();
        if self.noisy_tv_cell.is_some() {
            writeln!(out, "xi = {}", self.noisy_tv_xi).unwrap();
        }
        writeln!(out, "horizon = {}", self.horizon).unwrap();
        out.push_str("layout:\n");
        for row in self.ascii_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    /// ASCII art normalized so the bounding box starts at row 1, column 1
    /// inside a one-cell wall border.
    pub fn ascii_rows(&self) -> Vec<String> {
        let (r0, r1, c0, c1) = bounds(&self.cells);
        let mut rows = Vec::new();
        for r in r0 - 1..=r1 + 1 {
            let mut line = String::new();
            for c in c0 - 1..=c1 + 1 {
                let cell = Cell::new(r, c);
                let ch = if !self.cells.contains(&cell) {
                    '#'
                } else if Some(cell) == self.noisy_tv_cell {
                    'T'
                } else if Some(cell) == self.start && self.start != self.noisy_tv_cell {
                    'S'
                } else {
                    '.'
                };
                line.push(ch);
            }
            rows.push(line);
        }
        rows
    }

    fn start_cell(&self) -> Cell {
        self.start
            .or(self.noisy_tv_cell)
            .unwrap_or_else(|| *self.cells.iter().next().expect("validated nonempty"))
    }
}

fn set_once(slot: &mut Option<Cell>, cell: Cell, ch: char) -> Result<()> {
    if slot.replace(cell).is_some() {
        return Err(Error::Config(format!("layout has more than one '{ch}' cell")));
    }
    Ok(())
}

fn bounds(cells: &BTreeSet<Cell>) -> (i64, i64, i64, i64) {
    let r0 = cells.iter().map(|c| c.row).min().unwrap_or(0);
    let r1 = cells.iter().map(|c| c.row).max().unwrap_or(0);
    let c0 = cells.iter().map(|c| c.col).min().unwrap_or(0);
    let c1 = cells.iter().map(|c| c.col).max().unwrap_or(0);
    (r0, r1, c0, c1)
}

/// A built gridworld: the MDP plus the cell geometry behind each state index.
#[derive(Debug, Clone)]
pub struct Gridworld {
    spec: GridworldSpec,
    cells: Vec<Cell>,
    index: BTreeMap<Cell, usize>,
    mdp: TabularMDP,
}

impl Gridworld {
    pub fn new(spec: &GridworldSpec) -> Result<Self> {
        spec.validate()?;
        let cells: Vec<Cell> = spec.cells.iter().copied().collect();
        let index: BTreeMap<Cell, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let ns = cells.len();
        let na = MOVES.len();
        let mut transition = vec![0.0; ns * na * ns];
        let random_share = (1.0 - spec.slip_success_prob) / na as f64;
        for (s, &cell) in cells.iter().enumerate() {
            let targets: Vec<usize> = MOVES
                .iter()
                .map(|&m| index.get(&cell.offset(m)).copied().unwrap_or(s))
                .collect();
            let is_tv = spec.noisy_tv_cell == Some(cell);
            let mut neighborhood = vec![s];
            neighborhood.extend(MOVES.iter().filter_map(|&m| index.get(&cell.offset(m)).copied()));
            for a in 0..na {
                let row = &mut transition[(s * na + a) * ns..][..ns];
                let ordinary_weight = if is_tv { 1.0 - spec.noisy_tv_xi } else { 1.0 };
                for (d, &target) in targets.iter().enumerate() {
                    let p = if d == a { spec.slip_success_prob + random_share } else { random_share };
                    row[target] += ordinary_weight * p;
                }
                if is_tv {
                    let share = spec.noisy_tv_xi / neighborhood.len() as f64;
                    for &n in &neighborhood {
                        row[n] += share;
                    }
                }
            }
        }
        let mut initial = vec![0.0; ns];
        initial[index[&spec.start_cell()]] = 1.0;
        let mdp = TabularMDP::new(ns, na, transition, initial, spec.horizon)?;
        Ok(Self { spec: spec.clone(), cells, index, mdp })
    }

    pub fn mdp(&self) -> &TabularMDP {
        &self.mdp
    }

    pub fn spec(&self) -> &GridworldSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn num_states(&self) -> usize {
        self.cells.len()
    }

    pub fn state_of(&self, cell: Cell) -> Option<usize> {
        self.index.get(&cell).copied()
    }

    pub fn tv_state(&self) -> Option<usize> {
        self.spec.noisy_tv_cell.and_then(|c| self.state_of(c))
    }

    /// Grid coordinates `(row, col)` as floats, one pair per state.
    pub fn coordinates(&self) -> Vec<[f64; 2]> {
        self.cells.iter().map(|c| [c.row as f64, c.col as f64]).collect()
    }

    /// States strictly left and strictly right of the split column: the TV
    /// column when there is one, otherwise the middle of the bounding box.
    pub fn half_split(&self) -> HalfSplit {
        let split_col = match self.spec.noisy_tv_cell {
            Some(tv) => tv.col as f64,
            None => {
                let (_, _, c0, c1) = bounds(&self.spec.cells);
                (c0 + c1) as f64 / 2.0
            }
        };
        HalfSplit {
            left: self.cells.iter().map(|c| (c.col as f64) < split_col).collect(),
            right: self.cells.iter().map(|c| (c.col as f64) > split_col).collect(),
        }
    }
}

/// Builds the MDP of a (possibly noisy-TV) gridworld.
pub fn build_cross_gridworld(spec: &GridworldSpec) -> Result<TabularMDP> {
    Ok(Gridworld::new(spec)?.mdp)
}

/// Star-shaped layout: a hub with `num_halls` straight arms of `hall_length`
/// cells, arms laid out right, up, left, down. Episodes start at the hub.
pub fn radial_hall_spec(
    num_halls: usize,
    hall_length: usize,
    slip_success_prob: f64,
    horizon: usize,
) -> Result<GridworldSpec> {
    if num_halls == 0 || hall_length == 0 {
        return Err(Error::Config("num_halls and hall_length must be at least 1".into()));
    }
    if num_halls > 4 {
        return Err(Error::Config(format!(
            "a 4-connected grid supports at most 4 halls, got {num_halls}"
        )));
    }
    const DIRECTIONS: [(i64, i64); 4] = [(0, 1), (-1, 0), (0, -1), (1, 0)];
    let hub = Cell::new(0, 0);
    let mut cells = BTreeSet::from([hub]);
    for &(dr, dc) in DIRECTIONS.iter().take(num_halls) {
        for k in 1..=hall_length as i64 {
            cells.insert(Cell::new(dr * k, dc * k));
        }
    }
    let spec = GridworldSpec {
        cells,
        start: Some(hub),
        noisy_tv_cell: None,
        noisy_tv_xi: 0.0,
        slip_success_prob,
        horizon,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn build_radial_hall_gridworld(
    num_halls: usize,
    hall_length: usize,
    slip_success_prob: f64,
    horizon: usize,
) -> Result<TabularMDP> {
    build_cross_gridworld(&radial_hall_spec(num_halls, hall_length, slip_success_prob, horizon)?)
}

/// Two disjoint state masks used for left/right mass statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfSplit {
    pub left: Vec<bool>,
    pub right: Vec<bool>,
}

impl HalfSplit {
    /// First `⌊n/2⌋` states versus last `⌊n/2⌋` states.
    pub fn by_index(n: usize) -> Self {
        let half = n / 2;
        Self {
            left: (0..n).map(|i| i < half).collect(),
            right: (0..n).map(|i| i >= n - half).collect(),
        }
    }

    pub fn masses(&self, probs: &[f64]) -> (f64, f64) {
        let sum = |mask: &[bool]| probs.iter().zip(mask).filter(|(_, m)| **m).map(|(p, _)| p).sum();
        (sum(&self.left), sum(&self.right))
    }
}
