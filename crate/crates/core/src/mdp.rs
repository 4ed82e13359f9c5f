//! Finite MDPs and the two exact dynamic-programming solvers.
//!
//! States and actions are dense indices. The joint dynamics `p(s', r | s, a)`
//! are stored as an outcome list per `(s, a)` pair; outcomes with the same
//! next state but different rewards are allowed.

use crate::error::{check_dim, Error, Result};

const PROB_TOLERANCE: f64 = 1e-12;

/// Default sweep cap for the iterative solvers.
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next_state: usize,
    pub reward: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Vec<Outcome>>,
    discount: f64,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// Builds an MDP from `(s, a, s', r, p)` records.
    ///
    /// Terminal states are absorbing with zero reward; any records given for
    /// them are replaced by a self-loop.
    pub fn from_records<I>(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        records: I,
        terminal_states: &[usize],
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, usize, f64, f64)>,
    {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidSpec(
                "an MDP needs at least one state and one action".into(),
            ));
        }
        let mut transitions = vec![Vec::new(); num_states * num_actions];
        for (s, a, next_state, reward, probability) in records {
            if s >= num_states || next_state >= num_states {
                return Err(Error::InvalidSpec(format!(
                    "state index out of range in record ({s}, {a}, {next_state})"
                )));
            }
            if a >= num_actions {
                return Err(Error::InvalidSpec(format!(
                    "action index {a} out of range (num_actions = {num_actions})"
                )));
            }
            transitions[s * num_actions + a].push(Outcome {
                next_state,
                reward,
                probability,
            });
        }
        let mut terminal = vec![false; num_states];
        for &t in terminal_states {
            if t >= num_states {
                return Err(Error::InvalidSpec(format!("terminal state {t} out of range")));
            }
            terminal[t] = true;
            for a in 0..num_actions {
                transitions[t * num_actions + a] = vec![Outcome {
                    next_state: t,
                    reward: 0.0,
                    probability: 1.0,
                }];
            }
        }
        let mdp = TabularMdp {
            num_states,
            num_actions,
            transitions,
            discount,
            terminal,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::InvalidSpec(format!(
                "discount {} outside [0, 1]",
                self.discount
            )));
        }
        if self.discount >= 1.0 && !self.terminal.iter().any(|&t| t) {
            return Err(Error::InvalidSpec(
                "continuing task (no terminal states) requires discount < 1".into(),
            ));
        }
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let outcomes = self.outcomes(s, a);
                if outcomes.is_empty() {
                    return Err(Error::InvalidSpec(format!("no outcomes for (s={s}, a={a})")));
                }
                let mut total = 0.0;
                for o in outcomes {
                    if !(o.probability >= 0.0) || !o.reward.is_finite() {
                        return Err(Error::InvalidSpec(format!(
                            "bad outcome for (s={s}, a={a}): {o:?}"
                        )));
                    }
                    total += o.probability;
                }
                if (total - 1.0).abs() > PROB_TOLERANCE {
                    return Err(Error::InvalidSpec(format!(
                        "probabilities for (s={s}, a={a}) sum to {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses the line-oriented MDP format.
    ///
    /// ```text
    /// # comment
    /// states 2
    /// actions 2
    /// discount 0.9
    /// terminal 3        (optional, repeatable)
    /// 0 0 1 0.0 0.8     (s a s' r p)
    /// ```
    pub fn from_text(text: &str) -> Result<Self> {
        let mut num_states = None;
        let mut num_actions = None;
        let mut discount = None;
        let mut terminals = Vec::new();
        let mut records = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_usize = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(line_no, format!("expected an index, found {s:?}")))
            };
            let parse_f64 = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("expected a number, found {s:?}")))
            };
            match fields[0] {
                "states" | "actions" | "discount" | "terminal" => {
                    if fields.len() != 2 {
                        return Err(Error::parse(line_no, format!("{} takes one value", fields[0])));
                    }
                    match fields[0] {
                        "states" => num_states = Some(parse_usize(fields[1])?),
                        "actions" => num_actions = Some(parse_usize(fields[1])?),
                        "discount" => discount = Some(parse_f64(fields[1])?),
                        _ => terminals.push(parse_usize(fields[1])?),
                    }
                }
                _ => {
                    if fields.len() != 5 {
                        return Err(Error::parse(line_no, "transition records need 5 fields: s a s' r p"));
                    }
                    records.push((
                        parse_usize(fields[0])?,
                        parse_usize(fields[1])?,
                        parse_usize(fields[2])?,
                        parse_f64(fields[3])?,
                        parse_f64(fields[4])?,
                    ));
                }
            }
        }
        let missing = |what: &str| Error::parse(0, format!("missing `{what}` header"));
        TabularMdp::from_records(
            num_states.ok_or_else(|| missing("states"))?,
            num_actions.ok_or_else(|| missing("actions"))?,
            discount.ok_or_else(|| missing("discount"))?,
            records,
            &terminals,
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.transitions[s * self.num_actions + a]
    }

    /// One-step lookahead `Σ p(s', r | s, a) [r + γ V(s')]`.
    pub fn lookahead(&self, values: &[f64], s: usize, a: usize) -> f64 {
        self.outcomes(s, a)
            .iter()
            .map(|o| o.probability * (o.reward + self.discount * values[o.next_state]))
            .sum()
    }

    /// Lookahead values for every action at `s`.
    pub fn action_values(&self, values: &ValueTable, s: usize) -> Vec<f64> {
        (0..self.num_actions)
            .map(|a| self.lookahead(&values.values, s, a))
            .collect()
    }

    fn check_values(&self, values: &ValueTable) -> Result<()> {
        check_dim(self.num_states, values.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_dim(num_states * num_actions, probs.len())?;
        for (s, row) in probs.chunks(num_actions).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("policy row {s} has entries outside [0, 1]")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOLERANCE {
                return Err(Error::invalid(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(TabularPolicy { num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        TabularPolicy {
            num_actions,
            probs: vec![p; num_states * num_actions],
        }
    }

    /// Same action distribution in every state.
    pub fn state_independent(num_states: usize, action_probs: &[f64]) -> Result<Self> {
        let probs = action_probs
            .iter()
            .copied()
            .cycle()
            .take(num_states * action_probs.len())
            .collect();
        TabularPolicy::new(num_states, action_probs.len(), probs)
    }

    pub fn from_deterministic(policy: &DeterministicTabularPolicy, num_actions: usize) -> Self {
        let mut probs = vec![0.0; policy.actions.len() * num_actions];
        for (s, &a) in policy.actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        TabularPolicy { num_actions, probs }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(num_states: usize) -> Self {
        ValueTable {
            values: vec![0.0; num_states],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicTabularPolicy {
    pub actions: Vec<usize>,
}

impl DeterministicTabularPolicy {
    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }
}

/// How a sweep reads the value table while writing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// Every backup in a sweep reads the previous sweep's table.
    #[default]
    Synchronous,
    /// Backups overwrite `V(s)` in ascending state order and later states
    /// see the updated values.
    InPlace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub psi: f64,
    pub max_sweeps: usize,
    pub mode: SweepMode,
}

impl SolverOptions {
    pub fn new(psi: f64) -> Self {
        SolverOptions {
            psi,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            mode: SweepMode::default(),
        }
    }

    pub fn with_mode(mut self, mode: SweepMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.psi > 0.0) {
            return Err(Error::invalid(format!("psi must be > 0, got {}", self.psi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Backup<'a> {
    Expectation(&'a TabularPolicy),
    Optimality,
}

/// Runs Bellman sweeps one at a time from `V ≡ 0`.
///
/// Exposed so callers can inspect intermediate tables (e.g. `v_4`).
#[derive(Debug, Clone)]
pub struct BellmanSweeper<'a> {
    mdp: &'a TabularMdp,
    backup: Backup<'a>,
    mode: SweepMode,
    values: Vec<f64>,
    scratch: Vec<f64>,
    sweeps: usize,
}

impl<'a> BellmanSweeper<'a> {
    pub fn evaluation(mdp: &'a TabularMdp, policy: &'a TabularPolicy, mode: SweepMode) -> Result<Self> {
        check_dim(mdp.num_states(), policy.num_states())?;
        check_dim(mdp.num_actions(), policy.num_actions())?;
        Ok(Self::new(mdp, Backup::Expectation(policy), mode))
    }

    pub fn optimality(mdp: &'a TabularMdp, mode: SweepMode) -> Self {
        Self::new(mdp, Backup::Optimality, mode)
    }

    fn new(mdp: &'a TabularMdp, backup: Backup<'a>, mode: SweepMode) -> Self {
        BellmanSweeper {
            mdp,
            backup,
            mode,
            values: vec![0.0; mdp.num_states()],
            scratch: vec![0.0; mdp.num_states()],
            sweeps: 0,
        }
    }

    fn backup_state(&self, source: &[f64], s: usize) -> f64 {
        match self.backup {
            Backup::Expectation(policy) => policy
                .row(s)
                .iter()
                .enumerate()
                .map(|(a, &p)| if p == 0.0 { 0.0 } else { p * self.mdp.lookahead(source, s, a) })
                .sum(),
            Backup::Optimality => (0..self.mdp.num_actions())
                .map(|a| self.mdp.lookahead(source, s, a))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Performs one full sweep and returns `Δ = max_s |V_new(s) − V_old(s)|`.
    pub fn sweep(&mut self) -> f64 {
        let mut delta: f64 = 0.0;
        match self.mode {
            SweepMode::InPlace => {
                for s in 0..self.values.len() {
                    if self.mdp.is_terminal(s) {
                        continue;
                    }
                    let old = self.values[s];
                    let new = self.backup_state(&self.values, s);
                    self.values[s] = new;
                    delta = delta.max((old - new).abs());
                }
            }
            SweepMode::Synchronous => {
                for s in 0..self.values.len() {
                    self.scratch[s] = if self.mdp.is_terminal(s) {
                        0.0
                    } else {
                        self.backup_state(&self.values, s)
                    };
                    delta = delta.max((self.scratch[s] - self.values[s]).abs());
                }
                std::mem::swap(&mut self.values, &mut self.scratch);
            }
        }
        self.sweeps += 1;
        delta
    }

    pub fn values(&self) -> ValueTable {
        ValueTable {
            values: self.values.clone(),
        }
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Sweeps until `Δ < ψ`, returning the per-sweep deltas.
    pub fn run_to_convergence(&mut self, options: &SolverOptions) -> Result<Vec<f64>> {
        options.validate()?;
        let mut deltas = Vec::new();
        loop {
            let delta = self.sweep();
            deltas.push(delta);
            if delta < options.psi {
                return Ok(deltas);
            }
            if self.sweeps >= options.max_sweeps {
                return Err(Error::NonConvergence {
                    sweeps: self.sweeps,
                    delta,
                });
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub values: ValueTable,
    pub sweeps: usize,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ValueIteration {
    pub values: ValueTable,
    pub policy: DeterministicTabularPolicy,
    pub sweeps: usize,
    pub deltas: Vec<f64>,
}

/// `G_t = Σ_{k=t+1}^{T} γ^{k−t−1} R_k` where `rewards[k − 1] = R_k`.
pub fn discounted_return(rewards: &[f64], gamma: f64, t: usize) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::DegenerateInput("empty reward sequence".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    if t > rewards.len() {
        return Err(Error::invalid(format!(
            "t = {t} beyond horizon {}",
            rewards.len()
        )));
    }
    let mut total = 0.0;
    let mut weight = 1.0;
    for &r in &rewards[t..] {
        total += weight * r;
        weight *= gamma;
    }
    Ok(total)
}

pub fn iterative_policy_evaluation(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    options: &SolverOptions,
) -> Result<PolicyEvaluation> {
    let mut sweeper = BellmanSweeper::evaluation(mdp, policy, options.mode)?;
    let deltas = sweeper.run_to_convergence(options)?;
    Ok(PolicyEvaluation {
        values: sweeper.values(),
        sweeps: sweeper.sweeps(),
        deltas,
    })
}

pub fn value_iteration(mdp: &TabularMdp, options: &SolverOptions) -> Result<ValueIteration> {
    let mut sweeper = BellmanSweeper::optimality(mdp, options.mode);
    let deltas = sweeper.run_to_convergence(options)?;
    let values = sweeper.values();
    let policy = greedy_policy(mdp, &values)?;
    Ok(ValueIteration {
        values,
        policy,
        sweeps: sweeper.sweeps(),
        deltas,
    })
}

/// Greedy policy w.r.t. `values`; ties go to the lowest action index.
pub fn greedy_policy(mdp: &TabularMdp, values: &ValueTable) -> Result<DeterministicTabularPolicy> {
    mdp.check_values(values)?;
    let actions = (0..mdp.num_states())
        .map(|s| {
            let q = mdp.action_values(values, s);
            let mut best = 0;
            for (a, &v) in q.iter().enumerate().skip(1) {
                if v > q[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Ok(DeterministicTabularPolicy { actions })
}

/// Every action whose lookahead is within `tol` of the best one.
pub fn greedy_action_set(mdp: &TabularMdp, values: &ValueTable, s: usize, tol: f64) -> Result<Vec<usize>> {
    mdp.check_values(values)?;
    let q = mdp.action_values(values, s);
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(q.iter()
        .enumerate()
        .filter(|(_, &v)| best - v <= tol)
        .map(|(a, _)| a)
        .collect())
}
