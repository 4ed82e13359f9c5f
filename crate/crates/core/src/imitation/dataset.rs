//! Demonstration datasets and their line-oriented text format.
//!
//! ```text
//! # rlab-demos 1
//! # trajectory step state action
//! 0 0 1,0,0,0 d:3
//! 0 1 0,1,0,0 c:0.25,-1
//! ```
//!
//! Each record is one `(state, action)` pair. `d:` marks a discrete action
//! index and `c:` a continuous vector. Records of a trajectory are
//! contiguous with steps counting up from 0. Numbers use Rust's shortest
//! round-trip formatting, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::envs::Action;
use crate::error::{Error, Result};

pub const DEMOS_HEADER: &str = "# rlab-demos 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Last step index `T`; a trajectory holds `T + 1` pairs.
    pub fn horizon(&self) -> usize {
        self.len().saturating_sub(1)
    }
}

/// A flattened `(s, a)` pair tagged with its source.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoPair {
    pub trajectory: u64,
    pub step: usize,
    pub state: Vec<f64>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemonstrationDataset {
    trajectories: Vec<Trajectory>,
}

impl DemonstrationDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// `M = Σ_i (T^{(i)} + 1)`.
    pub fn num_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn next_id(&self) -> u64 {
        self.trajectories.iter().map(|t| t.id + 1).max().unwrap_or(0)
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.trajectories.first().map(|t| t.states[0].len())
    }

    pub fn push(&mut self, trajectory: Trajectory) -> Result<()> {
        if trajectory.is_empty() || trajectory.states.len() != trajectory.actions.len() {
            return Err(Error::InvalidSpec(format!(
                "trajectory {} must hold equally many states and actions (got {} and {})",
                trajectory.id,
                trajectory.states.len(),
                trajectory.actions.len()
            )));
        }
        let dim = self.state_dim().unwrap_or(trajectory.states[0].len());
        if dim == 0 || trajectory.states.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidSpec(format!(
                "trajectory {} has states of inconsistent dimension",
                trajectory.id
            )));
        }
        if self.trajectories.iter().any(|t| t.id == trajectory.id) {
            return Err(Error::InvalidSpec(format!("duplicate trajectory id {}", trajectory.id)));
        }
        self.trajectories.push(trajectory);
        Ok(())
    }

    /// Appends every trajectory of `other`, renumbering ids after ours.
    pub fn extend(&mut self, other: &DemonstrationDataset) -> Result<()> {
        for t in &other.trajectories {
            let mut t = t.clone();
            t.id = self.next_id();
            self.push(t)?;
        }
        Ok(())
    }

    /// The first `n` trajectories.
    pub fn prefix(&self, n: usize) -> DemonstrationDataset {
        DemonstrationDataset {
            trajectories: self.trajectories[..n.min(self.trajectories.len())].to_vec(),
        }
    }

    pub fn flatten(&self) -> Vec<DemoPair> {
        self.trajectories
            .iter()
            .flat_map(|t| {
                t.states.iter().zip(&t.actions).enumerate().map(|(step, (s, a))| DemoPair {
                    trajectory: t.id,
                    step,
                    state: s.clone(),
                    action: a.clone(),
                })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(DEMOS_HEADER);
        out.push_str("\n# trajectory step state action\n");
        for t in &self.trajectories {
            for (step, (s, a)) in t.states.iter().zip(&t.actions).enumerate() {
                let _ = writeln!(out, "{} {} {} {}", t.id, step, join(s), format_action(a));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut ds = DemonstrationDataset::new();
        let mut current: Option<Trajectory> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                if lineno == 1 && line != DEMOS_HEADER {
                    return Err(Error::parse(1, format!("expected header `{DEMOS_HEADER}`")));
                }
                continue;
            }
            if lineno == 1 {
                return Err(Error::parse(1, format!("expected header `{DEMOS_HEADER}`")));
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(lineno, format!("expected 4 fields, found {}", fields.len())));
            }
            let id: u64 = fields[0]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad trajectory id `{}`", fields[0])))?;
            let step: usize = fields[1]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad step `{}`", fields[1])))?;
            let state = parse_floats(fields[2]).ok_or_else(|| Error::parse(lineno, "bad state vector"))?;
            let action = parse_action(fields[3]).ok_or_else(|| Error::parse(lineno, "bad action"))?;
            if current.as_ref().is_some_and(|t| t.id != id) {
                let done = current.take().expect("checked above");
                ds.push(done).map_err(|e| Error::parse(lineno, e.to_string()))?;
            }
            let traj = current.get_or_insert_with(|| Trajectory {
                id,
                states: Vec::new(),
                actions: Vec::new(),
            });
            if step != traj.len() {
                return Err(Error::parse(
                    lineno,
                    format!("trajectory {id}: expected step {}, found {step}", traj.len()),
                ));
            }
            traj.states.push(state);
            traj.actions.push(action);
        }
        if text.trim().is_empty() {
            return Err(Error::parse(1, format!("expected header `{DEMOS_HEADER}`")));
        }
        if let Some(t) = current {
            let last = text.lines().count();
            ds.push(t).map_err(|e| Error::parse(last, e.to_string()))?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn format_action(a: &Action) -> String {
    match a {
        Action::Discrete(i) => format!("d:{i}"),
        Action::Continuous(x) => format!("c:{}", join(x)),
    }
}

fn parse_floats(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite())).collect()
}

fn parse_action(s: &str) -> Option<Action> {
    if let Some(i) = s.strip_prefix("d:") {
        i.parse().ok().map(Action::Discrete)
    } else {
        s.strip_prefix("c:").and_then(parse_floats).map(Action::Continuous)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: u64, len: usize) -> Trajectory {
        Trajectory {
            id,
            states: (0..len).map(|i| vec![i as f64, 0.1 * id as f64]).collect(),
            actions: (0..len).map(|i| Action::Discrete(i % 3)).collect(),
        }
    }

    #[test]
    fn pair_count_follows_horizons() {
        let mut ds = DemonstrationDataset::new();
        ds.push(traj(0, 4)).unwrap();
        ds.push(traj(1, 5)).unwrap();
        assert_eq!(ds.trajectories()[0].horizon(), 3);
        assert_eq!(ds.num_pairs(), 9);
        assert_eq!(ds.flatten().len(), 9);
        assert!(DemonstrationDataset::new().flatten().is_empty());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut ds = DemonstrationDataset::new();
        ds.push(traj(3, 2)).unwrap();
        ds.push(Trajectory {
            id: 7,
            states: vec![vec![0.1 + 0.2, -1e-300]],
            actions: vec![Action::Continuous(vec![std::f64::consts::PI, -0.0])],
        })
        .unwrap();
        let back = DemonstrationDataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn malformed_records_name_their_line() {
        let bad = format!("{DEMOS_HEADER}\n0 0 1,2 d:1\n0 2 1,2 d:1\n");
        assert!(matches!(DemonstrationDataset::from_text(&bad), Err(Error::Parse { line: 3, .. })));
        let bad = format!("{DEMOS_HEADER}\n0 0 1,x d:1\n");
        assert!(matches!(DemonstrationDataset::from_text(&bad), Err(Error::Parse { line: 2, .. })));
        assert!(DemonstrationDataset::from_text("0 0 1 d:1\n").is_err());
        let dims = format!("{DEMOS_HEADER}\n0 0 1,2 d:1\n1 0 1 d:1\n");
        assert!(DemonstrationDataset::from_text(&dims).is_err());
    }

    #[test]
    fn extend_renumbers() {
        let mut a = DemonstrationDataset::new();
        a.push(traj(0, 2)).unwrap();
        let mut b = DemonstrationDataset::new();
        b.push(traj(0, 3)).unwrap();
        a.extend(&b).unwrap();
        assert_eq!(a.trajectories()[1].id, 1);
        assert_eq!(a.num_pairs(), 5);
        assert_eq!(a.prefix(1).num_pairs(), 2);
    }
}
