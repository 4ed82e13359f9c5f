use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    North = 0,
    South = 1,
    East = 2,
    West = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::North, GridAction::South, GridAction::East, GridAction::West];

    fn delta(self) -> (isize, isize) {
        match self {
            GridAction::North => (-1, 0),
            GridAction::South => (1, 0),
            GridAction::East => (0, 1),
            GridAction::West => (0, -1),
        }
    }
}

/// Action probabilities (north, south, east, west) biased towards east.
pub const WIND_POLICY: [f64; 4] = [0.25, 0.25, 0.35, 0.15];

/// Teleport: every action taken in `from` lands in `to` and pays `reward`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub reward: f64,
}

/// Deterministic grid world. Cells are `(row, col)`; state index is
/// `row * width + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    pub boundary_penalty: f64,
    pub jumps: Vec<Jump>,
    pub walls: BTreeSet<(usize, usize)>,
    /// Fixed action distribution to evaluate, e.g. [`WIND_POLICY`].
    pub action_distribution: Option<[f64; 4]>,
}

impl GridWorldSpec {
    pub fn open(width: usize, height: usize) -> Self {
        GridWorldSpec {
            width,
            height,
            boundary_penalty: -1.0,
            jumps: Vec::new(),
            walls: BTreeSet::new(),
            action_distribution: None,
        }
    }

    /// 5×5 world with jumps (0,1)→(4,1) paying +10 and (0,3)→(2,3) paying +5.
    pub fn with_two_jumps() -> Self {
        let mut spec = Self::open(5, 5);
        spec.jumps = vec![
            Jump {
                from: (0, 1),
                to: (4, 1),
                reward: 10.0,
            },
            Jump {
                from: (0, 3),
                to: (2, 3),
                reward: 5.0,
            },
        ];
        spec
    }

    pub fn num_states(&self) -> usize {
        self.width * self.height
    }

    pub fn state_index(&self, cell: (usize, usize)) -> usize {
        cell.0 * self.width + cell.1
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s / self.width, s % self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidSpec("grid must be non-empty".into()));
        }
        let inside = |c: (usize, usize)| c.0 < self.height && c.1 < self.width;
        if let Some(w) = self.walls.iter().find(|&&w| !inside(w)) {
            return Err(Error::InvalidSpec(format!("wall {w:?} outside the grid")));
        }
        let mut sources = BTreeSet::new();
        for j in &self.jumps {
            for c in [j.from, j.to] {
                if !inside(c) {
                    return Err(Error::InvalidSpec(format!("jump cell {c:?} outside the grid")));
                }
                if self.walls.contains(&c) {
                    return Err(Error::InvalidSpec(format!("jump cell {c:?} is a wall")));
                }
            }
            if !sources.insert(j.from) {
                return Err(Error::InvalidSpec(format!("two jumps leave {:?}", j.from)));
            }
            if !j.reward.is_finite() {
                return Err(Error::InvalidSpec("jump reward must be finite".into()));
            }
        }
        if let Some(p) = self.action_distribution {
            if p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSpec("action distribution must be a probability vector".into()));
            }
        }
        Ok(())
    }

    /// Deterministic successor and reward.
    pub fn transition(&self, cell: (usize, usize), action: GridAction) -> ((usize, usize), f64) {
        if let Some(j) = self.jumps.iter().find(|j| j.from == cell) {
            return (j.to, j.reward);
        }
        let (dr, dc) = action.delta();
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            return (cell, self.boundary_penalty);
        }
        let next = (r as usize, c as usize);
        if self.walls.contains(&next) {
            return (cell, self.boundary_penalty);
        }
        (next, 0.0)
    }

    /// Parses a text map.
    ///
    /// Optional `key = value` headers (`penalty`, `jump <letter> <reward>`,
    /// `wind = n s e w`) precede the grid rows. In the grid `.` is free, `#` a
    /// wall, an uppercase letter a jump source and the matching lowercase
    /// letter its target. `S` and `G` are read as free cells. `#` lines
    /// before the grid are comments.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut penalty = -1.0;
        let mut wind = None;
        let mut jump_rewards: Vec<(char, f64)> = Vec::new();
        let mut rows: Vec<(usize, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if rows.is_empty() && line.starts_with("# ") {
                continue;
            }
            if let Some(rest) = line.strip_prefix("jump ") {
                let mut it = rest.split_whitespace();
                let letter = it.next().and_then(|s| s.chars().next()).filter(|c| c.is_ascii_uppercase());
                let reward = it.next().and_then(|s| s.parse::<f64>().ok());
                match (letter, reward) {
                    (Some(l), Some(r)) => jump_rewards.push((l, r)),
                    _ => return Err(Error::parse(line_no, "expected `jump <LETTER> <reward>`")),
                }
            } else if let Some((k, v)) = line.split_once('=') {
                match k.trim() {
                    "penalty" => {
                        penalty = v.trim().parse().map_err(|_| Error::parse(line_no, "bad penalty"))?;
                    }
                    "wind" => {
                        let p: Vec<f64> = v
                            .split_whitespace()
                            .map(str::parse)
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| Error::parse(line_no, "bad wind probabilities"))?;
                        if p.len() != 4 {
                            return Err(Error::parse(line_no, "wind needs four probabilities"));
                        }
                        wind = Some([p[0], p[1], p[2], p[3]]);
                    }
                    other => return Err(Error::parse(line_no, format!("unknown key {other:?}"))),
                }
            } else {
                rows.push((line_no, line));
            }
        }
        if rows.is_empty() {
            return Err(Error::parse(text.lines().count().max(1), "map has no grid rows"));
        }
        let width = rows[0].1.chars().count();
        let mut spec = GridWorldSpec::open(width, rows.len());
        spec.boundary_penalty = penalty;
        spec.action_distribution = wind;
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        for (r, &(line_no, row)) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::parse(line_no, "ragged grid row"));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '.' | 'S' | 'G' => {}
                    '#' => {
                        spec.walls.insert((r, c));
                    }
                    'A'..='Z' => sources.push((ch, (r, c))),
                    'a'..='z' => targets.push((ch.to_ascii_uppercase(), (r, c))),
                    _ => return Err(Error::parse(line_no, format!("unexpected map character {ch:?}"))),
                }
            }
        }
        for (letter, from) in sources {
            let to = targets
                .iter()
                .find(|(l, _)| *l == letter)
                .map(|&(_, c)| c)
                .ok_or_else(|| Error::InvalidSpec(format!("jump {letter} has no target")))?;
            let reward = jump_rewards
                .iter()
                .find(|(l, _)| *l == letter)
                .map(|&(_, r)| r)
                .ok_or_else(|| Error::InvalidSpec(format!("jump {letter} has no reward line")))?;
            spec.jumps.push(Jump { from, to, reward });
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Tabular model of the grid. Actions follow [`GridAction`] order.
pub fn gridworld_to_mdp(spec: &GridWorldSpec, gamma: f64) -> Result<TabularMdp> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.num_states() * 4);
    for s in 0..spec.num_states() {
        let cell = spec.cell(s);
        for a in GridAction::ALL {
            let (next, reward) = if spec.walls.contains(&cell) {
                (cell, 0.0)
            } else {
                spec.transition(cell, a)
            };
            records.push((s, a as usize, spec.state_index(next), reward, 1.0));
        }
    }
    TabularMdp::from_records(spec.num_states(), 4, gamma, records, &[])
}
