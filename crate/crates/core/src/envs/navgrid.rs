use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{one_hot, step_after_done, Action, ActionSpace, Env, Step};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NavAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl NavAction {
    pub const ALL: [NavAction; 5] = [NavAction::Up, NavAction::Down, NavAction::Left, NavAction::Right, NavAction::Stay];
    /// Moves in breadth-first expansion order.
    pub const MOVES: [NavAction; 4] = [NavAction::Up, NavAction::Down, NavAction::Left, NavAction::Right];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            NavAction::Up => (-1, 0),
            NavAction::Down => (1, 0),
            NavAction::Left => (0, -1),
            NavAction::Right => (0, 1),
            NavAction::Stay => (0, 0),
        }
    }
}

/// Static layout of a navigation task: free cells, obstacles and a goal.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGrid {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
    goal: (usize, usize),
    starts: Vec<(usize, usize)>,
    distance: Vec<Option<usize>>,
    expert: Vec<NavAction>,
}

impl NavGrid {
    /// Fails unless the goal is a free cell reachable from every free cell.
    /// An empty `starts` means every free non-goal cell.
    pub fn new(
        width: usize,
        height: usize,
        obstacles: &[(usize, usize)],
        goal: (usize, usize),
        starts: &[(usize, usize)],
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSpec("grid must be non-empty".into()));
        }
        let inside = |c: (usize, usize)| c.0 < height && c.1 < width;
        let mut blocked = vec![false; width * height];
        for &o in obstacles {
            if !inside(o) {
                return Err(Error::InvalidSpec(format!("obstacle {o:?} outside the grid")));
            }
            blocked[o.0 * width + o.1] = true;
        }
        if !inside(goal) || blocked[goal.0 * width + goal.1] {
            return Err(Error::InvalidSpec(format!("goal {goal:?} is not a free cell")));
        }
        let mut grid = NavGrid {
            width,
            height,
            blocked,
            goal,
            starts: Vec::new(),
            distance: Vec::new(),
            expert: Vec::new(),
        };
        grid.distance = grid.bfs_distances(goal);
        if let Some(s) = (0..width * height).find(|&s| !grid.blocked[s] && grid.distance[s].is_none()) {
            return Err(Error::InvalidSpec(format!("goal unreachable from cell {:?}", grid.cell(s))));
        }
        grid.starts = if starts.is_empty() {
            grid.free_cells().into_iter().filter(|&c| c != goal).collect()
        } else {
            for &s in starts {
                if !grid.is_free(s) || s == goal {
                    return Err(Error::InvalidSpec(format!("start {s:?} must be a free non-goal cell")));
                }
            }
            starts.to_vec()
        };
        if grid.starts.is_empty() {
            return Err(Error::InvalidSpec("no start cells".into()));
        }
        grid.expert = (0..width * height)
            .map(|s| {
                if grid.blocked[s] {
                    NavAction::Stay
                } else {
                    grid.first_move_bfs(grid.cell(s))
                }
            })
            .collect();
        Ok(grid)
    }

    /// Parses a text map: `.` free, `#` obstacle, `G` goal (exactly one),
    /// `S` start cell (optional, repeatable).
    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with("# "))
            .collect();
        if rows.is_empty() {
            return Err(Error::parse(1, "map has no grid rows"));
        }
        let width = rows[0].1.chars().count();
        let (mut obstacles, mut starts, mut goal) = (Vec::new(), Vec::new(), None);
        for (r, &(line_no, row)) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::parse(line_no, "ragged grid row"));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '.' => {}
                    '#' => obstacles.push((r, c)),
                    'S' => starts.push((r, c)),
                    'G' if goal.is_none() => goal = Some((r, c)),
                    'G' => return Err(Error::parse(line_no, "more than one goal")),
                    _ => return Err(Error::parse(line_no, format!("unexpected map character {ch:?}"))),
                }
            }
        }
        let goal = goal.ok_or_else(|| Error::InvalidSpec("map has no goal".into()))?;
        Self::new(width, rows.len(), &obstacles, goal, &starts)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn starts(&self) -> &[(usize, usize)] {
        &self.starts
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, cell: (usize, usize)) -> usize {
        cell.0 * self.width + cell.1
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn is_free(&self, cell: (usize, usize)) -> bool {
        cell.0 < self.height && cell.1 < self.width && !self.blocked[self.index(cell)]
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.num_cells()).filter(|&s| !self.blocked[s]).map(|s| self.cell(s)).collect()
    }

    /// Shortest-path length to the goal.
    pub fn distance_to_goal(&self, cell: (usize, usize)) -> Option<usize> {
        if !self.is_free(cell) {
            return None;
        }
        self.distance[self.index(cell)]
    }

    /// Result of `action` from `cell`; blocked moves leave the agent in place.
    pub fn move_from(&self, cell: (usize, usize), action: NavAction) -> (usize, usize) {
        let (dr, dc) = action.delta();
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        if r < 0 || c < 0 {
            return cell;
        }
        let next = (r as usize, c as usize);
        if self.is_free(next) {
            next
        } else {
            cell
        }
    }

    fn bfs_distances(&self, from: (usize, usize)) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_cells()];
        dist[self.index(from)] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].unwrap();
            for a in NavAction::MOVES {
                let n = self.move_from(c, a);
                if n != c && dist[self.index(n)].is_none() {
                    dist[self.index(n)] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Breadth-first search from `start`, remembering the first move of each
    /// discovered cell; returns the first move on the path to the goal.
    fn first_move_bfs(&self, start: (usize, usize)) -> NavAction {
        if start == self.goal {
            return NavAction::Stay;
        }
        let mut first: Vec<Option<NavAction>> = vec![None; self.num_cells()];
        let mut seen = vec![false; self.num_cells()];
        seen[self.index(start)] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for a in NavAction::MOVES {
                let n = self.move_from(c, a);
                let ni = self.index(n);
                if n == c || seen[ni] {
                    continue;
                }
                seen[ni] = true;
                first[ni] = if c == start { Some(a) } else { first[self.index(c)] };
                if n == self.goal {
                    return first[ni].unwrap();
                }
                queue.push_back(n);
            }
        }
        unreachable!("goal reachability is checked at construction")
    }
}

/// Scripted expert: first move of a breadth-first shortest path to the goal,
/// `Stay` at the goal.
pub fn nav_oracle(grid: &NavGrid, cell: (usize, usize)) -> Result<NavAction> {
    if !grid.is_free(cell) {
        return Err(Error::invalid(format!("cell {cell:?} is not free")));
    }
    Ok(grid.expert[grid.index(cell)])
}

/// Observation encoding for [`NavGridEnv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NavEncoding {
    /// One indicator per cell.
    #[default]
    OneHot,
    /// Row and column scaled to `[0, 1]`.
    Coordinates,
}

impl NavEncoding {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "one-hot" => Some(NavEncoding::OneHot),
            "coordinates" => Some(NavEncoding::Coordinates),
            _ => None,
        }
    }
}

/// Episode wrapper around a [`NavGrid`]: +1 on reaching the goal, which ends
/// the episode; otherwise 0 until the horizon.
#[derive(Debug, Clone)]
pub struct NavGridEnv {
    grid: NavGrid,
    encoding: NavEncoding,
    horizon: usize,
    agent: (usize, usize),
    steps: usize,
    done: bool,
}

impl NavGridEnv {
    pub fn new(grid: NavGrid, encoding: NavEncoding, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        let agent = grid.starts[0];
        Ok(NavGridEnv {
            grid,
            encoding,
            horizon,
            agent,
            steps: 0,
            done: true,
        })
    }

    pub fn grid(&self) -> &NavGrid {
        &self.grid
    }

    pub fn encoding(&self) -> NavEncoding {
        self.encoding
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn reached_goal(&self) -> bool {
        self.agent == self.grid.goal
    }

    /// Replaces the start distribution.
    pub fn set_starts(&mut self, starts: &[(usize, usize)]) -> Result<()> {
        let grid = NavGrid::new(
            self.grid.width,
            self.grid.height,
            &(0..self.grid.num_cells())
                .filter(|&s| self.grid.blocked[s])
                .map(|s| self.grid.cell(s))
                .collect::<Vec<_>>(),
            self.grid.goal,
            starts,
        )?;
        self.grid = grid;
        Ok(())
    }

    pub fn encode(&self, cell: (usize, usize)) -> Vec<f64> {
        match self.encoding {
            NavEncoding::OneHot => one_hot(self.grid.num_cells(), self.grid.index(cell)),
            NavEncoding::Coordinates => {
                let scale = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
                vec![scale(cell.0, self.grid.height), scale(cell.1, self.grid.width)]
            }
        }
    }

    /// Inverse of [`encode`](Self::encode) for states this env produced.
    pub fn decode(&self, state: &[f64]) -> Result<(usize, usize)> {
        if state.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        let cell = match self.encoding {
            NavEncoding::OneHot => {
                let i = state
                    .iter()
                    .position(|&v| v == 1.0)
                    .ok_or_else(|| Error::invalid("not a one-hot state"))?;
                self.grid.cell(i)
            }
            NavEncoding::Coordinates => {
                let unscale = |v: f64, n: usize| if n > 1 { (v * (n - 1) as f64).round() as usize } else { 0 };
                (unscale(state[0], self.grid.height), unscale(state[1], self.grid.width))
            }
        };
        if !self.grid.is_free(cell) {
            return Err(Error::invalid("state does not encode a free cell"));
        }
        Ok(cell)
    }

    /// Expert action for an encoded state.
    pub fn expert_action(&self, state: &[f64]) -> Result<usize> {
        Ok(nav_oracle(&self.grid, self.decode(state)?)?.index())
    }

    pub fn reset_to(&mut self, cell: (usize, usize)) -> Result<Vec<f64>> {
        if !self.grid.is_free(cell) {
            return Err(Error::invalid(format!("start {cell:?} is not a free cell")));
        }
        self.agent = cell;
        self.steps = 0;
        self.done = cell == self.grid.goal;
        Ok(self.encode(cell))
    }
}

impl Env for NavGridEnv {
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let starts = &self.grid.starts;
        let cell = if starts.len() == 1 {
            starts[0]
        } else {
            starts[ChaCha8Rng::seed_from_u64(seed).random_range(0..starts.len())]
        };
        self.agent = cell;
        self.steps = 0;
        self.done = false;
        self.encode(cell)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(step_after_done());
        }
        let a = action
            .discrete()
            .and_then(NavAction::from_index)
            .ok_or_else(|| Error::invalid("action outside the navigation action space"))?;
        self.agent = self.grid.move_from(self.agent, a);
        self.steps += 1;
        let at_goal = self.agent == self.grid.goal;
        self.done = at_goal || self.steps >= self.horizon;
        Ok(Step {
            state: self.encode(self.agent),
            reward: if at_goal { 1.0 } else { 0.0 },
            done: self.done,
        })
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(5)
    }

    fn state_dim(&self) -> usize {
        match self.encoding {
            NavEncoding::OneHot => self.grid.num_cells(),
            NavEncoding::Coordinates => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_and_goal() {
        let g = NavGrid::from_text("...\n.SG\n...").unwrap();
        assert_eq!(nav_oracle(&g, (1, 1)).unwrap(), NavAction::Right);
        assert_eq!(nav_oracle(&g, (1, 2)).unwrap(), NavAction::Stay);
        assert_eq!(g.starts(), &[(1, 1)]);
    }

    #[test]
    fn rejects_unreachable_goal() {
        assert!(NavGrid::from_text(".#G\n##.\n...").is_err());
        assert!(NavGrid::from_text("...\n...").is_err());
        assert!(NavGrid::from_text("G.G").is_err());
    }

    #[test]
    fn episode_reward_and_done() {
        let g = NavGrid::from_text("S.G").unwrap();
        let mut env = NavGridEnv::new(g, NavEncoding::OneHot, 10).unwrap();
        let s = env.reset(0);
        assert_eq!(env.decode(&s).unwrap(), (0, 0));
        let a = env.expert_action(&s).unwrap();
        let st = env.step(&Action::Discrete(a)).unwrap();
        assert_eq!((st.reward, st.done), (0.0, false));
        let st = env.step(&Action::Discrete(3)).unwrap();
        assert_eq!((st.reward, st.done), (1.0, true));
        assert!(env.step(&Action::Discrete(3)).is_err());
    }

    #[test]
    fn horizon_ends_episode() {
        let g = NavGrid::from_text("S..G").unwrap();
        let mut env = NavGridEnv::new(g, NavEncoding::Coordinates, 3).unwrap();
        env.reset(0);
        for _ in 0..2 {
            assert!(!env.step(&Action::Discrete(4)).unwrap().done);
        }
        assert!(env.step(&Action::Discrete(4)).unwrap().done);
        assert!(!env.reached_goal());
    }

    #[test]
    fn coordinate_round_trip() {
        let g = NavGrid::from_text("....\n.#..\n...G").unwrap();
        let env = NavGridEnv::new(g.clone(), NavEncoding::Coordinates, 5).unwrap();
        for c in g.free_cells() {
            assert_eq!(env.decode(&env.encode(c)).unwrap(), c);
        }
    }
}
