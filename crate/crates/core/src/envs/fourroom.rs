use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Classic 11×11 four-rooms layout: one vertical and two horizontal wall
/// segments with four doorways. `G` marks the default goal.
pub const CLASSIC_LAYOUT: [&str; 11] = [
    ".....#.....",
    ".....#...G.",
    "...........",
    ".....#.....",
    ".....#.....",
    "#.####.....",
    ".....###.##",
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
];

/// Upper bound on grid area accepted by the parser. Dense transition
/// matrices grow as 4·S², so larger maps are rejected up front.
pub const MAX_GRID_CELLS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    fn offset(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// Parsed gridworld: wall mask, goal cell, and the episode settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FourRoomSpec {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    goal: (usize, usize),
    pub episode_length: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FourRoomJson {
    mask: Vec<String>,
    #[serde(default = "default_episode_length")]
    episode_length: usize,
    #[serde(default = "default_gamma")]
    gamma: f64,
}

fn default_episode_length() -> usize {
    300
}

fn default_gamma() -> f64 {
    0.9
}

impl Default for FourRoomSpec {
    fn default() -> Self {
        Self::from_mask(&CLASSIC_LAYOUT, default_episode_length(), default_gamma())
            .expect("classic layout is valid")
    }
}

impl FourRoomSpec {
    /// Parses mask rows of `#` (wall), `.` (free) and exactly one `G` (goal).
    pub fn from_mask<S: AsRef<str>>(rows: &[S], episode_length: usize, gamma: f64) -> Result<Self> {
        let n_rows = rows.len();
        if n_rows == 0 {
            return Err(Error::InvalidSpec("mask is empty".into()));
        }
        let n_cols = rows[0].as_ref().chars().count();
        if n_cols == 0 {
            return Err(Error::InvalidSpec("mask rows are empty".into()));
        }
        if n_rows.saturating_mul(n_cols) > MAX_GRID_CELLS {
            return Err(Error::InvalidSpec(format!(
                "grid {n_rows}x{n_cols} exceeds {MAX_GRID_CELLS} cells"
            )));
        }
        let mut walls = Vec::with_capacity(n_rows * n_cols);
        let mut goal = None;
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != n_cols {
                return Err(Error::InvalidSpec(format!("row {r} has a different width")));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'G' => {
                        if goal.replace((r, c)).is_some() {
                            return Err(Error::InvalidSpec("more than one goal".into()));
                        }
                        walls.push(false);
                    }
                    other => {
                        return Err(Error::InvalidSpec(format!("unexpected cell {other:?}")));
                    }
                }
            }
        }
        let goal = goal.ok_or_else(|| Error::InvalidSpec("no goal cell".into()))?;
        if episode_length == 0 {
            return Err(Error::InvalidSpec("episode_length must be positive".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidSpec(format!("gamma {gamma} outside [0, 1)")));
        }
        let spec = Self {
            rows: n_rows,
            cols: n_cols,
            walls,
            goal,
            episode_length,
            gamma,
        };
        spec.check_reachability()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: FourRoomJson = serde_json::from_str(text)?;
        Self::from_mask(&raw.mask, raw.episode_length, raw.gamma)
    }

    pub fn to_json(&self) -> String {
        let raw = FourRoomJson {
            mask: self.mask_rows(),
            episode_length: self.episode_length,
            gamma: self.gamma,
        };
        serde_json::to_string_pretty(&raw).expect("string fields serialise")
    }

    /// Moves the goal to another free cell.
    pub fn with_goal(mut self, row: usize, col: usize) -> Result<Self> {
        if row >= self.rows || col >= self.cols || self.walls[row * self.cols + col] {
            return Err(Error::InvalidSpec(format!("goal ({row}, {col}) is not a free cell")));
        }
        self.goal = (row, col);
        self.check_reachability()?;
        Ok(self)
    }

    pub fn mask_rows(&self) -> Vec<String> {
        (0..self.rows)
            .map(|r| {
                (0..self.cols)
                    .map(|c| {
                        if (r, c) == self.goal {
                            'G'
                        } else if self.walls[r * self.cols + c] {
                            '#'
                        } else {
                            '.'
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    /// Free cells in row-major order; a cell's position here is its state id.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows * self.cols)
            .filter(|&i| !self.walls[i])
            .map(|i| (i / self.cols, i % self.cols))
            .collect()
    }

    pub fn state_of(&self, cell: (usize, usize)) -> Option<usize> {
        self.free_cells().iter().position(|&c| c == cell)
    }

    fn is_free(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.rows
            && (c as usize) < self.cols
            && !self.walls[r as usize * self.cols + c as usize]
    }

    /// Deterministic move; bumping into a wall or the border stays put.
    pub fn step_cell(&self, cell: (usize, usize), action: Action) -> (usize, usize) {
        let (dr, dc) = action.offset();
        let (r, c) = (cell.0 as isize + dr, cell.1 as isize + dc);
        if self.is_free(r, c) {
            (r as usize, c as usize)
        } else {
            cell
        }
    }

    fn check_reachability(&self) -> Result<()> {
        // Moves are symmetric between free cells, so forward BFS from the goal
        // covers exactly the cells that can reach it.
        let mut seen = vec![false; self.rows * self.cols];
        let mut queue = VecDeque::from([self.goal]);
        seen[self.goal.0 * self.cols + self.goal.1] = true;
        while let Some(cell) = queue.pop_front() {
            for a in Action::ALL {
                let next = self.step_cell(cell, a);
                let idx = next.0 * self.cols + next.1;
                if !seen[idx] {
                    seen[idx] = true;
                    queue.push_back(next);
                }
            }
        }
        match (0..seen.len()).find(|&i| !self.walls[i] && !seen[i]) {
            Some(i) => Err(Error::InvalidSpec(format!(
                "cell ({}, {}) cannot reach the goal",
                i / self.cols,
                i % self.cols
            ))),
            None => Ok(()),
        }
    }

    /// Tabular MDP: one-hot transitions, reward 1 whenever the move lands on
    /// the goal (including staying on it), uniform start over free cells.
    /// The goal is not absorbing.
    pub fn to_mdp(&self) -> Result<TabularMdp> {
        let cells = self.free_cells();
        let n = cells.len();
        let mut index = vec![usize::MAX; self.rows * self.cols];
        for (s, &(r, c)) in cells.iter().enumerate() {
            index[r * self.cols + c] = s;
        }
        let a_n = Action::ALL.len();
        let mut transition = DMatrix::zeros(n * a_n, n);
        let mut reward = DVector::zeros(n * a_n);
        for (s, &cell) in cells.iter().enumerate() {
            for action in Action::ALL {
                let next = self.step_cell(cell, action);
                let row = s * a_n + action as usize;
                transition[(row, index[next.0 * self.cols + next.1])] = 1.0;
                if next == self.goal {
                    reward[row] = 1.0;
                }
            }
        }
        let init = DVector::from_element(n, 1.0 / n as f64);
        TabularMdp::new(n, a_n, transition, reward, init, self.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{optimal_objective, solve_stationary};
    use crate::policy::SoftmaxPolicy;

    #[test]
    fn classic_layout_has_104_free_cells() {
        let spec = FourRoomSpec::default();
        assert_eq!(spec.free_cells().len(), 104);
        assert_eq!(spec.goal(), (1, 9));
    }

    #[test]
    fn rows_are_one_hot() {
        let mdp = FourRoomSpec::default().to_mdp().unwrap();
        for row in mdp.transition().row_iter() {
            assert_eq!(row.sum(), 1.0);
            assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
        }
        assert!((mdp.init_dist().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stepping_onto_goal_pays_one() {
        let spec = FourRoomSpec::default();
        let mdp = spec.to_mdp().unwrap();
        let left_of_goal = spec.state_of((1, 8)).unwrap();
        assert_eq!(mdp.reward()[mdp.index(left_of_goal, Action::Right as usize)], 1.0);
        assert_eq!(mdp.reward()[mdp.index(left_of_goal, Action::Left as usize)], 0.0);
        assert_eq!(mdp.reward().sum(), 4.0);
    }

    #[test]
    fn walls_block_movement() {
        let spec = FourRoomSpec::default();
        assert_eq!(spec.step_cell((0, 4), Action::Right), (0, 4));
        assert_eq!(spec.step_cell((0, 0), Action::Up), (0, 0));
        assert_eq!(spec.step_cell((2, 4), Action::Right), (2, 5));
    }

    #[test]
    fn uniform_policy_occupancy_has_full_support() {
        let mdp = FourRoomSpec::default().to_mdp().unwrap();
        let d = solve_stationary(&mdp, &SoftmaxPolicy::uniform(mdp.n_states(), 4)).unwrap();
        assert!(d.joint.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn optimal_value_is_positive() {
        let mdp = FourRoomSpec::default().to_mdp().unwrap();
        assert!(optimal_objective(&mdp) > 0.0);
    }

    #[test]
    fn json_round_trip_and_errors() {
        let spec = FourRoomSpec::default();
        assert_eq!(FourRoomSpec::from_json(&spec.to_json()).unwrap(), spec);
        assert!(FourRoomSpec::from_json(r#"{"mask":["..."]}"#).is_err());
        assert!(FourRoomSpec::from_json(r#"{"mask":["G.","..."]}"#).is_err());
        assert!(FourRoomSpec::from_json(r###"{"mask":["G#.","##."]}"###).is_err());
        assert!(FourRoomSpec::from_json(r#"{"mask":["GG"]}"#).is_err());
        assert!(FourRoomSpec::from_json(r#"{"mask":["G."],"gamma":1.0}"#).is_err());
        assert!(FourRoomSpec::from_json(r#"{"mask":["G."],"episode_length":0}"#).is_err());
        let small = FourRoomSpec::from_json(r#"{"mask":["G."]}"#).unwrap();
        assert_eq!(small.episode_length, 300);
        assert_eq!(small.gamma, 0.9);
    }

    #[test]
    fn goal_can_be_moved() {
        let spec = FourRoomSpec::default().with_goal(10, 10).unwrap();
        assert_eq!(spec.goal(), (10, 10));
        assert!(FourRoomSpec::default().with_goal(0, 5).is_err());
    }
}
