//! Gridworlds parsed from plain-text layouts.
//!
//! Layout grammar: one line per grid row, all rows the same width, rows
//! separated by `\n` (a single trailing newline is allowed). Characters:
//!
//! | char | meaning                  |
//! |------|--------------------------|
//! | `#`  | wall                     |
//! | `.`  | floor                    |
//! | `D`  | doorway (floor)          |
//! | `S`  | start (floor), exactly 1 |
//! | `G`  | goal (floor), exactly 1  |
//!
//! Anything else is a parse error. Every cell of the grid is a state, walls
//! included, so all layouts of the same size share one state space; wall
//! cells are absorbing and unreachable.

use std::collections::{BTreeSet, VecDeque};

use super::TabularMdp;
use crate::error::{Error, Result};

pub type Cell = (usize, usize);

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const N_ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub walls: BTreeSet<Cell>,
    pub doorways: BTreeSet<Cell>,
    pub start: Cell,
    pub goal: Cell,
    pub step_reward: f64,
    pub goal_reward: f64,
    /// Probability that the chosen move is replaced by a uniformly random one.
    pub slip_prob: f64,
    pub gamma: f64,
}

pub const DEFAULT_STEP_REWARD: f64 = -0.01;
pub const DEFAULT_GOAL_REWARD: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 0.95;

/// Parses a layout with default rewards, no slip and the default discount.
pub fn parse_layout(text: &str) -> Result<GridSpec> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Err(Error::Layout {
            line: 1,
            msg: "empty layout".into(),
        });
    }
    let mut width = None;
    let mut walls = BTreeSet::new();
    let mut doorways = BTreeSet::new();
    let mut start = None;
    let mut goal = None;
    let mut height = 0;
    for (r, line) in body.split('\n').enumerate() {
        let chars: Vec<char> = line.chars().collect();
        match width {
            None => width = Some(chars.len()),
            Some(w) if w != chars.len() => {
                return Err(Error::Layout {
                    line: r + 1,
                    msg: format!("row has width {}, expected {w}", chars.len()),
                })
            }
            _ => {}
        }
        if chars.is_empty() {
            return Err(Error::Layout {
                line: r + 1,
                msg: "empty row".into(),
            });
        }
        for (c, ch) in chars.into_iter().enumerate() {
            match ch {
                '#' => {
                    walls.insert((r, c));
                }
                '.' => {}
                'D' => {
                    doorways.insert((r, c));
                }
                'S' | 'G' => {
                    let slot = if ch == 'S' { &mut start } else { &mut goal };
                    if slot.is_some() {
                        return Err(Error::Layout {
                            line: r + 1,
                            msg: format!("second '{ch}' in layout"),
                        });
                    }
                    *slot = Some((r, c));
                }
                other => {
                    return Err(Error::Layout {
                        line: r + 1,
                        msg: format!("unexpected character {other:?} in column {}", c + 1),
                    })
                }
            }
        }
        height += 1;
    }
    let start = start.ok_or_else(|| Error::Layout {
        line: height,
        msg: "layout has no 'S'".into(),
    })?;
    let goal = goal.ok_or_else(|| Error::Layout {
        line: height,
        msg: "layout has no 'G'".into(),
    })?;
    let spec = GridSpec {
        width: width.unwrap_or(0),
        height,
        walls,
        doorways,
        start,
        goal,
        step_reward: DEFAULT_STEP_REWARD,
        goal_reward: DEFAULT_GOAL_REWARD,
        slip_prob: 0.0,
        gamma: DEFAULT_GAMMA,
    };
    spec.validate()?;
    Ok(spec)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let inside = |(r, c): Cell| r < self.height && c < self.width;
        if !inside(self.start) || !inside(self.goal) {
            return Err(Error::InvalidArgument("start or goal outside the grid".into()));
        }
        if self.start == self.goal {
            return Err(Error::InvalidArgument("start and goal coincide".into()));
        }
        if self.walls.contains(&self.start) || self.walls.contains(&self.goal) {
            return Err(Error::InvalidArgument("start or goal is a wall".into()));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::InvalidArgument(format!(
                "slip_prob must be in [0, 1], got {}",
                self.slip_prob
            )));
        }
        if !self.step_reward.is_finite() || !self.goal_reward.is_finite() {
            return Err(Error::NonFinite("grid rewards".into()));
        }
        Ok(())
    }

    /// Renders back to the layout grammar (with trailing newline).
    pub fn to_layout(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let cell = (r, c);
                let ch = if cell == self.start {
                    'S'
                } else if cell == self.goal {
                    'G'
                } else if self.walls.contains(&cell) {
                    '#'
                } else if self.doorways.contains(&cell) {
                    'D'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn state_of(&self, (r, c): Cell) -> usize {
        r * self.width + c
    }

    pub fn cell_of(&self, s: usize) -> Cell {
        (s / self.width, s % self.width)
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls.contains(&cell)
    }

    /// Cell reached by a deterministic move; bumping a wall or edge stays put.
    pub fn move_from(&self, (r, c): Cell, action: usize) -> Cell {
        let next = match action {
            UP if r > 0 => (r - 1, c),
            DOWN if r + 1 < self.height => (r + 1, c),
            LEFT if c > 0 => (r, c - 1),
            RIGHT if c + 1 < self.width => (r, c + 1),
            _ => (r, c),
        };
        if self.is_wall(next) {
            (r, c)
        } else {
            next
        }
    }

    /// Breadth-first shortest path length (in moves) from start to goal.
    pub fn shortest_path_len(&self) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.n_cells()];
        let mut queue = VecDeque::new();
        dist[self.state_of(self.start)] = 0;
        queue.push_back(self.start);
        while let Some(cell) = queue.pop_front() {
            let d = dist[self.state_of(cell)];
            if cell == self.goal {
                return Some(d);
            }
            for a in 0..N_ACTIONS {
                let next = self.move_from(cell, a);
                let idx = self.state_of(next);
                if dist[idx] == usize::MAX {
                    dist[idx] = d + 1;
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

/// A gridworld MDP together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMdp {
    pub spec: GridSpec,
    pub mdp: TabularMdp,
}

impl GridMdp {
    pub fn start_state(&self) -> usize {
        self.spec.state_of(self.spec.start)
    }

    pub fn goal_state(&self) -> usize {
        self.spec.state_of(self.spec.goal)
    }
}

/// Builds the MDP for a layout. Moves are deterministic unless `slip_prob`
/// is positive, in which case the chosen move is replaced by a uniformly
/// random one with that probability. Entering the goal pays `goal_reward`,
/// every other move pays `step_reward`; the goal is terminal.
pub fn four_room(spec: &GridSpec) -> Result<GridMdp> {
    spec.validate()?;
    if spec.shortest_path_len().is_none() {
        return Err(Error::UnreachableGoal);
    }
    let ns = spec.n_cells();
    let mut transitions = vec![0.0; ns * N_ACTIONS * ns];
    let mut rewards = vec![0.0; ns * N_ACTIONS];
    let mut terminal = vec![false; ns];
    for s in 0..ns {
        let cell = spec.cell_of(s);
        let absorbing = cell == spec.goal || spec.is_wall(cell);
        terminal[s] = absorbing;
        for a in 0..N_ACTIONS {
            let base = (s * N_ACTIONS + a) * ns;
            if absorbing {
                transitions[base + s] = 1.0;
                continue;
            }
            let mut outcomes = [0.0; N_ACTIONS];
            outcomes[a] += 1.0 - spec.slip_prob;
            for o in outcomes.iter_mut() {
                *o += spec.slip_prob / N_ACTIONS as f64;
            }
            let mut expected_r = 0.0;
            for (b, &p) in outcomes.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let next = spec.move_from(cell, b);
                transitions[base + spec.state_of(next)] += p;
                let r = if next == spec.goal {
                    spec.goal_reward
                } else {
                    spec.step_reward
                };
                expected_r += p * r;
            }
            rewards[s * N_ACTIONS + a] = expected_r;
        }
    }
    let mdp = TabularMdp::new(ns, N_ACTIONS, transitions, rewards, spec.gamma, terminal)?;
    Ok(GridMdp {
        spec: spec.clone(),
        mdp,
    })
}
