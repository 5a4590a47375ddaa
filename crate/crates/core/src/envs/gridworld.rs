use super::{EnvState, StepResult};

pub const GRID_ACTIONS: usize = 4;
const UP: usize = 0;
const DOWN: usize = 1;
const LEFT: usize = 2;
const RIGHT: usize = 3;

/// Deterministic 5x5 grid: start (0,0), goal (4,4), reward 1 on entering
/// the goal. Off-grid moves leave the agent in place. Observations are
/// one-hot over the cells, indexed `y * width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub max_steps: usize,
}

impl Default for GridWorld {
    fn default() -> Self {
        GridWorld {
            width: 5,
            height: 5,
            start: (0, 0),
            goal: (4, 4),
            max_steps: 50,
        }
    }
}

/// `q[cell][action]`.
pub type QTable = Vec<[f64; GRID_ACTIONS]>;

impl GridWorld {
    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.width, cell / self.width)
    }

    pub fn encode(&self, x: usize, y: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_cells()];
        v[self.cell(x, y)] = 1.0;
        v
    }

    /// Cell of a (possibly perturbed) observation: the largest component.
    pub fn decode(&self, obs: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in obs.iter().enumerate() {
            if v > obs[best] {
                best = i;
            }
        }
        best
    }

    pub fn reset(&self) -> EnvState {
        EnvState::Grid {
            x: self.start.0,
            y: self.start.1,
            t: 0,
        }
    }

    /// Cell reached by `action` from `(x, y)`, ignoring termination.
    pub fn move_to(&self, x: usize, y: usize, action: usize) -> (usize, usize) {
        match action {
            UP if y + 1 < self.height => (x, y + 1),
            DOWN if y > 0 => (x, y - 1),
            LEFT if x > 0 => (x - 1, y),
            RIGHT if x + 1 < self.width => (x + 1, y),
            _ => (x, y),
        }
    }

    pub(super) fn step(&self, x: usize, y: usize, t: usize, action: usize) -> StepResult {
        let (nx, ny) = self.move_to(x, y, action);
        let done = (nx, ny) == self.goal;
        let t = t + 1;
        StepResult {
            next: EnvState::Grid { x: nx, y: ny, t },
            reward: if done { 1.0 } else { 0.0 },
            done,
            truncated: !done && t >= self.max_steps,
        }
    }
}

/// Tabular value iteration to a sup-norm residual below 1e-10. The goal is
/// absorbing, so its row stays zero.
pub fn value_iteration_oracle(grid: &GridWorld, gamma: f64) -> QTable {
    assert!(gamma > 0.0 && gamma < 1.0, "value iteration needs 0 < gamma < 1");
    let n = grid.n_cells();
    let goal = grid.cell(grid.goal.0, grid.goal.1);
    let mut q: QTable = vec![[0.0; GRID_ACTIONS]; n];
    loop {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut residual = 0.0f64;
        for cell in (0..n).filter(|&c| c != goal) {
            let (x, y) = grid.coords(cell);
            for a in 0..GRID_ACTIONS {
                let (nx, ny) = grid.move_to(x, y, a);
                let next = grid.cell(nx, ny);
                let target = if next == goal { 1.0 } else { gamma * v[next] };
                residual = residual.max((target - q[cell][a]).abs());
                q[cell][a] = target;
            }
        }
        if residual < 1e-10 {
            return q;
        }
    }
}

/// Greedy action of a Q-table row; ties go to the lowest index.
pub fn argmax(row: &[f64; GRID_ACTIONS]) -> usize {
    let mut best = 0;
    for a in 1..GRID_ACTIONS {
        if row[a] > row[best] {
            best = a;
        }
    }
    best
}
