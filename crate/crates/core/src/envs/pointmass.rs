use rand::Rng;

use super::{EnvState, StepResult};

const STATE_LIMIT: f64 = 5.0;

/// 2-D point mass driven by bounded accelerations towards a fixed goal.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    pub dt: f64,
    pub goal: [f64; 2],
    pub start_noise: f64,
    pub horizon: usize,
}

impl Default for PointMass {
    fn default() -> Self {
        PointMass {
            dt: 0.1,
            goal: [1.0, 1.0],
            start_noise: 0.1,
            horizon: 100,
        }
    }
}

impl PointMass {
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let n = self.start_noise;
        EnvState::Point {
            pos: [rng.random_range(-n..=n), rng.random_range(-n..=n)],
            vel: [0.0, 0.0],
            t: 0,
        }
    }

    pub(super) fn step(&self, pos: [f64; 2], vel: [f64; 2], t: usize, action: &[f64]) -> StepResult {
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let clamp = |v: f64| v.clamp(-STATE_LIMIT, STATE_LIMIT);
        let next_pos = [clamp(pos[0] + vel[0] * self.dt), clamp(pos[1] + vel[1] * self.dt)];
        let next_vel = [clamp(vel[0] + a[0] * self.dt), clamp(vel[1] + a[1] * self.dt)];
        let dist_sq = (next_pos[0] - self.goal[0]).powi(2) + (next_pos[1] - self.goal[1]).powi(2);
        let reward = -dist_sq - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        let t = t + 1;
        StepResult {
            next: EnvState::Point {
                pos: next_pos,
                vel: next_vel,
                t,
            },
            reward,
            done: false,
            truncated: t >= self.horizon,
        }
    }
}
