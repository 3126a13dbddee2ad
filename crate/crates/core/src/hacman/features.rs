//! Agent-side observations and the per-point network input encodings.

use serde::{Deserialize, Serialize};

use crate::env::PlanarPushEnv;
use crate::netcore::{CloudBatch, Matrix};
use crate::pointcloud::{PointCloud, Seg, Vec2};

/// Low-dimensional scene state: object pose, goal pose (x, y, θ) and gripper position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateObs {
    pub object: [f64; 3],
    pub goal: [f64; 3],
    pub gripper: Vec2,
}

impl StateObs {
    pub fn to_vec(&self, with_gripper: bool, scale: f64) -> Vec<f64> {
        let mut v = vec![
            self.object[0] * scale,
            self.object[1] * scale,
            self.object[2],
            self.goal[0] * scale,
            self.goal[1] * scale,
            self.goal[2],
        ];
        if with_gripper {
            v.extend([self.gripper.x * scale, self.gripper.y * scale]);
        }
        v
    }
}

/// What the agent sees each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObs {
    pub cloud: PointCloud,
    pub state: StateObs,
}

impl AgentObs {
    pub fn from_env(env: &PlanarPushEnv) -> Self {
        let s = env.state();
        AgentObs {
            cloud: env.observation().clone(),
            state: StateObs {
                object: [s.pose.translation.x, s.pose.translation.y, s.pose.angle],
                goal: [s.goal.translation.x, s.goal.translation.y, s.goal.angle],
                gripper: s.gripper,
            },
        }
    }
}

/// Goal representation fed to the per-point encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    /// `[x, y, flow_x, flow_y, is_object]`.
    Flow,
    /// Flow channel dropped; goal points appended: `[x, y, is_object, is_goal]`.
    GoalPointCloud,
    /// Flow channel replaced by the goal pose on object points: `[x, y, is_object, gx, gy, gθ]`.
    GoalPose,
}

impl InputMode {
    pub fn width(self) -> usize {
        match self {
            InputMode::Flow => 5,
            InputMode::GoalPointCloud => 4,
            InputMode::GoalPose => 6,
        }
    }

    /// Number of encoder rows produced for `cloud`.
    pub fn n_rows(self, cloud: &PointCloud) -> usize {
        match self {
            InputMode::GoalPointCloud => cloud.len() + cloud.n_object(),
            _ => cloud.len(),
        }
    }

    /// Writes the encoder rows for one observation. The first `cloud.len()`
    /// rows always correspond one-to-one with the cloud's points.
    pub fn write_rows(self, obs: &AgentObs, scale: f64, out: &mut Vec<f64>) {
        let cloud = &obs.cloud;
        let pts = cloud.positions();
        let flow = cloud.flow();
        for (i, s) in cloud.seg().iter().enumerate() {
            let obj = if *s == Seg::Object { 1.0 } else { 0.0 };
            let p = pts[i] * scale;
            match self {
                InputMode::Flow => {
                    let f = flow[i] * scale;
                    out.extend([p.x, p.y, f.x, f.y, obj]);
                }
                InputMode::GoalPointCloud => out.extend([p.x, p.y, obj, 0.0]),
                InputMode::GoalPose => {
                    let g = obs.state.goal;
                    out.extend([p.x, p.y, obj, obj * g[0] * scale, obj * g[1] * scale, obj * g[2]]);
                }
            }
        }
        if self == InputMode::GoalPointCloud {
            for i in cloud.object_indices() {
                let g = (pts[i] + flow[i]) * scale;
                out.extend([g.x, g.y, 0.0, 1.0]);
            }
        }
    }
}

/// Encoder input for a batch of observations plus row bookkeeping.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub batch: CloudBatch,
    /// Global row of every object point, cloud by cloud.
    pub object_rows: Vec<Vec<usize>>,
}

impl PreparedBatch {
    pub fn new(obs: &[&AgentObs], mode: InputMode, scale: f64) -> Self {
        let width = mode.width();
        let total: usize = obs.iter().map(|o| mode.n_rows(&o.cloud)).sum();
        let mut data = Vec::with_capacity(total * width);
        let mut offsets = Vec::with_capacity(obs.len() + 1);
        let mut object_rows = Vec::with_capacity(obs.len());
        offsets.push(0);
        for o in obs {
            let start = *offsets.last().unwrap();
            mode.write_rows(o, scale, &mut data);
            object_rows.push(o.cloud.object_indices().map(|i| start + i).collect());
            offsets.push(start + mode.n_rows(&o.cloud));
        }
        PreparedBatch {
            batch: CloudBatch {
                features: Matrix {
                    rows: total,
                    cols: width,
                    data,
                },
                offsets,
            },
            object_rows,
        }
    }

    pub fn flat_object_rows(&self) -> Vec<usize> {
        self.object_rows.iter().flatten().copied().collect()
    }

    pub fn cloud_start(&self, c: usize) -> usize {
        self.batch.offsets[c]
    }
}
