//! Per-point actor and critic maps of one reset observation, for offline plotting.

use std::fmt::Write as _;
use std::path::Path;

use super::checkpoint;
use crate::baselines::Agent;
use crate::env::{EnvConfig, PlanarPushEnv, TaskVariant};
use crate::error::{Error, Result};
use crate::hacman::{AgentObs, Learner};
use crate::pointcloud::Seg;

pub const HEADER: &str = "x,y,seg,q,prob,am_x,am_y";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapRow {
    pub x: f64,
    pub y: f64,
    pub seg: Seg,
    pub q: f64,
    pub prob: f64,
    pub am_x: f64,
    pub am_y: f64,
}

pub fn critic_map_rows(agent: &Agent, env: &EnvConfig, variant: TaskVariant, seed: u64) -> Result<Vec<MapRow>> {
    let Some(h) = agent.as_hacman() else {
        return Err(Error::NoCriticMap(agent.kind().to_string()));
    };
    let mut e = PlanarPushEnv::new(env.clone(), variant, seed)?;
    agent.on_reset(&mut e);
    let obs = AgentObs::from_env(&e);
    let am = h.actor_map_forward(&obs)?;
    let q = h.critic_map_forward(&obs, &am)?;
    let p = h.location_probs(&q, &obs.cloud)?;
    Ok((0..obs.cloud.len())
        .map(|i| MapRow {
            x: obs.cloud.positions()[i].x,
            y: obs.cloud.positions()[i].y,
            seg: obs.cloud.seg()[i],
            q: q.0[i],
            prob: p[i],
            am_x: am.0[i].x,
            am_y: am.0[i].y,
        })
        .collect())
}

pub fn rows_to_csv(rows: &[MapRow]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let seg = match r.seg {
            Seg::Object => "object",
            Seg::Background => "background",
        };
        writeln!(s, "{},{},{},{},{},{},{}", r.x, r.y, seg, r.q, r.prob, r.am_x, r.am_y).unwrap();
    }
    s
}

pub fn dump_critic_map(checkpoint_path: &Path, seed: u64, out: &Path) -> Result<Vec<MapRow>> {
    let ckpt = checkpoint::load(checkpoint_path, None)?;
    let rows = critic_map_rows(&ckpt.agent, &ckpt.env, ckpt.variant, seed)?;
    std::fs::write(out, rows_to_csv(&rows)).map_err(|e| Error::io(out, e))?;
    Ok(rows)
}
