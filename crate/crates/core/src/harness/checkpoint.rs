//! Versioned binary checkpoints.
//!
//! Layout: magic `HACMANCK`, format version (u32), agent kind, a JSON header
//! with every non-parameter field, then each parameter store and optimiser
//! state as raw little-endian `f64`s, followed by a SHA-256 of all preceding
//! bytes. Parameters round-trip bit-exactly.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{Agent, AgentKind};
use crate::env::{EnvConfig, TaskVariant};
use crate::error::{Error, Result};
use crate::hacman::AgentParams;
use crate::netcore::{AdamState, ParameterStore, PointNetSpec, Tensor};

pub const MAGIC: &[u8; 8] = b"HACMANCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub agent: Agent,
    pub env: EnvConfig,
    pub variant: TaskVariant,
    pub step: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn empty_params() -> AgentParams {
    AgentParams::new(ParameterStore::new(), ParameterStore::new(), ParameterStore::new())
}

fn write_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.write_u32::<LittleEndian>(b.len() as u32).unwrap();
    out.write_all(b).unwrap();
}

fn write_store(out: &mut Vec<u8>, s: &ParameterStore) {
    out.write_u32::<LittleEndian>(s.tensors.len() as u32).unwrap();
    for t in &s.tensors {
        write_bytes(out, t.name.as_bytes());
        out.write_u32::<LittleEndian>(t.rows as u32).unwrap();
        out.write_u32::<LittleEndian>(t.cols as u32).unwrap();
        for v in &t.data {
            out.write_f64::<LittleEndian>(*v).unwrap();
        }
    }
}

fn write_adam(out: &mut Vec<u8>, a: &AdamState) {
    out.write_u64::<LittleEndian>(a.t).unwrap();
    for v in [a.beta1, a.beta2, a.eps] {
        out.write_f64::<LittleEndian>(v).unwrap();
    }
    write_store(out, &a.m);
    write_store(out, &a.v);
}

fn write_params(out: &mut Vec<u8>, p: &AgentParams) {
    for (_, s) in p.stores() {
        write_store(out, s);
    }
    for a in [&p.actor_opt, &p.critic1_opt, &p.critic2_opt] {
        write_adam(out, a);
    }
}

fn read_bytes(r: &mut Cursor<&[u8]>) -> Result<Vec<u8>> {
    let n = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated length"))? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(bad("truncated field"));
    }
    let mut b = vec![0; n];
    r.read_exact(&mut b).map_err(|_| bad("truncated field"))?;
    Ok(b)
}

fn read_store(r: &mut Cursor<&[u8]>) -> Result<ParameterStore> {
    let eof = |_| bad("truncated parameter block");
    let n = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let mut s = ParameterStore::new();
    for _ in 0..n {
        let name = String::from_utf8(read_bytes(r)?).map_err(|_| bad("tensor name is not utf-8"))?;
        let rows = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let len = rows.checked_mul(cols).ok_or_else(|| bad("tensor too large"))?;
        let remaining = r.get_ref().len() - r.position() as usize;
        if len.saturating_mul(8) > remaining {
            return Err(bad("truncated parameter block"));
        }
        let mut t = Tensor::zeros(name, rows, cols);
        for v in t.data.iter_mut() {
            *v = r.read_f64::<LittleEndian>().map_err(eof)?;
        }
        s.tensors.push(t);
    }
    Ok(s)
}

fn read_adam(r: &mut Cursor<&[u8]>) -> Result<AdamState> {
    let eof = |_| bad("truncated optimiser block");
    let t = r.read_u64::<LittleEndian>().map_err(eof)?;
    let beta1 = r.read_f64::<LittleEndian>().map_err(eof)?;
    let beta2 = r.read_f64::<LittleEndian>().map_err(eof)?;
    let eps = r.read_f64::<LittleEndian>().map_err(eof)?;
    Ok(AdamState { beta1, beta2, eps, t, m: read_store(r)?, v: read_store(r)? })
}

fn read_params(r: &mut Cursor<&[u8]>) -> Result<AgentParams> {
    let mut s = Vec::with_capacity(6);
    for _ in 0..6 {
        s.push(read_store(r)?);
    }
    let actor_opt = read_adam(r)?;
    let critic1_opt = read_adam(r)?;
    let critic2_opt = read_adam(r)?;
    let mut it = s.into_iter();
    let mut next = || it.next().expect("six stores");
    Ok(AgentParams {
        actor: next(),
        critic1: next(),
        critic2: next(),
        actor_target: next(),
        critic1_target: next(),
        critic2_target: next(),
        actor_opt,
        critic1_opt,
        critic2_opt,
    })
}

fn specs(agent: &Agent) -> (&PointNetSpec, &PointNetSpec) {
    match agent {
        Agent::Hacman { agent, .. } => (&agent.actor_spec, &agent.critic_spec),
        Agent::Td3(t) => (&t.actor_spec, &t.critic_spec),
    }
}

fn check_layout(agent: &Agent) -> Result<()> {
    let (a, c) = specs(agent);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let actor = a.init(&mut rng);
    let critic = c.init(&mut rng);
    let p = agent.params();
    let mismatch = |what: &str| bad(format!("{what} does not match the network layout"));
    for (name, s) in p.stores() {
        let template = if name.starts_with("actor") { &actor } else { &critic };
        template.check_same_layout(s).map_err(|_| mismatch(name))?;
    }
    for (name, o, template) in [
        ("actor optimiser", &p.actor_opt, &actor),
        ("critic1 optimiser", &p.critic1_opt, &critic),
        ("critic2 optimiser", &p.critic2_opt, &critic),
    ] {
        template.check_same_layout(&o.m).map_err(|_| mismatch(name))?;
        template.check_same_layout(&o.v).map_err(|_| mismatch(name))?;
    }
    Ok(())
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut header = ckpt.clone();
    *header.agent.params_mut() = empty_params();
    let json = serde_json::to_vec(&header).map_err(|e| bad(format!("header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    write_bytes(&mut out, ckpt.agent.kind().name().as_bytes());
    write_bytes(&mut out, &json);
    write_params(&mut out, ckpt.agent.params());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Decodes a checkpoint, optionally requiring a specific agent kind.
pub fn decode(bytes: &[u8], expected: Option<AgentKind>) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file truncated or corrupt)"));
    }
    let mut r = Cursor::new(body);
    r.set_position(8);
    let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let kind_name = String::from_utf8(read_bytes(&mut r)?).map_err(|_| bad("agent kind is not utf-8"))?;
    let kind: AgentKind = kind_name.parse()?;
    if let Some(want) = expected {
        if want != kind {
            return Err(bad(format!("checkpoint holds a {kind} agent, expected {want}")));
        }
    }
    let json = read_bytes(&mut r)?;
    let mut ckpt: Checkpoint = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    if ckpt.agent.kind() != kind {
        return Err(bad("agent kind tag disagrees with header"));
    }
    *ckpt.agent.params_mut() = read_params(&mut r)?;
    if r.position() as usize != body.len() {
        return Err(bad("trailing bytes after parameter blocks"));
    }
    check_layout(&ckpt.agent)?;
    Ok(ckpt)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected: Option<AgentKind>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}

/// SHA-256 over every parameter, optimiser moment and target copy.
pub fn params_digest(p: &AgentParams) -> [u8; 32] {
    let mut out = Vec::new();
    write_params(&mut out, p);
    Sha256::digest(&out).into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{BaselineKind, ObservationMode};
    use crate::hacman::{NetConfig, TrainConfig};

    fn checkpoint(kind: AgentKind, obs: ObservationMode) -> Checkpoint {
        let cfg = TrainConfig {
            net: NetConfig { encoder: vec![4], head: vec![4], input_scale: 4.0 },
            learning_rate: 0.1 + 0.2,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = Agent::new(kind, obs, &cfg, &mut rng).unwrap();
        agent.params_mut().actor_opt.t = 17;
        agent.params_mut().critic1.tensors[0].data[0] = f64::from_bits(0x3FF0_0000_0000_0001);
        Checkpoint { agent, env: EnvConfig::default(), variant: TaskVariant::HARD, step: 42 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (k, o) in [
            (AgentKind::Hacman, ObservationMode::PointCloud),
            (AgentKind::Baseline(BaselineKind::NoActorMap), ObservationMode::PointCloud),
            (AgentKind::Baseline(BaselineKind::RegressContactLocation), ObservationMode::State),
        ] {
            let c = checkpoint(k, o);
            let bytes = encode(&c).unwrap();
            let back = decode(&bytes, Some(k)).unwrap();
            assert_eq!(back, c);
            assert_eq!(encode(&back).unwrap(), bytes);
            assert_eq!(params_digest(back.agent.params()), params_digest(c.agent.params()));
        }
    }

    #[test]
    fn rejects_kind_mismatch_truncation_and_corruption() {
        let c = checkpoint(AgentKind::Hacman, ObservationMode::PointCloud);
        let bytes = encode(&c).unwrap();
        assert!(decode(&bytes, Some(AgentKind::Baseline(BaselineKind::Greedy))).is_err());
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut], None), Err(Error::Checkpoint(_))));
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 1;
        assert!(decode(&flipped, None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("checkpoint_42");
        let c = checkpoint(AgentKind::Hacman, ObservationMode::PointCloud);
        save(&p, &c).unwrap();
        assert_eq!(load(&p, None).unwrap(), c);
        assert!(matches!(load(&dir.path().join("missing"), None), Err(Error::Io { .. })));
    }
}
