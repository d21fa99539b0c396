//! Parameter checkpoints.
//!
//! Layout: the 8-byte magic `TSCQCKP1`, a little-endian `u32` header length,
//! a JSON header listing every network's architecture and tensor shapes, then
//! all parameters as little-endian `f64` in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AgentError, QArch, QFunction};

const MAGIC: &[u8; 8] = b"TSCQCKP1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub label: String,
    pub arch: QArch,
    pub tensors: Vec<TensorShape>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub networks: Vec<NetworkManifest>,
}

fn manifest(label: &str, qf: &QFunction) -> NetworkManifest {
    NetworkManifest {
        label: label.to_string(),
        arch: qf.arch().clone(),
        tensors: qf
            .layout()
            .tensors
            .iter()
            .map(|t| TensorShape {
                name: t.name.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, nets: &[(&str, &QFunction)]) -> Result<(), AgentError> {
    let header = CheckpointHeader {
        networks: nets.iter().map(|(l, q)| manifest(l, q)).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| AgentError::Checkpoint("header too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for (_, q) in nets {
        let mut buf = Vec::with_capacity(q.params().len() * 8);
        for x in q.params() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, QFunction)>, AgentError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AgentError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(header.networks.len());
    for net in header.networks {
        let mut qf = QFunction::zeros(net.arch.clone())?;
        let expected = manifest(&net.label, &qf);
        if expected.tensors != net.tensors {
            return Err(AgentError::ShapeMismatch(format!(
                "tensor list of {} does not match its architecture",
                net.label
            )));
        }
        let mut buf = vec![0u8; qf.params().len() * 8];
        r.read_exact(&mut buf)?;
        for (p, chunk) in qf.params_mut().iter_mut().zip(buf.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        out.push((net.label, qf));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(AgentError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(out)
}

/// Reads a checkpoint and checks it against the expected labels and architectures.
pub fn load_matching<R: Read>(r: R, expected: &[(String, QArch)]) -> Result<Vec<QFunction>, AgentError> {
    let nets = read_checkpoint(r)?;
    if nets.len() != expected.len() {
        return Err(AgentError::ShapeMismatch(format!(
            "checkpoint holds {} networks, expected {}",
            nets.len(),
            expected.len()
        )));
    }
    nets.into_iter()
        .zip(expected)
        .map(|((label, q), (want_label, want_arch))| {
            if &label != want_label || q.arch() != want_arch {
                Err(AgentError::ShapeMismatch(format!(
                    "{label} {:?} vs expected {want_label} {want_arch:?}",
                    q.arch()
                )))
            } else {
                Ok(q)
            }
        })
        .collect()
}
