//! Policy parameter checkpoints.
//!
//! Layout: the 8-byte magic `NMARLCK1`, a little-endian u64 header length,
//! a JSON header, then every agent's θ_i as little-endian f64 values.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"NMARLCK1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub run_id: String,
    pub seed: u64,
    pub k: usize,
    pub num_agents: usize,
    pub actor_len: usize,
    pub config_sha256: String,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn encode(header: &CheckpointHeader, thetas: &[Vec<f64>]) -> io::Result<Vec<u8>> {
    if thetas.len() != header.num_agents || thetas.iter().any(|t| t.len() != header.actor_len) {
        return Err(invalid(
            "parameter shape does not match the checkpoint header",
        ));
    }
    let json = serde_json::to_vec(header).map_err(|e| invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * header.num_agents * header.actor_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in thetas.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(mut bytes: &[u8]) -> io::Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    let mut magic = [0u8; 8];
    bytes.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a checkpoint file"));
    }
    let mut len = [0u8; 8];
    bytes.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| invalid("header too large"))?;
    if len > bytes.len() {
        return Err(invalid("truncated header"));
    }
    let (json, body) = bytes.split_at(len);
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| invalid(e.to_string()))?;
    let expected = header
        .num_agents
        .checked_mul(header.actor_len)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| invalid("parameter block too large"))?;
    if body.len() != expected {
        return Err(invalid(format!(
            "expected {expected} parameter bytes, found {}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let thetas = if header.actor_len == 0 {
        vec![Vec::new(); header.num_agents]
    } else {
        values
            .chunks(header.actor_len)
            .map(<[f64]>::to_vec)
            .collect()
    };
    Ok((header, thetas))
}

pub fn write(path: &Path, header: &CheckpointHeader, thetas: &[Vec<f64>]) -> io::Result<()> {
    let bytes = encode(header, thetas)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()
}

pub fn read(path: &Path) -> io::Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            run_id: "net".into(),
            seed: 3,
            k: 100,
            num_agents: 2,
            actor_len: 3,
            config_sha256: "abc".into(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let thetas = vec![vec![0.1, -2.5e-300, f64::MAX], vec![1.0 / 3.0, 0.0, -0.0]];
        let bytes = encode(&header(), &thetas).unwrap();
        let (h, back) = decode(&bytes).unwrap();
        assert_eq!(h, header());
        for (a, b) in thetas.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(encode(&header(), &[vec![0.0; 3]]).is_err());
        let bytes = encode(&header(), &[vec![0.0; 3], vec![1.0; 3]]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong).is_err());
    }
}
