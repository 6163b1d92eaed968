//! Bit-exact state persistence.
//!
//! Layout: magic `SUFLOW01` (8 bytes), little-endian u64 `nx`, `ny`, `k`,
//! little-endian f64 `L`, `alpha`, `r_scale`, `t`, `cumulative_dissipation`,
//! then `nx*ny*k` little-endian f64 node values, row-major, components
//! innermost.

use crate::flow::{FlowParams, FlowState};
use crate::geometry::{GeometryError, MapField, TorusGrid};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SUFLOW01";

/// Node-count ceiling guarding against nonsense headers.
const MAX_NODES: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint")]
    BadMagic,
    #[error("truncated header: expected {0} bytes, got {1}")]
    TruncatedHeader(usize, usize),
    #[error("expected {expected} values, got {got}")]
    Truncated { expected: u64, got: u64 },
    #[error("dimension overflow: {0} x {1} x {2} nodes")]
    DimensionOverflow(u64, u64, u64),
    #[error("invalid grid in checkpoint: {0}")]
    InvalidGrid(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

pub fn write_checkpoint(state: &FlowState, params: &FlowParams) -> Vec<u8> {
    let field = &state.field;
    let grid = field.grid();
    let mut out = Vec::with_capacity(8 + 3 * 8 + 5 * 8 + field.data().len() * 8);
    out.extend_from_slice(MAGIC);
    for v in [grid.nx() as u64, grid.ny() as u64, field.ambient_dim() as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [
        grid.side(),
        params.alpha,
        params.r_scale,
        state.t,
        state.cumulative_dissipation,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Recovered state plus the flow parameters stored alongside it. The step
/// counter is not persisted and restarts at zero.
#[derive(Debug)]
pub struct Restored {
    pub state: FlowState,
    pub alpha: f64,
    pub r_scale: f64,
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Restored> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = 8 + 3 * 8 + 5 * 8;
    if bytes.len() < header_len {
        return Err(CheckpointError::TruncatedHeader(header_len, bytes.len()));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let nx = u64_at(8);
    let ny = u64_at(16);
    let k = u64_at(24);
    let total = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(k))
        .filter(|&n| n <= MAX_NODES)
        .ok_or(CheckpointError::DimensionOverflow(nx, ny, k))?;
    let side = f64_at(32);
    let alpha = f64_at(40);
    let r_scale = f64_at(48);
    let t = f64_at(56);
    let cumulative_dissipation = f64_at(64);
    let payload = &bytes[header_len..];
    let got = payload.len() as u64 / 8;
    if got < total {
        return Err(CheckpointError::Truncated { expected: total, got });
    }
    let data: Vec<f64> = (0..total as usize)
        .map(|i| f64::from_le_bytes(payload[i * 8..i * 8 + 8].try_into().unwrap()))
        .collect();
    let grid = TorusGrid::new(nx as usize, side)?;
    let field = MapField::from_raw(grid, k as usize, data)?;
    Ok(Restored {
        state: FlowState {
            t,
            field,
            step_count: 0,
            cumulative_dissipation,
        },
        alpha,
        r_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> (FlowState, FlowParams) {
        let grid = TorusGrid::new(16, 2.0).unwrap();
        let f = MapField::from_fn(grid, 3, |x, y| {
            vec![0.3 * (x * 3.0).cos(), 0.2 * (y * 5.0).sin(), 1.0]
        })
        .unwrap();
        let mut params = FlowParams::new(1.15);
        params.r_scale = 0.5;
        (
            FlowState {
                t: 0.125,
                field: f,
                step_count: 77,
                cumulative_dissipation: 1.5e-3,
            },
            params,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (state, params) = sample_state();
        let bytes = write_checkpoint(&state, &params);
        let restored = read_checkpoint(&bytes).unwrap();
        assert_eq!(restored.state.field.data(), state.field.data());
        assert_eq!(restored.state.t, state.t);
        assert_eq!(restored.state.cumulative_dissipation, state.cumulative_dissipation);
        assert_eq!(restored.alpha, 1.15);
        assert_eq!(restored.r_scale, 0.5);
        assert_eq!(restored.state.step_count, 0); // not persisted
        // writing the restored state reproduces the bytes
        let mut p2 = FlowParams::new(restored.alpha);
        p2.r_scale = restored.r_scale;
        assert_eq!(write_checkpoint(&restored.state, &p2), bytes);
    }

    #[test]
    fn corrupted_magic() {
        let (state, params) = sample_state();
        let mut bytes = write_checkpoint(&state, &params);
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn truncated_payload() {
        let (state, params) = sample_state();
        let bytes = write_checkpoint(&state, &params);
        let cut = &bytes[..bytes.len() - 64];
        match read_checkpoint(cut) {
            Err(CheckpointError::Truncated { expected, got }) => {
                assert_eq!(expected, 16 * 16 * 3);
                assert_eq!(got, expected - 8);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        for v in [u64::MAX, 8, 3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 5 * 8]);
        assert!(matches!(
            read_checkpoint(&bytes),
            Err(CheckpointError::DimensionOverflow(_, _, _))
        ));
    }
}
