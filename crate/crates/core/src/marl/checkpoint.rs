//! Binary policy checkpoints.
//!
//! Layout (little-endian): the magic `QNETPOL1`, a `u32` agent count, then
//! for every agent its actor and critic. Each network is a `u32` layer
//! count followed, per layer, by `u32` rows (outputs), `u32` cols (inputs),
//! `rows * cols` row-major `f64` weights, a `u32` bias length and the bias.

use std::path::Path;

use super::nn::{Dense, Mlp};
use super::policy::LearnedPolicy;
use super::LearnError;

pub const MAGIC: &[u8; 8] = b"QNETPOL1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
}

fn put_mlp(out: &mut Vec<u8>, mlp: &Mlp) {
    put_u32(out, mlp.layers.len());
    for layer in &mlp.layers {
        put_u32(out, layer.outputs);
        put_u32(out, layer.inputs);
        for w in &layer.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        put_u32(out, layer.bias.len());
        for b in &layer.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
}

pub fn encode(policy: &LearnedPolicy) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, policy.networks.len());
    for (actor, critic) in &policy.networks {
        put_mlp(&mut out, actor);
        put_mlp(&mut out, critic);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], LearnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            LearnError::Checkpoint(format!("truncated at byte {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize, LearnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, LearnError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| LearnError::Checkpoint("dimension overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn mlp(&mut self) -> Result<Mlp, LearnError> {
        let count = self.u32()?;
        if count == 0 {
            return Err(LearnError::Checkpoint("network without layers".into()));
        }
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let outputs = self.u32()?;
            let inputs = self.u32()?;
            let weights = self.floats(outputs.checked_mul(inputs).ok_or_else(|| {
                LearnError::Checkpoint("dimension overflow".into())
            })?)?;
            let bias_len = self.u32()?;
            if bias_len != outputs {
                return Err(LearnError::Checkpoint(format!("bias length {bias_len} for {outputs} outputs")));
            }
            let bias = self.floats(bias_len)?;
            layers.push(Dense { inputs, outputs, weights, bias });
        }
        let mlp = Mlp { layers };
        if !mlp.shapes_chain() {
            return Err(LearnError::Checkpoint("layer shapes do not chain".into()));
        }
        if !mlp.is_finite() {
            return Err(LearnError::NonFiniteParameters);
        }
        Ok(mlp)
    }
}

pub fn decode(bytes: &[u8]) -> Result<LearnedPolicy, LearnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(LearnError::Checkpoint("bad magic".into()));
    }
    let agents = r.u32()?;
    if agents == 0 {
        return Err(LearnError::Checkpoint("no agents".into()));
    }
    let mut networks = Vec::with_capacity(agents.min(1024));
    for _ in 0..agents {
        let actor = r.mlp()?;
        let critic = r.mlp()?;
        networks.push((actor, critic));
    }
    if r.pos != bytes.len() {
        return Err(LearnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let outputs = networks[0].0.output_dim();
    if outputs < 3 {
        return Err(LearnError::Checkpoint(format!("actor output width {outputs} too small")));
    }
    LearnedPolicy::new(networks, outputs - 1)
}

pub fn save_policy(policy: &LearnedPolicy, path: &Path) -> Result<(), LearnError> {
    std::fs::write(path, encode(policy)).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_policy(path: &Path) -> Result<LearnedPolicy, LearnError> {
    let bytes = std::fs::read(path).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
