//! Versioned checkpoint container.
//!
//! Field order (all integers and floats little-endian):
//!
//! | field            | type                     |
//! |------------------|--------------------------|
//! | magic            | `b"PTCK"`                |
//! | version          | u32 (= 1)                |
//! | config length    | u32                      |
//! | model config     | UTF-8 JSON               |
//! | parameter count  | u64 (= n)                |
//! | parameters       | n × f64                  |
//! | first moments    | n × f64                  |
//! | second moments   | n × f64                  |
//! | step             | u64                      |
//! | learning rate    | f64                      |
//! | seed             | u64                      |

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::model::{ModelConfig, ToyNet};
use super::train::TrainState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<S: Scalar>(model: &ToyNet<S>, state: &TrainState<S>) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    let n = model.param_count();
    let mut out = Vec::with_capacity(32 + config.len() + 24 * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for block in [model.params(), &state.first_moment, &state.second_moment] {
        for v in block {
            out.extend_from_slice(&v.f64().to_le_bytes());
        }
    }
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&state.learning_rate.to_le_bytes());
    out.extend_from_slice(&state.seed.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn vec<S: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<S>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<(ToyNet<S>, TrainState<S>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "incompatible checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
    let n = r.u64("parameter count")? as usize;
    let mut model = ToyNet::new(config)?;
    if n != model.param_count() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {n} parameters, config implies {}",
            model.param_count()
        )));
    }
    model.set_params(r.vec(n, "parameters")?)?;
    let first_moment = r.vec(n, "first moments")?;
    let second_moment = r.vec(n, "second moments")?;
    let state = TrainState {
        first_moment,
        second_moment,
        step: r.u64("step")?,
        learning_rate: r.f64("learning rate")?,
        seed: r.u64("seed")?,
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok((model, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::train::LrSchedule;

    #[test]
    fn roundtrip_and_version_check() {
        let cfg = ModelConfig {
            input_size: (16, 8),
            channels: vec![4, 4],
            head_channels: 4,
            ..Default::default()
        };
        let model = ToyNet::<f64>::new(cfg).unwrap();
        let mut state = TrainState::new(model.param_count(), &LrSchedule::default(), 7);
        state.step = 12;
        state.first_moment[3] = 0.5;
        let bytes = encode_checkpoint(&model, &state);
        let (m2, s2) = decode_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(m2, model);
        assert_eq!(s2, state);

        let mut bad = bytes.clone();
        bad[4] = 9;
        let err = decode_checkpoint::<f64>(&bad).unwrap_err();
        assert!(err.to_string().contains("incompatible checkpoint version 9"));
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 1]).is_err());
    }
}
