//! Binary checkpoint: magic, version, kind, dims, action names, then the
//! parameters as little-endian f64. Training checkpoints append more sections
//! with the same primitive encoding.

use std::io::{Read, Write};

use super::{LstmNetwork, NeuralError};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AITQNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn floats<T: Scalar>(&mut self, v: &[T]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(x.as_f64());
        }
    }
}

pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

fn short() -> NeuralError {
    NeuralError::Checkpoint("truncated file".into())
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Decoder { data, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        let end = self.pos.checked_add(n).ok_or_else(short)?;
        let s = self.data.get(self.pos..end).ok_or_else(short)?;
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, NeuralError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, NeuralError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String, NeuralError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| NeuralError::Checkpoint("invalid utf-8 in name".into()))
    }

    pub fn floats<T: Scalar>(&mut self) -> Result<Vec<T>, NeuralError> {
        let n = self.u64()? as usize;
        if n > self.data.len() / 8 {
            return Err(short());
        }
        (0..n).map(|_| self.f64().map(T::lit)).collect()
    }
}

/// Header plus parameters. `kind` 0 is a bare model, 1 a training checkpoint.
pub fn encode_network<T: Scalar>(enc: &mut Encoder, net: &LstmNetwork<T>, actions: &[String], kind: u8) {
    enc.buf.extend_from_slice(CHECKPOINT_MAGIC);
    enc.u32(CHECKPOINT_VERSION);
    enc.u8(kind);
    enc.u32(net.input_dim() as u32);
    enc.u32(net.hidden_dim() as u32);
    enc.u32(net.layers() as u32);
    enc.u32(net.action_count() as u32);
    for a in actions {
        enc.str(a);
    }
    enc.floats(net.params());
}

/// Reads the header and parameters; returns the network, action names and kind.
pub fn decode_network<T: Scalar>(
    dec: &mut Decoder<'_>,
) -> Result<(LstmNetwork<T>, Vec<String>, u8), NeuralError> {
    if dec.take(8)? != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint("bad magic".into()));
    }
    let version = dec.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NeuralError::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = dec.u8()?;
    let input = dec.u32()? as usize;
    let hidden = dec.u32()? as usize;
    let layers = dec.u32()? as usize;
    let actions = dec.u32()? as usize;
    if actions > 1 << 16 {
        return Err(NeuralError::Checkpoint("implausible action count".into()));
    }
    let names = (0..actions).map(|_| dec.str()).collect::<Result<Vec<_>, _>>()?;
    let params = dec.floats::<T>()?;
    let net = LstmNetwork::from_params(input, hidden, layers, actions, params)?;
    Ok((net, names, kind))
}

pub fn save_network<T: Scalar, W: Write>(
    net: &LstmNetwork<T>,
    actions: &[String],
    mut out: W,
) -> Result<(), NeuralError> {
    if actions.len() != net.action_count() {
        return Err(NeuralError::Shape {
            expected: net.action_count(),
            got: actions.len(),
        });
    }
    let mut enc = Encoder::default();
    encode_network(&mut enc, net, actions, 0);
    out.write_all(&enc.buf)?;
    Ok(())
}

pub fn load_network<T: Scalar, R: Read>(mut input: R) -> Result<(LstmNetwork<T>, Vec<String>), NeuralError> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let (net, names, _) = decode_network(&mut Decoder::new(&data))?;
    Ok((net, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = LstmNetwork::<f64>::init(4, 10, 10, 3, 23).unwrap();
        let mut buf = Vec::new();
        save_network(&net, &names(23), &mut buf).unwrap();
        let (back, n): (LstmNetwork<f64>, _) = load_network(buf.as_slice()).unwrap();
        assert_eq!(n, names(23));
        assert_eq!(back, net);
        let x = vec![vec![0.5; 10]; 3];
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        assert!(load_network::<f64, _>(&b"nope"[..]).is_err());
        let net = LstmNetwork::<f64>::init(4, 2, 3, 1, 2).unwrap();
        let mut buf = Vec::new();
        save_network(&net, &names(2), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(load_network::<f64, _>(buf.as_slice()).is_err());
    }
}
