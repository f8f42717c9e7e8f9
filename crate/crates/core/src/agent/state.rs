//! Model and training checkpoints. A training checkpoint starts with the same
//! header as a bare model, so either can be loaded for evaluation.

use super::{AgentError, Experience, Learner, ReplayMemory};
use crate::neural::{decode_network, encode_network, Decoder, Encoder, NeuralError};
use crate::{Adam, Network};

const MODEL: u8 = 0;
const TRAINING: u8 = 1;

pub fn save_model(net: &Network, actions: &[String]) -> Vec<u8> {
    let mut enc = Encoder::default();
    encode_network(&mut enc, net, actions, MODEL);
    enc.buf
}

pub fn load_model(data: &[u8]) -> Result<(Network, Vec<String>), AgentError> {
    let (net, names, _) = decode_network(&mut Decoder::new(data))?;
    Ok((net, names))
}

pub fn save_training(l: &Learner, actions: &[String]) -> Vec<u8> {
    let mut enc = Encoder::default();
    encode_network(&mut enc, &l.policy, actions, TRAINING);
    enc.floats(l.target.params());
    enc.floats(&l.adam.m);
    enc.floats(&l.adam.v);
    enc.u64(l.adam.step);
    enc.u64(l.episodes_done);
    enc.u64(l.steps_done);
    enc.u64(l.replay.capacity() as u64);
    enc.u64(l.replay.head() as u64);
    enc.u64(l.replay.len() as u64);
    for e in l.replay.raw() {
        enc.floats(&e.state);
        enc.u32(e.action as u32);
        enc.f64(e.reward);
        enc.floats(&e.next);
        enc.u8(u8::from(e.done));
    }
    enc.buf
}

fn corrupt(m: &str) -> AgentError {
    AgentError::Neural(NeuralError::Checkpoint(m.to_string()))
}

pub fn load_training(data: &[u8]) -> Result<(Learner, Vec<String>), AgentError> {
    let mut dec = Decoder::new(data);
    let (policy, names, kind) = decode_network(&mut dec)?;
    if kind != TRAINING {
        return Err(corrupt("not a training checkpoint"));
    }
    let target = Network::from_params(
        policy.input_dim(),
        policy.hidden_dim(),
        policy.layers(),
        policy.action_count(),
        dec.floats()?,
    )?;
    let mut adam = Adam::new(policy.params().len());
    adam.m = dec.floats()?;
    adam.v = dec.floats()?;
    if adam.m.len() != policy.params().len() || adam.v.len() != policy.params().len() {
        return Err(corrupt("optimizer state has the wrong shape"));
    }
    adam.step = dec.u64()?;
    let episodes_done = dec.u64()?;
    let steps_done = dec.u64()?;
    let capacity = dec.u64()? as usize;
    let head = dec.u64()? as usize;
    let len = dec.u64()? as usize;
    if capacity == 0 || len > capacity || (head > 0 && head >= len) {
        return Err(corrupt("replay bookkeeping out of range"));
    }
    let mut items = Vec::with_capacity(len);
    for _ in 0..len {
        let state = dec.floats()?;
        let action = dec.u32()? as usize;
        let reward = dec.f64()?;
        let next = dec.floats()?;
        let done = dec.u8()? != 0;
        if action >= policy.action_count() {
            return Err(corrupt("replay action out of range"));
        }
        items.push(Experience {
            state,
            action,
            reward,
            next,
            done,
        });
    }
    if !dec.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok((
        Learner {
            policy,
            target,
            adam,
            replay: ReplayMemory::from_parts(capacity, items, head),
            episodes_done,
            steps_done,
        },
        names,
    ))
}
