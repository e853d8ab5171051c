//! Binary agent checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "PSCK"
//! version      u32
//! num_actions  u64, num_atoms u64, v_min f64, v_max f64, discount f64,
//! batch_size   u64, replay_capacity u64, target_update_period u64
//! adam         lr f64, beta1 f64, beta2 f64, eps f64
//! num_layers   u64, then (rows u64, cols u64) per layer
//! tensors      online, target, adam m, adam v; each as w0 b0 w1 b1 ...,
//!              weights column-major, every value an f64
//! counters     adam step u64, grad_updates u64, target_syncs u64
//! rng          ChaCha8 seed [32 bytes], stream u64, word position u128
//! ```
//!
//! Replay buffers are not persisted.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{Adam, AdamConfig, AgentConfig, AtomSupport, C51Agent, Dense, QNetwork, ReplayBuffer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        vs.iter().try_for_each(|&v| self.f64(v))
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size field overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, out: &mut [f64]) -> Result<()> {
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(())
    }
}

pub fn write_checkpoint<W: Write>(agent: &C51Agent, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(CHECKPOINT_MAGIC)?;
    w.0.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let c = &agent.config;
    w.u64(agent.online.num_actions() as u64)?;
    w.u64(c.num_atoms as u64)?;
    w.f64(c.v_min)?;
    w.f64(c.v_max)?;
    w.f64(c.discount)?;
    w.u64(c.batch_size as u64)?;
    w.u64(c.replay_capacity as u64)?;
    w.u64(c.target_update_period)?;
    w.f64(c.adam.lr)?;
    w.f64(c.adam.beta1)?;
    w.f64(c.adam.beta2)?;
    w.f64(c.adam.eps)?;

    let layers = agent.online.layers();
    w.u64(layers.len() as u64)?;
    for l in layers {
        w.u64(l.weights.nrows() as u64)?;
        w.u64(l.weights.ncols() as u64)?;
    }
    for t in agent.online.tensors() {
        w.f64s(t)?;
    }
    for t in agent.target.tensors() {
        w.f64s(t)?;
    }
    for t in agent.optimizer.m.iter().chain(&agent.optimizer.v) {
        w.f64s(t)?;
    }
    w.u64(agent.optimizer.step)?;
    w.u64(agent.grad_updates)?;
    w.u64(agent.target_syncs)?;

    w.0.write_all(&agent.rng.get_seed())?;
    w.u64(agent.rng.get_stream())?;
    w.0.write_all(&agent.rng.get_word_pos().to_le_bytes())?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<C51Agent> {
    let mut r = Reader(input);
    let magic: [u8; 4] = r.bytes()?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an agent checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let num_actions = r.usize()?;
    let num_atoms = r.usize()?;
    let v_min = r.f64()?;
    let v_max = r.f64()?;
    let discount = r.f64()?;
    let batch_size = r.usize()?;
    let replay_capacity = r.usize()?;
    let target_update_period = r.u64()?;
    let adam = AdamConfig { lr: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };

    let num_layers = r.usize()?;
    if num_layers == 0 || num_layers > 64 {
        return Err(Error::Format(format!("implausible layer count {num_layers}")));
    }
    let mut shapes = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        shapes.push((r.usize()?, r.usize()?));
    }
    let read_net = |r: &mut Reader<R>| -> Result<QNetwork> {
        let mut layers = Vec::with_capacity(num_layers);
        for &(rows, cols) in &shapes {
            let mut weights = DMatrix::zeros(rows, cols);
            r.f64s(weights.as_mut_slice())?;
            let mut bias = DVector::zeros(rows);
            r.f64s(bias.as_mut_slice())?;
            layers.push(Dense { weights, bias });
        }
        QNetwork::from_layers(layers, num_actions, num_atoms).map_err(|e| Error::Format(e.to_string()))
    };
    let online = read_net(&mut r)?;
    let target = read_net(&mut r)?;

    let tensor_sizes: Vec<usize> = online.tensors().iter().map(|t| t.len()).collect();
    let mut optimizer = Adam::new(adam, &tensor_sizes);
    for t in optimizer.m.iter_mut().chain(optimizer.v.iter_mut()) {
        r.f64s(t)?;
    }
    optimizer.step = r.u64()?;
    let grad_updates = r.u64()?;
    let target_syncs = r.u64()?;

    let seed: [u8; 32] = r.bytes()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.bytes()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let hidden = shapes[..num_layers - 1].iter().map(|&(rows, _)| rows).collect();
    let config = AgentConfig {
        num_atoms,
        v_min,
        v_max,
        hidden,
        adam,
        discount,
        batch_size,
        replay_capacity,
        target_update_period,
    };
    Ok(C51Agent {
        support: AtomSupport::new(num_atoms, v_min, v_max)?,
        buffer: ReplayBuffer::new(replay_capacity),
        config,
        online,
        target,
        optimizer,
        rng,
        grad_updates,
        target_syncs,
    })
}

pub fn save_checkpoint(agent: &C51Agent, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_checkpoint(agent, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<C51Agent> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{shared, Transition};

    #[test]
    fn round_trip_preserves_everything_but_the_buffer() {
        let config = AgentConfig { hidden: vec![6, 5], num_atoms: 7, batch_size: 2, ..AgentConfig::default() };
        let mut agent = C51Agent::new(config, 4, 3, 77).unwrap();
        let s = shared(vec![0.5, -0.5, 0.25, 1.0]);
        for a in 0..4 {
            agent.remember(Transition {
                state: s.clone(),
                action: a % 3,
                reward: 0.1,
                next_state: s.clone(),
                done: false,
                next_mask: shared(vec![true; 3]),
            });
        }
        for _ in 0..4 {
            agent.train_step().unwrap();
        }
        let mut bytes = Vec::new();
        write_checkpoint(&agent, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.online, agent.online);
        assert_eq!(back.target, agent.target);
        assert_eq!(back.optimizer, agent.optimizer);
        assert_eq!(back.config, agent.config);
        assert_eq!((back.grad_updates, back.target_syncs), (agent.grad_updates, agent.target_syncs));
        assert_eq!(back.rng, agent.rng);
        assert!(back.buffer.is_empty());
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_checkpoint(&b"NOPE\x01\0\0\0"[..]), Err(Error::Format(_))));
        let mut bytes = Vec::new();
        let agent = C51Agent::new(AgentConfig { hidden: vec![3], num_atoms: 3, ..AgentConfig::default() }, 2, 2, 0).unwrap();
        write_checkpoint(&agent, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 10);
        assert!(matches!(read_checkpoint(bytes.as_slice()), Err(Error::Format(_))));
        let mut versioned = Vec::new();
        write_checkpoint(&agent, &mut versioned).unwrap();
        versioned[4] = 9;
        assert!(matches!(read_checkpoint(versioned.as_slice()), Err(Error::Format(_))));
    }
}
