//! Binary checkpoint: everything needed to resume training bit-identically.
//!
//! All integers and floats are little-endian.
//!
//! | field | encoding |
//! |---|---|
//! | magic | 8 bytes `FOLDPACK` |
//! | version | u32 (currently 1) |
//! | net config | u64 × 6: points, patches, latent_dim, instances, width, init seed |
//! | train config | u64 epochs, u64 batch_size, u64 sample_size, u32 depth, f64 epsilon, u64 max_iterations, u8 loss (0 aligned_l2, 1 aug_chamfer_sample), u8 reassignment, f64 lr, u64 seed |
//! | progress | u64 epochs_done, u8 greedy_done |
//! | tensors | u32 count; per tensor: u16 name length, name bytes, u64 length, f64 values |
//! | adam | u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps; per tensor: u64 length, f64 first moments, u64 length, f64 second moments |
//! | rng | u64 seed, u64 next epoch; every random draw derives from these |
//! | matchings | u64 count; per instance: u64 length, u64 original-row indices |
//!
//! The file ends exactly after the last matching.

use std::fs;
use std::path::{Path, PathBuf};

use foldpack_core::adam::AdamState;
use foldpack_core::net::{FoldingNet, NetConfig, Params, TENSOR_NAMES};
use foldpack_core::trainer::{LossKind, TrainConfig};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FOLDPACK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: FoldingNet,
    pub adam: AdamState,
    pub train: TrainConfig,
    pub epochs_done: usize,
    pub greedy_done: bool,
    /// Per instance: `permutation[row]` is the original target row now at `row`.
    pub permutations: Vec<Vec<usize>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Binary {
            path: self.path.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("value {v} does not fit in usize")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(self.err("truncated checkpoint"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let c = ck.net.config();
    for v in [c.points, c.patches, c.latent_dim, c.instances, c.width] {
        w.u64(v as u64);
    }
    w.u64(c.seed);

    let t = &ck.train;
    w.u64(t.epochs as u64);
    w.u64(t.batch_size as u64);
    w.u64(t.sample_size as u64);
    w.u32(t.depth);
    w.f64(t.epsilon);
    w.u64(t.max_iterations as u64);
    w.u8(match t.loss {
        LossKind::AlignedL2 => 0,
        LossKind::AugChamferSample => 1,
    });
    w.u8(u8::from(t.reassignment));
    w.f64(t.lr);
    w.u64(t.seed);

    w.u64(ck.epochs_done as u64);
    w.u8(u8::from(ck.greedy_done));

    let tensors = ck.net.params().tensors();
    w.u32(tensors.len() as u32);
    for (name, data) in TENSOR_NAMES.iter().zip(tensors) {
        w.u16(name.len() as u16);
        w.0.extend_from_slice(name.as_bytes());
        w.f64s(data);
    }

    let a = &ck.adam;
    w.u64(a.step);
    for v in [a.lr, a.beta1, a.beta2, a.eps] {
        w.f64(v);
    }
    for (m, v) in a.first.iter().zip(&a.second) {
        w.f64s(m);
        w.f64s(v);
    }

    w.u64(t.seed);
    w.u64(ck.epochs_done as u64);

    w.u64(ck.permutations.len() as u64);
    for p in &ck.permutations {
        w.u64(p.len() as u64);
        for &i in p {
            w.u64(i as u64);
        }
    }
    w.0
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.take(8).map_err(|_| Error::CheckpointVersion {
        path: path.to_path_buf(),
        found: 0,
        expected: VERSION,
    })?;
    if magic != MAGIC {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: 0,
            expected: VERSION,
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let config = NetConfig {
        points: r.usize()?,
        patches: r.usize()?,
        latent_dim: r.usize()?,
        instances: r.usize()?,
        width: r.usize()?,
        seed: r.u64()?,
    };
    let train = TrainConfig {
        epochs: r.usize()?,
        batch_size: r.usize()?,
        sample_size: r.usize()?,
        depth: r.u32()?,
        epsilon: r.f64()?,
        max_iterations: r.usize()?,
        loss: match r.u8()? {
            0 => LossKind::AlignedL2,
            1 => LossKind::AugChamferSample,
            other => return Err(r.err(format!("unknown loss code {other}"))),
        },
        reassignment: r.u8()? != 0,
        lr: r.f64()?,
        seed: r.u64()?,
    };
    let epochs_done = r.usize()?;
    let greedy_done = r.u8()? != 0;

    let count = r.u32()? as usize;
    if count != TENSOR_NAMES.len() {
        return Err(r.err(format!("expected {} tensors, found {count}", TENSOR_NAMES.len())));
    }
    let mut params = Params::zeros(&config);
    for (k, slot) in params.tensors_mut().into_iter().enumerate() {
        let n = r.u16()? as usize;
        let name = r.take(n)?;
        if name != TENSOR_NAMES[k].as_bytes() {
            return Err(r.err(format!("expected tensor {}", TENSOR_NAMES[k])));
        }
        let data = r.f64s()?;
        if data.len() != slot.len() {
            return Err(r.err(format!(
                "tensor {} has {} values, config implies {}",
                TENSOR_NAMES[k],
                data.len(),
                slot.len()
            )));
        }
        slot.copy_from_slice(&data);
    }
    let net = FoldingNet::from_params(config, params)?;

    let step = r.u64()?;
    let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let mut first = Vec::with_capacity(count);
    let mut second = Vec::with_capacity(count);
    for t in net.params().tensors() {
        let m = r.f64s()?;
        let v = r.f64s()?;
        if m.len() != t.len() || v.len() != t.len() {
            return Err(r.err("optimizer moments do not match tensor shapes"));
        }
        first.push(m);
        second.push(v);
    }
    let adam = AdamState {
        lr,
        beta1,
        beta2,
        eps,
        step,
        first,
        second,
    };

    let rng_seed = r.u64()?;
    let rng_epoch = r.usize()?;
    if rng_seed != train.seed || rng_epoch != epochs_done {
        return Err(r.err("random stream state disagrees with the training progress"));
    }

    let n = r.usize()?;
    let mut permutations = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = r.usize()?;
        if len > (bytes.len() - r.pos) / 8 {
            return Err(r.err("truncated checkpoint"));
        }
        permutations.push((0..len).map(|_| r.usize()).collect::<Result<Vec<_>>>()?);
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint {
        net,
        adam,
        train,
        epochs_done,
        greedy_done,
        permutations,
    })
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, encode(ck)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
