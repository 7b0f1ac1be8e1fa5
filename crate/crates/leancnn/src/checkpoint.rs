//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! "LCNN"                      magic, 4 bytes
//! u16                         format version (1)
//! u8                          1 if a model spec follows, else 0
//!   u8 kind (0 btbcnn, 1 btmcnn), u32 in_channels, u32 num_classes, u32 input_size
//! u8 rank, rank x u32         per-sample input dims
//! u32 count, count x layer    layer plan, each a u8 tag and payload:
//!   0 conv      u32 in, u32 out, u32 kernel, u32 pad, u32 stride
//!   1 batchnorm u32 channels
//!   2 relu, 3 maxpool, 4 flatten (no payload)
//!   5 dense     u32 in, u32 out
//!   6 dropout   f64 rate
//! u64 seed, u32 epochs, f64 lr
//! u32 count, count x tensor   u8 rank, rank x u32 dims, prod(dims) x f32
//! ```
//!
//! Tensors appear in layer order: conv weight and bias; batch-norm gamma,
//! beta, running mean, running var; dense weight and bias. Nothing may
//! follow the last tensor.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use leancnn_core::{LayerPlan, Model, ModelKind, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LCNN";
pub const VERSION: u16 = 1;

const MAX_RANK: u8 = 8;

/// Training metadata stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epochs: u32,
    pub lr: f64,
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
}

fn write_model<W: Write>(w: &mut W, model: &Model<f32>, meta: CheckpointMeta) -> Result<()> {
    let io = |e| Error::Format(format!("write failed: {e}"));
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io);
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    match model.spec() {
        None => put(&[0])?,
        Some(s) => {
            let kind = match s.kind {
                ModelKind::Btbcnn => 0u8,
                ModelKind::Btmcnn => 1,
            };
            put(&[1, kind])?;
            for v in [s.in_channels, s.num_classes, s.input_size] {
                put(&u32_of(v)?.to_le_bytes())?;
            }
        }
    }
    put(&[model.input_dims().len() as u8])?;
    for &d in model.input_dims() {
        put(&u32_of(d)?.to_le_bytes())?;
    }
    let plan = model.plan();
    put(&u32_of(plan.len())?.to_le_bytes())?;
    for layer in &plan {
        let (tag, fields): (u8, Vec<usize>) = match *layer {
            LayerPlan::Conv {
                in_channels,
                out_channels,
                kernel,
                pad,
                stride,
            } => (0, vec![in_channels, out_channels, kernel, pad, stride]),
            LayerPlan::BatchNorm { channels } => (1, vec![channels]),
            LayerPlan::Relu => (2, vec![]),
            LayerPlan::MaxPool => (3, vec![]),
            LayerPlan::Flatten => (4, vec![]),
            LayerPlan::Dense {
                in_features,
                out_features,
            } => (5, vec![in_features, out_features]),
            LayerPlan::Dropout { rate } => {
                put(&[6])?;
                put(&rate.to_le_bytes())?;
                continue;
            }
        };
        put(&[tag])?;
        for f in fields {
            put(&u32_of(f)?.to_le_bytes())?;
        }
    }
    put(&model.seed().to_le_bytes())?;
    put(&meta.epochs.to_le_bytes())?;
    put(&meta.lr.to_le_bytes())?;
    let state = model.state();
    put(&u32_of(state.len())?.to_le_bytes())?;
    let mut buf = Vec::new();
    for t in state {
        put(&[t.dims().len() as u8])?;
        for &d in t.dims() {
            put(&u32_of(d)?.to_le_bytes())?;
        }
        for chunk in t.data().chunks(1 << 16) {
            buf.clear();
            buf.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
            put(&buf)?;
        }
    }
    Ok(())
}

/// Serializes into memory.
pub fn to_bytes(model: &Model<f32>, meta: CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_model(&mut out, model, meta)?;
    Ok(out)
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save(model: &Model<f32>, meta: CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("lcnn.partial");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    write_model(&mut w, model, meta)?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
            _ => Error::Format(format!("read failed: {e}")),
        })?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("invalid rank {rank}")));
        }
        (0..rank).map(|_| self.u32()).collect()
    }
}

fn read_model<R: Read>(r: R) -> Result<(Model<f32>, CheckpointMeta)> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::Format("bad magic: not a leancnn checkpoint".into()));
    }
    let version = u16::from_le_bytes(r.bytes()?);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let spec = match r.u8()? {
        0 => None,
        1 => {
            let kind = match r.u8()? {
                0 => ModelKind::Btbcnn,
                1 => ModelKind::Btmcnn,
                k => return Err(Error::Format(format!("unknown model kind {k}"))),
            };
            Some(ModelSpec {
                kind,
                in_channels: r.u32()?,
                num_classes: r.u32()?,
                input_size: r.u32()?,
            })
        }
        f => return Err(Error::Format(format!("invalid spec flag {f}"))),
    };
    let input_dims = r.dims()?;
    let count = r.u32()?;
    if count > 1024 {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let mut plan = Vec::with_capacity(count);
    for _ in 0..count {
        plan.push(match r.u8()? {
            0 => LayerPlan::Conv {
                in_channels: r.u32()?,
                out_channels: r.u32()?,
                kernel: r.u32()?,
                pad: r.u32()?,
                stride: r.u32()?,
            },
            1 => LayerPlan::BatchNorm { channels: r.u32()? },
            2 => LayerPlan::Relu,
            3 => LayerPlan::MaxPool,
            4 => LayerPlan::Flatten,
            5 => LayerPlan::Dense {
                in_features: r.u32()?,
                out_features: r.u32()?,
            },
            6 => LayerPlan::Dropout { rate: r.f64()? },
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        });
    }
    let seed = r.u64()?;
    let meta = CheckpointMeta {
        epochs: u32::from_le_bytes(r.bytes()?),
        lr: r.f64()?,
    };

    let invalid = |e: leancnn_core::Error| Error::Format(format!("inconsistent checkpoint: {e}"));
    let mut model = match spec {
        Some(spec) => {
            let m = Model::<f32>::build(spec, seed).map_err(invalid)?;
            if m.plan() != plan || m.input_dims() != input_dims.as_slice() {
                return Err(Error::Format(
                    "layer plan does not match the stored spec".into(),
                ));
            }
            m
        }
        None => Model::<f32>::from_plan(&input_dims, &plan, seed).map_err(invalid)?,
    };

    let tensors = r.u32()?;
    let slots: usize = model.layers().iter().map(|l| l.state().len()).sum();
    if tensors != slots {
        return Err(Error::Format(format!(
            "{tensors} tensors stored, plan needs {slots}"
        )));
    }
    let mut buf = Vec::new();
    for layer in model.layers_mut() {
        for slot in layer.state_mut() {
            let dims = r.dims()?;
            if dims != slot.dims() {
                return Err(Error::Format(format!(
                    "stored tensor {dims:?} does not fit slot {:?}",
                    slot.dims()
                )));
            }
            for chunk in slot.data_mut().chunks_mut(1 << 16) {
                buf.resize(chunk.len() * 4, 0);
                r.inner
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Format("truncated checkpoint".into()))?;
                for (v, b) in chunk.iter_mut().zip(buf.chunks_exact(4)) {
                    *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                }
            }
        }
    }
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe) {
        Ok(0) => Ok((model, meta)),
        Ok(_) => Err(Error::Format("trailing bytes after the last tensor".into())),
        Err(e) => Err(Error::Format(format!("read failed: {e}"))),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model<f32>, CheckpointMeta)> {
    read_model(bytes)
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model<f32>, CheckpointMeta)> {
    let path = path.as_ref();
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_model(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use leancnn_core::{Rng, Tensor};

    fn small() -> Model<f32> {
        Model::build(ModelSpec::btmcnn(4).with_input_size(16), 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = small();
        if let leancnn_core::Layer::BatchNorm(bn) = &mut m.layers_mut()[1] {
            bn.running_mean.map_inplace(|_| 0.25);
        }
        let meta = CheckpointMeta {
            epochs: 7,
            lr: 5e-4,
        };
        let bytes = to_bytes(&m, meta).unwrap();
        let (back, meta2) = from_bytes(&bytes).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(back.spec(), m.spec());
        assert_eq!(back.fingerprint(), m.fingerprint());
        let x = Tensor::<f32>::uniform(&[3, 1, 16, 16], &mut Rng::new(1), 0.0, 1.0).unwrap();
        assert_eq!(back.infer(x.clone()).unwrap(), m.infer(x).unwrap());
        assert_eq!(to_bytes(&back, meta).unwrap(), bytes);
    }

    #[test]
    fn format_errors() {
        let bytes = to_bytes(&small(), CheckpointMeta::default()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(m)) if m.contains("version")));
        assert!(
            matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(m)) if m.contains("truncated"))
        );
        assert!(matches!(from_bytes(&bytes[..20]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(m)) if m.contains("trailing")));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lcnn");
        let m = small();
        save(&m, CheckpointMeta::default(), &path).unwrap();
        let (back, _) = load(&path).unwrap();
        assert_eq!(back.param_count(), m.param_count());
        assert!(!path.with_extension("lcnn.partial").exists());
    }
}
