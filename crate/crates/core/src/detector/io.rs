//! Versioned binary model container.
//!
//! Layout (little-endian): magic `AFDM`, format version `u32`, kind `u8`,
//! resolution `u32`, seed `u64`, epochs `u32`, tpr `f64`, tnr `f64`, tensor
//! count `u32`, then per tensor `ndim u32`, `dims u32 × ndim`, `f32 × len`;
//! finally a CRC-32 of everything before it.

use std::path::Path;

use super::arch::{ArchId, DetectorArch};
use super::model::{DetectorModel, ModelMeta};
use super::ndl::{CooccurrenceSpec, NdlDetector};
use super::TrainedDetector;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AFDM";
pub const FORMAT_VERSION: u32 = 1;
const KIND_NDL: u8 = 4;

fn kind_of(id: ArchId) -> u8 {
    match id {
        ArchId::A1 => 1,
        ArchId::A2 => 2,
        ArchId::A3 => 3,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let bytes = self.buf.get(self.pos..self.pos + N)?;
        self.pos += N;
        bytes.try_into().ok()
    }
    fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }
    fn tensor(&mut self) -> Option<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim == 0 || ndim > 8 {
            return None;
        }
        let shape: Vec<usize> = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Option<_>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))?;
        if len > (self.buf.len() - self.pos) / 4 {
            return None;
        }
        let data = (0..len).map(|_| self.take().map(f32::from_le_bytes)).collect::<Option<_>>()?;
        Tensor::new(shape, data).ok()
    }
}

fn encode(kind: u8, resolution: usize, meta: &ModelMeta, tensors: &[Tensor]) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.0.push(kind);
    w.u32(resolution as u32);
    w.0.extend_from_slice(&meta.seed.to_le_bytes());
    w.u32(meta.epochs);
    w.0.extend_from_slice(&meta.tpr.to_le_bytes());
    w.0.extend_from_slice(&meta.tnr.to_le_bytes());
    w.u32(tensors.len() as u32);
    for t in tensors {
        w.tensor(t);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn encode_detector(det: &TrainedDetector) -> Vec<u8> {
    match det {
        TrainedDetector::Cnn(m) => encode(kind_of(m.id()), m.resolution(), &m.meta, m.params()),
        TrainedDetector::Ndl(n) => {
            let vec = |v: &[f32]| Tensor::new(vec![v.len()], v.to_vec()).expect("vector");
            let tensors = [
                vec(&[n.spec.levels as f32, n.spec.step]),
                vec(&n.mean),
                vec(&n.std),
                vec(&n.weights),
                Tensor::scalar(n.bias),
            ];
            encode(KIND_NDL, n.resolution, &ModelMeta::default(), &tensors)
        }
    }
}

pub fn decode_detector(buf: &[u8], path: &Path) -> Result<TrainedDetector> {
    let bad = |reason: &str| Error::format(path, reason.to_string());
    if buf.len() < 4 + 4 + 4 || &buf[..4] != MAGIC {
        return Err(bad("not a model file (bad magic)"));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch (file corrupted)"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let header = (|| {
        let [kind] = r.take::<1>()?;
        let resolution = r.u32()? as usize;
        let seed = u64::from_le_bytes(r.take()?);
        let epochs = r.u32()?;
        let tpr = f64::from_le_bytes(r.take()?);
        let tnr = f64::from_le_bytes(r.take()?);
        let count = r.u32()? as usize;
        let tensors: Vec<Tensor> = (0..count).map(|_| r.tensor()).collect::<Option<_>>()?;
        Some((kind, resolution, ModelMeta { seed, epochs, tpr, tnr }, tensors))
    })();
    let (kind, resolution, meta, tensors) = header.ok_or_else(|| bad("truncated or malformed body"))?;
    if r.pos != body.len() {
        return Err(bad("trailing bytes after tensors"));
    }
    let arch_id = match kind {
        1 => ArchId::A1,
        2 => ArchId::A2,
        3 => ArchId::A3,
        KIND_NDL => {
            let [spec, mean, std, weights, bias]: [Tensor; 5] =
                tensors.try_into().map_err(|_| bad("NDL model needs 5 tensors"))?;
            let spec = CooccurrenceSpec {
                levels: spec.data()[0] as usize,
                step: *spec.data().get(1).ok_or_else(|| bad("bad NDL spec"))?,
            };
            let d = spec.feature_len();
            if mean.len() != d || std.len() != d || weights.len() != d {
                return Err(bad("NDL feature length mismatch"));
            }
            return Ok(TrainedDetector::Ndl(NdlDetector {
                spec,
                resolution,
                mean: mean.into_data(),
                std: std.into_data(),
                weights: weights.into_data(),
                bias: bias.item()?,
            }));
        }
        k => return Err(bad(&format!("unknown model kind {k}"))),
    };
    let arch = DetectorArch::new(arch_id, resolution)?;
    Ok(TrainedDetector::Cnn(DetectorModel::from_parts(arch, tensors, meta)?))
}

pub fn save_model(det: &TrainedDetector, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_detector(det)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedDetector> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_detector(&buf, path)
}
