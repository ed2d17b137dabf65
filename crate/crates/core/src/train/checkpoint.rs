use std::fs;
use std::path::Path;

use crate::nnet::{Model, ModelConfig, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GNET";
pub const CHECKPOINT_VERSION: u32 = 1;
const KERNEL_NAME: &str = "stem.prior.kernel";

/// A trained model plus run metadata.
///
/// Layout (little-endian): magic, u32 version, u32 config fingerprint,
/// u32 tensor count, then per tensor u16 name length, name, u8 frozen flag,
/// u8 rank, u32 dims, f32 data; trailing u32 epochs completed and u64 seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    model: Model<f32>,
    pub epochs_completed: u32,
    pub seed: u64,
}

struct RawTensor {
    name: String,
    frozen: bool,
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, epochs_completed: u32, seed: u64) -> Self {
        Self {
            model,
            epochs_completed,
            seed,
        }
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    fn tensors(&self) -> Vec<RawTensor> {
        let p = self.model.params();
        let mut out: Vec<RawTensor> = p
            .learnable
            .iter()
            .map(|t| RawTensor {
                name: t.name.clone(),
                frozen: false,
                dims: t.dims.clone(),
                data: t.value.clone(),
            })
            .collect();
        out.extend(p.buffers.iter().map(|b| RawTensor {
            name: b.name.clone(),
            frozen: true,
            dims: b.dims.clone(),
            data: b.value.clone(),
        }));
        let k = p.kernel.size();
        out.push(RawTensor {
            name: KERNEL_NAME.into(),
            frozen: true,
            dims: vec![k, k],
            data: p.kernel.weights().iter().map(|&w| w as f32).collect(),
        });
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.config().fingerprint().to_le_bytes());
        b.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in &tensors {
            b.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            b.extend_from_slice(t.name.as_bytes());
            b.push(t.frozen as u8);
            b.push(t.dims.len() as u8);
            for &d in &t.dims {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b.extend_from_slice(&self.epochs_completed.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b
    }

    /// Decodes a checkpoint written for `config`.
    pub fn from_bytes(bytes: &[u8], config: &ModelConfig) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let found = read_header(&mut r)?;
        let expected = config.fingerprint();
        if found != expected {
            return Err(Error::FingerprintMismatch { expected, found });
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let frozen = match r.u8()? {
                0 => false,
                1 => true,
                f => return Err(corrupt(&format!("bad frozen flag {f} on {name}"))),
            };
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor too large"))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(RawTensor {
                name,
                frozen,
                dims,
                data,
            });
        }
        let epochs_completed = r.u32()?;
        let seed = r.u64()?;
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after checkpoint"));
        }
        Ok(Self {
            model: assemble(config, tensors)?,
            epochs_completed,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, config)
    }
}

/// The config fingerprint recorded in a checkpoint, after checking magic
/// and version.
pub fn peek_fingerprint(bytes: &[u8]) -> Result<u32> {
    read_header(&mut Reader { bytes, pos: 0 })
}

fn read_header(r: &mut Reader<'_>) -> Result<u32> {
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    r.u32()
}

fn assemble(config: &ModelConfig, tensors: Vec<RawTensor>) -> Result<Model<f32>> {
    let template = Model::<f32>::new(config.clone(), &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
    let tp = template.params();
    let expected = tp.learnable.len() + tp.buffers.len() + 1;
    if tensors.len() != expected {
        return Err(corrupt(&format!("expected {expected} tensors, found {}", tensors.len())));
    }
    let mut it = tensors.into_iter();
    let mut take = |name: &str, frozen: bool, dims: &[usize]| -> Result<Vec<f32>> {
        let t = it.next().expect("count checked");
        if t.name != name || t.frozen != frozen || t.dims != dims {
            return Err(corrupt(&format!("unexpected tensor '{}' {:?} where '{name}' {dims:?} belongs", t.name, t.dims)));
        }
        Ok(t.data)
    };
    let mut params: ModelParams<f32> = tp.clone();
    for p in &mut params.learnable {
        p.value = take(&p.name, false, &p.dims)?;
        p.grad.fill(0.0);
    }
    for b in &mut params.buffers {
        b.value = take(&b.name, true, &b.dims)?;
    }
    let k = tp.kernel.size();
    let stored = take(KERNEL_NAME, true, &[k, k])?;
    let want: Vec<f32> = tp.kernel.weights().iter().map(|&w| w as f32).collect();
    if stored.iter().map(|v| v.to_bits()).ne(want.iter().map(|v| v.to_bits())) {
        return Err(corrupt("stored prior kernel differs from its size and sigma"));
    }
    Model::from_params(config.clone(), params)
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptCheckpoint(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::StemVariant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let model = Model::<f32>::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        Checkpoint::new(model, 15, 7)
    }

    #[test]
    fn save_load_save_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path, &ModelConfig::default()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), fs::read(&path).unwrap());
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"GNET");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(peek_fingerprint(&b).unwrap(), ModelConfig::default().fingerprint());
        let n = b.len();
        assert_eq!(u64::from_le_bytes(b[n - 8..].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(b[n - 12..n - 8].try_into().unwrap()), 15);
    }

    #[test]
    fn truncation_is_corrupt() {
        let b = sample().to_bytes();
        for cut in [0, 3, 10, b.len() / 2, b.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&b[..cut], &ModelConfig::default()),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad, &ModelConfig::default()),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn other_variant_is_fingerprint_mismatch() {
        let b = sample().to_bytes();
        let mut cfg = ModelConfig::default();
        cfg.stem.variant = StemVariant::Baseline;
        assert!(matches!(
            Checkpoint::from_bytes(&b, &cfg),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn stored_kernel_matches_parameters() {
        let ck = sample();
        let k = make_kernel();
        let want: Vec<f32> = k.weights().iter().map(|&w| w as f32).collect();
        let got: Vec<f32> = ck.model().params().kernel.weights().iter().map(|&w| w as f32).collect();
        assert_eq!(got, want);
    }

    fn make_kernel() -> crate::priors::GaussianKernel {
        crate::priors::make_gaussian_kernel(7, 1.5).unwrap()
    }
}
