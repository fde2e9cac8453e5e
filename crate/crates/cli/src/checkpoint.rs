//! Checkpoint file format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "GLUA"
//! version u32      currently 1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), dtype u8 (0 = f32, 1 = f64),
//!   rank u32, dims (u64 each), payload (numel * size_bytes, LE)
//! ```
//!
//! Reading validates the header before allocating anything sized by the
//! file, and every truncation error names what was being read along with
//! the expected and available byte counts.

use std::fmt;
use std::io::{self, Read, Write};

use glua_core::dtype::{Dtype, Element};
use glua_core::model::Model;
use glua_core::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"GLUA";
pub const VERSION: u32 = 1;

/// Caps that keep a corrupt header from requesting absurd allocations.
const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;
const MAX_NUMEL: u64 = 1 << 30;

#[derive(Debug)]
pub enum CkptError {
    Io(io::Error),
    Format(String),
}

impl fmt::Display for CkptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CkptError::Io(e) => write!(f, "checkpoint i/o: {e}"),
            CkptError::Format(m) => write!(f, "checkpoint format: {m}"),
        }
    }
}

impl std::error::Error for CkptError {}

impl From<io::Error> for CkptError {
    fn from(e: io::Error) -> CkptError {
        CkptError::Io(e)
    }
}

/// One stored tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Raw little-endian payload, numel * dtype size bytes.
    pub bytes: Vec<u8>,
}

impl Entry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn decode<T: Element>(&self) -> Result<Tensor<T>, CkptError> {
        if self.dtype != T::DTYPE {
            return Err(CkptError::Format(format!(
                "tensor {} is {}, expected {}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        let data = self
            .bytes
            .chunks_exact(self.dtype.size_bytes())
            .map(T::read_le)
            .collect();
        Tensor::new(self.shape.clone(), data)
            .map_err(|e| CkptError::Format(format!("tensor {}: {e}", self.name)))
    }
}

pub fn entry_from_tensor<T: Element>(name: &str, tensor: &Tensor<T>) -> Entry {
    let mut bytes = Vec::with_capacity(tensor.numel() * T::DTYPE.size_bytes());
    for &v in tensor.data() {
        v.write_le(&mut bytes);
    }
    Entry {
        name: name.to_string(),
        dtype: T::DTYPE,
        shape: tensor.shape().to_vec(),
        bytes,
    }
}

pub fn write_entries<W: Write>(w: &mut W, entries: &[Entry]) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&[e.dtype.code()])?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&e.bytes)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn take(&mut self, n: usize, what: &str) -> Result<Vec<u8>, CkptError> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            let got = self.inner.read(&mut buf[filled..])?;
            if got == 0 {
                return Err(CkptError::Format(format!(
                    "truncated while reading {what}: expected {n} bytes at offset {}, got {filled}",
                    self.offset
                )));
            }
            filled += got;
        }
        self.offset += n;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CkptError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CkptError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_entries<R: Read>(r: &mut R) -> Result<Vec<Entry>, CkptError> {
    let mut r = Reader {
        inner: r,
        offset: 0,
    };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CkptError::Format(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CkptError::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32("tensor count")?;
    let mut entries = Vec::with_capacity(count.min(1024) as usize);
    for i in 0..count {
        let name_len = r.u32("name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(CkptError::Format(format!(
                "tensor {i}: name length {name_len} exceeds limit {MAX_NAME_LEN}"
            )));
        }
        let name = String::from_utf8(r.take(name_len as usize, "name")?)
            .map_err(|e| CkptError::Format(format!("tensor {i}: name is not UTF-8 ({e})")))?;
        let code = r.take(1, "dtype")?[0];
        let dtype = Dtype::from_code(code).ok_or_else(|| {
            CkptError::Format(format!("tensor {name}: unknown dtype code {code}"))
        })?;
        let rank = r.u32("rank")?;
        if rank > MAX_RANK {
            return Err(CkptError::Format(format!(
                "tensor {name}: rank {rank} exceeds limit {MAX_RANK}"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            numel = numel.saturating_mul(d.max(1));
            shape.push(d as usize);
        }
        if numel > MAX_NUMEL {
            return Err(CkptError::Format(format!(
                "tensor {name}: {numel} elements exceeds limit {MAX_NUMEL}"
            )));
        }
        let payload = shape.iter().product::<usize>() * dtype.size_bytes();
        let bytes = r.take(payload, &format!("payload of {name}"))?;
        entries.push(Entry {
            name,
            dtype,
            shape,
            bytes,
        });
    }
    Ok(entries)
}

/// Serializes every model parameter in walk order.
pub fn save_model<T: Element, W: Write>(w: &mut W, model: &Model<T>) -> io::Result<()> {
    let mut entries = Vec::new();
    model.visit_params(&mut |name, _, t| entries.push(entry_from_tensor(name, t)));
    write_entries(w, &entries)
}

/// Restores parameters by name. Every model parameter must be present
/// with a matching dtype and shape, and the file may not carry extras.
pub fn load_model<T: Element>(model: &mut Model<T>, entries: &[Entry]) -> Result<(), CkptError> {
    let mut status: Result<(), CkptError> = Ok(());
    let mut used = vec![false; entries.len()];
    model.visit_params_mut(&mut |name, _, tensor| {
        if status.is_err() {
            return;
        }
        let Some(pos) = entries.iter().position(|e| e.name == name) else {
            status = Err(CkptError::Format(format!("missing tensor {name}")));
            return;
        };
        used[pos] = true;
        let e = &entries[pos];
        if e.shape != tensor.shape() {
            status = Err(CkptError::Format(format!(
                "tensor {name}: stored shape {:?} does not match model shape {:?}",
                e.shape,
                tensor.shape()
            )));
            return;
        }
        match e.decode::<T>() {
            Ok(t) => *tensor = t,
            Err(err) => status = Err(err),
        }
    });
    status?;
    if let Some(pos) = used.iter().position(|u| !u) {
        return Err(CkptError::Format(format!(
            "unexpected tensor {} not present in the model",
            entries[pos].name
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use glua_core::attention::AttentionVariant;
    use glua_core::model::{ModelConfig, TaskKind};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            task: TaskKind::Lm { vocab: 5 },
            d_model: 6,
            n_heads: 2,
            n_layers: 1,
            ffn_hidden: 4,
            variant: AttentionVariant::Glu,
            final_layer_norm: true,
            max_seq_len: 4,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let model = Model::<f32>::init(&tiny_config(), 11).unwrap();
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        assert_eq!(&buf[..4], b"GLUA");

        let entries = read_entries(&mut buf.as_slice()).unwrap();
        let mut restored = Model::<f32>::init(&tiny_config(), 999).unwrap();
        load_model(&mut restored, &entries).unwrap();
        for (a, b) in model
            .param_tensors()
            .iter()
            .zip(restored.param_tensors().iter())
        {
            assert!(a.bitwise_eq(b));
        }
    }

    #[test]
    fn bad_magic_is_rejected_before_payload() {
        let err = read_entries(&mut &b"NOPE and then garbage"[..]).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncation_names_offsets() {
        let model = Model::<f32>::init(&tiny_config(), 11).unwrap();
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        buf.truncate(buf.len() - 7);
        let err = read_entries(&mut buf.as_slice()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated"), "{msg}");
        assert!(msg.contains("expected"), "{msg}");
    }

    #[test]
    fn dtype_mismatch_is_named() {
        let model = Model::<f32>::init(&tiny_config(), 11).unwrap();
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        let entries = read_entries(&mut buf.as_slice()).unwrap();
        let mut f64_model = Model::<f64>::init(&tiny_config(), 11).unwrap();
        let err = load_model(&mut f64_model, &entries).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("is f32, expected f64"), "{msg}");
    }

    #[test]
    fn missing_and_extra_tensors_are_named() {
        let model = Model::<f32>::init(&tiny_config(), 11).unwrap();
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        let mut entries = read_entries(&mut buf.as_slice()).unwrap();

        let stray = entry_from_tensor("stray", &Tensor::<f32>::zeros(vec![2]));
        entries.push(stray);
        let mut target = Model::<f32>::init(&tiny_config(), 0).unwrap();
        let err = load_model(&mut target, &entries).unwrap_err();
        assert!(err.to_string().contains("unexpected tensor stray"), "{err}");

        entries.pop();
        entries.remove(0);
        let err = load_model(&mut target, &entries).unwrap_err();
        assert!(err.to_string().contains("missing tensor"), "{err}");
    }
}
