use std::collections::HashMap;
use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor together with its gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether decoupled weight decay applies to this group.
    pub decay: bool,
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    groups: Vec<ParamGroup>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Biases and normalization affines are excluded
    /// from weight decay by name (`*.bias`, `*norm*`).
    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        let decay = !(name.ends_with("bias") || name.contains("norm"));
        self.add_with_decay(name, value, decay)
    }

    pub fn add_with_decay(&mut self, name: &str, value: Tensor, decay: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name:?}")));
        }
        let id = self.groups.len();
        self.by_name.insert(name.to_string(), id);
        let grad = Tensor::zeros(value.shape());
        self.groups.push(ParamGroup {
            name: name.to_string(),
            value,
            grad,
            decay,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamGroup {
        &self.groups[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamGroup {
        &mut self.groups[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamGroup> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamGroup> {
        self.groups.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup> {
        self.groups.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.groups.iter().map(|g| g.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.groups {
            g.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `scale · grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        if grads.per_param.len() != self.groups.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.per_param.len(),
                self.groups.len()
            )));
        }
        for (group, g) in self.groups.iter_mut().zip(&grads.per_param) {
            if g.shape() != group.grad.shape() {
                return Err(Error::Shape(format!("gradient for {}", group.name)));
            }
            for (slot, v) in group.grad.data_mut().iter_mut().zip(g.data()) {
                *slot += scale * v;
            }
        }
        Ok(())
    }

    /// Writes the values as a versioned record stream:
    /// magic, version, metadata blob, then `(name, shape, f64 values)` records.
    pub fn write_to(&self, mut out: impl Write, metadata: &str) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_bytes(&mut out, metadata.as_bytes())?;
        out.write_all(&(self.groups.len() as u32).to_le_bytes())?;
        for g in &self.groups {
            write_bytes(&mut out, g.name.as_bytes())?;
            out.write_all(&[u8::from(g.decay)])?;
            out.write_all(&(g.value.shape().len() as u32).to_le_bytes())?;
            for &d in g.value.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in g.value.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Inverse of [`ParamStore::write_to`]; returns the store and metadata.
    pub fn read_from(mut input: impl Read) -> Result<(ParamStore, String)> {
        let bad = |m: &str| Error::InvalidArgument(format!("checkpoint: {m}"));
        let io = |e: std::io::Error| Error::InvalidArgument(format!("checkpoint: {e}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut input).map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let metadata =
            String::from_utf8(read_bytes(&mut input).map_err(io)?).map_err(|_| bad("metadata is not UTF-8"))?;
        let count = read_u32(&mut input).map_err(io)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut input).map_err(io)?).map_err(|_| bad("name is not UTF-8"))?;
            let mut flag = [0u8; 1];
            input.read_exact(&mut flag).map_err(io)?;
            let ndim = read_u32(&mut input).map_err(io)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                input.read_exact(&mut b).map_err(io)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            input.read_exact(&mut raw).map_err(io)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.add_with_decay(&name, Tensor::new(shape, data)?, flag[0] != 0)?;
        }
        Ok((store, metadata))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HLRCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

fn write_bytes(out: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    out.write_all(&(bytes.len() as u32).to_le_bytes())?;
    out.write_all(bytes)
}

fn read_u32(input: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(input: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let len = read_u32(input)? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

/// Gradients of one backward pass, one tensor per parameter (zeros for
/// parameters the loss does not depend on).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub(crate) per_param: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            per_param: store.iter().map(|g| Tensor::zeros(g.value.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.per_param[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.per_param.iter()
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.per_param.iter_mut().zip(&other.per_param) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn decay_excludes_biases_and_norms() {
        let mut s = ParamStore::new();
        let w = s.add("proj.weight", Tensor::zeros(&[1])).unwrap();
        let b = s.add("proj.bias", Tensor::zeros(&[1])).unwrap();
        let g = s.add("input_norm.gain", Tensor::zeros(&[1])).unwrap();
        assert!(s.get(w).decay);
        assert!(!s.get(b).decay);
        assert!(!s.get(g).decay);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.add(
            "a",
            Tensor::matrix(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
        )
        .unwrap();
        s.add("b.bias", Tensor::vector(vec![std::f64::consts::PI])).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf, "{\"k\":1}").unwrap();
        let (back, meta) = ParamStore::read_from(buf.as_slice()).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        for (x, y) in s.iter().zip(back.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.decay, y.decay);
            let xb: Vec<u64> = x.value.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn rejects_truncated_checkpoint() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[4])).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf, "").unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ParamStore::read_from(buf.as_slice()).is_err());
        assert!(ParamStore::read_from(&b"NOTACKPT"[..]).is_err());
    }
}
