use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::tensor::{Graph, Tensor, Var};

const MAGIC: &[u8; 4] = b"PNKW";
const VERSION: u32 = 1;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Conv weight with uniform `±1/sqrt(fan_in)` init.
    pub(crate) fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every tensor on `graph`, as trainable leaves or constants.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { graph.param(t.clone()) } else { graph.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    /// Serializes to the little-endian `PNKW` weight format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.num_values() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Parse("weight file: bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Parse(format!("weight file: unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Parse("weight file: tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            store.add(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse("weight file: trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copies values from `other`, requiring identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::InvalidConfiguration(
                "weight file tensors do not match the configured network".into(),
            ));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::InvalidConfiguration(format!(
                    "weight shape {:?} does not match configured {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse("weight file: truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// A [`ParamStore`] placed on a graph; indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Binds existing graph nodes, one per stored tensor in store order.
    /// Used to differentiate with respect to parameters supplied from outside.
    pub fn from_vars(store: &ParamStore, vars: Vec<Var>) -> Result<Self> {
        ensure(vars.len() == store.len(), || format!("{} vars for {} parameters", vars.len(), store.len()))?;
        Ok(Bound { vars })
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian_with_header() {
        let mut s = ParamStore::new();
        s.add("ab", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"PNKW");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..18], b"ab");
        assert_eq!(&b[18..22], &1u32.to_le_bytes());
        assert_eq!(&b[22..26], &2u32.to_le_bytes());
        assert_eq!(&b[26..30], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 34);
    }

    #[test]
    fn rejects_corrupt_files() {
        assert!(ParamStore::from_bytes(b"NOPE\x01\0\0\0\0\0\0\0").is_err());
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[3]));
        let b = s.to_bytes();
        assert!(ParamStore::from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(ParamStore::from_bytes(&extra).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(vals in proptest::collection::vec(-1e6f32..1e6, 0..40), name in "[a-z.0-9]{1,12}") {
            let mut s = ParamStore::new();
            s.add(name.clone(), Tensor::new(vec![vals.len()], vals.clone()).unwrap());
            s.add("scalar", Tensor::scalar(3.5));
            let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
