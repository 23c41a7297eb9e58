//! The `AAIM` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AAIM"                magic
//! u32                   format version
//! u64                   total file length in bytes
//! u32                   entry count
//! per entry:
//!   u32 + utf8          name ("section/key")
//!   u8                  dtype (0 = f32, 1 = u16, 2 = u8, 3 = u32)
//!   u32 + u64 * ndim    shape
//!   payload             product(shape) elements
//! ```

use std::path::Path;

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"AAIM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U16(v) => v.len(),
            Payload::U8(v) => v.len(),
            Payload::U32(v) => v.len(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::U16(_) => 1,
            Payload::U8(_) => 2,
            Payload::U32(_) => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<Entry>,
}

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Container(msg.into()))
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], payload: Payload) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != payload.len() {
            return err(format!("entry `{name}`: shape {shape:?} vs {} elements", payload.len()));
        }
        if self.get(&name).is_some() {
            return err(format!("duplicate entry `{name}`"));
        }
        self.entries.push(Entry {
            name,
            shape: shape.to_vec(),
            payload,
        });
        Ok(())
    }

    pub fn push_f32(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<()> {
        self.push(name, shape, Payload::F32(data))
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: &str) -> Result<()> {
        let b = text.as_bytes().to_vec();
        self.push(name, &[b.len()], Payload::U8(b))
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&Entry> {
        match self.get(name) {
            Some(e) => Ok(e),
            None => err(format!("missing entry `{name}`")),
        }
    }

    pub fn f32(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.require(name)? {
            Entry {
                shape,
                payload: Payload::F32(d),
                ..
            } => Ok((shape, d)),
            _ => err(format!("entry `{name}` is not f32")),
        }
    }

    pub fn u16(&self, name: &str) -> Result<(&[usize], &[u16])> {
        match self.require(name)? {
            Entry {
                shape,
                payload: Payload::U16(d),
                ..
            } => Ok((shape, d)),
            _ => err(format!("entry `{name}` is not u16")),
        }
    }

    pub fn u32(&self, name: &str) -> Result<(&[usize], &[u32])> {
        match self.require(name)? {
            Entry {
                shape,
                payload: Payload::U32(d),
                ..
            } => Ok((shape, d)),
            _ => err(format!("entry `{name}` is not u32")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.require(name)? {
            Entry {
                payload: Payload::U8(d),
                ..
            } => std::str::from_utf8(d).map_err(|e| TensorError::Container(e.to_string())),
            _ => err(format!("entry `{name}` is not text")),
        }
    }

    /// True when at least one entry lives under `section/`.
    pub fn has_section(&self, section: &str) -> bool {
        let prefix = format!("{section}/");
        self.entries.iter().any(|e| e.name.starts_with(&prefix))
    }

    /// Writes every parameter of `store` under `section/<name>` as f32.
    pub fn put_params<T: Scalar>(&mut self, section: &str, store: &ParamStore<T>, prefix: &str) -> Result<()> {
        for (_, p) in store.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
            let data = p.value.data().iter().map(|v| v.as_f64() as f32).collect();
            self.push_f32(format!("{section}/{}", p.name), p.value.shape(), data)?;
        }
        Ok(())
    }

    /// Loads parameters named with `prefix` from `section/`. Every such
    /// parameter must be present with a matching shape.
    pub fn get_params<T: Scalar>(&self, section: &str, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        if !self.has_section(section) {
            return err(format!("missing section `{section}`"));
        }
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let name = format!("{section}/{}", store.get(id).name);
            let (shape, data) = self.f32(&name)?;
            let p = store.get_mut(id);
            if shape != p.value.shape() {
                return err(format!(
                    "entry `{name}` shape {shape:?}, expected {:?}",
                    p.value.shape()
                ));
            }
            p.value = Tensor::new(shape, data.iter().map(|&v| T::c(v as f64)).collect())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.payload.tag());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::U8(v) => out.extend_from_slice(v),
                Payload::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let total = out.len() as u64;
        out[8..16].copy_from_slice(&total.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return err("bad magic");
        }
        let version = r.u32()?;
        if version != VERSION {
            return err(format!("unsupported version {version}"));
        }
        let total = r.u64()?;
        if total != bytes.len() as u64 {
            return err(format!("length field {total} but {} bytes present", bytes.len()));
        }
        let count = r.u32()? as usize;
        let mut c = Container::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|e| TensorError::Container(e.to_string()))?;
            let tag = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let payload = match tag {
                0 => Payload::F32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                1 => Payload::U16(
                    r.take(n * 2)?
                        .chunks_exact(2)
                        .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                2 => Payload::U8(r.take(n)?.to_vec()),
                3 => Payload::U32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                t => return err(format!("unknown dtype tag {t}")),
            };
            c.push(name, &shape, payload)?;
        }
        if r.pos != bytes.len() {
            return err("trailing bytes after last entry");
        }
        Ok(c)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return err("truncated container");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
