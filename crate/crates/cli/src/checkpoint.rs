//! Versioned little-endian checkpoint files.
//!
//! ```text
//! magic    8 bytes  "CLADCKPT"
//! version  u32
//! header   u32 length + UTF-8 `key = value` lines (architecture, epoch, step, adam_step)
//! count    u32
//! tensor*  u32 name length, name, u32 rank, u64 extents, f32 values
//! crc32    u32 over everything above
//! ```
//!
//! Model tensors use their parameter-group names; Adam moments are stored as
//! `adam.m.<name>` and `adam.v.<name>`.

use std::path::Path;

use convlstm_ad::optimizer::AdamState;
use convlstm_ad::pipeline::TrainState;
use convlstm_ad::{ArchitectureConfig, ModelParams, Tensor};

use crate::config::{read_architecture, write_architecture, KvFile};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"CLADCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ArchitectureConfig,
    pub state: TrainState,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.ndim() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let header = format!(
            "{}epoch = {}\nstep = {}\nadam_step = {}\n",
            write_architecture(&self.config),
            self.state.epoch,
            self.state.step,
            self.state.adam.step
        );
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(header.as_bytes());
        let groups = self.state.params.groups();
        put_u32(&mut out, (3 * groups.len()) as u32);
        for (name, _, t) in &groups {
            put_tensor(&mut out, name, t);
        }
        for (prefix, moments) in [("adam.m.", &self.state.adam.first), ("adam.v.", &self.state.adam.second)] {
            for ((name, _, _), t) in groups.iter().zip(moments) {
                put_tensor(&mut out, &format!("{prefix}{name}"), t);
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| CliError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < MAGIC.len() + 8 || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32().ok_or_else(|| fail("truncated".into()))?;
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let header_len = r.u32().ok_or_else(|| fail("truncated".into()))? as usize;
        let header = r.take(header_len).ok_or_else(|| fail("truncated header".into()))?;
        let header = std::str::from_utf8(header).map_err(|_| fail("header is not UTF-8".into()))?;
        let mut kv = KvFile::parse(path, header)?;
        let config = read_architecture(&mut kv)?;
        let epoch: usize = kv.get("epoch")?;
        let step: usize = kv.get("step")?;
        let adam_step: u64 = kv.get("adam_step")?;
        kv.finish()?;
        config.validate()?;

        let mut params = ModelParams::<f32>::zeros(&config)?;
        let mut adam = AdamState::for_params(&params);
        adam.step = adam_step;
        let count = r.u32().ok_or_else(|| fail("truncated".into()))? as usize;
        let n = params.groups().len();
        if count != 3 * n {
            return Err(fail(format!("{count} tensors stored, architecture needs {}", 3 * n)));
        }
        let names: Vec<String> = params.groups().into_iter().map(|(name, _, _)| name).collect();
        let mut slots: Vec<&mut Tensor<f32>> = params.groups_mut().into_iter().map(|(_, _, t)| t).collect();
        slots.extend(adam.first.iter_mut());
        slots.extend(adam.second.iter_mut());
        for (i, slot) in slots.into_iter().enumerate() {
            let want = match i / n {
                0 => names[i % n].clone(),
                1 => format!("adam.m.{}", names[i % n]),
                _ => format!("adam.v.{}", names[i % n]),
            };
            let (name, tensor) = r.tensor().ok_or_else(|| fail(format!("truncated tensor `{want}`")))?;
            if name != want {
                return Err(fail(format!("expected tensor `{want}`, found `{name}`")));
            }
            if tensor.shape() != slot.shape() {
                return Err(fail(format!(
                    "tensor `{name}` has shape {:?}, architecture needs {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        if r.pos != body.len() {
            return Err(fail(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            config,
            state: TrainState {
                params,
                adam,
                epoch,
                step,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write-then-rename so an interrupted save never clobbers a good file.
        let tmp = path.with_extension("ckpt.partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| convlstm_ad::Error::Io {
            path: tmp.clone(),
            source: e,
        })?;
        std::fs::rename(&tmp, path).map_err(|e| convlstm_ad::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| convlstm_ad::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Option<(String, Tensor<f32>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).ok()?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return None;
        }
        let shape: Vec<usize> = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Option<_>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))?;
        let raw = self.take(count.checked_mul(4)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Some((name, Tensor::new(&shape, data).ok()?))
    }
}
