//! Checkpoint file layout:
//!
//! ```text
//! VMCMC-CHECKPOINT 1\n
//! iteration <t>\n
//! seed <s>\n
//! adam_steps <energy> <generator> <encoder>\n
//! config <n>\n
//! <n bytes of TOML run configuration>\n
//! arrays <k>\n
//! k records, each:
//!     u32 name length, name bytes (UTF-8, "<group>/<parameter>"),
//!     u32 rank, rank × u64 extents, u64 value count, value count × f64
//! 32-byte SHA-256 of every preceding byte
//! ```
//!
//! Integers and floats are little-endian. Groups are `energy`, `generator`,
//! `encoder` and `<model>.m` / `<model>.v` for the Adam moments.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{EnergyModel, GeneratorModel, InferenceModel};
use crate::nn::{ParamStore, Tensor};
use crate::training::{AdamState, Trainer, TrainerState};

pub const MAGIC: &str = "VMCMC-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub seed: u64,
    pub adam_steps: [u64; 3],
    pub config: String,
    /// Named parameter groups in file order.
    pub groups: Vec<(String, ParamStore)>,
}

const MODEL_GROUPS: [&str; 3] = ["energy", "generator", "encoder"];

impl Checkpoint {
    pub fn from_trainer<E, G, I>(t: &Trainer<E, G, I>, config: &str) -> Self
    where
        E: EnergyModel,
        G: GeneratorModel,
        I: InferenceModel,
    {
        let s = &t.state;
        let groups = vec![
            ("energy".to_string(), t.energy.params().clone()),
            ("generator".to_string(), t.generator.params().clone()),
            ("encoder".to_string(), t.encoder.params().clone()),
            ("energy.m".to_string(), s.opt_energy.m.clone()),
            ("energy.v".to_string(), s.opt_energy.v.clone()),
            ("generator.m".to_string(), s.opt_generator.m.clone()),
            ("generator.v".to_string(), s.opt_generator.v.clone()),
            ("encoder.m".to_string(), s.opt_encoder.m.clone()),
            ("encoder.v".to_string(), s.opt_encoder.v.clone()),
        ];
        Self {
            iteration: s.iteration,
            seed: t.config.seed,
            adam_steps: [s.opt_energy.step, s.opt_generator.step, s.opt_encoder.step],
            config: config.to_string(),
            groups,
        }
    }

    pub fn group(&self, name: &str) -> Result<&ParamStore> {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Checkpoint(format!("missing group `{name}`")))
    }

    fn copy_into(&self, name: &str, dst: &mut ParamStore) -> Result<()> {
        let src = self.group(name)?;
        dst.check_same_layout(src)
            .map_err(|e| Error::Checkpoint(format!("group `{name}`: {e}")))?;
        dst.unflatten(&src.flatten())
    }

    /// Loads parameters, optimizer moments and the iteration counter into a
    /// trainer whose models have the same layout.
    pub fn restore<E, G, I>(&self, t: &mut Trainer<E, G, I>) -> Result<()>
    where
        E: EnergyModel,
        G: GeneratorModel,
        I: InferenceModel,
    {
        if self.seed != t.config.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint seed {} differs from configured seed {}",
                self.seed, t.config.seed
            )));
        }
        self.copy_into("energy", t.energy.params_mut())?;
        self.copy_into("generator", t.generator.params_mut())?;
        self.copy_into("encoder", t.encoder.params_mut())?;
        let mut state = TrainerState {
            opt_energy: AdamState::new(t.energy.params()),
            opt_generator: AdamState::new(t.generator.params()),
            opt_encoder: AdamState::new(t.encoder.params()),
            iteration: self.iteration,
        };
        for (name, opt, step) in [
            ("energy", &mut state.opt_energy, self.adam_steps[0]),
            ("generator", &mut state.opt_generator, self.adam_steps[1]),
            ("encoder", &mut state.opt_encoder, self.adam_steps[2]),
        ] {
            self.copy_into(&format!("{name}.m"), &mut opt.m)?;
            self.copy_into(&format!("{name}.v"), &mut opt.v)?;
            opt.step = step;
        }
        t.state = state;
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let [a, b, c] = self.adam_steps;
        out.extend_from_slice(
            format!(
                "{MAGIC} {VERSION}\niteration {}\nseed {}\nadam_steps {a} {b} {c}\nconfig {}\n",
                self.iteration,
                self.seed,
                self.config.len()
            )
            .as_bytes(),
        );
        out.extend_from_slice(self.config.as_bytes());
        let count: usize = self.groups.iter().map(|(_, p)| p.len()).sum();
        out.extend_from_slice(format!("\narrays {count}\n").as_bytes());
        for (group, store) in &self.groups {
            for (name, t) in store.iter() {
                let full = format!("{group}/{name}");
                out.extend_from_slice(&(full.len() as u32).to_le_bytes());
                out.extend_from_slice(full.as_bytes());
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                out.extend_from_slice(&(t.len() as u64).to_le_bytes());
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(digest.as_slice());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 32 {
            return Err(fail("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(fail("checksum mismatch (file corrupted or truncated)"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        let magic = r.line()?;
        let version = magic
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| fail("not a checkpoint file"))?;
        if version != VERSION.to_string() {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {VERSION})"
            )));
        }
        let iteration = r.keyed("iteration")?.parse().map_err(|_| fail("bad iteration"))?;
        let seed = r.keyed("seed")?.parse().map_err(|_| fail("bad seed"))?;
        let steps: Vec<u64> = r
            .keyed("adam_steps")?
            .split(' ')
            .map(|s| s.parse().map_err(|_| fail("bad adam_steps")))
            .collect::<Result<_>>()?;
        if steps.len() != 3 {
            return Err(fail("bad adam_steps"));
        }
        let len: usize = r.keyed("config")?.parse().map_err(|_| fail("bad config length"))?;
        let config = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| fail("config is not UTF-8"))?;
        if r.take(1)? != b"\n" {
            return Err(fail("config length does not match"));
        }
        let count: usize = r.keyed("arrays")?.parse().map_err(|_| fail("bad array count"))?;
        let mut groups: Vec<(String, ParamStore)> = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let full = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| fail("bad array name"))?;
            let (group, name) = full.split_once('/').ok_or_else(|| fail("array name lacks a group"))?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let n = r.u64()? as usize;
            if shape.iter().product::<usize>() != n {
                return Err(fail("array length does not match its shape"));
            }
            let raw = r.take(n.checked_mul(8).ok_or_else(|| fail("array too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            match groups.last_mut() {
                Some((g, store)) if g == group => store.insert(name, t)?,
                _ => {
                    let mut store = ParamStore::new();
                    store.insert(name, t)?;
                    groups.push((group.to_string(), store));
                }
            }
        }
        if r.pos != body.len() {
            return Err(fail("trailing bytes after the last array"));
        }
        for g in MODEL_GROUPS {
            if !groups.iter().any(|(n, _)| n == g) {
                return Err(Error::Checkpoint(format!("missing group `{g}`")));
            }
        }
        Ok(Self { iteration, seed, adam_steps: [steps[0], steps[1], steps[2]], config, groups })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn line(&mut self) -> Result<String> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let s = String::from_utf8_lossy(&rest[..end]).into_owned();
        self.pos += end + 1;
        Ok(s)
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|s| s.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` header line")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
