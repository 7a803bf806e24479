//! Binary checkpoint format.
//!
//! ```text
//! "CYGN"                      magic
//! u32                         format version (1)
//! u32 + bytes                 UTF-8 header: config lines, epoch, optimizer steps
//! u32                         tensor record count
//! per record:
//!   u32 + bytes               tensor name
//!   4 x u32                   shape (N, C, H, W)
//!   N*C*H*W x f32             values
//! ```
//!
//! All integers and floats are little-endian. Tensor names are
//! `<network>/<param>` for weights and `<optimizer>.m/<key>`,
//! `<optimizer>.v/<key>` for Adam moments.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, ModelParams};
use crate::optim::{AdamState, Moments};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"CYGN";
pub const FORMAT_VERSION: u32 = 1;

pub const NETWORKS: [&str; 4] = ["G", "F", "D_X", "D_Y"];
pub const OPTIMIZERS: [&str; 3] = ["opt_generators", "opt_d_x", "opt_d_y"];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: u64,
    pub g: ModelParams,
    pub f: ModelParams,
    pub d_x: ModelParams,
    pub d_y: ModelParams,
    pub opt_generators: AdamState,
    pub opt_d_x: AdamState,
    pub opt_d_y: AdamState,
}

impl Checkpoint {
    fn networks(&self) -> [&ModelParams; 4] {
        [&self.g, &self.f, &self.d_x, &self.d_y]
    }

    fn optimizers(&self) -> [&AdamState; 3] {
        [&self.opt_generators, &self.opt_d_x, &self.opt_d_y]
    }

    pub fn generator(&self) -> Generator {
        Generator {
            spec: self.config.generator_spec(),
            params: self.g.clone(),
        }
    }

    pub fn inverse_generator(&self) -> Generator {
        Generator {
            spec: self.config.generator_spec(),
            params: self.f.clone(),
        }
    }

    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.config == other.config
            && self.epoch == other.epoch
            && self.networks().iter().zip(other.networks()).all(|(a, b)| a.bit_eq(b))
            && self.optimizers().iter().zip(other.optimizers()).all(|(a, b)| a.bit_eq(b))
    }

    fn header(&self) -> String {
        let mut h = self.config.to_text();
        h.push_str(&format!("epoch = {}\n", self.epoch));
        for (name, opt) in OPTIMIZERS.iter().zip(self.optimizers()) {
            h.push_str(&format!("{name}.step = {}\n", opt.step));
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records: Vec<(String, &Tensor)> = Vec::new();
        for (net, params) in NETWORKS.iter().zip(self.networks()) {
            records.extend(params.iter().map(|(k, t)| (format!("{net}/{k}"), t)));
        }
        for (opt, state) in OPTIMIZERS.iter().zip(self.optimizers()) {
            for (key, m) in &state.moments {
                records.push((format!("{opt}.m/{key}"), &m.m));
                records.push((format!("{opt}.v/{key}"), &m.v));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = self.header();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let header_len = r.u32("header length")? as usize;
        let header = std::str::from_utf8(r.take(header_len, "header")?)
            .map_err(|_| Error::Checkpoint("header is not valid UTF-8".into()))?;
        let (config, epoch, steps) = parse_header(header)?;

        let count = r.u32("record count")? as usize;
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for i in 0..count {
            let what = format!("record {i}");
            let name_len = r.u32(&what)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &what)?)
                .map_err(|_| Error::Checkpoint(format!("{what}: name is not valid UTF-8")))?
                .to_string();
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = r.u32(&name)? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])
                .map_err(|_| Error::Checkpoint(format!("`{name}` has an empty shape {dims:?}")))?;
            let raw = r.take(shape.numel() * 4, &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.pos
            )));
        }

        let mut nets: Vec<ModelParams> = Vec::new();
        for net in NETWORKS {
            let prefix = format!("{net}/");
            let mut p = ModelParams::new();
            for (k, t) in tensors.iter().filter(|(k, _)| k.starts_with(&prefix)) {
                p.insert(&k[prefix.len()..], t.clone())?;
            }
            nets.push(p);
        }
        let mut opts: Vec<AdamState> = Vec::new();
        for (opt, step) in OPTIMIZERS.iter().zip(steps) {
            let (mp, vp) = (format!("{opt}.m/"), format!("{opt}.v/"));
            let mut state = AdamState {
                step,
                moments: BTreeMap::new(),
            };
            for (k, m) in tensors.iter().filter(|(k, _)| k.starts_with(&mp)) {
                let key = &k[mp.len()..];
                let v = tensors
                    .get(&format!("{vp}{key}"))
                    .ok_or_else(|| Error::Checkpoint(format!("`{k}` has no matching second moment")))?;
                state.moments.insert(
                    key.to_string(),
                    Moments {
                        m: m.clone(),
                        v: v.clone(),
                    },
                );
            }
            opts.push(state);
        }
        let known = |k: &str| {
            NETWORKS.iter().any(|n| k.starts_with(&format!("{n}/")))
                || OPTIMIZERS
                    .iter()
                    .any(|o| k.starts_with(&format!("{o}.m/")) || k.starts_with(&format!("{o}.v/")))
        };
        if let Some(stray) = tensors.keys().find(|k| !known(k)) {
            return Err(Error::Checkpoint(format!("unrecognized tensor `{stray}`")));
        }

        let mut opts = opts.into_iter();
        let mut nets = nets.into_iter();
        let ckpt = Checkpoint {
            config,
            epoch,
            g: nets.next().expect("four networks"),
            f: nets.next().expect("four networks"),
            d_x: nets.next().expect("four networks"),
            d_y: nets.next().expect("four networks"),
            opt_generators: opts.next().expect("three optimizers"),
            opt_d_x: opts.next().expect("three optimizers"),
            opt_d_y: opts.next().expect("three optimizers"),
        };
        ckpt.check_shapes()?;
        Ok(ckpt)
    }

    /// Verifies every network against the shape table implied by the config.
    fn check_shapes(&self) -> Result<()> {
        self.config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;
        let g = Generator::build(self.config.generator_spec(), 0)?;
        let d = Discriminator::build(self.config.discriminator_spec(), 0)?;
        let expected = [&g.params, &g.params, &d.params, &d.params];
        for ((net, have), want) in NETWORKS.iter().zip(self.networks()).zip(expected) {
            for (k, t) in want.iter() {
                let got = have
                    .get(k)
                    .map_err(|_| Error::Checkpoint(format!("{net} is missing `{k}`")))?;
                if got.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!(
                        "{net}/{k} has shape {}, expected {}",
                        got.shape(),
                        t.shape()
                    )));
                }
            }
            if have.len() != want.len() {
                let extra: Vec<&str> = have.names().filter(|k| want.get(k).is_err()).collect();
                return Err(Error::Checkpoint(format!("{net} has unexpected tensors {extra:?}")));
            }
        }
        let groups: [(&AdamState, &[(&str, &ModelParams)]); 3] = [
            (&self.opt_generators, &[("G", &self.g), ("F", &self.f)]),
            (&self.opt_d_x, &[("D_X", &self.d_x)]),
            (&self.opt_d_y, &[("D_Y", &self.d_y)]),
        ];
        for (state, nets) in groups {
            for (key, m) in &state.moments {
                let (net, param) = key
                    .split_once('/')
                    .ok_or_else(|| Error::Checkpoint(format!("malformed optimizer key `{key}`")))?;
                let owner = nets
                    .iter()
                    .find(|(n, _)| *n == net)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer key `{key}` names a foreign network")))?;
                let p = owner
                    .1
                    .get(param)
                    .map_err(|_| Error::Checkpoint(format!("optimizer key `{key}` has no parameter")))?;
                if m.m.shape() != p.shape() || m.v.shape() != p.shape() {
                    return Err(Error::Checkpoint(format!("optimizer moments for `{key}` have the wrong shape")));
                }
            }
        }
        Ok(())
    }

    /// Writes atomically: the bytes go to a sibling temp file that is renamed
    /// over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("cygn.tmp");
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(file);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn parse_header(text: &str) -> Result<(TrainConfig, u64, [u64; 3])> {
    let mut config = TrainConfig::default();
    let mut epoch = None;
    let mut steps = [None; 3];
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        let num = || {
            v.parse::<u64>()
                .map_err(|_| Error::Checkpoint(format!("header `{k}` is not an integer: `{v}`")))
        };
        if k == "epoch" {
            epoch = Some(num()?);
        } else if let Some(i) = OPTIMIZERS.iter().position(|o| k == format!("{o}.step")) {
            steps[i] = Some(num()?);
        } else {
            config
                .set(k, v)
                .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        }
    }
    let epoch = epoch.ok_or_else(|| Error::Checkpoint("header has no epoch".into()))?;
    let mut out = [0u64; 3];
    for (i, s) in steps.iter().enumerate() {
        out[i] = s.ok_or_else(|| Error::Checkpoint(format!("header has no {}.step", OPTIMIZERS[i])))?;
    }
    Ok((config, epoch, out))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {} ({} of {n} bytes available)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
