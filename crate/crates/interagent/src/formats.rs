//! Little-endian binary files: the `IADS` dataset/trajectory container, the
//! `IDTC` model checkpoint and its `IDTS` optimizer-state sidecar.
//!
//! Frame payloads are stored as 32-bit floats and widened exactly on load;
//! checkpoints keep full 64-bit precision so training resumes bitwise.

use std::io::{self, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use interagent_core::numerics::Tensor;
use interagent_core::optim::{AdamW, ParamStore};
use interagent_core::representation::{proprio_dim, ExteroKind, FrameLayout, NormStats};
use interagent_core::simworld::{AgentState, BodySpec, DEFAULT_DT};
use interagent_core::trajectory::{Trajectory, WorldFrame};

pub const DATASET_MAGIC: [u8; 4] = *b"IADS";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"IDTC";
pub const STATE_MAGIC: [u8; 4] = *b"IDTS";
pub const FORMAT_VERSION: u32 = 1;
const FLAG_WORLD: u32 = 1;

/// Upper bound on any declared length, to reject corrupt headers before
/// allocating.
const MAX_LEN: u32 = 1 << 28;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.0.write_all(b)
    }
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn len(&mut self, v: usize) -> io::Result<()> {
        self.u32(u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length overflow"))?)
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        self.len(s.len())?;
        self.bytes(s.as_bytes())
    }
    fn f32s(&mut self, v: &[f64]) -> io::Result<()> {
        for x in v {
            self.bytes(&(*x as f32).to_le_bytes())?;
        }
        Ok(())
    }
    fn f64s(&mut self, v: &[f64]) -> io::Result<()> {
        for x in v {
            self.bytes(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).context("format error: truncated file")?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u32()?;
        ensure!(v <= MAX_LEN, "format error: declared length {v} is implausible");
        Ok(v as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b).context("format error: truncated string")?;
        String::from_utf8(b).context("format error: string is not UTF-8")
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f32::from_le_bytes(self.array()?) as f64)).collect()
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.array()?))).collect()
    }
    fn magic(&mut self, want: [u8; 4]) -> Result<()> {
        let got = self.array::<4>()?;
        if got != want {
            bail!(
                "format error: bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(&want)
            );
        }
        let v = self.u32()?;
        ensure!(v == FORMAT_VERSION, "format error: unsupported version {v}");
        Ok(())
    }
    fn end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        ensure!(self.0.read(&mut b)? == 0, "format error: trailing bytes after payload");
        Ok(())
    }
}

/// A set of two-agent episodes plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFile {
    pub joints: usize,
    pub dof: usize,
    pub extero: ExteroKind,
    pub frame_rate: f32,
    pub meta: Vec<(String, String)>,
    pub episodes: Vec<Trajectory>,
}

impl TrajectoryFile {
    pub fn new(body: &BodySpec, extero: ExteroKind) -> Self {
        Self {
            joints: body.joint_count(),
            dof: body.dof_count(),
            extero,
            frame_rate: (1.0 / DEFAULT_DT) as f32,
            meta: Vec::new(),
            episodes: Vec::new(),
        }
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout::new(self.joints, self.extero, self.dof)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn frames(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    /// World blocks are written only when every episode carries one.
    fn has_world(&self) -> bool {
        !self.episodes.is_empty()
            && self
                .episodes
                .iter()
                .all(|e| e.agents.iter().all(|a| a.world.len() == a.len()))
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let layout = self.layout();
        for e in &self.episodes {
            e.check_layout(&layout).map_err(|err| anyhow::anyhow!("{err}"))?;
        }
        let world = self.has_world();
        let mut w = Writer(w);
        w.bytes(&DATASET_MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.len(self.joints)?;
        w.len(self.dof)?;
        w.u8(self.extero.code())?;
        w.bytes(&self.frame_rate.to_le_bytes())?;
        w.len(self.episodes.len())?;
        w.u32(if world { FLAG_WORLD } else { 0 })?;
        w.len(self.meta.len())?;
        for (k, v) in &self.meta {
            w.str(k)?;
            w.str(v)?;
        }
        for e in &self.episodes {
            w.str(&e.command)?;
            w.u8(u8::from(e.success))?;
            w.len(e.len())?;
            for a in &e.agents {
                for n in 0..a.len() {
                    w.f32s(&a.proprio[n])?;
                    w.f32s(&a.extero[n])?;
                    w.f32s(&a.action[n])?;
                }
            }
            if world {
                for a in &e.agents {
                    for f in &a.world {
                        w.f32s(&f.raw)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Decodes a file; world blocks are expanded with `body`'s kinematics.
    pub fn read_from<R: Read>(r: R, body: &BodySpec) -> Result<Self> {
        let mut r = Reader(r);
        r.magic(DATASET_MAGIC)?;
        let joints = r.len()?;
        let dof = r.len()?;
        let code = r.u8()?;
        let extero = ExteroKind::from_code(code).with_context(|| format!("format error: unknown extero code {code}"))?;
        let frame_rate = f32::from_le_bytes(r.array()?);
        let count = r.len()?;
        let flags = r.u32()?;
        ensure!(flags & !FLAG_WORLD == 0, "format error: unknown flags {flags:#x}");
        ensure!(
            joints == body.joint_count() && dof == body.dof_count(),
            "format error: file declares J={joints}, dof={dof}; body has J={}, dof={}",
            body.joint_count(),
            body.dof_count()
        );
        ensure!(joints >= 2, "format error: J={joints} is too small");
        let n_meta = r.len()?;
        let mut meta = Vec::with_capacity(n_meta.min(64));
        for _ in 0..n_meta {
            meta.push((r.str()?, r.str()?));
        }
        let p = proprio_dim(joints);
        let e_dim = extero.dim(joints);
        let axes = body.axis_count();
        let mut episodes = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let mut t = Trajectory::new(r.str()?);
            t.success = match r.u8()? {
                0 => false,
                1 => true,
                v => bail!("format error: success flag {v}"),
            };
            let frames = r.len()?;
            for a in 0..2 {
                let track = &mut t.agents[a];
                for _ in 0..frames {
                    track.proprio.push(r.f32s(p)?);
                    track.extero.push(r.f32s(e_dim)?);
                    track.action.push(r.f32s(dof)?);
                }
            }
            if flags & FLAG_WORLD != 0 {
                for a in 0..2 {
                    for _ in 0..frames {
                        let raw = r.f32s(AgentState::flat_len(axes))?;
                        let state = AgentState::from_flat(&raw, axes).map_err(|e| anyhow::anyhow!("format error: {e}"))?;
                        let mut frame = WorldFrame::capture(&state, body);
                        frame.raw = raw;
                        t.agents[a].world.push(frame);
                    }
                }
            }
            episodes.push(t);
        }
        r.end()?;
        Ok(Self {
            joints,
            dof,
            extero,
            frame_rate,
            meta,
            episodes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path, body: &BodySpec) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::read_from(bytes.as_slice(), body).with_context(|| format!("decoding {}", path.display()))
    }
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a half-written file in place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}

/// Model parameters, normalization and the config that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: String,
    pub config_text: String,
    pub step: u64,
    pub stats: NormStats,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(digest: String, config_text: String, step: u64, stats: NormStats, store: &ParamStore) -> Self {
        Self {
            digest,
            config_text,
            step,
            stats,
            params: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer(w);
        w.bytes(&CHECKPOINT_MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.str(&self.digest)?;
        w.str(&self.config_text)?;
        w.u64(self.step)?;
        w.len(self.stats.dim())?;
        w.f64s(&self.stats.mean)?;
        w.f64s(&self.stats.std)?;
        w.len(self.params.len())?;
        for (name, t) in &self.params {
            w.str(name)?;
            w.len(t.shape().len())?;
            for d in t.shape() {
                w.len(*d)?;
            }
            w.f64s(t.data())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader(r);
        r.magic(CHECKPOINT_MAGIC)?;
        let digest = r.str()?;
        let config_text = r.str()?;
        let step = r.u64()?;
        let dim = r.len()?;
        let stats = NormStats {
            mean: r.f64s(dim)?,
            std: r.f64s(dim)?,
        };
        let n = r.len()?;
        let mut params = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = r.str()?;
            let rank = r.len()?;
            ensure!(rank <= 4, "format error: tensor rank {rank}");
            let shape: Vec<usize> = (0..rank).map(|_| r.len()).collect::<Result<_>>()?;
            let count: usize = shape.iter().product();
            ensure!(count <= MAX_LEN as usize, "format error: tensor too large");
            let t = Tensor::new(&shape, r.f64s(count)?).map_err(|e| anyhow::anyhow!("format error: {e}"))?;
            params.push((name, t));
        }
        r.end()?;
        Ok(Self {
            digest,
            config_text,
            step,
            stats,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::read_from(bytes.as_slice()).with_context(|| format!("decoding {}", path.display()))
    }

    /// Copies parameters into `store`, checking names and shapes.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        store
            .load(self.params.iter().map(|(n, t)| (n.as_str(), t.clone())))
            .map_err(|e| anyhow::anyhow!("checkpoint does not fit the model: {e}"))
    }
}

/// Sidecar path holding optimizer moments next to a checkpoint.
pub fn state_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".state");
    s.into()
}

pub fn write_optimizer<W: Write>(w: W, digest: &str, opt: &AdamW) -> Result<()> {
    let mut w = Writer(w);
    w.bytes(&STATE_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.str(digest)?;
    w.u64(opt.step)?;
    w.len(opt.m.len())?;
    for t in opt.m.iter().chain(&opt.v) {
        w.len(t.len())?;
        w.f64s(t.data())?;
    }
    Ok(())
}

/// Reads moments into `opt`, whose tensors already have the right shapes.
pub fn read_optimizer<R: Read>(r: R, digest: &str, opt: &mut AdamW) -> Result<()> {
    let mut r = Reader(r);
    r.magic(STATE_MAGIC)?;
    let d = r.str()?;
    ensure!(d == digest, "optimizer state belongs to config {d}, runtime is {digest}");
    opt.step = r.u64()?;
    let n = r.len()?;
    ensure!(n == opt.m.len(), "format error: {n} moment tensors, model has {}", opt.m.len());
    for t in opt.m.iter_mut().chain(opt.v.iter_mut()) {
        let len = r.len()?;
        ensure!(len == t.len(), "format error: moment of length {len}, expected {}", t.len());
        let data = r.f64s(len)?;
        *t = Tensor::new(t.shape(), data).map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    r.end()
}
