//! Little-endian binary checkpoints made of named numeric sections.
//!
//! Layout (see `docs/checkpoint-format.md`):
//!
//! ```text
//! magic     8 bytes  "AVSPLAT\0"
//! version   u32
//! step      u64
//! sections  u32
//! repeated: name_len u16, name (UTF-8), kind u8 (0 = f64, 1 = u64), count u64, count × 8 bytes
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, SplatError};
use crate::gaussian::{GaussianPrimitive, GaussianSet, SourceTag};
use crate::math::{Quat, Vec3};
use crate::sh::MAX_COEFFS;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"AVSPLAT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum SectionData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl SectionData {
    fn kind(&self) -> u8 {
        match self {
            SectionData::F64(_) => 0,
            SectionData::U64(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            SectionData::F64(v) => v.len(),
            SectionData::U64(v) => v.len(),
        }
    }
}

/// Training step counter plus named sections in insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub step: u64,
    sections: Vec<(String, SectionData)>,
}

impl Checkpoint {
    pub fn new(step: u64) -> Self {
        Self {
            step,
            sections: Vec::new(),
        }
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    fn put(&mut self, name: &str, data: SectionData) {
        assert!(name.len() <= u16::MAX as usize, "section name too long");
        match self.sections.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = data,
            None => self.sections.push((name.to_string(), data)),
        }
    }

    pub fn put_f64(&mut self, name: &str, values: Vec<f64>) {
        self.put(name, SectionData::F64(values));
    }

    pub fn put_u64(&mut self, name: &str, values: Vec<u64>) {
        self.put(name, SectionData::U64(values));
    }

    fn get(&self, name: &str) -> Result<&SectionData> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| SplatError::MissingSection(name.to_string()))
    }

    pub fn f64(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            SectionData::F64(v) => Ok(v),
            SectionData::U64(_) => Err(SplatError::Format(format!("section `{name}` holds u64, expected f64"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            SectionData::U64(v) => Ok(v),
            SectionData::F64(_) => Err(SplatError::Format(format!("section `{name}` holds f64, expected u64"))),
        }
    }

    /// Single scalar u64 section.
    pub fn u64_scalar(&self, name: &str) -> Result<u64> {
        match self.u64(name)? {
            [v] => Ok(*v),
            other => Err(SplatError::Format(format!("section `{name}` has {} values, expected 1", other.len()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.sections.iter().map(|(n, d)| 11 + n.len() + 8 * d.len()).sum();
        let mut out = Vec::with_capacity(24 + payload);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, data) in &self.sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(data.kind());
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            match data {
                SectionData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                SectionData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(SplatError::Format(format!("bad magic bytes {magic:02x?}")));
        }
        let version = u32::from_le_bytes(r.array("version")?);
        if version != CHECKPOINT_VERSION {
            return Err(SplatError::Version {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let step = u64::from_le_bytes(r.array("step")?);
        let count = u32::from_le_bytes(r.array("section count")?);
        let mut ck = Checkpoint::new(step);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array("section name length")?) as usize;
            let name = std::str::from_utf8(r.take(name_len, "section name")?)
                .map_err(|_| SplatError::Format("section name is not UTF-8".into()))?
                .to_string();
            let kind = r.take(1, "section kind")?[0];
            let n = u64::from_le_bytes(r.array("section length")?);
            let n = usize::try_from(n).map_err(|_| SplatError::Truncated(format!("section `{name}` length {n}")))?;
            let nbytes = n
                .checked_mul(8)
                .filter(|&b| b <= r.remaining())
                .ok_or_else(|| SplatError::Truncated(format!("section `{name}` declares {n} values")))?;
            let raw = r.take(nbytes, &name)?;
            let words = raw.chunks_exact(8).map(|c| c.try_into().unwrap());
            let data = match kind {
                0 => SectionData::F64(words.map(f64::from_le_bytes).collect()),
                1 => SectionData::U64(words.map(u64::from_le_bytes).collect()),
                k => return Err(SplatError::Format(format!("section `{name}` has unknown kind {k}"))),
            };
            if ck.contains(&name) {
                return Err(SplatError::Format(format!("duplicate section `{name}`")));
            }
            ck.sections.push((name, data));
        }
        if r.remaining() != 0 {
            return Err(SplatError::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(ck)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Stores a Gaussian set under `prefix.*`.
    pub fn put_gaussian_set(&mut self, prefix: &str, set: &GaussianSet) {
        let n = set.len();
        let mut mean = Vec::with_capacity(3 * n);
        let mut log_scale = Vec::with_capacity(3 * n);
        let mut rotation = Vec::with_capacity(4 * n);
        let mut opacity = Vec::with_capacity(n);
        let mut color = Vec::with_capacity(MAX_COEFFS * n);
        for g in &set.primitives {
            mean.extend_from_slice(g.mean.as_slice());
            log_scale.extend_from_slice(g.log_scale.as_slice());
            rotation.extend_from_slice(&[g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
            opacity.push(g.opacity_logit);
            color.extend_from_slice(&g.color);
        }
        self.put_u64(&format!("{prefix}.sh_degree"), vec![set.sh_degree as u64]);
        self.put_f64(&format!("{prefix}.mean"), mean);
        self.put_f64(&format!("{prefix}.log_scale"), log_scale);
        self.put_f64(&format!("{prefix}.rotation"), rotation);
        self.put_f64(&format!("{prefix}.opacity_logit"), opacity);
        self.put_f64(&format!("{prefix}.color"), color);
        self.put_u64(
            &format!("{prefix}.tag"),
            set.tags.iter().map(|t| matches!(t, SourceTag::Face) as u64).collect(),
        );
    }

    pub fn gaussian_set(&self, prefix: &str) -> Result<GaussianSet> {
        let degree = self.u64_scalar(&format!("{prefix}.sh_degree"))? as usize;
        let mean = self.f64(&format!("{prefix}.mean"))?;
        let log_scale = self.f64(&format!("{prefix}.log_scale"))?;
        let rotation = self.f64(&format!("{prefix}.rotation"))?;
        let opacity = self.f64(&format!("{prefix}.opacity_logit"))?;
        let color = self.f64(&format!("{prefix}.color"))?;
        let tags = self.u64(&format!("{prefix}.tag"))?;
        let n = opacity.len();
        if mean.len() != 3 * n
            || log_scale.len() != 3 * n
            || rotation.len() != 4 * n
            || color.len() != MAX_COEFFS * n
            || tags.len() != n
        {
            return Err(SplatError::Format(format!("inconsistent array lengths in `{prefix}`")));
        }
        let mut set = GaussianSet::new(degree);
        for i in 0..n {
            let mut c = [0.0; MAX_COEFFS];
            c.copy_from_slice(&color[i * MAX_COEFFS..(i + 1) * MAX_COEFFS]);
            let tag = match tags[i] {
                0 => SourceTag::Body,
                1 => SourceTag::Face,
                t => return Err(SplatError::Format(format!("unknown source tag {t}"))),
            };
            set.push(
                GaussianPrimitive {
                    mean: Vec3::from_column_slice(&mean[3 * i..3 * i + 3]),
                    log_scale: Vec3::from_column_slice(&log_scale[3 * i..3 * i + 3]),
                    rotation: Quat::new(rotation[4 * i], rotation[4 * i + 1], rotation[4 * i + 2], rotation[4 * i + 3]),
                    opacity_logit: opacity[i],
                    color: c,
                },
                tag,
            );
        }
        Ok(set)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(SplatError::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }
}
