//! `flatnas-ckpt-v1` container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "flatnas-ckpt-v1\n"
//! u32 header_len, header_len bytes of UTF-8 "key=value\n" lines
//! u32 section_count
//! per section:  u32 name_len, name, u32 entry_count
//! per entry:    u32 name_len, name, u8 group, u32 ndim, ndim x u64 dims,
//!               prod(dims) x f64 values
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{Group, ParamEntry, ParamSet};
use crate::searchspace::SearchSpaceSpec;
use crate::supernet::SuperNet;

pub const FORMAT_VERSION: &str = "flatnas-ckpt-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub sections: Vec<(String, ParamSet)>,
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Checkpoint(format!("string length {n} is implausible")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn section(&self, name: &str) -> Option<&ParamSet> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        w.write_all(FORMAT_VERSION.as_bytes())?;
        w.write_all(b"\n")?;
        let mut header = String::new();
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("header entry {k:?} is not representable")));
            }
            header.push_str(&format!("{k}={v}\n"));
        }
        put_str(&mut w, &header)?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, params) in &self.sections {
            put_str(&mut w, name)?;
            w.write_all(&(params.len() as u32).to_le_bytes())?;
            for e in params.entries() {
                put_str(&mut w, &e.name)?;
                w.write_all(&[e.group.tag()])?;
                w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
                for &d in &e.shape {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                for v in &e.values {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = std::io::BufReader::new(input);
        let mut magic = vec![0u8; FORMAT_VERSION.len() + 1];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short for a checkpoint".into()))?;
        if &magic[..FORMAT_VERSION.len()] != FORMAT_VERSION.as_bytes() || magic[FORMAT_VERSION.len()] != b'\n' {
            return Err(Error::Checkpoint(format!("not a {FORMAT_VERSION} file")));
        }
        let header = get_str(&mut r)?
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Checkpoint(format!("bad header line {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_sections = get_u32(&mut r)?;
        let mut sections = Vec::new();
        for _ in 0..n_sections {
            let name = get_str(&mut r)?;
            let n_entries = get_u32(&mut r)?;
            let mut entries = Vec::new();
            for _ in 0..n_entries {
                let ename = get_str(&mut r)?;
                let mut tag = [0u8; 1];
                r.read_exact(&mut tag)?;
                let group = Group::from_tag(tag[0])
                    .ok_or_else(|| Error::Checkpoint(format!("{ename}: unknown group tag {}", tag[0])))?;
                let ndim = get_u32(&mut r)? as usize;
                let shape = (0..ndim).map(|_| get_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let count = shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .filter(|&c| c <= 1 << 28)
                    .ok_or_else(|| Error::Checkpoint(format!("{ename}: implausible shape {shape:?}")))?;
                let values = (0..count)
                    .map(|_| get_u64(&mut r).map(f64::from_bits))
                    .collect::<Result<Vec<_>>>()?;
                entries.push(ParamEntry::new(ename, shape, values, group));
            }
            sections.push((name, ParamSet::new(entries)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { header, sections })
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Checkpoint(format!("header lacks {key:?}")))
    }

    fn require_num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.require(key)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("header {key:?} is not a number")))
    }
}

fn space_header(preset: &str, space: &SearchSpaceSpec) -> Vec<(String, String)> {
    vec![
        ("preset".into(), preset.into()),
        ("channels".into(), space.channels().to_string()),
        ("cells".into(), space.cells_per_network().to_string()),
    ]
}

/// Supernet with both snapshots plus the preset and seed it was built from.
pub fn supernet_checkpoint(net: &SuperNet, preset: &str, seed: u64, extra: &[(&str, String)]) -> Checkpoint {
    let mut header = space_header(preset, net.space());
    header.push(("seed".into(), seed.to_string()));
    header.push(("epoch".into(), net.epoch().to_string()));
    header.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    Checkpoint {
        header,
        sections: vec![
            ("current".into(), net.shared_params().clone()),
            ("initial".into(), net.initial_snapshot().clone()),
        ],
    }
}

/// Rebuilds the supernet; returns it with the preset name and seed.
pub fn load_supernet(ckpt: &Checkpoint) -> Result<(SuperNet, String, u64)> {
    let preset = ckpt.require("preset")?.to_string();
    let space = SearchSpaceSpec::preset(&preset)?
        .with_channels(ckpt.require_num("channels")?)?
        .with_cells(ckpt.require_num("cells")?)?;
    let seed: u64 = ckpt.require_num("seed")?;
    let epoch: usize = ckpt.require_num("epoch")?;
    let current = ckpt.section("current").ok_or_else(|| Error::Checkpoint("missing section \"current\"".into()))?;
    let initial = ckpt.section("initial").ok_or_else(|| Error::Checkpoint("missing section \"initial\"".into()))?;
    let net = SuperNet::from_parts(space, current.clone(), initial.clone(), epoch)?;
    Ok((net, preset, seed))
}

/// A single parameter set.
pub fn params_checkpoint(params: &ParamSet, preset: &str, space: &SearchSpaceSpec, seed: u64, epoch: usize) -> Checkpoint {
    let mut header = space_header(preset, space);
    header.push(("seed".into(), seed.to_string()));
    header.push(("epoch".into(), epoch.to_string()));
    Checkpoint { header, sections: vec![("params".into(), params.clone())] }
}
