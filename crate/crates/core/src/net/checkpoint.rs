//! Binary parameter snapshots.
//!
//! Layout: the magic line, one `# spec ...` line describing the
//! architecture, one `name shape offset` line per tensor (offsets in
//! scalars), a blank line, then little-endian f32 payload. Optimiser
//! accumulators, when present, are extra entries named `rmsprop/<param>`.

use super::model::DuckNet;
use super::spec::NetSpec;
use crate::data::io::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4};
use std::path::Path;

pub const MAGIC: &str = "DUCKNET-CKPT 1";
pub const OPTIMIZER_PREFIX: &str = "rmsprop/";

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Shape4,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetSpec,
    pub entries: Vec<Entry>,
}

fn spec_line(spec: &NetSpec) -> String {
    format!(
        "# spec filters={} depth={} block={} input={}x{} channels={} separated={}",
        spec.filters,
        spec.depth,
        spec.block_kind.name(),
        spec.input_size.0,
        spec.input_size.1,
        spec.input_channels,
        spec.separated_n
    )
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

fn parse_spec(line: &str) -> Result<NetSpec> {
    let body = line
        .strip_prefix("# spec ")
        .ok_or_else(|| bad(format!("expected a '# spec' line, found {line:?}")))?;
    let mut spec = NetSpec::new(1, (1, 1));
    let num = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| bad(format!("bad number {v:?} in spec line")))
    };
    for kv in body.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| bad(format!("bad spec field {kv:?}")))?;
        match k {
            "filters" => spec.filters = num(v)?,
            "depth" => spec.depth = num(v)?,
            "block" => spec.block_kind = v.parse().map_err(|_| bad(format!("unknown block {v:?}")))?,
            "input" => {
                let (h, w) = v.split_once('x').ok_or_else(|| bad(format!("bad input size {v:?}")))?;
                spec.input_size = (num(h)?, num(w)?);
            }
            "channels" => spec.input_channels = num(v)?,
            "separated" => spec.separated_n = num(v)?,
            _ => return Err(bad(format!("unknown spec field {k:?}"))),
        }
    }
    spec.validate().map_err(|e| bad(e.to_string()))?;
    Ok(spec)
}

fn parse_shape(s: &str) -> Result<Shape4> {
    let d: Vec<usize> = s
        .split('x')
        .map(|p| p.parse().map_err(|_| bad(format!("bad shape {s:?}"))))
        .collect::<Result<_>>()?;
    match d[..] {
        [n, c, h, w] => Ok(Shape4::new(n, c, h, w)),
        _ => Err(bad(format!("shape {s:?} must have four extents"))),
    }
}

impl Checkpoint {
    /// Snapshot of every parameter and buffer of `net`.
    pub fn capture<S: Scalar>(net: &mut DuckNet<S>) -> Self {
        let mut entries = Vec::new();
        net.visit(&mut |name, _, t| {
            entries.push(Entry {
                name: name.to_string(),
                shape: t.shape(),
                data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
        });
        Checkpoint {
            spec: *net.spec(),
            entries,
        }
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| !e.name.starts_with(OPTIMIZER_PREFIX))
    }

    pub fn optimizer_entries(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.name.starts_with(OPTIMIZER_PREFIX))
    }

    /// Copies the stored values into `net`, which must have the same
    /// architecture; the first differing entry is reported otherwise.
    pub fn restore<S: Scalar>(&self, net: &mut DuckNet<S>) -> Result<()> {
        if *net.spec() != self.spec {
            return Err(bad(format!(
                "architecture mismatch: checkpoint has '{}', network has '{}'",
                spec_line(&self.spec),
                spec_line(net.spec())
            )));
        }
        let mut expected = Vec::new();
        net.visit(&mut |name, _, t| expected.push((name.to_string(), t.shape())));
        let stored: Vec<&Entry> = self.parameters().collect();
        for (i, (name, shape)) in expected.iter().enumerate() {
            match stored.get(i) {
                Some(e) if e.name == *name && e.shape == *shape => {}
                Some(e) => {
                    return Err(bad(format!(
                        "entry {i}: checkpoint has {} {}, network expects {name} {shape}",
                        e.name, e.shape
                    )))
                }
                None => return Err(bad(format!("entry {i}: missing {name} {shape}"))),
            }
        }
        if let Some(extra) = stored.get(expected.len()) {
            return Err(bad(format!(
                "entry {}: unexpected {} {}",
                expected.len(),
                extra.name,
                extra.shape
            )));
        }
        let mut i = 0;
        net.visit(&mut |_, _, t| {
            for (dst, &src) in t.data_mut().iter_mut().zip(&stored[i].data) {
                *dst = S::from_f64_lossy(src as f64);
            }
            i += 1;
        });
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\n{}\n", spec_line(&self.spec));
        let mut offset = 0;
        for e in &self.entries {
            let [n, c, h, w] = e.shape.dims();
            header.push_str(&format!("{} {n}x{c}x{h}x{w} {offset}\n", e.name));
            offset += e.shape.len();
        }
        header.push('\n');
        let mut bytes = header.into_bytes();
        bytes.reserve(offset * 4);
        for e in &self.entries {
            for v in &e.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let end = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("missing blank line after the manifest"))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("manifest is not UTF-8"))?;
        let payload = &bytes[end + 2..];
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("not a checkpoint (expected magic line {MAGIC:?})")));
        }
        let spec = parse_spec(lines.next().unwrap_or(""))?;
        let mut entries = Vec::new();
        let mut expected_offset = 0usize;
        for line in lines {
            let parts: Vec<&str> = line.split(' ').collect();
            let [name, shape, offset] = parts[..] else {
                return Err(bad(format!("bad manifest line {line:?}")));
            };
            let shape = parse_shape(shape)?;
            let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset in {line:?}")))?;
            if offset != expected_offset {
                return Err(bad(format!("{name}: offset {offset}, expected {expected_offset}")));
            }
            let range = offset * 4..(offset + shape.len()) * 4;
            let raw = payload.get(range.clone()).ok_or_else(|| {
                bad(format!(
                    "truncated payload: {name} needs bytes {}..{} of {}",
                    range.start,
                    range.end,
                    payload.len()
                ))
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            expected_offset += shape.len();
            entries.push(Entry {
                name: name.to_string(),
                shape,
                data,
            });
        }
        if payload.len() != expected_offset * 4 {
            return Err(bad(format!(
                "payload is {} bytes, manifest describes {}",
                payload.len(),
                expected_offset * 4
            )));
        }
        Ok(Checkpoint { spec, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(d) => Error::Checkpoint(format!("{}: {d}", path.display())),
            other => other,
        })
    }

    /// Builds a network of the stored architecture holding the stored values.
    pub fn to_network<S: Scalar>(&self) -> Result<DuckNet<S>> {
        let mut net = DuckNet::new(self.spec, 0)?;
        self.restore(&mut net)?;
        Ok(net)
    }
}

pub fn save_checkpoint<S: Scalar>(net: &mut DuckNet<S>, path: &Path) -> Result<()> {
    Checkpoint::capture(net).save(path)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<DuckNet<S>> {
    Checkpoint::load(path)?.to_network()
}
