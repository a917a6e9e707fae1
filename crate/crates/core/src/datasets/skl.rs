//! SKL1: a little-endian container for labeled skeleton sequences.
//!
//! Header: magic `SKL1`, then `u32` version, count, C, T, V, M, num_classes,
//! edge count and edge pairs, part-entry count and part ids, center index.
//! Each record: `u32` label, subject, view, then `C*T*V*M` `f32` values in
//! `[C, T, V, M]` row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::SkeletonSequence;
use crate::graph::build_graph;
use crate::tensor::Tensor;

use super::{Dataset, Sample};

pub const SKL_MAGIC: &[u8; 4] = b"SKL1";
pub const SKL_VERSION: u32 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Parameter(format!("{what} {v} does not fit the file format")))
}

/// Serialize a dataset; every sample must share one `[C, T, V, M]` shape.
pub fn write_skl(out: &mut impl Write, dataset: &Dataset) -> Result<()> {
    let shape: Vec<usize> = dataset.sample_shape().map_or(vec![3, 0, dataset.graph.n_vertices(), 0], <[usize]>::to_vec);
    let mut buf = Vec::new();
    let mut put = |v: u32| buf.extend_from_slice(&v.to_le_bytes());
    put(SKL_VERSION);
    put(to_u32(dataset.len(), "sample count")?);
    for &d in &shape {
        put(to_u32(d, "extent")?);
    }
    put(to_u32(dataset.num_classes, "class count")?);
    let g = &dataset.graph;
    put(to_u32(g.edges().len(), "edge count")?);
    for &(a, b) in g.edges() {
        put(a as u32);
        put(b as u32);
    }
    put(to_u32(g.parts().len(), "part entries")?);
    for &p in g.parts() {
        put(to_u32(p, "part id")?);
    }
    put(g.center() as u32);
    out.write_all(SKL_MAGIC)?;
    out.write_all(&buf)?;
    for s in &dataset.samples {
        if s.sequence.data().shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "sample {} has shape {:?}, dataset shape is {shape:?}",
                s.id,
                s.sequence.data().shape()
            )));
        }
        let mut rec = Vec::with_capacity(12 + 4 * s.sequence.data().numel());
        for v in [to_u32(s.label(), "label")?, s.subject, s.view] {
            rec.extend_from_slice(&v.to_le_bytes());
        }
        for &v in s.sequence.data().data() {
            rec.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&rec)?;
    }
    Ok(())
}

pub fn save_skl(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut bytes = Vec::new();
    write_skl(&mut bytes, dataset)?;
    crate::io::write_atomic(path, &bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
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

    fn usize(&mut self, what: &str) -> Result<usize> {
        self.u32(what).map(|v| v as usize)
    }
}

/// Parse an in-memory SKL1 image; nothing is returned unless the whole file validates.
pub fn read_skl(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != SKL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected SKL1".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != SKL_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = cur.usize("sample count")?;
    let dims_at = cur.pos;
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = cur.usize("dimensions")?;
    }
    let [c, t, v, m] = dims;
    if c != 3 || v < 2 || (count > 0 && (t < crate::features::MIN_FRAMES || m == 0)) {
        return Err(Error::Format {
            offset: dims_at as u64,
            message: format!("invalid dimensions C={c} T={t} V={v} M={m}"),
        });
    }
    let num_classes = cur.usize("class count")?;
    if num_classes == 0 {
        return Err(cur.fail("class count must be positive"));
    }
    let n_edges = cur.usize("edge count")?;
    let mut edges = Vec::with_capacity(n_edges.min(1 << 16));
    for _ in 0..n_edges {
        let at = cur.pos;
        let (a, b) = (cur.usize("edge")?, cur.usize("edge")?);
        if a >= v || b >= v {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("edge ({a},{b}) out of range for {v} joints"),
            });
        }
        edges.push((a, b));
    }
    let n_parts = cur.usize("part count")?;
    if n_parts != 0 && n_parts != v {
        return Err(cur.fail(format!("part grouping has {n_parts} entries for {v} joints")));
    }
    let mut parts = Vec::with_capacity(n_parts);
    for _ in 0..n_parts {
        parts.push(cur.usize("part id")?);
    }
    let center_at = cur.pos;
    let center = cur.usize("center index")?;
    if center >= v {
        return Err(Error::Format {
            offset: center_at as u64,
            message: format!("center index {center} out of range for {v} joints"),
        });
    }
    let mut graph = build_graph(v, &edges, center).map_err(|e| Error::Format {
        offset: center_at as u64,
        message: e.to_string(),
    })?;
    if !parts.is_empty() {
        graph = graph.with_parts(parts).map_err(|e| Error::Format {
            offset: center_at as u64,
            message: e.to_string(),
        })?;
    }
    let graph = Arc::new(graph);
    let numel = c * t * v * m;
    let record = 12 + 4 * numel;
    if (bytes.len() - cur.pos) / record.max(1) < count {
        return Err(cur.fail(format!(
            "truncated: header announces {count} records of {record} bytes, {} bytes left",
            bytes.len() - cur.pos
        )));
    }
    let mut samples = Vec::with_capacity(count);
    for id in 0..count {
        let at = cur.pos;
        let label = cur.usize("label")?;
        if label >= num_classes {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("label {label} out of range for {num_classes} classes"),
            });
        }
        let subject = cur.u32("subject")?;
        let view = cur.u32("view")?;
        let raw = cur.take(4 * numel, "sample data")?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let tensor = Tensor::new(&dims, data).expect("extent matches record size");
        let sequence = SkeletonSequence::new(tensor, graph.clone(), Some(label)).map_err(|e| Error::Format {
            offset: at as u64,
            message: e.to_string(),
        })?;
        samples.push(Sample {
            id,
            sequence,
            subject,
            view,
        });
    }
    if cur.pos != bytes.len() {
        return Err(cur.fail(format!("{} trailing bytes after the last record", bytes.len() - cur.pos)));
    }
    Ok(Dataset {
        graph,
        num_classes,
        samples,
    })
}

pub fn load_skl(path: impl AsRef<Path>) -> Result<Dataset> {
    read_skl(&fs::read(path)?)
}
