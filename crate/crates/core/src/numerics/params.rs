use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Shape and name of one contiguous slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub dims: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, dims: Vec<usize>) -> Self {
        Segment {
            name: name.into(),
            dims,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector with a named-segment layout.
///
/// All model parameters live in one `Vec<f64>` so optimizer steps, norms,
/// serialization, and finite-difference probes are plain slice operations.
/// The layout maps positions back to named tensors for error reporting and
/// for the on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

const MAGIC: &str = "paramv1";

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<Segment>) -> Result<Self> {
        let total: usize = layout.iter().map(Segment::len).sum();
        if total != values.len() {
            return Err(Error::contract(format!(
                "layout covers {} values but {} provided",
                total,
                values.len()
            )));
        }
        let pv = ParamVector { values, layout };
        pv.check_finite()?;
        Ok(pv)
    }

    pub fn zeros(layout: Vec<Segment>) -> Self {
        let total: usize = layout.iter().map(Segment::len).sum();
        ParamVector {
            values: vec![0.0; total],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    /// Name of the segment containing flat position `i`.
    pub fn segment_of(&self, i: usize) -> &str {
        let mut off = 0;
        for seg in &self.layout {
            off += seg.len();
            if i < off {
                return &seg.name;
            }
        }
        "<out of range>"
    }

    /// Start offset and length of the named segment.
    pub fn segment_span(&self, name: &str) -> Option<(usize, usize)> {
        let mut off = 0;
        for seg in &self.layout {
            if seg.name == name {
                return Some((off, seg.len()));
            }
            off += seg.len();
        }
        None
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Errors with the name of the first offending segment if any value is
    /// non-finite.
    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("segment '{}'", self.segment_of(i)),
                format!("non-finite value at flat position {i}"),
            ));
        }
        Ok(())
    }

    /// Write as a plain-text header (magic, optional meta line, one line per
    /// segment with its dims, `end`) followed by the values as little-endian
    /// 64-bit floats.
    pub fn write_to<W: Write>(&self, w: &mut W, meta: &[(String, String)]) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        if !meta.is_empty() {
            let kv: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(w, "meta {}", kv.join(" "))?;
        }
        for seg in &self.layout {
            let dims: Vec<String> = seg.dims.iter().map(|d| d.to_string()).collect();
            writeln!(w, "segment {} {}", seg.name, dims.join(" "))?;
        }
        writeln!(w, "end")?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`write_to`](Self::write_to). Returns the vector and any
    /// meta key/value pairs from the header.
    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, Vec<(String, String)>)> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut offset = 0u64;
        let mut layout = Vec::new();
        let mut meta = Vec::new();
        let mut first = true;
        loop {
            let line_start = offset;
            let rest = &bytes[offset as usize..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(line_start, "unterminated header line"))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| Error::format(line_start, "header is not UTF-8"))?;
            offset += nl as u64 + 1;
            if first {
                if line != MAGIC {
                    return Err(Error::format(
                        line_start,
                        format!("expected magic '{MAGIC}', found '{line}'"),
                    ));
                }
                first = false;
                continue;
            }
            if line == "end" {
                break;
            }
            if let Some(kvs) = line.strip_prefix("meta ") {
                for kv in kvs.split_whitespace() {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::format(line_start, "malformed meta entry"))?;
                    meta.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            let body = line.strip_prefix("segment ").ok_or_else(|| {
                Error::format(line_start, format!("unrecognized header line '{line}'"))
            })?;
            let mut parts = body.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| Error::format(line_start, "segment line missing name"))?;
            let dims: Vec<usize> = parts
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|_| Error::format(line_start, format!("bad dimension '{p}'")))
                })
                .collect::<Result<_>>()?;
            if dims.is_empty() {
                return Err(Error::format(line_start, "segment line missing dims"));
            }
            layout.push(Segment::new(name, dims));
        }
        let total: usize = layout.iter().map(Segment::len).sum();
        let payload = &bytes[offset as usize..];
        if payload.len() != total * 8 {
            return Err(Error::format(
                offset,
                format!(
                    "payload holds {} bytes, layout needs {}",
                    payload.len(),
                    total * 8
                ),
            ));
        }
        let mut values = Vec::with_capacity(total);
        for (i, chunk) in payload.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    offset + (i as u64) * 8,
                    "non-finite parameter value",
                ));
            }
            values.push(v);
        }
        Ok((ParamVector { values, layout }, meta))
    }
}
