//! DAG dump: 8-byte magic, version byte, 7 reserved bytes, `u64` LE header
//! length, JSON header, then a payload of 8-byte LE words. Row pointers and
//! column indices are `u64`, weights and TC values `f64`. Header offsets are
//! byte offsets from the payload start.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::PatchGrid;

use super::{validate_dag, DagFrame, EdgeGroup, ErrorDag, WeightMatrix};

pub const DAG_MAGIC: &[u8; 8] = b"SRDAG\0\0\0";
pub const DAG_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    grid: PatchGrid,
    payload_bytes: usize,
    frames: Vec<FrameHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameHeader {
    frame_index: usize,
    tc_offset: usize,
    edges: Vec<EdgeHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeHeader {
    ref_frame: usize,
    nnz: usize,
    row_ptr_offset: usize,
    col_offset: usize,
    weight_offset: usize,
}

struct Payload(Vec<u8>);

impl Payload {
    fn put_u64s(&mut self, xs: impl Iterator<Item = usize>) -> usize {
        let at = self.0.len();
        for x in xs {
            self.0.extend_from_slice(&(x as u64).to_le_bytes());
        }
        at
    }

    fn put_f64s(&mut self, xs: &[f64]) -> usize {
        let at = self.0.len();
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
        at
    }

    fn words(&self, offset: usize, n: usize, what: &str) -> Result<&[u8]> {
        offset
            .checked_add(n.checked_mul(8).ok_or_else(|| Error::format("size overflow"))?)
            .filter(|&end| offset.is_multiple_of(8) && end <= self.0.len())
            .map(|end| &self.0[offset..end])
            .ok_or_else(|| Error::format(format!("{what}: range out of bounds")))
    }

    fn u64s(&self, offset: usize, n: usize, what: &str) -> Result<Vec<usize>> {
        self.words(offset, n, what)?
            .chunks_exact(8)
            .map(|c| {
                usize::try_from(u64::from_le_bytes(c.try_into().unwrap()))
                    .map_err(|_| Error::format(format!("{what}: index overflow")))
            })
            .collect()
    }

    fn f64s(&self, offset: usize, n: usize, what: &str) -> Result<Vec<f64>> {
        Ok(self
            .words(offset, n, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn write_dag<W: Write>(mut w: W, d: &ErrorDag) -> Result<()> {
    let mut p = Payload(Vec::new());
    let frames = d
        .frames
        .iter()
        .map(|f| FrameHeader {
            frame_index: f.frame_index,
            tc_offset: p.put_f64s(&f.tc),
            edges: f
                .in_edges
                .iter()
                .map(|g| {
                    let m = &g.weights;
                    EdgeHeader {
                        ref_frame: g.ref_frame,
                        nnz: m.nnz(),
                        row_ptr_offset: p.put_u64s(m.row_ptr().iter().copied()),
                        col_offset: p.put_u64s(m.col_idx().iter().copied()),
                        weight_offset: p.put_f64s(m.values()),
                    }
                })
                .collect(),
        })
        .collect();
    let header = Header {
        grid: d.grid,
        payload_bytes: p.0.len(),
        frames,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(DAG_MAGIC)?;
    w.write_all(&[DAG_VERSION, 0, 0, 0, 0, 0, 0, 0])?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&p.0)?;
    w.flush()?;
    Ok(())
}

/// Reads a dump and checks every DAG invariant.
pub fn read_dag<R: Read>(mut r: R) -> Result<ErrorDag> {
    let mut prefix = [0u8; 24];
    r.read_exact(&mut prefix)
        .map_err(|_| Error::format("truncated DAG prefix"))?;
    if &prefix[..8] != DAG_MAGIC {
        return Err(Error::format("not a DAG dump (bad magic)"));
    }
    if prefix[8] != DAG_VERSION {
        return Err(Error::Version {
            found: prefix[8],
            expected: DAG_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(prefix[16..24].try_into().unwrap()) as usize;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)
        .map_err(|_| Error::format("truncated DAG header"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::format(format!("DAG header: {e}")))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != header.payload_bytes {
        return Err(Error::format(format!(
            "payload has {} bytes, header declares {}",
            body.len(),
            header.payload_bytes
        )));
    }
    let p = Payload(body);
    let n = header.grid.num_patches();
    let mut frames = Vec::with_capacity(header.frames.len());
    for fh in header.frames {
        let fi = fh.frame_index;
        let tc = p.f64s(fh.tc_offset, n, &format!("frame {fi} TC"))?;
        let mut in_edges = Vec::with_capacity(fh.edges.len());
        for e in fh.edges {
            let what = format!("frame {fi} edges from {}", e.ref_frame);
            let row_ptr = p.u64s(e.row_ptr_offset, n + 1, &what)?;
            let cols = p.u64s(e.col_offset, e.nnz, &what)?;
            let vals = p.f64s(e.weight_offset, e.nnz, &what)?;
            let weights = WeightMatrix::from_raw_parts(n, n, row_ptr, cols, vals)
                .map_err(|err| Error::format(format!("{what}: {err}")))?;
            in_edges.push(EdgeGroup {
                ref_frame: e.ref_frame,
                weights,
            });
        }
        frames.push(DagFrame {
            frame_index: fi,
            tc,
            in_edges,
        });
    }
    let dag = ErrorDag {
        grid: header.grid,
        frames,
    };
    validate_dag(&dag).into_result()?;
    Ok(dag)
}

pub fn save_dag(d: &ErrorDag, path: impl AsRef<Path>) -> Result<()> {
    write_dag(BufWriter::new(File::create(path)?), d)
}

pub fn load_dag(path: impl AsRef<Path>) -> Result<ErrorDag> {
    read_dag(BufReader::new(File::open(path)?))
}

/// Graphviz description: one cluster per frame, nodes labelled with TC and
/// edges with their weights.
pub fn write_dot<W: Write>(mut w: W, d: &ErrorDag) -> Result<()> {
    writeln!(w, "digraph sr_error {{")?;
    writeln!(w, "  rankdir=LR;")?;
    writeln!(w, "  node [shape=box, fontsize=10];")?;
    for f in &d.frames {
        let fi = f.frame_index;
        writeln!(w, "  subgraph cluster_f{fi} {{")?;
        writeln!(w, "    label=\"frame {fi}\";")?;
        for (p, tc) in f.tc.iter().enumerate() {
            let (r, c) = (p / d.grid.cols(), p % d.grid.cols());
            writeln!(w, "    f{fi}p{p} [label=\"({r},{c})\\nTC={tc:.4}\"];")?;
        }
        writeln!(w, "  }}")?;
    }
    for f in &d.frames {
        for g in &f.in_edges {
            for (row, col, wt) in g.weights.entries() {
                writeln!(w, "  f{}p{col} -> f{}p{row} [label=\"{wt:.4}\"];", g.ref_frame, f.frame_index)?;
            }
        }
    }
    writeln!(w, "}}")?;
    w.flush()?;
    Ok(())
}
