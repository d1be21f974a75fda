//! Trace container: 8-byte magic, version byte, 7 reserved bytes, `u64` LE
//! header length, a JSON header, then the payload section of LE `f64`s.
//! Block payload offsets in the header count doubles from the payload start.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixels::{Plane, Rect};

use super::{BlockMode, BlockRecord, FrameRecord, MotionVector, PatchGrid, Trace};

pub const TRACE_MAGIC: &[u8; 8] = b"SRTRACE\0";
pub const TRACE_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    grid: PatchGrid,
    scale: usize,
    payload_len: usize,
    frames: Vec<FrameHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameHeader {
    frame_index: usize,
    is_keyframe: bool,
    ref_frames: Vec<usize>,
    blocks: Vec<BlockHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModeHeader {
    Intra,
    Inter,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockHeader {
    rect: Rect,
    mode: ModeHeader,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ref_slot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mv: Option<[i32; 2]>,
    offset: usize,
}

pub fn write_trace<W: Write>(mut w: W, t: &Trace) -> Result<()> {
    let mut offset = 0usize;
    let frames = t
        .frames
        .iter()
        .map(|f| FrameHeader {
            frame_index: f.frame_index,
            is_keyframe: f.is_keyframe,
            ref_frames: f.ref_frames.clone(),
            blocks: f
                .blocks
                .iter()
                .map(|b| {
                    let (mode, ref_slot, mv) = match b.mode {
                        BlockMode::Intra => (ModeHeader::Intra, None, None),
                        BlockMode::Inter { ref_slot, mv } => (ModeHeader::Inter, Some(ref_slot), Some([mv.dx, mv.dy])),
                    };
                    let h = BlockHeader {
                        rect: b.rect,
                        mode,
                        ref_slot,
                        mv,
                        offset,
                    };
                    offset += b.rect.area();
                    h
                })
                .collect(),
        })
        .collect();
    let header = Header {
        grid: t.grid,
        scale: t.scale,
        payload_len: offset,
        frames,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&[TRACE_VERSION, 0, 0, 0, 0, 0, 0, 0])?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(1 << 16);
    for b in t.frames.iter().flat_map(|f| &f.blocks) {
        for v in b.payload.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if buf.len() >= 1 << 16 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(mut r: R) -> Result<Trace> {
    let mut prefix = [0u8; 24];
    r.read_exact(&mut prefix)
        .map_err(|_| Error::format("truncated trace prefix"))?;
    if &prefix[..8] != TRACE_MAGIC {
        return Err(Error::format("not a trace file (bad magic)"));
    }
    if prefix[8] != TRACE_VERSION {
        return Err(Error::Version {
            found: prefix[8],
            expected: TRACE_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(prefix[16..24].try_into().unwrap()) as usize;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)
        .map_err(|_| Error::format("truncated trace header"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::format(format!("trace header: {e}")))?;

    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != header.payload_len * 8 {
        return Err(Error::format(format!(
            "payload section has {} bytes, header declares {} doubles",
            body.len(),
            header.payload_len
        )));
    }
    let payload: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut frames = Vec::with_capacity(header.frames.len());
    for fh in header.frames {
        let fi = fh.frame_index;
        let mut blocks = Vec::with_capacity(fh.blocks.len());
        for (bi, bh) in fh.blocks.into_iter().enumerate() {
            let at = |msg: &str| Error::format(format!("frame {fi} block {bi}: {msg}"));
            if bh.rect.w == 0 || bh.rect.h == 0 {
                return Err(at("empty rect"));
            }
            let end = bh
                .offset
                .checked_add(bh.rect.area())
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| at("payload range out of bounds"))?;
            let data = payload[bh.offset..end].to_vec();
            let mode = match (bh.mode, bh.ref_slot, bh.mv) {
                (ModeHeader::Intra, None, None) => BlockMode::Intra,
                (ModeHeader::Inter, Some(ref_slot), Some([dx, dy])) => BlockMode::Inter {
                    ref_slot,
                    mv: MotionVector::new(dx, dy),
                },
                (ModeHeader::Intra, ..) => return Err(at("intra block carries motion fields")),
                (ModeHeader::Inter, ..) => return Err(at("inter block lacks ref_slot or mv")),
            };
            blocks.push(BlockRecord {
                rect: bh.rect,
                mode,
                payload: Plane::from_vec(bh.rect.w, bh.rect.h, data)?,
            });
        }
        frames.push(FrameRecord {
            frame_index: fi,
            is_keyframe: fh.is_keyframe,
            ref_frames: fh.ref_frames,
            blocks,
        });
    }
    let trace = Trace {
        grid: header.grid,
        scale: header.scale,
        frames,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn save_trace(t: &Trace, path: impl AsRef<Path>) -> Result<()> {
    t.validate()?;
    write_trace(BufWriter::new(File::create(path)?), t)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    read_trace(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::tests::tiny_trace;

    fn encode(t: &Trace) -> Vec<u8> {
        let mut buf = Vec::new();
        write_trace(&mut buf, t).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let mut t = tiny_trace();
        t.frames[1].blocks[0].payload.data_mut()[3] = -0.1 + 1e-17;
        let back = read_trace(&encode(&t)[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn version_and_magic_checked() {
        let mut buf = encode(&tiny_trace());
        buf[8] = 9;
        assert!(matches!(read_trace(&buf[..]), Err(Error::Version { found: 9, .. })));
        buf[0] = b'X';
        assert!(matches!(read_trace(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn acyclicity_violation_surfaces_on_load() {
        let mut t = tiny_trace();
        t.frames[1].ref_frames = vec![1];
        let buf = encode(&t);
        match read_trace(&buf[..]) {
            Err(Error::Validation { check, .. }) => assert_eq!(check, "acyclicity"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let mut buf = encode(&tiny_trace());
        buf.truncate(buf.len() - 8);
        assert!(matches!(read_trace(&buf[..]), Err(Error::Format(_))));
    }
}
