//! Binary graph persistence.
//!
//! Little-endian layout: magic "GPYG", version u32 = 1, flags u32 (bit 0:
//! has csc_eid), vcount u64, ecount u64, offsets (|V|+1 x u64), col_ids
//! (|E| x u64), coo_rows (|E| x u64), then csc_eid (|E| x u64) if flagged.

use std::io::{Read, Write};

use crate::error::GraphError;
use crate::graph::UnifiedGraph;

const MAGIC: &[u8; 4] = b"GPYG";
const VERSION: u32 = 1;

fn read_exact_section(
    source: &mut impl Read,
    buf: &mut [u8],
    section: &'static str,
) -> Result<(), GraphError> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            GraphError::Truncated(section)
        } else {
            GraphError::Io(e)
        }
    })
}

fn write_u64s(sink: &mut impl Write, values: &[u64]) -> std::io::Result<u64> {
    for &v in values {
        sink.write_all(&v.to_le_bytes())?;
    }
    Ok(values.len() as u64 * 8)
}

fn read_u64s(
    source: &mut impl Read,
    n: usize,
    section: &'static str,
) -> Result<Vec<u64>, GraphError> {
    let mut buf = vec![0u8; n * 8];
    read_exact_section(source, &mut buf, section)?;
    Ok(buf.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes the graph; returns the byte count.
pub fn save_graph(g: &UnifiedGraph, sink: &mut impl Write) -> Result<u64, GraphError> {
    sink.write_all(MAGIC)?;
    sink.write_all(&VERSION.to_le_bytes())?;
    let flags: u32 = if g.csc_eid.is_some() { 1 } else { 0 };
    sink.write_all(&flags.to_le_bytes())?;
    sink.write_all(&(g.vcount as u64).to_le_bytes())?;
    sink.write_all(&(g.ecount as u64).to_le_bytes())?;
    let mut written = 4 + 4 + 4 + 8 + 8;
    written += write_u64s(sink, &g.offsets)?;
    written += write_u64s(sink, &g.col_ids)?;
    written += write_u64s(sink, &g.coo_rows)?;
    if let Some(eid) = &g.csc_eid {
        written += write_u64s(sink, eid)?;
    }
    Ok(written)
}

pub fn save_graph_file(g: &UnifiedGraph, path: &std::path::Path) -> Result<u64, GraphError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = save_graph(g, &mut f)?;
    std::io::Write::flush(&mut f)?;
    Ok(n)
}

pub fn load_graph_file(path: &std::path::Path) -> Result<UnifiedGraph, GraphError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_graph(&mut f)
}

pub fn load_graph(source: &mut impl Read) -> Result<UnifiedGraph, GraphError> {
    let mut magic = [0u8; 4];
    read_exact_section(source, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(GraphError::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact_section(source, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(GraphError::VersionMismatch(version));
    }
    read_exact_section(source, &mut word, "flags")?;
    let flags = u32::from_le_bytes(word);
    let mut qword = [0u8; 8];
    read_exact_section(source, &mut qword, "vcount")?;
    let vcount = u64::from_le_bytes(qword) as usize;
    read_exact_section(source, &mut qword, "ecount")?;
    let ecount = u64::from_le_bytes(qword) as usize;

    let offsets = read_u64s(source, vcount + 1, "offsets")?;
    let col_ids = read_u64s(source, ecount, "col_ids")?;
    let coo_rows = read_u64s(source, ecount, "coo_rows")?;
    let csc_eid = if flags & 1 != 0 {
        Some(read_u64s(source, ecount, "csc_eid")?)
    } else {
        None
    };

    let mut g = UnifiedGraph {
        vcount,
        ecount,
        offsets,
        col_ids,
        coo_rows,
        csc_eid,
        deg: Vec::new(),
        deg_clamped: Vec::new(),
    };
    g.recompute_degrees();
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, BuildOptions, EdgeList, EdgeSchema};

    fn t4() -> UnifiedGraph {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        for (s, d) in [(0, 1), (0, 2), (1, 2), (2, 3)] {
            list.push_edge(s, d);
        }
        build_graph(
            &list,
            4,
            BuildOptions { symmetrize: true, need_edge_ids: true, sort_neighbors: true },
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let g = t4();
        let mut buf = Vec::new();
        let n = save_graph(&g, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        let loaded = load_graph(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, g);
    }

    #[test]
    fn bad_magic() {
        let g = t4();
        let mut buf = Vec::new();
        save_graph(&g, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(load_graph(&mut buf.as_slice()), Err(GraphError::BadMagic)));
    }

    #[test]
    fn version_mismatch() {
        let g = t4();
        let mut buf = Vec::new();
        save_graph(&g, &mut buf).unwrap();
        buf[4] = 9;
        assert!(matches!(
            load_graph(&mut buf.as_slice()),
            Err(GraphError::VersionMismatch(9))
        ));
    }

    #[test]
    fn truncated_offsets() {
        let g = t4();
        let mut buf = Vec::new();
        save_graph(&g, &mut buf).unwrap();
        buf.truncate(4 + 4 + 4 + 8 + 8 + 16);
        assert!(matches!(
            load_graph(&mut buf.as_slice()),
            Err(GraphError::Truncated("offsets"))
        ));
    }
}
