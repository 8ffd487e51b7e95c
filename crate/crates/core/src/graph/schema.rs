//! Edge-list schema, text parsing, and batched record ingestion.

use std::io::BufRead;

use crate::error::GraphError;

/// Per-field element kind in an edge record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// Unsigned 64-bit vertex ID in the external formats.
    VertexId,
    Int32,
    UInt32,
    Float32,
    Float64,
}

impl FieldKind {
    pub fn byte_width(self) -> usize {
        match self {
            FieldKind::VertexId | FieldKind::Float64 => 8,
            FieldKind::Int32 | FieldKind::UInt32 | FieldKind::Float32 => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Field {
    pub name: String,
    pub kind: FieldKind,
}

/// Field layout of one edge record. The first two fields are always the
/// source and destination vertex IDs.
#[derive(Clone, Debug)]
pub struct EdgeSchema {
    fields: Vec<Field>,
}

impl EdgeSchema {
    pub fn new(fields: Vec<Field>) -> Result<Self, GraphError> {
        if fields.len() < 2 {
            return Err(GraphError::InvalidSchema(
                "need at least source and destination fields".into(),
            ));
        }
        for f in &fields[..2] {
            if f.kind != FieldKind::VertexId {
                return Err(GraphError::InvalidSchema(format!(
                    "field '{}' must be a vertex ID",
                    f.name
                )));
            }
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(GraphError::InvalidSchema(format!(
                    "duplicate field name '{}'",
                    f.name
                )));
            }
        }
        Ok(Self { fields })
    }

    /// Plain (src, dst) schema.
    pub fn src_dst() -> Self {
        Self::new(vec![
            Field { name: "src".into(), kind: FieldKind::VertexId },
            Field { name: "dst".into(), kind: FieldKind::VertexId },
        ])
        .unwrap()
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    /// Total per-edge byte width.
    pub fn byte_width(&self) -> usize {
        self.fields.iter().map(|f| f.kind.byte_width()).sum()
    }

    /// Byte width of the payload fields after (src, dst).
    pub fn payload_width(&self) -> usize {
        self.byte_width() - 16
    }
}

/// Contiguous buffer of fixed-width edge records.
#[derive(Clone, Debug)]
pub struct EdgeList {
    pub schema: EdgeSchema,
    rows: Vec<u8>,
    count: usize,
    pub vcount_hint: usize,
}

impl EdgeList {
    pub fn new(schema: EdgeSchema) -> Self {
        Self { schema, rows: Vec::new(), count: 0, vcount_hint: 0 }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn rows(&self) -> &[u8] {
        &self.rows
    }

    /// (src, dst) of record i.
    pub fn endpoints(&self, i: usize) -> (u64, u64) {
        let w = self.schema.byte_width();
        let base = i * w;
        let src = u64::from_le_bytes(self.rows[base..base + 8].try_into().unwrap());
        let dst = u64::from_le_bytes(self.rows[base + 8..base + 16].try_into().unwrap());
        (src, dst)
    }

    /// Payload bytes (fields after src/dst) of record i.
    pub fn payload(&self, i: usize) -> &[u8] {
        let w = self.schema.byte_width();
        &self.rows[i * w + 16..(i + 1) * w]
    }

    /// Convenience push of a plain (src, dst) edge.
    pub fn push_edge(&mut self, src: u64, dst: u64) {
        debug_assert_eq!(self.schema.byte_width(), 16);
        self.rows.extend_from_slice(&src.to_le_bytes());
        self.rows.extend_from_slice(&dst.to_le_bytes());
        self.count += 1;
        self.vcount_hint = self.vcount_hint.max(src.max(dst) as usize + 1);
    }
}

/// Appends `n` raw records to the list.
pub fn add_edges(list: &mut EdgeList, batch: &[u8], n: usize) -> Result<(), GraphError> {
    let width = list.schema.byte_width();
    if batch.len() != n * width {
        return Err(GraphError::BatchWidth { got: batch.len(), width });
    }
    list.rows.extend_from_slice(batch);
    list.count += n;
    for i in list.count - n..list.count {
        let (s, d) = list.endpoints(i);
        list.vcount_hint = list.vcount_hint.max(s.max(d) as usize + 1);
    }
    Ok(())
}

/// Parses delimited text, one edge per non-empty non-comment line, fields in
/// schema order. Consecutive delimiter bytes collapse (so space-padded files
/// parse naturally).
pub fn parse_edge_text(
    source: impl BufRead,
    schema: &EdgeSchema,
    delimiter: u8,
    skip_comments: bool,
) -> Result<EdgeList, GraphError> {
    if delimiter == b'\n' || delimiter == b'\r' {
        return Err(GraphError::InvalidSchema("delimiter cannot be a line terminator".into()));
    }
    let mut list = EdgeList::new(schema.clone());
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (skip_comments && line.starts_with('#')) {
            continue;
        }
        let tokens: Vec<&str> = line
            .split(delimiter as char)
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.len() != schema.fields().len() {
            return Err(GraphError::MalformedLine {
                line: line_no,
                reason: format!(
                    "expected {} fields, got {}",
                    schema.fields().len(),
                    tokens.len()
                ),
            });
        }
        for (tok, field) in tokens.iter().zip(schema.fields()) {
            let bad = |reason: String| GraphError::MalformedLine { line: line_no, reason };
            match field.kind {
                FieldKind::VertexId => {
                    let v: u64 = tok
                        .parse()
                        .map_err(|_| bad(format!("bad vertex id '{tok}'")))?;
                    list.rows.extend_from_slice(&v.to_le_bytes());
                }
                FieldKind::Int32 => {
                    let v: i32 = tok.parse().map_err(|_| bad(format!("bad int32 '{tok}'")))?;
                    list.rows.extend_from_slice(&v.to_le_bytes());
                }
                FieldKind::UInt32 => {
                    let v: u32 = tok.parse().map_err(|_| bad(format!("bad uint32 '{tok}'")))?;
                    list.rows.extend_from_slice(&v.to_le_bytes());
                }
                FieldKind::Float32 => {
                    let v: f32 = tok.parse().map_err(|_| bad(format!("bad float32 '{tok}'")))?;
                    list.rows.extend_from_slice(&v.to_le_bytes());
                }
                FieldKind::Float64 => {
                    let v: f64 = tok.parse().map_err(|_| bad(format!("bad float64 '{tok}'")))?;
                    list.rows.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        list.count += 1;
        let (s, d) = list.endpoints(list.count - 1);
        list.vcount_hint = list.vcount_hint.max(s.max(d) as usize + 1);
    }
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn parses_plain_edges() {
        let list =
            parse_edge_text(Cursor::new("0 1\n0 2\n1 2\n2 3"), &EdgeSchema::src_dst(), b' ', true)
                .unwrap();
        assert_eq!(list.count(), 4);
        assert_eq!(list.endpoints(3), (2, 3));
        assert_eq!(list.vcount_hint, 4);
    }

    #[test]
    fn skips_comments_and_blanks() {
        let list =
            parse_edge_text(Cursor::new("# header\n\n0 1"), &EdgeSchema::src_dst(), b' ', true)
                .unwrap();
        assert_eq!(list.count(), 1);
    }

    #[test]
    fn field_count_mismatch_reports_line() {
        let err =
            parse_edge_text(Cursor::new("0 1 0.5"), &EdgeSchema::src_dst(), b' ', true)
                .unwrap_err();
        match err {
            GraphError::MalformedLine { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn vertex_overflow_is_an_error() {
        let err = parse_edge_text(
            Cursor::new("0 99999999999999999999999"),
            &EdgeSchema::src_dst(),
            b' ',
            true,
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn multi_field_schema_roundtrip() {
        let schema = EdgeSchema::new(vec![
            Field { name: "src".into(), kind: FieldKind::VertexId },
            Field { name: "dst".into(), kind: FieldKind::VertexId },
            Field { name: "w".into(), kind: FieldKind::Float32 },
        ])
        .unwrap();
        let list = parse_edge_text(Cursor::new("0 1 0.5"), &schema, b' ', true).unwrap();
        assert_eq!(list.count(), 1);
        assert_eq!(list.payload(0), &0.5f32.to_le_bytes());
    }

    #[test]
    fn add_edges_appends_batches() {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        let mut batch = Vec::new();
        for (s, d) in [(0u64, 1u64), (1, 2)] {
            batch.extend_from_slice(&s.to_le_bytes());
            batch.extend_from_slice(&d.to_le_bytes());
        }
        add_edges(&mut list, &batch, 2).unwrap();
        add_edges(&mut list, &batch, 2).unwrap();
        assert_eq!(list.count(), 4);
        assert_eq!(list.endpoints(2), (0, 1));
    }

    #[test]
    fn truncated_batch_is_rejected() {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        let err = add_edges(&mut list, &[0u8; 20], 2).unwrap_err();
        assert!(matches!(err, GraphError::BatchWidth { .. }));
    }

    #[test]
    fn schema_requires_vertex_id_prefix() {
        let err = EdgeSchema::new(vec![
            Field { name: "a".into(), kind: FieldKind::Float32 },
            Field { name: "b".into(), kind: FieldKind::VertexId },
        ])
        .unwrap_err();
        assert!(matches!(err, GraphError::InvalidSchema(_)));
    }
}
