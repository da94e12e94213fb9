//! Plain-text memory trace: one `<tick> <L|S> <0xADDR> <size>` record per
//! line. Ticks are picoseconds. The canonical form uses upper-case hex and
//! single spaces; [`serialize_trace`] emits it and [`parse_trace_str`]
//! accepts it back unchanged.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::controller::AccessKind;
use crate::mos::MosAddress;
use crate::sim::SimTime;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: tick goes backwards")]
    Unsorted { line: usize },
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub tick: SimTime,
    pub op: AccessKind,
    pub addr: MosAddress,
    pub size: u32,
}

fn parse_line(line: &str, n: usize) -> Result<TraceRecord, TraceError> {
    let err = |msg: String| TraceError::Parse { line: n, msg };
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [tick, op, addr, size] = fields[..] else {
        return Err(err(format!("expected 4 fields, found {}", fields.len())));
    };
    let tick = tick
        .parse::<u64>()
        .map_err(|e| err(format!("bad tick {tick:?}: {e}")))?;
    let op = match op {
        "L" => AccessKind::Load,
        "S" => AccessKind::Store,
        other => return Err(err(format!("bad op {other:?}, expected L or S"))),
    };
    let hex = addr
        .strip_prefix("0x")
        .or_else(|| addr.strip_prefix("0X"))
        .ok_or_else(|| err(format!("address {addr:?} lacks 0x prefix")))?;
    let addr = u64::from_str_radix(hex, 16).map_err(|e| err(format!("bad address {addr:?}: {e}")))?;
    let size = size
        .parse::<u32>()
        .map_err(|e| err(format!("bad size {size:?}: {e}")))?;
    if size == 0 {
        return Err(err("size must be positive".into()));
    }
    Ok(TraceRecord {
        tick: SimTime::from_ps(tick),
        op,
        addr: MosAddress(addr),
        size,
    })
}

/// Parses a trace. Blank lines and `#` comments are skipped.
pub fn parse_trace_str(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    let mut last = SimTime::ZERO;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = parse_line(line, i + 1)?;
        if rec.tick < last {
            return Err(TraceError::Unsorted { line: i + 1 });
        }
        last = rec.tick;
        out.push(rec);
    }
    Ok(out)
}

pub fn serialize_trace(records: &[TraceRecord]) -> String {
    let mut s = String::with_capacity(records.len() * 24);
    for r in records {
        let op = match r.op {
            AccessKind::Load => 'L',
            AccessKind::Store => 'S',
        };
        writeln!(s, "{} {} 0x{:X} {}", r.tick.as_ps(), op, r.addr.0, r.size).expect("string write");
    }
    s
}

/// Splits records that cross a page boundary into page-contained pieces.
pub fn split_pages(records: &[TraceRecord], page_bytes: u64) -> Vec<TraceRecord> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut addr = r.addr.0;
        let mut left = r.size as u64;
        while left > 0 {
            let room = page_bytes - addr % page_bytes;
            let take = room.min(left);
            out.push(TraceRecord {
                addr: MosAddress(addr),
                size: take as u32,
                ..*r
            });
            addr += take;
            left -= take;
        }
    }
    out
}

/// Reads, validates and page-splits a trace file.
pub fn load_trace(path: &Path, page_bytes: u64) -> Result<Vec<TraceRecord>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(split_pages(&parse_trace_str(&text)?, page_bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_load() {
        let recs = parse_trace_str("100 L 0xF0 8\n").unwrap();
        assert_eq!(
            recs,
            vec![TraceRecord {
                tick: SimTime::from_ps(100),
                op: AccessKind::Load,
                addr: MosAddress(0xF0),
                size: 8
            }]
        );
        assert_eq!(serialize_trace(&recs), "100 L 0xF0 8\n");
    }

    #[test]
    fn page_crossing_record_splits_at_boundary() {
        let recs = parse_trace_str("0 S 0x1FFFC 8\n").unwrap();
        let split = split_pages(&recs, 131_072);
        assert_eq!(split.len(), 2);
        assert_eq!((split[0].addr.0, split[0].size), (0x1FFFC, 4));
        assert_eq!((split[1].addr.0, split[1].size), (0x20000, 4));
        assert!(split.iter().all(|r| r.op == AccessKind::Store));
    }

    #[test]
    fn malformed_op_reports_line() {
        let err = parse_trace_str("0 L 0x0 8\n\n5 X 0x0 8\n").unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn other_malformed_lines() {
        for bad in ["1 L F0 8", "1 L 0xZZ 8", "x L 0x0 8", "1 L 0x0 0", "1 L 0x0"] {
            assert!(matches!(parse_trace_str(bad), Err(TraceError::Parse { line: 1, .. })), "{bad}");
        }
    }

    #[test]
    fn unsorted_is_rejected() {
        assert!(matches!(
            parse_trace_str("10 L 0x0 8\n5 L 0x0 8\n"),
            Err(TraceError::Unsorted { line: 2 })
        ));
    }
}
