//! Trace files: one `ready_at_ps,thread,bank,row` request per line, `#` comments.

use std::io::{self, BufRead, Write};

use rhsim_core::simcore::MemRequest;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn field<T: std::str::FromStr>(part: Option<&str>, name: &str, line: usize) -> Result<T, TraceFileError>
where
    T::Err: std::fmt::Display,
{
    let raw = part.ok_or_else(|| TraceFileError::Parse { line, reason: format!("missing {name}") })?;
    raw.trim().parse().map_err(|e| TraceFileError::Parse { line, reason: format!("bad {name} `{}`: {e}", raw.trim()) })
}

/// Sequence numbers are assigned in file order.
pub fn read_trace(reader: impl BufRead) -> Result<Vec<MemRequest>, TraceFileError> {
    let mut out = Vec::new();
    for (idx, text) in reader.lines().enumerate() {
        let line = idx + 1;
        let text = text?;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let mut parts = text.split(',');
        let ready_at = field(parts.next(), "ready_at_ps", line)?;
        let thread = field(parts.next(), "thread", line)?;
        let bank = field(parts.next(), "bank", line)?;
        let row = field(parts.next(), "row", line)?;
        if parts.next().is_some() {
            return Err(TraceFileError::Parse { line, reason: "expected 4 fields".into() });
        }
        out.push(MemRequest { thread, bank, row, ready_at, seq: out.len() as u64 });
    }
    Ok(out)
}

pub fn write_trace(mut w: impl Write, trace: &[MemRequest]) -> io::Result<()> {
    writeln!(w, "# ready_at_ps,thread,bank,row")?;
    for r in trace {
        writeln!(w, "{},{},{},{}", r.ready_at, r.thread, r.bank, r.row)?;
    }
    w.flush()
}
