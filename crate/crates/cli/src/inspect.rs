//! Pretty-printer for run artifacts: JSON gets structure-aware rendering
//! with bulk numeric arrays elided, line formats get a bounded preview.

use std::fs;
use std::io::{self, ErrorKind, Write};
use std::path::Path;

use crate::CliError;

const PREVIEW_LINES: usize = 20;
const PREVIEW_COLS: usize = 160;

pub fn inspect(path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let stdout = io::stdout().lock();
    let mut out = DownstreamAware::new(stdout);
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
                CliError::validation(format!("{} is not valid JSON: {e}", path.display()))
            })?;
            elide_numeric_bulk(&mut value);
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&value).expect("value re-serializes")
            )?;
        }
        _ => preview_lines(&text, &mut out)?,
    }
    Ok(())
}

/// Writer that turns a closed downstream pipe (`inspect ... | head`) into
/// silent success instead of an error.
struct DownstreamAware<W: Write> {
    inner: W,
    closed: bool,
}

impl<W: Write> DownstreamAware<W> {
    fn new(inner: W) -> Self {
        DownstreamAware {
            inner,
            closed: false,
        }
    }
}

impl<W: Write> Write for DownstreamAware<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if self.closed {
            return Ok(buf.len());
        }
        match self.inner.write(buf) {
            Err(e) if e.kind() == ErrorKind::BrokenPipe => {
                self.closed = true;
                Ok(buf.len())
            }
            other => other,
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        if self.closed {
            return Ok(());
        }
        match self.inner.flush() {
            Err(e) if e.kind() == ErrorKind::BrokenPipe => {
                self.closed = true;
                Ok(())
            }
            other => other,
        }
    }
}

fn preview_lines<W: Write>(text: &str, out: &mut W) -> io::Result<()> {
    let total = text.lines().count();
    writeln!(out, "{total} lines")?;
    for line in text.lines().take(PREVIEW_LINES) {
        writeln!(out, "{}", clip(line))?;
    }
    if total > PREVIEW_LINES {
        writeln!(out, "... ({} more lines)", total - PREVIEW_LINES)?;
    }
    Ok(())
}

fn clip(line: &str) -> String {
    match line.char_indices().nth(PREVIEW_COLS) {
        Some((byte, _)) => format!("{}...", &line[..byte]),
        None => line.to_string(),
    }
}

/// Replace long all-numeric arrays (parameter tensors, mean directions)
/// with a placeholder so checkpoints stay readable.
fn elide_numeric_bulk(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Array(items) => {
            if items.len() > 16 && items.iter().all(|v| v.is_number()) {
                *value = serde_json::Value::String(format!("[{} numbers]", items.len()));
            } else {
                for item in items {
                    elide_numeric_bulk(item);
                }
            }
        }
        serde_json::Value::Object(map) => {
            for (_, v) in map.iter_mut() {
                elide_numeric_bulk(v);
            }
        }
        _ => {}
    }
}
