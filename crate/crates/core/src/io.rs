//! Output helpers shared by the exporters.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// 17 significant digits in scientific notation.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `path` by filling a temporary sibling and renaming it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, |w| writeln!(w, "{text}"))
}
