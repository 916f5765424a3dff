//! Replay of append-only JSON-lines files.

use std::fs::OpenOptions;
use std::path::Path;

use serde::de::DeserializeOwned;

/// Applies every record of `path` in order. A final record without its
/// newline is a torn write from a crash that was never acknowledged; it is
/// cut from the file so later appends start on a clean line.
pub(crate) fn replay<T: DeserializeOwned>(path: &Path, mut apply: impl FnMut(T)) -> std::io::Result<()> {
    let bytes = std::fs::read(path)?;
    let mut good = 0usize;
    for (n, seg) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
        let complete = seg.ends_with(b"\n");
        let text = String::from_utf8_lossy(seg);
        if !text.trim().is_empty() {
            match (complete, serde_json::from_str::<T>(text.trim_end())) {
                (true, Ok(rec)) => apply(rec),
                (false, _) => {
                    log::warn!("{}:{}: discarding torn record", path.display(), n + 1);
                    break;
                }
                (true, Err(e)) => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), n + 1),
                    ))
                }
            }
        }
        good += seg.len();
    }
    if good < bytes.len() {
        OpenOptions::new().write(true).open(path)?.set_len(good as u64)?;
    }
    Ok(())
}
