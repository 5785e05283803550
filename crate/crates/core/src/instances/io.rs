use std::io::Write;

use super::EntailmentInstance;
use crate::error::{Error, Result};

/// One JSON object per line.
pub fn serialize_instances<W: Write>(instances: &[EntailmentInstance], mut out: W) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Blank lines are skipped; `index` in errors counts records from zero.
pub fn deserialize_instances(text: &str) -> Result<Vec<EntailmentInstance>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            serde_json::from_str(line).map_err(|e| Error::Record {
                index,
                message: e.to_string(),
            })
        })
        .collect()
}
