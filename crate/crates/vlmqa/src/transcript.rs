//! Line-delimited JSON record of every query and response.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::endpoint::VlmRequest;
use crate::error::{Result, VlmError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub sample_id: String,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    /// SHA-256 of the PNG sent, hex encoded.
    pub image_sha256: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

impl TranscriptEntry {
    pub fn new(req: &VlmRequest, outcome: &Result<String>) -> Self {
        let digest = req.png_bytes().map(|b| Sha256::digest(&b)).unwrap_or_default();
        Self {
            sample_id: req.sample_id.clone(),
            model: req.model.clone(),
            prompt: req.prompt.clone(),
            temperature: req.temperature,
            image_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            response: outcome.as_ref().ok().cloned(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        }
    }
}

pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("entry serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| VlmError::io(path, e))?;
    f.write_all(&out).map_err(|e| VlmError::io(path, e))
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>> {
    let text = fs::read_to_string(path).map_err(|e| VlmError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| VlmError::Format {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use depthvision_core::ImageRgb;

    #[test]
    fn round_trip() {
        let img = ImageRgb::filled(2, 2, [0.1, 0.2, 0.3]).unwrap();
        let req = VlmRequest::new("s#0", "m", "q", &img);
        let entries = vec![
            TranscriptEntry::new(&req, &Ok("3".into())),
            TranscriptEntry::new(&req, &Err(VlmError::Unavailable("down".into()))),
        ];
        assert_eq!(entries[0].image_sha256.len(), 64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_transcript(&p, &entries).unwrap();
        assert_eq!(read_transcript(&p).unwrap(), entries);
        fs::write(&p, "{not json}\n").unwrap();
        assert!(read_transcript(&p).unwrap_err().to_string().contains("line 1"));
    }
}
