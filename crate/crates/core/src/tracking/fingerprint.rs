//! Content fingerprints over a step's watched sources.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrackingError;

pub const ALGORITHM: &str = "sha256";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub algorithm: String,
    /// 64 lowercase hex characters.
    pub digest: String,
    /// Labels of the hashed sources, sorted.
    pub labels: Vec<String>,
}

impl Fingerprint {
    pub fn matches(&self, other: &Fingerprint) -> bool {
        self.algorithm == other.algorithm && self.digest == other.digest
    }
}

/// SHA-256 over, for each source in label order: label, `0x00`, content with
/// CRLF and lone CR normalized to LF, `0x00`.
pub fn fingerprint_sources<L, C>(sources: &[(L, C)]) -> Result<Fingerprint, TrackingError>
where
    L: AsRef<str>,
    C: AsRef<[u8]>,
{
    let mut ordered: Vec<(&str, &[u8])> = sources
        .iter()
        .map(|(l, c)| (l.as_ref(), c.as_ref()))
        .collect();
    ordered.sort_by(|a, b| a.0.cmp(b.0));
    if let Some(w) = ordered.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(TrackingError::DuplicateLabel(w[0].0.to_string()));
    }
    let mut hasher = Sha256::new();
    for (label, content) in &ordered {
        hasher.update(label.as_bytes());
        hasher.update([0u8]);
        hasher.update(normalize_newlines(content));
        hasher.update([0u8]);
    }
    Ok(Fingerprint {
        algorithm: ALGORITHM.to_string(),
        digest: format!("{:x}", hasher.finalize()),
        labels: ordered.iter().map(|(l, _)| l.to_string()).collect(),
    })
}

fn normalize_newlines(content: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(content.len());
    let mut i = 0;
    while i < content.len() {
        match content[i] {
            b'\r' => {
                out.push(b'\n');
                if content.get(i + 1) == Some(&b'\n') {
                    i += 1;
                }
            }
            b => out.push(b),
        }
        i += 1;
    }
    out
}
