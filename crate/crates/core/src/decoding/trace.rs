//! JSONL trace files: one header line, then one `StepTrace` per line.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AlphaSchedule, Branch, BranchPrompts, DecodeStrategy, StepTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub strategy: String,
    pub alpha_mode: AlphaSchedule,
    pub backend: String,
    /// SHA-256 of each present branch prompt's token ids (little-endian u32).
    pub prompt_hashes: BTreeMap<String, String>,
}

impl TraceHeader {
    pub fn new(strategy: &DecodeStrategy, backend_identity: &str, prompts: &BranchPrompts) -> Self {
        let mut prompt_hashes = BTreeMap::new();
        for (branch, name) in [
            (Branch::Parametric, "parametric"),
            (Branch::Relevant, "relevant"),
            (Branch::Irrelevant, "irrelevant"),
        ] {
            if let Some(tokens) = prompts.get(branch) {
                let mut h = Sha256::new();
                for id in tokens.ids() {
                    h.update(id.to_le_bytes());
                }
                prompt_hashes.insert(name.to_string(), hex::encode(h.finalize()));
            }
        }
        TraceHeader {
            strategy: strategy.to_string(),
            alpha_mode: strategy.alpha_schedule(),
            backend: backend_identity.to_string(),
            prompt_hashes,
        }
    }
}

pub fn write_jsonl<W: Write>(mut out: W, header: &TraceHeader, traces: &[StepTrace]) -> Result<()> {
    let io = |e| Error::io("trace output", e);
    let line = serde_json::to_string(header).map_err(|e| Error::json("trace header", e))?;
    writeln!(out, "{line}").map_err(io)?;
    for t in traces {
        let line = serde_json::to_string(t).map_err(|e| Error::json("trace row", e))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<(TraceHeader, Vec<StepTrace>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("trace file is empty".into()))?;
    let header: TraceHeader =
        serde_json::from_str(header).map_err(|e| Error::json("trace header", e))?;
    let rows = lines
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json("trace row", e)))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
