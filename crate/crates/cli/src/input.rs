use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use hfa_core::{parse_games, ConferenceMap, GameSet};

use crate::output::{sha256_hex, InputDigest, Metadata};

/// Read a file and record its digest in `meta`.
pub fn read_input(path: &Path, role: &str, meta: &mut Metadata) -> Result<Vec<u8>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    meta.inputs.push(InputDigest {
        role: role.into(),
        file: path
            .file_name()
            .map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned()),
        sha256: sha256_hex(&bytes),
    });
    Ok(bytes)
}

pub fn load_games(path: &Path, meta: &mut Metadata) -> Result<GameSet> {
    let bytes = read_input(path, "games", meta)?;
    parse_games(bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_conferences(path: &Path, meta: &mut Metadata) -> Result<ConferenceMap> {
    let bytes = read_input(path, "conferences", meta)?;
    ConferenceMap::parse(bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))
}
