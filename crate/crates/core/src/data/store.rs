//! On-disk posterior draws: one CSV per chain (a column per scalar
//! parameter, a row per stored draw) and a JSON manifest that echoes the
//! run and checksums every chain file. The manifest is written last, so a
//! directory without one never loads.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prior::Hyperparams;
use crate::sampler::{AdaptiveProposal, BlockAcceptance, ChainDraws, DrawLayout, PosteriorDraws, SamplerConfig};
use crate::{Error, Result};

pub const DRAW_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawManifest {
    pub format_version: u32,
    pub artifact_version: String,
    pub config: SamplerConfig,
    pub hyperparams: Hyperparams,
    pub layout: DrawLayout,
    pub chains: Vec<ChainRecord>,
    /// Per parameter, summed over chains; absent when chains are too short.
    pub ess: Vec<ParamEss>,
    /// Digests of the files the run read, for reproduction.
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub chain: usize,
    pub file: String,
    pub rows: usize,
    pub sha256: String,
    pub acceptance: Vec<BlockAcceptance>,
    pub proposals_after_burn_in: Vec<AdaptiveProposal>,
    pub proposals_final: Vec<AdaptiveProposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEss {
    pub name: String,
    pub ess: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn chain_file(chain: usize) -> String {
    format!("chain_{chain}.csv")
}

/// Serializes one chain; floats use the shortest representation that reads
/// back to the same bits.
pub fn write_chain_csv(chain: &ChainDraws, layout: &DrawLayout) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["draw".to_string(), "loglik".to_string()];
    header.extend(layout.column_names());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..chain.n_draws() {
        record.clear();
        record.push(i.to_string());
        record.push(chain.loglik[i].to_string());
        record.extend(chain.row(i).iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| Error::io("<chain writer>", e.into_error()))
}

/// Parses one chain file into `(params, loglik)`, requiring exactly `rows`
/// draws in the given layout.
pub fn parse_chain_csv(bytes: &[u8], layout: &DrawLayout, rows: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut expected = vec!["draw".to_string(), "loglik".to_string()];
    expected.extend(layout.column_names());
    let header = r.headers()?;
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Data("chain file header does not match the manifest layout".into()));
    }
    let width = layout.n_params();
    let mut params = Vec::with_capacity(rows.saturating_mul(width).min(1 << 24));
    let mut loglik = Vec::with_capacity(rows.min(1 << 20));
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width + 2 {
            return Err(Error::Data(format!("chain row {i} has {} fields, expected {}", rec.len(), width + 2)));
        }
        if rec[0].parse::<usize>().ok() != Some(i) {
            return Err(Error::Data(format!("chain row {i} is numbered {:?}", &rec[0])));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Data(format!("chain row {i}: {s:?} is not a number")))
        };
        loglik.push(parse(&rec[1])?);
        for field in rec.iter().skip(2) {
            params.push(parse(field)?);
        }
    }
    if loglik.len() != rows {
        return Err(Error::Data(format!("chain file has {} draws, manifest says {rows}", loglik.len())));
    }
    Ok((params, loglik))
}

pub fn parse_manifest(text: &str) -> Result<DrawManifest> {
    #[derive(Deserialize)]
    struct Probe {
        format_version: serde_json::Value,
    }
    let probe: Probe = serde_json::from_str(text)?;
    if probe.format_version != serde_json::json!(DRAW_FORMAT_VERSION) {
        return Err(Error::Version {
            found: probe.format_version.to_string(),
            expected: DRAW_FORMAT_VERSION.to_string(),
        });
    }
    let m: DrawManifest = serde_json::from_str(text)?;
    if m.chains.len() != m.config.n_chains {
        return Err(Error::Data(format!(
            "manifest lists {} chains, config has {}",
            m.chains.len(),
            m.config.n_chains
        )));
    }
    Ok(m)
}

/// Writes every chain and then the manifest into `dir`, creating it.
pub fn save_draws(
    dir: impl AsRef<Path>,
    draws: &PosteriorDraws,
    config: &SamplerConfig,
    hyperparams: &Hyperparams,
    inputs: Vec<InputDigest>,
) -> Result<DrawManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let _ = fs::remove_file(dir.join(MANIFEST_FILE));
    let mut chains = Vec::with_capacity(draws.chains.len());
    for c in &draws.chains {
        let bytes = write_chain_csv(c, &draws.layout)?;
        let file = chain_file(c.chain);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        chains.push(ChainRecord {
            chain: c.chain,
            file,
            rows: c.n_draws(),
            sha256: sha256_hex(&bytes),
            acceptance: c.acceptance.clone(),
            proposals_after_burn_in: c.proposals_after_burn_in.clone(),
            proposals_final: c.proposals_final.clone(),
        });
    }
    let ess = if draws.chains.iter().all(|c| c.n_draws() >= 10) {
        draws
            .layout
            .column_names()
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                draws.ess(i).map(|e| ParamEss { name, ess: e.value, degenerate: e.degenerate })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let manifest = DrawManifest {
        format_version: DRAW_FORMAT_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        hyperparams: hyperparams.clone(),
        layout: draws.layout.clone(),
        chains,
        ess,
        inputs,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a draw store, verifying the format version, every checksum and
/// every row count; any inconsistency is an error, never a partial load.
pub fn load_draws(dir: impl AsRef<Path>) -> Result<(PosteriorDraws, DrawManifest)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = parse_manifest(&text)?;
    let mut chains = Vec::with_capacity(manifest.chains.len());
    for rec in &manifest.chains {
        let path = dir.join(&rec.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != rec.sha256 {
            return Err(Error::Data(format!("{} is truncated or modified (checksum mismatch)", path.display())));
        }
        let (params, loglik) = parse_chain_csv(&bytes, &manifest.layout, rec.rows)?;
        chains.push(ChainDraws {
            chain: rec.chain,
            params,
            loglik,
            acceptance: rec.acceptance.clone(),
            proposals_after_burn_in: rec.proposals_after_burn_in.clone(),
            proposals_final: rec.proposals_final.clone(),
        });
    }
    let draws = PosteriorDraws {
        layout: manifest.layout.clone(),
        innovation: manifest.config.innovation,
        chains,
    };
    Ok((draws, manifest))
}
