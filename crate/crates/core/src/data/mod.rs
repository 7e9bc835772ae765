//! Death-count panels, synthetic data and the posterior draw store.

mod panel;
mod store;
mod synthetic;

pub use panel::{
    load_panel, load_totals, parse_panel, parse_totals, round_preserving_total, scale_to_totals, DeathPanel,
};
pub use store::{
    load_draws, parse_chain_csv, parse_manifest, save_draws, sha256_hex, write_chain_csv, ChainRecord,
    DrawManifest, InputDigest, ParamEss, DRAW_FORMAT_VERSION, MANIFEST_FILE,
};
pub use synthetic::{generate_synthetic, SyntheticSpec, SyntheticTruth};
