//! Export of normalized feature vectors for offline embedding tools (t-SNE,
//! UMAP, spreadsheet archaeology). One CSV row per sampled `(asset, t)`.

use std::io::Write;

use super::FeaturePanel;
use crate::error::{bail, Result};

/// Write every `stride`-th post-warmup feature row, asset-major then time,
/// as `market,asset,t,f1..f11`. Returns the number of data rows written.
///
/// Sampling starts at the warmup boundary, i.e. rows satisfy
/// `t ≡ warmup (mod stride)`. Requires a normalized panel — raw magnitudes
/// would make the embedding distances meaningless across features.
pub fn export_embedding_samples(
    panel: &FeaturePanel,
    stride: usize,
    out: &mut impl Write,
) -> Result<usize> {
    if stride == 0 {
        bail!(Validation, "stride must be positive");
    }
    if panel.norm().is_none() {
        bail!(Validation, "embedding export requires a normalized feature panel");
    }

    let mut header = String::from("market,asset,t");
    for i in 1..=panel.n_features() {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(out, "{header}")?;

    let mut rows = 0usize;
    for (a, ticker) in panel.tickers().iter().enumerate() {
        for t in (panel.warmup()..panel.len()).step_by(stride) {
            let mut line = format!("{},{},{}", panel.market(), ticker, t);
            for v in panel.row(a, t) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
            rows += 1;
        }
    }
    Ok(rows)
}
