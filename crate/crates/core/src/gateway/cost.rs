use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub usd_per_million_tokens_in: f64,
    pub usd_per_million_tokens_out: f64,
}

/// Model id to per-million-token prices. Loaded from a JSON object keyed by
/// model id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, ModelPrice>);

impl PriceTable {
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read price table {}: {e}", path.display()))?;
        let table: PriceTable = serde_json::from_str(&raw)
            .map_err(|e| format!("invalid price table {}: {e}", path.display()))?;
        for (model, p) in &table.0 {
            let valid = |v: f64| v.is_finite() && v >= 0.0;
            if !valid(p.usd_per_million_tokens_in) || !valid(p.usd_per_million_tokens_out) {
                return Err(format!("price for {model} must be a non-negative number"));
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, model: impl Into<String>, usd_in: f64, usd_out: f64) {
        self.0.insert(
            model.into(),
            ModelPrice {
                usd_per_million_tokens_in: usd_in,
                usd_per_million_tokens_out: usd_out,
            },
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub usd: f64,
    pub warning: Option<String>,
}

pub fn estimate_cost(tokens_in: u64, tokens_out: u64, model_id: &str, table: &PriceTable) -> CostEstimate {
    match table.0.get(model_id) {
        Some(p) => CostEstimate {
            usd: tokens_in as f64 * p.usd_per_million_tokens_in / 1e6
                + tokens_out as f64 * p.usd_per_million_tokens_out / 1e6,
            warning: None,
        },
        None => CostEstimate {
            usd: 0.0,
            warning: Some(format!("no price configured for model {model_id:?}; cost reported as 0")),
        },
    }
}
