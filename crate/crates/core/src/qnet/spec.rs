use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NetworkConfig;
use crate::attention::{AttentionEdge, PeerId};
use crate::fusion::MergeOpKind;
use crate::{Error, Result};

pub const SPEC_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub index: usize,
    pub merge: MergeOpKind,
    /// Whether the site has an attention module at all. A module without
    /// retained edges still applies the constant half gate.
    pub attention: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchMetadata {
    pub seed: u64,
    pub iterations: u64,
    pub mix_logits: Vec<Vec<f64>>,
    pub edge_logits: Vec<Vec<f64>>,
}

/// A fixed architecture: one merge per site plus the retained edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub format_version: u32,
    pub sites: Vec<SiteSpec>,
    pub edges: Vec<AttentionEdge>,
    pub network: NetworkConfig,
    pub metadata: SearchMetadata,
}

impl ArchitectureSpec {
    /// The baseline as a spec: a single `add` at the configured site, no
    /// attention.
    pub fn baseline(network: NetworkConfig) -> Self {
        let sites = (1..=network.num_fusion_sites)
            .map(|index| SiteSpec {
                index,
                merge: if index == network.baseline_site {
                    MergeOpKind::Add
                } else {
                    MergeOpKind::NoOp
                },
                attention: false,
            })
            .collect();
        Self {
            format_version: SPEC_FORMAT_VERSION,
            sites,
            edges: vec![],
            network,
            metadata: SearchMetadata::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.format_version != SPEC_FORMAT_VERSION {
            return bad(format!("unsupported spec format version {}", self.format_version));
        }
        self.network.validate()?;
        let n = self.network.num_fusion_sites;
        if self.sites.len() != n {
            return bad(format!("{} sites listed, network has {n}", self.sites.len()));
        }
        for (i, s) in self.sites.iter().enumerate() {
            if s.index != i + 1 {
                return bad(format!("site {} listed at position {}", s.index, i + 1));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            let site = self
                .sites
                .get(e.to.wrapping_sub(1))
                .ok_or_else(|| Error::Config(format!("edge into unknown site {}", e.to)))?;
            if !site.attention {
                return bad(format!("edge into site {} which has no attention module", e.to));
            }
            let valid_from = match e.from {
                PeerId::Action => true,
                PeerId::Dilated(j) => (1..=self.network.dilated_branch_rates.len()).contains(&j),
                PeerId::Site(j) => (1..=e.to).contains(&j),
            };
            if !valid_from {
                return bad(format!("edge {} -> site {} has no source in the graph", e.from, e.to));
            }
            if !(e.weight > 0.0 && e.weight < 1.0) {
                return bad(format!("edge {} -> site {} weight {} outside (0, 1)", e.from, e.to, e.weight));
            }
            if !seen.insert((e.to, e.from)) {
                return bad(format!("duplicate edge {} -> site {}", e.from, e.to));
            }
        }
        Ok(())
    }

    /// Edges into `site`, in canonical peer order.
    pub fn edges_into(&self, site: usize) -> Vec<&AttentionEdge> {
        let mut edges: Vec<_> = self.edges.iter().filter(|e| e.to == site).collect();
        edges.sort_by_key(|e| e.from);
        edges
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("architecture spec", e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::format("architecture spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Human-readable listing of merges and edges.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let merges = self.sites.iter().filter(|s| s.merge != MergeOpKind::NoOp).count();
        let _ = writeln!(out, "architecture: {merges} merges, {} edges", self.edges.len());
        for s in &self.sites {
            let (h, w, c) = self.network.site_shape(s.index);
            let attention = if s.attention { "attention" } else { "no attention" };
            let _ = writeln!(out, "site {} [{h}x{w}x{c}]: {} ({attention})", s.index, s.merge);
            for e in self.edges_into(s.index) {
                let _ = writeln!(out, "  {} -> site {}  w={:.4}", e.from, e.to, e.weight);
            }
        }
        out
    }
}
