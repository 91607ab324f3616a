//! Q-network assembly: the search supernet, the baseline, pruned networks
//! built from an [`ArchitectureSpec`], and FLOP accounting.
//!
//! Layout: conv stem → {conv → merge site → attention} × sites → GAP →
//! FC → ReLU → FC → scalar Q. The dilated branches read the stem output and
//! feed attention modules only.
//!
//! Inference is split into an action-independent [`QNetwork::encode`] (stem,
//! first tower stage, dilated branches) and the action-dependent
//! [`QNetwork::head`], so CEM can score many actions per state without
//! re-running the expensive early convolutions.

mod checkpoint;
mod config;
mod spec;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::Reader;
pub use config::{ConvStage, MapShape, NetworkConfig};
pub use spec::{ArchitectureSpec, SearchMetadata, SiteSpec, SPEC_FORMAT_VERSION};

use rand::Rng;

use crate::attention::{Peer, PeerAttentionModule, PeerId};
use crate::fusion::{FusionSupernet, MergeOpKind};
use crate::params::{truncated_normal_tensor, BoundParams, ParamStore};
use crate::rng::{stream, Subsystem};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::{Error, Result};

/// Logit magnitude used to saturate softmax/sigmoid when hardening.
const SATURATED_LOGIT: f64 = 1e4;

/// Edges whose weight is at or below this are dropped when pruning.
pub const EDGE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkKind {
    Search,
    Baseline,
    Pruned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteMerge {
    Supernet,
    Single(MergeOpKind),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Site {
    pub fusion: FusionSupernet,
    pub merge: SiteMerge,
    pub attention: Option<PeerAttentionModule>,
}

#[derive(Clone, Debug)]
pub struct QNetwork {
    config: NetworkConfig,
    kind: NetworkKind,
    sites: Vec<Site>,
    dilated_used: Vec<bool>,
    params: ParamStore,
}

/// Action-independent activations for a batch of states.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub trunk: Var,
    /// Pooled dilated-branch outputs, `None` for branches the network does
    /// not use.
    pub dilated: Vec<Option<Var>>,
}

/// [`Encoded`] detached from any tape.
#[derive(Clone, Debug)]
pub struct EncodedStates {
    pub trunk: Tensor,
    pub dilated: Vec<Option<Tensor>>,
}

impl EncodedStates {
    pub fn batch(&self) -> usize {
        self.trunk.shape()[0]
    }

    /// Repeats each state `times` times consecutively.
    pub fn repeat_rows(&self, times: usize) -> Self {
        Self {
            trunk: self.trunk.repeat_rows(times),
            dilated: self.dilated.iter().map(|d| d.as_ref().map(|t| t.repeat_rows(times))).collect(),
        }
    }
}

fn conv_name(stage: usize, role: &str) -> String {
    format!("conv.{}.{role}", stage + 1)
}

fn dilated_name(branch: usize, role: &str) -> String {
    format!("dilated.{}.{role}", branch + 1)
}

impl QNetwork {
    fn assemble(config: NetworkConfig, kind: NetworkKind, sites: Vec<Site>, dilated_used: Vec<bool>, seed: u64) -> Self {
        let mut rng = stream(seed, Subsystem::Init, 0);
        let mut params = ParamStore::new();
        let mut in_ch = config.image_channels;
        for (i, s) in config.stages.iter().enumerate() {
            let fan_in = s.kernel * s.kernel * in_ch;
            params.insert(
                conv_name(i, "weight"),
                truncated_normal_tensor(&mut rng, &[s.kernel, s.kernel, in_ch, s.channels], fan_in),
            );
            params.insert(conv_name(i, "bias"), Tensor::zeros(&[s.channels]));
            in_ch = s.channels;
        }
        let stem_ch = config.stages[0].channels;
        for (b, used) in dilated_used.iter().enumerate() {
            if *used {
                params.insert(
                    dilated_name(b, "weight"),
                    truncated_normal_tensor(&mut rng, &[3, 3, stem_ch, config.dilated_channels], 9 * stem_ch),
                );
                params.insert(dilated_name(b, "bias"), Tensor::zeros(&[config.dilated_channels]));
            }
        }
        for site in &sites {
            match site.merge {
                SiteMerge::Supernet => site.fusion.init_params(&mut params, &mut rng, &MergeOpKind::ALL, true),
                SiteMerge::Single(k) => site.fusion.init_params(&mut params, &mut rng, &[k], false),
            }
            if let Some(att) = &site.attention {
                att.init_params(&mut params, &mut rng);
            }
        }
        let last = config.stages.last().expect("validated").channels;
        params.insert(
            "head.hidden.weight",
            truncated_normal_tensor(&mut rng, &[last, config.head_hidden], last),
        );
        params.insert("head.hidden.bias", Tensor::zeros(&[config.head_hidden]));
        params.insert(
            "head.out.weight",
            truncated_normal_tensor(&mut rng, &[config.head_hidden, 1], config.head_hidden),
        );
        params.insert("head.out.bias", Tensor::zeros(&[1]));
        Self {
            config,
            kind,
            sites,
            dilated_used,
            params,
        }
    }

    fn fusion_for(config: &NetworkConfig, site: usize) -> FusionSupernet {
        let (h, w, c) = config.site_shape(site);
        FusionSupernet::new(site, h, w, c, config.action_dim)
    }

    fn peer(config: &NetworkConfig, id: PeerId) -> Peer {
        match id {
            PeerId::Action => Peer {
                id,
                channels: config.action_dim,
                spatial: None,
            },
            PeerId::Dilated(_) => {
                let (h, w, c) = config.dilated_shape();
                Peer {
                    id,
                    channels: c,
                    spatial: Some(h * w),
                }
            }
            PeerId::Site(j) => {
                let (h, w, c) = config.site_shape(j);
                Peer {
                    id,
                    channels: c,
                    spatial: Some(h * w),
                }
            }
        }
    }

    /// Every representation available to the attention module of `site`.
    pub fn candidate_peers(config: &NetworkConfig, site: usize) -> Vec<PeerId> {
        let mut ids = vec![PeerId::Action];
        ids.extend((1..=config.dilated_branch_rates.len()).map(PeerId::Dilated));
        ids.extend((1..=site).map(PeerId::Site));
        ids
    }

    /// Search network: a supernet at every site and a fully connected
    /// attention module after each.
    pub fn build_search_network(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let sites = (1..=config.num_fusion_sites)
            .map(|i| {
                let fusion = Self::fusion_for(config, i);
                let peers = Self::candidate_peers(config, i)
                    .into_iter()
                    .map(|id| Self::peer(config, id))
                    .collect();
                let attention = PeerAttentionModule::searched(i, fusion.channels, fusion.height * fusion.width, peers);
                Site {
                    fusion,
                    merge: SiteMerge::Supernet,
                    attention: Some(attention),
                }
            })
            .collect();
        let dilated = vec![true; config.dilated_branch_rates.len()];
        Ok(Self::assemble(config.clone(), NetworkKind::Search, sites, dilated, seed))
    }

    /// The conventional network: one `add` merge at the baseline site.
    pub fn build_baseline_network(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let spec = ArchitectureSpec::baseline(config.clone());
        let mut net = Self::from_spec(&spec, seed)?;
        net.kind = NetworkKind::Baseline;
        Ok(net)
    }

    fn from_spec(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let config = &spec.network;
        let mut dilated = vec![false; config.dilated_branch_rates.len()];
        let mut sites = Vec::with_capacity(spec.sites.len());
        for s in &spec.sites {
            let fusion = Self::fusion_for(config, s.index);
            let attention = if s.attention {
                let edges = spec.edges_into(s.index);
                for e in &edges {
                    if let PeerId::Dilated(j) = e.from {
                        dilated[j - 1] = true;
                    }
                }
                let peers = edges.iter().map(|e| Self::peer(config, e.from)).collect();
                let weights = edges.iter().map(|e| e.weight).collect();
                Some(PeerAttentionModule::fixed(
                    s.index,
                    fusion.channels,
                    fusion.height * fusion.width,
                    peers,
                    weights,
                )?)
            } else {
                None
            };
            sites.push(Site {
                fusion,
                merge: SiteMerge::Single(s.merge),
                attention,
            });
        }
        Ok(Self::assemble(config.clone(), NetworkKind::Pruned, sites, dilated, seed))
    }

    /// Network evaluating exactly the spec's merges and retained edges. With
    /// `params`, every tensor is copied by name; a missing name or a shape
    /// disagreement is a [`Error::ParamMismatch`].
    pub fn build_pruned_network(spec: &ArchitectureSpec, params: Option<&ParamStore>, seed: u64) -> Result<Self> {
        let mut net = Self::from_spec(spec, seed)?;
        if let Some(source) = params {
            net.copy_params_from(source)?;
        }
        Ok(net)
    }

    /// Copies every parameter this network owns from `source`.
    pub fn copy_params_from(&mut self, source: &ParamStore) -> Result<()> {
        let names: Vec<String> = self.params.names().cloned().collect();
        for name in names {
            let src = source
                .get(&name)
                .ok_or_else(|| Error::ParamMismatch(format!("source has no `{name}`")))?;
            let dst = self.params.get_mut(&name).expect("own name");
            if src.shape() != dst.shape() {
                return Err(Error::ParamMismatch(format!(
                    "`{name}`: source shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    /// Replaces the parameter store wholesale; names and shapes must match.
    pub fn set_params(&mut self, params: ParamStore) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ParamMismatch(format!(
                "{} tensors given, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.copy_params_from(&params)?;
        Ok(())
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn require_search(&self, what: &str) -> Result<()> {
        if self.kind != NetworkKind::Search {
            return Err(Error::Invalid(format!("{what} needs a search network, got {:?}", self.kind)));
        }
        Ok(())
    }

    /// Mixture weights per site (search networks only).
    pub fn mix_weights(&self) -> Result<Vec<Vec<f64>>> {
        self.require_search("mix_weights")?;
        self.sites.iter().map(|s| s.fusion.mix_weights(&self.params)).collect()
    }

    /// Attention edge weights per site.
    pub fn edge_weights(&self) -> Result<Vec<Vec<f64>>> {
        self.sites
            .iter()
            .map(|s| match &s.attention {
                Some(a) => a.edge_weights(&self.params),
                None => Ok(vec![]),
            })
            .collect()
    }

    /// Hardens every site and prunes edges at [`EDGE_THRESHOLD`].
    pub fn extract_architecture(&self, seed: u64, iterations: u64) -> Result<ArchitectureSpec> {
        self.require_search("extract_architecture")?;
        let mut sites = Vec::new();
        let mut edges = Vec::new();
        let mut mix_logits = Vec::new();
        let mut edge_logits = Vec::new();
        for s in &self.sites {
            sites.push(SiteSpec {
                index: s.fusion.site,
                merge: s.fusion.harden(&self.params)?,
                attention: s.attention.is_some(),
            });
            mix_logits.push(self.params.require(&s.fusion.mix_logits_name())?.data().to_vec());
            if let Some(a) = &s.attention {
                edges.extend(a.prune_edges(&self.params, EDGE_THRESHOLD)?);
                edge_logits.push(self.params.require(&a.edge_logits_name())?.data().to_vec());
            }
        }
        let spec = ArchitectureSpec {
            format_version: SPEC_FORMAT_VERSION,
            sites,
            edges,
            network: self.config.clone(),
            metadata: SearchMetadata {
                seed,
                iterations,
                mix_logits,
                edge_logits,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A copy of this search network whose logits are saturated to the
    /// extracted architecture: one-hot mixtures and zero weight on pruned
    /// edges, retained edges untouched.
    pub fn hardened(&self) -> Result<Self> {
        self.require_search("hardened")?;
        let mut net = self.clone();
        for s in &self.sites {
            let chosen = s.fusion.harden(&self.params)?;
            let logits = net
                .params
                .get_mut(&s.fusion.mix_logits_name())
                .ok_or_else(|| Error::MissingParam(s.fusion.mix_logits_name()))?;
            for (j, v) in logits.data_mut().iter_mut().enumerate() {
                *v = if j == chosen.index() { SATURATED_LOGIT } else { 0.0 };
            }
            if let Some(a) = &s.attention {
                let weights = a.edge_weights(&self.params)?;
                let h = net
                    .params
                    .get_mut(&a.edge_logits_name())
                    .ok_or_else(|| Error::MissingParam(a.edge_logits_name()))?;
                for (v, w) in h.data_mut().iter_mut().zip(weights) {
                    if w <= EDGE_THRESHOLD {
                        *v = -SATURATED_LOGIT;
                    }
                }
            }
        }
        Ok(net)
    }

    fn conv_stage(&self, tape: &mut Tape, p: &BoundParams, stage: usize, x: Var) -> Result<Var> {
        let s = self.config.stages[stage];
        let w = p.get(&conv_name(stage, "weight"))?;
        let b = p.get(&conv_name(stage, "bias"))?;
        let y = tape.conv2d(x, w, s.stride, 1)?;
        let y = tape.add(y, b)?;
        let y = tape.relu(y)?;
        Ok(if s.pool > 1 { tape.avg_pool(y, s.pool)? } else { y })
    }

    /// Stem, first tower stage and dilated branches for `images: N×S×S×C`.
    pub fn encode(&self, tape: &mut Tape, p: &BoundParams, images: Var) -> Result<Encoded> {
        let shape = tape.shape(images);
        let c = &self.config;
        if shape.len() != 4 || shape[1..] != [c.image_size, c.image_size, c.image_channels] {
            return Err(TensorError::ShapeMismatch {
                op: "network input",
                left: shape.to_vec(),
                right: vec![shape.first().copied().unwrap_or(0), c.image_size, c.image_size, c.image_channels],
            }
            .into());
        }
        let stem = self.conv_stage(tape, p, 0, images)?;
        let mut dilated = Vec::with_capacity(self.dilated_used.len());
        for (b, &used) in self.dilated_used.iter().enumerate() {
            if !used {
                dilated.push(None);
                continue;
            }
            let w = p.get(&dilated_name(b, "weight"))?;
            let bias = p.get(&dilated_name(b, "bias"))?;
            let y = tape.conv2d(stem, w, c.dilated_stride, c.dilated_branch_rates[b])?;
            let y = tape.add(y, bias)?;
            let y = tape.relu(y)?;
            dilated.push(Some(tape.global_avg_pool(y)?));
        }
        let trunk = self.conv_stage(tape, p, 1, stem)?;
        Ok(Encoded { trunk, dilated })
    }

    /// Remaining tower, merges, attention and the Q head; returns `N×1`.
    pub fn head(&self, tape: &mut Tape, p: &BoundParams, enc: &Encoded, actions: Var) -> Result<Var> {
        let n = tape.shape(enc.trunk)[0];
        if tape.shape(actions) != [n, self.config.action_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "network action",
                left: tape.shape(actions).to_vec(),
                right: vec![n, self.config.action_dim],
            }
            .into());
        }
        let mut x = enc.trunk;
        let mut fused: Vec<Var> = Vec::with_capacity(self.sites.len());
        for (k, site) in self.sites.iter().enumerate() {
            if k > 0 {
                x = self.conv_stage(tape, p, k + 1, x)?;
            }
            x = match site.merge {
                SiteMerge::Supernet => site.fusion.fuse(tape, p, x, actions)?,
                SiteMerge::Single(kind) => site.fusion.merge(tape, p, kind, x, actions)?,
            };
            fused.push(x);
            if let Some(att) = &site.attention {
                let peers = att
                    .peers
                    .iter()
                    .map(|peer| match peer.id {
                        PeerId::Action => Ok(actions),
                        PeerId::Dilated(j) => enc.dilated[j - 1]
                            .ok_or_else(|| Error::Invalid(format!("dilated branch {j} not computed"))),
                        PeerId::Site(j) => Ok(fused[j - 1]),
                    })
                    .collect::<Result<Vec<_>>>()?;
                x = att.attend(tape, p, x, &peers)?;
            }
        }
        let pooled = tape.global_avg_pool(x)?;
        let h = tape.matmul(pooled, p.get("head.hidden.weight")?)?;
        let h = tape.add(h, p.get("head.hidden.bias")?)?;
        let h = tape.relu(h)?;
        let q = tape.matmul(h, p.get("head.out.weight")?)?;
        Ok(tape.add(q, p.get("head.out.bias")?)?)
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, images: Var, actions: Var) -> Result<Var> {
        let enc = self.encode(tape, p, images)?;
        self.head(tape, p, &enc, actions)
    }

    /// Detached encoding of a batch of states.
    pub fn encode_states(&self, images: &Tensor) -> Result<EncodedStates> {
        let mut tape = Tape::no_grad();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(images.clone());
        let enc = self.encode(&mut tape, &p, x)?;
        Ok(EncodedStates {
            trunk: tape.value(enc.trunk).clone(),
            dilated: enc.dilated.iter().map(|d| d.map(|v| tape.value(v).clone())).collect(),
        })
    }

    /// Q values for pre-encoded states paired row-by-row with `actions`.
    pub fn head_values(&self, enc: &EncodedStates, actions: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let p = self.params.bind(&mut tape);
        let e = Encoded {
            trunk: tape.constant(enc.trunk.clone()),
            dilated: enc.dilated.iter().map(|d| d.as_ref().map(|t| tape.constant(t.clone()))).collect(),
        };
        let a = tape.constant(actions.clone());
        let q = self.head(&mut tape, &p, &e, a)?;
        Ok(tape.value(q).data().to_vec())
    }

    pub fn q_values(&self, images: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        let enc = self.encode_states(images)?;
        self.head_values(&enc, actions)
    }

    /// Analytic FLOPs for one example: 2 per multiply-accumulate, summed
    /// over convs, pooling, merges, attention and the head.
    pub fn count_flops(&self) -> f64 {
        let c = &self.config;
        let mut macs = 0.0;
        let mut size = c.image_size;
        let mut in_ch = c.image_channels;
        for s in &c.stages {
            let out = crate::tensor::conv_output_size(size, s.stride);
            macs += (out * out * s.kernel * s.kernel * in_ch * s.channels) as f64;
            if s.pool > 1 {
                macs += (out * out * s.channels) as f64;
            }
            size = out / s.pool;
            in_ch = s.channels;
        }
        let (dh, dw, dc) = c.dilated_shape();
        let stem_ch = c.stages[0].channels;
        let used = self.dilated_used.iter().filter(|&&u| u).count();
        macs += used as f64 * (dh * dw * 9 * stem_ch * dc) as f64;
        for site in &self.sites {
            macs += match site.merge {
                SiteMerge::Supernet => site.fusion.supernet_macs(),
                SiteMerge::Single(k) => site.fusion.macs(k),
            };
            if let Some(a) = &site.attention {
                macs += a.macs();
            }
        }
        let last = c.stages.last().expect("validated").channels;
        macs += (size * size * last) as f64;
        macs += (last * c.head_hidden + c.head_hidden) as f64;
        2.0 * macs
    }

    /// FLOPs spent in attention modules as a fraction of the whole network.
    pub fn attention_overhead(&self) -> f64 {
        let total = self.count_flops();
        self.sites
            .iter()
            .filter_map(|s| s.attention.as_ref())
            .map(|a| crate::attention::flop_overhead(a, total))
            .sum()
    }
}

/// Overwrites every architecture logit with a uniform draw in
/// `[-scale, scale]`.
pub fn random_logits<R: Rng + ?Sized>(net: &mut QNetwork, rng: &mut R, scale: f64) {
    let names: Vec<String> = net
        .params
        .names()
        .filter(|n| crate::params::group_of(n) == crate::params::ParamGroup::Architecture)
        .cloned()
        .collect();
    for name in names {
        let t = net.params.get_mut(&name).expect("own name");
        for v in t.data_mut() {
            *v = scale * (2.0 * rng.gen::<f64>() - 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(n: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = stream(seed, Subsystem::GradCheck, 0);
        let images = Tensor::from_fn(&[n, 32, 32, 3], |_| rng.gen());
        let actions = Tensor::from_fn(&[n, 9], |_| rng.gen::<f64>() * 2.0 - 1.0);
        (images, actions)
    }

    #[test]
    fn construction_is_deterministic() {
        let cfg = NetworkConfig::default();
        let a = QNetwork::build_search_network(&cfg, 3).unwrap();
        let b = QNetwork::build_search_network(&cfg, 3).unwrap();
        let c = QNetwork::build_search_network(&cfg, 4).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_logits_mix_uniformly_and_extract_to_noop() {
        let net = QNetwork::build_search_network(&NetworkConfig::default(), 0).unwrap();
        for w in net.mix_weights().unwrap() {
            assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        }
        let spec = net.extract_architecture(0, 0).unwrap();
        assert!(spec.sites.iter().all(|s| s.merge == MergeOpKind::NoOp));
        assert!(spec.edges.is_empty());
    }

    #[test]
    fn forward_shapes() {
        let cfg = NetworkConfig::default();
        let (images, actions) = inputs(8, 1);
        for net in [
            QNetwork::build_search_network(&cfg, 0).unwrap(),
            QNetwork::build_baseline_network(&cfg, 0).unwrap(),
        ] {
            assert_eq!(net.q_values(&images, &actions).unwrap().len(), 8);
        }
    }

    #[test]
    fn extraction_requires_search_network() {
        let net = QNetwork::build_baseline_network(&NetworkConfig::default(), 0).unwrap();
        assert!(net.extract_architecture(0, 0).is_err());
    }

    #[test]
    fn hand_set_logits_are_extracted() {
        let mut net = QNetwork::build_search_network(&NetworkConfig::default(), 0).unwrap();
        net.params_mut().get_mut("fusion.3.mix_logits").unwrap().data_mut()[3] = 2.0;
        let spec = net.extract_architecture(0, 0).unwrap();
        assert_eq!(spec.sites[2].merge, MergeOpKind::Hadamard);
    }

    #[test]
    fn flop_ordering() {
        let cfg = NetworkConfig::default();
        let search = QNetwork::build_search_network(&cfg, 0).unwrap();
        let baseline = QNetwork::build_baseline_network(&cfg, 0).unwrap();
        let pruned = QNetwork::build_pruned_network(&search.extract_architecture(0, 0).unwrap(), None, 0).unwrap();
        assert!(search.count_flops() > pruned.count_flops());
        assert!(search.count_flops() >= baseline.count_flops());
        assert!(pruned.count_flops() > 0.0);
    }

    #[test]
    fn param_copy_rejects_mismatched_stores() {
        let cfg = NetworkConfig::default();
        let baseline = QNetwork::build_baseline_network(&cfg, 0).unwrap();
        let mut spec = ArchitectureSpec::baseline(cfg);
        spec.sites[0].merge = MergeOpKind::Concat;
        let err = QNetwork::build_pruned_network(&spec, Some(baseline.params()), 0).unwrap_err();
        assert!(matches!(err, Error::ParamMismatch(_)));
    }
}
