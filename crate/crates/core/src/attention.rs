//! Peer-attention gating between network sites.
//!
//! Site `i` can be gated by any representation computed before it: the raw
//! action vector, the dilated side branches and the fused outputs of sites
//! `1..=i`. Every peer is pooled to a vector, weighted by its edge weight
//! `σ(h_v)` (searched) or a frozen constant (pruned), projected to `C_i`
//! channels, and the sum drives a channel gate:
//!
//! `out = x ⊙ σ(Σ_v W_v · (σ(h_v) · GAP(v)))`
//!
//! A module with no retained peers reduces to the constant gate `σ(0) = ½`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::params::{truncated_normal_tensor, BoundParams, ParamStore};
use crate::tensor::{sigmoid_value, Tape, Tensor, TensorError, Var};
use crate::{Error, Result};

/// A representation that can feed an attention edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PeerId {
    Action,
    /// Dilated side branch, 1-based.
    Dilated(usize),
    /// Fused output of a site, 1-based.
    Site(usize),
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeerId::Action => f.write_str("action"),
            PeerId::Dilated(i) => write!(f, "dilated.{i}"),
            PeerId::Site(i) => write!(f, "site.{i}"),
        }
    }
}

impl FromStr for PeerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "action" {
            return Ok(PeerId::Action);
        }
        let bad = || Error::Invalid(format!("unknown peer `{s}`"));
        let (kind, idx) = s.split_once('.').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        if idx == 0 || idx.to_string() != s[kind.len() + 1..] {
            return Err(bad());
        }
        match kind {
            "dilated" => Ok(PeerId::Dilated(idx)),
            "site" => Ok(PeerId::Site(idx)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for PeerId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PeerId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A retained edge: `from` gates site `to` with a frozen weight in `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionEdge {
    pub from: PeerId,
    pub to: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Peer {
    pub id: PeerId,
    pub channels: usize,
    /// `H·W` for feature maps, `None` for vectors (which skip pooling).
    pub spatial: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
enum EdgeWeights {
    Learned,
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeerAttentionModule {
    pub site: usize,
    pub channels: usize,
    pub spatial: usize,
    pub peers: Vec<Peer>,
    weights: EdgeWeights,
}

impl PeerAttentionModule {
    /// Search-mode module with one learned logit per peer.
    pub fn searched(site: usize, channels: usize, spatial: usize, peers: Vec<Peer>) -> Self {
        Self {
            site,
            channels,
            spatial,
            peers,
            weights: EdgeWeights::Learned,
        }
    }

    /// Module whose edge weights are frozen constants.
    pub fn fixed(site: usize, channels: usize, spatial: usize, peers: Vec<Peer>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != peers.len() {
            return Err(Error::Invalid(format!(
                "attention site {site}: {} weights for {} peers",
                weights.len(),
                peers.len()
            )));
        }
        Ok(Self {
            site,
            channels,
            spatial,
            peers,
            weights: EdgeWeights::Fixed(weights),
        })
    }

    pub fn is_searched(&self) -> bool {
        self.weights == EdgeWeights::Learned
    }

    pub fn edge_logits_name(&self) -> String {
        format!("attention.{}.edge_logits", self.site)
    }

    pub fn proj_name(&self, peer: PeerId) -> String {
        format!("attention.{}.proj.{peer}.weight", self.site)
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<_> = self
            .peers
            .iter()
            .map(|p| (self.proj_name(p.id), vec![p.channels, self.channels]))
            .collect();
        if self.is_searched() {
            out.push((self.edge_logits_name(), vec![self.peers.len()]));
        }
        out
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for p in &self.peers {
            store.insert(
                self.proj_name(p.id),
                truncated_normal_tensor(rng, &[p.channels, self.channels], p.channels),
            );
        }
        if self.is_searched() {
            store.insert(self.edge_logits_name(), Tensor::zeros(&[self.peers.len()]));
        }
    }

    /// Gates `x: N×H×W×C` by the peers, given in the module's peer order.
    pub fn attend(&self, tape: &mut Tape, p: &BoundParams, x: Var, peers: &[Var]) -> Result<Var> {
        if peers.len() != self.peers.len() {
            return Err(Error::Invalid(format!(
                "attention site {}: expected {} peers, got {}",
                self.site,
                self.peers.len(),
                peers.len()
            )));
        }
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 || xs[3] != self.channels {
            return Err(TensorError::Rank {
                op: "attention input",
                expected: 4,
                shape: xs,
            }
            .into());
        }
        let n = xs[0];
        let weights = match &self.weights {
            EdgeWeights::Learned => {
                let h = p.get(&self.edge_logits_name())?;
                Some(tape.sigmoid(h)?)
            }
            EdgeWeights::Fixed(w) if !w.is_empty() => Some(tape.constant(Tensor::vector(w))),
            EdgeWeights::Fixed(_) => None,
        };
        let mut logits: Option<Var> = None;
        for (k, (&v, peer)) in peers.iter().zip(&self.peers).enumerate() {
            let pooled = if tape.shape(v).len() == 4 {
                tape.global_avg_pool(v)?
            } else {
                v
            };
            let ps = tape.shape(pooled);
            if ps != [n, peer.channels] {
                return Err(TensorError::ShapeMismatch {
                    op: "attention peer",
                    left: ps.to_vec(),
                    right: vec![n, peer.channels],
                }
                .into());
            }
            let wk = tape.select(weights.expect("peers imply weights"), k)?;
            let scaled = tape.mul(pooled, wk)?;
            let proj = p.get(&self.proj_name(peer.id))?;
            let term = tape.matmul(scaled, proj)?;
            logits = Some(match logits {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let logits = match logits {
            Some(l) => l,
            None => tape.constant(Tensor::zeros(&[n, self.channels])),
        };
        let gate = tape.sigmoid(logits)?;
        let gate = tape.reshape(gate, &[n, 1, 1, self.channels])?;
        Ok(tape.mul(x, gate)?)
    }

    /// Current edge weights `σ(h)` (or the frozen constants).
    pub fn edge_weights(&self, store: &ParamStore) -> Result<Vec<f64>> {
        match &self.weights {
            EdgeWeights::Learned => Ok(store
                .require(&self.edge_logits_name())?
                .data()
                .iter()
                .map(|&h| sigmoid_value(h))
                .collect()),
            EdgeWeights::Fixed(w) => Ok(w.clone()),
        }
    }

    /// Edges whose weight is strictly above `threshold`.
    pub fn prune_edges(&self, store: &ParamStore, threshold: f64) -> Result<Vec<AttentionEdge>> {
        Ok(self
            .edge_weights(store)?
            .into_iter()
            .zip(&self.peers)
            .filter(|(w, _)| *w > threshold)
            .map(|(weight, peer)| AttentionEdge {
                from: peer.id,
                to: self.site,
                weight,
            })
            .collect())
    }

    /// Multiply-accumulates for one example: peer pooling, scaling,
    /// projections and the final gate.
    pub fn macs(&self) -> f64 {
        let c = self.channels as f64;
        let peers: f64 = self
            .peers
            .iter()
            .map(|p| {
                let cv = p.channels as f64;
                let pool = p.spatial.map_or(0.0, |s| (s as f64) * cv);
                pool + cv + cv * c
            })
            .sum();
        peers + (self.spatial as f64) * c
    }
}

/// Fraction of a network's FLOPs spent in `module`.
pub fn flop_overhead(module: &PeerAttentionModule, network_flops: f64) -> f64 {
    2.0 * module.macs() / network_flops
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peer_ids_round_trip() {
        for id in [PeerId::Action, PeerId::Dilated(2), PeerId::Site(5)] {
            assert_eq!(id.to_string().parse::<PeerId>().unwrap(), id);
        }
        for bad in ["", "site", "site.0", "site.x", "conv.1", "site.01", "site.-1"] {
            assert!(bad.parse::<PeerId>().is_err(), "{bad}");
        }
    }

    fn module() -> PeerAttentionModule {
        PeerAttentionModule::searched(
            2,
            3,
            4,
            vec![
                Peer {
                    id: PeerId::Action,
                    channels: 2,
                    spatial: None,
                },
                Peer {
                    id: PeerId::Site(1),
                    channels: 3,
                    spatial: Some(4),
                },
            ],
        )
    }

    #[test]
    fn zero_logits_keep_no_edges_at_half() {
        let m = module();
        let mut store = ParamStore::new();
        m.init_params(&mut store, &mut rand::thread_rng());
        assert!(m.prune_edges(&store, 0.5).unwrap().is_empty());
        store.get_mut(&m.edge_logits_name()).unwrap().data_mut()[1] = 0.1;
        let kept = m.prune_edges(&store, 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].from, PeerId::Site(1));
        assert_eq!(kept[0].to, 2);
    }

    #[test]
    fn empty_fixed_module_halves_input() {
        let m = PeerAttentionModule::fixed(1, 2, 1, vec![], vec![]).unwrap();
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![2.0, -4.0]).unwrap());
        let y = m.attend(&mut tape, &p, x, &[]).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0]);
    }
}
