//! Scenario files: nodes, links, sessions, spectrum and channel.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::channel::{ChannelModel, LinkGeometry};
use super::NetsimError;

pub const DEFAULT_PACKET_SIZE: u32 = 2048;
pub const FEC_RATES: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u32,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: u32,
    pub tx: u32,
    pub rx: u32,
    #[serde(default)]
    pub band: usize,
}

fn default_packet_size() -> u32 {
    DEFAULT_PACKET_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub id: u32,
    pub source: u32,
    pub destination: u32,
    /// Link ids from source to destination.
    pub path: Vec<u32>,
    /// Packets to deliver; `0` means unlimited.
    #[serde(default)]
    pub packet_count: u64,
    #[serde(default = "default_packet_size")]
    pub packet_size: u32,
    #[serde(default)]
    pub start_slot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub count: usize,
    pub bandwidth_hz: f64,
}

fn default_fec() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fec")]
    pub fec_rate: f64,
    pub bands: Bands,
    #[serde(default)]
    pub channel: ChannelModel,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub sessions: Vec<SessionSpec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, NetsimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| NetsimError::Format(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario, NetsimError> {
        let text = std::fs::read_to_string(path).map_err(|e| NetsimError::Format(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    pub fn node_pos(&self, id: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn link_pos(&self, id: u32) -> Option<usize> {
        self.links.iter().position(|l| l.id == id)
    }

    pub fn session_pos(&self, id: u32) -> Option<usize> {
        self.sessions.iter().position(|s| s.id == id)
    }

    /// Session path as link positions.
    pub fn path(&self, s: usize) -> Vec<usize> {
        self.sessions[s]
            .path
            .iter()
            .map(|l| self.link_pos(*l).expect("validated path"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), NetsimError> {
        let fmt = |m: String| Err(NetsimError::Format(m));
        let topo = |m: String| Err(NetsimError::Topology(m));
        if self.bands.count == 0 || !(self.bands.bandwidth_hz > 0.0) {
            return fmt("bands.count and bands.bandwidth_hz must be positive".into());
        }
        let m = &self.channel;
        if !(2.0..=6.0).contains(&m.path_loss_exponent) {
            return fmt(format!("path_loss_exponent {} outside [2, 6]", m.path_loss_exponent));
        }
        if !(m.noise_floor_mw > 0.0) || !(m.reference_gain > 0.0) || !(m.rate_efficiency > 0.0) {
            return fmt("noise_floor_mw, reference_gain and rate_efficiency must be positive".into());
        }
        if !FEC_RATES.iter().any(|f| (f - self.fec_rate).abs() < 1e-9) {
            return fmt(format!("fec_rate {} not in {FEC_RATES:?}", self.fec_rate));
        }
        for (what, ids) in [
            ("node", self.nodes.iter().map(|n| n.id).collect::<Vec<_>>()),
            ("link", self.links.iter().map(|l| l.id).collect()),
            ("session", self.sessions.iter().map(|s| s.id).collect()),
        ] {
            let set: BTreeSet<u32> = ids.iter().copied().collect();
            if set.len() != ids.len() {
                return fmt(format!("duplicate {what} id"));
            }
        }
        for l in &self.links {
            if self.node_pos(l.tx).is_none() || self.node_pos(l.rx).is_none() || l.tx == l.rx {
                return topo(format!("link {} has bad endpoints {} -> {}", l.id, l.tx, l.rx));
            }
            if l.band >= self.bands.count {
                return fmt(format!("link {} uses band {} of {}", l.id, l.band, self.bands.count));
            }
        }
        for s in &self.sessions {
            if s.path.is_empty() {
                return topo(format!("session {} has an empty path", s.id));
            }
            if s.packet_size == 0 {
                return fmt(format!("session {} has zero packet size", s.id));
            }
            let mut at = s.source;
            for lid in &s.path {
                let Some(p) = self.link_pos(*lid) else {
                    return topo(format!("session {} uses unknown link {lid}", s.id));
                };
                let l = &self.links[p];
                if l.tx != at {
                    return topo(format!("session {} path breaks at link {lid}", s.id));
                }
                at = l.rx;
            }
            if at != s.destination {
                return topo(format!("session {} path ends at node {at}, not {}", s.id, s.destination));
            }
        }
        Ok(())
    }

    /// Propagation matrix and per-link capacity scale.
    pub fn geometry(&self) -> LinkGeometry {
        let pos = |id: u32| self.nodes[self.node_pos(id).unwrap()].position;
        let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let gain = self
            .links
            .iter()
            .map(|i| {
                self.links
                    .iter()
                    .map(|j| self.channel.gain(dist(pos(i.tx), pos(j.rx))))
                    .collect()
            })
            .collect();
        let scale = (0..self.links.len())
            .map(|l| {
                // Links carry the packet size of their sessions; the smallest wins on a shared link.
                let ps = self
                    .sessions
                    .iter()
                    .enumerate()
                    .filter(|(s, _)| self.path(*s).contains(&l))
                    .map(|(_, s)| s.packet_size)
                    .min()
                    .unwrap_or(DEFAULT_PACKET_SIZE);
                self.channel.rate_efficiency * self.bands.bandwidth_hz / ps as f64 * (1.0 - self.fec_rate)
            })
            .collect();
        LinkGeometry {
            gain,
            band: self.links.iter().map(|l| l.band).collect(),
            scale,
            model: self.channel,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
duration = 10
[bands]
count = 1
bandwidth_hz = 200000
[[nodes]]
id = 0
position = [0, 0]
[[nodes]]
id = 1
position = [10, 0]
[[nodes]]
id = 2
position = [20, 0]
[[links]]
id = 0
tx = 0
rx = 1
[[links]]
id = 1
tx = 1
rx = 2
[[sessions]]
id = 1
source = 0
destination = 2
path = [0, 1]
"#;

    #[test]
    fn loads_with_defaults() {
        let s = Scenario::from_toml(TINY).unwrap();
        assert_eq!(s.sessions[0].packet_size, 2048);
        assert_eq!(s.path(0), vec![0, 1]);
        let g = s.geometry();
        assert!((g.scale[0] - 0.01 * 200000.0 / 2048.0 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn broken_path_is_topology_error() {
        let bad = TINY.replace("path = [0, 1]", "path = [1, 0]");
        assert!(matches!(Scenario::from_toml(&bad), Err(NetsimError::Topology(_))));
        let bad = TINY.replace("count = 1", "count = 0");
        assert!(matches!(Scenario::from_toml(&bad), Err(NetsimError::Format(_))));
    }
}
