//! Parameter checkpoints: one plain-text header line followed by the flat
//! parameter vector as little-endian `f64`.

use std::io::{BufRead, BufReader, Read, Write};

use super::actor::{Head, PolicyParams};
use super::critic::CriticParams;
use super::mlp::Topology;
use crate::error::{Error, Result};

const MAGIC: &str = "esbcpo-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub topology: Topology,
    pub head: Option<Head>,
    pub theta: Vec<f64>,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let sizes: Vec<String> = self.topology.sizes.iter().map(|s| s.to_string()).collect();
        let head = self.head.map(|h| h.to_string()).unwrap_or_else(|| "none".into());
        writeln!(
            out,
            "{MAGIC} kind={} sizes={} activation={} head={} len={}",
            self.kind,
            sizes.join(","),
            self.topology.activation,
            head,
            self.theta.len()
        )?;
        let mut bytes = Vec::with_capacity(self.theta.len() * 8);
        for v in &self.theta {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let rest = header
            .trim_end()
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Checkpoint("missing magic header".into()))?;
        let mut kind = None;
        let mut sizes = None;
        let mut activation = None;
        let mut head = None;
        let mut len = None;
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed header field `{kv}`")))?;
            match k {
                "kind" => kind = Some(v.to_string()),
                "sizes" => {
                    sizes = Some(
                        v.split(',')
                            .map(|s| s.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| Error::Checkpoint(e.to_string()))?,
                    )
                }
                "activation" => activation = Some(v.parse()?),
                "head" => head = if v == "none" { Some(None) } else { Some(Some(v.parse()?)) },
                "len" => len = Some(v.parse::<usize>().map_err(|e| Error::Checkpoint(e.to_string()))?),
                _ => return Err(Error::Checkpoint(format!("unknown header field `{k}`"))),
            }
        }
        let missing = |f: &str| Error::Checkpoint(format!("header lacks `{f}`"));
        let len = len.ok_or_else(|| missing("len"))?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != len * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} payload bytes, found {}",
                len * 8,
                bytes.len()
            )));
        }
        let theta = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            kind: kind.ok_or_else(|| missing("kind"))?,
            topology: Topology {
                sizes: sizes.ok_or_else(|| missing("sizes"))?,
                activation: activation.ok_or_else(|| missing("activation"))?,
            },
            head: head.ok_or_else(|| missing("head"))?,
            theta,
        })
    }

    pub fn from_policy(p: &PolicyParams) -> Self {
        Self {
            kind: "actor".into(),
            topology: p.topology.clone(),
            head: Some(p.head),
            theta: p.theta.clone(),
        }
    }

    pub fn into_policy(self) -> Result<PolicyParams> {
        let head = self
            .head
            .ok_or_else(|| Error::Checkpoint("actor checkpoint without head".into()))?;
        PolicyParams::from_parts(self.topology, head, self.theta)
    }

    /// Reward and cost critic checkpoints, in that order.
    pub fn from_critics(c: &CriticParams) -> [Self; 2] {
        [
            Self {
                kind: "critic_r".into(),
                topology: c.topology.clone(),
                head: None,
                theta: c.phi_r.clone(),
            },
            Self {
                kind: "critic_c".into(),
                topology: c.topology.clone(),
                head: None,
                theta: c.phi_c.clone(),
            },
        ]
    }

    pub fn into_critics(reward: Self, cost: Self) -> Result<CriticParams> {
        if reward.topology != cost.topology {
            return Err(Error::Checkpoint("critic topologies differ".into()));
        }
        for c in [&reward, &cost] {
            if c.theta.len() != c.topology.param_count() {
                return Err(Error::Checkpoint(format!("{} length mismatch", c.kind)));
            }
        }
        Ok(CriticParams {
            topology: reward.topology,
            phi_r: reward.theta,
            phi_c: cost.theta,
        })
    }
}
