//! Benchmark configuration: the flat `key = value` file format, the two
//! scenario presets and validation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::id::IdSpace;
use crate::overlay::{OverlayParams, Protocol};
use crate::sim::Time;
use crate::store::SkillId;
use crate::workload::{Catalog, ChurnModel, QueryPlan, RegimeKind, Scenario, SKILL_COUNT};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Stationary,
    Churn,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stationary" => Ok(Preset::Stationary),
            "churn" => Ok(Preset::Churn),
            other => Err(format!("unknown preset `{other}` (stationary|churn)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    pub protocols: Vec<Protocol>,
    pub nodes: usize,
    pub reps: u32,
    pub seed: u64,
    pub regimes: Vec<RegimeKind>,
    pub horizon: Time,
    pub query_rate: f64,
    pub target_skill: SkillId,
    pub top_k: usize,
    pub churn_enabled: bool,
    pub session_mean: Time,
    pub downtime_mean: Time,
    pub publish_spread: Time,
    pub replication: usize,
    pub ttl: Time,
    pub republish_period: Time,
    pub latency: Time,
    pub loss: f64,
    pub underlay_avg_degree: f64,
    pub id_bits: u32,
    pub pastry_b: u32,
    pub pastry_leafset: usize,
    pub kad_k: usize,
    pub kad_alpha: usize,
    pub stabilize_period: Time,
    pub successor_list: usize,
}

pub const KEYS: [&str; 26] = [
    "protocol",
    "nodes",
    "reps",
    "seed",
    "regime",
    "horizon",
    "query_rate",
    "target_skill",
    "top_k",
    "churn_enabled",
    "session_mean",
    "downtime_mean",
    "publish_spread",
    "replication",
    "ttl",
    "republish_period",
    "latency",
    "loss",
    "underlay_avg_degree",
    "id_bits",
    "pastry_b",
    "pastry_leafset",
    "kad_k",
    "kad_alpha",
    "stabilize_period",
    "successor_list",
];

impl BenchmarkConfig {
    pub fn preset(p: Preset) -> Self {
        let stationary = Self {
            protocols: Protocol::ALL.to_vec(),
            nodes: 4096,
            reps: 10,
            seed: 1,
            regimes: vec![RegimeKind::Immediate, RegimeKind::Warmed],
            horizon: 40.0,
            query_rate: 0.125,
            target_skill: SkillId(5),
            top_k: 1,
            churn_enabled: false,
            session_mean: 100.0,
            downtime_mean: 30.0,
            publish_spread: 0.0,
            replication: 3,
            ttl: 60.0,
            republish_period: 20.0,
            latency: 1.0,
            loss: 0.0,
            underlay_avg_degree: 6.0,
            id_bits: 64,
            pastry_b: 4,
            pastry_leafset: 16,
            kad_k: 20,
            kad_alpha: 3,
            stabilize_period: 2.0,
            successor_list: 4,
        };
        match p {
            Preset::Stationary => stationary,
            Preset::Churn => Self {
                reps: 1,
                regimes: vec![RegimeKind::WarmupOnly],
                horizon: 60.0,
                query_rate: 0.1,
                churn_enabled: true,
                publish_spread: 20.0,
                ..stationary
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses the `key = value` format. Keys left out keep their
    /// stationary-preset value; the result is validated.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::preset(Preset::Stationary);
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            let Some(key) = KEYS.iter().copied().find(|k| *k == key) else {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            };
            if !seen.insert(key) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &'static str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::Invalid {
                key,
                msg: format!("cannot parse `{v}`"),
            })
        }
        fn list<T: std::str::FromStr<Err = String>>(
            key: &'static str,
            v: &str,
        ) -> Result<Vec<T>, ConfigError> {
            v.split(',')
                .map(|s| s.parse().map_err(|msg| ConfigError::Invalid { key, msg }))
                .collect()
        }
        match key {
            "protocol" => self.protocols = list(key, value)?,
            "nodes" => self.nodes = num(key, value)?,
            "reps" => self.reps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "regime" => self.regimes = list(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "query_rate" => self.query_rate = num(key, value)?,
            "target_skill" => self.target_skill = parse_skill(value)?,
            "top_k" => self.top_k = num(key, value)?,
            "churn_enabled" => self.churn_enabled = num(key, value)?,
            "session_mean" => self.session_mean = num(key, value)?,
            "downtime_mean" => self.downtime_mean = num(key, value)?,
            "publish_spread" => self.publish_spread = num(key, value)?,
            "replication" => self.replication = num(key, value)?,
            "ttl" => self.ttl = num(key, value)?,
            "republish_period" => self.republish_period = num(key, value)?,
            "latency" => self.latency = num(key, value)?,
            "loss" => self.loss = num(key, value)?,
            "underlay_avg_degree" => self.underlay_avg_degree = num(key, value)?,
            "id_bits" => self.id_bits = num(key, value)?,
            "pastry_b" => self.pastry_b = num(key, value)?,
            "pastry_leafset" => self.pastry_leafset = num(key, value)?,
            "kad_k" => self.kad_k = num(key, value)?,
            "kad_alpha" => self.kad_alpha = num(key, value)?,
            "stabilize_period" => self.stabilize_period = num(key, value)?,
            "successor_list" => self.successor_list = num(key, value)?,
            _ => unreachable!("key list and setter out of sync"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, key: &'static str, msg: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key,
                    msg: msg.to_string(),
                })
            }
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        check(
            !self.protocols.is_empty(),
            "protocol",
            "at least one protocol",
        )?;
        check(self.nodes >= 1, "nodes", "must be at least 1")?;
        check(self.reps >= 1, "reps", "must be at least 1")?;
        check(!self.regimes.is_empty(), "regime", "at least one regime")?;
        check(positive(self.horizon), "horizon", "must be positive")?;
        check(positive(self.query_rate), "query_rate", "must be positive")?;
        check(self.top_k >= 1, "top_k", "must be at least 1")?;
        check(
            Catalog::new(self.nodes).providers(self.target_skill) > 0,
            "target_skill",
            "no agent advertises this skill at this node count",
        )?;
        check(
            positive(self.session_mean),
            "session_mean",
            "must be positive",
        )?;
        check(
            positive(self.downtime_mean),
            "downtime_mean",
            "must be positive",
        )?;
        check(
            self.publish_spread.is_finite() && self.publish_spread >= 0.0,
            "publish_spread",
            "must be non-negative",
        )?;
        check(self.replication >= 1, "replication", "must be at least 1")?;
        check(positive(self.ttl), "ttl", "must be positive")?;
        check(
            positive(self.republish_period),
            "republish_period",
            "must be positive",
        )?;
        check(positive(self.latency), "latency", "must be positive")?;
        check(
            (0.0..=1.0).contains(&self.loss),
            "loss",
            "must lie in [0, 1]",
        )?;
        check(
            self.underlay_avg_degree.is_finite() && self.underlay_avg_degree >= 0.0,
            "underlay_avg_degree",
            "must be non-negative",
        )?;
        let space = IdSpace::new(self.id_bits).map_err(|e| ConfigError::Invalid {
            key: "id_bits",
            msg: e.to_string(),
        })?;
        check(
            space.size() >= self.nodes as u128,
            "id_bits",
            "identifier space smaller than the node count",
        )?;
        space
            .check_digits(self.pastry_b)
            .map_err(|e| ConfigError::Invalid {
                key: "pastry_b",
                msg: e.to_string(),
            })?;
        check(
            self.pastry_leafset >= 2 && self.pastry_leafset.is_multiple_of(2),
            "pastry_leafset",
            "must be even and at least 2",
        )?;
        check(self.kad_k >= 1, "kad_k", "must be at least 1")?;
        check(self.kad_alpha >= 1, "kad_alpha", "must be at least 1")?;
        check(
            positive(self.stabilize_period),
            "stabilize_period",
            "must be positive",
        )?;
        check(
            self.successor_list >= 1,
            "successor_list",
            "must be at least 1",
        )?;
        Ok(())
    }

    /// The config in file format; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<&str>| v.join(",");
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line(
            "protocol",
            join(self.protocols.iter().map(|p| p.name()).collect()),
        );
        line("nodes", self.nodes.to_string());
        line("reps", self.reps.to_string());
        line("seed", self.seed.to_string());
        line(
            "regime",
            join(self.regimes.iter().map(|r| r.name()).collect()),
        );
        line("horizon", self.horizon.to_string());
        line("query_rate", self.query_rate.to_string());
        line("target_skill", self.target_skill.label());
        line("top_k", self.top_k.to_string());
        line("churn_enabled", self.churn_enabled.to_string());
        line("session_mean", self.session_mean.to_string());
        line("downtime_mean", self.downtime_mean.to_string());
        line("publish_spread", self.publish_spread.to_string());
        line("replication", self.replication.to_string());
        line("ttl", self.ttl.to_string());
        line("republish_period", self.republish_period.to_string());
        line("latency", self.latency.to_string());
        line("loss", self.loss.to_string());
        line("underlay_avg_degree", self.underlay_avg_degree.to_string());
        line("id_bits", self.id_bits.to_string());
        line("pastry_b", self.pastry_b.to_string());
        line("pastry_leafset", self.pastry_leafset.to_string());
        line("kad_k", self.kad_k.to_string());
        line("kad_alpha", self.kad_alpha.to_string());
        line("stabilize_period", self.stabilize_period.to_string());
        line("successor_list", self.successor_list.to_string());
        out
    }

    pub fn overlay_params(&self) -> OverlayParams {
        OverlayParams {
            replication: self.replication,
            latency: self.latency,
            successor_list: self.successor_list,
            pastry_b: self.pastry_b,
            leaf_set: self.pastry_leafset,
            k: self.kad_k,
            alpha: self.kad_alpha,
            ..OverlayParams::default()
        }
    }

    pub fn scenario(&self, regime: RegimeKind) -> Scenario {
        Scenario {
            nodes: self.nodes,
            regime,
            plan: QueryPlan {
                target: self.target_skill,
                rate: self.query_rate,
                horizon: self.horizon,
                top_k: self.top_k,
            },
            churn: ChurnModel {
                enabled: self.churn_enabled,
                session_mean: self.session_mean,
                downtime_mean: self.downtime_mean,
            },
            publish_spread: self.publish_spread,
            ttl: self.ttl,
            republish_period: self.republish_period,
            underlay_degree: self.underlay_avg_degree,
            loss: self.loss,
            id_bits: self.id_bits,
            tick_period: self.stabilize_period,
        }
    }
}

fn parse_skill(v: &str) -> Result<SkillId, ConfigError> {
    let bad = || ConfigError::Invalid {
        key: "target_skill",
        msg: format!("expected skill_00..skill_{:02}, got `{v}`", SKILL_COUNT - 1),
    };
    let n: u16 = v
        .strip_prefix("skill_")
        .ok_or_else(bad)?
        .parse()
        .map_err(|_| bad())?;
    if n >= SKILL_COUNT {
        return Err(bad());
    }
    Ok(SkillId(n))
}
