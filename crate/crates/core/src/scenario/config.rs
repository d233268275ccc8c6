//! Scenario files: sectioned `key = value` text.
//!
//! ```text
//! # comment
//! seed = 42
//! duration = 1s
//!
//! [gateway]
//! pack_period = 500us
//! class_for_can = 3
//!
//! [traffic.jammer]
//! enabled = true
//! period_lo = 1us
//! ```
//!
//! A `[section]` header prefixes the keys that follow it; keys may also be
//! written fully dotted (`traffic.jammer.enabled = true`). Durations take a
//! unit (`ns`, `us`, `ms`, `s`), rates optionally one (`bps`, `kbps`, `Mbps`,
//! `Gbps`). Queue caps accept an integer or `none`. Unknown or repeated keys
//! are errors. Extra CAN senders live under `[traffic.sender.<name>]`.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::can::{CanId, StuffingModel};
use crate::eth::Pcp;
use crate::gateway::GwConfig;
use crate::metrics::Arm;
use crate::time::{BitRate, SimDuration, SimTime};
use crate::traffic::{JammingTalkerCfg, PeriodicCanSenderCfg};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanSection {
    pub bitrate: BitRate,
    pub stuffing: StuffingModel,
    pub node_queue_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchSection {
    pub count: usize,
    pub forwarding_latency: SimDuration,
    pub idle_slope: BitRate,
    pub link_rate: BitRate,
    pub avb_pcp: Pcp,
    pub avb_queue_cap: Option<usize>,
    pub be_queue_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewaySection {
    pub pack_period: SimDuration,
    pub mtu_payload: usize,
    pub class_for_can: Pcp,
    pub be_pcp: Pcp,
    pub queue_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JammerSection {
    pub enabled: bool,
    pub frame_total_bytes: usize,
    pub period_lo: SimDuration,
    pub period_hi: SimDuration,
    /// 1-based index of the backbone switch the talker hangs off.
    pub attach_switch: usize,
    pub link_rate: BitRate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedSender {
    pub name: String,
    pub cfg: PeriodicCanSenderCfg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficSection {
    /// The first entry is the default `Sender`.
    pub senders: Vec<NamedSender>,
    pub jammer: JammerSection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub trace: bool,
    pub queue_trace: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration: SimDuration,
    pub can: CanSection,
    pub switches: SwitchSection,
    pub gateway: GatewaySection,
    pub traffic: TrafficSection,
    pub output: OutputSection,
}

impl Default for ScenarioConfig {
    /// The AVB_nature arm of the reference experiment.
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            duration: SimDuration::from_secs(1),
            can: CanSection {
                bitrate: BitRate::mbps(1),
                stuffing: StuffingModel::None,
                node_queue_cap: None,
            },
            switches: SwitchSection {
                count: 2,
                forwarding_latency: SimDuration::from_micros(5),
                idle_slope: BitRate::mbps(20),
                link_rate: BitRate::mbps(100),
                avb_pcp: Pcp::AVB_CLASS_A,
                avb_queue_cap: None,
                be_queue_cap: None,
            },
            gateway: GatewaySection {
                pack_period: SimDuration::from_micros(500),
                mtu_payload: 1500,
                class_for_can: Pcp::AVB_CLASS_A,
                be_pcp: Pcp::BEST_EFFORT,
                queue_cap: None,
            },
            traffic: TrafficSection {
                senders: vec![NamedSender {
                    name: "Sender".into(),
                    cfg: PeriodicCanSenderCfg::default(),
                }],
                jammer: JammerSection {
                    enabled: false,
                    frame_total_bytes: 1470,
                    period_lo: SimDuration::from_micros(1),
                    period_hi: SimDuration::from_micros(25),
                    attach_switch: 1,
                    link_rate: BitRate::mbps(1000),
                },
            },
            output: OutputSection {
                dir: PathBuf::from("out"),
                trace: false,
                queue_trace: false,
            },
        }
    }
}

impl ScenarioConfig {
    pub fn arm(&self) -> Arm {
        Arm::new(
            self.gateway.class_for_can == self.switches.avb_pcp,
            self.traffic.jammer.enabled,
        )
    }

    /// The same scenario reconfigured as one of the four experiment arms.
    /// Only the jammer switch and the CAN frame class change.
    pub fn for_arm(&self, arm: Arm) -> ScenarioConfig {
        let mut cfg = self.clone();
        cfg.traffic.jammer.enabled = arm.is_jam();
        cfg.gateway.class_for_can = if arm.is_avb() {
            cfg.switches.avb_pcp
        } else {
            cfg.gateway.be_pcp
        };
        cfg
    }

    pub fn end_time(&self) -> SimTime {
        SimTime::ZERO + self.duration
    }

    pub fn gw_config(&self, dst: NodeId) -> GwConfig {
        GwConfig {
            pack_period: self.gateway.pack_period,
            mtu_payload: self.gateway.mtu_payload,
            class_for_can: self.gateway.class_for_can,
            be_pcp: self.gateway.be_pcp,
            dst,
            queue_cap: self.gateway.queue_cap,
        }
    }

    pub fn jammer_config(&self, dst: NodeId) -> JammingTalkerCfg {
        let j = &self.traffic.jammer;
        JammingTalkerCfg {
            frame_total_bytes: j.frame_total_bytes,
            period_lo: j.period_lo,
            period_hi: j.period_hi,
            dst,
            pcp: self.gateway.be_pcp,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Validation(m));
        let sw = &self.switches;
        if sw.count == 0 {
            return invalid("switches.count must be at least 1".into());
        }
        if sw.idle_slope >= sw.link_rate {
            return invalid(format!(
                "switches.idle_slope {} must be below switches.link_rate {}",
                sw.idle_slope, sw.link_rate
            ));
        }
        let j = &self.traffic.jammer;
        if !(1..=sw.count).contains(&j.attach_switch) {
            return invalid(format!(
                "traffic.jammer.attach_switch {} not in 1..={}",
                j.attach_switch, sw.count
            ));
        }
        if sw.idle_slope >= j.link_rate {
            return invalid("traffic.jammer.link_rate must exceed switches.idle_slope".into());
        }
        self.jammer_config(NodeId(0))
            .validate()
            .or_else(|e| invalid(e.to_string()))?;
        self.gw_config(NodeId(0))
            .validate()
            .or_else(|e| invalid(e.to_string()))?;
        if self.traffic.senders.is_empty() {
            return invalid("at least one CAN sender is required".into());
        }
        let mut names = HashSet::new();
        let mut ids = HashSet::new();
        for s in &self.traffic.senders {
            if !names.insert(s.name.as_str()) {
                return invalid(format!("duplicate sender name `{}`", s.name));
            }
            if !ids.insert(s.cfg.can_id) {
                return invalid(format!(
                    "senders share CAN id {} (undefined arbitration)",
                    s.cfg.can_id
                ));
            }
            s.cfg
                .validate()
                .or_else(|e| invalid(format!("sender `{}`: {e}", s.name)))?;
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["seed"] => self.seed = parse_int(value)?,
            ["duration"] => self.duration = parse(value)?,

            ["can", "bitrate"] => self.can.bitrate = parse(value)?,
            ["can", "stuffing"] | ["can", "stuffing_model"] => self.can.stuffing = parse(value)?,
            ["can", "node_queue_cap"] => self.can.node_queue_cap = parse_cap(value)?,

            ["switches", "count"] => self.switches.count = parse_int(value)?,
            ["switches", "forwarding_latency"] => self.switches.forwarding_latency = parse(value)?,
            ["switches", "idle_slope"] => self.switches.idle_slope = parse(value)?,
            ["switches", "link_rate"] => self.switches.link_rate = parse(value)?,
            ["switches", "avb_pcp"] => self.switches.avb_pcp = parse_pcp(value)?,
            ["switches", "avb_queue_cap"] => self.switches.avb_queue_cap = parse_cap(value)?,
            ["switches", "be_queue_cap"] => self.switches.be_queue_cap = parse_cap(value)?,

            ["gateway", "pack_period"] => self.gateway.pack_period = parse(value)?,
            ["gateway", "mtu_payload"] => self.gateway.mtu_payload = parse_int(value)?,
            ["gateway", "class_for_can"] => self.gateway.class_for_can = parse_pcp(value)?,
            ["gateway", "be_pcp"] => self.gateway.be_pcp = parse_pcp(value)?,
            ["gateway", "queue_cap"] => self.gateway.queue_cap = parse_cap(value)?,

            ["traffic", "jammer", field] => {
                let j = &mut self.traffic.jammer;
                match *field {
                    "enabled" => j.enabled = parse_bool(value)?,
                    "frame_total_bytes" => j.frame_total_bytes = parse_int(value)?,
                    "period_lo" => j.period_lo = parse(value)?,
                    "period_hi" => j.period_hi = parse(value)?,
                    "attach_switch" => j.attach_switch = parse_int(value)?,
                    "link_rate" => j.link_rate = parse(value)?,
                    _ => return Err(format!("unknown key `{key}`")),
                }
            }
            ["traffic", "sender", field] => {
                set_sender_field(&mut self.traffic.senders[0].cfg, field, value)
                    .map_err(|e| e.unwrap_or_else(|| format!("unknown key `{key}`")))?
            }
            ["traffic", "sender", name, field] => {
                if SENDER_FIELDS.contains(name) {
                    return Err(format!("unknown key `{key}`"));
                }
                let idx = match self.traffic.senders.iter().position(|s| s.name == *name) {
                    Some(i) if i > 0 => i,
                    _ => {
                        self.traffic.senders.push(NamedSender {
                            name: name.to_string(),
                            cfg: PeriodicCanSenderCfg::default(),
                        });
                        self.traffic.senders.len() - 1
                    }
                };
                set_sender_field(&mut self.traffic.senders[idx].cfg, field, value)
                    .map_err(|e| e.unwrap_or_else(|| format!("unknown key `{key}`")))?
            }

            ["output", "dir"] => self.output.dir = PathBuf::from(value),
            ["output", "trace"] => self.output.trace = parse_bool(value)?,
            ["output", "queue_trace"] => self.output.queue_trace = parse_bool(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

const SENDER_FIELDS: [&str; 5] = ["can_id", "dlc", "period", "start", "count"];

/// `Err(None)` means the field name is unknown.
fn set_sender_field(
    cfg: &mut PeriodicCanSenderCfg,
    field: &str,
    value: &str,
) -> Result<(), Option<String>> {
    match field {
        "can_id" => {
            let raw: u32 = parse_int(value).map_err(Some)?;
            cfg.can_id = CanId::new(raw).map_err(|e| Some(e.to_string()))?;
        }
        "dlc" => cfg.dlc = parse_int(value).map_err(Some)?,
        "period" => cfg.period = parse(value).map_err(Some)?,
        "start" => cfg.start = SimTime::ZERO + parse::<SimDuration>(value).map_err(Some)?,
        "count" => {
            cfg.count = match value {
                "none" | "unlimited" => None,
                v => Some(parse_int(v).map_err(Some)?),
            }
        }
        _ => return Err(None),
    }
    Ok(())
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_int<T>(v: &str) -> Result<T, String>
where
    T: TryFrom<u64>,
{
    let clean: String = v.chars().filter(|c| *c != '_').collect();
    let n = if let Some(hex) = clean
        .strip_prefix("0x")
        .or_else(|| clean.strip_prefix("0X"))
    {
        u64::from_str_radix(hex, 16)
    } else {
        clean.parse::<u64>()
    }
    .map_err(|_| format!("invalid integer `{v}`"))?;
    T::try_from(n).map_err(|_| format!("integer `{v}` out of range"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("invalid boolean `{v}` (true|false)")),
    }
}

fn parse_pcp(v: &str) -> Result<Pcp, String> {
    let n: u8 = parse_int(v)?;
    Pcp::new(n).ok_or_else(|| format!("pcp `{v}` out of range 0..=7"))
}

fn parse_cap(v: &str) -> Result<Option<usize>, String> {
    match v {
        "none" | "unbounded" => Ok(None),
        _ => parse_int(v).map(Some),
    }
}

/// Parses scenario text on top of the defaults and validates the result.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    let mut section = String::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| ConfigError::Parse { line: line_no, msg };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err("unterminated section header".into()))?
                .trim();
            if name.is_empty() || name.split('.').any(|p| p.trim().is_empty()) {
                return Err(err(format!("invalid section name `{name}`")));
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(err("empty key or value".into()));
        }
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        if !seen.insert(key.clone()) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        cfg.set(&key, v).map_err(err)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
