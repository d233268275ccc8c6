//! Builds the CAN / AVB topology from a [`ScenarioConfig`] and runs it.
//!
//! ```text
//! Sender ─┐ CAN bus
//!         GW ── sw1 ── sw2 ── … ── swN ── Listener
//!                │
//!             jammer (on switch `attach_switch`)
//! ```

use std::fmt::Write as _;

use crate::can::{CanBus, CanError};
use crate::engine::{Engine, EntityId, EventKind, RunStats};
use crate::eth::{
    CreditState, EgressPort, EthError, EthFrame, PortQueueSet, StartOutcome, SwitchModel,
    CREDIT_PER_BIT,
};
use crate::gateway::{Gateway, GatewayError};
use crate::metrics::{Arm, LatencyRecord, LatencySeries, RunSummary};
use crate::rng::SimRng;
use crate::time::SimTime;
use crate::traffic::{JammingTalker, Listener, PeriodicCanSender};
use crate::NodeId;

use super::{ScenarioConfig, SimError};

/// RNG stream of the jamming talker.
pub const JAMMER_STREAM: u64 = 1;

#[derive(Debug, Clone)]
pub enum SimEvent {
    SenderTick { sender: usize },
    CanArbitrate,
    CanTxDone,
    PackTimer,
    JammerTick,
    PortKick { port: usize },
    PortArrival { port: usize },
    PortLinkFree { port: usize },
    FabricRelease { switch: usize },
}

impl EventKind for SimEvent {
    fn name(&self) -> &'static str {
        match self {
            SimEvent::SenderTick { .. } => "sender_tick",
            SimEvent::CanArbitrate => "can_arbitrate",
            SimEvent::CanTxDone => "can_tx_done",
            SimEvent::PackTimer => "pack_timer",
            SimEvent::JammerTick => "jammer_tick",
            SimEvent::PortKick { .. } => "port_kick",
            SimEvent::PortArrival { .. } => "port_arrival",
            SimEvent::PortLinkFree { .. } => "port_link_free",
            SimEvent::FabricRelease { .. } => "fabric_release",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeRole {
    CanSender(usize),
    Gateway,
    Switch(usize),
    Listener,
    Jammer,
    Bus,
}

/// Message-level accounting at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accounting {
    pub created: u64,
    pub delivered: u64,
    pub in_flight: u64,
    pub dropped: u64,
}

impl Accounting {
    pub fn is_conserved(&self) -> bool {
        self.created == self.delivered + self.in_flight + self.dropped
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub arm: Arm,
    pub seed: u64,
    /// Delivery order.
    pub records: Vec<LatencyRecord>,
    pub summary: RunSummary,
    pub accounting: Accounting,
    pub ports: Vec<EgressPort>,
    pub stats: RunStats,
    pub can_busy_ns: u64,
    /// `time_ns,seq,target,kind` lines when tracing was enabled.
    pub trace: Option<String>,
    /// `time_ns,port,avb_depth,be_depth,credit` lines when enabled.
    pub queue_trace: Option<String>,
}

impl RunOutput {
    pub fn port(&self, name: &str) -> Option<&EgressPort> {
        self.ports.iter().find(|p| p.name == name)
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    engine: Engine<SimEvent>,
    names: Vec<String>,
    roles: Vec<NodeRole>,
    can: CanBus,
    can_entity: EntityId,
    senders: Vec<PeriodicCanSender>,
    gateway: Gateway,
    gw_port: usize,
    jammer: Option<(JammingTalker, usize)>,
    listener: Listener,
    switches: Vec<SwitchModel>,
    ports: Vec<EgressPort>,
    port_entities: Vec<EntityId>,
    pending_wake: Vec<Option<SimTime>>,
    series: LatencySeries,
    dropped_records: u64,
    unroutable_frames: u64,
    trace: Option<String>,
    queue_trace: Option<String>,
}

fn gw_err(e: GatewayError) -> SimError {
    SimError::Gateway(e)
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut names: Vec<String> = Vec::new();
        let mut roles = Vec::new();
        let mut entity = |name: String, role: NodeRole| {
            names.push(name);
            roles.push(role);
            EntityId(names.len() as u32 - 1)
        };
        let node = |e: EntityId| NodeId(e.0);

        let gw_node = node(entity("gw".into(), NodeRole::Gateway));
        let listener_node = node(entity("listener".into(), NodeRole::Listener));
        let sender_nodes: Vec<NodeId> = cfg
            .traffic
            .senders
            .iter()
            .enumerate()
            .map(|(i, s)| node(entity(format!("sender.{}", s.name), NodeRole::CanSender(i))))
            .collect();
        let switch_nodes: Vec<NodeId> = (0..cfg.switches.count)
            .map(|i| node(entity(format!("sw{}", i + 1), NodeRole::Switch(i))))
            .collect();
        let jammer_node = node(entity("jammer".into(), NodeRole::Jammer));
        let can_entity = entity("can_bus".into(), NodeRole::Bus);

        let mut can = CanBus::new(cfg.can.bitrate, cfg.can.stuffing, cfg.can.node_queue_cap);
        let mut senders = Vec::new();
        for (s, &n) in cfg.traffic.senders.iter().zip(&sender_nodes) {
            can.attach(n);
            senders.push(PeriodicCanSender::new(n, s.cfg.clone())?);
        }
        can.attach(gw_node);
        let gateway = Gateway::new(gw_node, cfg.gw_config(listener_node)).map_err(gw_err)?;

        let sw = &cfg.switches;
        let shaper = |link| CreditState::new(sw.idle_slope, link).map_err(EthError::from);
        let queues = || PortQueueSet::new(sw.avb_pcp, sw.avb_queue_cap, sw.be_queue_cap);
        let label = |n: NodeId| names[n.0 as usize].clone();
        let mut ports: Vec<EgressPort> = Vec::new();
        let mut add_port = |from: NodeId, to: NodeId, rate| -> Result<usize, SimError> {
            ports.push(EgressPort::new(
                format!("{}->{}", label(from), label(to)),
                from,
                to,
                rate,
                queues(),
                shaper(rate)?,
            ));
            Ok(ports.len() - 1)
        };

        let gw_port = add_port(gw_node, switch_nodes[0], sw.link_rate)?;
        let mut switches = Vec::new();
        let jam_at = cfg.traffic.jammer.attach_switch - 1;
        for (i, &me) in switch_nodes.iter().enumerate() {
            let mut model = SwitchModel::new(me, sw.forwarding_latency);
            let up_peer = if i == 0 { gw_node } else { switch_nodes[i - 1] };
            let down_peer = switch_nodes.get(i + 1).copied().unwrap_or(listener_node);
            let up = model.add_port(add_port(me, up_peer, sw.link_rate)?);
            let down = model.add_port(add_port(me, down_peer, sw.link_rate)?);
            model.route(gw_node, up);
            model.route(listener_node, down);
            if i == jam_at {
                let jam = model.add_port(add_port(me, jammer_node, cfg.traffic.jammer.link_rate)?);
                model.route(jammer_node, jam);
            } else {
                model.route(jammer_node, if i < jam_at { down } else { up });
            }
            switches.push(model);
        }
        let jam_port = add_port(
            jammer_node,
            switch_nodes[jam_at],
            cfg.traffic.jammer.link_rate,
        )?;
        let jammer = if cfg.traffic.jammer.enabled {
            let talker = JammingTalker::new(
                jammer_node,
                cfg.jammer_config(listener_node),
                SimRng::new(cfg.seed, JAMMER_STREAM),
            )?;
            Some((talker, jam_port))
        } else {
            None
        };

        let port_entities: Vec<EntityId> = ports
            .iter()
            .map(|p| {
                names.push(p.name.clone());
                EntityId(names.len() as u32 - 1)
            })
            .collect();
        let n_ports = ports.len();
        let arm = cfg.arm();
        let trace = cfg
            .output
            .trace
            .then(|| String::from("time_ns,seq,target,kind\n"));
        let queue_trace = cfg
            .output
            .queue_trace
            .then(|| String::from("time_ns,port,avb_depth,be_depth,credit\n"));

        let mut sim = Simulation {
            cfg,
            engine: Engine::new(),
            names,
            roles,
            can,
            can_entity,
            senders,
            gateway,
            gw_port,
            jammer,
            listener: Listener::new(listener_node, arm),
            switches,
            ports,
            port_entities,
            pending_wake: vec![None; n_ports],
            series: LatencySeries::new(),
            dropped_records: 0,
            unroutable_frames: 0,
            trace,
            queue_trace,
        };
        sim.prime()?;
        Ok(sim)
    }

    fn entity_of(&self, n: NodeId) -> EntityId {
        EntityId(n.0)
    }

    fn prime(&mut self) -> Result<(), SimError> {
        for i in 0..self.senders.len() {
            if let Some(t) = self.senders[i].first_tick() {
                let target = self.entity_of(self.senders[i].node);
                self.engine
                    .schedule(target, SimEvent::SenderTick { sender: i }, t)?;
            }
        }
        let gw = self.entity_of(self.gateway.node);
        self.engine
            .schedule(gw, SimEvent::PackTimer, SimTime::ZERO)?;
        if let Some((j, _)) = &self.jammer {
            let target = self.entity_of(j.node);
            self.engine
                .schedule(target, SimEvent::JammerTick, SimTime::ZERO)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let end = self.cfg.end_time();
        let mut engine = std::mem::take(&mut self.engine);
        let stats = engine.run_until(end, |eng, ev| {
            if let Some(t) = self.trace.as_mut() {
                let _ = writeln!(
                    t,
                    "{},{},{},{}",
                    ev.fire_at.as_nanos(),
                    ev.seq,
                    self.names[ev.target.0 as usize],
                    ev.kind.name()
                );
            }
            self.dispatch(eng, ev.kind)
        })?;
        self.finish(stats)
    }

    fn dispatch(&mut self, eng: &mut Engine<SimEvent>, kind: SimEvent) -> Result<(), SimError> {
        let now = eng.now();
        match kind {
            SimEvent::SenderTick { sender } => {
                let (msg, next) = self.senders[sender].tick(now)?;
                let node = self.senders[sender].node;
                if let Some(next) = next {
                    eng.schedule(self.entity_of(node), SimEvent::SenderTick { sender }, next)?;
                }
                match self.can.transmit_request(node, msg) {
                    Ok(true) => {
                        eng.schedule(self.can_entity, SimEvent::CanArbitrate, now)?;
                    }
                    Ok(false) | Err(CanError::NodeQueueOverflow { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            SimEvent::CanArbitrate => {
                if let Some(done) = self.can.on_arbitrate(now)? {
                    eng.schedule(self.can_entity, SimEvent::CanTxDone, done)?;
                }
            }
            SimEvent::CanTxDone => {
                if let Some((delivery, more)) = self.can.on_tx_complete(now) {
                    for r in &delivery.receivers {
                        if *r == self.gateway.node {
                            match self.gateway.on_can_received(delivery.msg.clone()) {
                                Ok(()) | Err(GatewayError::QueueOverflow(_)) => {}
                                Err(e) => return Err(gw_err(e)),
                            }
                        }
                    }
                    if more {
                        eng.schedule(self.can_entity, SimEvent::CanArbitrate, now)?;
                    }
                }
            }
            SimEvent::PackTimer => {
                let gw = self.entity_of(self.gateway.node);
                let period = self.gateway.config().pack_period;
                eng.schedule(gw, SimEvent::PackTimer, now + period)?;
                if let Some(frame) = self.gateway.on_pack_timer(now).map_err(gw_err)? {
                    self.port_enqueue(eng, self.gw_port, frame)?;
                }
            }
            SimEvent::JammerTick => {
                let Some((talker, port)) = self.jammer.as_mut() else {
                    return Ok(());
                };
                let port = *port;
                let (frame, next) = talker.tick(now)?;
                let target = EntityId(talker.node.0);
                eng.schedule(target, SimEvent::JammerTick, next)?;
                self.port_enqueue(eng, port, frame)?;
            }
            SimEvent::PortKick { port } => {
                if self.pending_wake[port] == Some(now) {
                    self.pending_wake[port] = None;
                }
                self.kick(eng, port)?;
            }
            SimEvent::PortArrival { port } => {
                let frame = self.ports[port]
                    .take_arrival()
                    .expect("arrival event without a frame on the wire");
                let peer = self.ports[port].peer;
                self.deliver(eng, peer, frame)?;
            }
            SimEvent::PortLinkFree { port } => {
                self.ports[port].on_link_free(now)?;
                self.kick(eng, port)?;
            }
            SimEvent::FabricRelease { switch } => {
                if let Some((port, frame)) = self.switches[switch].release(now) {
                    self.port_enqueue(eng, port, frame)?;
                }
            }
        }
        Ok(())
    }

    fn deliver(
        &mut self,
        eng: &mut Engine<SimEvent>,
        at: NodeId,
        frame: EthFrame,
    ) -> Result<(), SimError> {
        let now = eng.now();
        match self.roles[at.0 as usize] {
            NodeRole::Switch(i) => {
                let records = frame.can_records();
                match self.switches[i].forward(frame, now) {
                    Ok(release) => {
                        let target = self.entity_of(self.switches[i].node);
                        eng.schedule(target, SimEvent::FabricRelease { switch: i }, release)?;
                    }
                    Err(EthError::UnknownDestination(_)) => self.dropped_records += records,
                    Err(e) => return Err(e.into()),
                }
            }
            NodeRole::Listener if frame.dst == at => {
                for r in self.listener.receive(&frame, now)? {
                    self.series.record(r);
                }
            }
            _ => {
                self.unroutable_frames += 1;
                self.dropped_records += frame.can_records();
            }
        }
        Ok(())
    }

    fn port_enqueue(
        &mut self,
        eng: &mut Engine<SimEvent>,
        port: usize,
        frame: EthFrame,
    ) -> Result<(), SimError> {
        let now = eng.now();
        let records = frame.can_records();
        match self.ports[port].enqueue(now, frame) {
            Ok(idle) => {
                self.trace_queue(now, port);
                if idle {
                    self.kick(eng, port)?;
                }
            }
            Err(EthError::QueueFull(_)) => self.dropped_records += records,
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn kick(&mut self, eng: &mut Engine<SimEvent>, port: usize) -> Result<(), SimError> {
        let now = eng.now();
        let target = self.port_entities[port];
        match self.ports[port].try_start(now)? {
            StartOutcome::Started {
                arrival_at,
                link_free_at,
                ..
            } => {
                eng.schedule(target, SimEvent::PortArrival { port }, arrival_at)?;
                eng.schedule(target, SimEvent::PortLinkFree { port }, link_free_at)?;
                self.trace_queue(now, port);
            }
            StartOutcome::Blocked { wake_at } => {
                if self.pending_wake[port] != Some(wake_at) {
                    self.pending_wake[port] = Some(wake_at);
                    eng.schedule(target, SimEvent::PortKick { port }, wake_at)?;
                }
            }
            StartOutcome::Busy | StartOutcome::Idle => {}
        }
        Ok(())
    }

    fn trace_queue(&mut self, now: SimTime, port: usize) {
        if let Some(t) = self.queue_trace.as_mut() {
            let p = &self.ports[port];
            let q = p.queues();
            let credit = p.shaper().credit();
            let _ = writeln!(
                t,
                "{},{},{},{},{}",
                now.as_nanos(),
                p.name,
                q.avb_len(),
                q.be_len(),
                format_credit_bits(credit)
            );
        }
    }

    fn finish(self, stats: RunStats) -> Result<RunOutput, SimError> {
        let created: u64 = self.senders.iter().map(|s| s.created()).sum();
        let mut in_flight = self.can.in_flight_count() as u64 + self.gateway.queued() as u64;
        for p in &self.ports {
            in_flight += p.queues().iter().map(EthFrame::can_records).sum::<u64>();
            in_flight += p.on_wire().map_or(0, EthFrame::can_records);
        }
        for s in &self.switches {
            in_flight += s.in_fabric().map(EthFrame::can_records).sum::<u64>();
        }
        let accounting = Accounting {
            created,
            delivered: self.series.len() as u64,
            in_flight,
            dropped: self.can.dropped() + self.gateway.dropped() + self.dropped_records,
        };
        let mut drops: Vec<(String, u64)> = vec![
            ("can_node_queues".into(), self.can.dropped()),
            ("gateway_fifo".into(), self.gateway.dropped()),
        ];
        for p in &self.ports {
            drops.push((p.name.clone(), p.counters().dropped));
        }
        for s in &self.switches {
            drops.push((
                format!("{}.unknown_dst", self.names[s.node.0 as usize]),
                s.dropped_unknown(),
            ));
        }
        let arm = self.cfg.arm();
        let summary = RunSummary::new(
            arm,
            self.series.records(),
            self.listener.jam_frames(),
            drops,
        );
        Ok(RunOutput {
            arm,
            seed: self.cfg.seed,
            records: self.series.into_records(),
            summary,
            accounting,
            ports: self.ports,
            stats,
            can_busy_ns: self.can.busy_time().as_nanos(),
            trace: self.trace,
            queue_trace: self.queue_trace,
        })
    }
}

/// Credit in bits, exact to the unit (nine decimals).
pub fn format_credit_bits(credit: i64) -> String {
    let sign = if credit < 0 { "-" } else { "" };
    let abs = credit.unsigned_abs();
    let unit = CREDIT_PER_BIT as u64;
    format!("{sign}{}.{:09}", abs / unit, abs % unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimDuration;

    fn short(arm: Arm) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default().for_arm(arm);
        cfg.duration = SimDuration::from_millis(30);
        cfg
    }

    #[test]
    fn credit_formatting() {
        assert_eq!(format_credit_bits(-9_868_800_000_000), "-9868.800000000");
        assert_eq!(format_credit_bits(5), "0.000000005");
        assert_eq!(format_credit_bits(0), "0.000000000");
    }

    #[test]
    fn avb_nature_latency_is_constant() {
        let out = Simulation::new(short(Arm::AvbNature))
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(out.records.len(), 10);
        // 114 CAN + 386 packing wait + 3 × 6.08 reception + 2 × 5 forwarding
        for r in &out.records {
            assert_eq!(r.latency().as_nanos(), 528_240);
        }
        assert!(out.accounting.is_conserved());
    }

    #[test]
    fn eth_nature_uses_untagged_frames() {
        let out = Simulation::new(short(Arm::EthNature))
            .unwrap()
            .run()
            .unwrap();
        // 3 × 5.76 µs reception for an untagged minimum frame
        assert!(out
            .records
            .iter()
            .all(|r| r.latency().as_nanos() == 527_280));
        let gw = out.port("gw->sw1").unwrap();
        assert_eq!(gw.counters().be_transmitted, 10);
        assert_eq!(gw.counters().avb_transmitted, 0);
    }

    #[test]
    fn traces_are_recorded() {
        let mut cfg = short(Arm::AvbJam);
        cfg.output.trace = true;
        cfg.output.queue_trace = true;
        let out = Simulation::new(cfg).unwrap().run().unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.lines().count() as u64, out.stats.dispatched + 1);
        assert!(trace.lines().nth(1).unwrap().starts_with("0,"));
        let q = out.queue_trace.unwrap();
        assert!(q.lines().any(|l| l.contains(",sw1->sw2,")));
    }

    #[test]
    fn tail_drop_is_accounted() {
        let mut cfg = short(Arm::EthJam);
        cfg.switches.be_queue_cap = Some(4);
        let out = Simulation::new(cfg).unwrap().run().unwrap();
        assert!(out.accounting.is_conserved());
        assert!(out.ports.iter().all(EgressPort::is_conserved));
        assert!(out.port("sw1->sw2").unwrap().counters().dropped > 0);
    }
}
