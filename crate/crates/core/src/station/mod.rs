//! Message-passing version of the protocol.
//!
//! Five actors (the entanglement distributor, two input stations and two
//! output stations) exchange classical messages over a [`Transport`]. The
//! quantum modes live in one shared [`GaussianState`]; only the classical
//! control is distributed. Under the same seed the network reproduces
//! [`run_protocol`](crate::protocol::run_protocol).

mod message;
mod transport;

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;

pub use message::{ClassicalMessage, Payload, Role};
pub use transport::{Envelope, FifoTransport, InterleavingTransport, Transport};

use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::protocol::{
    displacement_signal, input_station, ledger_pipeline, output_station, preparation_checks,
    prepare, shot_rng, DisplacementSignal, FeedforwardGains, MeasurementRecord, ProtocolConfig,
    RunResult, ShotCollector, Side, StageCheck,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    AwaitEntanglement,
    Ready,
    Sent,
    AwaitMessages(BTreeSet<Role>),
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// The distributor prepares and hands out the four-mode resource.
    Distribute,
    EntanglementArrival,
    LocalMeasurement,
    Message(ClassicalMessage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: Role,
    pub message: ClassicalMessage,
}

/// Shared quantum state and randomness for one round.
pub struct QuantumContext<'a> {
    pub state: Option<GaussianState>,
    pub rng: &'a mut ChaCha8Rng,
    /// Pre-shared configuration; gains are not sent in-band.
    pub gains: FeedforwardGains,
    /// The resource handed out by the distributor.
    pub resource: &'a GaussianState,
    trace: Option<Vec<StageCheck>>,
}

impl<'a> QuantumContext<'a> {
    pub fn new(
        resource: &'a GaussianState,
        gains: FeedforwardGains,
        rng: &'a mut ChaCha8Rng,
    ) -> Self {
        QuantumContext {
            state: None,
            rng,
            gains,
            resource,
            trace: None,
        }
    }

    fn state(&self) -> Result<&GaussianState> {
        self.state
            .as_ref()
            .ok_or_else(|| Error::Protocol("no entangled state has been distributed".into()))
    }

    fn record(&mut self, stage: String) {
        if let (Some(trace), Some(state)) = (self.trace.as_mut(), self.state.as_ref()) {
            trace.push(StageCheck {
                stage,
                physicality: state.check_physicality(),
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationState {
    role: Role,
    phase: Phase,
    /// Next sequence number this station sends with.
    next_seq: u64,
    /// Highest sequence number seen per sender.
    last_seq: [Option<u64>; 2],
    received: Vec<ClassicalMessage>,
    applied: Option<(MeasurementRecord, DisplacementSignal)>,
}

fn sender_slot(role: Role) -> Option<usize> {
    match role {
        Role::InputS => Some(0),
        Role::InputI => Some(1),
        _ => None,
    }
}

impl StationState {
    pub fn new(role: Role) -> Self {
        StationState {
            role,
            phase: Phase::AwaitEntanglement,
            next_seq: 0,
            last_seq: [None; 2],
            received: Vec::new(),
            applied: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn received(&self) -> &[ClassicalMessage] {
        &self.received
    }

    /// Record and displacement applied by an output station this round.
    pub fn applied(&self) -> Option<&(MeasurementRecord, DisplacementSignal)> {
        self.applied.as_ref()
    }

    pub fn is_round_complete(&self) -> bool {
        match self.role {
            Role::InputS | Role::InputI => self.phase == Phase::Sent,
            _ => self.phase == Phase::Done,
        }
    }

    /// Resets the phase for the next round; sequence tracking carries over.
    pub fn begin_round(mut self) -> Self {
        self.phase = Phase::AwaitEntanglement;
        self.received.clear();
        self.applied = None;
        self
    }

    fn violation(&self, event: &Event) -> Error {
        Error::Protocol(format!(
            "{} cannot handle {:?} in phase {:?}",
            self.role, event, self.phase
        ))
    }

    /// `step_station`: advances on one event, acting on the shared quantum
    /// state where the role requires it.
    pub fn step(
        mut self,
        event: Event,
        ctx: &mut QuantumContext<'_>,
    ) -> Result<(StationState, Vec<Outbound>)> {
        match (self.role, &self.phase, &event) {
            (Role::Distributor, Phase::AwaitEntanglement, Event::Distribute) => {
                ctx.state = Some(ctx.resource.clone());
                self.phase = Phase::Done;
                Ok((self, Vec::new()))
            }
            (r, Phase::AwaitEntanglement, Event::EntanglementArrival) if r != Role::Distributor => {
                ctx.state()?;
                self.phase = if r.is_output() {
                    Phase::AwaitMessages([Role::InputS, Role::InputI].into_iter().collect())
                } else {
                    Phase::Ready
                };
                Ok((self, Vec::new()))
            }
            (r @ (Role::InputS | Role::InputI), Phase::Ready, Event::LocalMeasurement) => {
                let side = if r == Role::InputS { Side::Signal } else { Side::Idler };
                let mut trace = ctx.trace.take();
                let current = ctx
                    .state
                    .as_ref()
                    .ok_or_else(|| Error::Protocol("no entangled state has been distributed".into()))?;
                let result = input_station(current, side, ctx.rng, trace.as_mut());
                ctx.trace = trace;
                let ((x, p), state) = result?;
                ctx.state = Some(state);
                let message = ClassicalMessage::new(self.next_seq, r, x, p)?;
                self.next_seq += 1;
                self.phase = Phase::Sent;
                let out = [Role::OutputS, Role::OutputI]
                    .into_iter()
                    .map(|to| Outbound { to, message })
                    .collect();
                Ok((self, out))
            }
            (r @ (Role::OutputS | Role::OutputI), Phase::AwaitMessages(pending), Event::Message(msg)) => {
                let slot = sender_slot(msg.from()).ok_or_else(|| {
                    Error::Protocol(format!("{r} received a message from {}", msg.from()))
                })?;
                if let Some(last) = self.last_seq[slot] {
                    if msg.seq() <= last {
                        return Err(Error::Protocol(format!(
                            "{r} received seq {} from {} after seq {last}",
                            msg.seq(),
                            msg.from()
                        )));
                    }
                }
                if !pending.contains(&msg.from()) {
                    return Err(Error::Protocol(format!(
                        "{r} already has this round's message from {}",
                        msg.from()
                    )));
                }
                let mut pending = pending.clone();
                pending.remove(&msg.from());
                self.last_seq[slot] = Some(msg.seq());
                self.received.push(*msg);
                if !pending.is_empty() {
                    self.phase = Phase::AwaitMessages(pending);
                    return Ok((self, Vec::new()));
                }
                let record = self.record()?;
                let signal = displacement_signal(&record, &ctx.gains);
                let (side, dx, dp) = if r == Role::OutputS {
                    (Side::Signal, signal.x_a3, signal.p_a3)
                } else {
                    (Side::Idler, signal.x_a4, signal.p_a4)
                };
                let state = output_station(ctx.state()?, side, dx, dp)?;
                ctx.state = Some(state);
                ctx.record(format!("{r} displaced"));
                self.applied = Some((record, signal));
                self.phase = Phase::Done;
                Ok((self, Vec::new()))
            }
            _ => Err(self.violation(&event)),
        }
    }

    fn record(&self) -> Result<MeasurementRecord> {
        let find = |role: Role| {
            self.received
                .iter()
                .find(|m| m.from() == role)
                .map(ClassicalMessage::payload)
                .ok_or_else(|| Error::Protocol(format!("{} missing message from {role}", self.role)))
        };
        let s = find(Role::InputS)?;
        let i = find(Role::InputI)?;
        Ok(MeasurementRecord {
            x1: s.x,
            p1: s.p,
            x2: i.x,
            p2: i.p,
        })
    }
}

/// Every delivery in order, as the bytes that crossed the transport.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub deliveries: Vec<Envelope>,
}

impl Transcript {
    /// Newline-delimited canonical JSON, one line per delivery.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for d in &self.deliveries {
            out.push_str(&String::from_utf8_lossy(&d.bytes));
            out.push('\n');
        }
        out
    }

    /// Decodes a transcript file; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Vec<ClassicalMessage>> {
        text.lines()
            .filter(|line| !line.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                ClassicalMessage::decode(line.as_bytes())
                    .map_err(|e| Error::Decode(format!("line {}: {e}", i + 1)))
            })
            .collect()
    }

    /// Decodes and re-encodes a transcript file.
    pub fn reencode(text: &str) -> Result<String> {
        let mut out = String::new();
        for m in Self::parse(text)? {
            out.push_str(std::str::from_utf8(&m.encode()).expect("ASCII JSON"));
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs `config.shots` rounds through the five stations over `transport`.
pub fn run_network(
    config: &ProtocolConfig,
    transport: &mut dyn Transport,
) -> Result<(RunResult, Transcript)> {
    let prepared = prepare(config)?;
    let gains = config.gains()?;
    let ledger = ledger_pipeline(&prepared.ledger, &gains)?;
    let mut physicality = preparation_checks(&prepared);
    let outputs = RunResult::output_modes();
    let mut collector = ShotCollector::new(config.shots);
    let mut transcript = Transcript::default();
    let mut stations: Vec<StationState> = Role::ALL.iter().map(|&r| StationState::new(r)).collect();
    let index = |role: Role| Role::ALL.iter().position(|&r| r == role).expect("known role");

    for shot in 0..config.shots {
        let mut rng = shot_rng(config.seed, shot as u64);
        let mut ctx = QuantumContext::new(&prepared.state, gains, &mut rng);
        if shot == 0 {
            ctx.trace = Some(Vec::new());
        }
        for st in stations.iter_mut() {
            *st = std::mem::replace(st, StationState::new(st.role())).begin_round();
        }

        let drive = |stations: &mut Vec<StationState>,
                         ctx: &mut QuantumContext<'_>,
                         role: Role,
                         event: Event|
         -> Result<Vec<Outbound>> {
            let k = index(role);
            let st = std::mem::replace(&mut stations[k], StationState::new(role));
            let (next, out) = st.step(event, ctx)?;
            stations[k] = next;
            Ok(out)
        };

        drive(&mut stations, &mut ctx, Role::Distributor, Event::Distribute)?;
        for role in [Role::InputS, Role::InputI, Role::OutputS, Role::OutputI] {
            drive(&mut stations, &mut ctx, role, Event::EntanglementArrival)?;
        }
        for role in [Role::InputS, Role::InputI] {
            for ob in drive(&mut stations, &mut ctx, role, Event::LocalMeasurement)? {
                transport.send(Envelope {
                    from: role,
                    to: ob.to,
                    bytes: ob.message.encode(),
                });
            }
        }
        while let Some(envelope) = transport.deliver() {
            let message = ClassicalMessage::decode(&envelope.bytes)?;
            if !envelope.to.is_output() {
                return Err(Error::Protocol(format!("message addressed to {}", envelope.to)));
            }
            drive(&mut stations, &mut ctx, envelope.to, Event::Message(message))?;
            transcript.deliveries.push(envelope);
        }
        if let Some(st) = stations.iter().find(|s| !s.is_round_complete()) {
            return Err(Error::Protocol(format!(
                "round {shot} ended with {} in phase {:?}",
                st.role(),
                st.phase()
            )));
        }
        let (record, signal) = *stations[index(Role::OutputS)]
            .applied()
            .expect("completed output station");
        if stations[index(Role::OutputI)].applied().map(|a| a.0) != Some(record) {
            return Err(Error::Protocol("output stations disagree on the record".into()));
        }
        if let Some(trace) = ctx.trace.take() {
            physicality.extend(trace);
        }
        let output = ctx.state()?.marginal(&outputs)?;
        drop(ctx);
        collector.push(record, signal, &output, &mut rng);
    }
    let mut result = collector.finish(config, gains, ledger, physicality)?;
    result.physicality.push(StageCheck {
        stage: "exact output".into(),
        physicality: result.analytic.check_physicality(),
    });
    Ok((result, transcript))
}
