//! Couples the instantaneous buffer circuit to the phasor dynamics of the
//! external grid.
//!
//! The exchange is a serial relaxation at the macro step: the phasor side
//! hands each boundary a Thevenin pair (open-circuit voltage, driving
//! impedance), the circuit side hands back the positive-sequence
//! fundamental of the current its sources delivered, applied as a Norton
//! injection. The circuit window that spans macro step k is driven by the
//! sources of step k-1 interpolated toward step k, which makes the two
//! domain integrations independent within a step; `Pipelined` runs them
//! on two threads with a rendezvous per macro step and produces the same
//! numbers to the bit, because each domain performs an identical
//! floating-point sequence either way.
//!
//! A run starts half a second before the scenario clock: sources ramp up
//! over the first 0.2 s and the interface then relaxes to the coupled
//! operating point with the machine states frozen, so t = 0 begins at an
//! equilibrium consistent across both domains.

use crate::emt::{
    build_buffer_emt, BufferEmt, BufferEmtSpec, BuilderError, DcLineParams, EmtError,
    MmcMeasurements, SourceMode, UniformSampler,
};
use crate::grid::{
    solve_power_flow, Bus, BusId, NetworkModel, PfError, PowerFlowOptions, TerminalRole,
};
use crate::signal::{fundamental_phasor, positive_sequence};
use crate::ts::{TsEngine, TsError};
use num_complex::Complex64;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::sync::mpsc;
use std::time::Instant;

/// How the two domain integrations are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeMode {
    Serial,
    /// Circuit on a worker thread, lockstep exchange each macro step.
    Pipelined,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dt_micro: f64,
    pub dt_macro: f64,
    pub mode: ExchangeMode,
    pub include_converters: bool,
    /// Record instantaneous converter power at the resampling rate for
    /// spectral checks.
    pub record_hf: bool,
    /// Energization and interface-relaxation time before t = 0.
    pub preroll_s: f64,
    pub pf: PowerFlowOptions,
}

impl Default for RunOptions {
    fn default() -> RunOptions {
        RunOptions {
            dt_micro: 60e-6,
            dt_macro: 4.16e-3,
            mode: ExchangeMode::Serial,
            include_converters: true,
            record_hf: true,
            preroll_s: 0.5,
            pf: PowerFlowOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Three-phase fault through `r_ohm` at a buffer bus.
    FaultOn { bus: BusId, r_ohm: f64 },
    FaultOff { bus: BusId },
    /// Disconnects / reconnects the shunt at a buffer bus.
    ShuntTrip { bus: BusId },
    ShuntClose { bus: BusId },
    /// Trips the machine at an external or boundary bus.
    GenTrip { bus: BusId },
    /// Trips an external branch.
    BranchTrip { from: BusId, to: BusId },
    /// New converter power order, MW (rectifier; rate-limited inside).
    PowerOrder { p_mw: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    /// Scenario time, seconds.
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default)]
pub struct Scenario {
    pub t_end: f64,
    pub events: Vec<Event>,
}

#[derive(Debug)]
pub enum HybridError {
    /// All problems found with the inputs, not just the first.
    Validation(Vec<String>),
    PowerFlow(PfError),
    Ts(TsError),
    Emt(EmtError),
    Builder(BuilderError),
    Numerical(String),
}

impl fmt::Display for HybridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HybridError::Validation(msgs) => write!(f, "invalid inputs: {}", msgs.join("; ")),
            HybridError::PowerFlow(e) => write!(f, "power flow: {e}"),
            HybridError::Ts(e) => write!(f, "phasor dynamics: {e}"),
            HybridError::Emt(e) => write!(f, "circuit solver: {e}"),
            HybridError::Builder(e) => write!(f, "circuit builder: {e}"),
            HybridError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for HybridError {}

impl From<PfError> for HybridError {
    fn from(e: PfError) -> Self {
        HybridError::PowerFlow(e)
    }
}
impl From<TsError> for HybridError {
    fn from(e: TsError) -> Self {
        HybridError::Ts(e)
    }
}
impl From<EmtError> for HybridError {
    fn from(e: EmtError) -> Self {
        HybridError::Emt(e)
    }
}
impl From<BuilderError> for HybridError {
    fn from(e: BuilderError) -> Self {
        HybridError::Builder(e)
    }
}

/// Time series sampled at the macro rate plus an optional high-rate
/// record, with run metadata.
#[derive(Debug, Clone, Default)]
pub struct RunResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub meta: BTreeMap<String, String>,
    pub hf_channels: Vec<String>,
    pub hf: Vec<Vec<f64>>,
    /// High-rate sample spacing and scenario time of the first sample.
    pub hf_dt: f64,
    pub hf_t0: f64,
}

impl RunResult {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Copies one column out of the macro-rate table.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn hf_series(&self, name: &str) -> Option<&[f64]> {
        let idx = self.hf_channels.iter().position(|c| c == name)?;
        Some(&self.hf[idx])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    s.push(',');
                }
                first = false;
                s.push_str(&format!("{v}"));
            }
            s.push('\n');
        }
        s
    }

    /// Sidecar text: `key=value` per line, keys sorted.
    pub fn meta_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

// ---------------------------------------------------------------------
// Event resolution and validation
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
enum EmtEventKind {
    Fault { bus: BusId, closed: bool },
    Shunt { index: usize, closed: bool },
    PowerOrder { p_mw: f64 },
}

#[derive(Debug, Clone)]
struct EmtEvent {
    /// Scenario time.
    t: f64,
    kind: EmtEventKind,
}

#[derive(Debug, Clone)]
enum TsEventKind {
    GenTrip { gen: usize },
    BranchTrip { branch: usize },
}

#[derive(Debug, Clone)]
struct TsEvent {
    t: f64,
    kind: TsEventKind,
}

/// First in-service shunt with a reactive part at `bus`.
fn switchable_shunt_index(model: &NetworkModel, bus: BusId) -> Option<usize> {
    model
        .shunts
        .iter()
        .position(|s| s.bus == bus && s.status && s.b_mvar != 0.0)
}

struct ResolvedEvents {
    emt: Vec<EmtEvent>,
    ts: Vec<TsEvent>,
    /// Fault buses with resistance, for switch construction.
    fault_buses: Vec<(BusId, f64)>,
}

/// Checks every event and resolves buses to model indices; collects all
/// problems instead of stopping at the first. `reduced` is None when
/// validating for an equivalent run (no phasor side, so no machine or
/// branch events are allowed).
fn resolve_events(
    model: &NetworkModel,
    members: &BTreeSet<BusId>,
    interior: &BTreeSet<BusId>,
    reduced: Option<&NetworkModel>,
    scenario: &Scenario,
    include_converters: bool,
) -> Result<ResolvedEvents, HybridError> {
    let mut errors: Vec<String> = Vec::new();
    let mut emt = Vec::new();
    let mut ts = Vec::new();
    let mut fault_buses: Vec<(BusId, f64)> = Vec::new();
    let mut faults_seen: BTreeSet<u32> = BTreeSet::new();
    let mut shunts_tripped: BTreeSet<u32> = BTreeSet::new();

    if scenario.t_end <= 0.0 {
        errors.push(format!("t_end must be positive, got {}", scenario.t_end));
    }

    let mut events = scenario.events.clone();
    events.sort_by(|a, b| a.t.total_cmp(&b.t));

    for ev in &events {
        if ev.t < 0.0 || ev.t > scenario.t_end {
            errors.push(format!(
                "event at t={} falls outside [0, {}]",
                ev.t, scenario.t_end
            ));
        }
        match &ev.kind {
            EventKind::FaultOn { bus, r_ohm } => {
                if model.bus_index(*bus).is_none() {
                    errors.push(format!("fault_on at unknown bus {}", bus.0));
                } else if !members.contains(bus) {
                    errors.push(format!(
                        "fault_on at bus {} which is not a buffer member",
                        bus.0
                    ));
                } else if *r_ohm <= 0.0 {
                    errors.push(format!(
                        "fault_on at bus {} needs a positive resistance",
                        bus.0
                    ));
                } else {
                    if !fault_buses.iter().any(|(b, _)| b == bus) {
                        fault_buses.push((*bus, *r_ohm));
                    }
                    faults_seen.insert(bus.0);
                    emt.push(EmtEvent {
                        t: ev.t,
                        kind: EmtEventKind::Fault {
                            bus: *bus,
                            closed: true,
                        },
                    });
                }
            }
            EventKind::FaultOff { bus } => {
                if !faults_seen.contains(&bus.0) {
                    errors.push(format!(
                        "fault_off at bus {} without a preceding fault_on",
                        bus.0
                    ));
                } else {
                    emt.push(EmtEvent {
                        t: ev.t,
                        kind: EmtEventKind::Fault {
                            bus: *bus,
                            closed: false,
                        },
                    });
                }
            }
            EventKind::ShuntTrip { bus } | EventKind::ShuntClose { bus } => {
                let closing = matches!(ev.kind, EventKind::ShuntClose { .. });
                if !members.contains(bus) {
                    errors.push(format!(
                        "shunt event at bus {} which is not a buffer member",
                        bus.0
                    ));
                    continue;
                }
                match switchable_shunt_index(model, *bus) {
                    None => errors.push(format!(
                        "shunt event at bus {} but no in-service reactive shunt there",
                        bus.0
                    )),
                    Some(index) => {
                        if closing && !shunts_tripped.contains(&bus.0) {
                            errors.push(format!(
                                "shunt_close at bus {} without a preceding shunt_trip",
                                bus.0
                            ));
                        } else {
                            if !closing {
                                shunts_tripped.insert(bus.0);
                            }
                            emt.push(EmtEvent {
                                t: ev.t,
                                kind: EmtEventKind::Shunt {
                                    index,
                                    closed: closing,
                                },
                            });
                        }
                    }
                }
            }
            EventKind::GenTrip { bus } => match reduced {
                None => errors.push(format!(
                    "gen_trip at bus {} not possible without the phasor side",
                    bus.0
                )),
                Some(red) => {
                    match red
                        .gens
                        .iter()
                        .position(|g| g.bus == *bus && g.status)
                    {
                        Some(gen) => ts.push(TsEvent {
                            t: ev.t,
                            kind: TsEventKind::GenTrip { gen },
                        }),
                        None => errors.push(format!(
                            "gen_trip at bus {} but no in-service machine there on the phasor side",
                            bus.0
                        )),
                    }
                }
            },
            EventKind::BranchTrip { from, to } => match reduced {
                None => errors.push(format!(
                    "branch_trip {}-{} not possible without the phasor side",
                    from.0, to.0
                )),
                Some(red) => {
                    let pos = red.branches.iter().position(|b| {
                        b.status
                            && !b.is_ideal()
                            && ((b.from == *from && b.to == *to)
                                || (b.from == *to && b.to == *from))
                    });
                    match pos {
                        Some(branch) => ts.push(TsEvent {
                            t: ev.t,
                            kind: TsEventKind::BranchTrip { branch },
                        }),
                        None => errors.push(format!(
                            "branch_trip {}-{} matches no in-service branch on the phasor side",
                            from.0, to.0
                        )),
                    }
                }
            },
            EventKind::PowerOrder { p_mw } => {
                if !include_converters {
                    errors.push(format!(
                        "power_order of {p_mw} MW given but converters are excluded"
                    ));
                } else if model.terminal(TerminalRole::Rectifier).is_none() {
                    errors.push("power_order given but the network has no rectifier".into());
                } else {
                    emt.push(EmtEvent {
                        t: ev.t,
                        kind: EmtEventKind::PowerOrder { p_mw: *p_mw },
                    });
                }
            }
        }
    }

    // Machines strictly inside the buffer would be silently dropped by
    // the reduction; reject them here as well for a clear message.
    for g in model.gens.iter().filter(|g| g.status) {
        if interior.contains(&g.bus) {
            errors.push(format!(
                "bus {} holds a machine strictly inside the buffer",
                g.bus.0
            ));
        }
    }

    if errors.is_empty() {
        Ok(ResolvedEvents {
            emt,
            ts,
            fault_buses,
        })
    } else {
        Err(HybridError::Validation(errors))
    }
}

// ---------------------------------------------------------------------
// External-network reduction
// ---------------------------------------------------------------------

/// Removes the buffer interior from the model: interior buses, every
/// branch with both ends among the members (those live in the circuit),
/// and all loads, shunts, and converter terminals at member buses.
/// Boundary buses stay, stripped bare, as the injection points. Returns
/// the reduced model and the original index of each kept generator.
pub fn reduce_external(
    model: &NetworkModel,
    members: &BTreeSet<BusId>,
    boundary: &[BusId],
) -> Result<(NetworkModel, Vec<usize>), HybridError> {
    let interior: BTreeSet<BusId> = members
        .iter()
        .copied()
        .filter(|b| !boundary.contains(b))
        .collect();

    let buses: Vec<Bus> = model
        .buses
        .iter()
        .filter(|b| !interior.contains(&b.id))
        .cloned()
        .collect();
    let loads = model
        .loads
        .iter()
        .filter(|l| !members.contains(&l.bus))
        .cloned()
        .collect();
    let shunts = model
        .shunts
        .iter()
        .filter(|s| !members.contains(&s.bus))
        .cloned()
        .collect();
    let mut gen_map = Vec::new();
    let mut gens = Vec::new();
    for (gi, g) in model.gens.iter().enumerate() {
        if !interior.contains(&g.bus) {
            gen_map.push(gi);
            gens.push(g.clone());
        }
    }
    let branches = model
        .branches
        .iter()
        .filter(|b| {
            let f_in = members.contains(&b.from);
            let t_in = members.contains(&b.to);
            !(f_in && t_in) && !interior.contains(&b.from) && !interior.contains(&b.to)
        })
        .cloned()
        .collect();

    let reduced = NetworkModel::new(
        buses,
        loads,
        shunts,
        gens,
        branches,
        Vec::new(),
        model.sbase_mva,
        model.f0_hz,
    )
    .map_err(|e| HybridError::Validation(vec![format!("reduced external network: {e}")]))?;
    Ok((reduced, gen_map))
}

// ---------------------------------------------------------------------
// Circuit-side task
// ---------------------------------------------------------------------

/// Everything the circuit side exchanges per macro step.
struct MacroCmd {
    /// Boundary source phasors at the window start and end, pu.
    e0: Vec<Complex64>,
    e1: Vec<Complex64>,
    /// New Thevenin impedances after a phasor-side topology change.
    z: Option<Vec<Complex64>>,
}

struct MacroReply {
    /// Norton injections for the phasor side, pu on the system base;
    /// empty until the resampling window has filled.
    j: Vec<Complex64>,
    /// Positive-sequence voltage phasor per boundary port, pu.
    v_port: Vec<Complex64>,
    v_rect: Complex64,
    v_inv: Complex64,
    /// Voltage magnitude per faultable bus, pu.
    v_fault: Vec<f64>,
    rect: Option<MmcMeasurements>,
    inv: Option<MmcMeasurements>,
    steps: u64,
}

struct EmtTask {
    buffer: BufferEmt,
    sampler: UniformSampler,
    hf: Option<UniformSampler>,
    events: Vec<EmtEvent>,
    next_event: usize,
    /// Micro-step split of one macro window (fixed so the factor cache
    /// holds exactly two entries).
    n_full: usize,
    dt_micro: f64,
    dt_rem: f64,
    window_s: f64,
    /// Circuit-clock offset of scenario t = 0.
    preroll: f64,
    ramp_s: f64,
    w0: f64,
    k_window: usize,
    delta: f64,
    /// Channel bases: per port 6 (i_abc then v_abc), then rectifier and
    /// inverter terminal voltages, then fault-bus voltages.
    ch_rect: Option<usize>,
    ch_inv: Option<usize>,
    ch_fault: Vec<(BusId, usize)>,
    values: Vec<f64>,
    mode: SourceMode,
}

impl EmtTask {
    #[allow(clippy::too_many_arguments)]
    fn new(
        buffer: BufferEmt,
        events: Vec<EmtEvent>,
        dt_micro: f64,
        dt_macro: f64,
        preroll: f64,
        ramp_s: f64,
        record_hf: bool,
    ) -> EmtTask {
        let f0 = buffer.f0;
        let t0_period = 1.0 / f0;
        let k_window = (t0_period / dt_micro).round() as usize;
        let delta = t0_period / k_window as f64;
        let n_full = (dt_macro / dt_micro + 1e-9).floor() as usize;
        let mut dt_rem = dt_macro - n_full as f64 * dt_micro;
        if dt_rem < 1e-9 {
            dt_rem = 0.0;
        }

        let n_ports = buffer.boundaries.len();
        let mut n_channels = 6 * n_ports;
        let mut ch_rect = None;
        let mut ch_inv = None;
        if buffer.mmc(TerminalRole::Rectifier).is_some() {
            ch_rect = Some(n_channels);
            n_channels += 3;
        }
        if buffer.mmc(TerminalRole::Inverter).is_some() {
            ch_inv = Some(n_channels);
            n_channels += 3;
        }
        let mut ch_fault = Vec::new();
        for bus in buffer.fault_switches.keys() {
            ch_fault.push((BusId(*bus), n_channels));
            n_channels += 3;
        }

        let sampler = UniformSampler::new(delta, n_channels, 0.0, Some(k_window));
        let hf = if record_hf && !buffer.mmcs.is_empty() {
            // High-rate record starts at the scenario clock.
            Some(UniformSampler::new(
                delta,
                buffer.mmcs.len(),
                preroll,
                None,
            ))
        } else {
            None
        };
        let mode = if buffer.boundaries[0].source_elements.is_empty() {
            SourceMode::Ideal
        } else {
            SourceMode::Thevenin
        };

        EmtTask {
            buffer,
            sampler,
            hf,
            events,
            next_event: 0,
            n_full,
            dt_micro,
            dt_rem,
            window_s: dt_macro,
            preroll,
            ramp_s,
            w0: 2.0 * PI * f0,
            k_window,
            delta,
            ch_rect,
            ch_inv,
            ch_fault,
            values: vec![0.0; n_channels],
            mode,
        }
    }

    /// Runs one macro window and extracts the fundamental phasors.
    fn macro_window(&mut self, cmd: &MacroCmd) -> Result<MacroReply, EmtError> {
        if let Some(z) = &cmd.z {
            for (port, z_new) in self.buffer.boundaries.iter().zip(z) {
                let kv = port.v_base_pk * (3.0f64).sqrt() / (2.0f64).sqrt() / 1e3;
                let zb = kv * kv / self.sbase();
                let r = z_new.re.max(0.0) * zb;
                let l = z_new.im.max(1e-6) * zb / self.w0;
                for &el in &port.source_elements {
                    self.buffer.net.set_series_impedance(el, r, l);
                }
            }
        }

        let t_w0 = self.buffer.net.time();
        let total_sub = self.n_full + usize::from(self.dt_rem > 0.0);
        for sub in 0..total_sub {
            let dt = if sub < self.n_full {
                self.dt_micro
            } else {
                self.dt_rem
            };
            let t_now = self.buffer.net.time();
            let t_next = t_now + dt;

            // Scenario events falling inside this micro step take effect
            // for it.
            while self.next_event < self.events.len()
                && self.events[self.next_event].t + self.preroll <= t_next + 1e-12
            {
                let ev = self.events[self.next_event].clone();
                self.apply_event(&ev.kind);
                self.next_event += 1;
            }

            // Source energization ramp, then boundary drive for the end
            // of the coming step.
            let ramp = (t_next / self.ramp_s).min(1.0);
            let alpha = ((t_next - t_w0) / self.window_s).clamp(0.0, 1.0);
            for (pi, port) in self.buffer.boundaries.iter().enumerate() {
                let e = cmd.e0[pi] + (cmd.e1[pi] - cmd.e0[pi]) * alpha;
                for k in 0..3 {
                    let shift = Complex64::from_polar(1.0, -2.0 * PI / 3.0 * k as f64);
                    let carrier = Complex64::from_polar(1.0, self.w0 * t_next);
                    let v = ramp * port.v_base_pk * (e * shift * carrier).re;
                    match self.mode {
                        SourceMode::Thevenin => {
                            self.buffer.net.set_emf(port.source_elements[k], v)
                        }
                        SourceMode::Ideal => self
                            .buffer
                            .net
                            .set_dirichlet_value(port.dirichlet_slots[k], v),
                    }
                }
            }

            for (_, mmc) in &mut self.buffer.mmcs {
                mmc.set_ref_scale(ramp);
                mmc.control_update(&mut self.buffer.net, dt);
            }
            self.buffer.net.step(dt)?;
            for (_, mmc) in &mut self.buffer.mmcs {
                mmc.post_step(&self.buffer.net, dt);
            }

            self.record_channels(t_next);
        }

        Ok(self.extract())
    }

    fn sbase(&self) -> f64 {
        // v_base_pk and i_base_pk of any port encode the system base:
        // S = 1.5 * v_base_pk * i_base_pk.
        let p = &self.buffer.boundaries[0];
        1.5 * p.v_base_pk * p.i_base_pk / 1e6
    }

    fn apply_event(&mut self, kind: &EmtEventKind) {
        match kind {
            EmtEventKind::Fault { bus, closed } => {
                self.buffer.set_fault(*bus, *closed);
            }
            EmtEventKind::Shunt { index, closed } => {
                self.buffer.set_shunt(*index, *closed);
            }
            EmtEventKind::PowerOrder { p_mw } => {
                if let Some(mmc) = self.buffer.mmc_mut(TerminalRole::Rectifier) {
                    mmc.set_power_order_mw(*p_mw);
                }
            }
        }
    }

    fn record_channels(&mut self, t: f64) {
        let buf = &self.buffer;
        let v = &mut self.values;
        for (pi, port) in buf.boundaries.iter().enumerate() {
            for k in 0..3 {
                v[6 * pi + k] = if port.source_elements.is_empty() {
                    0.0
                } else {
                    buf.net.current(port.source_elements[k])
                };
                v[6 * pi + 3 + k] = buf.net.voltage(port.nodes[k]);
            }
        }
        for (role, base) in [
            (TerminalRole::Rectifier, self.ch_rect),
            (TerminalRole::Inverter, self.ch_inv),
        ] {
            let Some(base) = base else { continue };
            if let Some((_, mmc)) = buf.mmcs.iter().find(|(r, _)| *r == role) {
                let nodes = mmc.ac_nodes();
                for k in 0..3 {
                    v[base + k] = buf.net.voltage(nodes[k]);
                }
            }
        }
        for (bus, base) in &self.ch_fault {
            if let Some(tap) = buf.tap(*bus) {
                for k in 0..3 {
                    v[base + k] = buf.net.voltage(tap.nodes[k]);
                }
            }
        }
        self.sampler.push(t, v);
        if let Some(hf) = &mut self.hf {
            let vals: Vec<f64> = buf
                .mmcs
                .iter()
                .map(|(_, m)| m.measurements().p_inst_w)
                .collect();
            hf.push(t, &vals);
        }
    }

    /// Synchronous positive-sequence phasor of three channels over the
    /// last cycle. The raw window phasor is referenced to the window
    /// start, so it is rotated back by the carrier phase at that time.
    fn pos_seq(&self, base: usize) -> Option<Complex64> {
        let k = self.k_window;
        let a = fundamental_phasor(self.sampler.window(base, k)?).ok()?;
        let b = fundamental_phasor(self.sampler.window(base + 1, k)?).ok()?;
        let c = fundamental_phasor(self.sampler.window(base + 2, k)?).ok()?;
        let t_start = self.sampler.t_last() - (k as f64 - 1.0) * self.delta;
        let sync = Complex64::from_polar(1.0, -self.w0 * t_start);
        Some(positive_sequence(a, b, c) * sync)
    }

    fn extract(&self) -> MacroReply {
        let n_ports = self.buffer.boundaries.len();
        let mut j = Vec::with_capacity(n_ports);
        let mut v_port = Vec::with_capacity(n_ports);
        let mut ready = true;
        for (pi, port) in self.buffer.boundaries.iter().enumerate() {
            match (self.pos_seq(6 * pi), self.pos_seq(6 * pi + 3)) {
                (Some(i_ph), Some(v_ph)) => {
                    // Source current flows into the buffer; the Norton
                    // injection seen by the phasor side is its negative.
                    j.push(-i_ph / port.i_base_pk);
                    v_port.push(v_ph / port.v_base_pk);
                }
                _ => {
                    ready = false;
                    break;
                }
            }
        }
        if !ready || self.mode == SourceMode::Ideal {
            j.clear();
        }
        if !ready {
            v_port.clear();
            v_port.resize(n_ports, Complex64::new(0.0, 0.0));
        }

        let term = |base: Option<usize>, role: TerminalRole| -> Complex64 {
            let Some(base) = base else {
                return Complex64::new(0.0, 0.0);
            };
            let scale = self
                .buffer
                .mmc(role)
                .map(|m| m.params.v_base_pk())
                .unwrap_or(1.0);
            self.pos_seq(base)
                .map(|p| p / scale)
                .unwrap_or(Complex64::new(0.0, 0.0))
        };
        let v_rect = term(self.ch_rect, TerminalRole::Rectifier);
        let v_inv = term(self.ch_inv, TerminalRole::Inverter);

        let mut v_fault = Vec::with_capacity(self.ch_fault.len());
        for (bus, base) in &self.ch_fault {
            let scale = self
                .buffer
                .tap(*bus)
                .map(|t| t.v_base_pk)
                .unwrap_or(1.0);
            v_fault.push(
                self.pos_seq(*base)
                    .map(|p| (p / scale).norm())
                    .unwrap_or(0.0),
            );
        }

        MacroReply {
            j,
            v_port,
            v_rect,
            v_inv,
            v_fault,
            rect: self
                .buffer
                .mmc(TerminalRole::Rectifier)
                .map(|m| m.measurements()),
            inv: self
                .buffer
                .mmc(TerminalRole::Inverter)
                .map(|m| m.measurements()),
            steps: self.buffer.net.steps_taken(),
        }
    }

    /// High-rate record with channel names, sample spacing, and the
    /// scenario time of the first sample.
    fn take_hf(self) -> (Vec<String>, Vec<Vec<f64>>, f64, f64) {
        let Some(hf) = self.hf else {
            return (Vec::new(), Vec::new(), self.delta, 0.0);
        };
        let names: Vec<String> = self
            .buffer
            .mmcs
            .iter()
            .map(|(role, _)| format!("p_inst_{role}_w"))
            .collect();
        let data: Vec<Vec<f64>> = (0..names.len()).map(|c| hf.record(c).to_vec()).collect();
        (names, data, self.delta, self.delta)
    }
}

// ---------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------

/// Column names for a given port/fault layout.
fn result_columns(boundary: &[BusId], fault_buses: &[BusId]) -> Vec<String> {
    let mut cols: Vec<String> = [
        "time_s",
        "v_rect_pu",
        "v_inv_pu",
        "p_rect_mw",
        "q_rect_mvar",
        "p_inv_mw",
        "q_inv_mvar",
        "vdc_rect_kv",
        "vdc_inv_kv",
        "pll_freq_rect_hz",
        "pll_freq_inv_hz",
        "ts_coi_freq_hz",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    for b in boundary {
        cols.push(format!("p_ts_bus{}_mw", b.0));
        cols.push(format!("q_ts_bus{}_mvar", b.0));
        cols.push(format!("p_emt_bus{}_mw", b.0));
        cols.push(format!("q_emt_bus{}_mvar", b.0));
        cols.push(format!("v_ts_bus{}_pu", b.0));
        cols.push(format!("v_emt_bus{}_pu", b.0));
    }
    for b in fault_buses {
        cols.push(format!("v_bus{}_pu", b.0));
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn assemble_row(
    t: f64,
    reply: &MacroReply,
    ts: Option<&TsEngine>,
    f0: f64,
    sbase: f64,
    n_ports: usize,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(12 + 6 * n_ports + reply.v_fault.len());
    row.push(t);
    row.push(reply.v_rect.norm());
    row.push(reply.v_inv.norm());
    let (pr, qr, vdr, fr) = reply
        .rect
        .map(|m| (m.p_ac_mw, m.q_ac_mvar, m.v_dc_kv, m.pll_freq_hz))
        .unwrap_or((0.0, 0.0, 0.0, 0.0));
    let (pi_, qi, vdi, fi) = reply
        .inv
        .map(|m| (m.p_ac_mw, m.q_ac_mvar, m.v_dc_kv, m.pll_freq_hz))
        .unwrap_or((0.0, 0.0, 0.0, 0.0));
    row.push(pr);
    row.push(qr);
    row.push(pi_);
    row.push(qi);
    row.push(vdr);
    row.push(vdi);
    row.push(fr);
    row.push(fi);
    row.push(ts.map(|e| e.coi_frequency_hz()).unwrap_or(f0));
    for k in 0..n_ports {
        let (s_ts, v_ts) = match ts {
            Some(e) => (e.boundary_power_mva(k), e.boundary_voltage(k)),
            None => (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
        };
        // Both powers oriented from the external grid into the buffer.
        row.push(-s_ts.re);
        row.push(-s_ts.im);
        let s_emt = if reply.j.len() == reply.v_port.len() && !reply.j.is_empty() {
            -reply.v_port[k] * reply.j[k].conj() * sbase
        } else {
            Complex64::new(0.0, 0.0)
        };
        row.push(s_emt.re);
        row.push(s_emt.im);
        row.push(v_ts.norm());
        row.push(reply.v_port.get(k).map(|v| v.norm()).unwrap_or(0.0));
    }
    row.extend_from_slice(&reply.v_fault);
    row
}

/// Runs the EMT side either inline or through the worker rendezvous,
/// overlapping it with `ts_work` in pipelined mode.
enum ExecHandle<'a> {
    Serial(&'a mut EmtTask),
    Piped {
        tx: mpsc::SyncSender<MacroCmd>,
        rx: &'a mpsc::Receiver<Result<MacroReply, EmtError>>,
    },
}

impl ExecHandle<'_> {
    fn exchange(
        &mut self,
        cmd: MacroCmd,
        ts_work: impl FnOnce(),
    ) -> Result<MacroReply, HybridError> {
        match self {
            ExecHandle::Serial(task) => {
                let reply = task.macro_window(&cmd)?;
                ts_work();
                Ok(reply)
            }
            ExecHandle::Piped { tx, rx } => {
                tx.send(cmd)
                    .map_err(|_| HybridError::Numerical("circuit worker exited early".into()))?;
                ts_work();
                rx.recv()
                    .map_err(|_| HybridError::Numerical("circuit worker exited early".into()))?
                    .map_err(HybridError::from)
            }
        }
    }
}

struct DriveOutput {
    rows: Vec<Vec<f64>>,
    emt_steps: u64,
    ts_steps: u64,
}

/// The macro loop shared by both exchange modes: pre-roll relaxation,
/// then the recorded scenario.
#[allow(clippy::too_many_arguments)]
fn drive(
    exec: &mut ExecHandle,
    ts: &mut TsEngine,
    ts_events: &[TsEvent],
    scenario_t_end: f64,
    opts: &RunOptions,
    boundary_count: usize,
    f0: f64,
    sbase: f64,
) -> Result<DriveOutput, HybridError> {
    let n_pre = ((opts.preroll_s / opts.dt_macro).round() as usize).max(1);
    let n_macro = ((scenario_t_end / opts.dt_macro) - 1e-9).ceil() as usize;

    let thevenin_now = |ts: &TsEngine| -> (Vec<Complex64>, Vec<Complex64>) {
        let mut e = Vec::with_capacity(boundary_count);
        let mut z = Vec::with_capacity(boundary_count);
        for k in 0..boundary_count {
            let (ek, zk) = ts.boundary_thevenin(k);
            e.push(ek);
            z.push(zk);
        }
        (e, z)
    };

    let (mut e_cur, z0) = thevenin_now(ts);
    let mut e_prev = e_cur.clone();
    let mut z_cur = z0;
    let mut last_reply: Option<MacroReply> = None;

    // Pre-roll: energize, then relax the interface with machine states
    // frozen (the network solution still tracks the injections).
    for _ in 0..n_pre {
        let cmd = MacroCmd {
            e0: e_prev.clone(),
            e1: e_cur.clone(),
            z: None,
        };
        let reply = exec.exchange(cmd, || {})?;
        e_prev = e_cur.clone();
        if !reply.j.is_empty() {
            ts.set_boundary_injections(&reply.j);
            let (e_new, _) = thevenin_now(ts);
            e_cur = e_new;
        }
        last_reply = Some(reply);
    }

    let mut rows = Vec::with_capacity(n_macro + 1);
    if let Some(reply) = &last_reply {
        rows.push(assemble_row(0.0, reply, Some(ts), f0, sbase, boundary_count));
    }

    let mut next_ts_event = 0usize;
    let mut emt_steps = 0u64;
    for k in 0..n_macro {
        let t_k = k as f64 * opts.dt_macro;
        let t_k1 = (k + 1) as f64 * opts.dt_macro;

        // Phasor-side events due at this boundary.
        let mut topology_changed = false;
        while next_ts_event < ts_events.len() && ts_events[next_ts_event].t <= t_k + 1e-9 {
            match ts_events[next_ts_event].kind {
                TsEventKind::GenTrip { gen } => ts.trip_generator(gen)?,
                TsEventKind::BranchTrip { branch } => ts.trip_branch(branch)?,
            }
            topology_changed = true;
            next_ts_event += 1;
        }

        let (e_k, z_k) = thevenin_now(ts);
        if !topology_changed {
            for (pe, ne) in e_prev.iter().zip(&e_k) {
                let jump = (ne - pe).norm();
                if jump > 0.2 {
                    return Err(HybridError::Numerical(format!(
                        "boundary source jumped {jump:.3} pu between macro steps at t={t_k:.4}"
                    )));
                }
            }
        }
        let z_update = if z_k
            .iter()
            .zip(&z_cur)
            .any(|(a, b)| (a - b).norm() > 1e-12)
        {
            z_cur = z_k.clone();
            Some(z_k)
        } else {
            None
        };

        let cmd = MacroCmd {
            e0: e_prev.clone(),
            e1: e_k.clone(),
            z: z_update,
        };
        let ts_ref = &mut *ts;
        let reply = exec.exchange(cmd, || {
            ts_ref.step(opts.dt_macro);
        })?;
        if !reply.j.is_empty() {
            ts.set_boundary_injections(&reply.j);
        }
        e_prev = e_k;
        emt_steps = reply.steps;
        rows.push(assemble_row(
            t_k1,
            &reply,
            Some(ts),
            f0,
            sbase,
            boundary_count,
        ));
    }

    Ok(DriveOutput {
        rows,
        emt_steps,
        ts_steps: n_macro as u64,
    })
}

/// Co-simulates the buffered region against the phasor external grid.
pub fn run_hybrid(
    model: &NetworkModel,
    members: &BTreeSet<BusId>,
    boundary: &[BusId],
    scenario: &Scenario,
    opts: &RunOptions,
) -> Result<RunResult, HybridError> {
    let wall = Instant::now();
    let model = model
        .pruned_to_slack_island()
        .map_err(|e| HybridError::Validation(vec![e.to_string()]))?;
    let mut input_errors = Vec::new();
    for b in members {
        if model.bus_index(*b).is_none() {
            input_errors.push(format!("buffer member {} is not in the network", b.0));
        }
    }
    if members.is_empty() {
        input_errors.push("buffer has no members".into());
    }
    if boundary.is_empty() {
        input_errors.push("buffer has no boundary buses".into());
    }
    if !input_errors.is_empty() {
        return Err(HybridError::Validation(input_errors));
    }

    let interior: BTreeSet<BusId> = members
        .iter()
        .copied()
        .filter(|b| !boundary.contains(b))
        .collect();
    let (reduced, gen_map) = reduce_external(&model, members, boundary)?;
    let resolved = resolve_events(
        &model,
        members,
        &interior,
        Some(&reduced),
        scenario,
        opts.include_converters,
    )?;

    let pf = solve_power_flow(&model, &opts.pf)?;

    // Remap the operating point onto the reduced model.
    let vm_r: Vec<f64> = reduced
        .buses
        .iter()
        .map(|b| pf.vm[model.bus_index(b.id).unwrap()])
        .collect();
    let va_r: Vec<f64> = reduced
        .buses
        .iter()
        .map(|b| pf.va[model.bus_index(b.id).unwrap()])
        .collect();
    let gp_r: Vec<f64> = gen_map.iter().map(|&gi| pf.gen_p_mw[gi]).collect();
    let gq_r: Vec<f64> = gen_map.iter().map(|&gi| pf.gen_q_mvar[gi]).collect();

    let mut ts = TsEngine::new(&reduced, &vm_r, &va_r, &gp_r, &gq_r, boundary)?;

    let z0: Vec<Complex64> = (0..boundary.len())
        .map(|k| ts.boundary_thevenin(k).1)
        .collect();
    let buffer = build_buffer_emt(&BufferEmtSpec {
        model: &model,
        members,
        boundary,
        vm: &pf.vm,
        va: &pf.va,
        boundary_z_pu: &z0,
        mode: SourceMode::Thevenin,
        include_converters: opts.include_converters,
        fault_buses: &resolved.fault_buses,
        dc_line: DcLineParams::default(),
    })?;

    let n_pre = ((opts.preroll_s / opts.dt_macro).round() as usize).max(1);
    let preroll = n_pre as f64 * opts.dt_macro;
    let fault_bus_ids: Vec<BusId> = buffer.fault_switches.keys().map(|b| BusId(*b)).collect();
    let task = EmtTask::new(
        buffer,
        resolved.emt,
        opts.dt_micro,
        opts.dt_macro,
        preroll,
        0.2,
        opts.record_hf,
    );

    let columns = result_columns(boundary, &fault_bus_ids);
    let sbase = model.sbase_mva;
    let f0 = model.f0_hz;
    let n_ports = boundary.len();

    let (out, task) = match opts.mode {
        ExchangeMode::Serial => {
            let mut task = task;
            let mut exec = ExecHandle::Serial(&mut task);
            let out = drive(
                &mut exec,
                &mut ts,
                &resolved.ts,
                scenario.t_end,
                opts,
                n_ports,
                f0,
                sbase,
            )?;
            (out, task)
        }
        ExchangeMode::Pipelined => {
            let (cmd_tx, cmd_rx) = mpsc::sync_channel::<MacroCmd>(1);
            let (rep_tx, rep_rx) = mpsc::sync_channel::<Result<MacroReply, EmtError>>(1);
            let mut worker_task = task;
            let handle = std::thread::spawn(move || {
                while let Ok(cmd) = cmd_rx.recv() {
                    let reply = worker_task.macro_window(&cmd);
                    let failed = reply.is_err();
                    if rep_tx.send(reply).is_err() || failed {
                        break;
                    }
                }
                worker_task
            });
            let mut exec = ExecHandle::Piped {
                tx: cmd_tx,
                rx: &rep_rx,
            };
            let out = drive(
                &mut exec,
                &mut ts,
                &resolved.ts,
                scenario.t_end,
                opts,
                n_ports,
                f0,
                sbase,
            );
            drop(exec);
            let task = handle
                .join()
                .map_err(|_| HybridError::Numerical("circuit worker panicked".into()))?;
            (out?, task)
        }
    };

    let emt_steps = out.emt_steps;
    let ts_steps = out.ts_steps;
    let rows = out.rows;
    let (hf_channels, hf, hf_dt, hf_t0_emt) = task.take_hf();
    let _ = hf_t0_emt;

    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "hybrid".into());
    meta.insert(
        "mode".into(),
        match opts.mode {
            ExchangeMode::Serial => "serial".to_string(),
            ExchangeMode::Pipelined => "pipelined".to_string(),
        },
    );
    meta.insert("dt_micro_s".into(), format!("{}", opts.dt_micro));
    meta.insert("dt_macro_s".into(), format!("{}", opts.dt_macro));
    meta.insert("t_end_s".into(), format!("{}", scenario.t_end));
    meta.insert("preroll_s".into(), format!("{preroll}"));
    meta.insert("f0_hz".into(), format!("{f0}"));
    meta.insert("sbase_mva".into(), format!("{sbase}"));
    meta.insert(
        "members".into(),
        members
            .iter()
            .map(|b| b.0.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    meta.insert(
        "boundary".into(),
        boundary
            .iter()
            .map(|b| b.0.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    meta.insert(
        "include_converters".into(),
        opts.include_converters.to_string(),
    );
    meta.insert("emt_steps".into(), emt_steps.to_string());
    meta.insert("ts_steps".into(), ts_steps.to_string());
    meta.insert("wall_s".into(), format!("{:.3}", wall.elapsed().as_secs_f64()));

    Ok(RunResult {
        columns,
        rows,
        meta,
        hf_channels,
        hf,
        hf_dt,
        hf_t0: 0.0,
    })
}

/// Runs the buffer against frozen boundary voltages (the classical
/// fixed-equivalent study the co-simulation is compared with). The
/// boundary is driven by stiff sources at the power-flow phasors; no
/// phasor-side dynamics exist, so machine and branch events are invalid.
pub fn run_equivalent(
    model: &NetworkModel,
    members: &BTreeSet<BusId>,
    boundary: &[BusId],
    scenario: &Scenario,
    opts: &RunOptions,
) -> Result<RunResult, HybridError> {
    let wall = Instant::now();
    let model = model
        .pruned_to_slack_island()
        .map_err(|e| HybridError::Validation(vec![e.to_string()]))?;
    let interior: BTreeSet<BusId> = members
        .iter()
        .copied()
        .filter(|b| !boundary.contains(b))
        .collect();
    let resolved = resolve_events(
        &model,
        members,
        &interior,
        None,
        scenario,
        opts.include_converters,
    )?;

    let pf = solve_power_flow(&model, &opts.pf)?;
    let buffer = build_buffer_emt(&BufferEmtSpec {
        model: &model,
        members,
        boundary,
        vm: &pf.vm,
        va: &pf.va,
        boundary_z_pu: &vec![Complex64::new(0.0, 1e-6); boundary.len()],
        mode: SourceMode::Ideal,
        include_converters: opts.include_converters,
        fault_buses: &resolved.fault_buses,
        dc_line: DcLineParams::default(),
    })?;

    let n_pre = ((opts.preroll_s / opts.dt_macro).round() as usize).max(1);
    let preroll = n_pre as f64 * opts.dt_macro;
    let fault_bus_ids: Vec<BusId> = buffer.fault_switches.keys().map(|b| BusId(*b)).collect();
    let mut task = EmtTask::new(
        buffer,
        resolved.emt,
        opts.dt_micro,
        opts.dt_macro,
        preroll,
        0.2,
        opts.record_hf,
    );

    // Frozen boundary phasors from the power flow.
    let e_fix: Vec<Complex64> = boundary
        .iter()
        .map(|b| {
            let i = model.bus_index(*b).unwrap();
            Complex64::from_polar(pf.vm[i], pf.va[i])
        })
        .collect();

    let n_macro = ((scenario.t_end / opts.dt_macro) - 1e-9).ceil() as usize;
    let mut rows = Vec::with_capacity(n_macro + 1);
    let f0 = model.f0_hz;
    let sbase = model.sbase_mva;
    let mut last_reply = None;
    for _ in 0..n_pre {
        let cmd = MacroCmd {
            e0: e_fix.clone(),
            e1: e_fix.clone(),
            z: None,
        };
        last_reply = Some(task.macro_window(&cmd)?);
    }
    if let Some(reply) = &last_reply {
        rows.push(assemble_row(0.0, reply, None, f0, sbase, boundary.len()));
    }
    let mut emt_steps = 0;
    for k in 0..n_macro {
        let cmd = MacroCmd {
            e0: e_fix.clone(),
            e1: e_fix.clone(),
            z: None,
        };
        let reply = task.macro_window(&cmd)?;
        emt_steps = reply.steps;
        rows.push(assemble_row(
            (k + 1) as f64 * opts.dt_macro,
            &reply,
            None,
            f0,
            sbase,
            boundary.len(),
        ));
    }

    let columns = result_columns(boundary, &fault_bus_ids);
    let (hf_channels, hf, hf_dt, _) = task.take_hf();
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "equivalent".into());
    meta.insert("mode".into(), "serial".into());
    meta.insert("dt_micro_s".into(), format!("{}", opts.dt_micro));
    meta.insert("dt_macro_s".into(), format!("{}", opts.dt_macro));
    meta.insert("t_end_s".into(), format!("{}", scenario.t_end));
    meta.insert("preroll_s".into(), format!("{preroll}"));
    meta.insert("f0_hz".into(), format!("{f0}"));
    meta.insert("sbase_mva".into(), format!("{sbase}"));
    meta.insert("emt_steps".into(), emt_steps.to_string());
    meta.insert("wall_s".into(), format!("{:.3}", wall.elapsed().as_secs_f64()));

    Ok(RunResult {
        columns,
        rows,
        meta,
        hf_channels,
        hf,
        hf_dt,
        hf_t0: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_network;

    fn toy_model() -> NetworkModel {
        parse_network(
            "[BUS]\n\
             1,slackb,230,3,1.0,0\n\
             2,mid,230,1,1.0,0\n\
             3,edge,230,1,1.0,0\n\
             4,core,230,1,1.0,0\n\
             [LOAD]\n\
             2,80,20,1\n\
             4,50,10,1\n\
             [GEN]\n\
             1,0,0,900,-900,1.0,1200,1,4.0,0,0.3\n\
             [BRANCH]\n\
             1,2,0.01,0.08,0,0,1,0\n\
             2,3,0.01,0.08,0,0,1,0\n\
             3,4,0.008,0.06,0,0,1,0\n\
             [SYSTEM]\n\
             100,60\n",
        )
        .unwrap()
    }

    fn buffer_sets() -> (BTreeSet<BusId>, Vec<BusId>) {
        let members: BTreeSet<BusId> = [3, 4].into_iter().map(BusId).collect();
        (members, vec![BusId(3)])
    }

    #[test]
    fn reduction_strips_interior_and_member_branches() {
        let model = toy_model();
        let (members, boundary) = buffer_sets();
        let (red, gen_map) = reduce_external(&model, &members, &boundary).unwrap();
        assert_eq!(red.n_buses(), 3); // bus 4 gone
        assert!(red.bus(BusId(4)).is_none());
        // Branch 3-4 (inside buffer) removed, 1-2 and 2-3 kept.
        assert_eq!(red.branches.len(), 2);
        // Load at member bus 4 removed, load at external bus 2 kept.
        assert_eq!(red.loads.len(), 1);
        assert_eq!(red.loads[0].bus, BusId(2));
        assert_eq!(gen_map, vec![0]);
    }

    #[test]
    fn validation_collects_every_problem() {
        let model = toy_model();
        let (members, boundary) = buffer_sets();
        let scenario = Scenario {
            t_end: 1.0,
            events: vec![
                Event {
                    t: 0.5,
                    kind: EventKind::FaultOff { bus: BusId(4) },
                },
                Event {
                    t: 0.2,
                    kind: EventKind::ShuntTrip { bus: BusId(4) },
                },
                Event {
                    t: 0.3,
                    kind: EventKind::GenTrip { bus: BusId(4) },
                },
                Event {
                    t: 2.0,
                    kind: EventKind::FaultOn {
                        bus: BusId(2),
                        r_ohm: 1.0,
                    },
                },
            ],
        };
        let err = run_hybrid(
            &model,
            &members,
            &boundary,
            &scenario,
            &RunOptions {
                include_converters: false,
                ..RunOptions::default()
            },
        )
        .unwrap_err();
        match err {
            HybridError::Validation(msgs) => {
                assert!(msgs.len() >= 4, "got {msgs:?}");
                assert!(msgs.iter().any(|m| m.contains("fault_off")));
                assert!(msgs.iter().any(|m| m.contains("no in-service reactive shunt")));
                assert!(msgs.iter().any(|m| m.contains("gen_trip")));
                assert!(msgs.iter().any(|m| m.contains("outside")));
                assert!(msgs.iter().any(|m| m.contains("not a buffer member")));
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn quiescent_hybrid_run_holds_the_operating_point() {
        let model = toy_model();
        let (members, boundary) = buffer_sets();
        let scenario = Scenario {
            t_end: 0.25,
            events: Vec::new(),
        };
        let opts = RunOptions {
            include_converters: false,
            record_hf: false,
            preroll_s: 0.3,
            ..RunOptions::default()
        };
        let res = run_hybrid(&model, &members, &boundary, &scenario, &opts).unwrap();
        // The buffer holds a 50 MW constant-impedance load fed over the
        // boundary; the exchanged power on both sides of the interface
        // must agree and stay put.
        let p_ts = res.series("p_ts_bus3_mw").unwrap();
        let p_emt = res.series("p_emt_bus3_mw").unwrap();
        for (a, b) in p_ts.iter().zip(&p_emt) {
            assert!((a - b).abs() < 0.02 * a.abs().max(1.0), "ts {a} vs emt {b}");
        }
        let first = p_ts[1];
        let last = *p_ts.last().unwrap();
        assert!(
            (first - last).abs() < 0.01 * first.abs(),
            "interface power drifted: {first} -> {last}"
        );
        assert!(first > 45.0 && first < 60.0, "implausible power {first}");
        // Frequency untouched in a quiescent run.
        let f = res.series("ts_coi_freq_hz").unwrap();
        for v in f {
            assert!((v - 60.0).abs() < 1e-3);
        }
    }

    #[test]
    fn serial_and_pipelined_agree_to_the_bit() {
        let model = toy_model();
        let (members, boundary) = buffer_sets();
        let scenario = Scenario {
            t_end: 0.15,
            events: Vec::new(),
        };
        let base = RunOptions {
            include_converters: false,
            record_hf: false,
            preroll_s: 0.2,
            ..RunOptions::default()
        };
        let serial = run_hybrid(&model, &members, &boundary, &scenario, &base).unwrap();
        let piped = run_hybrid(
            &model,
            &members,
            &boundary,
            &scenario,
            &RunOptions {
                mode: ExchangeMode::Pipelined,
                ..base
            },
        )
        .unwrap();
        assert_eq!(serial.rows.len(), piped.rows.len());
        for (ra, rb) in serial.rows.iter().zip(&piped.rows) {
            for (a, b) in ra.iter().zip(rb) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn equivalent_run_rejects_phasor_side_events() {
        let model = toy_model();
        let (members, boundary) = buffer_sets();
        let scenario = Scenario {
            t_end: 0.1,
            events: vec![Event {
                t: 0.05,
                kind: EventKind::GenTrip { bus: BusId(1) },
            }],
        };
        let err = run_equivalent(
            &model,
            &members,
            &boundary,
            &scenario,
            &RunOptions {
                include_converters: false,
                ..RunOptions::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, HybridError::Validation(_)));
    }
}
