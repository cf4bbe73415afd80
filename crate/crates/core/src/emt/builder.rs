//! Expands a buffer region of the phasor network into a three-phase
//! instantaneous circuit.
//!
//! Every buffer bus becomes three phase nodes (buses joined by ideal
//! branches share one node triple). Branches inside the region become
//! per-phase series R-L elements with their charging split across the
//! ends; loads and shunts become constant impedances. Boundary buses get
//! per-phase sources representing the external grid: a Thevenin branch
//! whose EMF and impedance the co-simulation updates, or a stiff voltage
//! (Dirichlet) source for the frozen-equivalent mode. When the region
//! holds both HVdc terminals, the two converters and the dc line between
//! them are built as well.

use super::mmc::{ConverterControl, Mmc, MmcHandles, MmcParams};
use super::{Element, EmtNetwork};
use crate::grid::{BusId, NetworkModel, TerminalRole};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

/// How the external grid appears at the boundary buses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    /// Series R-L source per phase; EMF and impedance follow the
    /// transient-stability solution.
    Thevenin,
    /// Stiff voltage source per phase (no impedance); used for the
    /// frozen-equivalent comparison runs.
    Ideal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuilderError {
    UnknownBus(BusId),
    BoundaryNotMember(BusId),
    /// Off-nominal turns ratios have no instantaneous model here.
    TapUnsupported { from: BusId, to: BusId },
    /// A series branch needs a positive reactance to become an inductor.
    NonInductiveBranch { from: BusId, to: BusId },
    /// Endpoints at different voltage bases need a transformer model.
    MixedVoltage { from: BusId, to: BusId },
    /// Synchronous machines have no instantaneous model; they may sit on
    /// the boundary (phasor side) but not strictly inside the region.
    MachineInsideBuffer(BusId),
    /// An in-service ideal branch must not cross the region frontier.
    IdealCrossesBoundary { from: BusId, to: BusId },
    /// Converter terminal expected inside the region.
    TerminalOutsideBuffer { role: TerminalRole, bus: BusId },
}

impl fmt::Display for BuilderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuilderError::UnknownBus(b) => write!(f, "bus {} not in the network", b.0),
            BuilderError::BoundaryNotMember(b) => {
                write!(f, "boundary bus {} is not a buffer member", b.0)
            }
            BuilderError::TapUnsupported { from, to } => write!(
                f,
                "branch {}-{} has an off-nominal tap; not representable",
                from.0, to.0
            ),
            BuilderError::NonInductiveBranch { from, to } => write!(
                f,
                "branch {}-{} has non-positive reactance; not representable",
                from.0, to.0
            ),
            BuilderError::MixedVoltage { from, to } => write!(
                f,
                "branch {}-{} joins different voltage bases without a tap model",
                from.0, to.0
            ),
            BuilderError::MachineInsideBuffer(b) => {
                write!(f, "bus {} holds a machine strictly inside the buffer", b.0)
            }
            BuilderError::IdealCrossesBoundary { from, to } => write!(
                f,
                "ideal branch {}-{} crosses the buffer frontier",
                from.0, to.0
            ),
            BuilderError::TerminalOutsideBuffer { role, bus } => write!(
                f,
                "{role} terminal at bus {} lies outside the buffer",
                bus.0
            ),
        }
    }
}

impl std::error::Error for BuilderError {}

/// Overhead dc line constants (per pole).
#[derive(Debug, Clone)]
pub struct DcLineParams {
    pub r_ohm_per_km: f64,
    pub l_h_per_km: f64,
    pub c_f_per_km: f64,
    pub length_km: f64,
    pub sections_per_pole: usize,
}

impl Default for DcLineParams {
    fn default() -> DcLineParams {
        DcLineParams {
            r_ohm_per_km: 0.01,
            l_h_per_km: 0.82e-3,
            c_f_per_km: 0.19e-6,
            length_km: 700.0,
            sections_per_pole: 2,
        }
    }
}

/// One boundary bus and its source elements.
#[derive(Debug, Clone)]
pub struct BoundaryPort {
    pub bus: BusId,
    pub nodes: [usize; 3],
    /// Source element ids in Thevenin mode; empty in Ideal mode.
    pub source_elements: Vec<usize>,
    /// Dirichlet slots per phase in Ideal mode; empty in Thevenin mode.
    pub dirichlet_slots: Vec<usize>,
    pub v_base_pk: f64,
    /// Peak amps per pu of current on the system base.
    pub i_base_pk: f64,
}

/// Three phase nodes of one bus plus the scale back to pu.
#[derive(Debug, Clone, Copy)]
pub struct ThreePhaseTap {
    pub bus: BusId,
    pub nodes: [usize; 3],
    pub v_base_pk: f64,
}

/// Inputs for [`build_buffer_emt`].
pub struct BufferEmtSpec<'a> {
    pub model: &'a NetworkModel,
    pub members: &'a BTreeSet<BusId>,
    /// Boundary buses in the order their ports are wanted.
    pub boundary: &'a [BusId],
    /// Power-flow voltage magnitude/angle per model bus index.
    pub vm: &'a [f64],
    pub va: &'a [f64],
    /// Thevenin impedance per boundary bus, pu on the system base.
    pub boundary_z_pu: &'a [Complex64],
    pub mode: SourceMode,
    pub include_converters: bool,
    /// Buses that may be faulted, with the fault resistance in ohms.
    pub fault_buses: &'a [(BusId, f64)],
    pub dc_line: DcLineParams,
}

/// The instantaneous circuit of the buffer region.
pub struct BufferEmt {
    pub net: EmtNetwork,
    pub boundaries: Vec<BoundaryPort>,
    pub mmcs: Vec<(TerminalRole, Mmc)>,
    bus_nodes: BTreeMap<u32, [usize; 3]>,
    bus_kv: BTreeMap<u32, f64>,
    /// Model shunt index -> per-phase element ids (switchable).
    pub shunt_elements: BTreeMap<usize, [usize; 3]>,
    /// Model branch index -> per-phase series element ids.
    pub branch_elements: BTreeMap<usize, [usize; 3]>,
    /// Faultable bus -> per-phase switch ids.
    pub fault_switches: BTreeMap<u32, [usize; 3]>,
    /// Closed-state series resistance of each switchable shunt.
    shunt_series_r: BTreeMap<usize, f64>,
    pub f0: f64,
}

impl fmt::Debug for BufferEmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BufferEmt")
            .field("buses", &self.bus_nodes.len())
            .field("boundaries", &self.boundaries.len())
            .field("mmcs", &self.mmcs.len())
            .finish_non_exhaustive()
    }
}

impl BufferEmt {
    pub fn tap(&self, bus: BusId) -> Option<ThreePhaseTap> {
        let nodes = *self.bus_nodes.get(&bus.0)?;
        let kv = *self.bus_kv.get(&bus.0)?;
        Some(ThreePhaseTap {
            bus,
            nodes,
            v_base_pk: kv * 1e3 * (2.0f64).sqrt() / (3.0f64).sqrt(),
        })
    }

    /// Applies or clears a three-phase fault prepared at `bus`.
    pub fn set_fault(&mut self, bus: BusId, closed: bool) -> bool {
        match self.fault_switches.get(&bus.0) {
            Some(sw) => {
                for &s in sw {
                    self.net.set_switch(s, closed);
                }
                true
            }
            None => false,
        }
    }

    /// Connects or disconnects a shunt by model index. Disconnection
    /// raises the series resistance so the element current collapses
    /// within a step.
    pub fn set_shunt(&mut self, shunt_index: usize, closed: bool) -> bool {
        let (ids, r_closed) = match (
            self.shunt_elements.get(&shunt_index),
            self.shunt_series_r.get(&shunt_index),
        ) {
            (Some(ids), Some(r)) => (*ids, *r),
            _ => return false,
        };
        for id in ids {
            self.net
                .set_resistance(id, if closed { r_closed } else { 1e7 });
        }
        true
    }

    pub fn mmc(&self, role: TerminalRole) -> Option<&Mmc> {
        self.mmcs.iter().find(|(r, _)| *r == role).map(|(_, m)| m)
    }

    pub fn mmc_mut(&mut self, role: TerminalRole) -> Option<&mut Mmc> {
        self.mmcs
            .iter_mut()
            .find(|(r, _)| *r == role)
            .map(|(_, m)| m)
    }
}

// Private storage for the closed-state series resistance of switchable
// shunts, kept outside the public struct literal for construction order.
impl BufferEmt {
    fn new_empty(f0: f64) -> BufferEmt {
        BufferEmt {
            net: EmtNetwork::new(0),
            boundaries: Vec::new(),
            mmcs: Vec::new(),
            bus_nodes: BTreeMap::new(),
            bus_kv: BTreeMap::new(),
            shunt_elements: BTreeMap::new(),
            branch_elements: BTreeMap::new(),
            fault_switches: BTreeMap::new(),
            shunt_series_r: BTreeMap::new(),
            f0,
        }
    }
}

/// Builds the circuit. See the module docs for the expansion rules.
pub fn build_buffer_emt(spec: &BufferEmtSpec) -> Result<BufferEmt, BuilderError> {
    let model = spec.model;
    let w0 = 2.0 * PI * model.f0_hz;
    let sb = model.sbase_mva;

    for b in spec.boundary {
        if !spec.members.contains(b) {
            return Err(BuilderError::BoundaryNotMember(*b));
        }
    }
    let interior: BTreeSet<BusId> = spec
        .members
        .iter()
        .copied()
        .filter(|b| !spec.boundary.contains(b))
        .collect();

    // Ideal branches inside the region merge their endpoints into one
    // node triple; an ideal branch crossing the frontier has no home.
    let mut group: BTreeMap<u32, u32> = spec.members.iter().map(|b| (b.0, b.0)).collect();
    fn find(group: &mut BTreeMap<u32, u32>, mut x: u32) -> u32 {
        while group[&x] != x {
            let parent = group[&x];
            let grand = group[&parent];
            group.insert(x, grand);
            x = grand;
        }
        x
    }
    for br in &model.branches {
        if !br.status || !br.is_ideal() {
            continue;
        }
        let fin = spec.members.contains(&br.from);
        let tin = spec.members.contains(&br.to);
        if fin != tin {
            return Err(BuilderError::IdealCrossesBoundary {
                from: br.from,
                to: br.to,
            });
        }
        if fin && tin {
            let a = find(&mut group, br.from.0);
            let b = find(&mut group, br.to.0);
            if a != b {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                group.insert(hi, lo);
            }
        }
    }

    let mut out = BufferEmt::new_empty(model.f0_hz);
    let mut n_nodes = 0usize;
    let mut group_nodes: BTreeMap<u32, [usize; 3]> = BTreeMap::new();
    for b in spec.members {
        let root = find(&mut group, b.0);
        let nodes = *group_nodes.entry(root).or_insert_with(|| {
            let trio = [n_nodes, n_nodes + 1, n_nodes + 2];
            n_nodes += 3;
            trio
        });
        let idx = model
            .bus_index(*b)
            .ok_or(BuilderError::UnknownBus(*b))?;
        out.bus_nodes.insert(b.0, nodes);
        out.bus_kv.insert(b.0, model.buses[idx].base_kv);
    }

    // Machines strictly inside the region have no instantaneous model.
    for g in &model.gens {
        if g.status && interior.contains(&g.bus) {
            return Err(BuilderError::MachineInsideBuffer(g.bus));
        }
    }

    // Converter terminals, when included, must both sit in the region.
    let mut terminals: Vec<(TerminalRole, BusId)> = Vec::new();
    if spec.include_converters {
        for t in &model.hvdc_terminals {
            if !spec.members.contains(&t.bus) {
                return Err(BuilderError::TerminalOutsideBuffer {
                    role: t.role,
                    bus: t.bus,
                });
            }
            terminals.push((t.role, t.bus));
        }
    }

    // From here on elements are appended; node ids past the bus triples
    // belong to converters and the dc line.
    struct Pending {
        elements: Vec<Element>,
    }
    impl Pending {
        fn add(&mut self, e: Element) -> usize {
            self.elements.push(e);
            self.elements.len() - 1
        }
    }
    let mut pend = Pending {
        elements: Vec::new(),
    };

    let z_base = |kv: f64| kv * kv / sb;

    // Series branches and their charging.
    for (bi, br) in model.branches.iter().enumerate() {
        if !br.status || br.is_ideal() {
            continue;
        }
        if !(spec.members.contains(&br.from) && spec.members.contains(&br.to)) {
            continue;
        }
        if (br.tap - 1.0).abs() > 1e-9 {
            return Err(BuilderError::TapUnsupported {
                from: br.from,
                to: br.to,
            });
        }
        let kv_f = out.bus_kv[&br.from.0];
        let kv_t = out.bus_kv[&br.to.0];
        if (kv_f - kv_t).abs() > 1e-6 {
            return Err(BuilderError::MixedVoltage {
                from: br.from,
                to: br.to,
            });
        }
        let zb = z_base(kv_f);
        let fnodes = out.bus_nodes[&br.from.0];
        let tnodes = out.bus_nodes[&br.to.0];
        if fnodes != tnodes {
            if br.x_pu <= 0.0 {
                return Err(BuilderError::NonInductiveBranch {
                    from: br.from,
                    to: br.to,
                });
            }
            let mut ids = [0usize; 3];
            for k in 0..3 {
                ids[k] = pend.add(Element::SeriesRl {
                    from: Some(fnodes[k]),
                    to: Some(tnodes[k]),
                    r: br.r_pu * zb,
                    l: br.x_pu * zb / w0,
                    emf: 0.0,
                    i: 0.0,
                    u_prev: 0.0,
                });
            }
            out.branch_elements.insert(bi, ids);
        }
        if br.b_pu > 0.0 {
            let c_half = br.b_pu / 2.0 / (w0 * zb);
            for nodes in [fnodes, tnodes] {
                for k in 0..3 {
                    pend.add(Element::ShuntC {
                        node: nodes[k],
                        c: c_half,
                        v_prev: 0.0,
                        i_prev: 0.0,
                    });
                }
            }
        }
    }

    // Loads: constant impedance matched to the power-flow voltage, the
    // same folding the phasor side uses.
    for load in &model.loads {
        if !load.status || !spec.members.contains(&load.bus) {
            continue;
        }
        let idx = model.bus_index(load.bus).unwrap();
        let vm = spec.vm[idx].max(1e-3);
        let kv = out.bus_kv[&load.bus.0];
        let nodes = out.bus_nodes[&load.bus.0];
        let scale = vm * vm * kv * kv; // ohms = scale / MW
        if load.p_mw > 0.0 {
            for k in 0..3 {
                pend.add(Element::SeriesRl {
                    from: Some(nodes[k]),
                    to: None,
                    r: scale / load.p_mw,
                    l: 0.0,
                    emf: 0.0,
                    i: 0.0,
                    u_prev: 0.0,
                });
            }
        }
        if load.q_mvar > 0.0 {
            for k in 0..3 {
                pend.add(Element::SeriesRl {
                    from: Some(nodes[k]),
                    to: None,
                    r: 0.0,
                    l: scale / load.q_mvar / w0,
                    emf: 0.0,
                    i: 0.0,
                    u_prev: 0.0,
                });
            }
        } else if load.q_mvar < 0.0 {
            for k in 0..3 {
                pend.add(Element::ShuntC {
                    node: nodes[k],
                    c: 1.0 / (w0 * scale / (-load.q_mvar)),
                    v_prev: 0.0,
                    i_prev: 0.0,
                });
            }
        }
    }

    // Shunts: literal admittance at nominal voltage. Reactors and
    // resistors get a small series resistance so they stay switchable.
    for (si, sh) in model.shunts.iter().enumerate() {
        if !sh.status || !spec.members.contains(&sh.bus) {
            continue;
        }
        let kv = out.bus_kv[&sh.bus.0];
        let nodes = out.bus_nodes[&sh.bus.0];
        let mut ids: Vec<usize> = Vec::new();
        if sh.b_mvar < 0.0 {
            let x = kv * kv / (-sh.b_mvar);
            let r_series = x / 1000.0;
            for k in 0..3 {
                ids.push(pend.add(Element::SeriesRl {
                    from: Some(nodes[k]),
                    to: None,
                    r: r_series,
                    l: x / w0,
                    emf: 0.0,
                    i: 0.0,
                    u_prev: 0.0,
                }));
            }
            out.shunt_series_r.insert(si, r_series);
        } else if sh.b_mvar > 0.0 {
            let x = kv * kv / sh.b_mvar;
            let r_series = x / 1000.0;
            for k in 0..3 {
                ids.push(pend.add(Element::SeriesRc {
                    from: Some(nodes[k]),
                    to: None,
                    r: r_series,
                    c: 1.0 / (w0 * x),
                    emf: 0.0,
                    i: 0.0,
                    v_c: 0.0,
                }));
            }
            out.shunt_series_r.insert(si, r_series);
        }
        if sh.g_mw > 0.0 {
            for k in 0..3 {
                ids.push(pend.add(Element::SeriesRl {
                    from: Some(nodes[k]),
                    to: None,
                    r: kv * kv / sh.g_mw,
                    l: 0.0,
                    emf: 0.0,
                    i: 0.0,
                    u_prev: 0.0,
                }));
            }
        }
        if ids.len() >= 3 {
            out.shunt_elements.insert(si, [ids[0], ids[1], ids[2]]);
        }
    }

    // Boundary sources.
    let mut dirichlet: Vec<(usize, f64)> = Vec::new();
    for (bi, bus) in spec.boundary.iter().enumerate() {
        let nodes = out.bus_nodes[&bus.0];
        let kv = out.bus_kv[&bus.0];
        let v_base_pk = kv * 1e3 * (2.0f64).sqrt() / (3.0f64).sqrt();
        let i_base_pk = (2.0f64).sqrt() * sb * 1e6 / ((3.0f64).sqrt() * kv * 1e3);
        let mut source_elements = Vec::new();
        let mut dirichlet_slots = Vec::new();
        match spec.mode {
            SourceMode::Thevenin => {
                let z = spec.boundary_z_pu[bi];
                let zb = z_base(kv);
                let r = z.re.max(0.0) * zb;
                let l = z.im.max(1e-6) * zb / w0;
                for k in 0..3 {
                    source_elements.push(pend.add(Element::SeriesRl {
                        from: None,
                        to: Some(nodes[k]),
                        r,
                        l,
                        emf: 0.0,
                        i: 0.0,
                        u_prev: 0.0,
                    }));
                }
            }
            SourceMode::Ideal => {
                for k in 0..3 {
                    dirichlet_slots.push(dirichlet.len());
                    dirichlet.push((nodes[k], 0.0));
                }
            }
        }
        out.boundaries.push(BoundaryPort {
            bus: *bus,
            nodes,
            source_elements,
            dirichlet_slots,
            v_base_pk,
            i_base_pk,
        });
    }

    // Fault switches.
    for (bus, r_fault) in spec.fault_buses {
        let nodes = *out
            .bus_nodes
            .get(&bus.0)
            .ok_or(BuilderError::UnknownBus(*bus))?;
        let mut ids = [0usize; 3];
        for k in 0..3 {
            ids[k] = pend.add(Element::Switch {
                node: nodes[k],
                r_closed: *r_fault,
                r_open: 1e7,
                closed: false,
                i: 0.0,
            });
        }
        out.fault_switches.insert(bus.0, ids);
    }

    // Converters and the dc link.
    let mut mmc_plans: Vec<(TerminalRole, BusId, MmcHandles)> = Vec::new();
    for (role, bus) in &terminals {
        let ac_bus = out.bus_nodes[&bus.0];
        let kv = out.bus_kv[&bus.0];
        let params = MmcParams::hvdc_default(kv, model.f0_hz);
        let mid = [n_nodes, n_nodes + 1, n_nodes + 2];
        let dc_p = n_nodes + 3;
        let dc_n = n_nodes + 4;
        n_nodes += 5;
        let r_tx = params.l_tx() * w0 / 50.0; // X/R of 50
        let mut tx = [0usize; 3];
        let mut arm_up = [0usize; 3];
        let mut arm_low = [0usize; 3];
        // Arms carry their half-insertion equilibrium EMF from the start;
        // priming then records a stationary history and the first control
        // step does not kick the charged dc side.
        let emf_arm = -params.v_dc_nom / 2.0;
        for k in 0..3 {
            tx[k] = pend.add(Element::SeriesRl {
                from: Some(ac_bus[k]),
                to: Some(mid[k]),
                r: r_tx,
                l: params.l_tx(),
                emf: 0.0,
                i: 0.0,
                u_prev: 0.0,
            });
            arm_up[k] = pend.add(Element::SeriesRl {
                from: Some(dc_p),
                to: Some(mid[k]),
                r: params.r_arm,
                l: params.l_arm,
                emf: emf_arm,
                i: 0.0,
                u_prev: 0.0,
            });
            arm_low[k] = pend.add(Element::SeriesRl {
                from: Some(mid[k]),
                to: Some(dc_n),
                r: params.r_arm,
                l: params.l_arm,
                emf: emf_arm,
                i: 0.0,
                u_prev: 0.0,
            });
        }
        mmc_plans.push((
            *role,
            *bus,
            MmcHandles {
                ac_bus,
                mid,
                dc_p,
                dc_n,
                arm_up,
                arm_low,
                tx,
            },
        ));
    }

    // dc line: cascaded pi sections pole to pole between the two
    // converters. Line capacitance to ground fixes the dc reference.
    let mut dc_precharge: Vec<(usize, f64)> = Vec::new();
    if mmc_plans.len() == 2 {
        let rect = mmc_plans
            .iter()
            .find(|(r, _, _)| *r == TerminalRole::Rectifier);
        let inv = mmc_plans
            .iter()
            .find(|(r, _, _)| *r == TerminalRole::Inverter);
        if let (Some((_, _, hr)), Some((_, _, hi))) = (rect, inv) {
            let lp = &spec.dc_line;
            let ns = lp.sections_per_pole.max(1);
            let sec_km = lp.length_km / ns as f64;
            let r_sec = lp.r_ohm_per_km * sec_km;
            let l_sec = lp.l_h_per_km * sec_km;
            let c_sec = lp.c_f_per_km * sec_km;
            for (a, b, v_pole) in [
                (hr.dc_p, hi.dc_p, 320e3),
                (hr.dc_n, hi.dc_n, -320e3),
            ] {
                let mut chain = vec![a];
                for _ in 1..ns {
                    chain.push(n_nodes);
                    n_nodes += 1;
                }
                chain.push(b);
                for w in chain.windows(2) {
                    pend.add(Element::SeriesRl {
                        from: Some(w[0]),
                        to: Some(w[1]),
                        r: r_sec,
                        l: l_sec,
                        emf: 0.0,
                        i: 0.0,
                        u_prev: 0.0,
                    });
                }
                for (ci, node) in chain.iter().enumerate() {
                    let c = if ci == 0 || ci == chain.len() - 1 {
                        c_sec / 2.0
                    } else {
                        c_sec
                    };
                    pend.add(Element::ShuntC {
                        node: *node,
                        c,
                        v_prev: 0.0,
                        i_prev: 0.0,
                    });
                    dc_precharge.push((*node, v_pole));
                }
            }
        }
    }

    // Assemble the network and prime the dc side at nominal.
    let mut net = EmtNetwork::new(n_nodes);
    for e in pend.elements {
        net.add(e).expect("builder produced a malformed element");
    }
    for (node, v) in dirichlet {
        net.add_dirichlet(node, v);
    }
    let mut v0 = vec![0.0; n_nodes];
    for (_, _, h) in &mmc_plans {
        v0[h.dc_p] = 320e3;
        v0[h.dc_n] = -320e3;
    }
    for (node, v) in dc_precharge {
        v0[node] = v;
    }
    net.prime(&v0);
    out.net = net;

    for (role, bus, handles) in mmc_plans {
        let idx = model.bus_index(bus).unwrap();
        let kv = out.bus_kv[&bus.0];
        let params = MmcParams::hvdc_default(kv, model.f0_hz);
        let control = match role {
            TerminalRole::Rectifier => {
                ConverterControl::power_schedule(1.6667 * params.s_rated_mva, params.s_rated_mva)
            }
            TerminalRole::Inverter => ConverterControl::dc_voltage(params.v_dc_nom),
        };
        let mmc = Mmc::new(params, control, handles, spec.va[idx], spec.vm[idx]);
        out.mmcs.push((role, mmc));
    }

    Ok(out)
}
