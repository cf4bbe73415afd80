//! Phasor-domain network model: file format, validation, admittance
//! assembly and Newton-Raphson power flow.

mod parse;
mod powerflow;
mod ybus;

pub use parse::{load_network, parse_network, serialize_network};
pub use powerflow::{solve_power_flow, PfError, PowerFlowOptions, PowerFlowSolution};
pub use ybus::{build_ybus, MergePlan, Ybus};

use std::collections::{BTreeSet, HashMap};
use std::fmt;

/// External bus number as it appears in network files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Pq,
    Pv,
    Slack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    pub base_kv: f64,
    pub kind: BusKind,
    /// Voltage magnitude, per unit.
    pub vm: f64,
    /// Voltage angle, radians (degrees in files).
    pub va: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shunt {
    pub bus: BusId,
    /// Active power drawn at 1.0 pu voltage, MW.
    pub g_mw: f64,
    /// Reactive power injected at 1.0 pu voltage, MVar (negative for reactors).
    pub b_mvar: f64,
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub qmax: f64,
    pub qmin: f64,
    pub vset: f64,
    /// Machine MVA base.
    pub mbase: f64,
    pub status: bool,
    /// Inertia constant, seconds on mbase.
    pub h_s: f64,
    /// Damping, per unit on mbase.
    pub d_pu: f64,
    /// Transient reactance, per unit on mbase.
    pub xdp_pu: f64,
}

impl Generator {
    /// Transient reactance converted to the system MVA base.
    pub fn xdp_system(&self, sbase_mva: f64) -> f64 {
        self.xdp_pu * sbase_mva / self.mbase
    }

    /// Damping converted to the system MVA base. Files carrying `d_pu = 0`
    /// fall back to 1.0 pu on the machine base so that EI-scale cases do
    /// not ring forever.
    pub fn d_system(&self, sbase_mva: f64) -> f64 {
        let d = if self.d_pu == 0.0 { 1.0 } else { self.d_pu };
        d * self.mbase / sbase_mva
    }

    /// Inertia constant, seconds on the system MVA base.
    pub fn h_system(&self, sbase_mva: f64) -> f64 {
        self.h_s * self.mbase / sbase_mva
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    pub r_pu: f64,
    pub x_pu: f64,
    /// Total line charging, per unit.
    pub b_pu: f64,
    pub rate_mva: f64,
    /// Off-nominal turns ratio on the from side (1.0 = none; not carried
    /// by the file format, settable programmatically).
    pub tap: f64,
    pub status: bool,
    pub ideal: bool,
}

impl Branch {
    /// Near-zero-impedance jumpers are merged into super-nodes before
    /// admittance assembly.
    pub fn is_ideal(&self) -> bool {
        self.ideal || (self.r_pu.abs() <= 1e-5 && self.x_pu.abs() <= 1e-4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalRole {
    Rectifier,
    Inverter,
}

impl fmt::Display for TerminalRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalRole::Rectifier => write!(f, "rectifier"),
            TerminalRole::Inverter => write!(f, "inverter"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HvdcTerminal {
    pub bus: BusId,
    pub role: TerminalRole,
}

#[derive(Debug)]
pub enum GridError {
    Syntax { line: usize, msg: String },
    UnknownSection { line: usize, name: String },
    DuplicateBus(BusId),
    UnknownBus { referenced: BusId, by: String },
    MissingSlack,
    Invalid(String),
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::Syntax { line, msg } => write!(f, "line {line}: {msg}"),
            GridError::UnknownSection { line, name } => {
                write!(f, "line {line}: unknown section [{name}]")
            }
            GridError::DuplicateBus(id) => write!(f, "duplicate bus id {id}"),
            GridError::UnknownBus { referenced, by } => {
                write!(f, "{by} references unknown bus {referenced}")
            }
            GridError::MissingSlack => write!(f, "no slack bus declared"),
            GridError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for GridError {}

/// Immutable phasor-domain grid description. Construction validates all
/// referential integrity and per-element invariants; the model is safe to
/// share across threads afterwards.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub loads: Vec<Load>,
    pub shunts: Vec<Shunt>,
    pub gens: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub hvdc_terminals: Vec<HvdcTerminal>,
    pub sbase_mva: f64,
    pub f0_hz: f64,
    index: HashMap<BusId, usize>,
}

impl NetworkModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        buses: Vec<Bus>,
        loads: Vec<Load>,
        shunts: Vec<Shunt>,
        gens: Vec<Generator>,
        branches: Vec<Branch>,
        hvdc_terminals: Vec<HvdcTerminal>,
        sbase_mva: f64,
        f0_hz: f64,
    ) -> Result<Self, GridError> {
        let mut index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if b.base_kv <= 0.0 {
                return Err(GridError::Invalid(format!(
                    "bus {}: base_kv must be positive",
                    b.id
                )));
            }
            if index.insert(b.id, i).is_some() {
                return Err(GridError::DuplicateBus(b.id));
            }
        }
        let model = NetworkModel {
            buses,
            loads,
            shunts,
            gens,
            branches,
            hvdc_terminals,
            sbase_mva,
            f0_hz,
            index,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), GridError> {
        let check = |id: BusId, by: String| -> Result<(), GridError> {
            if self.index.contains_key(&id) {
                Ok(())
            } else {
                Err(GridError::UnknownBus {
                    referenced: id,
                    by,
                })
            }
        };
        for (i, l) in self.loads.iter().enumerate() {
            check(l.bus, format!("load {}", i + 1))?;
        }
        for (i, s) in self.shunts.iter().enumerate() {
            check(s.bus, format!("shunt {}", i + 1))?;
        }
        for (i, g) in self.gens.iter().enumerate() {
            check(g.bus, format!("generator {}", i + 1))?;
            if g.qmin > g.qmax {
                return Err(GridError::Invalid(format!(
                    "generator {} at bus {}: qmin > qmax",
                    i + 1,
                    g.bus
                )));
            }
            if g.mbase <= 0.0 {
                return Err(GridError::Invalid(format!(
                    "generator {} at bus {}: mbase must be positive",
                    i + 1,
                    g.bus
                )));
            }
            if g.status && g.h_s <= 0.0 {
                return Err(GridError::Invalid(format!(
                    "in-service generator {} at bus {}: inertia must be positive",
                    i + 1,
                    g.bus
                )));
            }
        }
        for (i, br) in self.branches.iter().enumerate() {
            check(br.from, format!("branch {}", i + 1))?;
            check(br.to, format!("branch {}", i + 1))?;
            if br.from == br.to {
                return Err(GridError::Invalid(format!(
                    "branch {}: from and to are the same bus {}",
                    i + 1,
                    br.from
                )));
            }
            if !br.ideal && br.r_pu == 0.0 && br.x_pu == 0.0 {
                return Err(GridError::Invalid(format!(
                    "branch {} ({}-{}): zero impedance requires the ideal flag",
                    i + 1,
                    br.from,
                    br.to
                )));
            }
        }
        for t in &self.hvdc_terminals {
            check(t.bus, format!("hvdc {} terminal", t.role))?;
        }
        if !self.buses.iter().any(|b| b.kind == BusKind::Slack) {
            return Err(GridError::MissingSlack);
        }
        if self.sbase_mva <= 0.0 || self.f0_hz <= 0.0 {
            return Err(GridError::Invalid(
                "system base MVA and frequency must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn terminal(&self, role: TerminalRole) -> Option<BusId> {
        self.hvdc_terminals
            .iter()
            .find(|t| t.role == role)
            .map(|t| t.bus)
    }

    /// Connected components over in-service branches (ideal branches count
    /// as connections). Each island is an ascending set of bus ids.
    pub fn islands(&self) -> Vec<BTreeSet<BusId>> {
        let n = self.buses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for br in self.branches.iter().filter(|b| b.status) {
            let a = self.bus_index(br.from).unwrap();
            let b = self.bus_index(br.to).unwrap();
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let mut by_root: HashMap<usize, BTreeSet<BusId>> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            by_root.entry(r).or_default().insert(self.buses[i].id);
        }
        let mut islands: Vec<BTreeSet<BusId>> = by_root.into_values().collect();
        islands.sort_by_key(|s| *s.iter().next().unwrap());
        islands
    }

    /// The island containing the slack bus.
    pub fn slack_island(&self) -> BTreeSet<BusId> {
        let slack = self
            .buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .expect("validated model has a slack bus")
            .id;
        self.islands()
            .into_iter()
            .find(|s| s.contains(&slack))
            .unwrap()
    }

    /// A copy restricted to the slack island, for explicit pruning of
    /// disconnected islands.
    pub fn pruned_to_slack_island(&self) -> Result<NetworkModel, GridError> {
        let keep = self.slack_island();
        let buses = self
            .buses
            .iter()
            .filter(|b| keep.contains(&b.id))
            .cloned()
            .collect();
        let loads = self
            .loads
            .iter()
            .filter(|l| keep.contains(&l.bus))
            .cloned()
            .collect();
        let shunts = self
            .shunts
            .iter()
            .filter(|s| keep.contains(&s.bus))
            .cloned()
            .collect();
        let gens = self
            .gens
            .iter()
            .filter(|g| keep.contains(&g.bus))
            .cloned()
            .collect();
        let branches = self
            .branches
            .iter()
            .filter(|br| keep.contains(&br.from) && keep.contains(&br.to))
            .cloned()
            .collect();
        let hvdc = self
            .hvdc_terminals
            .iter()
            .filter(|t| keep.contains(&t.bus))
            .cloned()
            .collect();
        NetworkModel::new(
            buses,
            loads,
            shunts,
            gens,
            branches,
            hvdc,
            self.sbase_mva,
            self.f0_hz,
        )
    }

    /// Returns a copy with a reactive injection (negative-load convention)
    /// of `dq_mvar` added at `bus`; the original is untouched.
    pub fn apply_reactive_injection(
        &self,
        bus: BusId,
        dq_mvar: f64,
    ) -> Result<NetworkModel, GridError> {
        if self.bus_index(bus).is_none() {
            return Err(GridError::UnknownBus {
                referenced: bus,
                by: "reactive injection".into(),
            });
        }
        let mut out = self.clone();
        out.loads.push(Load {
            bus,
            p_mw: 0.0,
            q_mvar: -dq_mvar,
            status: true,
        });
        Ok(out)
    }

    /// Net reactive load at a bus in MVar (loads minus injections), for
    /// checking injection bookkeeping.
    pub fn net_q_load_mvar(&self, bus: BusId) -> f64 {
        self.loads
            .iter()
            .filter(|l| l.status && l.bus == bus)
            .map(|l| l.q_mvar)
            .sum()
    }

    /// In-service branch indices incident to a bus.
    pub fn branches_at(&self, bus: BusId) -> Vec<usize> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.status && (b.from == bus || b.to == bus))
            .map(|(i, _)| i)
            .collect()
    }

    /// In-service first neighbors of a bus, ascending.
    pub fn neighbors(&self, bus: BusId) -> BTreeSet<BusId> {
        let mut out = BTreeSet::new();
        for b in self.branches.iter().filter(|b| b.status) {
            if b.from == bus {
                out.insert(b.to);
            } else if b.to == bus {
                out.insert(b.from);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse::parse_network;

    fn two_bus() -> NetworkModel {
        parse_network(
            "[BUS]\n1,slack,230,3,1.0,0\n2,far,230,1,1.0,0\n\
             [BRANCH]\n1,2,0.0,0.1,0.0,500,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap()
    }

    #[test]
    fn injection_zero_is_identity() {
        let m = two_bus();
        let m2 = m.apply_reactive_injection(BusId(2), 0.0).unwrap();
        assert_eq!(m2.net_q_load_mvar(BusId(2)), m.net_q_load_mvar(BusId(2)));
    }

    #[test]
    fn injection_decreases_net_q_load() {
        let m = two_bus();
        let m2 = m.apply_reactive_injection(BusId(2), 1000.0).unwrap();
        assert_eq!(
            m2.net_q_load_mvar(BusId(2)),
            m.net_q_load_mvar(BusId(2)) - 1000.0
        );
    }

    #[test]
    fn injection_is_additive() {
        let m = two_bus();
        let twice = m
            .apply_reactive_injection(BusId(2), 500.0)
            .unwrap()
            .apply_reactive_injection(BusId(2), 500.0)
            .unwrap();
        let once = m.apply_reactive_injection(BusId(2), 1000.0).unwrap();
        assert_eq!(
            twice.net_q_load_mvar(BusId(2)),
            once.net_q_load_mvar(BusId(2))
        );
    }

    #[test]
    fn injection_at_unknown_bus_fails() {
        let m = two_bus();
        assert!(m.apply_reactive_injection(BusId(99), 10.0).is_err());
    }

    #[test]
    fn islands_split_on_out_of_service_branch() {
        let mut m = two_bus();
        assert_eq!(m.islands().len(), 1);
        m.branches[0].status = false;
        let m = NetworkModel::new(
            m.buses,
            m.loads,
            m.shunts,
            m.gens,
            m.branches,
            m.hvdc_terminals,
            m.sbase_mva,
            m.f0_hz,
        )
        .unwrap();
        assert_eq!(m.islands().len(), 2);
        assert!(m.slack_island().contains(&BusId(1)));
        let pruned = m.pruned_to_slack_island().unwrap();
        assert_eq!(pruned.n_buses(), 1);
    }
}
