//! Buffer-area selection around HVdc terminals.
//!
//! The detailed waveform model must include enough of the surrounding ac
//! network that the phasor boundary stays electrically quiet. Membership
//! is decided by a reactive-injection probe: buses whose voltage moves by
//! at least a threshold percentage when extra vars are pushed in near the
//! terminal belong in the buffer.

use crate::grid::{
    solve_power_flow, BusId, NetworkModel, PfError, PowerFlowOptions, PowerFlowSolution,
};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone)]
pub struct BufferOptions {
    /// Total reactive injection, MVar.
    pub dq_mvar: f64,
    /// Membership threshold on voltage deviation, percent.
    pub threshold_pct: f64,
    /// Injection sites; when empty, the terminal bus and its in-service
    /// first neighbors are used and the injection is split evenly.
    pub inject_buses: Vec<BusId>,
    pub pf: PowerFlowOptions,
}

impl Default for BufferOptions {
    fn default() -> Self {
        BufferOptions {
            dq_mvar: 1000.0,
            threshold_pct: 1.4,
            inject_buses: Vec::new(),
            pf: PowerFlowOptions::default(),
        }
    }
}

#[derive(Debug)]
pub enum BufferError {
    UnknownBus(BusId),
    PowerFlow(PfError),
}

impl fmt::Display for BufferError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BufferError::UnknownBus(b) => write!(f, "unknown bus {b}"),
            BufferError::PowerFlow(e) => write!(f, "power flow failed: {e}"),
        }
    }
}

impl std::error::Error for BufferError {}

impl From<PfError> for BufferError {
    fn from(e: PfError) -> Self {
        BufferError::PowerFlow(e)
    }
}

/// Outcome of a buffer scan around one terminal.
#[derive(Debug, Clone)]
pub struct BufferSelection {
    pub terminal: BusId,
    /// Buses the injection actually went into.
    pub inject_buses: Vec<BusId>,
    /// Voltage deviation per bus in percent, aligned with `model.buses`:
    /// the elementwise maximum over all probe runs.
    pub dv_pct: Vec<f64>,
    /// Buffer members, ascending: threshold hits plus the closure over
    /// ideal branches.
    pub members: BTreeSet<BusId>,
    /// Members with an in-service non-ideal branch to a non-member.
    pub boundary: BTreeSet<BusId>,
}

/// Voltage sensitivity to a reactive probe: per-bus deviation in percent,
/// elementwise max over one probe run per injection site.
pub fn sensitivity(
    model: &NetworkModel,
    inject: &[BusId],
    dq_each_mvar: f64,
    pf: &PowerFlowOptions,
) -> Result<Vec<f64>, BufferError> {
    let base = solve_power_flow(model, pf)?;
    let mut dv = vec![0.0; model.n_buses()];
    for &bus in inject {
        let probed = model
            .apply_reactive_injection(bus, dq_each_mvar)
            .map_err(|_| BufferError::UnknownBus(bus))?;
        let sol = solve_power_flow(&probed, pf)?;
        accumulate_deviation(&base, &sol, &mut dv);
    }
    Ok(dv)
}

fn accumulate_deviation(base: &PowerFlowSolution, probed: &PowerFlowSolution, dv: &mut [f64]) {
    for i in 0..dv.len() {
        let pct = 100.0 * (probed.vm[i] - base.vm[i]).abs() / base.vm[i];
        if pct > dv[i] {
            dv[i] = pct;
        }
    }
}

/// Selects the buffer around `terminal`. The probe is split evenly across
/// the injection sites (terminal plus first neighbors by default), each
/// site is probed in a separate power flow, and a bus joins the buffer if
/// its worst-case deviation reaches the threshold. Ideal branches then
/// extend membership transitively: a super-node is in or out as a whole.
pub fn select_buffer(
    model: &NetworkModel,
    terminal: BusId,
    options: &BufferOptions,
) -> Result<BufferSelection, BufferError> {
    if model.bus_index(terminal).is_none() {
        return Err(BufferError::UnknownBus(terminal));
    }
    let inject: Vec<BusId> = if options.inject_buses.is_empty() {
        let mut v = vec![terminal];
        v.extend(model.neighbors(terminal));
        v
    } else {
        for &b in &options.inject_buses {
            if model.bus_index(b).is_none() {
                return Err(BufferError::UnknownBus(b));
            }
        }
        options.inject_buses.clone()
    };
    let dq_each = options.dq_mvar / inject.len() as f64;
    let dv = sensitivity(model, &inject, dq_each, &options.pf)?;

    let mut members: BTreeSet<BusId> = model
        .buses
        .iter()
        .enumerate()
        .filter(|(i, _)| dv[*i] >= options.threshold_pct)
        .map(|(_, b)| b.id)
        .collect();
    members.insert(terminal);
    let members = ideal_branch_closure(model, &members);
    let boundary = boundary_buses(model, &members);

    Ok(BufferSelection {
        terminal,
        inject_buses: inject,
        dv_pct: dv,
        members,
        boundary,
    })
}

/// Expands a bus set across in-service ideal branches until no ideal
/// branch crosses the membership edge.
pub fn ideal_branch_closure(model: &NetworkModel, seed: &BTreeSet<BusId>) -> BTreeSet<BusId> {
    let mut members = seed.clone();
    loop {
        let mut grew = false;
        for br in model.branches.iter().filter(|b| b.status && b.is_ideal()) {
            let inside = (members.contains(&br.from), members.contains(&br.to));
            match inside {
                (true, false) => {
                    members.insert(br.to);
                    grew = true;
                }
                (false, true) => {
                    members.insert(br.from);
                    grew = true;
                }
                _ => {}
            }
        }
        if !grew {
            return members;
        }
    }
}

/// Members that touch the outside through an in-service non-ideal branch.
pub fn boundary_buses(model: &NetworkModel, members: &BTreeSet<BusId>) -> BTreeSet<BusId> {
    let mut out = BTreeSet::new();
    for br in model.branches.iter().filter(|b| b.status && !b.is_ideal()) {
        let inside = (members.contains(&br.from), members.contains(&br.to));
        match inside {
            (true, false) => {
                out.insert(br.from);
            }
            (false, true) => {
                out.insert(br.to);
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_network;

    /// Slack - 2 - 3 - 4 chain with weakening coupling; terminal at bus 4.
    fn chain() -> NetworkModel {
        parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,a,345,1,1.0,0\n3,b,345,1,1.0,0\n4,term,345,1,1.0,0\n\
             [LOAD]\n4,50,10,1\n\
             [BRANCH]\n1,2,0.002,0.02,0.0,900,1,0\n2,3,0.005,0.05,0.0,900,1,0\n\
             3,4,0.01,0.1,0.0,900,1,0\n\
             [HVDC_TERMINAL]\n4,rectifier\n[SYSTEM]\n100,60\n",
        )
        .unwrap()
    }

    #[test]
    fn deviation_decays_away_from_injection() {
        let m = chain();
        let dv = sensitivity(&m, &[BusId(4)], 500.0, &PowerFlowOptions::default()).unwrap();
        assert!(dv[3] > dv[2]);
        assert!(dv[2] > dv[1]);
        assert!(dv[1] > dv[0]);
        assert_eq!(dv[0], 0.0); // slack magnitude is held
    }

    #[test]
    fn terminal_always_selected() {
        let m = chain();
        let sel = select_buffer(
            &m,
            BusId(4),
            &BufferOptions {
                dq_mvar: 1.0, // far too small to move anything
                ..Default::default()
            },
        )
        .unwrap();
        assert!(sel.members.contains(&BusId(4)));
    }

    #[test]
    fn higher_threshold_never_grows_buffer() {
        let m = chain();
        let mut last = usize::MAX;
        for thr in [0.5, 1.4, 3.0] {
            let sel = select_buffer(
                &m,
                BusId(4),
                &BufferOptions {
                    dq_mvar: 300.0,
                    threshold_pct: thr,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(sel.members.len() <= last);
            last = sel.members.len();
        }
    }

    #[test]
    fn default_injection_sites_are_terminal_and_neighbors() {
        let m = chain();
        let sel = select_buffer(&m, BusId(4), &BufferOptions::default()).unwrap();
        assert_eq!(sel.inject_buses, vec![BusId(4), BusId(3)]);
    }

    #[test]
    fn closure_pulls_in_ideal_tails() {
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,a,345,1,1.0,0\n3,tail,345,1,1.0,0\n\
             [BRANCH]\n1,2,0.01,0.1,0.0,900,1,0\n2,3,0.0,0.0,0.0,900,1,1\n\
             [SYSTEM]\n100,60\n",
        )
        .unwrap();
        let seed: BTreeSet<BusId> = [BusId(2)].into_iter().collect();
        let closed = ideal_branch_closure(&m, &seed);
        assert!(closed.contains(&BusId(3)));
        assert!(!closed.contains(&BusId(1)));
        let boundary = boundary_buses(&m, &closed);
        assert_eq!(boundary.len(), 1);
        assert!(boundary.contains(&BusId(2)));
    }

    #[test]
    fn boundary_ignores_out_of_service_branches() {
        let mut m = chain();
        m.branches[1].status = false; // cut 2-3
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
        let members: BTreeSet<BusId> = [BusId(3), BusId(4)].into_iter().collect();
        let boundary = boundary_buses(&m, &members);
        assert!(boundary.is_empty());
    }
}
