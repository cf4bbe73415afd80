//! Newton-Raphson power flow in polar form with generator reactive limits.
//!
//! The solver works on the super-node network produced by ideal-branch
//! merging. PV nodes whose aggregate reactive requirement leaves the
//! [qmin, qmax] envelope are switched to PQ at the violated limit and may
//! switch back if their voltage later crosses the setpoint again.

use super::{build_ybus, BusId, BusKind, NetworkModel, Ybus};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::fmt;

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    /// Convergence threshold on the largest |P| or |Q| mismatch, pu.
    pub tol: f64,
    /// Newton iteration cap per solve round.
    pub max_iter: usize,
    /// Start from 1.0 pu / setpoints instead of the voltages in the file.
    pub flat_start: bool,
    /// Enforce generator reactive limits by PV-PQ switching.
    pub enforce_q_limits: bool,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol: 1e-8,
            max_iter: 50,
            flat_start: true,
            enforce_q_limits: true,
        }
    }
}

#[derive(Debug)]
pub enum PfError {
    Diverged {
        iterations: usize,
        max_mismatch_pu: f64,
        worst_bus: BusId,
    },
    Singular {
        iteration: usize,
    },
}

impl fmt::Display for PfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PfError::Diverged {
                iterations,
                max_mismatch_pu,
                worst_bus,
            } => write!(
                f,
                "power flow did not converge after {iterations} iterations \
                 (worst mismatch {max_mismatch_pu:.3e} pu at bus {worst_bus})"
            ),
            PfError::Singular { iteration } => {
                write!(f, "singular Jacobian at iteration {iteration}")
            }
        }
    }
}

impl std::error::Error for PfError {}

#[derive(Debug, Clone, Copy, Default)]
pub struct BranchFlow {
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus, pu, aligned with `model.buses`.
    pub vm: Vec<f64>,
    /// Voltage angle per bus, radians.
    pub va: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
    /// Dispatched output per generator, aligned with `model.gens`.
    pub gen_p_mw: Vec<f64>,
    pub gen_q_mvar: Vec<f64>,
    /// Representative buses of PV nodes held at a reactive limit.
    pub pinned_buses: Vec<BusId>,
    /// Per-branch flows, aligned with `model.branches`. Ideal and
    /// out-of-service branches report zeros.
    pub branch_flows: Vec<BranchFlow>,
    /// Total dispatched P/Q at the slack super-node, MW / MVar.
    pub slack_p_mw: f64,
    pub slack_q_mvar: f64,
}

impl PowerFlowSolution {
    pub fn bus_voltage(&self, bus_index: usize) -> Complex64 {
        Complex64::from_polar(self.vm[bus_index], self.va[bus_index])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pin {
    Free,
    AtMax,
    AtMin,
}

/// Per-super-node scheduling data gathered from the model.
struct NodeData {
    kind: NodeKind,
    /// P injection excluding dispatchable generators, pu.
    p_base: f64,
    /// Q injection excluding dispatchable generators, pu.
    q_base: f64,
    /// Scheduled P of dispatchable generators (ignored at the slack), pu.
    p_dispatch_sched: f64,
    /// Aggregate reactive envelope of dispatchable generators, pu.
    q_min: f64,
    q_max: f64,
    /// Voltage setpoint (PV: generator vset, slack: bus record).
    v_set: f64,
    /// Slack angle, radians; meaningful only for the slack node.
    a_set: f64,
}

pub fn solve_power_flow(
    model: &NetworkModel,
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PfError> {
    let ybus = build_ybus(model);
    let n = ybus.n();
    let nodes = classify_nodes(model, &ybus);

    // State per super-node.
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    let slack = nodes
        .iter()
        .position(|d| d.kind == NodeKind::Slack)
        .expect("validated model has a slack bus");
    for (i, d) in nodes.iter().enumerate() {
        va[i] = nodes[slack].a_set;
        vm[i] = match d.kind {
            NodeKind::Slack | NodeKind::Pv => d.v_set,
            NodeKind::Pq => 1.0,
        };
        if !options.flat_start {
            let rep = ybus.plan.groups[i][0];
            vm[i] = model.buses[rep].vm;
            va[i] = model.buses[rep].va;
        }
    }
    // Slack values always come from the bus record.
    vm[slack] = nodes[slack].v_set;
    va[slack] = nodes[slack].a_set;

    let mut kind: Vec<NodeKind> = nodes.iter().map(|d| d.kind).collect();
    let mut pin = vec![Pin::Free; n];
    let mut switches = vec![0usize; n];
    let mut total_iters = 0usize;
    let mut final_mismatch = 0.0f64;
    let rep_bus: Vec<BusId> = ybus
        .plan
        .groups
        .iter()
        .map(|g| model.buses[g[0]].id)
        .collect();

    // Outer rounds: solve, audit reactive limits, switch, repeat.
    for _round in 0..=2 * n + 4 {
        let (iters, mismatch) = newton_solve(
            &ybus, &nodes, &kind, &pin, &rep_bus, &mut vm, &mut va, options, total_iters,
        )?;
        total_iters += iters;
        final_mismatch = mismatch;
        if !options.enforce_q_limits {
            break;
        }
        let mut changed = false;
        for i in 0..n {
            if nodes[i].kind != NodeKind::Pv || switches[i] >= 4 {
                continue;
            }
            let (_, q) = node_power(&ybus, &vm, &va, i);
            let q_disp = q - nodes[i].q_base;
            const EPS: f64 = 1e-7;
            match pin[i] {
                Pin::Free => {
                    if q_disp > nodes[i].q_max + EPS {
                        pin[i] = Pin::AtMax;
                        kind[i] = NodeKind::Pq;
                        switches[i] += 1;
                        changed = true;
                    } else if q_disp < nodes[i].q_min - EPS {
                        pin[i] = Pin::AtMin;
                        kind[i] = NodeKind::Pq;
                        switches[i] += 1;
                        changed = true;
                    }
                }
                Pin::AtMax => {
                    // Max support no longer needed once V exceeds the setpoint.
                    if vm[i] > nodes[i].v_set + EPS {
                        pin[i] = Pin::Free;
                        kind[i] = NodeKind::Pv;
                        vm[i] = nodes[i].v_set;
                        switches[i] += 1;
                        changed = true;
                    }
                }
                Pin::AtMin => {
                    if vm[i] < nodes[i].v_set - EPS {
                        pin[i] = Pin::Free;
                        kind[i] = NodeKind::Pv;
                        vm[i] = nodes[i].v_set;
                        switches[i] += 1;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    Ok(assemble_solution(
        model,
        &ybus,
        &nodes,
        &kind,
        &pin,
        &vm,
        &va,
        slack,
        total_iters,
        final_mismatch,
    ))
}

/// One Newton solve at a fixed PV/PQ type assignment. Returns iterations
/// used and the final worst mismatch.
#[allow(clippy::too_many_arguments)]
fn newton_solve(
    ybus: &Ybus,
    nodes: &[NodeData],
    kind: &[NodeKind],
    pin: &[Pin],
    rep_bus: &[BusId],
    vm: &mut [f64],
    va: &mut [f64],
    options: &PowerFlowOptions,
    iters_before: usize,
) -> Result<(usize, f64), PfError> {
    let n = ybus.n();
    let ang: Vec<usize> = (0..n).filter(|&i| kind[i] != NodeKind::Slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| kind[i] == NodeKind::Pq).collect();
    let na = ang.len();
    let nm = mag.len();
    // Position of each node in the angle unknown list.
    let mut ang_pos = vec![usize::MAX; n];
    for (k, &i) in ang.iter().enumerate() {
        ang_pos[i] = k;
    }
    let mut mag_pos = vec![usize::MAX; n];
    for (k, &i) in mag.iter().enumerate() {
        mag_pos[i] = k;
    }

    let sched = |i: usize| -> (f64, f64) {
        let d = &nodes[i];
        let p = d.p_base + d.p_dispatch_sched;
        let q = match pin[i] {
            Pin::Free => d.q_base,
            Pin::AtMax => d.q_base + d.q_max,
            Pin::AtMin => d.q_base + d.q_min,
        };
        (p, q)
    };

    if na == 0 {
        return Ok((0, 0.0));
    }

    for iter in 0..options.max_iter {
        // Mismatches.
        let mut f = DVector::zeros(na + nm);
        let mut worst = 0.0f64;
        let mut worst_node = 0usize;
        let mut p_calc = vec![0.0; n];
        let mut q_calc = vec![0.0; n];
        for i in 0..n {
            let (p, q) = node_power(ybus, vm, va, i);
            p_calc[i] = p;
            q_calc[i] = q;
        }
        for (k, &i) in ang.iter().enumerate() {
            let dp = sched(i).0 - p_calc[i];
            f[k] = dp;
            if dp.abs() > worst {
                worst = dp.abs();
                worst_node = i;
            }
        }
        for (k, &i) in mag.iter().enumerate() {
            let dq = sched(i).1 - q_calc[i];
            f[na + k] = dq;
            if dq.abs() > worst {
                worst = dq.abs();
                worst_node = i;
            }
        }
        if worst < options.tol {
            return Ok((iter, worst));
        }
        if !worst.is_finite() || worst > 1e6 {
            return Err(PfError::Diverged {
                iterations: iters_before + iter,
                max_mismatch_pu: worst,
                worst_bus: rep_bus[worst_node],
            });
        }

        // Jacobian of calculated injections w.r.t. [theta(ang); V(mag)].
        let mut jac = DMatrix::zeros(na + nm, na + nm);
        for i in 0..n {
            let vi = vm[i];
            for (&j, &yij) in &ybus.rows[i] {
                let (g, b) = (yij.re, yij.im);
                let (dp_dt, dq_dt, dp_dv, dq_dv);
                if i == j {
                    dp_dt = -q_calc[i] - b * vi * vi;
                    dq_dt = p_calc[i] - g * vi * vi;
                    dp_dv = p_calc[i] / vi + g * vi;
                    dq_dv = q_calc[i] / vi - b * vi;
                } else {
                    let th = va[i] - va[j];
                    let (s, c) = th.sin_cos();
                    let vj = vm[j];
                    dp_dt = vi * vj * (g * s - b * c);
                    dq_dt = -vi * vj * (g * c + b * s);
                    dp_dv = vi * (g * c + b * s);
                    dq_dv = vi * (g * s - b * c);
                }
                let (ri_p, ri_q) = (ang_pos[i], mag_pos[i]);
                let (cj_t, cj_v) = (ang_pos[j], mag_pos[j]);
                if ri_p != usize::MAX {
                    if cj_t != usize::MAX {
                        jac[(ri_p, cj_t)] += dp_dt;
                    }
                    if cj_v != usize::MAX {
                        jac[(ri_p, na + cj_v)] += dp_dv;
                    }
                }
                if ri_q != usize::MAX {
                    if cj_t != usize::MAX {
                        jac[(na + ri_q, cj_t)] += dq_dt;
                    }
                    if cj_v != usize::MAX {
                        jac[(na + ri_q, na + cj_v)] += dq_dv;
                    }
                }
            }
        }

        let lu = jac.lu();
        let dx = lu.solve(&f).ok_or(PfError::Singular {
            iteration: iters_before + iter,
        })?;
        for (k, &i) in ang.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in mag.iter().enumerate() {
            vm[i] += dx[na + k];
            if vm[i] < 1e-3 {
                vm[i] = 1e-3; // keep V/vi terms finite while iterating
            }
        }
    }

    // Out of iterations: report the residual mismatch.
    let mut worst = 0.0f64;
    let mut worst_node = 0usize;
    for i in 0..ybus.n() {
        let (p, q) = node_power(ybus, vm, va, i);
        if kind[i] != NodeKind::Slack {
            let dp = (sched(i).0 - p).abs();
            if dp > worst {
                worst = dp;
                worst_node = i;
            }
        }
        if kind[i] == NodeKind::Pq {
            let dq = (sched(i).1 - q).abs();
            if dq > worst {
                worst = dq;
                worst_node = i;
            }
        }
    }
    Err(PfError::Diverged {
        iterations: iters_before + options.max_iter,
        max_mismatch_pu: worst,
        worst_bus: rep_bus[worst_node],
    })
}

/// Calculated P and Q injection at a node, pu.
fn node_power(ybus: &Ybus, vm: &[f64], va: &[f64], i: usize) -> (f64, f64) {
    let mut p = 0.0;
    let mut q = 0.0;
    let vi = vm[i];
    for (&j, &yij) in &ybus.rows[i] {
        let th = va[i] - va[j];
        let (s, c) = th.sin_cos();
        p += vi * vm[j] * (yij.re * c + yij.im * s);
        q += vi * vm[j] * (yij.re * s - yij.im * c);
    }
    (p, q)
}

fn classify_nodes(model: &NetworkModel, ybus: &Ybus) -> Vec<NodeData> {
    let sb = model.sbase_mva;
    let n = ybus.n();
    let mut out = Vec::with_capacity(n);
    for group in &ybus.plan.groups {
        let mut kind = NodeKind::Pq;
        let mut v_set = 1.0;
        let mut a_set = 0.0;
        let mut p_base = 0.0;
        let mut q_base = 0.0;
        let mut p_dispatch = 0.0;
        let mut q_min = 0.0;
        let mut q_max = 0.0;
        let mut pv_vset: Option<f64> = None;
        for &bi in group {
            let bus = &model.buses[bi];
            if bus.kind == BusKind::Slack {
                kind = NodeKind::Slack;
                v_set = bus.vm;
                a_set = bus.va;
            }
        }
        for &bi in group {
            let bus = &model.buses[bi];
            for l in model.loads.iter().filter(|l| l.status && l.bus == bus.id) {
                p_base -= l.p_mw / sb;
                q_base -= l.q_mvar / sb;
            }
            for g in model.gens.iter().filter(|g| g.status && g.bus == bus.id) {
                if bus.kind == BusKind::Pq && kind != NodeKind::Slack {
                    // Fixed injection: the machine holds its scheduled output.
                    p_base += g.p_mw / sb;
                    q_base += g.q_mvar / sb;
                    continue;
                }
                // Machines at PV or slack member buses (and anything merged
                // into the slack node) are dispatched by the solver.
                p_dispatch += g.p_mw / sb;
                q_min += g.qmin / sb;
                q_max += g.qmax / sb;
                if bus.kind == BusKind::Pv && pv_vset.is_none() {
                    pv_vset = Some(g.vset);
                }
            }
        }
        if kind != NodeKind::Slack {
            if let Some(vs) = pv_vset {
                kind = NodeKind::Pv;
                v_set = vs;
            }
        }
        out.push(NodeData {
            kind,
            p_base,
            q_base,
            p_dispatch_sched: p_dispatch,
            q_min,
            q_max,
            v_set,
            a_set,
        });
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn assemble_solution(
    model: &NetworkModel,
    ybus: &Ybus,
    nodes: &[NodeData],
    kind: &[NodeKind],
    pin: &[Pin],
    vm_node: &[f64],
    va_node: &[f64],
    slack: usize,
    iterations: usize,
    max_mismatch_pu: f64,
) -> PowerFlowSolution {
    let sb = model.sbase_mva;
    let nb = model.n_buses();
    let mut vm = vec![0.0; nb];
    let mut va = vec![0.0; nb];
    for (node, group) in ybus.plan.groups.iter().enumerate() {
        for &bi in group {
            vm[bi] = vm_node[node];
            va[bi] = va_node[node];
        }
    }

    // Generator dispatch. At each node the reactive requirement of the
    // dispatchable machines is shared at a common fraction of each
    // machine's [qmin, qmax] range, which keeps every unit inside its own
    // limits whenever the aggregate is inside the aggregate envelope.
    let mut gen_p = vec![0.0; model.gens.len()];
    let mut gen_q = vec![0.0; model.gens.len()];
    let mut slack_p_mw = 0.0;
    let mut slack_q_mvar = 0.0;
    for (node, group) in ybus.plan.groups.iter().enumerate() {
        let (p_calc, q_calc) = node_power(ybus, vm_node, va_node, node);
        let d = &nodes[node];
        let is_slack = node == slack;
        let dispatchable: Vec<usize> = model
            .gens
            .iter()
            .enumerate()
            .filter(|(_, g)| {
                g.status
                    && group.contains(&model.bus_index(g.bus).unwrap())
                    && {
                        let bk = model.bus(g.bus).unwrap().kind;
                        bk == BusKind::Pv || bk == BusKind::Slack || is_slack
                    }
            })
            .map(|(i, _)| i)
            .collect();
        if dispatchable.is_empty() {
            // Fixed gens already carry their scheduled output.
            for (gi, g) in model.gens.iter().enumerate() {
                if g.status && group.contains(&model.bus_index(g.bus).unwrap()) {
                    gen_p[gi] = g.p_mw;
                    gen_q[gi] = g.q_mvar;
                }
            }
            if is_slack {
                slack_p_mw = (p_calc - d.p_base) * sb;
                slack_q_mvar = (q_calc - d.q_base) * sb;
            }
            continue;
        }
        let q_disp_mvar = (q_calc - d.q_base) * sb;
        let q_min_mvar: f64 = dispatchable.iter().map(|&i| model.gens[i].qmin).sum();
        let q_max_mvar: f64 = dispatchable.iter().map(|&i| model.gens[i].qmax).sum();
        let range = q_max_mvar - q_min_mvar;
        let mbase_sum: f64 = dispatchable.iter().map(|&i| model.gens[i].mbase).sum();
        for &gi in &dispatchable {
            let g = &model.gens[gi];
            gen_q[gi] = if range > 1e-9 {
                let frac = (q_disp_mvar - q_min_mvar) / range;
                g.qmin + frac * (g.qmax - g.qmin)
            } else {
                q_disp_mvar * g.mbase / mbase_sum
            };
        }
        if is_slack {
            let p_disp_mvar = (p_calc - d.p_base) * sb;
            for &gi in &dispatchable {
                gen_p[gi] = p_disp_mvar * model.gens[gi].mbase / mbase_sum;
            }
            slack_p_mw = p_disp_mvar;
            slack_q_mvar = q_disp_mvar;
        } else {
            for &gi in &dispatchable {
                gen_p[gi] = model.gens[gi].p_mw;
            }
        }
        // Fixed gens merged into a dispatchable node keep their schedule.
        for (gi, g) in model.gens.iter().enumerate() {
            if g.status
                && group.contains(&model.bus_index(g.bus).unwrap())
                && !dispatchable.contains(&gi)
            {
                gen_p[gi] = g.p_mw;
                gen_q[gi] = g.q_mvar;
            }
        }
    }

    // Branch flows from the solved voltages.
    let mut flows = vec![BranchFlow::default(); model.branches.len()];
    for (bi, br) in model.branches.iter().enumerate() {
        if !br.status || br.is_ideal() {
            continue;
        }
        let f = ybus.plan.node_of_bus[model.bus_index(br.from).unwrap()];
        let t = ybus.plan.node_of_bus[model.bus_index(br.to).unwrap()];
        let vf = Complex64::from_polar(vm_node[f], va_node[f]);
        let vt = Complex64::from_polar(vm_node[t], va_node[t]);
        let y = Complex64::new(1.0, 0.0) / Complex64::new(br.r_pu, br.x_pu);
        let half_b = Complex64::new(0.0, br.b_pu / 2.0);
        let tap = br.tap;
        let i_from = vf * (y + half_b) / (tap * tap) - vt * y / tap;
        let i_to = vt * (y + half_b) - vf * y / tap;
        let s_from = vf * i_from.conj() * sb;
        let s_to = vt * i_to.conj() * sb;
        flows[bi] = BranchFlow {
            p_from_mw: s_from.re,
            q_from_mvar: s_from.im,
            p_to_mw: s_to.re,
            q_to_mvar: s_to.im,
        };
    }

    let pinned_buses = (0..ybus.n())
        .filter(|&i| kind[i] == NodeKind::Pq && pin[i] != Pin::Free)
        .map(|i| model.buses[ybus.plan.groups[i][0]].id)
        .collect();

    PowerFlowSolution {
        vm,
        va,
        iterations,
        max_mismatch_pu,
        gen_p_mw: gen_p,
        gen_q_mvar: gen_q,
        pinned_buses,
        branch_flows: flows,
        slack_p_mw,
        slack_q_mvar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_network;
    use approx::assert_relative_eq;

    #[test]
    fn two_bus_matches_closed_form() {
        // Load P through a pure reactance with unity slack voltage:
        // Q-balance forces V2 = cos(theta), then sin(2 theta) = 2 P x.
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,load,345,1,1.0,0\n\
             [LOAD]\n2,30,0,1\n\
             [BRANCH]\n1,2,0.0,0.1,0.0,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let sol = solve_power_flow(&m, &PowerFlowOptions::default()).unwrap();
        let theta = 0.5 * (2.0 * 0.3 * 0.1_f64).asin();
        assert_relative_eq!(sol.vm[1], theta.cos(), epsilon = 1e-9);
        assert_relative_eq!(sol.va[1], -theta, epsilon = 1e-9);
        assert!(sol.max_mismatch_pu < 1e-8);
        // Sending end covers the load (lossless line).
        assert_relative_eq!(sol.branch_flows[0].p_from_mw, 30.0, epsilon = 1e-6);
        assert_relative_eq!(sol.branch_flows[0].p_to_mw, -30.0, epsilon = 1e-6);
        assert_relative_eq!(sol.slack_p_mw, 30.0, epsilon = 1e-6);
    }

    #[test]
    fn pv_bus_holds_setpoint_inside_limits() {
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,gen,345,2,1.02,0\n3,load,345,1,1.0,0\n\
             [LOAD]\n3,80,30,1\n\
             [GEN]\n2,50,0,300,-300,1.02,200,1,4.0,0,0.3\n\
             [BRANCH]\n1,3,0.01,0.1,0.0,400,1,0\n2,3,0.01,0.08,0.0,400,1,0\n\
             [SYSTEM]\n100,60\n",
        )
        .unwrap();
        let sol = solve_power_flow(&m, &PowerFlowOptions::default()).unwrap();
        assert_relative_eq!(sol.vm[1], 1.02, epsilon = 1e-9);
        assert!(sol.pinned_buses.is_empty());
        assert_relative_eq!(sol.gen_p_mw[0], 50.0, epsilon = 1e-9);
        assert!(sol.gen_q_mvar[0].abs() < 300.0);
    }

    #[test]
    fn pv_bus_pins_at_qmax_when_starved() {
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,gen,345,2,1.06,0\n3,load,345,1,1.0,0\n\
             [LOAD]\n3,80,60,1\n\
             [GEN]\n2,50,0,15,-15,1.06,200,1,4.0,0,0.3\n\
             [BRANCH]\n1,3,0.01,0.1,0.0,400,1,0\n2,3,0.01,0.08,0.0,400,1,0\n\
             [SYSTEM]\n100,60\n",
        )
        .unwrap();
        let sol = solve_power_flow(&m, &PowerFlowOptions::default()).unwrap();
        assert_eq!(sol.pinned_buses, vec![BusId(2)]);
        assert_relative_eq!(sol.gen_q_mvar[0], 15.0, epsilon = 1e-6);
        // Held at the limit the machine cannot reach its setpoint.
        assert!(sol.vm[1] < 1.06);
    }

    #[test]
    fn disabling_limits_keeps_pv_at_setpoint() {
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,gen,345,2,1.06,0\n3,load,345,1,1.0,0\n\
             [LOAD]\n3,80,60,1\n\
             [GEN]\n2,50,0,15,-15,1.06,200,1,4.0,0,0.3\n\
             [BRANCH]\n1,3,0.01,0.1,0.0,400,1,0\n2,3,0.01,0.08,0.0,400,1,0\n\
             [SYSTEM]\n100,60\n",
        )
        .unwrap();
        let sol = solve_power_flow(
            &m,
            &PowerFlowOptions {
                enforce_q_limits: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(sol.pinned_buses.is_empty());
        assert_relative_eq!(sol.vm[1], 1.06, epsilon = 1e-9);
        assert!(sol.gen_q_mvar[0] > 15.0);
    }

    #[test]
    fn merged_buses_share_voltage_and_power_balances() {
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,a,345,1,1.0,0\n3,b,345,1,1.0,0\n4,c,345,1,1.0,0\n\
             [LOAD]\n3,40,10,1\n4,25,5,1\n\
             [BRANCH]\n1,2,0.01,0.1,0.02,400,1,0\n2,3,0.0,0.0,0.0,400,1,1\n\
             3,4,0.02,0.15,0.0,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let sol = solve_power_flow(&m, &PowerFlowOptions::default()).unwrap();
        assert_eq!(sol.vm[1], sol.vm[2]);
        assert_eq!(sol.va[1], sol.va[2]);
        let loss: f64 = sol
            .branch_flows
            .iter()
            .map(|f| f.p_from_mw + f.p_to_mw)
            .sum();
        assert_relative_eq!(sol.slack_p_mw, 40.0 + 25.0 + loss, epsilon = 1e-6);
    }

    #[test]
    fn file_start_matches_flat_start() {
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.02,0\n2,load,345,1,0.97,-3\n\
             [LOAD]\n2,50,20,1\n\
             [BRANCH]\n1,2,0.01,0.1,0.0,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let flat = solve_power_flow(&m, &PowerFlowOptions::default()).unwrap();
        let warm = solve_power_flow(
            &m,
            &PowerFlowOptions {
                flat_start: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_relative_eq!(flat.vm[1], warm.vm[1], epsilon = 1e-9);
        assert_relative_eq!(flat.va[1], warm.va[1], epsilon = 1e-9);
    }

    #[test]
    fn infeasible_case_reports_divergence() {
        // 60 pu of load through a 0.1 pu reactance cannot be served.
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,load,345,1,1.0,0\n\
             [LOAD]\n2,6000,0,1\n\
             [BRANCH]\n1,2,0.0,0.1,0.0,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        match solve_power_flow(&m, &PowerFlowOptions::default()) {
            Err(PfError::Diverged { .. }) | Err(PfError::Singular { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
