//! Positive-sequence transient-stability engine.
//!
//! Classical machine model: constant EMF behind transient reactance,
//! swing dynamics integrated with a trapezoidal predictor-corrector at
//! the macro step. Constant-impedance loads and machine Norton
//! admittances are folded into the network matrix, so each network
//! solution is one factored solve. Boundary buses accept an externally
//! supplied Norton current (the detailed-model side of a hybrid run) and
//! export a per-bus Thevenin equivalent.

use crate::grid::{build_ybus, BusId, NetworkModel, Ybus};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt;

#[derive(Debug)]
pub enum TsError {
    UnknownBoundaryBus(BusId),
    /// The dynamic admittance matrix could not be factored.
    SingularNetwork,
    NoMachines,
    BadGenIndex(usize),
    BadBranchIndex(usize),
}

impl fmt::Display for TsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TsError::UnknownBoundaryBus(b) => write!(f, "boundary bus {b} is not in the model"),
            TsError::SingularNetwork => write!(f, "dynamic network matrix is singular"),
            TsError::NoMachines => write!(f, "no in-service machines"),
            TsError::BadGenIndex(i) => write!(f, "generator index {i} out of range"),
            TsError::BadBranchIndex(i) => write!(f, "branch index {i} out of range"),
        }
    }
}

impl std::error::Error for TsError {}

#[derive(Debug, Clone)]
struct Machine {
    /// Super-node the machine connects to.
    node: usize,
    /// Index into `model.gens`, for event targeting.
    gen_index: usize,
    /// Constant EMF magnitude, pu.
    e_mag: f64,
    /// Transient reactance on the system base, pu.
    xdp: f64,
    /// Inertia constant on the system base, s.
    h: f64,
    /// Damping on the system base, pu.
    d: f64,
    /// Mechanical power, pu on the system base.
    pm: f64,
    /// H * mbase weight for the inertia center, MW*s.
    coi_weight: f64,
    active: bool,
    /// Rotor angle, rad, and speed deviation, pu.
    delta: f64,
    omega: f64,
}

impl Machine {
    fn norton_admittance(&self) -> Complex64 {
        Complex64::new(0.0, -1.0 / self.xdp) // 1/(jx)
    }

    fn emf(&self) -> Complex64 {
        Complex64::from_polar(self.e_mag, self.delta)
    }

    /// Electrical air-gap power for a terminal voltage, pu.
    fn pe(&self, v: Complex64) -> f64 {
        let i = (self.emf() - v) * self.norton_admittance();
        (self.emf() * i.conj()).re
    }
}

pub struct TsEngine {
    model: NetworkModel,
    ybus: Ybus,
    /// Constant-impedance load admittance per node, from the operating
    /// point the engine was initialized at.
    load_y: Vec<Complex64>,
    machines: Vec<Machine>,
    branch_active: Vec<bool>,
    /// Boundary node per external boundary bus, in caller order.
    boundary_nodes: Vec<usize>,
    boundary_inject: Vec<Complex64>,
    /// Thevenin impedance per boundary bus, refreshed on topology change.
    boundary_z: Vec<Complex64>,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    v: DVector<Complex64>,
    omega_s: f64,
    f0: f64,
    time_s: f64,
}

impl TsEngine {
    /// Builds the engine at an operating point: `vm`/`va` are solved
    /// voltages and `gen_p_mw`/`gen_q_mvar` dispatched outputs, all
    /// aligned with `model` (a converged power flow provides them).
    pub fn new(
        model: &NetworkModel,
        vm: &[f64],
        va: &[f64],
        gen_p_mw: &[f64],
        gen_q_mvar: &[f64],
        boundary: &[BusId],
    ) -> Result<TsEngine, TsError> {
        let ybus = build_ybus(model);
        let n = ybus.n();
        let sb = model.sbase_mva;

        let node_voltage = |node: usize| -> Complex64 {
            let rep = ybus.plan.groups[node][0];
            Complex64::from_polar(vm[rep], va[rep])
        };

        // Loads become constant impedances at their initial voltage.
        let mut load_y = vec![Complex64::new(0.0, 0.0); n];
        for l in model.loads.iter().filter(|l| l.status) {
            let bi = model.bus_index(l.bus).unwrap();
            let node = ybus.plan.node_of_bus[bi];
            let v2 = vm[bi] * vm[bi];
            load_y[node] += Complex64::new(l.p_mw / sb, -l.q_mvar / sb) / v2;
        }

        // Classical machine initialization: E' = V + jx' I at dispatch.
        let mut machines = Vec::new();
        for (gi, g) in model.gens.iter().enumerate() {
            if !g.status {
                continue;
            }
            let bi = model.bus_index(g.bus).unwrap();
            let node = ybus.plan.node_of_bus[bi];
            let v = node_voltage(node);
            let s = Complex64::new(gen_p_mw[gi] / sb, gen_q_mvar[gi] / sb);
            let i = (s / v).conj();
            let xdp = g.xdp_system(sb);
            let e = v + Complex64::new(0.0, xdp) * i;
            machines.push(Machine {
                node,
                gen_index: gi,
                e_mag: e.norm(),
                xdp,
                h: g.h_system(sb),
                d: g.d_system(sb),
                pm: gen_p_mw[gi] / sb,
                coi_weight: g.h_s * g.mbase,
                active: true,
                delta: e.arg(),
                omega: 0.0,
            });
        }
        if machines.is_empty() {
            return Err(TsError::NoMachines);
        }

        let mut boundary_nodes = Vec::with_capacity(boundary.len());
        for &b in boundary {
            let bi = model
                .bus_index(b)
                .ok_or(TsError::UnknownBoundaryBus(b))?;
            boundary_nodes.push(ybus.plan.node_of_bus[bi]);
        }

        let v0 = DVector::from_fn(n, |i, _| node_voltage(i));
        let mut engine = TsEngine {
            model: model.clone(),
            ybus,
            load_y,
            machines,
            branch_active: model.branches.iter().map(|b| b.status).collect(),
            boundary_nodes,
            boundary_inject: vec![Complex64::new(0.0, 0.0); boundary.len()],
            boundary_z: vec![Complex64::new(0.0, 0.0); boundary.len()],
            lu: DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)).lu(),
            v: DVector::from_element(n, Complex64::new(1.0, 0.0)),
            omega_s: 2.0 * PI * model.f0_hz,
            f0: model.f0_hz,
            time_s: 0.0,
        };
        engine.refactor()?;

        // The initial boundary injection is the residual current the
        // removed side must supply to hold the operating point exactly.
        let residual = engine.dynamic_matrix() * &v0 - engine.machine_rhs();
        for (k, &node) in engine.boundary_nodes.iter().enumerate() {
            engine.boundary_inject[k] = residual[node];
        }
        engine.v = v0;
        engine.solve_network();
        Ok(engine)
    }

    fn dynamic_matrix(&self) -> DMatrix<Complex64> {
        let n = self.ybus.n();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        // Re-stamp branches honoring trip state; shunts come from the
        // model directly since shunt events are a detailed-side affair.
        for (bi, br) in self.model.branches.iter().enumerate() {
            if !self.branch_active[bi] || br.is_ideal() {
                continue;
            }
            let f = self.ybus.plan.node_of_bus[self.model.bus_index(br.from).unwrap()];
            let t = self.ybus.plan.node_of_bus[self.model.bus_index(br.to).unwrap()];
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r_pu, br.x_pu);
            let half_b = Complex64::new(0.0, br.b_pu / 2.0);
            let tap = br.tap;
            y[(f, f)] += (ys + half_b) / (tap * tap);
            y[(t, t)] += ys + half_b;
            y[(f, t)] -= ys / tap;
            y[(t, f)] -= ys / tap;
        }
        for sh in self.model.shunts.iter().filter(|s| s.status) {
            let node = self.ybus.plan.node_of_bus[self.model.bus_index(sh.bus).unwrap()];
            y[(node, node)] +=
                Complex64::new(sh.g_mw / self.model.sbase_mva, sh.b_mvar / self.model.sbase_mva);
        }
        for (node, yl) in self.load_y.iter().enumerate() {
            y[(node, node)] += yl;
        }
        for m in self.machines.iter().filter(|m| m.active) {
            y[(m.node, m.node)] += m.norton_admittance();
        }
        y
    }

    fn machine_rhs(&self) -> DVector<Complex64> {
        let mut rhs = DVector::from_element(self.ybus.n(), Complex64::new(0.0, 0.0));
        for m in self.machines.iter().filter(|m| m.active) {
            rhs[m.node] += m.emf() * m.norton_admittance();
        }
        rhs
    }

    /// Refactors the dynamic matrix and refreshes boundary Thevenin
    /// impedances. Called at construction and after every topology event.
    fn refactor(&mut self) -> Result<(), TsError> {
        let y = self.dynamic_matrix();
        let n = y.nrows();
        let lu = y.lu();
        // Probe factorization health with a unit solve.
        let probe = lu.solve(&DVector::from_element(n, Complex64::new(1.0, 0.0)));
        match probe {
            Some(x) if x.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => {}
            _ => return Err(TsError::SingularNetwork),
        }
        self.lu = lu;
        for (k, &node) in self.boundary_nodes.iter().enumerate() {
            let mut e = DVector::from_element(n, Complex64::new(0.0, 0.0));
            e[node] = Complex64::new(1.0, 0.0);
            let col = self.lu.solve(&e).ok_or(TsError::SingularNetwork)?;
            self.boundary_z[k] = col[node];
        }
        Ok(())
    }

    fn solve_network(&mut self) {
        let mut rhs = self.machine_rhs();
        for (k, &node) in self.boundary_nodes.iter().enumerate() {
            rhs[node] += self.boundary_inject[k];
        }
        if let Some(v) = self.lu.solve(&rhs) {
            self.v = v;
        }
    }

    /// Installs fresh boundary currents (pu, system base) and re-solves
    /// so the coming step sees them from its first stage.
    pub fn set_boundary_injections(&mut self, inject: &[Complex64]) {
        assert_eq!(inject.len(), self.boundary_inject.len());
        self.boundary_inject.copy_from_slice(inject);
        self.solve_network();
    }

    /// Advances the swing states one step of `dt` seconds with a
    /// trapezoidal predictor-corrector (two network solutions).
    pub fn step(&mut self, dt: f64) {
        let n_mach = self.machines.len();
        let mut d0 = vec![0.0; n_mach]; // slopes at the step start
        let mut w0 = vec![0.0; n_mach];
        let mut delta_k = vec![0.0; n_mach];
        let mut omega_k = vec![0.0; n_mach];
        for (i, m) in self.machines.iter().enumerate() {
            if !m.active {
                continue;
            }
            delta_k[i] = m.delta;
            omega_k[i] = m.omega;
            let pe = m.pe(self.v[m.node]);
            d0[i] = self.omega_s * m.omega;
            w0[i] = (m.pm - pe - m.d * m.omega) / (2.0 * m.h);
        }
        // Predictor.
        for (i, m) in self.machines.iter_mut().enumerate() {
            if !m.active {
                continue;
            }
            m.delta = delta_k[i] + dt * d0[i];
            m.omega = omega_k[i] + dt * w0[i];
        }
        self.solve_network();
        // Corrector: average the start and predicted-end slopes.
        let mut d1 = vec![0.0; n_mach];
        let mut w1 = vec![0.0; n_mach];
        for (i, m) in self.machines.iter().enumerate() {
            if !m.active {
                continue;
            }
            let pe = m.pe(self.v[m.node]);
            d1[i] = self.omega_s * m.omega;
            w1[i] = (m.pm - pe - m.d * m.omega) / (2.0 * m.h);
        }
        for (i, m) in self.machines.iter_mut().enumerate() {
            if !m.active {
                continue;
            }
            m.delta = delta_k[i] + 0.5 * dt * (d0[i] + d1[i]);
            m.omega = omega_k[i] + 0.5 * dt * (w0[i] + w1[i]);
        }
        self.solve_network();
        self.time_s += dt;
    }

    /// Removes an in-service machine (by `model.gens` index) from the
    /// network. Voltages jump; rotor states of the others are continuous.
    pub fn trip_generator(&mut self, gen_index: usize) -> Result<(), TsError> {
        let m = self
            .machines
            .iter_mut()
            .find(|m| m.gen_index == gen_index)
            .ok_or(TsError::BadGenIndex(gen_index))?;
        m.active = false;
        self.refactor()?;
        self.solve_network();
        Ok(())
    }

    /// Opens a branch (by `model.branches` index).
    pub fn trip_branch(&mut self, branch_index: usize) -> Result<(), TsError> {
        if branch_index >= self.branch_active.len() {
            return Err(TsError::BadBranchIndex(branch_index));
        }
        self.branch_active[branch_index] = false;
        self.refactor()?;
        self.solve_network();
        Ok(())
    }

    /// Thevenin pair (E, Z) pu seen from a boundary bus: Z from the
    /// factored network with sources shorted, E backed out of the present
    /// solution so that V = E + Z J holds exactly.
    pub fn boundary_thevenin(&self, k: usize) -> (Complex64, Complex64) {
        let v = self.v[self.boundary_nodes[k]];
        let z = self.boundary_z[k];
        (v - z * self.boundary_inject[k], z)
    }

    pub fn boundary_voltage(&self, k: usize) -> Complex64 {
        self.v[self.boundary_nodes[k]]
    }

    /// Complex power flowing from the detailed side into this boundary
    /// bus, MW + j MVar (positive = the buffer exports to the grid).
    pub fn boundary_power_mva(&self, k: usize) -> Complex64 {
        self.v[self.boundary_nodes[k]] * self.boundary_inject[k].conj() * self.model.sbase_mva
    }

    /// Inertia-weighted center-of-inertia frequency, Hz.
    pub fn coi_frequency_hz(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for m in self.machines.iter().filter(|m| m.active) {
            num += m.coi_weight * m.omega;
            den += m.coi_weight;
        }
        if den == 0.0 {
            return self.f0;
        }
        self.f0 * (1.0 + num / den)
    }

    pub fn bus_voltage(&self, bus: BusId) -> Option<Complex64> {
        let bi = self.model.bus_index(bus)?;
        Some(self.v[self.ybus.plan.node_of_bus[bi]])
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn n_active_machines(&self) -> usize {
        self.machines.iter().filter(|m| m.active).count()
    }

    /// Speed deviation of a machine in pu, by `model.gens` index.
    pub fn machine_speed_pu(&self, gen_index: usize) -> Option<f64> {
        self.machines
            .iter()
            .find(|m| m.gen_index == gen_index && m.active)
            .map(|m| m.omega)
    }

    /// Remaining kinetic-inertia weight, MW*s (sum of H * mbase).
    pub fn active_inertia_mws(&self) -> f64 {
        self.machines
            .iter()
            .filter(|m| m.active)
            .map(|m| m.coi_weight)
            .sum()
    }

    /// Mechanical power lost when a machine trips, MW.
    pub fn gen_pm_mw(&self, gen_index: usize) -> Option<f64> {
        self.machines
            .iter()
            .find(|m| m.gen_index == gen_index)
            .map(|m| m.pm * self.model.sbase_mva)
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{parse_network, solve_power_flow, PowerFlowOptions};
    use approx::assert_relative_eq;

    fn three_bus() -> NetworkModel {
        parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,gen,345,2,1.01,0\n3,load,345,1,1.0,0\n\
             [LOAD]\n3,120,30,1\n\
             [GEN]\n1,0,0,900,-900,1.0,1000,1,5.0,1.5,0.25\n\
             2,60,0,300,-300,1.01,200,1,3.5,1.2,0.3\n\
             [BRANCH]\n1,3,0.005,0.06,0.0,900,1,0\n2,3,0.008,0.09,0.0,900,1,0\n\
             [SYSTEM]\n100,60\n",
        )
        .unwrap()
    }

    fn engine_for(model: &NetworkModel, boundary: &[BusId]) -> TsEngine {
        // A tight operating point keeps the initial residual far below
        // the drift thresholds these tests assert on.
        let pf = PowerFlowOptions {
            tol: 1e-12,
            ..Default::default()
        };
        let sol = solve_power_flow(model, &pf).unwrap();
        TsEngine::new(
            model,
            &sol.vm,
            &sol.va,
            &sol.gen_p_mw,
            &sol.gen_q_mvar,
            boundary,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_is_held() {
        let m = three_bus();
        let mut e = engine_for(&m, &[]);
        let f_start = e.coi_frequency_hz();
        for _ in 0..200 {
            e.step(4.16e-3);
        }
        assert_relative_eq!(e.coi_frequency_hz(), f_start, epsilon = 1e-9);
        assert!(e.machine_speed_pu(0).unwrap().abs() < 1e-12);
        assert!(e.machine_speed_pu(1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn boundary_injection_residual_reproduces_power_flow() {
        // Treat the load bus as a boundary: the initial injection must
        // equal the load current so the voltage solution is unchanged.
        let m = three_bus();
        let sol = solve_power_flow(&m, &PowerFlowOptions::default()).unwrap();
        let e = engine_for(&m, &[BusId(3)]);
        let v3 = e.bus_voltage(BusId(3)).unwrap();
        assert_relative_eq!(v3.norm(), sol.vm[2], epsilon = 1e-9);
        // The boundary residual at a plain load bus is zero because the
        // load is already in the matrix.
        let s = e.boundary_power_mva(0);
        assert!(s.norm() < 1e-6, "unexpected boundary power {s}");
    }

    #[test]
    fn gen_trip_decelerates_the_system() {
        let m = three_bus();
        let mut e = engine_for(&m, &[]);
        e.trip_generator(1).unwrap();
        assert_eq!(e.n_active_machines(), 1);
        for _ in 0..50 {
            e.step(4.16e-3);
        }
        assert!(e.coi_frequency_hz() < 60.0);
    }

    #[test]
    fn branch_trip_disturbs_then_damps() {
        let m = parse_network(
            "[BUS]\n1,slack,345,3,1.0,0\n2,gen,345,2,1.01,0\n3,load,345,1,1.0,0\n\
             [LOAD]\n3,120,30,1\n\
             [GEN]\n1,0,0,900,-900,1.0,1000,1,5.0,1.5,0.25\n\
             2,60,0,300,-300,1.01,200,1,3.5,1.2,0.3\n\
             [BRANCH]\n1,3,0.005,0.06,0.0,900,1,0\n2,3,0.008,0.09,0.0,900,1,0\n\
             2,3,0.008,0.09,0.0,900,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let mut e = engine_for(&m, &[]);
        e.trip_branch(2).unwrap();
        let mut max_dev = 0.0f64;
        for _ in 0..3000 {
            e.step(4.16e-3);
            max_dev = max_dev.max(e.machine_speed_pu(1).unwrap().abs());
        }
        assert!(max_dev > 1e-9, "trip caused no swing");
        assert!(
            e.machine_speed_pu(1).unwrap().abs() < 0.6 * max_dev,
            "swing did not damp"
        );
    }

    #[test]
    fn thevenin_matches_hand_series_circuit() {
        // One machine behind x'=0.2 plus a 0.1 pu line to the boundary:
        // Z seen from the boundary is j0.3 and E equals the EMF.
        let m = parse_network(
            "[BUS]\n1,gen,345,3,1.0,0\n2,edge,345,1,1.0,0\n\
             [GEN]\n1,0,0,900,-900,1.0,100,1,4.0,1.0,0.2\n\
             [BRANCH]\n1,2,0.0,0.1,0.0,900,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let e = engine_for(&m, &[BusId(2)]);
        let (eth, z) = e.boundary_thevenin(0);
        assert_relative_eq!(z.im, 0.3, epsilon = 1e-9);
        assert_relative_eq!(z.re, 0.0, epsilon = 1e-9);
        // No current flows, so the boundary sees the internal EMF (1.0).
        assert_relative_eq!(eth.norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn thevenin_relation_holds_under_injection() {
        let m = three_bus();
        let mut e = engine_for(&m, &[BusId(3)]);
        let j = Complex64::new(0.15, -0.08);
        e.set_boundary_injections(&[j]);
        let (eth, z) = e.boundary_thevenin(0);
        let v = e.boundary_voltage(0);
        assert_relative_eq!((eth + z * j - v).norm(), 0.0, epsilon = 1e-12);
        // And the solved voltage actually moved.
        assert!((v - eth).norm() > 1e-4);
    }
}
