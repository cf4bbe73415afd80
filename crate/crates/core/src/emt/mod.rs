//! Electromagnetic-transient solver: trapezoidal companion models over a
//! nodal conductance matrix, SI units throughout.
//!
//! Elements are two-terminal companions (series R-L with optional EMF,
//! shunt C, series R-C with optional EMF, switchable resistor). Nodes are
//! dense indices; `None` is ground. Voltages prescribed from outside
//! (ideal sources) are Dirichlet nodes eliminated from the solve. The
//! factorization is cached per (topology revision, step size), so runs
//! with a non-dividing macro step pay for exactly two factorizations,
//! one for the regular micro step and one for the remainder.

mod builder;
mod mmc;

pub use builder::{
    build_buffer_emt, BoundaryPort, BufferEmt, BufferEmtSpec, BuilderError, DcLineParams,
    SourceMode, ThreePhaseTap,
};
pub use mmc::{
    inverse_park, park, ConverterControl, Mmc, MmcHandles, MmcMeasurements, MmcParams, Pll,
};

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::fmt;

/// Circuit node: `None` is ground.
pub type Node = Option<usize>;

#[derive(Debug, Clone)]
pub enum Element {
    /// v_from - v_to + emf = R i + L di/dt, current positive from -> to.
    SeriesRl {
        from: Node,
        to: Node,
        r: f64,
        l: f64,
        emf: f64,
        i: f64,
        u_prev: f64,
    },
    /// Capacitor to ground.
    ShuntC {
        node: usize,
        c: f64,
        v_prev: f64,
        i_prev: f64,
    },
    /// v_from - v_to + emf = R i + v_c, C dv_c/dt = i.
    SeriesRc {
        from: Node,
        to: Node,
        r: f64,
        c: f64,
        emf: f64,
        i: f64,
        v_c: f64,
    },
    /// Resistor to ground with two settable values (fault application,
    /// breaker opening). Switching invalidates the factor cache.
    Switch {
        node: usize,
        r_closed: f64,
        r_open: f64,
        closed: bool,
        i: f64,
    },
}

impl Element {
    fn conductance(&self, dt: f64) -> f64 {
        match self {
            Element::SeriesRl { r, l, .. } => 1.0 / (r + 2.0 * l / dt),
            Element::ShuntC { c, .. } => 2.0 * c / dt,
            Element::SeriesRc { r, c, .. } => 1.0 / (r + dt / (2.0 * c)),
            Element::Switch {
                r_closed,
                r_open,
                closed,
                ..
            } => 1.0 / if *closed { *r_closed } else { *r_open },
        }
    }

    fn terminals(&self) -> (Node, Node) {
        match self {
            Element::SeriesRl { from, to, .. } => (*from, *to),
            Element::ShuntC { node, .. } => (Some(*node), None),
            Element::SeriesRc { from, to, .. } => (*from, *to),
            Element::Switch { node, .. } => (Some(*node), None),
        }
    }

    /// History-plus-EMF current term h in the universal companion form
    /// i = g * (v_from - v_to) + h, with i positive from -> to.
    fn history(&self, dt: f64) -> f64 {
        let g = self.conductance(dt);
        match self {
            Element::SeriesRl { r, l, emf, i, u_prev, .. } => {
                if *l == 0.0 {
                    g * emf
                } else {
                    g * (emf + u_prev + (2.0 * l / dt - r) * i)
                }
            }
            Element::ShuntC { v_prev, i_prev, .. } => -(g * v_prev + i_prev),
            Element::SeriesRc { c, emf, i, v_c, .. } => g * (emf - v_c - dt / (2.0 * c) * i),
            Element::Switch { .. } => 0.0,
        }
    }
}

#[derive(Debug)]
pub enum EmtError {
    SingularMatrix,
    BadElement(String),
}

impl fmt::Display for EmtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmtError::SingularMatrix => write!(f, "conductance matrix is singular"),
            EmtError::BadElement(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for EmtError {}

struct Factor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// (free row, dirichlet slot, conductance): the step moves
    /// g * v_dirichlet to the right-hand side.
    dirichlet_coupling: Vec<(usize, usize, f64)>,
}

pub struct EmtNetwork {
    n_nodes: usize,
    elements: Vec<Element>,
    /// Dirichlet slots: (node, prescribed voltage for the coming step).
    dirichlet: Vec<(usize, f64)>,
    free_index: Vec<Option<usize>>,
    topology_rev: u64,
    factors: BTreeMap<u64, Factor>,
    v: Vec<f64>,
    time: f64,
    steps: u64,
    scratch_hist: Vec<f64>,
    scratch_v: Vec<f64>,
}

impl EmtNetwork {
    pub fn new(n_nodes: usize) -> EmtNetwork {
        EmtNetwork {
            n_nodes,
            elements: Vec::new(),
            dirichlet: Vec::new(),
            free_index: Vec::new(),
            topology_rev: 0,
            factors: BTreeMap::new(),
            v: vec![0.0; n_nodes],
            time: 0.0,
            steps: 0,
            scratch_hist: Vec::new(),
            scratch_v: vec![0.0; n_nodes],
        }
    }

    /// Adds an element; the returned id addresses it in later calls.
    pub fn add(&mut self, el: Element) -> Result<usize, EmtError> {
        match &el {
            Element::SeriesRl { r, l, from, to, .. } => {
                if *r <= 0.0 && *l <= 0.0 {
                    return Err(EmtError::BadElement(
                        "series R-L needs positive R or L".into(),
                    ));
                }
                if from.is_none() && to.is_none() {
                    return Err(EmtError::BadElement("element floats on ground".into()));
                }
            }
            Element::ShuntC { c, .. } | Element::SeriesRc { c, .. } => {
                if *c <= 0.0 {
                    return Err(EmtError::BadElement("capacitance must be positive".into()));
                }
            }
            Element::Switch { r_closed, r_open, .. } => {
                if *r_closed <= 0.0 || *r_open <= 0.0 {
                    return Err(EmtError::BadElement(
                        "switch resistances must be positive".into(),
                    ));
                }
            }
        }
        self.check_node_range(&el)?;
        self.elements.push(el);
        self.invalidate();
        Ok(self.elements.len() - 1)
    }

    fn check_node_range(&self, el: &Element) -> Result<(), EmtError> {
        let (a, b) = el.terminals();
        for n in [a, b].into_iter().flatten() {
            if n >= self.n_nodes {
                return Err(EmtError::BadElement(format!(
                    "node {n} out of range ({} nodes)",
                    self.n_nodes
                )));
            }
        }
        Ok(())
    }

    /// Declares a node voltage as externally prescribed. Returns the slot
    /// used with `set_dirichlet_value`.
    pub fn add_dirichlet(&mut self, node: usize, v0: f64) -> usize {
        self.dirichlet.push((node, v0));
        self.v[node] = v0;
        self.invalidate();
        self.dirichlet.len() - 1
    }

    pub fn set_dirichlet_value(&mut self, slot: usize, v: f64) {
        self.dirichlet[slot].1 = v;
    }

    pub fn set_emf(&mut self, id: usize, value: f64) {
        match &mut self.elements[id] {
            Element::SeriesRl { emf, .. } | Element::SeriesRc { emf, .. } => *emf = value,
            _ => panic!("element {id} has no EMF"),
        }
    }

    pub fn set_switch(&mut self, id: usize, closed_now: bool) {
        if let Element::Switch { closed, .. } = &mut self.elements[id] {
            if *closed != closed_now {
                *closed = closed_now;
                self.invalidate();
            }
        } else {
            panic!("element {id} is not a switch");
        }
    }

    /// Changes a series resistance in place (converter trip to a high
    /// impedance, shunt disconnection).
    pub fn set_resistance(&mut self, id: usize, r_new: f64) {
        match &mut self.elements[id] {
            Element::SeriesRl { r, .. } | Element::SeriesRc { r, .. } => {
                if *r != r_new {
                    *r = r_new;
                    self.invalidate();
                }
            }
            _ => panic!("element {id} has no series resistance"),
        }
    }

    /// Replaces a series R-L impedance (boundary source following a
    /// topology change on the phasor side).
    pub fn set_series_impedance(&mut self, id: usize, r_new: f64, l_new: f64) {
        if let Element::SeriesRl { r, l, .. } = &mut self.elements[id] {
            if *r != r_new || *l != l_new {
                *r = r_new;
                *l = l_new;
                self.invalidate();
            }
        } else {
            panic!("element {id} is not a series R-L");
        }
    }

    fn invalidate(&mut self) {
        self.topology_rev += 1;
        self.factors.clear();
        self.free_index.clear();
    }

    /// Branch current, positive from -> to (shunts: into the element).
    pub fn current(&self, id: usize) -> f64 {
        match &self.elements[id] {
            Element::SeriesRl { i, .. } => *i,
            Element::ShuntC { i_prev, .. } => *i_prev,
            Element::SeriesRc { i, .. } => *i,
            Element::Switch { i, .. } => *i,
        }
    }

    pub fn voltage(&self, node: usize) -> f64 {
        self.v[node]
    }

    pub fn node_voltage(&self, node: Node) -> f64 {
        node.map_or(0.0, |n| self.v[n])
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Seeds node voltages and aligns element histories with them at zero
    /// branch current, so a simulation can start from a pre-established
    /// operating point (pre-charged dc capacitors, for instance) without
    /// a spurious first-step transient.
    pub fn prime(&mut self, voltages: &[f64]) {
        self.v.copy_from_slice(voltages);
        for el in &mut self.elements {
            match el {
                Element::SeriesRl { from, to, emf, i, u_prev, .. } => {
                    *i = 0.0;
                    let vf = from.map_or(0.0, |n| voltages[n]);
                    let vt = to.map_or(0.0, |n| voltages[n]);
                    *u_prev = vf - vt + *emf;
                }
                Element::ShuntC { node, v_prev, i_prev, .. } => {
                    *v_prev = voltages[*node];
                    *i_prev = 0.0;
                }
                Element::SeriesRc { from, to, emf, i, v_c, .. } => {
                    *i = 0.0;
                    let vf = from.map_or(0.0, |n| voltages[n]);
                    let vt = to.map_or(0.0, |n| voltages[n]);
                    *v_c = vf - vt + *emf;
                }
                Element::Switch { i, .. } => *i = 0.0,
            }
        }
    }

    fn build_factor(&mut self, dt: f64) -> Result<(), EmtError> {
        if self.free_index.is_empty() {
            self.free_index = vec![None; self.n_nodes];
            let mut dir_slot = vec![None; self.n_nodes];
            for (slot, &(node, _)) in self.dirichlet.iter().enumerate() {
                dir_slot[node] = Some(slot);
            }
            let mut k = 0;
            for n in 0..self.n_nodes {
                if dir_slot[n].is_none() {
                    self.free_index[n] = Some(k);
                    k += 1;
                }
            }
        }
        let dir_slot: Vec<Option<usize>> = {
            let mut ds = vec![None; self.n_nodes];
            for (slot, &(node, _)) in self.dirichlet.iter().enumerate() {
                ds[node] = Some(slot);
            }
            ds
        };
        let n_free = self.free_index.iter().filter(|f| f.is_some()).count();
        let mut g = DMatrix::zeros(n_free, n_free);
        let mut coupling = Vec::new();
        for el in &self.elements {
            let cond = el.conductance(dt);
            let (a, b) = el.terminals();
            // KCL rows for free nodes; columns against dirichlet nodes
            // are shifted to the right-hand side at step time.
            let mut stamp = |row: Node, col: Node, val: f64| {
                let Some(r) = row else { return };
                let Some(ri) = self.free_index[r] else { return };
                match col {
                    None => {}
                    Some(c) => {
                        if let Some(ci) = self.free_index[c] {
                            g[(ri, ci)] += val;
                        } else if val != 0.0 {
                            coupling.push((ri, dir_slot[c].unwrap(), val));
                        }
                    }
                }
            };
            stamp(a, a, cond);
            stamp(b, b, cond);
            stamp(a, b, -cond);
            stamp(b, a, -cond);
        }
        let lu = g.lu();
        // A zero pivot shows up as a non-finite or absent solution later;
        // probe now with a unit vector.
        if n_free > 0 {
            let probe = lu.solve(&DVector::from_element(n_free, 1.0));
            match probe {
                Some(x) if x.iter().all(|v| v.is_finite()) => {}
                _ => return Err(EmtError::SingularMatrix),
            }
        }
        self.factors.insert(
            dt.to_bits(),
            Factor {
                lu,
                dirichlet_coupling: coupling,
            },
        );
        Ok(())
    }

    /// Advances one step of `dt`. The caller must already have set EMF
    /// values and Dirichlet voltages for the end of the step.
    pub fn step(&mut self, dt: f64) -> Result<(), EmtError> {
        assert!(dt > 0.0, "step size must be positive");
        if !self.factors.contains_key(&dt.to_bits()) {
            self.build_factor(dt)?;
        }

        // History injections.
        self.scratch_hist.clear();
        self.scratch_hist
            .extend(self.elements.iter().map(|el| el.history(dt)));
        let n_free = self.free_index.iter().filter(|f| f.is_some()).count();
        let mut rhs = DVector::zeros(n_free);
        for (el, &h) in self.elements.iter().zip(&self.scratch_hist) {
            let (a, b) = el.terminals();
            if let Some(ri) = a.and_then(|n| self.free_index[n]) {
                rhs[ri] -= h;
            }
            if let Some(ri) = b.and_then(|n| self.free_index[n]) {
                rhs[ri] += h;
            }
        }
        let factor = &self.factors[&dt.to_bits()];
        for &(row, slot, coeff) in &factor.dirichlet_coupling {
            rhs[row] -= coeff * self.dirichlet[slot].1;
        }
        let sol = factor.lu.solve(&rhs).ok_or(EmtError::SingularMatrix)?;

        for n in 0..self.n_nodes {
            if let Some(fi) = self.free_index[n] {
                self.v[n] = sol[fi];
            }
        }
        for &(node, val) in &self.dirichlet {
            self.v[node] = val;
        }

        // State updates from the new voltages. The history term already
        // carries the g*emf contribution, so the branch current is
        // g * (voltage across the terminals) + history.
        self.scratch_v.copy_from_slice(&self.v);
        let v_snapshot = &self.scratch_v;
        let of = |node: Node| node.map_or(0.0, |n| v_snapshot[n]);
        for (el, &h) in self.elements.iter_mut().zip(&self.scratch_hist) {
            let g = el.conductance(dt);
            match el {
                Element::SeriesRl { from, to, emf, i, u_prev, .. } => {
                    let dv = of(*from) - of(*to);
                    *i = g * dv + h;
                    *u_prev = dv + *emf;
                }
                Element::ShuntC { node, v_prev, i_prev, .. } => {
                    let v = v_snapshot[*node];
                    *i_prev = g * v + h;
                    *v_prev = v;
                }
                Element::SeriesRc { from, to, i, v_c, c, .. } => {
                    let i_new = g * (of(*from) - of(*to)) + h;
                    *v_c += dt / (2.0 * *c) * (*i + i_new);
                    *i = i_new;
                }
                Element::Switch { node, i, .. } => {
                    *i = g * v_snapshot[*node];
                }
            }
        }
        self.time += dt;
        self.steps += 1;
        Ok(())
    }
}

/// Resamples an irregular step sequence onto a fixed grid by linear
/// interpolation, so cycle windows for phasor extraction stay exactly one
/// period long even when macro steps end with a truncated micro step.
pub struct UniformSampler {
    pub dt: f64,
    n_channels: usize,
    t_next: f64,
    t_prev: f64,
    prev: Vec<f64>,
    started: bool,
    data: Vec<Vec<f64>>,
    samples_taken: u64,
    keep_last: Option<usize>,
}

impl UniformSampler {
    /// Grid points are t0 + dt, t0 + 2 dt, ... `keep_last` bounds memory
    /// for windows; `None` keeps the full record.
    pub fn new(dt: f64, n_channels: usize, t0: f64, keep_last: Option<usize>) -> UniformSampler {
        UniformSampler {
            dt,
            n_channels,
            t_next: t0 + dt,
            t_prev: t0,
            prev: vec![0.0; n_channels],
            started: false,
            data: vec![Vec::new(); n_channels],
            samples_taken: 0,
            keep_last,
        }
    }

    /// Feeds the state at time `t`; `t` must be non-decreasing.
    pub fn push(&mut self, t: f64, values: &[f64]) {
        assert_eq!(values.len(), self.n_channels);
        if !self.started {
            // First push defines the starting state.
            self.prev.copy_from_slice(values);
            self.t_prev = t;
            self.started = true;
            return;
        }
        while self.t_next <= t + 1e-15 {
            let span = t - self.t_prev;
            let alpha = if span > 0.0 {
                (self.t_next - self.t_prev) / span
            } else {
                1.0
            };
            for (ch, rec) in self.data.iter_mut().enumerate() {
                rec.push(self.prev[ch] + alpha * (values[ch] - self.prev[ch]));
            }
            self.samples_taken += 1;
            self.t_next += self.dt;
        }
        self.prev.copy_from_slice(values);
        self.t_prev = t;
        if let Some(k) = self.keep_last {
            if self.data[0].len() > 2 * k {
                for rec in &mut self.data {
                    rec.drain(..rec.len() - k);
                }
            }
        }
    }

    /// Time of the most recent grid sample.
    pub fn t_last(&self) -> f64 {
        self.t_next - self.dt
    }

    pub fn len(&self) -> usize {
        self.data[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.data[0].is_empty()
    }

    /// Last `k` samples of a channel, if that many exist.
    pub fn window(&self, channel: usize, k: usize) -> Option<&[f64]> {
        let rec = &self.data[channel];
        if rec.len() < k {
            None
        } else {
            Some(&rec[rec.len() - k..])
        }
    }

    /// Full record of a channel (meaningful when `keep_last` is None).
    pub fn record(&self, channel: usize) -> &[f64] {
        &self.data[channel]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rl_step_response_matches_analytic() {
        // 1 V dc source behind 1 ohm / 10 mH: i = (1 - exp(-t R/L)).
        let mut net = EmtNetwork::new(1);
        let src = net
            .add(Element::SeriesRl {
                from: None,
                to: Some(0),
                r: 0.5,
                l: 0.0,
                emf: 1.0,
                i: 0.0,
                u_prev: 0.0,
            })
            .unwrap();
        let load = net
            .add(Element::SeriesRl {
                from: Some(0),
                to: None,
                r: 0.5,
                l: 0.01,
                emf: 0.0,
                i: 0.0,
                u_prev: 0.0,
            })
            .unwrap();
        let dt = 10e-6;
        let mut t = 0.0;
        while t < 0.05 {
            net.step(dt).unwrap();
            t += dt;
        }
        let expect = 1.0 * (1.0 - (-t * 1.0 / 0.01).exp());
        // The same loop current reads positive through both elements:
        // from->to is the positive direction, and the loop traverses the
        // source ground->node and the load node->ground.
        assert_relative_eq!(net.current(load), expect, epsilon = 1e-4);
        assert_relative_eq!(net.current(src), expect, max_relative = 1e-3);
    }

    #[test]
    fn lc_oscillation_conserves_energy() {
        // Trapezoidal integration preserves the quadratic energy of a
        // lossless L-C loop to roundoff.
        let (l, c) = (1e-3, 10e-6);
        let mut net = EmtNetwork::new(1);
        let ind = net
            .add(Element::SeriesRl {
                from: Some(0),
                to: None,
                r: 0.0,
                l,
                emf: 0.0,
                i: 0.0,
                u_prev: 0.0,
            })
            .unwrap();
        net.add(Element::ShuntC {
            node: 0,
            c,
            v_prev: 0.0,
            i_prev: 0.0,
        })
        .unwrap();
        net.prime(&[100.0]);
        let e0 = 0.5 * c * 100.0f64.powi(2);
        let f_res = 1.0 / (2.0 * std::f64::consts::PI * (l * c).sqrt());
        let dt = 1.0 / (f_res * 200.0);
        let steps = (100.0 * 200.0) as usize; // 100 cycles
        let mut worst = 0.0f64;
        for _ in 0..steps {
            net.step(dt).unwrap();
            let e = 0.5 * c * net.voltage(0).powi(2) + 0.5 * l * net.current(ind).powi(2);
            worst = worst.max((e - e0).abs() / e0);
        }
        assert!(worst < 1e-9, "energy drifted by {worst:.3e}");
    }

    #[test]
    fn dirichlet_divider() {
        // 10 V pinned node through 2 + 3 ohm to ground: 6 V at the tap.
        let mut net = EmtNetwork::new(2);
        net.add_dirichlet(0, 10.0);
        net.add(Element::SeriesRl {
            from: Some(0),
            to: Some(1),
            r: 2.0,
            l: 0.0,
            emf: 0.0,
            i: 0.0,
            u_prev: 0.0,
        })
        .unwrap();
        net.add(Element::SeriesRl {
            from: Some(1),
            to: None,
            r: 3.0,
            l: 0.0,
            emf: 0.0,
            i: 0.0,
            u_prev: 0.0,
        })
        .unwrap();
        net.step(1e-6).unwrap();
        assert_relative_eq!(net.voltage(1), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn switch_closing_pulls_node_down() {
        let mut net = EmtNetwork::new(1);
        net.add(Element::SeriesRl {
            from: None,
            to: Some(0),
            r: 1.0,
            l: 0.0,
            emf: 5.0,
            i: 0.0,
            u_prev: 0.0,
        })
        .unwrap();
        let sw = net
            .add(Element::Switch {
                node: 0,
                r_closed: 0.01,
                r_open: 1e7,
                closed: false,
                i: 0.0,
            })
            .unwrap();
        net.step(1e-6).unwrap();
        assert!(net.voltage(0) > 4.9);
        net.set_switch(sw, true);
        net.step(1e-6).unwrap();
        assert!(net.voltage(0) < 0.1);
        assert!(net.current(sw) > 4.0);
    }

    #[test]
    fn mixed_step_sizes_stay_continuous() {
        // Exponential decay stepped with alternating dt has no jumps.
        let mut net = EmtNetwork::new(1);
        net.add(Element::ShuntC {
            node: 0,
            c: 1e-6,
            v_prev: 0.0,
            i_prev: 0.0,
        })
        .unwrap();
        net.add(Element::SeriesRl {
            from: Some(0),
            to: None,
            r: 100.0,
            l: 0.0,
            emf: 0.0,
            i: 0.0,
            u_prev: 0.0,
        })
        .unwrap();
        net.prime(&[1.0]);
        let tau = 100.0 * 1e-6;
        let mut t = 0.0;
        for k in 0..2000 {
            let dt = if k % 70 == 69 { 20e-6 } else { 60e-6 };
            net.step(dt).unwrap();
            t += dt;
        }
        assert_relative_eq!(net.voltage(0), (-t / tau).exp(), max_relative = 1e-3);
    }

    #[test]
    fn prime_holds_dc_steady_state() {
        let mut net = EmtNetwork::new(1);
        net.add(Element::ShuntC {
            node: 0,
            c: 33e-6,
            v_prev: 0.0,
            i_prev: 0.0,
        })
        .unwrap();
        net.prime(&[320e3]);
        for _ in 0..100 {
            net.step(60e-6).unwrap();
        }
        assert_relative_eq!(net.voltage(0), 320e3, epsilon = 1e-6);
    }

    #[test]
    fn sampler_interpolates_onto_grid() {
        let mut s = UniformSampler::new(0.5, 1, 0.0, None);
        s.push(0.0, &[0.0]);
        s.push(2.0, &[2.0]); // crosses grid points 0.5, 1.0, 1.5, 2.0
        assert_eq!(s.record(0), &[0.5, 1.0, 1.5, 2.0]);
        assert_relative_eq!(s.t_last(), 2.0);
        s.push(2.25, &[3.0]);
        s.push(2.75, &[5.0]); // 2.5 sits between: 3 + (5-3)*(0.25/0.5) = 4
        assert_eq!(s.record(0).last(), Some(&4.0));
    }

    #[test]
    fn sampler_window_bounds_memory() {
        let mut s = UniformSampler::new(1.0, 1, 0.0, Some(4));
        for k in 1..=100 {
            s.push(k as f64, &[k as f64]);
        }
        assert!(s.len() <= 8);
        assert_eq!(s.window(0, 4).unwrap(), &[97.0, 98.0, 99.0, 100.0]);
        assert!(s.window(0, 9).is_none());
    }
}
