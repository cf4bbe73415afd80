//! Averaged-arm modular multilevel converter and its control chain.
//!
//! Each of the six arms is a series R-L element whose EMF is the inserted
//! submodule voltage n * v_csum, with the per-arm sum capacitor voltage
//! integrated trapezoidally from the arm current. The control chain is
//! the usual cascade: synchronous-reference-frame PLL, inner dq current
//! PI with decoupling and voltage feedforward, per-phase circulating
//! current suppression, and an outer loop that is either a rate-limited
//! power schedule (rectifier) or a dc-voltage regulator (inverter). Both
//! ends regulate their ac terminal voltage through the q-axis. Insertion
//! uses direct modulation, which leaves the stored energy visible on the
//! dc side and self-dispatches the line current.

use super::EmtNetwork;
use std::f64::consts::PI;

/// Electrical ratings and component values, SI unless suffixed pu.
#[derive(Debug, Clone)]
pub struct MmcParams {
    pub s_rated_mva: f64,
    /// Pole-to-pole dc voltage, volts.
    pub v_dc_nom: f64,
    /// Line-line RMS base at the connection bus, kV.
    pub base_kv_ac: f64,
    pub n_sm: usize,
    /// Per-submodule capacitance, farads.
    pub c_sm: f64,
    pub l_arm: f64,
    pub r_arm: f64,
    /// Interface transformer reactance, pu on the converter base.
    pub l_tx_pu: f64,
    pub f0_hz: f64,
    /// Current-reference ceiling, pu on the converter base.
    pub i_max_pu: f64,
}

impl MmcParams {
    /// Ratings used by the bundled HVdc link studies.
    pub fn hvdc_default(base_kv_ac: f64, f0_hz: f64) -> MmcParams {
        MmcParams {
            s_rated_mva: 1000.0,
            v_dc_nom: 640e3,
            base_kv_ac,
            n_sm: 200,
            c_sm: 10e-3,
            l_arm: 50e-3,
            r_arm: 0.1,
            l_tx_pu: 0.18,
            f0_hz,
            i_max_pu: 1.1,
        }
    }

    /// Equivalent arm capacitance of the series submodule chain.
    pub fn c_eq(&self) -> f64 {
        self.c_sm / self.n_sm as f64
    }

    /// Peak phase-to-ground voltage base, volts.
    pub fn v_base_pk(&self) -> f64 {
        self.base_kv_ac * 1e3 * (2.0f64).sqrt() / (3.0f64).sqrt()
    }

    /// Peak phase current base on the converter MVA, amps.
    pub fn i_base_pk(&self) -> f64 {
        (2.0f64).sqrt() * self.s_rated_mva * 1e6 / ((3.0f64).sqrt() * self.base_kv_ac * 1e3)
    }

    /// Impedance base on the converter MVA, ohms.
    pub fn z_base(&self) -> f64 {
        self.base_kv_ac * self.base_kv_ac / self.s_rated_mva
    }

    pub fn l_tx(&self) -> f64 {
        self.l_tx_pu * self.z_base() / (2.0 * PI * self.f0_hz)
    }

    /// Series reactance between the grid bus and the internal EMF, pu:
    /// transformer plus half the arm inductance.
    pub fn x_eq_pu(&self) -> f64 {
        let w0 = 2.0 * PI * self.f0_hz;
        self.l_tx_pu + w0 * (self.l_arm / 2.0) / self.z_base()
    }
}

/// Synchronous-reference-frame phase-locked loop. Locks the d axis onto
/// the positive-sequence voltage vector by regulating v_q to zero; the
/// frequency estimate saturates at +-10 Hz about nominal.
#[derive(Debug, Clone)]
pub struct Pll {
    pub theta: f64,
    pub freq_hz: f64,
    integral: f64,
    f0: f64,
    kp: f64,
    ki: f64,
}

impl Pll {
    pub fn new(f0: f64, theta0: f64) -> Pll {
        // Second-order loop, natural frequency 8 Hz, damping 0.7.
        let wn = 2.0 * PI * 8.0;
        Pll {
            theta: theta0,
            freq_hz: f0,
            integral: 0.0,
            f0,
            kp: 2.0 * 0.7 * wn,
            ki: wn * wn,
        }
    }

    /// Feeds one step of phase voltages (pu of peak base).
    pub fn update(&mut self, v_abc_pu: [f64; 3], dt: f64) {
        let (_, vq) = park(v_abc_pu, self.theta);
        self.integral += self.ki * vq * dt;
        let w = 2.0 * PI * self.f0 + self.kp * vq + self.integral;
        let f = (w / (2.0 * PI)).clamp(self.f0 - 10.0, self.f0 + 10.0);
        self.freq_hz = f;
        self.theta += 2.0 * PI * f * dt;
        if self.theta > 2.0 * PI {
            self.theta -= 2.0 * PI;
        }
    }
}

/// Amplitude-invariant Park transform; d axis at angle theta.
pub fn park(abc: [f64; 3], theta: f64) -> (f64, f64) {
    let ang = [theta, theta - 2.0 * PI / 3.0, theta + 2.0 * PI / 3.0];
    let mut d = 0.0;
    let mut q = 0.0;
    for k in 0..3 {
        let (s, c) = ang[k].sin_cos();
        d += 2.0 / 3.0 * abc[k] * c;
        q -= 2.0 / 3.0 * abc[k] * s;
    }
    (d, q)
}

/// Inverse of `park` for a balanced set.
pub fn inverse_park(d: f64, q: f64, theta: f64) -> [f64; 3] {
    let ang = [theta, theta - 2.0 * PI / 3.0, theta + 2.0 * PI / 3.0];
    let mut abc = [0.0; 3];
    for k in 0..3 {
        let (s, c) = ang[k].sin_cos();
        abc[k] = d * c - q * s;
    }
    abc
}

/// Outer-loop role of a terminal.
#[derive(Debug, Clone)]
pub enum ConverterControl {
    /// Follows a power order through a rate limiter. With direct
    /// modulation the arm energy floats to whatever level pushes the
    /// ordered power down the dc line, so no separate energy trim is
    /// needed at this end.
    PowerSchedule {
        p_order_target_pu: f64,
        ramp_pu_per_s: f64,
        p_order_pu: f64,
    },
    /// Regulates pole-to-pole dc voltage by adjusting the active current.
    /// Under direct modulation the dc voltage tracks the stored energy,
    /// so this loop stabilizes both.
    DcVoltage { v_ref: f64, int: f64 },
}

impl ConverterControl {
    pub fn power_schedule(ramp_mw_per_s: f64, s_rated_mva: f64) -> ConverterControl {
        ConverterControl::PowerSchedule {
            p_order_target_pu: 0.0,
            ramp_pu_per_s: ramp_mw_per_s / s_rated_mva,
            p_order_pu: 0.0,
        }
    }

    pub fn dc_voltage(v_ref: f64) -> ConverterControl {
        ConverterControl::DcVoltage { v_ref, int: 0.0 }
    }
}

/// Network attachment points created by the circuit builder.
#[derive(Debug, Clone)]
pub struct MmcHandles {
    /// Grid-side phase nodes (part of the buffer network).
    pub ac_bus: [usize; 3],
    /// Phase midpoint nodes between the arms.
    pub mid: [usize; 3],
    pub dc_p: usize,
    pub dc_n: usize,
    /// Element ids: upper arms (dc+ -> mid), lower arms (mid -> dc-),
    /// transformer branches (bus -> mid).
    pub arm_up: [usize; 3],
    pub arm_low: [usize; 3],
    pub tx: [usize; 3],
}

/// Snapshot of converter quantities for recording.
#[derive(Debug, Clone, Copy, Default)]
pub struct MmcMeasurements {
    /// Active power absorbed from the ac bus, MW (rectifying positive).
    pub p_ac_mw: f64,
    /// Reactive power absorbed from the ac bus, MVar.
    pub q_ac_mvar: f64,
    /// Instantaneous three-phase power at the ac bus, watts (unfiltered,
    /// carries the full integration noise).
    pub p_inst_w: f64,
    pub v_dc_kv: f64,
    pub pll_freq_hz: f64,
    /// Mean of the six submodule-sum voltages, volts.
    pub v_csum_mean: f64,
    pub current_limited: bool,
    pub tripped: bool,
}

pub struct Mmc {
    pub params: MmcParams,
    pub control: ConverterControl,
    handles: MmcHandles,
    pub pll: Pll,
    v_csum_up: [f64; 3],
    v_csum_low: [f64; 3],
    n_up: [f64; 3],
    n_low: [f64; 3],
    i_up_prev: [f64; 3],
    i_low_prev: [f64; 3],
    // Inner current loop.
    id_int: f64,
    iq_int: f64,
    kp_i: f64,
    ki_i: f64,
    // Circulating-current suppression.
    circ_int: [f64; 3],
    kp_c: f64,
    ki_c: f64,
    // ac-voltage loop.
    vac_ref_pu: f64,
    vac_int: f64,
    /// Energization scale on the voltage reference, 0..1.
    ref_scale: f64,
    v_dc_filt: f64,
    measurements: MmcMeasurements,
    tripped: bool,
    limited: bool,
}

impl Mmc {
    /// `theta0` aligns the PLL with the terminal voltage phasor of the
    /// operating point; `vac_ref_pu` is the voltage the q axis holds.
    pub fn new(
        params: MmcParams,
        control: ConverterControl,
        handles: MmcHandles,
        theta0: f64,
        vac_ref_pu: f64,
    ) -> Mmc {
        let alpha_i = 2.0 * PI * 100.0;
        let w0 = 2.0 * PI * params.f0_hz;
        let kp_i = alpha_i * params.x_eq_pu() / w0;
        let alpha_c = 2.0 * PI * 50.0;
        let pll = Pll::new(params.f0_hz, theta0);
        let v_nom = params.v_dc_nom;
        Mmc {
            kp_i,
            ki_i: alpha_i * kp_i / 5.0,
            kp_c: alpha_c * params.l_arm,
            ki_c: alpha_c * params.r_arm,
            pll,
            v_csum_up: [v_nom; 3],
            v_csum_low: [v_nom; 3],
            n_up: [0.5; 3],
            n_low: [0.5; 3],
            i_up_prev: [0.0; 3],
            i_low_prev: [0.0; 3],
            id_int: 0.0,
            iq_int: 0.0,
            circ_int: [0.0; 3],
            vac_ref_pu,
            vac_int: 0.0,
            ref_scale: 0.0,
            v_dc_filt: v_nom,
            measurements: MmcMeasurements::default(),
            tripped: false,
            limited: false,
            params,
            control,
            handles,
        }
    }

    /// Scales the voltage reference during source energization so the
    /// q-axis loop does not wind up against a dead network.
    pub fn set_ref_scale(&mut self, scale: f64) {
        self.ref_scale = scale.clamp(0.0, 1.0);
    }

    /// Sets the power-order target, MW (rectifier role only; ignored by a
    /// dc-voltage terminal).
    pub fn set_power_order_mw(&mut self, p_mw: f64) {
        if let ConverterControl::PowerSchedule {
            p_order_target_pu, ..
        } = &mut self.control
        {
            *p_order_target_pu = p_mw / self.params.s_rated_mva;
        }
    }

    pub fn measurements(&self) -> MmcMeasurements {
        self.measurements
    }

    /// Grid-side phase nodes of the converter transformer.
    pub fn ac_nodes(&self) -> [usize; 3] {
        self.handles.ac_bus
    }

    pub fn power_order_mw(&self) -> f64 {
        match &self.control {
            ConverterControl::PowerSchedule { p_order_pu, .. } => {
                p_order_pu * self.params.s_rated_mva
            }
            ConverterControl::DcVoltage { .. } => 0.0,
        }
    }

    /// Runs the control chain on the state at the step start and loads
    /// the six arm EMFs for the coming step. Call before `net.step`.
    pub fn control_update(&mut self, net: &mut EmtNetwork, dt: f64) {
        if self.tripped {
            return;
        }
        let p = &self.params;
        let vb = p.v_base_pk();
        let ib = p.i_base_pk();

        // Measurements.
        let v_abc = [
            net.voltage(self.handles.ac_bus[0]),
            net.voltage(self.handles.ac_bus[1]),
            net.voltage(self.handles.ac_bus[2]),
        ];
        let i_abc = [
            net.current(self.handles.tx[0]),
            net.current(self.handles.tx[1]),
            net.current(self.handles.tx[2]),
        ];
        let i_up = [
            net.current(self.handles.arm_up[0]),
            net.current(self.handles.arm_up[1]),
            net.current(self.handles.arm_up[2]),
        ];
        let i_low = [
            net.current(self.handles.arm_low[0]),
            net.current(self.handles.arm_low[1]),
            net.current(self.handles.arm_low[2]),
        ];
        let v_dc = net.voltage(self.handles.dc_p) - net.voltage(self.handles.dc_n);
        let tau_f = 1e-3;
        self.v_dc_filt += dt / (tau_f + dt) * (v_dc - self.v_dc_filt);

        let v_abc_pu = [v_abc[0] / vb, v_abc[1] / vb, v_abc[2] / vb];
        self.pll.update(v_abc_pu, dt);
        let theta = self.pll.theta;
        let (v_d, v_q) = park(v_abc_pu, theta);
        let (i_d, i_q) = park([i_abc[0] / ib, i_abc[1] / ib, i_abc[2] / ib], theta);

        // Outer loops -> current references (pu, converter base).
        let v_mag = (v_d * v_d + v_q * v_q).sqrt();
        let mut id_ref = match &mut self.control {
            ConverterControl::PowerSchedule {
                p_order_target_pu,
                ramp_pu_per_s,
                p_order_pu,
            } => {
                let max_move = *ramp_pu_per_s * dt;
                *p_order_pu += (*p_order_target_pu - *p_order_pu).clamp(-max_move, max_move);
                *p_order_pu / v_d.max(0.2)
            }
            ConverterControl::DcVoltage { v_ref, int } => {
                let e = (self.v_dc_filt - *v_ref) / p.v_dc_nom;
                if !self.limited {
                    *int += 60.0 * e * dt;
                    *int = int.clamp(-1.2, 1.2);
                }
                -(4.0 * e + *int)
            }
        };
        let e_v = self.vac_ref_pu * self.ref_scale - v_mag;
        if !self.limited {
            self.vac_int += 100.0 * e_v * dt;
            self.vac_int = self.vac_int.clamp(-1.0, 1.0);
        }
        let mut iq_ref = 2.0 * e_v + self.vac_int;

        // Reference ceiling at the converter rating.
        let mag = (id_ref * id_ref + iq_ref * iq_ref).sqrt();
        self.limited = mag > p.i_max_pu;
        if self.limited {
            let scale = p.i_max_pu / mag;
            id_ref *= scale;
            iq_ref *= scale;
        }

        // Inner current loop with decoupling and voltage feedforward. The
        // measured current flows from the bus into the converter, so the
        // loop inductance sees v_bus - v_conv: lowering the converter
        // voltage below the bus feedforward raises the current.
        let e_d = id_ref - i_d;
        let e_q = iq_ref - i_q;
        self.id_int += self.ki_i * e_d * dt;
        self.iq_int += self.ki_i * e_q * dt;
        let x_eq = p.x_eq_pu();
        let v_cd = v_d - (self.kp_i * e_d + self.id_int) + x_eq * i_q;
        let v_cq = v_q - (self.kp_i * e_q + self.iq_int) - x_eq * i_d;
        let v_diff = inverse_park(v_cd * vb, v_cq * vb, theta);

        // Circulating-current suppression to the dc share.
        let i_dc: f64 = (i_up.iter().sum::<f64>() + i_low.iter().sum::<f64>()) / 2.0;
        let mut v_com = [0.0; 3];
        for k in 0..3 {
            let e_c = i_dc / 3.0 - (i_up[k] + i_low[k]) / 2.0;
            self.circ_int[k] += self.ki_c * e_c * dt;
            v_com[k] = self.kp_c * e_c + self.circ_int[k];
        }

        // Insertion indices, direct modulation: the references are scaled
        // by the nominal dc voltage, so the inserted voltage n * v_csum is
        // proportional to the stored energy. A terminal that accumulates
        // energy raises its dc-side voltage and sheds the surplus down the
        // line, which is what lets a power order drive dc current at all.
        for k in 0..3 {
            self.n_up[k] =
                ((p.v_dc_nom / 2.0 - v_diff[k] - v_com[k]) / p.v_dc_nom).clamp(0.0, 1.0);
            self.n_low[k] =
                ((p.v_dc_nom / 2.0 + v_diff[k] - v_com[k]) / p.v_dc_nom).clamp(0.0, 1.0);
            net.set_emf(self.handles.arm_up[k], -self.n_up[k] * self.v_csum_up[k]);
            net.set_emf(self.handles.arm_low[k], -self.n_low[k] * self.v_csum_low[k]);
        }
        self.i_up_prev = i_up;
        self.i_low_prev = i_low;

        // Record.
        let s_scale = 1.5 * vb * ib; // W per pu (amplitude-invariant dq)
        self.measurements = MmcMeasurements {
            p_ac_mw: s_scale * (v_d * i_d + v_q * i_q) / 1e6,
            q_ac_mvar: s_scale * (v_q * i_d - v_d * i_q) / 1e6,
            p_inst_w: v_abc[0] * i_abc[0] + v_abc[1] * i_abc[1] + v_abc[2] * i_abc[2],
            v_dc_kv: v_dc / 1e3,
            pll_freq_hz: self.pll.freq_hz,
            v_csum_mean: (self.v_csum_up.iter().sum::<f64>()
                + self.v_csum_low.iter().sum::<f64>())
                / 6.0,
            current_limited: self.limited,
            tripped: self.tripped,
        };

        // Submodule undervoltage protection.
        let v_min = 0.1 * p.v_dc_nom;
        if self
            .v_csum_up
            .iter()
            .chain(self.v_csum_low.iter())
            .any(|&v| v < v_min)
        {
            self.trip(net);
        }
    }

    /// Integrates the sum-capacitor voltages across the step just taken.
    /// Call after `net.step`.
    pub fn post_step(&mut self, net: &EmtNetwork, dt: f64) {
        if self.tripped {
            return;
        }
        let c_eq = self.params.c_eq();
        for k in 0..3 {
            let i_up_now = net.current(self.handles.arm_up[k]);
            let i_low_now = net.current(self.handles.arm_low[k]);
            self.v_csum_up[k] += dt / (2.0 * c_eq) * self.n_up[k] * (self.i_up_prev[k] + i_up_now);
            self.v_csum_low[k] +=
                dt / (2.0 * c_eq) * self.n_low[k] * (self.i_low_prev[k] + i_low_now);
        }
    }

    /// Opens all arms through a high resistance and freezes the controls.
    fn trip(&mut self, net: &mut EmtNetwork) {
        self.tripped = true;
        self.measurements.tripped = true;
        for k in 0..3 {
            net.set_resistance(self.handles.arm_up[k], 1e6);
            net.set_resistance(self.handles.arm_low[k], 1e6);
            net.set_emf(self.handles.arm_up[k], 0.0);
            net.set_emf(self.handles.arm_low[k], 0.0);
        }
    }

    pub fn is_tripped(&self) -> bool {
        self.tripped
    }

    /// Sum-capacitor voltages, upper then lower arms (testing hook).
    pub fn v_csum(&self) -> [f64; 6] {
        [
            self.v_csum_up[0],
            self.v_csum_up[1],
            self.v_csum_up[2],
            self.v_csum_low[0],
            self.v_csum_low[1],
            self.v_csum_low[2],
        ]
    }

    /// Overrides the stored sum voltages (testing hook for protection).
    pub fn force_v_csum(&mut self, v: f64) {
        self.v_csum_up = [v; 3];
        self.v_csum_low = [v; 3];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn park_round_trip_is_identity_for_balanced_set() {
        let theta = 1.234;
        let abc = inverse_park(0.8, -0.3, theta);
        let (d, q) = park(abc, theta);
        assert_relative_eq!(d, 0.8, epsilon = 1e-12);
        assert_relative_eq!(q, -0.3, epsilon = 1e-12);
    }

    #[test]
    fn park_of_cosine_set_aligned_with_theta_is_pure_d() {
        let t = 0.77;
        let w = 2.0 * PI * 60.0;
        let abc = [
            (w * t).cos(),
            (w * t - 2.0 * PI / 3.0).cos(),
            (w * t + 2.0 * PI / 3.0).cos(),
        ];
        let (d, q) = park(abc, w * t);
        assert_relative_eq!(d, 1.0, epsilon = 1e-12);
        assert_relative_eq!(q, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pll_locks_onto_offset_frequency() {
        let f_actual = 60.8;
        let mut pll = Pll::new(60.0, 0.0);
        let dt = 60e-6;
        let w = 2.0 * PI * f_actual;
        let mut t = 0.0;
        for _ in 0..(1.0 / dt) as usize {
            let abc = [
                (w * t + 0.4).cos(),
                (w * t + 0.4 - 2.0 * PI / 3.0).cos(),
                (w * t + 0.4 + 2.0 * PI / 3.0).cos(),
            ];
            pll.update(abc, dt);
            t += dt;
        }
        assert_relative_eq!(pll.freq_hz, f_actual, epsilon = 1e-3);
        // Locked: q component of the tracked vector is ~zero.
        let abc = [
            (w * t + 0.4).cos(),
            (w * t + 0.4 - 2.0 * PI / 3.0).cos(),
            (w * t + 0.4 + 2.0 * PI / 3.0).cos(),
        ];
        let (_, q) = park(abc, pll.theta);
        assert!(q.abs() < 1e-3, "vq = {q}");
    }

    #[test]
    fn pll_frequency_saturates() {
        let mut pll = Pll::new(60.0, 0.0);
        let dt = 60e-6;
        let w = 2.0 * PI * 90.0; // far outside the +-10 Hz window
        let mut t = 0.0;
        for _ in 0..20000 {
            let abc = [
                (w * t).cos(),
                (w * t - 2.0 * PI / 3.0).cos(),
                (w * t + 2.0 * PI / 3.0).cos(),
            ];
            pll.update(abc, dt);
            t += dt;
        }
        assert!(pll.freq_hz <= 70.0 + 1e-9);
        assert!(pll.freq_hz >= 50.0 - 1e-9);
    }

    #[test]
    fn power_schedule_ramps_at_the_limit() {
        let mut ctl = ConverterControl::power_schedule(1666.7, 1000.0);
        if let ConverterControl::PowerSchedule {
            p_order_target_pu,
            ramp_pu_per_s,
            p_order_pu,
            ..
        } = &mut ctl
        {
            *p_order_target_pu = 0.5;
            let dt = 1e-3;
            let mut t = 0.0;
            while *p_order_pu < 0.5 - 1e-12 {
                let max_move = *ramp_pu_per_s * dt;
                *p_order_pu += (*p_order_target_pu - *p_order_pu).clamp(-max_move, max_move);
                t += dt;
            }
            // 0.5 pu at 1.6667 pu/s is reached in 0.3 s.
            assert_relative_eq!(t, 0.3, epsilon = 2e-3);
        } else {
            unreachable!();
        }
    }

    #[test]
    fn default_ratings_give_modulation_near_0p59() {
        let p = MmcParams::hvdc_default(230.0, 60.0);
        let m = p.v_base_pk() / (p.v_dc_nom / 2.0);
        assert!((m - 0.59).abs() < 0.01, "modulation {m:.3}");
        assert_relative_eq!(p.c_eq(), 50e-6, epsilon = 1e-12);
    }
}
