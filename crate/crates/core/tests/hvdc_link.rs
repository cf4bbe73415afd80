//! End-to-end behavior of the embedded HVdc link inside the hybrid
//! co-simulation: power-order tracking, dc-voltage regulation, and the
//! interface power balance while the link carries load.

use cosim_core::grid::{parse_network, BusId, NetworkModel};
use cosim_core::hybrid::{run_hybrid, Event, EventKind, RunOptions, Scenario};
use std::collections::BTreeSet;

/// One-machine external grid feeding two buffered converter pockets over
/// short overhead lines; the dc link parallels the ac corridor.
fn link_case() -> NetworkModel {
    parse_network(
        "[BUS]\n\
         1,hub,230,3,1.0,0\n\
         2,near,230,1,1.0,0\n\
         3,sendb,230,1,1.0,0\n\
         4,rectt,230,1,1.0,0\n\
         5,recvb,230,1,1.0,0\n\
         6,invt,230,1,1.0,0\n\
         [LOAD]\n\
         2,200,50,1\n\
         [GEN]\n\
         1,0,0,2000,-2000,1.02,2500,1,5.0,0,0.25\n\
         [BRANCH]\n\
         1,2,0.001,0.012,0,0,1,0\n\
         2,3,0.001,0.01,0,0,1,0\n\
         2,5,0.001,0.01,0,0,1,0\n\
         3,4,0.002,0.02,0,0,1,0\n\
         5,6,0.002,0.02,0,0,1,0\n\
         [HVDC_TERMINAL]\n\
         4,rectifier\n\
         6,inverter\n\
         [SYSTEM]\n\
         100,60\n",
    )
    .unwrap()
}

fn members() -> BTreeSet<BusId> {
    [3, 4, 5, 6].into_iter().map(BusId).collect()
}

#[test]
fn link_carries_an_ordered_500_mw() {
    let model = link_case();
    let scenario = Scenario {
        t_end: 1.2,
        events: vec![Event {
            t: 0.1,
            kind: EventKind::PowerOrder { p_mw: 500.0 },
        }],
    };
    let opts = RunOptions::default();
    let res = run_hybrid(&model, &members(), &[BusId(3), BusId(5)], &scenario, &opts).unwrap();

    let t = res.series("time_s").unwrap();
    let p_rect = res.series("p_rect_mw").unwrap();
    let p_inv = res.series("p_inv_mw").unwrap();
    let vdc_r = res.series("vdc_rect_kv").unwrap();
    let vdc_i = res.series("vdc_inv_kv").unwrap();
    let v_rect = res.series("v_rect_pu").unwrap();
    let p_ts3 = res.series("p_ts_bus3_mw").unwrap();
    let p_emt3 = res.series("p_emt_bus3_mw").unwrap();
    let p_ts5 = res.series("p_ts_bus5_mw").unwrap();

    for (i, &tv) in t.iter().enumerate() {
        if i % 24 == 0 || i + 1 == t.len() {
            println!(
                "t={tv:6.3}  p_rect={:8.2}  p_inv={:8.2}  vdc_r={:7.2} vdc_i={:7.2}  \
                 v_rect={:6.4}  p_ts3={:8.2} p_emt3={:8.2} p_ts5={:8.2}",
                p_rect[i], p_inv[i], vdc_r[i], vdc_i[i], v_rect[i], p_ts3[i], p_emt3[i], p_ts5[i]
            );
        }
    }

    let last = t.len() - 1;
    // Rectifier tracks the order; the inverter returns it minus losses.
    assert!(
        (p_rect[last] - 500.0).abs() < 10.0,
        "rectifier settled at {} MW",
        p_rect[last]
    );
    assert!(
        (-p_inv[last] - 500.0).abs() < 25.0,
        "inverter settled at {} MW",
        p_inv[last]
    );
    // dc voltage regulated at the inverter, elevated at the rectifier to
    // push the current down the line.
    assert!((vdc_i[last] - 640.0).abs() < 6.4, "vdc_inv {}", vdc_i[last]);
    assert!(vdc_r[last] > vdc_i[last], "no dc headroom");
    // ac-side voltage held by the q loop.
    assert!(
        v_rect[last] > 0.9 && v_rect[last] < 1.1,
        "rect bus at {} pu",
        v_rect[last]
    );
    // Both sides of the sending interface agree on the exchanged power.
    assert!(
        (p_ts3[last] - p_emt3[last]).abs() < 0.02 * p_ts3[last].abs().max(50.0),
        "interface mismatch: ts {} vs emt {}",
        p_ts3[last],
        p_emt3[last]
    );
    // The sending boundary imports roughly the link power; the receiving
    // boundary exports it back (negative import).
    assert!(p_ts3[last] > 400.0, "sending import {}", p_ts3[last]);
    assert!(p_ts5[last] < -400.0, "receiving export {}", p_ts5[last]);
}
