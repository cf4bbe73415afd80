//! Nodal admittance assembly with near-zero-impedance branch merging.
//!
//! In-service branches flagged ideal (or with |r| <= 1e-5 and |x| <= 1e-4
//! pu) are collapsed: their endpoints become one electrical super-node.
//! All admittance stamping, power flow and dynamic simulation operate on
//! super-nodes; member buses share the solved voltage.

use super::NetworkModel;
use num_complex::Complex64;
use std::collections::BTreeMap;

/// Bus-to-super-node assignment produced by collapsing ideal branches.
#[derive(Debug, Clone)]
pub struct MergePlan {
    /// Bus index (position in `model.buses`) to super-node index.
    pub node_of_bus: Vec<usize>,
    /// Super-node index to its member bus indices, ascending. Nodes are
    /// ordered by their smallest member, so the plan is deterministic.
    pub groups: Vec<Vec<usize>>,
}

impl MergePlan {
    pub fn build(model: &NetworkModel) -> MergePlan {
        let n = model.n_buses();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for br in model.branches.iter().filter(|b| b.status && b.is_ideal()) {
            let a = model.bus_index(br.from).unwrap();
            let b = model.bus_index(br.to).unwrap();
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                // Attach the larger root under the smaller so group order
                // is independent of branch order.
                if ra < rb {
                    parent[rb] = ra;
                } else {
                    parent[ra] = rb;
                }
            }
        }
        let mut node_of_root: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            let next = node_of_root.len();
            node_of_root.entry(r).or_insert(next);
        }
        let mut node_of_bus = vec![0usize; n];
        let mut groups = vec![Vec::new(); node_of_root.len()];
        for i in 0..n {
            let node = node_of_root[&find(&mut parent, i)];
            node_of_bus[i] = node;
            groups[node].push(i);
        }
        MergePlan { node_of_bus, groups }
    }

    pub fn n_nodes(&self) -> usize {
        self.groups.len()
    }
}

/// Sparse nodal admittance matrix over super-nodes. Rows are ordered maps
/// so iteration order never depends on hashing.
#[derive(Debug, Clone)]
pub struct Ybus {
    pub plan: MergePlan,
    pub rows: Vec<BTreeMap<usize, Complex64>>,
}

impl Ybus {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .get(&j)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    fn add(&mut self, i: usize, j: usize, y: Complex64) {
        *self.rows[i].entry(j).or_insert(Complex64::new(0.0, 0.0)) += y;
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let n = self.n();
        let mut m = nalgebra::DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, &y) in row {
                m[(i, j)] = y;
            }
        }
        m
    }
}

/// Assembles the admittance matrix from in-service branches and shunts.
/// Loads and generators are not stamped; they enter as injections.
///
/// Branch model: series admittance y = 1/(r + jx), total charging b split
/// half per end, off-nominal tap t on the from side:
/// Yff += (y + jb/2)/t^2, Yft = Ytf -= y/t, Ytt += y + jb/2.
pub fn build_ybus(model: &NetworkModel) -> Ybus {
    let plan = MergePlan::build(model);
    let n = plan.n_nodes();
    let mut ybus = Ybus {
        plan,
        rows: vec![BTreeMap::new(); n],
    };
    for br in model.branches.iter().filter(|b| b.status && !b.is_ideal()) {
        let f = ybus.plan.node_of_bus[model.bus_index(br.from).unwrap()];
        let t = ybus.plan.node_of_bus[model.bus_index(br.to).unwrap()];
        let y = Complex64::new(1.0, 0.0) / Complex64::new(br.r_pu, br.x_pu);
        let half_b = Complex64::new(0.0, br.b_pu / 2.0);
        let tap = br.tap;
        ybus.add(f, f, (y + half_b) / (tap * tap));
        ybus.add(t, t, y + half_b);
        ybus.add(f, t, -y / tap);
        ybus.add(t, f, -y / tap);
    }
    for sh in model.shunts.iter().filter(|s| s.status) {
        let node = ybus.plan.node_of_bus[model.bus_index(sh.bus).unwrap()];
        // P drawn and Q injected at 1 pu voltage map to y = g + jb.
        let y = Complex64::new(sh.g_mw / model.sbase_mva, sh.b_mvar / model.sbase_mva);
        ybus.add(node, node, y);
    }
    ybus
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_network;
    use approx::assert_relative_eq;

    #[test]
    fn stamps_match_hand_computation() {
        let m = parse_network(
            "[BUS]\n1,a,345,3,1.0,0\n2,b,345,1,1.0,0\n\
             [BRANCH]\n1,2,0.01,0.1,0.2,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let y = build_ybus(&m);
        assert_eq!(y.n(), 2);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(0.01, 0.1);
        assert_relative_eq!(y.get(0, 0).re, ys.re, epsilon = 1e-12);
        assert_relative_eq!(y.get(0, 0).im, ys.im + 0.1, epsilon = 1e-12);
        assert_relative_eq!(y.get(0, 1).re, -ys.re, epsilon = 1e-12);
        assert_relative_eq!(y.get(1, 0).im, -ys.im, epsilon = 1e-12);
    }

    #[test]
    fn tap_scales_from_side() {
        let mut m = parse_network(
            "[BUS]\n1,a,345,3,1.0,0\n2,b,138,1,1.0,0\n\
             [BRANCH]\n1,2,0.0,0.1,0.0,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        m.branches[0].tap = 1.05;
        let y = build_ybus(&m);
        let ys = Complex64::new(0.0, -10.0);
        assert_relative_eq!(y.get(0, 0).im, ys.im / (1.05 * 1.05), epsilon = 1e-12);
        assert_relative_eq!(y.get(0, 1).im, -ys.im / 1.05, epsilon = 1e-12);
        assert_relative_eq!(y.get(1, 1).im, ys.im, epsilon = 1e-12);
    }

    #[test]
    fn ideal_chain_collapses_to_one_node() {
        let m = parse_network(
            "[BUS]\n1,a,345,3,1.0,0\n2,b,345,1,1.0,0\n3,c,345,1,1.0,0\n4,d,345,1,1.0,0\n\
             [BRANCH]\n1,2,0.0,0.0,0.0,400,1,1\n2,3,0.000001,0.00005,0.0,400,1,0\n\
             3,4,0.01,0.1,0.0,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let y = build_ybus(&m);
        // Buses 1-2-3 collapse (explicit flag plus threshold), bus 4 stays.
        assert_eq!(y.n(), 2);
        assert_eq!(y.plan.groups[0], vec![0, 1, 2]);
        assert_eq!(y.plan.groups[1], vec![3]);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(0.01, 0.1);
        assert_relative_eq!(y.get(0, 1).re, -ys.re, epsilon = 1e-12);
    }

    #[test]
    fn out_of_service_ideal_branch_does_not_merge() {
        let m = parse_network(
            "[BUS]\n1,a,345,3,1.0,0\n2,b,345,1,1.0,0\n\
             [BRANCH]\n1,2,0.0,0.0,0.0,400,0,1\n1,2,0.01,0.1,0.0,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let y = build_ybus(&m);
        assert_eq!(y.n(), 2);
    }

    #[test]
    fn branch_inside_super_node_leaves_only_charging() {
        let m = parse_network(
            "[BUS]\n1,a,345,3,1.0,0\n2,b,345,1,1.0,0\n\
             [BRANCH]\n1,2,0.0,0.0,0.0,400,1,1\n1,2,0.01,0.1,0.2,400,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let y = build_ybus(&m);
        assert_eq!(y.n(), 1);
        assert_relative_eq!(y.get(0, 0).re, 0.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(0, 0).im, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn shunt_sign_convention() {
        let m = parse_network(
            "[BUS]\n1,a,345,3,1.0,0\n\
             [SHUNT]\n1,5,-120,1\n[SYSTEM]\n100,60\n",
        )
        .unwrap();
        let y = build_ybus(&m);
        // 5 MW drawn -> g = +0.05; 120 MVar absorbed (reactor) -> b = -1.2.
        assert_relative_eq!(y.get(0, 0).re, 0.05, epsilon = 1e-12);
        assert_relative_eq!(y.get(0, 0).im, -1.2, epsilon = 1e-12);
    }
}
