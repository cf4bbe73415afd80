//! Sectioned-CSV network file format.
//!
//! Files are plain text with `[SECTION]` headers followed by one
//! comma-separated record per line. `#` starts a comment, blank lines are
//! skipped. Sections: BUS, LOAD, SHUNT, GEN, BRANCH, HVDC_TERMINAL, SYSTEM.

use super::{
    Branch, Bus, BusId, BusKind, Generator, GridError, HvdcTerminal, Load, NetworkModel, Shunt,
    TerminalRole,
};
use std::fmt::Write as _;
use std::path::Path;

pub fn load_network(path: &Path) -> Result<NetworkModel, GridError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GridError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    parse_network(&text)
}

pub fn parse_network(text: &str) -> Result<NetworkModel, GridError> {
    let mut buses = Vec::new();
    let mut loads = Vec::new();
    let mut shunts = Vec::new();
    let mut gens = Vec::new();
    let mut branches = Vec::new();
    let mut terminals = Vec::new();
    let mut system: Option<(f64, f64)> = None;

    let mut section: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(stripped) = line.strip_prefix('[') {
            let name = stripped.strip_suffix(']').ok_or_else(|| GridError::Syntax {
                line: lineno,
                msg: "unterminated section header".into(),
            })?;
            match name {
                "BUS" | "LOAD" | "SHUNT" | "GEN" | "BRANCH" | "HVDC_TERMINAL" | "SYSTEM" => {
                    section = Some(name.to_string());
                }
                other => {
                    return Err(GridError::UnknownSection {
                        line: lineno,
                        name: other.to_string(),
                    })
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let section = section.as_deref().ok_or_else(|| GridError::Syntax {
            line: lineno,
            msg: "record before any section header".into(),
        })?;
        let row = Row {
            line: lineno,
            fields: &fields,
        };
        match section {
            "BUS" => {
                row.expect(6)?;
                let kind = match row.u32(3)? {
                    1 => BusKind::Pq,
                    2 => BusKind::Pv,
                    3 => BusKind::Slack,
                    k => {
                        return Err(GridError::Syntax {
                            line: lineno,
                            msg: format!("bus kind must be 1, 2 or 3, got {k}"),
                        })
                    }
                };
                buses.push(Bus {
                    id: BusId(row.u32(0)?),
                    name: fields[1].to_string(),
                    base_kv: row.f64(2)?,
                    kind,
                    vm: row.f64(4)?,
                    va: row.f64(5)?.to_radians(),
                });
            }
            "LOAD" => {
                row.expect(4)?;
                loads.push(Load {
                    bus: BusId(row.u32(0)?),
                    p_mw: row.f64(1)?,
                    q_mvar: row.f64(2)?,
                    status: row.status(3)?,
                });
            }
            "SHUNT" => {
                row.expect(4)?;
                shunts.push(Shunt {
                    bus: BusId(row.u32(0)?),
                    g_mw: row.f64(1)?,
                    b_mvar: row.f64(2)?,
                    status: row.status(3)?,
                });
            }
            "GEN" => {
                row.expect(11)?;
                gens.push(Generator {
                    bus: BusId(row.u32(0)?),
                    p_mw: row.f64(1)?,
                    q_mvar: row.f64(2)?,
                    qmax: row.f64(3)?,
                    qmin: row.f64(4)?,
                    vset: row.f64(5)?,
                    mbase: row.f64(6)?,
                    status: row.status(7)?,
                    h_s: row.f64(8)?,
                    d_pu: row.f64(9)?,
                    xdp_pu: row.f64(10)?,
                });
            }
            "BRANCH" => {
                row.expect(8)?;
                branches.push(Branch {
                    from: BusId(row.u32(0)?),
                    to: BusId(row.u32(1)?),
                    r_pu: row.f64(2)?,
                    x_pu: row.f64(3)?,
                    b_pu: row.f64(4)?,
                    rate_mva: row.f64(5)?,
                    tap: 1.0,
                    status: row.status(6)?,
                    ideal: row.status(7)?,
                });
            }
            "HVDC_TERMINAL" => {
                row.expect(2)?;
                let role = match fields[1] {
                    "rectifier" => TerminalRole::Rectifier,
                    "inverter" => TerminalRole::Inverter,
                    other => {
                        return Err(GridError::Syntax {
                            line: lineno,
                            msg: format!("role must be rectifier or inverter, got {other:?}"),
                        })
                    }
                };
                terminals.push(HvdcTerminal {
                    bus: BusId(row.u32(0)?),
                    role,
                });
            }
            "SYSTEM" => {
                row.expect(2)?;
                system = Some((row.f64(0)?, row.f64(1)?));
            }
            _ => unreachable!("section names are screened above"),
        }
    }

    let (sbase, f0) = system.ok_or_else(|| GridError::Invalid("missing [SYSTEM] section".into()))?;
    NetworkModel::new(buses, loads, shunts, gens, branches, terminals, sbase, f0)
}

struct Row<'a> {
    line: usize,
    fields: &'a [&'a str],
}

impl Row<'_> {
    fn expect(&self, n: usize) -> Result<(), GridError> {
        if self.fields.len() == n {
            Ok(())
        } else {
            Err(GridError::Syntax {
                line: self.line,
                msg: format!("expected {n} fields, got {}", self.fields.len()),
            })
        }
    }

    fn f64(&self, i: usize) -> Result<f64, GridError> {
        self.fields[i].parse().map_err(|_| GridError::Syntax {
            line: self.line,
            msg: format!("field {}: not a number: {:?}", i + 1, self.fields[i]),
        })
    }

    fn u32(&self, i: usize) -> Result<u32, GridError> {
        self.fields[i].parse().map_err(|_| GridError::Syntax {
            line: self.line,
            msg: format!("field {}: not an integer: {:?}", i + 1, self.fields[i]),
        })
    }

    fn status(&self, i: usize) -> Result<bool, GridError> {
        match self.fields[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(GridError::Syntax {
                line: self.line,
                msg: format!("field {}: expected 0 or 1, got {other:?}", i + 1),
            }),
        }
    }
}

/// Writes the model back in canonical section order. `parse(serialize(m))`
/// reproduces `m` exactly: numbers use Rust's shortest round-trip float
/// formatting.
pub fn serialize_network(m: &NetworkModel) -> String {
    let mut s = String::new();
    let b = |v: bool| if v { "1" } else { "0" };
    s.push_str("[BUS]\n");
    for bus in &m.buses {
        let kind = match bus.kind {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Slack => 3,
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            bus.id,
            bus.name,
            bus.base_kv,
            kind,
            bus.vm,
            bus.va.to_degrees()
        );
    }
    if !m.loads.is_empty() {
        s.push_str("[LOAD]\n");
        for l in &m.loads {
            let _ = writeln!(s, "{},{},{},{}", l.bus, l.p_mw, l.q_mvar, b(l.status));
        }
    }
    if !m.shunts.is_empty() {
        s.push_str("[SHUNT]\n");
        for sh in &m.shunts {
            let _ = writeln!(s, "{},{},{},{}", sh.bus, sh.g_mw, sh.b_mvar, b(sh.status));
        }
    }
    if !m.gens.is_empty() {
        s.push_str("[GEN]\n");
        for g in &m.gens {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                g.bus,
                g.p_mw,
                g.q_mvar,
                g.qmax,
                g.qmin,
                g.vset,
                g.mbase,
                b(g.status),
                g.h_s,
                g.d_pu,
                g.xdp_pu
            );
        }
    }
    if !m.branches.is_empty() {
        s.push_str("[BRANCH]\n");
        for br in &m.branches {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                br.from,
                br.to,
                br.r_pu,
                br.x_pu,
                br.b_pu,
                br.rate_mva,
                b(br.status),
                b(br.ideal)
            );
        }
    }
    if !m.hvdc_terminals.is_empty() {
        s.push_str("[HVDC_TERMINAL]\n");
        for t in &m.hvdc_terminals {
            let _ = writeln!(s, "{},{}", t.bus, t.role);
        }
    }
    s.push_str("[SYSTEM]\n");
    let _ = writeln!(s, "{},{}", m.sbase_mva, m.f0_hz);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# demo file
[BUS]
1,main,345,3,1.02,0
2,mid,345,2,1.01,-2.5
3,tail,138,1,1.0,-5   # trailing comment
[LOAD]
3,120,45,1
[SHUNT]
3,0,-50,1
[GEN]
1,0,0,500,-500,1.02,600,1,4.5,0,0.25
2,200,30,150,-150,1.01,300,1,3.2,0.8,0.3
[BRANCH]
1,2,0.01,0.1,0.05,400,1,0
2,3,0.0,0.0,0.0,400,1,1
[HVDC_TERMINAL]
3,rectifier
[SYSTEM]
100,60
";

    #[test]
    fn parses_sections_and_comments() {
        let m = parse_network(SAMPLE).unwrap();
        assert_eq!(m.n_buses(), 3);
        assert_eq!(m.loads.len(), 1);
        assert_eq!(m.gens.len(), 2);
        assert_eq!(m.branches.len(), 2);
        assert!(m.branches[1].ideal);
        assert_eq!(m.terminal(TerminalRole::Rectifier), Some(BusId(3)));
        assert_eq!(m.sbase_mva, 100.0);
        assert!((m.buses[2].va.to_degrees() + 5.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_is_fixed_point() {
        let m = parse_network(SAMPLE).unwrap();
        let once = serialize_network(&m);
        let again = serialize_network(&parse_network(&once).unwrap());
        assert_eq!(once, again);
    }

    #[test]
    fn rejects_unknown_section() {
        let err = parse_network("[NOISE]\n1,2\n[SYSTEM]\n100,60\n").unwrap_err();
        assert!(matches!(err, GridError::UnknownSection { .. }));
    }

    #[test]
    fn rejects_wrong_field_count() {
        let err = parse_network("[BUS]\n1,x,345,3,1.0\n[SYSTEM]\n100,60\n").unwrap_err();
        assert!(matches!(err, GridError::Syntax { line: 2, .. }));
    }

    #[test]
    fn rejects_dangling_branch() {
        let err = parse_network(
            "[BUS]\n1,a,345,3,1.0,0\n[BRANCH]\n1,9,0.01,0.1,0,100,1,0\n[SYSTEM]\n100,60\n",
        )
        .unwrap_err();
        assert!(matches!(err, GridError::UnknownBus { .. }));
    }

    #[test]
    fn rejects_missing_system() {
        let err = parse_network("[BUS]\n1,a,345,3,1.0,0\n").unwrap_err();
        assert!(matches!(err, GridError::Invalid(_)));
    }

    #[test]
    fn rejects_record_before_section() {
        let err = parse_network("1,a,345,3,1.0,0\n").unwrap_err();
        assert!(matches!(err, GridError::Syntax { line: 1, .. }));
    }
}
