//! EPANET INP reader/writer for the supported subset: junctions, reservoirs,
//! pipes, demands, coordinates, and `SENSOR` node tags.
//!
//! Diameters are millimetres in the file and metres in memory. Flow units are
//! converted to m³/h; the writer always emits `CMH`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{validate, Diagnostic, Junction, NetworkGraph, Pipe, Reservoir};
use crate::error::{Error, Result};

/// A non-fatal issue found while reading an INP file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub line: usize,
    pub section: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ParsedNetwork {
    pub graph: NetworkGraph,
    pub warnings: Vec<ParseWarning>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Title,
    Junctions,
    Reservoirs,
    Pipes,
    Demands,
    Coordinates,
    Tags,
    Options,
    Rejected,
    Ignored,
    End,
}

const REJECTED: [&str; 3] = ["PUMPS", "VALVES", "TANKS"];

fn section_of(name: &str) -> Section {
    match name {
        "TITLE" => Section::Title,
        "JUNCTIONS" => Section::Junctions,
        "RESERVOIRS" => Section::Reservoirs,
        "PIPES" => Section::Pipes,
        "DEMANDS" => Section::Demands,
        "COORDINATES" => Section::Coordinates,
        "TAGS" => Section::Tags,
        "OPTIONS" => Section::Options,
        "END" => Section::End,
        n if REJECTED.contains(&n) => Section::Rejected,
        _ => Section::Ignored,
    }
}

fn flow_factor(units: &str) -> Option<f64> {
    match units {
        "CMH" => Some(1.0),
        "LPS" => Some(3.6),
        "LPM" => Some(0.06),
        "MLD" => Some(1000.0 / 24.0),
        "CMD" => Some(1.0 / 24.0),
        _ => None,
    }
}

fn number(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Syntax {
        line,
        message: format!("cannot parse {what} from '{tok}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Syntax {
            line,
            message: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

fn need(toks: &[&str], n: usize, line: usize, section: &str) -> Result<()> {
    if toks.len() < n {
        Err(Error::Syntax {
            line,
            message: format!("[{section}] row needs at least {n} columns, found {}", toks.len()),
        })
    } else {
        Ok(())
    }
}

struct RawDemand {
    node: String,
    value: f64,
    line: usize,
}

/// Parse INP text into a network plus warnings and validation diagnostics.
pub fn parse_inp(text: &str) -> Result<ParsedNetwork> {
    let mut warnings = Vec::new();
    let mut junctions: Vec<Junction> = Vec::new();
    let mut reservoirs: Vec<Reservoir> = Vec::new();
    let mut pipes: Vec<Pipe> = Vec::new();
    let mut demands: Vec<RawDemand> = Vec::new();
    let mut saw_demands = false;
    let mut coords: Vec<(String, [f64; 2], usize)> = Vec::new();
    let mut sensors: Vec<String> = Vec::new();
    let mut flow_units = 1.0;

    let mut node_ids: HashSet<String> = HashSet::new();
    let mut pipe_ids: HashSet<String> = HashSet::new();

    let mut section: Option<(Section, String)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split(';').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            let name = content
                .trim_start_matches('[')
                .split(']')
                .next()
                .unwrap_or("")
                .trim()
                .to_ascii_uppercase();
            let kind = section_of(&name);
            match kind {
                Section::Ignored => warnings.push(ParseWarning {
                    line,
                    section: name.clone(),
                    message: "section not supported; skipped".into(),
                }),
                Section::Demands => saw_demands = true,
                _ => {}
            }
            section = Some((kind, name));
            continue;
        }
        let Some((kind, name)) = &section else {
            return Err(Error::Syntax {
                line,
                message: "data outside of any section".into(),
            });
        };
        let toks: Vec<&str> = content.split_whitespace().collect();
        match kind {
            Section::Title | Section::Ignored => {}
            Section::End => break,
            Section::Rejected => {
                return Err(Error::Unsupported {
                    section: name.clone(),
                    line,
                })
            }
            Section::Junctions => {
                need(&toks, 2, line, name)?;
                let id = toks[0].to_string();
                if !node_ids.insert(id.clone()) {
                    return Err(Error::DuplicateId { kind: "node", id });
                }
                let elevation = number(toks[1], line, "elevation")?;
                let base_demand = match toks.get(2) {
                    Some(t) => number(t, line, "demand")? * flow_units,
                    None => 0.0,
                };
                if toks.len() > 3 {
                    warnings.push(ParseWarning {
                        line,
                        section: name.clone(),
                        message: format!("demand pattern '{}' ignored", toks[3]),
                    });
                }
                junctions.push(Junction {
                    id,
                    elevation,
                    base_demand,
                    coordinates: None,
                });
            }
            Section::Reservoirs => {
                need(&toks, 2, line, name)?;
                let id = toks[0].to_string();
                if !node_ids.insert(id.clone()) {
                    return Err(Error::DuplicateId { kind: "node", id });
                }
                let elevation_head = number(toks[1], line, "head")?;
                if toks.len() > 2 {
                    warnings.push(ParseWarning {
                        line,
                        section: name.clone(),
                        message: format!("head pattern '{}' ignored", toks[2]),
                    });
                }
                reservoirs.push(Reservoir {
                    id,
                    elevation_head,
                    coordinates: None,
                });
            }
            Section::Pipes => {
                need(&toks, 6, line, name)?;
                let id = toks[0].to_string();
                if !pipe_ids.insert(id.clone()) {
                    return Err(Error::DuplicateId { kind: "pipe", id });
                }
                let length = number(toks[3], line, "length")?;
                let diameter = number(toks[4], line, "diameter")? / 1000.0;
                let roughness = number(toks[5], line, "roughness")?;
                if let Some(t) = toks.get(6) {
                    let minor = number(t, line, "minor loss")?;
                    if minor != 0.0 {
                        warnings.push(ParseWarning {
                            line,
                            section: name.clone(),
                            message: format!("minor loss {minor} on pipe '{id}' ignored"),
                        });
                    }
                }
                if let Some(status) = toks.get(7) {
                    if !status.eq_ignore_ascii_case("open") {
                        return Err(Error::Unsupported {
                            section: format!("{name} status {status}"),
                            line,
                        });
                    }
                }
                pipes.push(Pipe {
                    id,
                    from: toks[1].to_string(),
                    to: toks[2].to_string(),
                    length,
                    diameter,
                    roughness,
                });
            }
            Section::Demands => {
                need(&toks, 2, line, name)?;
                demands.push(RawDemand {
                    node: toks[0].to_string(),
                    value: number(toks[1], line, "demand")? * flow_units,
                    line,
                });
            }
            Section::Coordinates => {
                need(&toks, 3, line, name)?;
                coords.push((
                    toks[0].to_string(),
                    [number(toks[1], line, "x")?, number(toks[2], line, "y")?],
                    line,
                ));
            }
            Section::Tags => {
                need(&toks, 3, line, name)?;
                if toks[0].eq_ignore_ascii_case("NODE") && toks[2].eq_ignore_ascii_case("SENSOR") {
                    sensors.push(toks[1].to_string());
                } else {
                    warnings.push(ParseWarning {
                        line,
                        section: name.clone(),
                        message: format!("tag '{}' on {} '{}' ignored", toks[2], toks[0], toks[1]),
                    });
                }
            }
            Section::Options => {
                let key = toks[0].to_ascii_uppercase();
                let value = toks.get(1).map(|v| v.to_ascii_uppercase()).unwrap_or_default();
                match key.as_str() {
                    "UNITS" => {
                        let factor = flow_factor(&value).ok_or_else(|| Error::Unsupported {
                            section: format!("OPTIONS Units {value}"),
                            line,
                        })?;
                        if factor != flow_units && !(junctions.is_empty() && demands.is_empty()) {
                            return Err(Error::Syntax {
                                line,
                                message: "[OPTIONS] Units must precede demand data".into(),
                            });
                        }
                        flow_units = factor;
                    }
                    "HEADLOSS" => {
                        if value != "D-W" {
                            return Err(Error::Unsupported {
                                section: format!("OPTIONS Headloss {value}"),
                                line,
                            });
                        }
                    }
                    _ => warnings.push(ParseWarning {
                        line,
                        section: name.clone(),
                        message: format!("option '{}' ignored", toks[0]),
                    }),
                }
            }
        }
    }

    let junction_pos: HashMap<String, usize> = junctions
        .iter()
        .enumerate()
        .map(|(i, j)| (j.id.clone(), i))
        .collect();

    for p in &pipes {
        for end in [&p.from, &p.to] {
            if !node_ids.contains(end) {
                return Err(Error::DanglingEndpoint {
                    pipe: p.id.clone(),
                    node: end.clone(),
                });
            }
        }
    }

    // [DEMANDS] entries replace the junction-row demand, as in EPANET.
    let mut demand_nodes: Vec<String> = Vec::new();
    let mut replaced: HashSet<usize> = HashSet::new();
    for d in &demands {
        let Some(&i) = junction_pos.get(&d.node) else {
            return Err(Error::Syntax {
                line: d.line,
                message: format!("demand for unknown junction '{}'", d.node),
            });
        };
        if replaced.insert(i) {
            junctions[i].base_demand = 0.0;
            demand_nodes.push(d.node.clone());
        }
        junctions[i].base_demand += d.value;
    }
    if !saw_demands {
        demand_nodes = junctions
            .iter()
            .filter(|j| j.base_demand > 0.0)
            .map(|j| j.id.clone())
            .collect();
    }

    let reservoir_pos: HashMap<String, usize> = reservoirs
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.clone(), i))
        .collect();
    for (id, xy, line) in coords {
        if let Some(&i) = junction_pos.get(&id) {
            junctions[i].coordinates = Some(xy);
        } else if let Some(&i) = reservoir_pos.get(&id) {
            reservoirs[i].coordinates = Some(xy);
        } else {
            warnings.push(ParseWarning {
                line,
                section: "COORDINATES".into(),
                message: format!("coordinates for unknown node '{id}' ignored"),
            });
        }
    }

    let graph = NetworkGraph {
        junctions,
        reservoirs,
        pipes,
        sensor_nodes: sensors,
        demand_nodes,
    };
    let diagnostics = validate(&graph);
    Ok(ParsedNetwork {
        graph,
        warnings,
        diagnostics,
    })
}

/// Shortest decimal text `s` with `parse(s) / scale == value`, so that unit
/// conversion survives a write/read cycle bit-for-bit.
fn scaled_text(value: f64, scale: f64) -> String {
    let target = value * scale;
    let exact = |s: &str| s.parse::<f64>().map(|v| v / scale == value).unwrap_or(false);
    let first = format!("{target}");
    if exact(&first) {
        return first;
    }
    let bits = target.to_bits();
    for step in 1..=16u64 {
        for candidate in [bits.wrapping_add(step), bits.wrapping_sub(step)] {
            let s = format!("{}", f64::from_bits(candidate));
            if exact(&s) {
                return s;
            }
        }
    }
    first
}

/// Write a network as INP text (CMH flow units, D-W head loss).
pub fn serialize_inp(graph: &NetworkGraph) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[TITLE]\nhydrocal network\n");
    let _ = writeln!(s, "[OPTIONS]\nUnits\tCMH\nHeadloss\tD-W\n");
    let _ = writeln!(s, "[JUNCTIONS]\n;ID\tElev\tDemand");
    for j in &graph.junctions {
        let _ = writeln!(s, "{}\t{}\t{}", j.id, j.elevation, j.base_demand);
    }
    let _ = writeln!(s, "\n[RESERVOIRS]\n;ID\tHead");
    for r in &graph.reservoirs {
        let _ = writeln!(s, "{}\t{}", r.id, r.elevation_head);
    }
    let _ = writeln!(
        s,
        "\n[PIPES]\n;ID\tNode1\tNode2\tLength\tDiameter\tRoughness\tMinorLoss\tStatus"
    );
    for p in &graph.pipes {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t0\tOpen",
            p.id,
            p.from,
            p.to,
            p.length,
            scaled_text(p.diameter, 1000.0),
            p.roughness
        );
    }
    let _ = writeln!(s, "\n[DEMANDS]\n;Junction\tDemand");
    let pos: HashMap<&str, &Junction> = graph.junctions.iter().map(|j| (j.id.as_str(), j)).collect();
    for id in &graph.demand_nodes {
        let demand = pos.get(id.as_str()).map(|j| j.base_demand).unwrap_or(0.0);
        let _ = writeln!(s, "{id}\t{demand}");
    }
    if !graph.sensor_nodes.is_empty() {
        let _ = writeln!(s, "\n[TAGS]");
        for id in &graph.sensor_nodes {
            let _ = writeln!(s, "NODE\t{id}\tSENSOR");
        }
    }
    let with_coords: Vec<(&str, [f64; 2])> = graph
        .junctions
        .iter()
        .filter_map(|j| j.coordinates.map(|c| (j.id.as_str(), c)))
        .chain(
            graph
                .reservoirs
                .iter()
                .filter_map(|r| r.coordinates.map(|c| (r.id.as_str(), c))),
        )
        .collect();
    if !with_coords.is_empty() {
        let _ = writeln!(s, "\n[COORDINATES]\n;Node\tX\tY");
        for (id, [x, y]) in with_coords {
            let _ = writeln!(s, "{id}\t{x}\t{y}");
        }
    }
    let _ = writeln!(s, "\n[END]");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Invariant;

    const MINIMAL: &str = "\
[TITLE]
minimal

[JUNCTIONS]
;ID Elev Demand
J1  250  1.5
J2  245  0.5

[RESERVOIRS]
R1  300

[PIPES]
P1  R1  J1  100  150  0.5  0  Open
P2  J1  J2  200  100  1.0

[END]
";

    #[test]
    fn minimal_network() {
        let parsed = parse_inp(MINIMAL).unwrap();
        let g = &parsed.graph;
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.pipe_count(), 2);
        assert_eq!(g.pipes[0].diameter, 0.15);
        assert_eq!(g.demand_nodes, vec!["J1", "J2"]);
        assert!(parsed.diagnostics.is_empty());
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn dangling_endpoint_names_node() {
        let text = MINIMAL.replace("P2  J1  J2", "P2  J1  J9");
        match parse_inp(&text) {
            Err(Error::DanglingEndpoint { pipe, node }) => {
                assert_eq!(pipe, "P2");
                assert_eq!(node, "J9");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = MINIMAL.replace("J2  245", "J1  245");
        assert!(matches!(parse_inp(&text), Err(Error::DuplicateId { kind: "node", .. })));
    }

    #[test]
    fn pumps_rejected_by_section_name() {
        let text = MINIMAL.replace("[END]", "[PUMPS]\nPU1 J1 J2 HEAD C1\n[END]");
        match parse_inp(&text) {
            Err(Error::Unsupported { section, line }) => {
                assert_eq!(section, "PUMPS");
                assert_eq!(line, 17);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_rejected_sections_are_tolerated() {
        let text = MINIMAL.replace("[END]", "[VALVES]\n;none\n[END]");
        assert!(parse_inp(&text).is_ok());
    }

    #[test]
    fn unknown_sections_warn() {
        let text = MINIMAL.replace("[END]", "[PATTERNS]\n1 1.0 0.5\n[END]");
        let parsed = parse_inp(&text).unwrap();
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.warnings[0].section, "PATTERNS");
    }

    #[test]
    fn syntax_error_has_line_number() {
        let text = MINIMAL.replace("J2  245  0.5", "J2  abc  0.5");
        match parse_inp(&text) {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lps_units_convert_to_cmh() {
        let text = format!("[OPTIONS]\nUnits LPS\n{MINIMAL}");
        let g = parse_inp(&text).unwrap().graph;
        assert!((g.junctions[0].base_demand - 5.4).abs() < 1e-12);
    }

    #[test]
    fn hazen_williams_rejected() {
        let text = format!("[OPTIONS]\nHeadloss H-W\n{MINIMAL}");
        assert!(matches!(parse_inp(&text), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn demands_section_replaces_and_orders() {
        let text = MINIMAL.replace("[END]", "[DEMANDS]\nJ2 0.25\nJ2 0.25\nJ1 3\n[END]");
        let g = parse_inp(&text).unwrap().graph;
        assert_eq!(g.demand_nodes, vec!["J2", "J1"]);
        assert_eq!(g.junctions[1].base_demand, 0.5);
        assert_eq!(g.junctions[0].base_demand, 3.0);
    }

    #[test]
    fn disconnected_graph_parses_with_diagnostic() {
        let text = MINIMAL.replace("[RESERVOIRS]", "J3 240 0\n\n[RESERVOIRS]");
        let parsed = parse_inp(&text).unwrap();
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].invariant, Invariant::Connectivity);
    }

    #[test]
    fn round_trip_with_tags_and_coordinates() {
        let mut g = parse_inp(MINIMAL).unwrap().graph;
        g.sensor_nodes = vec!["J2".into(), "J1".into()];
        g.junctions[0].coordinates = Some([1.5, -2.25]);
        g.reservoirs[0].coordinates = Some([0.0, 0.0]);
        g.pipes[1].diameter = 0.1234567;
        let back = parse_inp(&serialize_inp(&g)).unwrap().graph;
        assert_eq!(back, g);
    }

    #[test]
    fn scaled_text_is_exact() {
        for v in [0.1, 0.123456789, 0.3, 1.0 / 3.0, 0.0007, 0.29] {
            let s = scaled_text(v, 1000.0);
            assert_eq!(s.parse::<f64>().unwrap() / 1000.0, v, "{s}");
        }
    }
}
