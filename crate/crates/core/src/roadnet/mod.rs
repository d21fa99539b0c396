//! Road-network data model, CityFlow-dialect parsing and synthetic scenarios.

mod cityflow;
mod geometry;
mod synthetic;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cityflow::{FlowDoc, RoadnetDoc};
pub use synthetic::{generate_synthetic, SyntheticKind, SyntheticScenario, SyntheticSpec};

use cityflow::{
    IntersectionDoc, LaneDoc, LaneLinkDoc, LightPhaseDoc, PointDoc, RoadDoc, RoadLinkDoc,
    TrafficLightDoc, VehicleDoc,
};
use geometry::Chord;

#[derive(Debug, Error, PartialEq)]
pub enum RoadnetError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("no signalized intersections")]
    NoSignalized,
    #[error("dangling reference to {0}")]
    DanglingReference(String),
    #[error("conflicting movements in phase {phase} of intersection {intersection}: {first} and {second}")]
    ConflictingMovements {
        intersection: String,
        phase: usize,
        first: String,
        second: String,
    },
    #[error("invalid link {id}: {reason}")]
    InvalidLink { id: String, reason: String },
    #[error("invalid intersection {id}: {reason}")]
    InvalidIntersection { id: String, reason: String },
    #[error("signalized intersections do not form a connected graph")]
    Disconnected,
    #[error("invalid flow #{index}: {reason}")]
    InvalidFlow { index: usize, reason: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

impl From<serde_json::Error> for RoadnetError {
    fn from(e: serde_json::Error) -> Self {
        RoadnetError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl From<&PointDoc> for Point {
    fn from(p: &PointDoc) -> Self {
        Point { x: p.x, y: p.y }
    }
}

/// A lane addressed by its link index and its position within the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LaneRef {
    pub link: usize,
    pub lane: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl Turn {
    fn from_cityflow(kind: &str) -> Self {
        match kind {
            "turn_left" => Turn::Left,
            "turn_right" => Turn::Right,
            _ => Turn::Straight,
        }
    }

    fn as_cityflow(self) -> &'static str {
        match self {
            Turn::Left => "turn_left",
            Turn::Straight => "go_straight",
            Turn::Right => "turn_right",
        }
    }
}

/// Permitted green movement from an entering lane to an exiting lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Movement {
    pub entering: LaneRef,
    pub exiting: LaneRef,
}

/// Connection between an incoming and an outgoing link through one intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadLink {
    pub turn: Turn,
    pub from_link: usize,
    pub to_link: usize,
    pub lane_links: Vec<(usize, usize)>,
}

impl RoadLink {
    pub fn movements(&self) -> impl Iterator<Item = Movement> + '_ {
        self.lane_links.iter().map(|&(a, b)| Movement {
            entering: LaneRef {
                link: self.from_link,
                lane: a,
            },
            exiting: LaneRef {
                link: self.to_link,
                lane: b,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub index: usize,
    /// Signalized movements; right turns live in [`Intersection::free_movements`].
    pub movements: Vec<Movement>,
    /// Road-link indices as declared in the source document.
    pub road_links: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub position: Point,
    pub entering_lanes: Vec<LaneRef>,
    pub exiting_lanes: Vec<LaneRef>,
    pub road_links: Vec<RoadLink>,
    pub phases: Vec<Phase>,
    /// Right-turn movements, green in every phase.
    pub free_movements: Vec<Movement>,
    pub signalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub free_flow_speed: f64,
    pub lane_count: usize,
    pub points: Vec<Point>,
    declared_length: Option<f64>,
    lane_widths: Vec<f64>,
}

impl Link {
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.free_flow_speed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    pub intersections: Vec<Intersection>,
    pub links: Vec<Link>,
    neighbors: Vec<Vec<usize>>,
    intersection_index: HashMap<String, usize>,
    link_index: HashMap<String, usize>,
}

impl RoadNetwork {
    pub fn intersection_index(&self, id: &str) -> Option<usize> {
        self.intersection_index.get(id).copied()
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    /// Indices of the signalized intersections, in document order.
    pub fn signalized(&self) -> Vec<usize> {
        self.intersections
            .iter()
            .enumerate()
            .filter(|(_, i)| i.signalized)
            .map(|(k, _)| k)
            .collect()
    }

    /// Signalized intersections directly connected to `intersection` by a link, ascending.
    pub fn neighbors(&self, intersection: usize) -> &[usize] {
        &self.neighbors[intersection]
    }

    pub fn neighbor_map(&self) -> BTreeMap<String, Vec<String>> {
        self.intersections
            .iter()
            .enumerate()
            .filter(|(_, i)| i.signalized)
            .map(|(k, i)| {
                let ns = self.neighbors[k]
                    .iter()
                    .map(|&n| self.intersections[n].id.clone())
                    .collect();
                (i.id.clone(), ns)
            })
            .collect()
    }

    pub fn lane_name(&self, lane: LaneRef) -> String {
        format!("{}_{}", self.links[lane.link].id, lane.lane)
    }

    pub fn total_lanes(&self) -> usize {
        self.links.iter().map(|l| l.lane_count).sum()
    }

    pub fn to_doc(&self) -> RoadnetDoc {
        let roads = self
            .links
            .iter()
            .map(|l| RoadDoc {
                id: l.id.clone(),
                start_intersection: self.intersections[l.from].id.clone(),
                end_intersection: self.intersections[l.to].id.clone(),
                points: l.points.iter().map(|p| PointDoc { x: p.x, y: p.y }).collect(),
                length: l.declared_length,
                lanes: l
                    .lane_widths
                    .iter()
                    .map(|&w| LaneDoc {
                        width: w,
                        max_speed: l.free_flow_speed,
                    })
                    .collect(),
            })
            .collect();
        let intersections = self
            .intersections
            .iter()
            .enumerate()
            .map(|(k, inter)| {
                let mut roads: Vec<String> = self
                    .links
                    .iter()
                    .filter(|l| l.from == k || l.to == k)
                    .map(|l| l.id.clone())
                    .collect();
                roads.dedup();
                IntersectionDoc {
                    id: inter.id.clone(),
                    point: PointDoc {
                        x: inter.position.x,
                        y: inter.position.y,
                    },
                    roads,
                    road_links: inter
                        .road_links
                        .iter()
                        .map(|rl| RoadLinkDoc {
                            kind: rl.turn.as_cityflow().to_string(),
                            start_road: self.links[rl.from_link].id.clone(),
                            end_road: self.links[rl.to_link].id.clone(),
                            lane_links: rl
                                .lane_links
                                .iter()
                                .map(|&(a, b)| LaneLinkDoc {
                                    start_lane_index: a,
                                    end_lane_index: b,
                                })
                                .collect(),
                        })
                        .collect(),
                    traffic_light: inter.signalized.then(|| TrafficLightDoc {
                        light_phases: inter
                            .phases
                            .iter()
                            .map(|p| LightPhaseDoc {
                                time: 30.0,
                                available_road_links: p.road_links.clone(),
                            })
                            .collect(),
                    }),
                    is_virtual: !inter.signalized,
                }
            })
            .collect();
        RoadnetDoc {
            intersections,
            roads,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("roadnet document serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleAttrs {
    pub length: f64,
    pub max_speed: f64,
}

/// Uniform vehicle stream along a fixed route.
///
/// Vehicles spawn at `start_time + k * headway_interval` for every `k >= 0`
/// whose spawn time lies in the half-open window `[start_time, end_time)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub route: Vec<String>,
    pub start_time: f64,
    pub end_time: f64,
    pub headway_interval: f64,
    pub vehicle: VehicleAttrs,
}

impl FlowSpec {
    /// Spawn times strictly before `horizon`.
    pub fn spawn_times(&self, horizon: f64) -> impl Iterator<Item = f64> + '_ {
        let stop = self.end_time.min(horizon);
        (0u64..)
            .map(move |k| self.start_time + k as f64 * self.headway_interval)
            .take_while(move |&t| t < stop)
    }

    pub fn spawn_count(&self, horizon: f64) -> usize {
        self.spawn_times(horizon).count()
    }
}

pub fn flows_to_json(flows: &[FlowSpec]) -> String {
    let docs: Vec<FlowDoc> = flows
        .iter()
        .map(|f| FlowDoc {
            vehicle: VehicleDoc {
                length: f.vehicle.length,
                max_speed: f.vehicle.max_speed,
            },
            route: f.route.clone(),
            interval: f.headway_interval,
            start_time: f.start_time,
            end_time: f.end_time,
        })
        .collect();
    serde_json::to_string_pretty(&docs).expect("flow document serializes")
}

pub fn parse_roadnet(bytes: &[u8]) -> Result<RoadNetwork, RoadnetError> {
    let doc: RoadnetDoc = serde_json::from_slice(bytes)?;
    RoadNetwork::from_doc(&doc)
}

pub fn parse_flow(bytes: &[u8], net: &RoadNetwork) -> Result<Vec<FlowSpec>, RoadnetError> {
    let docs: Vec<FlowDoc> = serde_json::from_slice(bytes)?;
    flows_from_docs(&docs, net)
}

pub fn flows_from_docs(docs: &[FlowDoc], net: &RoadNetwork) -> Result<Vec<FlowSpec>, RoadnetError> {
    docs.iter()
        .enumerate()
        .map(|(index, d)| {
            let flow = FlowSpec {
                route: d.route.clone(),
                start_time: d.start_time,
                end_time: d.end_time,
                headway_interval: d.interval,
                vehicle: VehicleAttrs {
                    length: d.vehicle.length,
                    max_speed: d.vehicle.max_speed,
                },
            };
            validate_flow(&flow, net).map_err(|reason| RoadnetError::InvalidFlow { index, reason })?;
            Ok(flow)
        })
        .collect()
}

fn validate_flow(flow: &FlowSpec, net: &RoadNetwork) -> Result<(), String> {
    let finite = [flow.start_time, flow.end_time, flow.headway_interval];
    if finite.iter().any(|v| !v.is_finite()) {
        return Err("non-finite timing".into());
    }
    if flow.start_time > flow.end_time {
        return Err(format!(
            "start_time {} exceeds end_time {}",
            flow.start_time, flow.end_time
        ));
    }
    if flow.headway_interval <= 0.0 {
        return Err("headway interval must be positive".into());
    }
    if !(flow.vehicle.max_speed > 0.0 && flow.vehicle.length > 0.0) {
        return Err("vehicle length and max speed must be positive".into());
    }
    if flow.route.is_empty() {
        return Err("empty route".into());
    }
    let links = flow
        .route
        .iter()
        .map(|id| net.link_index(id).ok_or_else(|| format!("unknown link {id}")))
        .collect::<Result<Vec<_>, _>>()?;
    for pair in links.windows(2) {
        let (a, b) = (&net.links[pair[0]], &net.links[pair[1]]);
        let connected = a.to == b.from
            && net.intersections[a.to]
                .road_links
                .iter()
                .any(|rl| rl.from_link == pair[0] && rl.to_link == pair[1] && !rl.lane_links.is_empty());
        if !connected {
            return Err(format!("links {} and {} are not adjacent", a.id, b.id));
        }
    }
    Ok(())
}

impl RoadNetwork {
    pub fn from_doc(doc: &RoadnetDoc) -> Result<Self, RoadnetError> {
        let mut intersection_index = HashMap::new();
        for (k, i) in doc.intersections.iter().enumerate() {
            if intersection_index.insert(i.id.clone(), k).is_some() {
                return Err(RoadnetError::InvalidIntersection {
                    id: i.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
        }
        if !doc.intersections.iter().any(|i| !i.is_virtual) {
            return Err(RoadnetError::NoSignalized);
        }

        let mut link_index = HashMap::new();
        let mut links = Vec::with_capacity(doc.roads.len());
        for (k, r) in doc.roads.iter().enumerate() {
            if link_index.insert(r.id.clone(), k).is_some() {
                return Err(RoadnetError::InvalidLink {
                    id: r.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
            links.push(build_link(r, &intersection_index)?);
        }

        let mut intersections = Vec::with_capacity(doc.intersections.len());
        for (k, idoc) in doc.intersections.iter().enumerate() {
            intersections.push(build_intersection(k, idoc, &links, &link_index)?);
        }

        let mut net = RoadNetwork {
            intersections,
            links,
            neighbors: Vec::new(),
            intersection_index,
            link_index,
        };
        net.check_phases()?;
        net.neighbors = net.compute_neighbors();
        net.check_connected()?;
        Ok(net)
    }

    fn compute_neighbors(&self) -> Vec<Vec<usize>> {
        let mut neighbors = vec![Vec::new(); self.intersections.len()];
        for l in &self.links {
            if self.intersections[l.from].signalized && self.intersections[l.to].signalized {
                neighbors[l.from].push(l.to);
                neighbors[l.to].push(l.from);
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        neighbors
    }

    fn check_connected(&self) -> Result<(), RoadnetError> {
        let signalized = self.signalized();
        let mut seen = vec![false; self.intersections.len()];
        let mut queue = VecDeque::from([signalized[0]]);
        seen[signalized[0]] = true;
        while let Some(k) = queue.pop_front() {
            for &n in &self.neighbors[k] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if signalized.iter().all(|&k| seen[k]) {
            Ok(())
        } else {
            Err(RoadnetError::Disconnected)
        }
    }

    fn axis_at(&self, link: usize, intersection: usize) -> f64 {
        let l = &self.links[link];
        let here = self.intersections[intersection].position;
        let toward = if l.to == intersection {
            if l.points.len() >= 2 {
                l.points[l.points.len() - 2]
            } else {
                self.intersections[l.from].position
            }
        } else if l.points.len() >= 2 {
            l.points[1]
        } else {
            self.intersections[l.to].position
        };
        geometry::bearing(here, toward)
    }

    fn check_phases(&self) -> Result<(), RoadnetError> {
        for (k, inter) in self.intersections.iter().enumerate() {
            if !inter.signalized {
                continue;
            }
            for phase in &inter.phases {
                let chords: Vec<(Movement, Chord)> = phase
                    .movements
                    .iter()
                    .map(|m| {
                        (
                            *m,
                            Chord {
                                entry_road: m.entering.link,
                                exit_road: m.exiting.link,
                                entry_axis: self.axis_at(m.entering.link, k),
                                exit_axis: self.axis_at(m.exiting.link, k),
                            },
                        )
                    })
                    .collect();
                for (a, (ma, ca)) in chords.iter().enumerate() {
                    for (mb, cb) in &chords[a + 1..] {
                        if geometry::conflicts(ca, cb) {
                            return Err(RoadnetError::ConflictingMovements {
                                intersection: inter.id.clone(),
                                phase: phase.index,
                                first: self.movement_name(ma),
                                second: self.movement_name(mb),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn movement_name(&self, m: &Movement) -> String {
        format!("{}->{}", self.lane_name(m.entering), self.lane_name(m.exiting))
    }
}

impl fmt::Display for RoadNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} intersections ({} signalized), {} links",
            self.intersections.len(),
            self.signalized().len(),
            self.links.len()
        )
    }
}

fn build_link(
    r: &RoadDoc,
    intersection_index: &HashMap<String, usize>,
) -> Result<Link, RoadnetError> {
    let endpoint = |id: &str| {
        intersection_index
            .get(id)
            .copied()
            .ok_or_else(|| RoadnetError::DanglingReference(format!("intersection {id} (road {})", r.id)))
    };
    let from = endpoint(&r.start_intersection)?;
    let to = endpoint(&r.end_intersection)?;
    let invalid = |reason: &str| RoadnetError::InvalidLink {
        id: r.id.clone(),
        reason: reason.into(),
    };
    if from == to {
        return Err(invalid("starts and ends at the same intersection"));
    }
    let points: Vec<Point> = r.points.iter().map(Point::from).collect();
    let length = if points.len() >= 2 {
        geometry::polyline_length(&points)
    } else if let Some(len) = r.length {
        len
    } else {
        return Err(invalid("no polyline points and no declared length"));
    };
    if !(length > 0.0 && length.is_finite()) {
        return Err(invalid("length must be positive"));
    }
    if r.lanes.is_empty() {
        return Err(invalid("no lanes"));
    }
    let speed = r.lanes.iter().map(|l| l.max_speed).fold(f64::NEG_INFINITY, f64::max);
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(invalid("free-flow speed must be positive"));
    }
    Ok(Link {
        id: r.id.clone(),
        from,
        to,
        length,
        free_flow_speed: speed,
        lane_count: r.lanes.len(),
        points,
        declared_length: r.length,
        lane_widths: r.lanes.iter().map(|l| l.width).collect(),
    })
}

fn build_intersection(
    k: usize,
    idoc: &IntersectionDoc,
    links: &[Link],
    link_index: &HashMap<String, usize>,
) -> Result<Intersection, RoadnetError> {
    for road in &idoc.roads {
        if !link_index.contains_key(road) {
            return Err(RoadnetError::DanglingReference(format!(
                "road {road} (intersection {})",
                idoc.id
            )));
        }
    }
    let invalid = |reason: String| RoadnetError::InvalidIntersection {
        id: idoc.id.clone(),
        reason,
    };

    let mut road_links = Vec::with_capacity(idoc.road_links.len());
    for rl in &idoc.road_links {
        let resolve = |id: &str| {
            link_index
                .get(id)
                .copied()
                .ok_or_else(|| RoadnetError::DanglingReference(format!("road {id} (intersection {})", idoc.id)))
        };
        let from_link = resolve(&rl.start_road)?;
        let to_link = resolve(&rl.end_road)?;
        if links[from_link].to != k {
            return Err(invalid(format!("road link starts on {} which does not end here", rl.start_road)));
        }
        if links[to_link].from != k {
            return Err(invalid(format!("road link ends on {} which does not start here", rl.end_road)));
        }
        for ll in &rl.lane_links {
            if ll.start_lane_index >= links[from_link].lane_count {
                return Err(RoadnetError::DanglingReference(format!(
                    "lane {}_{}",
                    rl.start_road, ll.start_lane_index
                )));
            }
            if ll.end_lane_index >= links[to_link].lane_count {
                return Err(RoadnetError::DanglingReference(format!(
                    "lane {}_{}",
                    rl.end_road, ll.end_lane_index
                )));
            }
        }
        road_links.push(RoadLink {
            turn: Turn::from_cityflow(&rl.kind),
            from_link,
            to_link,
            lane_links: rl
                .lane_links
                .iter()
                .map(|ll| (ll.start_lane_index, ll.end_lane_index))
                .collect(),
        });
    }

    let signalized = !idoc.is_virtual;
    let mut phases = Vec::new();
    if signalized {
        let declared = idoc
            .traffic_light
            .as_ref()
            .map(|t| t.light_phases.as_slice())
            .unwrap_or(&[]);
        for (index, lp) in declared.iter().enumerate() {
            let mut movements = Vec::new();
            for &rl_idx in &lp.available_road_links {
                let rl = road_links.get(rl_idx).ok_or_else(|| {
                    RoadnetError::DanglingReference(format!(
                        "road link index {rl_idx} (intersection {}, phase {index})",
                        idoc.id
                    ))
                })?;
                if rl.turn != Turn::Right {
                    movements.extend(rl.movements());
                }
            }
            phases.push(Phase {
                index,
                movements,
                road_links: lp.available_road_links.clone(),
            });
        }
        if phases.is_empty() {
            return Err(invalid("signalized intersection declares no phases".into()));
        }
    }

    let free_movements = road_links
        .iter()
        .filter(|rl| rl.turn == Turn::Right)
        .flat_map(|rl| rl.movements())
        .collect();

    let lanes_of = |pred: &dyn Fn(&Link) -> bool| -> Vec<LaneRef> {
        links
            .iter()
            .enumerate()
            .filter(|(_, l)| pred(l))
            .flat_map(|(li, l)| (0..l.lane_count).map(move |lane| LaneRef { link: li, lane }))
            .collect()
    };
    let entering_lanes = lanes_of(&|l: &Link| l.to == k);
    let exiting_lanes = lanes_of(&|l: &Link| l.from == k);

    Ok(Intersection {
        id: idoc.id.clone(),
        position: Point::from(&idoc.point),
        entering_lanes,
        exiting_lanes,
        road_links,
        phases,
        free_movements,
        signalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = include_str!("../../tests/fixtures/two_intersections.roadnet.json");

    #[test]
    fn sample_document_builds_expected_network() {
        let net = parse_roadnet(TWO_NODE.as_bytes()).unwrap();
        assert_eq!(net.signalized().len(), 2);
        let map = net.neighbor_map();
        assert_eq!(map["A"], vec!["B".to_string()]);
        assert_eq!(map["B"], vec!["A".to_string()]);
        let ab = &net.links[net.link_index("A_B").unwrap()];
        assert!((ab.length - 300.0).abs() < 1e-12);
        assert_eq!(ab.lane_count, 1);
    }

    #[test]
    fn entering_and_exiting_lanes_are_disjoint() {
        let net = parse_roadnet(TWO_NODE.as_bytes()).unwrap();
        for inter in &net.intersections {
            for l in &inter.entering_lanes {
                assert!(!inter.exiting_lanes.contains(l));
            }
        }
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = parse_roadnet(b"{\n  \"intersections\": [,]\n}").unwrap_err();
        match err {
            RoadnetError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_geometry_is_rejected() {
        let doc = TWO_NODE.replace("\"points\"", "\"ignored_points\"");
        let err = parse_roadnet(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, RoadnetError::InvalidLink { .. }), "{err}");
    }

    #[test]
    fn spawn_window_is_half_open() {
        let flow = FlowSpec {
            route: vec!["x".into()],
            start_time: 0.0,
            end_time: 300.0,
            headway_interval: 1.0,
            vehicle: VehicleAttrs {
                length: 5.0,
                max_speed: 11.11,
            },
        };
        assert_eq!(flow.spawn_count(f64::INFINITY), 300);
        assert_eq!(flow.spawn_count(100.0), 100);
        assert_eq!(flow.spawn_count(0.5), 1);
    }
}
