//! Arterial and grid scenario generator emitting the CityFlow dialect.
//!
//! Nodes are named `intersection_{x}_{y}`; the signalized block occupies
//! `1..=cols` by `1..=rows` and is ringed by virtual boundary nodes. Roads are
//! named `road_{x}_{y}_{heading}` after their start node and heading
//! (0 east, 1 north, 2 west, 3 south). Every road carries one lane group per
//! movement, ordered left, straight, right.

use serde::{Deserialize, Serialize};

use super::cityflow::{
    FlowDoc, IntersectionDoc, LaneDoc, LaneLinkDoc, LightPhaseDoc, PointDoc, RoadDoc, RoadLinkDoc,
    RoadnetDoc, TrafficLightDoc, VehicleDoc,
};
use super::{flows_from_docs, FlowSpec, RoadNetwork, RoadnetError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SyntheticKind {
    Arterial { length: usize },
    Grid { rows: usize, cols: usize, two_way: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    #[serde(default = "defaults::link_length")]
    pub link_length: f64,
    #[serde(default = "defaults::speed")]
    pub free_flow_speed: f64,
    /// Lanes per movement group.
    #[serde(default = "defaults::lanes")]
    pub lanes: usize,
    /// Network-wide arrivals per 300 s, split evenly over the through routes.
    #[serde(default = "defaults::flow_rate")]
    pub flow_rate: f64,
    /// Flows run over `[0, duration)`.
    #[serde(default = "defaults::duration")]
    pub duration: f64,
}

mod defaults {
    pub fn link_length() -> f64 {
        300.0
    }
    pub fn speed() -> f64 {
        11.11
    }
    pub fn lanes() -> usize {
        1
    }
    pub fn flow_rate() -> f64 {
        300.0
    }
    pub fn duration() -> f64 {
        3600.0
    }
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind) -> Self {
        SyntheticSpec {
            kind,
            link_length: defaults::link_length(),
            free_flow_speed: defaults::speed(),
            lanes: defaults::lanes(),
            flow_rate: defaults::flow_rate(),
            duration: defaults::duration(),
        }
    }

    pub fn arterial(length: usize) -> Self {
        Self::new(SyntheticKind::Arterial { length })
    }

    pub fn grid(rows: usize, cols: usize, two_way: bool) -> Self {
        Self::new(SyntheticKind::Grid { rows, cols, two_way })
    }

    pub fn label(&self) -> String {
        match self.kind {
            SyntheticKind::Arterial { length } => format!("arterial_1x{length}"),
            SyntheticKind::Grid { rows, cols, two_way } => {
                format!("grid_{rows}x{cols}_{}", if two_way { "bi" } else { "uni" })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub network: RoadNetwork,
    pub flows: Vec<FlowSpec>,
}

const LEFT: usize = 0;
const STRAIGHT: usize = 1;
const RIGHT: usize = 2;

fn node_id(x: usize, y: usize) -> String {
    format!("intersection_{x}_{y}")
}

fn road_id(x: usize, y: usize, heading: usize) -> String {
    format!("road_{x}_{y}_{heading}")
}

fn step(x: usize, y: usize, heading: usize) -> Option<(usize, usize)> {
    match heading {
        0 => Some((x + 1, y)),
        1 => Some((x, y + 1)),
        2 => x.checked_sub(1).map(|x| (x, y)),
        _ => y.checked_sub(1).map(|y| (x, y)),
    }
}

fn turn_between(in_heading: usize, out_heading: usize) -> Option<usize> {
    match (out_heading + 4 - in_heading) % 4 {
        0 => Some(STRAIGHT),
        1 => Some(LEFT),
        3 => Some(RIGHT),
        _ => None,
    }
}

struct Layout {
    rows: usize,
    cols: usize,
    two_way: bool,
}

impl Layout {
    fn is_node(&self, x: usize, y: usize) -> bool {
        let inner_x = (1..=self.cols).contains(&x);
        let inner_y = (1..=self.rows).contains(&y);
        x <= self.cols + 1 && y <= self.rows + 1 && (inner_x || inner_y)
    }

    fn is_signalized(&self, x: usize, y: usize) -> bool {
        (1..=self.cols).contains(&x) && (1..=self.rows).contains(&y)
    }

    fn heading_allowed(&self, heading: usize) -> bool {
        self.two_way || heading == 0 || heading == 1
    }

    /// Road from `(x, y)` along `heading`, if both ends exist and one is signalized.
    fn road(&self, x: usize, y: usize, heading: usize) -> Option<(usize, usize)> {
        if !self.heading_allowed(heading) || !self.is_node(x, y) {
            return None;
        }
        let (nx, ny) = step(x, y, heading)?;
        (self.is_node(nx, ny) && (self.is_signalized(x, y) || self.is_signalized(nx, ny)))
            .then_some((nx, ny))
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticScenario, RoadnetError> {
    let layout = match spec.kind {
        SyntheticKind::Arterial { length } => {
            if length < 2 {
                return Err(RoadnetError::Argument(format!(
                    "arterial needs at least 2 intersections, got {length}"
                )));
            }
            Layout {
                rows: 1,
                cols: length,
                two_way: true,
            }
        }
        SyntheticKind::Grid { rows, cols, two_way } => {
            if rows < 2 || cols < 2 {
                return Err(RoadnetError::Argument(format!(
                    "grid needs at least 2x2 intersections, got {rows}x{cols}"
                )));
            }
            Layout { rows, cols, two_way }
        }
    };
    if spec.lanes == 0 {
        return Err(RoadnetError::Argument("lanes must be positive".into()));
    }
    for (name, v) in [
        ("link_length", spec.link_length),
        ("free_flow_speed", spec.free_flow_speed),
        ("flow_rate", spec.flow_rate),
        ("duration", spec.duration),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(RoadnetError::Argument(format!("{name} must be positive, got {v}")));
        }
    }

    let doc = build_roadnet(&layout, spec);
    let network = RoadNetwork::from_doc(&doc)?;

    let routes = through_routes(&layout);
    let headway = 300.0 * routes.len() as f64 / spec.flow_rate;
    let flow_docs: Vec<FlowDoc> = routes
        .into_iter()
        .map(|route| FlowDoc {
            vehicle: VehicleDoc {
                length: 5.0,
                max_speed: spec.free_flow_speed,
            },
            route,
            interval: headway,
            start_time: 0.0,
            end_time: spec.duration,
        })
        .collect();
    let flows = flows_from_docs(&flow_docs, &network)?;
    Ok(SyntheticScenario { network, flows })
}

fn build_roadnet(layout: &Layout, spec: &SyntheticSpec) -> RoadnetDoc {
    let len = spec.link_length;
    let lanes_per_road = 3 * spec.lanes;
    let pos = |x: usize, y: usize| PointDoc {
        x: x as f64 * len,
        y: y as f64 * len,
    };

    let mut roads = Vec::new();
    for y in 0..=layout.rows + 1 {
        for x in 0..=layout.cols + 1 {
            for heading in 0..4 {
                if let Some((nx, ny)) = layout.road(x, y, heading) {
                    roads.push(RoadDoc {
                        id: road_id(x, y, heading),
                        start_intersection: node_id(x, y),
                        end_intersection: node_id(nx, ny),
                        points: vec![pos(x, y), pos(nx, ny)],
                        length: None,
                        lanes: (0..lanes_per_road)
                            .map(|_| LaneDoc {
                                width: 3.0,
                                max_speed: spec.free_flow_speed,
                            })
                            .collect(),
                    });
                }
            }
        }
    }

    let mut intersections = Vec::new();
    for y in 0..=layout.rows + 1 {
        for x in 0..=layout.cols + 1 {
            if !layout.is_node(x, y) {
                continue;
            }
            let signalized = layout.is_signalized(x, y);
            let mut touching = Vec::new();
            // (road id, heading) of roads arriving here and leaving from here.
            let mut incoming = Vec::new();
            let mut outgoing = Vec::new();
            for heading in 0..4 {
                if layout.road(x, y, heading).is_some() {
                    touching.push(road_id(x, y, heading));
                    outgoing.push((road_id(x, y, heading), heading));
                }
                let back = (heading + 2) % 4;
                if let Some((px, py)) = step(x, y, back) {
                    if layout.road(px, py, heading) == Some((x, y)) {
                        touching.push(road_id(px, py, heading));
                        incoming.push((road_id(px, py, heading), heading));
                    }
                }
            }

            let mut road_links = Vec::new();
            // (in heading, turn) -> road link index
            let mut link_of = std::collections::HashMap::new();
            if signalized {
                for (in_id, in_h) in &incoming {
                    for (out_id, out_h) in &outgoing {
                        let Some(turn) = turn_between(*in_h, *out_h) else {
                            continue;
                        };
                        link_of.insert((*in_h, turn), road_links.len());
                        road_links.push(RoadLinkDoc {
                            kind: ["turn_left", "go_straight", "turn_right"][turn].to_string(),
                            start_road: in_id.clone(),
                            end_road: out_id.clone(),
                            lane_links: (turn * spec.lanes..(turn + 1) * spec.lanes)
                                .map(|lane| LaneLinkDoc {
                                    start_lane_index: lane,
                                    end_lane_index: lane,
                                })
                                .collect(),
                        });
                    }
                }
            }

            let template: [&[(usize, usize)]; 8] = [
                &[(0, STRAIGHT), (2, STRAIGHT)],
                &[(1, STRAIGHT), (3, STRAIGHT)],
                &[(0, LEFT), (2, LEFT)],
                &[(1, LEFT), (3, LEFT)],
                &[(0, STRAIGHT), (0, LEFT)],
                &[(2, STRAIGHT), (2, LEFT)],
                &[(1, STRAIGHT), (1, LEFT)],
                &[(3, STRAIGHT), (3, LEFT)],
            ];
            let mut phases: Vec<Vec<usize>> = Vec::new();
            for group in template {
                let mut available: Vec<usize> =
                    group.iter().filter_map(|key| link_of.get(key).copied()).collect();
                available.sort_unstable();
                if !available.is_empty() && !phases.contains(&available) {
                    phases.push(available);
                }
            }

            intersections.push(IntersectionDoc {
                id: node_id(x, y),
                point: pos(x, y),
                roads: touching,
                road_links,
                traffic_light: signalized.then(|| TrafficLightDoc {
                    light_phases: phases
                        .into_iter()
                        .map(|available_road_links| LightPhaseDoc {
                            time: 30.0,
                            available_road_links,
                        })
                        .collect(),
                }),
                is_virtual: !signalized,
            });
        }
    }
    RoadnetDoc {
        intersections,
        roads,
    }
}

fn through_routes(layout: &Layout) -> Vec<Vec<String>> {
    let mut routes = Vec::new();
    for y in 1..=layout.rows {
        routes.push((0..=layout.cols).map(|x| road_id(x, y, 0)).collect());
        if layout.two_way {
            routes.push((1..=layout.cols + 1).rev().map(|x| road_id(x, y, 2)).collect());
        }
    }
    for x in 1..=layout.cols {
        routes.push((0..=layout.rows).map(|y| road_id(x, y, 1)).collect());
        if layout.two_way {
            routes.push((1..=layout.rows + 1).rev().map(|y| road_id(x, y, 3)).collect());
        }
    }
    routes
}
