//! Serde mirror of the CityFlow roadnet and flow documents.
//!
//! Only the fields this crate consumes are modelled; serde ignores the rest.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDoc {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadnetDoc {
    pub intersections: Vec<IntersectionDoc>,
    pub roads: Vec<RoadDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntersectionDoc {
    pub id: String,
    pub point: PointDoc,
    #[serde(default)]
    pub roads: Vec<String>,
    #[serde(default, rename = "roadLinks")]
    pub road_links: Vec<RoadLinkDoc>,
    #[serde(default, rename = "trafficLight", skip_serializing_if = "Option::is_none")]
    pub traffic_light: Option<TrafficLightDoc>,
    #[serde(default, rename = "virtual")]
    pub is_virtual: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadLinkDoc {
    #[serde(rename = "type", default = "default_link_type")]
    pub kind: String,
    #[serde(rename = "startRoad")]
    pub start_road: String,
    #[serde(rename = "endRoad")]
    pub end_road: String,
    #[serde(default, rename = "laneLinks")]
    pub lane_links: Vec<LaneLinkDoc>,
}

fn default_link_type() -> String {
    "go_straight".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaneLinkDoc {
    #[serde(rename = "startLaneIndex")]
    pub start_lane_index: usize,
    #[serde(rename = "endLaneIndex")]
    pub end_lane_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficLightDoc {
    #[serde(default, rename = "lightphases")]
    pub light_phases: Vec<LightPhaseDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LightPhaseDoc {
    #[serde(default)]
    pub time: f64,
    #[serde(default, rename = "availableRoadLinks")]
    pub available_road_links: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadDoc {
    pub id: String,
    #[serde(rename = "startIntersection")]
    pub start_intersection: String,
    #[serde(rename = "endIntersection")]
    pub end_intersection: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointDoc>,
    /// Non-CityFlow extension used when no polyline is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    pub lanes: Vec<LaneDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaneDoc {
    #[serde(default = "default_lane_width")]
    pub width: f64,
    #[serde(rename = "maxSpeed")]
    pub max_speed: f64,
}

fn default_lane_width() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowDoc {
    pub vehicle: VehicleDoc,
    pub route: Vec<String>,
    pub interval: f64,
    #[serde(rename = "startTime")]
    pub start_time: f64,
    #[serde(rename = "endTime")]
    pub end_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleDoc {
    #[serde(default = "default_vehicle_length")]
    pub length: f64,
    #[serde(rename = "maxSpeed")]
    pub max_speed: f64,
}

fn default_vehicle_length() -> f64 {
    5.0
}
