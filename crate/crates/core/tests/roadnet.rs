use proptest::prelude::*;
use tsc_core::roadnet::{
    flows_to_json, generate_synthetic, parse_flow, parse_roadnet, RoadnetError, SyntheticSpec,
};

const NET: &str = include_str!("fixtures/two_intersections.roadnet.json");
const FLOW: &str = include_str!("fixtures/two_intersections.flow.json");

#[test]
fn sample_roadnet_round_trips() {
    let net = parse_roadnet(NET.as_bytes()).unwrap();
    let again = parse_roadnet(net.to_json().as_bytes()).unwrap();
    assert_eq!(net, again);
}

#[test]
fn sample_flow_round_trips() {
    let net = parse_roadnet(NET.as_bytes()).unwrap();
    let flows = parse_flow(FLOW.as_bytes(), &net).unwrap();
    let again = parse_flow(flows_to_json(&flows).as_bytes(), &net).unwrap();
    assert_eq!(flows, again);
}

#[test]
fn sample_flow_spawns_three_hundred() {
    let net = parse_roadnet(NET.as_bytes()).unwrap();
    let flows = parse_flow(FLOW.as_bytes(), &net).unwrap();
    assert_eq!(flows.len(), 1);
    assert_eq!(flows[0].spawn_count(f64::INFINITY), 300);
}

#[test]
fn sample_network_has_two_signalized_neighbours() {
    let net = parse_roadnet(NET.as_bytes()).unwrap();
    let a = net.intersection_index("A").unwrap();
    let b = net.intersection_index("B").unwrap();
    assert_eq!(net.signalized(), vec![a, b]);
    assert_eq!(net.neighbors(a), &[b]);
    assert_eq!(net.neighbors(b), &[a]);
}

#[test]
fn empty_document_has_no_signalized_intersections() {
    let err = parse_roadnet(include_bytes!("fixtures/invalid_empty.roadnet.json")).unwrap_err();
    assert_eq!(err, RoadnetError::NoSignalized);
    assert_eq!(err.to_string(), "no signalized intersections");
}

#[test]
fn missing_lane_is_named() {
    let err = parse_roadnet(include_bytes!("fixtures/invalid_missing_lane.roadnet.json")).unwrap_err();
    match err {
        RoadnetError::DanglingReference(what) => assert!(what.contains("W_A"), "{what}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn conflicting_phase_is_rejected() {
    let err = parse_roadnet(include_bytes!("fixtures/invalid_conflict.roadnet.json")).unwrap_err();
    assert!(matches!(err, RoadnetError::ConflictingMovements { .. }), "{err}");
}

#[test]
fn reversed_flow_window_is_rejected() {
    let net = parse_roadnet(NET.as_bytes()).unwrap();
    let doc = FLOW.replace("\"startTime\": 0", "\"startTime\": 400");
    let err = parse_flow(doc.as_bytes(), &net).unwrap_err();
    assert!(matches!(err, RoadnetError::InvalidFlow { index: 0, .. }), "{err}");
}

#[test]
fn non_adjacent_route_is_rejected() {
    let net = parse_roadnet(NET.as_bytes()).unwrap();
    let doc = FLOW.replace("\"A_B\",", "");
    let err = parse_flow(doc.as_bytes(), &net).unwrap_err();
    assert!(matches!(err, RoadnetError::InvalidFlow { .. }), "{err}");
}

#[test]
fn shared_routes_stay_separate() {
    let net = parse_roadnet(NET.as_bytes()).unwrap();
    let flows = parse_flow(FLOW.as_bytes(), &net).unwrap();
    let doubled = format!("[{0},{0}]", flows_to_json(&flows).trim().trim_start_matches('[').trim_end_matches(']'));
    let two = parse_flow(doubled.as_bytes(), &net).unwrap();
    assert_eq!(two.len(), 2);
    assert_eq!(two[0], two[1]);
    let total: usize = two.iter().map(|f| f.spawn_count(f64::INFINITY)).sum();
    assert_eq!(total, 600);
}

#[test]
fn arterial_six_is_a_line() {
    let sc = generate_synthetic(&SyntheticSpec::arterial(6)).unwrap();
    let sig = sc.network.signalized();
    assert_eq!(sig.len(), 6);
    let mut degrees: Vec<usize> = sig.iter().map(|&i| sc.network.neighbors(i).len()).collect();
    degrees.sort_unstable();
    assert_eq!(degrees, vec![1, 1, 2, 2, 2, 2]);
    // Uniform headway on every route.
    let h = sc.flows[0].headway_interval;
    assert!(sc.flows.iter().all(|f| f.headway_interval == h));
}

#[test]
fn nonpositive_dimensions_are_argument_errors() {
    assert!(matches!(generate_synthetic(&SyntheticSpec::grid(0, 3, true)), Err(RoadnetError::Argument(_))));
    assert!(matches!(generate_synthetic(&SyntheticSpec::arterial(0)), Err(RoadnetError::Argument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_degrees_and_directions(rows in 2usize..5, cols in 2usize..5, two_way: bool) {
        let sc = generate_synthetic(&SyntheticSpec::grid(rows, cols, two_way)).unwrap();
        let net = &sc.network;
        let sig = net.signalized();
        prop_assert_eq!(sig.len(), rows * cols);

        // Neighbour relation is symmetric and bounded.
        for &i in &sig {
            let ns = net.neighbors(i);
            prop_assert!(ns.len() <= 4);
            for &j in ns {
                prop_assert!(net.neighbors(j).contains(&i));
            }
        }

        if two_way {
            let mut by_degree = [0usize; 5];
            for &i in &sig {
                by_degree[net.neighbors(i).len()] += 1;
            }
            prop_assert_eq!(by_degree[2], 4);
            prop_assert_eq!(by_degree[3], 2 * (rows - 2) + 2 * (cols - 2));
            prop_assert_eq!(by_degree[4], (rows - 2) * (cols - 2));
        } else {
            for l in &net.links {
                let reverse = net.links.iter().any(|m| m.from == l.to && m.to == l.from);
                prop_assert!(!reverse, "link {} has a reverse", l.id);
            }
        }

        let again = parse_roadnet(net.to_json().as_bytes()).unwrap();
        prop_assert_eq!(net, &again);
        let flows = parse_flow(flows_to_json(&sc.flows).as_bytes(), net).unwrap();
        prop_assert_eq!(&flows, &sc.flows);
    }

    #[test]
    fn synthetic_rate_is_network_wide(rate in 60.0f64..900.0) {
        let mut spec = SyntheticSpec::grid(3, 3, true);
        spec.flow_rate = rate;
        let sc = generate_synthetic(&spec).unwrap();
        let per_300: usize = sc.flows.iter().map(|f| f.spawn_count(300.0)).sum();
        // Each route rounds its own count up by at most one vehicle.
        prop_assert!((per_300 as f64 - rate).abs() <= sc.flows.len() as f64);
    }
}
