use predfix::datagen::{
    caching_instance, facility_instance, generate, revenue_instance, revenue_raw, tsp_arc,
    tsp_instance, tsp_raw, tsp_subtour_rows, EnergyParams, Family, GeneratorSpec, Installment,
    RoutePath, RoutingNetwork, TemporalProcess,
};
use predfix::milp::{
    enumerate_solve, solve_exact, MilpInstance, OracleOptions, RowSense, SolveStatus, FEAS_TOL,
};
use predfix::select::{reduce_and_solve, score_and_select, Backend};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent oracle for pure-binary instances: every assignment in turn,
/// keeping the first strict improvement.
fn brute_force(inst: &MilpInstance) -> Option<(f64, Vec<f64>)> {
    assert_eq!(inst.num_continuous(), 0);
    let n = inst.num_vars();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u64..(1 << n) {
        // bit n−1−j carries z_j so masks run in lexicographic order
        let z: Vec<f64> = (0..n).map(|j| (mask >> (n - 1 - j) & 1) as f64).collect();
        if inst.max_violation(&z).unwrap() > FEAS_TOL {
            continue;
        }
        let v = inst.objective(&z).unwrap();
        if best
            .as_ref()
            .is_none_or(|(b, _)| v < b - 1e-9 * b.abs().max(1.0))
        {
            best = Some((v, z));
        }
    }
    best
}

fn solve(inst: &MilpInstance) -> (f64, Vec<f64>) {
    let label = enumerate_solve(inst, 22).unwrap();
    assert_eq!(label.status, SolveStatus::Optimal);
    (label.objective, label.z)
}

fn path(edges: &[usize], cost: f64) -> RoutePath {
    RoutePath {
        edges: edges.to_vec(),
        cost,
    }
}

#[test]
fn routing_single_path_is_forced() {
    let net = RoutingNetwork {
        num_edges: 2,
        base_capacity: vec![5.0, 5.0],
        installments: vec![Installment {
            cost: 1.0,
            capacity: 3.0,
        }],
        commodities: vec![vec![path(&[0], 2.0)]],
    };
    let inst = net.instance(&[1.0]).unwrap();
    // p must be 1; z = 0 everywhere violates the equality pair
    assert!(!inst.check_feasibility(&[0.0, 0.0, 0.0], FEAS_TOL).unwrap());
    let (obj, z) = solve(&inst);
    assert_eq!(z, vec![1.0, 0.0, 0.0]);
    assert_eq!(obj, 2.0);
}

#[test]
fn routing_edge_off_every_path_has_no_path_terms() {
    let net = RoutingNetwork {
        num_edges: 2,
        base_capacity: vec![1.0, 1.0],
        installments: vec![Installment {
            cost: 1.0,
            capacity: 3.0,
        }],
        commodities: vec![vec![path(&[0], 2.0)]],
    };
    let raw = net.raw(&[4.0]).unwrap();
    let row = raw.rows.last().unwrap();
    assert_eq!(row.terms, vec![(2, -3.0)]);
    // edge 0 needs its installment; edge 1 never does
    let (_, z) = solve(&net.instance(&[4.0]).unwrap());
    assert_eq!(z, vec![1.0, 1.0, 0.0]);
}

#[test]
fn routing_triangle_matches_brute_force() {
    // nodes a, b, c; edges ab=0, bc=1, ac=2
    let net = RoutingNetwork {
        num_edges: 3,
        base_capacity: vec![1.0, 1.0, 2.0],
        installments: vec![Installment {
            cost: 1.5,
            capacity: 2.0,
        }],
        commodities: vec![
            vec![path(&[2], 1.0), path(&[0, 1], 2.0)],
            vec![path(&[0], 1.0), path(&[2, 1], 2.0)],
        ],
    };
    for demand in [[1.0, 1.0], [1.5, 0.8], [2.0, 2.0], [0.3, 2.5]] {
        let inst = net.instance(&demand).unwrap();
        let (obj, z) = solve(&inst);
        let (bf_obj, bf_z) = brute_force(&inst).unwrap();
        assert!((obj - bf_obj).abs() < 1e-9, "{demand:?}");
        assert_eq!(z, bf_z);
    }
}

#[test]
fn facility_single_site_takes_every_client() {
    let cost = vec![vec![1.0], vec![2.0], vec![0.5]];
    let inst = facility_instance(&cost, &[1.0, 1.0, 1.0], &[7.0]).unwrap();
    let (obj, z) = solve(&inst);
    assert_eq!(z, vec![1.0, 1.0, 1.0, 1.0]);
    assert!((obj - 10.5).abs() < 1e-12);
}

#[test]
fn free_facilities_serve_each_client_from_its_cheapest_site() {
    let cost = vec![vec![3.0, 1.0, 2.0], vec![0.5, 4.0, 1.0]];
    let demand = [2.0, 1.0];
    let inst = facility_instance(&cost, &demand, &[0.0, 0.0, 0.0]).unwrap();
    let (obj, z) = solve(&inst);
    let (bf_obj, _) = brute_force(&inst).unwrap();
    assert!((obj - bf_obj).abs() < 1e-12);
    assert!((obj - (2.0 * 1.0 + 1.0 * 0.5)).abs() < 1e-12);
    assert_eq!(&z[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn facility_demand_stays_nonnegative() {
    let spec = GeneratorSpec {
        train_series: 3,
        val_series: 0,
        test_series: 0,
        timesteps: 60,
        ..GeneratorSpec::for_family(Family::FacilityLoc)
    };
    let data = generate(&spec).unwrap();
    for ser in &data.train {
        for inst in &ser.instances {
            // assignment costs are distance × demand
            assert!(inst.c().iter().all(|c| *c >= 0.0));
        }
    }
}

#[test]
fn tsp_row_counts_follow_subset_counts() {
    let cost = vec![vec![0.0; 4]; 4];
    let raw = tsp_raw(&cost).unwrap();
    assert_eq!(raw.num_equalities(), 8);
    assert_eq!(raw.rows.len() - 8, 6 + 4);
    assert_eq!(tsp_subtour_rows(4), 10);
    for n in 3..=7 {
        let binom = |k: usize| (1..=k).fold(1usize, |acc, i| acc * (n + 1 - i) / i);
        let expected: usize = (2..n).map(binom).sum();
        assert_eq!(tsp_subtour_rows(n), expected);
        let raw = tsp_raw(&vec![vec![1.0; n]; n]).unwrap();
        assert_eq!(raw.rows.len(), 2 * n + expected);
        assert_eq!(raw.c.len(), n * (n - 1));
    }
}

#[test]
fn three_city_tour_costs_the_perimeter() {
    let pts = [(0.0f64, 0.0f64), (3.0, 0.0), (0.0, 4.0)];
    let cost: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| pts.iter().map(|q| (p.0 - q.0).hypot(p.1 - q.1)).collect())
        .collect();
    let inst = tsp_instance(&cost).unwrap();
    let (obj, z) = solve(&inst);
    assert!((obj - 12.0).abs() < 1e-12);
    // both directions tie; the lexicographically smaller assignment wins,
    // which leaves arc 0 → 1 unused and takes 0 → 2
    assert_eq!(z[tsp_arc(3, 0, 1)], 0.0);
    assert_eq!(z[tsp_arc(3, 0, 2)], 1.0);
    assert_eq!(brute_force(&inst).unwrap().1, z);
}

#[test]
fn four_city_tour_matches_brute_force() {
    let cost = vec![
        vec![0.0, 2.0, 9.0, 10.0],
        vec![1.0, 0.0, 6.0, 4.0],
        vec![15.0, 7.0, 0.0, 8.0],
        vec![6.0, 3.0, 12.0, 0.0],
    ];
    let inst = tsp_instance(&cost).unwrap();
    let (obj, z) = solve(&inst);
    let (bf_obj, bf_z) = brute_force(&inst).unwrap();
    assert!((obj - bf_obj).abs() < 1e-12);
    assert_eq!(z, bf_z);
    assert_eq!(z.iter().sum::<f64>(), 4.0);
}

#[test]
fn revenue_single_row_is_a_knapsack() {
    let raw = revenue_raw(&[vec![2.0, 3.0, 4.0]], &[3.0, 4.0, 5.0], &[5.0]).unwrap();
    assert_eq!(raw.rows.len(), 1);
    assert_eq!(raw.rows[0].sense, RowSense::Le);
    let inst = raw.to_standard_form().unwrap();
    let (obj, z) = solve(&inst);
    let (bf_obj, bf_z) = brute_force(&inst).unwrap();
    assert_eq!(obj, bf_obj);
    assert_eq!(z, bf_z);
    assert_eq!(obj, -7.0);
}

#[test]
fn revenue_with_ample_capacity_ships_everything() {
    let a = vec![vec![0.5, 0.9, 0.2], vec![0.1, 0.7, 0.8]];
    let inst = revenue_instance(&a, &[1.0, 2.0, 3.0], &[1e6, 1e6]).unwrap();
    assert_eq!(solve(&inst).1, vec![1.0, 1.0, 1.0]);
}

#[test]
fn energy_single_prosumer_without_batteries_is_forced() {
    let params = EnergyParams {
        loss: vec![vec![0.5]],
        relief: vec![vec![]],
        battery_cost: vec![],
        transfer_limit: 1.0,
    };
    let inst = params.instance(&[2.0], &[1.0]).unwrap();
    let (obj, z) = solve(&inst);
    assert!((z[0] - 1.0).abs() < 1e-9);
    assert!((obj + 2.0).abs() < 1e-9);
}

#[test]
fn free_battery_never_hurts() {
    let params = EnergyParams {
        loss: vec![vec![0.9, 0.2], vec![0.4, 0.6]],
        relief: vec![vec![0.5], vec![0.3]],
        battery_cost: vec![0.0],
        transfer_limit: 1.0,
    };
    let inst = params.instance(&[3.0, 1.0], &[0.4, 0.5]).unwrap();
    let opts = OracleOptions::default();
    let fixed = |v: f64| {
        // fix the only binary to v and solve the continuous residual
        let alpha = [if v == 1.0 { 1e3 } else { 1.0 }];
        let beta = [if v == 1.0 { 1.0 } else { 1e3 }];
        let sel = score_and_select(&alpha, &beta, 0.0, 1.0).unwrap();
        reduce_and_solve(&inst, &sel, &Backend::Oracle(opts)).unwrap()
    };
    let (open, closed) = (fixed(1.0), fixed(0.0));
    assert_eq!(open.status, SolveStatus::Optimal);
    assert!(closed.status != SolveStatus::Optimal || open.objective <= closed.objective + 1e-9);
    let best = solve_exact(&inst, &opts).unwrap();
    assert!((best.objective - open.objective).abs() < 1e-9);
}

#[test]
fn caching_with_room_for_everything_caches_everything() {
    let q = [3.0, 1.0, 7.0, 2.0];
    let inst = caching_instance(&[5.0, 1.0, 2.0, 0.5], &q, q.iter().sum()).unwrap();
    assert_eq!(solve(&inst).1, vec![1.0; 4]);
}

#[test]
fn caching_with_room_for_one_item_picks_the_best_fit() {
    let q = [6.0, 4.0, 9.0, 5.0];
    let p = [10.0, 7.0, 30.0, 9.0];
    let inst = caching_instance(&p, &q, 6.5).unwrap();
    let (obj, z) = solve(&inst);
    let (bf_obj, bf_z) = brute_force(&inst).unwrap();
    assert_eq!((obj, &z), (bf_obj, &bf_z));
    assert_eq!(z, vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn constant_popularity_gives_constant_labels() {
    let mut spec = GeneratorSpec {
        train_series: 2,
        val_series: 0,
        test_series: 0,
        timesteps: 6,
        ..GeneratorSpec::for_family(Family::Caching)
    };
    spec.caching.swap_prob = 0.0;
    let data = generate(&spec).unwrap();
    for ser in &data.train {
        let labels: Vec<Vec<f64>> = ser.instances.iter().map(|i| solve(i).1).collect();
        assert!(labels.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn popularity_process_is_seeded() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = TemporalProcess::popularity((1..=8).collect(), 1.0, 100.0, 0.3);
        (0..20).for_each(|t| p.advance(t, &mut rng));
        p.state().to_vec()
    };
    assert_eq!(run(), run());
}
