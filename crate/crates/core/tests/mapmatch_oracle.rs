mod oracles;

use navsim_core::mapmatch::{lcss_match, lcss_score, lcss_table, MatchConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oracles::{chain_reference, generating_routes, match_grid, random_hits, trace};

#[test]
fn dp_table_equals_chain_reference_on_1000_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 0..1000 {
        let (n, m, hits) = random_hits(&mut rng);
        let got = lcss_table(n, m, |i, j| hits[i][j]);
        assert_eq!(got, chain_reference(&hits, m), "pair {k} ({n}x{m})");
    }
}

#[test]
fn noise_free_traces_recover_the_route_exactly() {
    let net = match_grid();
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, route) in generating_routes(&net, 100, 2).iter().enumerate() {
        let pts = trace(&net, route, 0.0, &mut rng);
        let m = lcss_match(&pts, &net, &cfg).unwrap();
        assert_eq!(&m.edges, route, "trace {k}");
        assert_eq!(m.matched_points, pts.len());
    }
}

#[test]
fn noisy_traces_recover_at_least_95_percent() {
    let net = match_grid();
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let routes = generating_routes(&net, 100, 4);
    // strictly below half the spatial threshold
    let noise = 0.499 * cfg.spatial_threshold;
    let exact = routes
        .iter()
        .filter(|route| {
            let pts = trace(&net, route, noise, &mut rng);
            lcss_match(&pts, &net, &cfg).is_ok_and(|m| &m.edges == *route)
        })
        .count();
    assert!(exact >= 95, "{exact}/100 noisy traces recovered");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matched_route_scores_its_matched_points(seed in any::<u64>()) {
        let net = match_grid();
        let cfg = MatchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let route = &generating_routes(&net, 1, seed)[0];
        let pts = trace(&net, route, 20.0, &mut rng);
        let m = lcss_match(&pts, &net, &cfg).unwrap();
        prop_assert_eq!(lcss_score(&pts, &m.edges, &net, &cfg), m.matched_points);
        // never worse than the generating route
        prop_assert!(m.matched_points >= lcss_score(&pts, route, &net, &cfg));
    }
}
