use adaptive_bc::graph::fixtures;
use adaptive_bc::graph::Graph;
use adaptive_bc::oracle::{brandes_exact, brute_force_betweenness, enumerate_shortest_paths};

#[test]
fn brandes_matches_brute_force_on_random_graphs() {
    let mut checked = 0;
    for (i, p) in [0.1, 0.3, 0.6].into_iter().cycle().take(500).enumerate() {
        let n = 2 + i % 49;
        let g = fixtures::erdos_renyi(n, p, i as u64);
        let a = brandes_exact(&g);
        let b = brute_force_betweenness(&g).unwrap();
        let diff = a.max_abs_diff(&b.scores);
        assert!(diff <= 1e-12, "graph {i}: n={n} p={p} diff={diff}");
        checked += 1;
    }
    assert_eq!(checked, 500);
}

#[test]
fn analytic_values() {
    let p4 = brandes_exact(&fixtures::path(4)).scores;
    assert_eq!(p4[0], 0.0);
    assert_eq!(p4[3], 0.0);
    assert!((p4[1] - 1.0 / 3.0).abs() < 1e-15 && (p4[2] - 1.0 / 3.0).abs() < 1e-15);
    let s5 = brandes_exact(&fixtures::star(5)).scores;
    assert!((s5[0] - 0.6).abs() < 1e-15);
    assert!(s5[1..].iter().all(|&x| x == 0.0));
}

/// Scores recomputed from explicit path enumeration: each ordered pair
/// contributes, for every vertex, the fraction of its shortest paths that
/// pass through it.
fn enumerated_betweenness(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let mut b = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let paths = enumerate_shortest_paths(g, s, t).unwrap();
            if paths.is_empty() {
                continue;
            }
            for p in &paths {
                for &v in &p[1..p.len() - 1] {
                    b[v] += 1.0 / paths.len() as f64;
                }
            }
        }
    }
    let norm = (n * (n - 1)) as f64;
    b.iter().map(|x| x / norm).collect()
}

#[test]
fn sigma_counts_agree_with_enumeration() {
    let mut graphs = vec![
        fixtures::cycle(4),
        fixtures::cycle(7),
        fixtures::grid(3, 4),
        fixtures::two_parallel_paths(),
    ];
    graphs.extend((0..30).map(|i| fixtures::erdos_renyi(8 + i % 7, 0.35, 1000 + i as u64)));
    for g in &graphs {
        let e = enumerated_betweenness(g);
        let b = brandes_exact(g);
        assert!(b.max_abs_diff(&e) < 1e-12);
    }
}

#[test]
fn scores_sum_to_mean_internal_vertex_count() {
    for seed in 0..20 {
        let g = fixtures::erdos_renyi(25, 0.2, seed);
        let b = brandes_exact(&g);
        let n = g.n();
        let mut internal = 0.0;
        for s in 0..n {
            let d = adaptive_bc::graph::bfs(&g, s).dist;
            for (t, &dt) in d.iter().enumerate() {
                if t != s && dt != adaptive_bc::graph::UNREACHED {
                    internal += (dt - 1) as f64;
                }
            }
        }
        let total: f64 = b.scores.iter().sum();
        assert!((total - internal / (n * (n - 1)) as f64).abs() < 1e-12);
        assert!(b.scores.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
