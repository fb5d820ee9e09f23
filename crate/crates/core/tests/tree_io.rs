use emkrylov_core::*;
use proptest::prelude::*;

/// Reorders lines and adds comments and spacing the parser must ignore.
fn scramble(text: &str, seed: u64) -> String {
    let mut lines: Vec<&str> = text.lines().skip(1).collect();
    let n = lines.len();
    for i in (1..n).rev() {
        let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as usize % (i + 1);
        lines.swap(i, j);
    }
    let mut out = String::from("# scrambled copy\nemtree v1\n");
    for line in lines {
        out.push_str("  ");
        out.push_str(&line.replace(' ', "\t "));
        out.push_str("   # trailing\n\n");
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn serialize_parse_round_trip(n in 1usize..40, seed in any::<u64>(), path in any::<bool>()) {
        let mut cfg = GeneratorConfig::new(n, seed);
        if path {
            cfg = cfg.path();
        }
        let tree = generate_synthetic_tree(&cfg).unwrap();
        let text = tree.to_text();
        let parsed = parse_tree(&text).unwrap();
        prop_assert_eq!(&parsed, &tree);
        prop_assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn canonicalization_is_idempotent(n in 1usize..25, seed in any::<u64>()) {
        let tree = generate_synthetic_tree(&GeneratorConfig::new(n, seed)).unwrap();
        let canonical = tree.to_text();
        let once = parse_tree(&scramble(&canonical, seed)).unwrap().to_text();
        prop_assert_eq!(&once, &canonical);
        prop_assert_eq!(parse_tree(&once).unwrap().to_text(), once);
    }

    #[test]
    fn generated_trees_are_spanning(n in 1usize..120, seed in any::<u64>()) {
        let tree = generate_synthetic_tree(&GeneratorConfig::new(n, seed)).unwrap();
        prop_assert_eq!(tree.n_nodes(), n + 1);
        // Union-find: every segment joins two previously separate components.
        let mut parent: Vec<usize> = (0..tree.n_nodes()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for s in tree.segments() {
            let (a, b) = (find(&mut parent, s.node_a), find(&mut parent, s.node_b));
            prop_assert_ne!(a, b);
            parent[a] = b;
        }
        let stats = tree_stats(&tree);
        prop_assert!(stats.l_max >= stats.l_avg);
    }
}

#[test]
fn same_seed_serializes_identically() {
    let a = generate_synthetic_tree(&GeneratorConfig::new(100, 7)).unwrap().to_text();
    let b = generate_synthetic_tree(&GeneratorConfig::new(100, 7)).unwrap().to_text();
    assert_eq!(a, b);
}

#[test]
fn cycle_is_rejected() {
    let text = "emtree v1\n\
        node 0 0 0 interior\nnode 1 1e-5 0 interior\nnode 2 1e-5 1e-5 interior\n\
        seg 0 0 1 1e-5 1e-7 2e-7 1e9\nseg 1 1 2 1e-5 1e-7 2e-7 1e9\nseg 2 2 0 1.4142135623730951e-5 1e-7 2e-7 1e9\n";
    assert!(matches!(parse_tree(text), Err(EmError::Semantic(_))));
}
