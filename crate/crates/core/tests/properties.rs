use std::collections::BTreeSet;

use graphcontrol::condition::{cosine_kernel, discretize};
use graphcontrol::graph::{load_dataset_dir, make_fewshot_split, make_split, save_dataset, DatasetBundle, Graph, Topology};
use graphcontrol::nn::{gin_forward, graphcontrol_forward, readout, GinEncoder, GraphControlModel, Params};
use graphcontrol::pretrain::infonce_loss;
use graphcontrol::rng::Rng64;
use graphcontrol::sampler::{induce_subgraph, sample_subgraph, SamplerParams};
use graphcontrol::spectral::positional_embedding;
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn graph_from(n: usize, seed: u64, p: f64) -> Graph {
    let mut rng = Rng64::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

fn labelled(n: usize, classes: usize, seed: u64) -> Graph {
    let labels = (0..n).map(|i| (i % classes) as u32).collect();
    graph_from(n, seed, 0.1).with_labels(labels, classes).unwrap()
}

fn matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng64::seed_from_u64(seed);
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_partitions_nodes(n in 20usize..200, f in 0.05f64..0.9, seed in any::<u64>()) {
        let g = labelled(n, 3, seed);
        let s = make_split(&g, f, seed).unwrap();
        prop_assert_eq!(s.train_ids.len(), (f * n as f64).round() as usize);
        let all: BTreeSet<usize> = s.train_ids.iter().chain(&s.test_ids).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(&make_split(&g, f, seed).unwrap(), &s);
    }

    #[test]
    fn fewshot_is_class_balanced(shots in 1usize..4, seed in any::<u64>()) {
        let g = labelled(400, 4, seed);
        let s = make_fewshot_split(&g, shots, seed).unwrap();
        let labels = g.labels().unwrap();
        for c in 0..4u32 {
            prop_assert_eq!(s.train_ids.iter().filter(|&&i| labels[i] == c).count(), shots);
        }
        let test: BTreeSet<usize> = s.test_ids.iter().copied().collect();
        prop_assert!(s.train_ids.iter().all(|i| !test.contains(i)));
        prop_assert_eq!(s.test_ids.len(), 360);
    }

    #[test]
    fn kernel_and_adjacency_invariants(n in 1usize..15, d in 1usize..6, seed in any::<u64>(), v in -0.9f64..0.9) {
        let x = matrix(n, d, seed);
        let k = cosine_kernel(x.view()).unwrap();
        for i in 0..n {
            prop_assert!((k.matrix[(i, i)] - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert!((k.matrix[(i, j)] - k.matrix[(j, i)]).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&k.matrix[(i, j)]));
            }
        }
        let a = discretize(&k, v).unwrap();
        prop_assert!(a.matrix.iter().all(|&e| e == 0.0 || e == 1.0));
        prop_assert_eq!(&a.matrix, &a.matrix.t().to_owned());
        prop_assert!(a.matrix.diag().iter().all(|&e| e == 1.0));
    }

    #[test]
    fn embedding_is_orthonormal_and_bounded(n in 1usize..25, seed in any::<u64>(), k in 1usize..12) {
        let g = graph_from(n, seed, 0.25);
        let pe = positional_embedding(&g, k).unwrap();
        prop_assert_eq!(pe.matrix.dim(), (n, k));
        prop_assert_eq!(pe.eigenvalues.len(), k.min(n));
        prop_assert!(pe.eigenvalues.windows(2).all(|w| w[0] <= w[1] + 1e-9));
        prop_assert!(pe.eigenvalues.iter().all(|l| (-1e-10..=2.0 + 1e-10).contains(l)));
        let gram = pe.matrix.t().dot(&pe.matrix);
        for i in 0..k {
            for j in 0..k {
                let want = if i == j && i < n { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)] - want).abs() < 1e-9);
            }
        }
        for j in k.min(n)..k {
            prop_assert!(pe.matrix.column(j).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rwr_stays_in_component(n in 2usize..40, seed in any::<u64>(), restart in 0.05f64..0.95) {
        let g = graph_from(n, seed, 0.08);
        let center = (seed % n as u64) as usize;
        let params = SamplerParams { walk_steps: 64, restart_rate: restart };
        let sub = sample_subgraph(&g, center, params, seed).unwrap();
        prop_assert_eq!(sub.center(), center);
        let uniq: BTreeSet<usize> = sub.node_ids.iter().copied().collect();
        prop_assert_eq!(uniq.len(), sub.len());
        let mut reach = BTreeSet::from([center]);
        let mut stack = vec![center];
        while let Some(u) = stack.pop() {
            for &v in g.neighbors(u) {
                if reach.insert(v as usize) {
                    stack.push(v as usize);
                }
            }
        }
        prop_assert!(uniq.is_subset(&reach));
        prop_assert_eq!(&sample_subgraph(&g, center, params, seed).unwrap().node_ids, &sub.node_ids);
    }

    #[test]
    fn readout_ignores_row_order(r in 1usize..12, c in 1usize..8, seed in any::<u64>()) {
        let h = matrix(r, c, seed);
        let mut order: Vec<usize> = (0..r).collect();
        order.reverse();
        let a = readout(h.view()).unwrap();
        let b = readout(h.select(Axis(0), &order).view()).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn zero_mlps_reproduce_frozen_encoder(n in 2usize..20, seed in any::<u64>()) {
        let mut rng = Rng64::seed_from_u64(seed);
        let g = graph_from(n, seed, 0.3);
        let sub = induce_subgraph(&g, &(0..n).collect::<Vec<_>>(), 0).unwrap();
        let frozen = GinEncoder::<f64>::new(6, 12, 4, &mut rng);
        let mut model = GraphControlModel::new(&frozen, 3, &mut rng);
        for p in model.copy.as_mut().unwrap().params_mut() {
            p.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        }
        let (pos, cond) = (matrix(n, 6, seed ^ 7), matrix(n, 6, seed ^ 9));
        let h = graphcontrol_forward(&model, &sub, pos.view(), cond.view()).unwrap();
        let want = readout(gin_forward(&frozen, &sub, pos.view()).unwrap().view()).unwrap();
        prop_assert_eq!(h, want);
    }

    #[test]
    fn infonce_symmetric_in_pair_order(b in 2usize..10, seed in any::<u64>()) {
        let (a, p) = (matrix(b, 5, seed), matrix(b, 5, seed ^ 3));
        let mut order: Vec<usize> = (0..b).collect();
        order.rotate_left(1);
        let l1 = infonce_loss(a.view(), p.view(), 0.07).unwrap();
        let l2 = infonce_loss(a.select(Axis(0), &order).view(), p.select(Axis(0), &order).view(), 0.07).unwrap();
        prop_assert!((l1 - l2).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dataset_round_trip(n in 1usize..30, d in 1usize..4, seed in any::<u64>()) {
        let g = graph_from(n, seed, 0.2)
            .with_attributes(matrix(n, d, seed))
            .unwrap()
            .with_labels((0..n).map(|i| (i % 2) as u32).collect(), 2)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&DatasetBundle::new(g.clone(), "rt"), dir.path()).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        prop_assert_eq!(back.name.as_str(), "rt");
        prop_assert_eq!(back.graph.edge_list(), g.edge_list());
        prop_assert_eq!(back.graph.labels(), g.labels());
        prop_assert_eq!(back.graph.attributes(), g.attributes());
    }
}
