mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracle::{dense_encode, perturbed_params, random_graph, to_rows};
use vlf_core::encoder::{encode_graph, CodeGraph, Mode};

#[test]
fn matches_dense_oracle_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let params = perturbed_params(&mut rng);
        let n = rng.random_range(1..=8);
        let (f, edges) = random_graph(&mut rng, n, 8);
        let g = CodeGraph::new(f.clone(), edges.clone(), (0..n).collect()).unwrap();
        for mode in [Mode::Eval, Mode::Train] {
            // a lone node has no batch variance to normalise by
            if mode == Mode::Train && n < 2 {
                continue;
            }
            let (emb, _) = encode_graph(&g, &params, mode, None).unwrap();
            let oracle = dense_encode(&to_rows(&f), &edges, &params, mode);
            for (a, b) in emb.vector.iter().zip(&oracle) {
                let err = (a - b).abs();
                worst = worst.max(err);
                assert!(err <= 1e-10, "case {case} {mode:?}: {a} vs {b}");
            }
        }
    }
    assert!(worst <= 1e-10);
}

#[test]
fn node_relabelling_leaves_embedding_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let params = perturbed_params(&mut rng);
        let n = rng.random_range(2..=30);
        let (f, edges) = random_graph(&mut rng, n, 10);
        let g = CodeGraph::new(f.clone(), edges.clone(), (0..n).collect()).unwrap();
        assert!(g.max_in_degree() <= 10);

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut pf = Array2::zeros(f.dim());
        for v in 0..n {
            pf.row_mut(perm[v]).assign(&f.row(v));
        }
        let pe: Vec<(usize, usize)> = edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let pg = CodeGraph::new(pf, pe, (0..n).collect()).unwrap();

        for mode in [Mode::Eval, Mode::Train] {
            let (a, na) = encode_graph(&g, &params, mode, None).unwrap();
            let (b, nb) = encode_graph(&pg, &params, mode, None).unwrap();
            for (x, y) in a.vector.iter().zip(b.vector.iter()) {
                assert!((x - y).abs() <= 1e-9);
            }
            for v in 0..n {
                for (x, y) in na.row(v).iter().zip(nb.row(perm[v]).iter()) {
                    assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn sampling_is_seeded_above_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = perturbed_params(&mut rng);
    let n = 16;
    let (f, _) = random_graph(&mut rng, n, 0);
    let edges: Vec<(usize, usize)> = (1..n).map(|s| (s, 0)).collect();
    let g = CodeGraph::new(f, edges, (0..n).collect()).unwrap();
    let a = encode_graph(&g, &params, Mode::Eval, Some(9)).unwrap().0;
    assert_eq!(a, encode_graph(&g, &params, Mode::Eval, Some(9)).unwrap().0);
    let differs = (10..20).any(|s| encode_graph(&g, &params, Mode::Eval, Some(s)).unwrap().0 != a);
    assert!(differs);
}
