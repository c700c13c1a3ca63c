use proptest::prelude::*;
use rtsdoa_autograd::{Graph, ParamStore, Tensor};

proptest! {
    #[test]
    fn permute_then_inverse_is_lossless(dims in proptest::collection::vec(1usize..5, 1..5), seed in 0u64..1000) {
        let n: usize = dims.iter().product();
        let t = Tensor::<f64>::from_fn(dims.clone(), |i| (i as f64 + seed as f64).sin());
        let rank = dims.len();
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.rotate_left((seed as usize) % rank);
        if rank > 2 { perm.swap(0, 1); }
        let mut inv = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() { inv[p] = i; }
        let mut g = Graph::new();
        let x = g.input(t.clone());
        let y = g.permute(x, &perm).unwrap();
        let z = g.permute(y, &inv).unwrap();
        prop_assert_eq!(g.value(z), &t);
        prop_assert_eq!(g.value(y).numel(), n);
    }

    #[test]
    fn checkpoint_round_trip(shapes in proptest::collection::vec(proptest::collection::vec(0usize..4, 0..4), 0..5)) {
        let mut store = ParamStore::<f32>::new();
        for (i, s) in shapes.iter().enumerate() {
            store.insert(format!("p{i}.w"), Tensor::from_fn(s.clone(), |j| j as f32 * 0.25 - 1.0));
        }
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        let back = ParamStore::<f32>::read_from(&mut &bytes[..]).unwrap();
        prop_assert_eq!(back, store);
    }
}
