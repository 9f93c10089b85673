use proptest::prelude::*;

use commcert::graphio::{apply_flips, build_pair_space, structure_vector, Graph};
use commcert::StructureVector;

fn bits(n: usize) -> impl Strategy<Value = StructureVector> {
    proptest::collection::vec(any::<bool>(), n).prop_map(StructureVector::from_bits)
}

proptest! {
    #[test]
    fn xor_is_an_involution((a, b) in (1usize..200).prop_flat_map(|n| (bits(n), bits(n)))) {
        let c = a.xor(&b).unwrap();
        prop_assert_eq!(c.xor(&b).unwrap(), a.clone());
        prop_assert_eq!(c.count_ones(), (0..a.len()).filter(|&i| a.get(i) != b.get(i)).count());
    }

    #[test]
    fn flips_move_the_structure_vector(
        edges in proptest::collection::vec((0u64..12, 0u64..12), 0..40),
        mask in bits(28),
    ) {
        let edges: Vec<(u64, u64)> = edges.into_iter().filter(|(u, v)| u != v).collect();
        let graph = Graph::from_edges(0..12, edges).unwrap();
        let space = build_pair_space(&[0, 2, 3, 5, 7, 8, 10, 11]).unwrap();
        let x = structure_vector(&graph, &space).unwrap();
        let flipped = apply_flips(&graph, &space, &mask).unwrap();
        prop_assert_eq!(structure_vector(&flipped, &space).unwrap(), x.xor(&mask).unwrap());
        // Pairs outside the space are untouched.
        for (u, v) in graph.edges() {
            if space.position(u, v).is_none() {
                prop_assert!(flipped.has_edge(u, v));
            }
        }
        prop_assert_eq!(apply_flips(&flipped, &space, &mask).unwrap().edges().collect::<Vec<_>>(), graph.edges().collect::<Vec<_>>());
    }
}
