use arch_core::genetics::{crossover, crossover_mask, mutate};
use arch_core::prior::TokenSequence;
use proptest::prelude::*;

fn seq_pair() -> impl Strategy<Value = (TokenSequence, TokenSequence)> {
    (1usize..5).prop_flat_map(|r| {
        let n = r.pow(3);
        (prop::collection::vec(0u32..32, n), prop::collection::vec(0u32..32, n))
            .prop_map(move |(a, b)| (TokenSequence::new(32, r, a).unwrap(), TokenSequence::new(32, r, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn crossover_inherits_per_mask((a, b) in seq_pair(), seed in any::<u64>()) {
        let c = crossover(&a, &b, seed).unwrap();
        prop_assert_eq!(&c, &crossover(&a, &b, seed).unwrap());
        let mask = crossover_mask(a.len(), 0.5, seed).unwrap();
        for i in 0..a.len() {
            prop_assert_eq!(c.tokens[i], if mask[i] { b.tokens[i] } else { a.tokens[i] });
        }
    }

    #[test]
    fn mutate_preserves_multiset((a, _) in seq_pair(), swaps in 0usize..200, seed in any::<u64>()) {
        prop_assume!(a.len() >= 2 || swaps == 0);
        let m = mutate(&a, swaps, seed).unwrap();
        prop_assert_eq!(&m, &mutate(&a, swaps, seed).unwrap());
        let (mut x, mut y) = (a.tokens.clone(), m.tokens.clone());
        x.sort_unstable();
        y.sort_unstable();
        prop_assert_eq!(x, y);
    }
}
