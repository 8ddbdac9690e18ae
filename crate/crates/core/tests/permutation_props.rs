use ewc::tasks::{make_partial_permutation, make_permutation, Permutation};
use proptest::prelude::*;

fn is_bijection(p: &Permutation) -> bool {
    let mut seen = vec![false; p.len()];
    p.mapping().iter().all(|&m| m < seen.len() && !std::mem::replace(&mut seen[m], true))
}

proptest! {
    #[test]
    fn full_permutations_are_bijections_with_inverses(n in 1usize..300, seed in any::<u64>()) {
        let p = make_permutation(n, seed).unwrap();
        prop_assert!(is_bijection(&p));
        let round = p.then(&p.inverse()).unwrap();
        prop_assert!(round.is_identity());
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        p.apply_row(&x, &mut y);
        p.inverse().apply_row(&y, &mut z);
        prop_assert_eq!(x, z);
    }

    #[test]
    fn partial_permutations_move_only_the_square(side in 4usize..30, seed in any::<u64>(), frac in 0.0f64..1.0) {
        let square = ((side as f64 * frac) as usize).min(side);
        let p = make_partial_permutation(side, square, seed).unwrap();
        prop_assert!(is_bijection(&p));
        let lo = (side - square) / 2;
        let inside = |i: usize| (lo..lo + square).contains(&(i / side)) && (lo..lo + square).contains(&(i % side));
        for (i, &m) in p.mapping().iter().enumerate() {
            if inside(i) {
                prop_assert!(inside(m));
                if square > 1 {
                    prop_assert_ne!(i, m);
                }
            } else {
                prop_assert_eq!(i, m);
            }
        }
    }

    #[test]
    fn composition_applies_left_then_right(n in 1usize..50, s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = make_permutation(n, s1).unwrap();
        let b = make_permutation(n, s2).unwrap();
        let ab = a.then(&b).unwrap();
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 1.5).collect();
        let (mut y, mut z, mut w) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        a.apply_row(&x, &mut y);
        b.apply_row(&y, &mut z);
        ab.apply_row(&x, &mut w);
        prop_assert_eq!(z, w);
    }
}

#[test]
fn same_seed_same_permutation() {
    assert_eq!(make_permutation(784, 3).unwrap(), make_permutation(784, 3).unwrap());
    assert_ne!(make_permutation(784, 3).unwrap(), make_permutation(784, 4).unwrap());
}
