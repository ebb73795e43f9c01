//! Randomized properties of counting, binarization, reduction and
//! normalization.

mod common;

use modcsp::classify::preprocess;
use modcsp::homcount::{count_homs, count_homs_mod, enumerate_homs};
use modcsp::polyclone::{find_p_automorphic_polynomial, is_polymorphism};
use modcsp::reduce::{binarize_instance, reduce_instance, solution_from_binarized, transfer_solution, ReduceOptions};
use modcsp::structures::{CspInstance, Structure};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn binarization_is_a_bijection_on_solutions() {
    let mut rng = common::rng(21);
    for case in 0..40 {
        let sizes: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..=3)).collect();
        let nrel = rng.gen_range(1..=3);
        let h = common::random_structure(&mut rng, &sizes, nrel);
        let (nv, nc) = (rng.gen_range(1..=4), rng.gen_range(0..=4));
        let p = common::random_instance(&mut rng, &h, nv, nc);
        let pair = binarize_instance(&p, &h).unwrap();
        let sols = enumerate_homs(&p, &h, &[]).unwrap();
        assert_eq!(sols.len() as u128, count_homs(&pair.bp, &pair.structure.bh, &[]).unwrap(), "case {case}");
        for phi in &sols {
            let psi = transfer_solution(&pair, phi).unwrap();
            assert_eq!(&solution_from_binarized(&pair, &psi), phi, "case {case}");
        }
    }
}

#[test]
fn reduction_preserves_counts_mod_two() {
    let mut rng = common::rng(22);
    let (mut done, mut odd) = (0, 0);
    while done < 40 {
        let f = common::random_two_automorphic(&mut rng);
        let h = common::random_closed_structure(&mut rng, &f);
        assert!(is_polymorphism(&f, &h));
        let (nv, nc) = (rng.gen_range(1..=6), rng.gen_range(0..=6));
        let p = common::random_instance(&mut rng, &h, nv, nc);
        let r = reduce_instance(&p, &h, &f, 2, &ReduceOptions::default()).unwrap();
        let before = count_homs_mod(&p, &h, 2, &[]).unwrap();
        let after = count_homs_mod(&r.instance, &r.split.structure, 2, &[]).unwrap();
        assert_eq!(before, after, "instance {done}");
        odd += before as usize;
        done += 1;
    }
    assert!(odd > 0, "every sampled count was even");
}

#[test]
fn found_polynomials_drive_the_reduction() {
    let mut rng = common::rng(23);
    let mut used = 0;
    for _ in 0..60 {
        let f = common::random_two_automorphic(&mut rng);
        let h = common::random_closed_structure(&mut rng, &f);
        let Some(g) = find_p_automorphic_polynomial(&h, 2).unwrap() else { continue };
        let p = common::random_instance(&mut rng, &h, 4, 4);
        let opts = ReduceOptions { witness: Some((g.sort, g.a)), ..ReduceOptions::default() };
        let r = reduce_instance(&p, &h, &g.f, 2, &opts).unwrap();
        assert_eq!(count_homs_mod(&p, &h, 2, &[]).unwrap(), count_homs_mod(&r.instance, &r.split.structure, 2, &[]).unwrap());
        used += 1;
    }
    assert!(used >= 30, "only {used} structures had a polynomial");
}

#[test]
fn normalization_preserves_counts() {
    let mut rng = common::rng(24);
    for _ in 0..30 {
        let sizes = vec![rng.gen_range(2..=3)];
        let h = common::random_structure(&mut rng, &sizes, 2);
        for p in [2u64, 3] {
            let pre = preprocess(&h, p).unwrap();
            let inst = common::random_instance(&mut rng, &h, 3, 3);
            let direct = count_homs_mod(&inst, &h, p, &[]).unwrap();
            let reduced = if pre.dropped_sorts.is_empty() { count_homs_mod(&inst, &pre.structure, p, &[]).unwrap() } else { 0 };
            assert_eq!(direct, reduced);
        }
    }
}

fn instance_strategy() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..=4, 0usize..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modular_count_is_the_residue((seed, nv, nc) in instance_strategy(), p in prop::sample::select(vec![2u64, 3, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Structure = common::random_structure(&mut rng, &[2, 3], 2);
        let inst: CspInstance = common::random_instance(&mut rng, &h, nv, nc);
        let exact = count_homs(&inst, &h, &[]).unwrap();
        prop_assert_eq!(count_homs_mod(&inst, &h, p, &[]).unwrap() as u128, exact % p as u128);
    }

    #[test]
    fn binarization_counts_agree((seed, nv, nc) in instance_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::random_structure(&mut rng, &[2, 2], 3);
        let inst = common::random_instance(&mut rng, &h, nv, nc);
        let pair = binarize_instance(&inst, &h).unwrap();
        prop_assert_eq!(count_homs(&inst, &h, &[]).unwrap(), count_homs(&pair.bp, &pair.structure.bh, &[]).unwrap());
    }
}
