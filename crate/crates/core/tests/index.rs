use locsynth::embed::EmbeddingModel;
use locsynth::index::{asmk_aggregate_vectors, asmk_score, selectivity, train_codebook, AsmkSignature, Codebook};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn vectors(seed: u64, n: usize, e: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..e).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn codebook() -> Codebook {
    train_codebook(&vectors(0, 400, 6), 12, 15, 1).unwrap()
}

fn signature(seed: u64, cb: &Codebook) -> AsmkSignature {
    let n = 3 + (seed % 30) as usize;
    asmk_aggregate_vectors(&vectors(100 + seed, n, 6), cb)
}

#[test]
fn codebook_is_deterministic_and_covers_every_cell() {
    let data = vectors(1, 300, 4);
    let a = train_codebook(&data, 10, 10, 7).unwrap();
    assert_eq!(a, train_codebook(&data, 10, 10, 7).unwrap());
    let mut used = vec![false; 10];
    for z in &data {
        used[a.assign(z).0] = true;
    }
    assert!(used.iter().all(|u| *u));
    assert!(train_codebook(&data[..5], 10, 10, 7).is_err());
}

#[test]
fn selectivity_shape() {
    assert_eq!(selectivity(1.0, 3.0, 0.0), 1.0);
    assert_eq!(selectivity(0.5, 3.0, 0.0), 0.125);
    assert_eq!(selectivity(-0.5, 3.0, 0.0), 0.0);
    assert_eq!(selectivity(-0.5, 3.0, -1.0), -0.125);
    assert_eq!(selectivity(0.2, 3.0, 0.3), 0.0);
}

#[test]
fn mismatched_codebooks_are_rejected() {
    let a = signature(1, &codebook());
    let other = train_codebook(&vectors(0, 400, 6), 8, 5, 1).unwrap();
    let b = signature(2, &other);
    assert!(asmk_score(&a, &b, 3.0, 0.0).is_err());
}

#[test]
fn projection_commutes_with_aggregation() {
    // signatures only depend on the projected vectors
    let model = EmbeddingModel::init(6, 10, 3).unwrap();
    let raw = vectors(9, 20, 10);
    let projected: Vec<Vec<f64>> = raw.iter().map(|x| model.project(x)).collect();
    let cb = train_codebook(&projected, 4, 10, 0).unwrap();
    let a = asmk_aggregate_vectors(&projected, &cb);
    assert_eq!(a.dim, 6);
    assert!(a.cells.values().all(|v| v.iter().all(|x| *x == 1 || *x == -1)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn asmk_symmetric_bounded_self_maximal(s1 in 0u64..1000, s2 in 0u64..1000) {
        let cb = codebook();
        let (a, b) = (signature(s1, &cb), signature(s2, &cb));
        let ab = asmk_score(&a, &b, 3.0, 0.0).unwrap();
        prop_assert_eq!(ab.to_bits(), asmk_score(&b, &a, 3.0, 0.0).unwrap().to_bits());
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(asmk_score(&a, &a, 3.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn raising_the_threshold_never_raises_the_score(s1 in 0u64..1000, s2 in 0u64..1000, t in 0.0f64..1.0) {
        let cb = codebook();
        let (a, b) = (signature(s1, &cb), signature(s2, &cb));
        let low = asmk_score(&a, &b, 3.0, 0.0).unwrap();
        let high = asmk_score(&a, &b, 3.0, t).unwrap();
        prop_assert!(high <= low);
    }
}
