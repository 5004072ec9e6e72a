use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ctxmdp::confidence::WidthSchedule;
use ctxmdp::environment::{generate_environment, EnvironmentSpec, EpisodeSampler};
use ctxmdp::estimation::DesignMatrix;
use ctxmdp::glm::{FeatureMap, FeatureMaps, LinkFunction};
use ctxmdp::learner::{Learner, OfuConfig, OfuLearner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ball(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return v;
        }
    }
}

/// Potential recomputed with a fresh dense solve at every step.
#[test]
fn elliptical_potential_with_dense_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [1usize, 2, 5] {
        for t in [10usize, 300] {
            let mut gram = DMatrix::<f64>::identity(k, k);
            let mut potential = 0.0;
            for _ in 0..t {
                let w = DVector::from_vec(ball(&mut rng, k));
                let solved = gram.clone().lu().solve(&w).unwrap();
                potential += w.dot(&solved).min(1.0);
                gram += &w * w.transpose();
            }
            let bound = 2.0 * k as f64 * (1.0 + t as f64 / k as f64).ln();
            assert!(potential <= bound, "k={k}, t={t}: {potential} > {bound}");
        }
    }
}

#[test]
fn maintained_inverse_tracks_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut design = DesignMatrix::identity(4);
    let mut gram = DMatrix::<f64>::identity(4, 4);
    for step in 1..=2000 {
        let w = ball(&mut rng, 4);
        design.update(&w).unwrap();
        let w = DVector::from_vec(w);
        gram += &w * w.transpose();
        if step % 250 == 0 {
            let direct = gram.clone().try_inverse().unwrap();
            assert!((design.inverse() - direct).amax() < 1e-12);
            assert!((design.matrix() - &gram).amax() < 1e-9);
        }
    }
}

#[test]
fn half_width_shrinks_for_a_repeated_direction() {
    let maps = FeatureMaps {
        side_dim: 2,
        transition: FeatureMap::new(2, true),
        reward: FeatureMap::new(2, true),
        x_max: 1.0,
    };
    let widths = WidthSchedule::new(LinkFunction::Logistic, &maps, 1.0, 0.1, 1.0).unwrap();
    let phi = maps.phi(&[0.6, -0.3]).unwrap();
    let half_width = |t: usize| {
        let mut design = DesignMatrix::identity(3);
        for _ in 0..t {
            design.update(phi.as_slice()).unwrap();
        }
        widths.radii(t).unwrap().1 * design.mahalanobis_norm(phi.as_slice()).unwrap()
    };
    for t in [50, 100, 200, 400, 800] {
        assert!(half_width(2 * t) < half_width(t), "t = {t}");
    }
}

#[test]
fn three_state_fixture_covers_truth() {
    let spec = EnvironmentSpec {
        layer_sizes: vec![1, 2],
        ..EnvironmentSpec::default_fixture()
    };
    let truth = generate_environment(&spec, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    let topology = Arc::clone(truth.topology());
    let config = OfuConfig {
        delta: 0.1,
        rho_scale: 1.0,
        param_bound: spec.param_bound,
        ..OfuConfig::default()
    };
    let mut learner = OfuLearner::new(topology.clone(), *truth.maps(), truth.link(), config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut covered = 0;
    let mut checks = 0;
    for _ in 0..500 {
        let x = truth.sample_side_info(&mut rng);
        let planned = learner.plan_episode(&x).unwrap();
        let (kernel, _) = truth.true_models(&x).unwrap();
        for pair in 0..topology.num_pairs() {
            let (s, a) = topology.pair(pair);
            for (triple, &p) in topology.row(pair).zip(kernel.row(s, a)) {
                checks += 1;
                covered += planned.bands.transition_contains(triple, p) as usize;
            }
        }
        learner.learn_episode(&x, &truth, &mut rng).unwrap();
    }
    assert!(covered as f64 >= 0.9 * checks as f64, "{covered}/{checks}");
}
