#![allow(dead_code)]

use monet::simworld::{Action, Observation, CH_EGO, CH_ROADS, CH_ROUTE, MAP_CHANNELS};
use rand::{Rng, SeedableRng};

/// Observation with uniform image noise and a sparse, valid map.
pub fn random_observation<R: Rng>(rng: &mut R, image: usize, map: usize) -> Observation {
    let mut o = Observation::blank(image, map);
    o.image.iter_mut().for_each(|v| *v = rng.gen());
    for px in o.map.chunks_mut(MAP_CHANNELS) {
        if rng.gen_bool(0.4) {
            px[CH_ROADS] = 1.0;
            if rng.gen_bool(0.5) {
                px[CH_ROUTE] = 1.0;
            }
        }
    }
    let c = map / 2;
    o.map[(c * map + c) * MAP_CHANNELS + CH_EGO] = 1.0;
    o
}

pub fn random_action<R: Rng>(rng: &mut R) -> Action {
    Action::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9))
}

/// Shifts every parameter by uniform noise in `[-0.01, 0.01]`. Zero conv
/// biases put ReLU inputs exactly on the kink for blank map patches, where
/// central differences are not comparable to the subgradient.
pub fn jitter<P: monet::nn::ParamSet<f64>>(params: &mut P, seed: u64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    params.visit_mut("", &mut |_, t| {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.01..0.01))
    });
}
