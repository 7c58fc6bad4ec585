//! Seed derivation and seeded random sampling.
//!
//! Every random process in the crate draws from a [`ChaCha12Rng`] seeded
//! through [`derive_seed`], so independent stages (per-finger PSO, base
//! sampling, per-scene generation) get decorrelated streams from one master
//! seed without sharing mutable state.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a stream tag.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// RNG for a derived stream.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, stream))
}

/// Uniformly distributed random rotation (Shoemake's quaternion method).
pub fn uniform_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let t1 = std::f64::consts::TAU * u2;
    let t2 = std::f64::consts::TAU * u3;
    UnitQuaternion::from_quaternion(Quaternion::new(
        b * t2.cos(),
        a * t1.sin(),
        a * t1.cos(),
        b * t2.sin(),
    ))
}
