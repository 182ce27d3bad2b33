//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

pub mod stubs;

use canloc_core::bussim::TapPoint;
use canloc_core::can::CanFrame;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Bit-serial CRC-15 shift register, one bit per clock.
pub fn crc15_serial(bits: &[bool]) -> u16 {
    let mut reg: u32 = 0;
    for &b in bits {
        let top = (reg >> 14) & 1 == 1;
        reg = (reg << 1) & 0x7FFF;
        if top ^ b {
            reg ^= 0x4599;
        }
    }
    reg as u16
}

/// Mean plus population standard deviation, two passes.
pub fn threshold_direct(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    mean + var.sqrt()
}

/// Copy of `s` shifted right by `r` with wrap-around, index by index.
pub fn rotate_right_naive(s: &[f64], r: usize) -> Vec<f64> {
    let n = s.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[(i + r) % n] = s[i];
    }
    out
}

/// Straight transcription of the augmentation loop: for each point, each
/// recording, each copy, add element-wise noise then roll by a uniform
/// offset in `0..=r`. Returns (values, class, source).
pub fn augment_naive(
    points: &[TapPoint],
    sets: &[(TapPoint, Vec<Vec<f64>>)],
    k: usize,
    r: usize,
    mu: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<f64>, usize, usize)> {
    let mut out = Vec::new();
    for (class, p) in points.iter().enumerate() {
        let set = &sets.iter().find(|(q, _)| q == p).unwrap().1;
        for (source, s) in set.iter().enumerate() {
            for _ in 0..k {
                let mut noisy = Vec::with_capacity(s.len());
                for &x in s {
                    let z: f64 = rng.sample(StandardNormal);
                    // One draw from N(mu, sigma) added per element.
                    noisy.push(x + (mu + sigma * z));
                }
                let shift = rng.random_range(0..=r);
                out.push((rotate_right_naive(&noisy, shift), class, source));
            }
        }
    }
    out
}

/// Values reaching the highest count, by exhaustive counting.
pub fn brute_modes(c: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &v in c {
        counts[v] += 1;
    }
    let top = *counts.iter().max().unwrap();
    (0..classes).filter(|&v| counts[v] == top && top > 0).collect()
}

/// Unstuffed SOF..DATA bits, rebuilt field by field.
pub fn prefix_bits(f: &CanFrame) -> Vec<bool> {
    let mut v = vec![false];
    v.extend((0..11).rev().map(|i| (f.id() >> i) & 1 == 1));
    v.push(f.is_remote());
    v.extend([false, false]);
    v.extend((0..4).rev().map(|i| (f.dlc() >> i) & 1 == 1));
    for b in f.data() {
        v.extend((0..8).rev().map(|i| (b >> i) & 1 == 1));
    }
    v
}
