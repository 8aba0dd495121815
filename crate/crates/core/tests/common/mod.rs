//! Independent reference implementations and generators shared by the test targets.
#![allow(dead_code)]

use std::collections::HashSet;

use probecount::{CounterSnapshot, MacAddress, MacClass, OuiRegistry, ProbeRecord, ThresholdGrid, TrainingSample};
use rand::Rng;

/// Brute-force counter: for each threshold, the set of MACs heard strictly above it.
pub fn recount(
    frames: &[ProbeRecord],
    registry: &OuiRegistry,
    thresholds: &[f64],
) -> (Vec<u32>, Vec<u32>) {
    let mut nv = Vec::with_capacity(thresholds.len());
    let mut nr = Vec::with_capacity(thresholds.len());
    for &theta in thresholds {
        let mut valid = HashSet::new();
        let mut random = HashSet::new();
        for f in frames {
            let Some(rss) = f.rss_dbm else { continue };
            if f64::from(rss) > theta {
                match registry.classify(f.source_mac) {
                    MacClass::Valid => valid.insert(f.source_mac),
                    MacClass::Randomized => random.insert(f.source_mac),
                };
            }
        }
        nv.push(valid.len() as u32);
        nr.push(random.len() as u32);
    }
    (nv, nr)
}

/// Exhaustive sweep written without reference to the library's search:
/// integer tenths for alpha and beta, residuals summed per combination.
pub struct OracleFit {
    pub mse: f64,
    pub theta_index: usize,
    pub alpha_tenths: u32,
    pub beta_tenths: u32,
}

pub fn sweep(samples: &[TrainingSample]) -> OracleFit {
    let m = samples[0].snapshot.thresholds.len();
    let mut best: Option<OracleFit> = None;
    for theta_index in 0..m {
        for a in 1..=20u32 {
            for b in 1..=20u32 {
                let alpha = a as f64 / 10.0;
                let beta = b as f64 / 10.0;
                let sse: f64 = samples
                    .iter()
                    .map(|s| {
                        let e = alpha * s.snapshot.n_valid[theta_index] as f64
                            + beta * s.snapshot.n_random[theta_index] as f64
                            - s.truth as f64;
                        e * e
                    })
                    .sum();
                let mse = sse / samples.len() as f64;
                let better = match &best {
                    None => true,
                    Some(o) => mse < o.mse,
                };
                if better {
                    best = Some(OracleFit { mse, theta_index, alpha_tenths: a, beta_tenths: b });
                }
            }
        }
    }
    best.unwrap()
}

pub fn random_mac(rng: &mut impl Rng, registry_ouis: &[[u8; 3]]) -> MacAddress {
    let mut octets = [0u8; 6];
    rng.fill_bytes(&mut octets);
    if rng.random_bool(0.5) && !registry_ouis.is_empty() {
        let oui = registry_ouis[rng.random_range(0..registry_ouis.len())];
        octets[..3].copy_from_slice(&oui);
    }
    MacAddress::new(octets)
}

pub fn random_record(rng: &mut impl Rng) -> ProbeRecord {
    let mut octets = [0u8; 6];
    rng.fill_bytes(&mut octets);
    let ssid = match rng.random_range(0..3) {
        0 => None,
        1 => Some(Vec::new()),
        _ => {
            let len = rng.random_range(1..=32);
            let mut v = vec![0u8; len];
            rng.fill_bytes(&mut v);
            Some(v)
        }
    };
    ProbeRecord {
        source_mac: MacAddress::new(octets),
        rss_dbm: rng.random_bool(0.9).then(|| rng.random_range(-127i8..=0)),
        timestamp_us: rng.next_u64() >> 1,
        ssid,
    }
}

/// A random monotone snapshot (counts non-increasing in the threshold).
pub fn random_snapshot(rng: &mut impl Rng, grid: &ThresholdGrid, max_count: u32) -> CounterSnapshot {
    let mut snap = CounterSnapshot::zeros(grid, 0, 300.0);
    let mut v = rng.random_range(0..=max_count);
    let mut r = rng.random_range(0..=max_count);
    for k in 0..grid.len() {
        snap.n_valid[k] = v;
        snap.n_random[k] = r;
        v = v.saturating_sub(rng.random_range(0..=2));
        r = r.saturating_sub(rng.random_range(0..=2));
    }
    snap
}
