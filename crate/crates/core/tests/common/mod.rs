#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use gridarena::grid::{Generator, GeneratorKind, Line, Load, Substation};
use gridarena::scenario::{calibrate_thermal_limits, generate, GenerationConfig};
use gridarena::{GridCase, Injections, Scenario};

pub fn sub(id: u32) -> Substation {
    Substation { id, base_kv: 100.0 }
}

/// Connected grid: a random spanning tree plus random extra lines, the
/// slack generator at substation 1 and balanced injections.
pub fn random_grid(rng: &mut ChaCha8Rng) -> (GridCase, Injections) {
    let n = rng.random_range(2..=10u32);
    let mut lines = Vec::new();
    let mut push = |from: u32, to: u32, x: f64| {
        let id = lines.len() as u32 + 1;
        lines.push(Line { id, from, to, reactance: x, imax: 1000.0 });
    };
    for i in 2..=n {
        push(rng.random_range(1..i), i, rng.random_range(0.02..0.6));
    }
    for _ in 0..rng.random_range(0..=n) {
        let (a, b) = (rng.random_range(1..=n), rng.random_range(1..=n));
        if a != b {
            push(a, b, rng.random_range(0.02..0.6));
        }
    }
    let mut gens = vec![Generator { id: 1, substation: 1, kind: GeneratorKind::Thermal, pmax: 1e4 }];
    for k in 0..rng.random_range(0..3u32) {
        gens.push(Generator { id: k + 2, substation: rng.random_range(1..=n), kind: GeneratorKind::Wind, pmax: 100.0 });
    }
    let n_loads = rng.random_range(1..=n);
    let mut loads: Vec<Load> = (0..n_loads)
        .map(|k| Load { id: k + 1, substation: rng.random_range(1..=n), key_factor: 1.0 / n_loads as f64 })
        .collect();
    let rest: f64 = loads[..loads.len() - 1].iter().map(|l| l.key_factor).sum();
    loads.last_mut().unwrap().key_factor = 1.0 - rest;
    let load_mw: Vec<f64> = (0..n_loads).map(|_| rng.random_range(5.0..120.0)).collect();
    let mut gen_mw: Vec<f64> = (0..gens.len()).map(|_| rng.random_range(0.0..60.0)).collect();
    gen_mw[0] = load_mw.iter().sum::<f64>() - gen_mw[1..].iter().sum::<f64>();
    let case = GridCase::new((1..=n).map(sub).collect(), lines, gens, loads, 1, 100.0).expect("valid random case");
    (case, Injections { generators: gen_mw, loads: load_mw })
}

/// The 14-bus case with limits calibrated on one short scenario.
pub fn calibrated(horizon: usize, rate: f64, targets: &[u32]) -> (Arc<GridCase>, Arc<Scenario>) {
    let base = GridCase::ieee14();
    let s = generate(&base, &GenerationConfig::default(), horizon, 42).unwrap();
    let case = calibrate_thermal_limits(&base, std::slice::from_ref(&s), targets, rate).unwrap();
    (Arc::new(case), Arc::new(s))
}
