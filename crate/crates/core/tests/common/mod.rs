#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use velogen_core::constraints::{check, RuleSet};
use velogen_core::schema::{DesignSchema, DesignVector, ParamKind, Value};
use velogen_core::surrogate::net::Dense;
use velogen_core::surrogate::{grad, mse_loss, ResidualNet, Topology};

/// Uniformly drawn design (not necessarily feasible).
pub fn random_design(schema: &DesignSchema, rng: &mut ChaCha8Rng) -> DesignVector {
    let mut d = schema.default_design();
    for (v, p) in d.values.iter_mut().zip(&schema.parameters) {
        *v = match &p.kind {
            ParamKind::Continuous { lower, upper, .. } => Value::Real(rng.random_range(*lower..=*upper)),
            ParamKind::Categorical { categories, .. } => Value::Label(rng.random_range(0..categories.len())),
        };
    }
    d
}

/// `n` uniformly drawn designs that pass the reference rules.
pub fn random_feasible(n: usize, seed: u64) -> Vec<DesignVector> {
    let schema = DesignSchema::reference();
    let rules = RuleSet::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let d = random_design(&schema, &mut rng);
        if check(&d, &schema, &rules).is_feasible() {
            out.push(d);
        }
    }
    out
}

pub fn with(schema: &DesignSchema, mut d: DesignVector, reals: &[(&str, f64)], labels: &[(&str, &str)]) -> DesignVector {
    for (k, v) in reals {
        d.set(schema, k, Value::Real(*v));
    }
    for (k, v) in labels {
        d.set_label(schema, k, v);
    }
    d
}

/// The five renderer fixtures.
pub fn fixture_designs() -> Vec<(&'static str, DesignVector)> {
    let s = DesignSchema::reference();
    let d = s.default_design();
    vec![
        ("default", d.clone()),
        (
            "yellow_suspension_flat",
            with(
                &s,
                d.clone(),
                &[("red", 1.0), ("green", 1.0), ("blue", 0.0), ("tire_width_front", 55.0), ("tire_width_rear", 55.0)],
                &[("fork_style", "suspension"), ("handlebar_style", "flat")],
            ),
        ),
        (
            "small_riser",
            with(
                &s,
                d.clone(),
                &[
                    ("seat_tube_length", 430.0),
                    ("top_tube_length", 540.0),
                    ("head_tube_length", 90.0),
                    ("bb_drop", 40.0),
                    ("wheel_diameter_front", 610.0),
                    ("wheel_diameter_rear", 610.0),
                    ("red", 0.1),
                    ("green", 0.4),
                    ("blue", 0.9),
                ],
                &[("handlebar_style", "riser")],
            ),
        ),
        (
            "long_slack",
            with(
                &s,
                d.clone(),
                &[
                    ("top_tube_length", 630.0),
                    ("head_angle", 67.0),
                    ("chain_stay_length", 470.0),
                    ("tube_diameter", 48.0),
                    ("seatpost_extension", 280.0),
                    ("red", 0.05),
                    ("green", 0.6),
                    ("blue", 0.2),
                ],
                &[("fork_style", "suspension")],
            ),
        ),
        (
            "thin_dark",
            with(
                &s,
                d,
                &[
                    ("tube_diameter", 25.0),
                    ("tire_width_front", 20.0),
                    ("tire_width_rear", 20.0),
                    ("stem_stack", 75.0),
                    ("handlebar_drop", 30.0),
                    ("red", 0.3),
                    ("green", 0.3),
                    ("blue", 0.35),
                ],
                &[],
            ),
        ),
    ]
}

pub fn gaussian(n: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * cols).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Double-loop ranking scores.
pub fn brute_force(p: &[f64], t: &[f64], cols: usize) -> (f64, f64) {
    let n = p.len() / cols;
    let row = |m: &'_ [f64], i: usize| m[i * cols..(i + 1) * cols].to_vec();
    let (mut f, mut r) = (0usize, 0usize);
    for i in 0..n {
        let own = cos(&row(p, i), &row(t, i));
        for j in 0..n {
            if own > cos(&row(p, i), &row(t, j)) {
                f += 1;
            }
            if own > cos(&row(p, j), &row(t, i)) {
                r += 1;
            }
        }
    }
    (f as f64 / (n * n) as f64, r as f64 / (n * n) as f64)
}

pub fn noisy_pair(n: usize, cols: usize, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let t = gaussian(n, cols, seed);
    let e = gaussian(n, cols, seed + 1000);
    let p = t.iter().zip(&e).map(|(a, b)| a + noise * b).collect();
    (p, t)
}

fn small_topology(rng: &mut ChaCha8Rng) -> Topology {
    Topology {
        input: rng.random_range(1..6),
        width: rng.random_range(2..9),
        blocks: rng.random_range(0..4),
        output: rng.random_range(1..5),
    }
}

fn dense(d: &Dense, x: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * d.outputs];
    d.forward(x, n, &mut y);
    y
}

/// Smallest |pre-activation| of any ReLU in the network for inputs `x`.
fn kink_margin(net: &ResidualNet, x: &[f64], n: usize) -> f64 {
    let mut margin = f64::INFINITY;
    let mut note = |v: &[f64]| margin = v.iter().fold(margin, |m, z| m.min(z.abs()));
    let z = dense(&net.stem, x, n);
    note(&z);
    let mut h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
    for b in &net.blocks {
        let z1 = dense(&b.first, &h, n);
        note(&z1);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let s: Vec<f64> = dense(&b.second, &a1, n).iter().zip(&h).map(|(a, b)| a + b).collect();
        note(&s);
        h = s.iter().map(|v| v.max(0.0)).collect();
    }
    margin
}

pub fn flat(net: &ResidualNet) -> Vec<f64> {
    net.params().concat()
}

pub fn set_flat(net: &mut ResidualNet, values: &[f64]) {
    let mut k = 0;
    for p in net.params_mut() {
        p.copy_from_slice(&values[k..k + p.len()]);
        k += p.len();
    }
}


/// Central-difference check of `grad` on `count` random small networks.
/// Returns the largest relative error over every parameter.
pub fn gradient_check(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut net_seed = 0;
    while checked < count {
        net_seed += 1;
        let t = small_topology(&mut rng);
        let mut net = ResidualNet::init_with(t, net_seed).unwrap();
        // nonzero biases so every parameter class is exercised
        for p in net.params_mut() {
            p.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        let n = 3;
        let x: Vec<f64> = (0..n * t.input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n * t.output).map(|_| rng.random_range(-1.0..1.0)).collect();
        if kink_margin(&net, &x, n) < 1e-2 {
            continue;
        }
        let (_, g) = grad(&net, &x, &y, n).unwrap();
        let analytic = flat(&g);
        let base = flat(&net);
        let mut probe = net.clone();
        for (k, a) in analytic.iter().enumerate() {
            let mut v = base.clone();
            v[k] += h;
            set_flat(&mut probe, &v);
            let up = mse_loss(&probe, &x, &y, n).unwrap();
            v[k] -= 2.0 * h;
            set_flat(&mut probe, &v);
            let down = mse_loss(&probe, &x, &y, n).unwrap();
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        checked += 1;
    }
    worst
}
