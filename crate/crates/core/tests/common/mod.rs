//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

pub mod hp;

use etas_core::{Event, EventCatalog, ObservationWindow, TiePolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = half * XGK[i];
        let s = f(mid - x) + f(mid + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * half, ((k - g) * half).abs())
}

/// Adaptive 15-point Gauss-Kronrod quadrature on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, min_width: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, el) = kronrod(f, a, m);
        let (r, er) = kronrod(f, m, b);
        let done = el + er <= tol && (l + r - whole).abs() <= 10.0 * tol;
        // integrands with evaluation noise never meet the tolerance; stop
        // refining once the pieces are negligibly narrow
        if depth == 0 || done || b - a < min_width {
            return l + r;
        }
        rec(f, a, m, l, 0.5 * tol, min_width, depth - 1) + rec(f, m, b, r, 0.5 * tol, min_width, depth - 1)
    }
    let (whole, _) = kronrod(&f, a, b);
    // below a few dozen ulps the error estimate is rounding noise
    let tol = (rel_tol * 1e-2).max(50.0 * f64::EPSILON) * whole.abs().max(1e-300);
    rec(&f, a, b, whole, tol, 1e-7 * (b - a), 40)
}

/// Integral over `[a, b]` split geometrically away from `a`, for integrands
/// that are sharply peaked at the left end.
pub fn integrate_peaked<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, scale: f64, rel_tol: f64) -> f64 {
    let mut pts = vec![a];
    let mut w = scale.max(1e-12);
    while a + w < b {
        pts.push(a + w);
        w *= 4.0;
    }
    pts.push(b);
    pts.windows(2).map(|p| integrate(&f, p[0], p[1], rel_tol)).sum()
}

/// Random catalog with strictly increasing times in `[0, t_end)`.
pub fn random_catalog(n: usize, t_end: f64, seed: u64) -> EventCatalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * t_end).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let events = times
        .into_iter()
        .map(|time| Event {
            time,
            magnitude: 3.0 + rng.random::<f64>() * 2.5,
        })
        .collect();
    EventCatalog::new(events, ObservationWindow::new(0.0, t_end, 3.0).unwrap(), TiePolicy::Reject).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
