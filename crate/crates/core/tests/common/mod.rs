#![allow(dead_code)]

pub mod cases;
pub mod invariants;
pub mod oracles;

use bgrl::autograd::{Tape, Var};
use bgrl::rng::rng_for;
use bgrl::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
/// Below this both gradients are treated as zero; relative error is
/// meaningless there.
pub const ABS_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, 0xfeed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay outside the FD step.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Distinct values spaced well beyond the FD step, shuffled.
pub fn distinct(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
    for i in (1..n).rev() {
        data.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape, data).unwrap()
}

/// Fallback step for elements whose 1e-5 stencil straddles a ReLU or
/// max-pool switch.
pub const KINK_STEP: f64 = 1e-7;

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_FLOOR || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// Checks one derivative. `loss_at(δ)` evaluates the loss with the element
/// shifted by δ. Returns the relative error and whether the kink fallback
/// was needed.
pub fn fd_check(analytic: f64, loss_at: impl Fn(f64) -> f64) -> Result<(f64, bool), String> {
    let central = |h: f64| (loss_at(h) - loss_at(-h)) / (2.0 * h);
    let mut numeric = central(FD_STEP);
    let mut kink = false;
    if !close(analytic, numeric) {
        let fine = central(KINK_STEP);
        if !close(analytic, fine) {
            return Err(format!("analytic {analytic:e} vs numeric {numeric:e}"));
        }
        numeric = fine;
        kink = true;
    }
    let scale = analytic.abs().max(numeric.abs());
    let rel = if scale > ABS_FLOOR {
        (analytic - numeric).abs() / scale
    } else {
        0.0
    };
    Ok((rel, kink))
}

/// Worst relative error among derivatives that passed on the relative
/// bound, plus counts of kink fallbacks and absolute-floor passes.
#[derive(Clone, Copy, Debug, Default)]
pub struct CheckStats {
    pub worst: f64,
    pub kinks: usize,
    pub floor: usize,
    pub checked: usize,
}

impl CheckStats {
    pub fn add(&mut self, (rel, kink): (f64, bool)) {
        if rel > REL_TOL {
            self.floor += 1;
        } else {
            self.worst = self.worst.max(rel);
        }
        self.kinks += usize::from(kink);
        self.checked += 1;
    }
}

/// Central finite differences against the tape gradient of a scalar `f`.
pub fn gradcheck<F>(inputs: &[Tensor], f: F) -> Result<CheckStats, String>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).map_err(|e| e.to_string())?;
    let mut stats = CheckStats::default();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let loss_at = |d: f64| {
                let mut xs = inputs.to_vec();
                xs[k].data_mut()[j] += d;
                eval(&xs)
            };
            stats.add(fd_check(a, loss_at).map_err(|e| format!("input {k} element {j}: {e}"))?);
        }
    }
    Ok(stats)
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output element matters.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let w = uniform(&mut rng(seed), &shape, -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}
