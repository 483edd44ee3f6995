//! Parameter processes that drive a series from one timestep to the next.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Noise {
    Gaussian { std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Noise::Gaussian { std } => std * rng.sample::<f64, _>(StandardNormal),
            Noise::Uniform { lo, hi } if hi > lo => rng.random_range(lo..hi),
            Noise::Uniform { lo, .. } => lo,
        }
    }
}

/// State vector plus the rule that advances it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TemporalProcess {
    /// `x ← max{0, A x + a₁ sin(t/p₁) + a₂ sin(t/p₂) + w}`.
    ArSinusoid {
        transition: Vec<Vec<f64>>,
        amplitudes: [f64; 2],
        periods: [f64; 2],
        noise: Noise,
        state: Vec<f64>,
    },
    /// `x ← x + w`, optionally floored.
    RandomWalk {
        noise: Noise,
        floor: Option<f64>,
        state: Vec<f64>,
    },
    /// `x ← x + Σ a_k sin(t/p_k) + w`, optionally floored.
    SinusoidWalk {
        amplitudes: Vec<f64>,
        periods: Vec<f64>,
        noise: Noise,
        floor: Option<f64>,
        state: Vec<f64>,
    },
    /// `x_k = max{0, base_k (1 + amplitude sin(2πt/period + φ_k)) + base_k w}`,
    /// a daily cycle with independent noise.
    Diurnal {
        base: Vec<f64>,
        amplitude: f64,
        period: f64,
        phases: Vec<f64>,
        noise: Noise,
        state: Vec<f64>,
    },
    /// Zipf profile `scale / rank^exponent` whose ranking drifts by random
    /// adjacent swaps.
    Popularity {
        ranks: Vec<usize>,
        exponent: f64,
        scale: f64,
        swap_prob: f64,
        state: Vec<f64>,
    },
}

impl TemporalProcess {
    /// Popularity process starting from `ranks` (a permutation of `1..=n`).
    pub fn popularity(ranks: Vec<usize>, exponent: f64, scale: f64, swap_prob: f64) -> Self {
        let state = zipf(&ranks, exponent, scale);
        TemporalProcess::Popularity {
            ranks,
            exponent,
            scale,
            swap_prob,
            state,
        }
    }

    /// Diurnal process at `t = 0` (noise-free).
    pub fn diurnal(
        base: Vec<f64>,
        amplitude: f64,
        period: f64,
        phases: Vec<f64>,
        noise: Noise,
    ) -> Self {
        let state = base
            .iter()
            .zip(&phases)
            .map(|(b, phi)| (b * (1.0 + amplitude * phi.sin())).max(0.0))
            .collect();
        TemporalProcess::Diurnal {
            base,
            amplitude,
            period,
            phases,
            noise,
            state,
        }
    }

    pub fn state(&self) -> &[f64] {
        match self {
            TemporalProcess::ArSinusoid { state, .. }
            | TemporalProcess::Diurnal { state, .. }
            | TemporalProcess::RandomWalk { state, .. }
            | TemporalProcess::SinusoidWalk { state, .. }
            | TemporalProcess::Popularity { state, .. } => state,
        }
    }

    /// Moves from step `t` to `t + 1`.
    pub fn advance<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) {
        let tf = t as f64;
        match self {
            TemporalProcess::ArSinusoid {
                transition,
                amplitudes,
                periods,
                noise,
                state,
            } => {
                let drift = amplitudes[0] * (tf / periods[0]).sin()
                    + amplitudes[1] * (tf / periods[1]).sin();
                let next: Vec<f64> = transition
                    .iter()
                    .map(|row| {
                        let ax: f64 = row.iter().zip(state.iter()).map(|(a, x)| a * x).sum();
                        (ax + drift + noise.sample(rng)).max(0.0)
                    })
                    .collect();
                *state = next;
            }
            TemporalProcess::RandomWalk {
                noise,
                floor,
                state,
            } => {
                for x in state.iter_mut() {
                    *x += noise.sample(rng);
                    if let Some(f) = floor {
                        *x = x.max(*f);
                    }
                }
            }
            TemporalProcess::SinusoidWalk {
                amplitudes,
                periods,
                noise,
                floor,
                state,
            } => {
                let drift: f64 = amplitudes
                    .iter()
                    .zip(periods.iter())
                    .map(|(a, p)| a * (tf / p).sin())
                    .sum();
                for x in state.iter_mut() {
                    *x += drift + noise.sample(rng);
                    if let Some(f) = floor {
                        *x = x.max(*f);
                    }
                }
            }
            TemporalProcess::Diurnal {
                base,
                amplitude,
                period,
                phases,
                noise,
                state,
            } => {
                let angle = std::f64::consts::TAU * (tf + 1.0) / *period;
                for ((x, b), phi) in state.iter_mut().zip(base.iter()).zip(phases.iter()) {
                    *x = (b * (1.0 + *amplitude * (angle + phi).sin()) + b * noise.sample(rng))
                        .max(0.0);
                }
            }
            TemporalProcess::Popularity {
                ranks,
                exponent,
                scale,
                swap_prob,
                state,
            } => {
                // position[r] = item holding rank r + 1
                let mut position = vec![0; ranks.len()];
                for (item, &r) in ranks.iter().enumerate() {
                    position[r - 1] = item;
                }
                for r in 0..position.len().saturating_sub(1) {
                    if rng.random::<f64>() < *swap_prob {
                        position.swap(r, r + 1);
                    }
                }
                for (r, &item) in position.iter().enumerate() {
                    ranks[item] = r + 1;
                }
                *state = zipf(ranks, *exponent, *scale);
            }
        }
    }
}

fn zipf(ranks: &[usize], exponent: f64, scale: f64) -> Vec<f64> {
    ranks
        .iter()
        .map(|&r| scale / (r as f64).powf(exponent))
        .collect()
}

/// Symmetric `V diag(λ) Vᵀ` with `λ_i ∼ U(lo, hi)` and `V` orthonormalized
/// from standard normal draws by Gram–Schmidt.
pub fn stable_transition<R: Rng + ?Sized>(
    n: usize,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let lambda: Vec<f64> = (0..n)
        .map(|_| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        })
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for u in &basis {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // a draw numerically inside the current span is simply redrawn
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| basis[k][i] * lambda[k] * basis[k][j]).sum())
                .collect()
        })
        .collect()
}
