//! Independent reference computations shared by the oracle and acceptance suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use captain_core::denoiser::{GaussianMixtureModel, MixtureDenoiser};
use captain_core::latent::Latent;
use captain_core::reference::{Candidate, Embedding, VectorIndex};
use captain_core::schedule::NoiseSchedule;
use captain_core::window::InjectionWindow;
use rustfft::num_complex::Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unitary 2-D DFT by the defining double sum.
pub fn direct_dft(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * PI * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                    acc += plane[y * w + x] * Complex64::from_polar(1.0, phase);
                }
            }
            out[ky * w + kx] = acc * norm;
        }
    }
    out
}

/// Max relative deviation, scaled by the larger spectrum's peak magnitude.
pub fn spectrum_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let peak = a.iter().chain(b).map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / peak
}

/// Window rules spelled out step by step over the raw lists.
pub fn literal_window(steps: &[usize], s: &[f64]) -> (InjectionWindow, bool) {
    let n = s.len();
    let mut mean = 0.0;
    for v in s {
        mean += v;
    }
    mean /= n as f64;
    let mut all_same = true;
    for v in s {
        if *v != s[0] {
            all_same = false;
        }
    }
    if all_same {
        return (InjectionWindow { t_low: 141, t_high: 341 }, true);
    }
    let mut high = None;
    for i in 0..n {
        if s[i] > mean {
            high = Some(i);
            break;
        }
    }
    let high = high.expect("a non-constant trace exceeds its mean somewhere");
    // gain at step j from step j-1
    let mut gains = Vec::new();
    for j in 1..n {
        gains.push((s[j] - s[j - 1]) / (steps[j - 1] - steps[j]) as f64);
    }
    let mut gm = 0.0;
    for g in &gains {
        gm += g;
    }
    gm /= gains.len() as f64;
    let mut var = 0.0;
    for g in &gains {
        var += (g - gm) * (g - gm);
    }
    let sd = (var / gains.len() as f64).sqrt();
    let mut low = n - 1;
    for j in 1..n {
        if j >= high && gains[j - 1] < gm - 1.5 * sd {
            low = j;
            break;
        }
    }
    let t_high = steps[high];
    (InjectionWindow { t_low: steps[low].min(t_high), t_high }, false)
}

/// Posterior mean by per-dimension Simpson quadrature of the isotropic mixture.
pub fn quadrature_posterior(gm: &GaussianMixtureModel, x_t: &Latent, ab: f64) -> Vec<f64> {
    let noise_var = 1.0 - ab;
    let dims = x_t.len();
    let comps = gm.components();
    let mut log_ev = Vec::new();
    let mut cond_means = Vec::new();
    for c in comps {
        let sd = c.variance.sqrt();
        let mut le = c.weight.ln();
        let mut means = Vec::with_capacity(dims);
        for d in 0..dims {
            let (mu, xt) = (c.mean.as_slice()[d], x_t.as_slice()[d]);
            let (lo, hi) = (mu - 12.0 * sd, mu + 12.0 * sd);
            let n = 4000;
            let hstep = (hi - lo) / n as f64;
            let (mut z, mut m) = (0.0, 0.0);
            for i in 0..=n {
                let x0 = lo + i as f64 * hstep;
                let wt = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let prior = (-(x0 - mu).powi(2) / (2.0 * c.variance)).exp() / (2.0 * PI * c.variance).sqrt();
                let like = (-(xt - ab.sqrt() * x0).powi(2) / (2.0 * noise_var)).exp() / (2.0 * PI * noise_var).sqrt();
                z += wt * prior * like;
                m += wt * prior * like * x0;
            }
            z *= hstep / 3.0;
            m *= hstep / 3.0;
            le += z.ln();
            means.push(m / z);
        }
        log_ev.push(le);
        cond_means.push(means);
    }
    let max = log_ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r: Vec<f64> = log_ev.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = r.iter().sum();
    (0..dims)
        .map(|d| r.iter().zip(&cond_means).map(|(ri, m)| ri / total * m[d]).sum())
        .collect()
}

pub fn point_mass_denoiser(x0: &Latent, sched: &NoiseSchedule) -> MixtureDenoiser {
    let gm = GaussianMixtureModel::new(vec![captain_core::denoiser::MixtureComponent {
        mean: x0.clone(),
        variance: 0.0,
        weight: 1.0,
    }])
    .unwrap();
    MixtureDenoiser::unguided(gm, sched.clone())
}

pub fn random_unit(r: &mut ChaCha8Rng, d: usize) -> Embedding {
    Embedding::normalize((0..d).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

/// Re-scores every candidate from raw vectors and bit counts; first maximum wins.
pub fn exhaustive_select(
    cands: &[Candidate],
    g: &Embedding,
    index: &VectorIndex,
    corpus: &[u64],
    lambdas: [f64; 3],
) -> (usize, Vec<[f64; 3]>) {
    let mut parts = Vec::new();
    for c in cands {
        let f = c.embedding.values();
        let h1: f64 = f.iter().zip(g.values()).map(|(a, b)| a * b).sum();
        let mut best = f64::NEG_INFINITY;
        for i in 0..index.len() {
            let dot: f64 = index.row(i).iter().zip(f).map(|(&r, q)| f64::from(r) * q).sum();
            if dot > best {
                best = dot;
            }
        }
        let h2 = 1.0 - best;
        let mut nearest = 64;
        for &p in corpus {
            let mut bits = 0;
            for b in 0..64 {
                if ((c.phash ^ p) >> b) & 1 == 1 {
                    bits += 1;
                }
            }
            nearest = nearest.min(bits);
        }
        let h3 = (nearest as f64 / 32.0).min(1.0);
        parts.push([h1, h2, h3]);
    }
    let mut winner = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in parts.iter().enumerate() {
        let total = lambdas[0] * p[0] + lambdas[1] * p[1] + lambdas[2] * p[2];
        if total > best {
            best = total;
            winner = i;
        }
    }
    (winner, parts)
}

/// Random candidate set, index and corpus; one planted candidate equals `g`
/// and carries a hash far from the corpus.
pub fn planted_trial(seed: u64) -> (Vec<Candidate>, Embedding, VectorIndex, Vec<u64>, usize) {
    let mut r = rng(seed);
    let d = 8;
    let g = random_unit(&mut r, d);
    let rows: Vec<Embedding> = (0..r.random_range(1..12)).map(|_| random_unit(&mut r, d)).collect();
    let index = VectorIndex::build(&rows).unwrap();
    let corpus: Vec<u64> = (0..r.random_range(1..6)).map(|_| r.random::<u64>() & 0xffff_ffff).collect();
    let n = r.random_range(2..20);
    let mut cands: Vec<Candidate> = (0..n)
        .map(|i| Candidate {
            id: format!("c{i}"),
            embedding: random_unit(&mut r, d),
            phash: r.random(),
            source: "trial".into(),
            upload_year: None,
        })
        .collect();
    let planted = r.random_range(0..=n);
    cands.insert(
        planted,
        Candidate {
            id: "planted".into(),
            embedding: g.clone(),
            phash: !corpus[0],
            source: "trial".into(),
            upload_year: None,
        },
    );
    (cands, g, index, corpus, planted)
}
