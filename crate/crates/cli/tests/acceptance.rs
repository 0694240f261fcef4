//! One line per acceptance criterion. Run with `cargo test --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

use captain_core::conditioning::CosineScorer;
use captain_core::formats::{decode_index, encode_index};
use captain_core::inject::{run_captain, run_vanilla, InjectionConfig, Providers};
use captain_core::latent::{Latent, SoftMap};
use captain_core::metrics::{
    ablation_sweep, align_analog, latent_digest, sscd_analog, AblationGrid, AblationRow, Scenario, SweepOptions,
};
use captain_core::reference::{composite_select, hamming, phash64, uniqueness_h3, GrayImage, VectorIndex, DEFAULT_LAMBDAS};
use captain_core::schedule::NoiseSchedule;
use captain_core::spatial::threshold_product;
use captain_core::spectral::{fft2, frequency_blend_init, make_frequency_masks, FrequencyMaskPair};
use captain_core::window::{find_window, SimilarityTrace};
use captain_core::world::{World, WorldConfig};
use common::*;

const SPECTRUM_TOL: f64 = 1e-5;
const ROUND_TRIP_TOL: f64 = 1e-4;
const MIN_WIN_RATE: f64 = 0.9;
const H2_TOL: f64 = 1e-6;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn frequency_init() -> Check {
    let mut r = rng(1);
    for n in [8, 32] {
        let eps = Latent::randn(4, n, n, &mut r);
        let xr = Latent::randn(4, n, n, &mut r);
        let all_low = FrequencyMaskPair::from_low(n, n, vec![1.0; n * n]).map_err(|e| e.to_string())?;
        let all_high = FrequencyMaskPair::from_low(n, n, vec![0.0; n * n]).map_err(|e| e.to_string())?;
        let lo = frequency_blend_init(&eps, &xr, &all_low).map_err(|e| e.to_string())?;
        let hi = frequency_blend_init(&eps, &xr, &all_high).map_err(|e| e.to_string())?;
        ensure(lo.max_abs_diff(&xr).unwrap() < 1e-12, format!("{n}: low=1 does not return x_r"))?;
        ensure(hi.max_abs_diff(&eps).unwrap() < 1e-12, format!("{n}: high=1 does not return eps"))?;
        let masks = make_frequency_masks(n, n, 0.25).map_err(|e| e.to_string())?;
        ensure(
            masks.low().iter().zip(masks.high()).all(|(l, h)| l + h == 1.0),
            format!("{n}: masks not complementary"),
        )?;
        let out = frequency_blend_init(&eps, &xr, &masks).map_err(|e| e.to_string())?;
        let plane = n * n;
        let mut worst: f64 = 0.0;
        for c in 0..4 {
            let sl = |l: &Latent| l.as_slice()[c * plane..(c + 1) * plane].to_vec();
            let fo = direct_dft(&sl(&out), n, n);
            let fe = direct_dft(&sl(&eps), n, n);
            let fr = direct_dft(&sl(&xr), n, n);
            let expect: Vec<_> = (0..plane).map(|i| masks.low()[i] * fr[i] + masks.high()[i] * fe[i]).collect();
            worst = worst.max(spectrum_rel_err(&fo, &expect));
            worst = worst.max(spectrum_rel_err(&fft2(&sl(&out), n, n), &fo));
        }
        ensure(worst < SPECTRUM_TOL, format!("{n}×{n} spectrum rel err {worst:e}"))?;
    }
    Ok("8×8 and 32×32 match the direct DFT".into())
}

fn sampler_round_trip() -> Check {
    let sched = NoiseSchedule::stable_diffusion(0.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let x0 = Latent::randn(4, 8, 8, &mut r);
        let den = point_mass_denoiser(&x0, &sched);
        let x_t = Latent::randn(4, 8, 8, &mut r);
        let out = captain_core::sampler::sample_vanilla(&den, &x_t, 1.0, &mut r).map_err(|e| e.to_string())?;
        worst = worst.max(out.max_abs_diff(&x0).unwrap());
    }
    ensure(worst <= ROUND_TRIP_TOL, format!("max abs error {worst:e}"))?;
    Ok(format!("100 seeds, max abs error {worst:.1e}"))
}

fn random_trace(seed: u64) -> SimilarityTrace {
    let mut r = rng(seed);
    let n = r.random_range(3..60);
    let mut steps: Vec<usize> = (0..n).map(|_| r.random_range(0..1000)).collect();
    steps.sort_unstable_by(|a, b| b.cmp(a));
    steps.dedup();
    if steps.len() < 3 {
        steps = vec![900, 500, 100];
    }
    let values: Vec<f64> = (0..steps.len()).map(|_| r.random::<f64>()).collect();
    SimilarityTrace::new(steps, values).unwrap()
}

fn window_finder() -> Check {
    for seed in 0..1000 {
        let tr = random_trace(77_000 + seed);
        let est = find_window(&tr).map_err(|e| e.to_string())?;
        let (w, defaulted) = literal_window(tr.timesteps(), tr.values());
        ensure((est.window, est.defaulted) == (w, defaulted), format!("trace {seed} differs from the scan"))?;
        let mut r = rng(88_000 + seed);
        let a = 2f64.powi(r.random_range(-3..4));
        let b = r.random_range(-8..8) as f64 / 8.0;
        let moved = SimilarityTrace::new(tr.timesteps().to_vec(), tr.values().iter().map(|v| a * v + b).collect()).unwrap();
        ensure(find_window(&moved).unwrap() == est, format!("trace {seed} not affine invariant"))?;
    }
    Ok("1000 traces equal the literal scan and are affine invariant".into())
}

fn world_scenario() -> World {
    World::build(WorldConfig::default()).unwrap()
}

fn mitigation() -> Check {
    let fixture: Value =
        serde_json::from_str(include_str!("../../core/tests/fixtures/mitigation_calibration.json")).unwrap();
    let margin = fixture["align_margin"].as_f64().unwrap();
    let w = world_scenario();
    let den = w.default_denoiser().map_err(|e| e.to_string())?;
    let (be, concept) = (w.be_provider(), w.concept_provider());
    let p = Providers { be: &be, concept: &concept, scorer: &CosineScorer };
    let (mut wins, mut va, mut ca) = (0, 0.0, 0.0);
    let seeds = 100;
    for seed in 0..seeds {
        let cfg = InjectionConfig { seed, ..Default::default() };
        let c = run_captain(&den, &w.reference, &w.conditioning, p, &cfg).map_err(|e| e.to_string())?;
        let v = run_vanilla(&den, w.shape(), &InjectionConfig::vanilla(seed)).map_err(|e| e.to_string())?;
        if sscd_analog(&c.final_latent, &w.mem_target).unwrap() < sscd_analog(&v, &w.mem_target).unwrap() {
            wins += 1;
        }
        ca += align_analog(&c.final_latent, &w.conditioning).unwrap();
        va += align_analog(&v, &w.conditioning).unwrap();
    }
    let (ca, va) = (ca / seeds as f64, va / seeds as f64);
    ensure(wins as f64 >= MIN_WIN_RATE * seeds as f64, format!("only {wins}/{seeds} paired wins"))?;
    ensure(va - ca <= margin, format!("align dropped {:.4} > {margin}", va - ca))?;
    Ok(format!("{wins}/{seeds} paired wins, align {va:.4} -> {ca:.4} (margin {margin})"))
}

fn delta_inertness() -> Check {
    let w = world_scenario();
    let den = w.default_denoiser().map_err(|e| e.to_string())?;
    let (be, concept) = (w.be_provider(), w.concept_provider());
    let scenario = Scenario {
        denoiser: &den,
        reference: &w.reference,
        mem_target: &w.mem_target,
        conditioning: &w.conditioning,
        providers: Providers { be: &be, concept: &concept, scorer: &CosineScorer },
    };
    let grid = AblationGrid { deltas: vec![0.1, 0.2], taus: vec![0.1], rows: vec![AblationRow::INIT_ONLY] };
    let seeds: Vec<u64> = (0..10).collect();
    let opts = SweepOptions { workers: 1, checkpoint_dir: None };
    let table = ablation_sweep(&InjectionConfig::default(), &grid, &seeds, &scenario, &opts).map_err(|e| e.to_string())?;
    for seed in &seeds {
        let digests: Vec<u64> = table
            .cells
            .iter()
            .filter(|c| c.cell.seed == *seed)
            .map(|c| c.metrics.as_ref().map(|m| m.latent_digest).ok_or("cell failed"))
            .collect::<Result<_, _>>()?;
        ensure(digests.len() == 2 && digests[0] == digests[1], format!("seed {seed} differs across δ"))?;
    }
    Ok("init-only latents identical for δ ∈ {0.1, 0.2} over 10 seeds".into())
}

fn zero_delta() -> Check {
    let w = world_scenario();
    let den = w.default_denoiser().map_err(|e| e.to_string())?;
    let (be, concept) = (w.be_provider(), w.concept_provider());
    let p = Providers { be: &be, concept: &concept, scorer: &CosineScorer };
    for seed in 0..20 {
        let cfg = InjectionConfig { seed, delta: 0.0, init: false, ..Default::default() };
        let c = run_captain(&den, &w.reference, &w.conditioning, p, &cfg).map_err(|e| e.to_string())?;
        let v = run_vanilla(&den, w.shape(), &InjectionConfig::vanilla(seed)).map_err(|e| e.to_string())?;
        ensure(latent_digest(&c.final_latent) == latent_digest(&v) && c.final_latent == v, format!("seed {seed} differs"))?;
    }
    Ok("20 seeds bit-identical to vanilla".into())
}

fn tau_monotone() -> Check {
    let taus = [0.1, 0.2, 0.3, 0.4, 0.5];
    for seed in 0..100 {
        let mut r = rng(5000 + seed);
        let n = r.random_range(2..24);
        let mut soft = || SoftMap::new(n, n, (0..n * n).map(|_| r.random::<f64>()).collect()).unwrap();
        let (be, concept) = (soft(), soft());
        let masks: Vec<Vec<bool>> = taus.iter().map(|&t| threshold_product(&be, &concept, t).unwrap()).collect();
        for pair in masks.windows(2) {
            ensure(pair[0].iter().zip(&pair[1]).all(|(lo, hi)| *lo || !*hi), format!("pair {seed} grows"))?;
        }
    }
    Ok("100 soft-map pairs non-increasing over τ".into())
}

fn selector() -> Check {
    let trials = 1000;
    for seed in 0..trials {
        let (cands, g, index, corpus, _) = planted_trial(seed);
        let sel = composite_select(&cands, &g, &index, &corpus, DEFAULT_LAMBDAS).map_err(|e| e.to_string())?;
        let (winner, _) = exhaustive_select(&cands, &g, &index, &corpus, DEFAULT_LAMBDAS);
        ensure(sel.winner == winner, format!("trial {seed}: {} vs oracle {winner}", sel.winner))?;
        let k = rng(seed).random_range(0.1..10.0);
        let scaled = DEFAULT_LAMBDAS.map(|l| l * k);
        let again = composite_select(&cands, &g, &index, &corpus, scaled).map_err(|e| e.to_string())?;
        ensure(again.winner == sel.winner, format!("trial {seed}: scaling by {k} moved the winner"))?;
    }
    Ok(format!("{trials} trials match the oracle and survive λ scaling"))
}

fn hashing_and_index() -> Check {
    for seed in 0..100 {
        let mut r = rng(9000 + seed);
        let (w, h) = (r.random_range(16..80), r.random_range(16..80));
        let img = GrayImage::new(w, h, (0..w * h).map(|_| r.random::<f64>()).collect()).unwrap();
        let a = r.random_range(0.01..100.0);
        ensure(phash64(&img) == phash64(&img.scaled(a)), format!("image {seed} changes hash under scale {a}"))?;
        let hsh = phash64(&img);
        ensure(uniqueness_h3(hsh, &[hsh]).unwrap() == 0.0, "identical image h3 is not 0")?;
        ensure(uniqueness_h3(hsh, &[!hsh]).unwrap() == 1.0 && hamming(hsh, !hsh) == 64, "distance 64 does not clip to 1")?;
    }
    let mut r = rng(31);
    let rows: Vec<_> = (0..10_000).map(|_| random_unit(&mut r, 16)).collect();
    let idx = VectorIndex::build(&rows).map_err(|e| e.to_string())?;
    let bytes = encode_index(&idx);
    let back = decode_index(&bytes).map_err(|e| e.to_string())?;
    ensure(encode_index(&back) == bytes && back.rows() == idx.rows(), "index round trip not bit exact")?;
    let mut worst: f64 = 0.0;
    for i in (0..10_000).step_by(997) {
        let (_, cos) = back.nearest(&back.embedding(i).unwrap()).unwrap();
        worst = worst.max((1.0 - cos).abs());
    }
    ensure(worst <= H2_TOL, format!("indexed h2 {worst:e}"))?;
    Ok(format!("100 images scale invariant, 10^4-row index bit exact, indexed h2 ≤ {worst:.1e}"))
}

fn cli() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_captain")).args(args).current_dir(p).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    };
    let json = |rel: &str| -> Result<Value, String> {
        serde_json::from_str(&fs::read_to_string(p.join(rel)).map_err(|e| format!("{rel}: {e}"))?).map_err(|e| e.to_string())
    };

    run(&["run", "--out", "run"])?;
    let report = json("run/result.json")?;
    for key in ["sscd_analog", "align_analog", "window_used", "trajectory", "config"] {
        ensure(report.get(key).is_some(), format!("result.json lacks {key}"))?;
    }
    ensure(fs::metadata(p.join("run/final_latent.caplat")).is_ok(), "no final latent")?;

    run(&["ablate", "--out", "ab", "--deltas", "0.1,0.2", "--num-seeds", "2"])?;
    let csv = fs::read_to_string(p.join("ab/ablation.csv")).map_err(|e| e.to_string())?;
    ensure(csv.lines().count() == 1 + 2 * 3 * 2, "ablation.csv has the wrong number of rows")?;
    ensure(json("ab/summary.json")?["failed"] == 0, "ablation cells failed")?;

    fs::create_dir_all(p.join("train")).unwrap();
    fs::create_dir_all(p.join("cands")).unwrap();
    for (dir, n, base) in [("train", 5, 0u64), ("cands", 4, 50)] {
        for i in 0..n {
            let mut r = rng(base + i);
            let img = image::GrayImage::from_fn(40, 32, |_, _| image::Luma([r.random::<u8>()]));
            img.save(p.join(format!("{dir}/{i}.png"))).unwrap();
        }
    }
    run(&["index", "build", "train", "--out", "train.capidx"])?;
    run(&["phash", "train/0.png", "train/1.png", "train/2.png", "--corpus-out", "train.capph"])?;
    run(&[
        "select-ref", "--query", "hippo", "--source-dir", "cands", "--index", "train.capidx", "--corpus", "train.capph",
        "--out", "sel",
    ])?;
    let sel = json("sel/selection.json")?;
    ensure(sel["scores"].as_array().map(Vec::len) == Some(4), "selection.json lacks four scores")?;
    ensure(sel["winner"].is_string(), "selection.json lacks a winner")?;
    Ok("run, ablate and select-ref exit 0 with complete artifacts".into())
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 10] = [
        ("frequency_init_identities", Duration::from_secs(5), frequency_init),
        ("sampler_round_trip", Duration::from_secs(30), sampler_round_trip),
        ("window_finder_oracle", Duration::from_secs(5), window_finder),
        ("mitigation_efficacy", Duration::from_secs(120), mitigation),
        ("delta_inertness", Duration::from_secs(60), delta_inertness),
        ("zero_delta_no_op", Duration::from_secs(60), zero_delta),
        ("tau_monotonicity", Duration::from_secs(5), tau_monotone),
        ("selector_correctness", Duration::from_secs(60), selector),
        ("hashing_and_index", Duration::from_secs(60), hashing_and_index),
        ("end_to_end_cli", Duration::from_secs(300), cli),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let verdict = match result {
            Ok(detail) if took <= budget => format!("PASS {name}: {detail} ({:.2}s)", took.as_secs_f64()),
            Ok(detail) => format!("FAIL {name}: {detail} but took {:.2}s > {}s", took.as_secs_f64(), budget.as_secs()),
            Err(why) => format!("FAIL {name}: {why}"),
        };
        if verdict.starts_with("FAIL") {
            failed += 1;
        }
        println!("{verdict}");
    }
    let total = suite.elapsed();
    // full-model figures need a real network and neural metrics; the checks above stand in for them
    if failed == 0 && total <= Duration::from_secs(300) {
        println!("PASS toy_scale_substitute_suite: all substitute checks hold ({:.2}s total)", total.as_secs_f64());
    } else {
        failed += 1;
        println!("FAIL toy_scale_substitute_suite: {failed} checks failed or over budget ({:.2}s total)", total.as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
