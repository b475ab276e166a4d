//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use dyndepth::costvolume::{
    consistency_mask, cvam_mask, downsample_cvam, multi_frame_depth, MultiFrameConfig, ProbabilityVolume,
};
use dyndepth::dynmask::dynamic_mask;
use dyndepth::geometry::{inverse_warp, CameraModel, RigidPose};
use dyndepth::metrics::{evaluate, EvalOptions};
use dyndepth::optimizer::{
    finite_difference_gradient, full_grid, fusion_target, initial_depth, keep_mask, photometric_gradient,
    photometric_state, run_ablation, AblationConfig, AblationRow, Components, RefineConfig,
};
use dyndepth::seu::{fuse_depth, uncertainty_from_volume, SeuParams, UncertaintyField};
use dyndepth::synth::{covisibility_mask, generate_triplet, preset, ScenePreset};
use dyndepth::{BinaryMask, DepthMap, ImageGrid, LossMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn seconds(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn warp_identity() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatched = 0usize;
    let mut invalid = 0usize;
    for _ in 0..50 {
        let h = rng.random_range(8..48);
        let w = rng.random_range(8..48);
        let ch = if rng.random() { 3 } else { 1 };
        let src = ImageGrid::new(h, w, ch, (0..h * w * ch).map(|_| rng.random()).collect()).unwrap();
        let depth = DepthMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.5..50.0)).collect()).unwrap();
        let cam = CameraModel::new(
            rng.random_range(20.0..120.0),
            rng.random_range(20.0..120.0),
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
        )
        .unwrap();
        let out = inverse_warp(&src, &depth, &RigidPose::identity(), &cam).unwrap();
        for i in 0..h * w {
            if !out.validity.is_set(i) {
                invalid += 1;
                continue;
            }
            let a = &out.image.data()[i * ch..(i + 1) * ch];
            let b = &src.data()[i * ch..(i + 1) * ch];
            if a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) {
                mismatched += 1;
            }
        }
    }
    let dt = t0.elapsed();
    outcome(
        mismatched == 0 && invalid == 0 && dt < Duration::from_secs(1),
        format!("50 images, {mismatched} mismatched, {invalid} invalid, {:.3}s", seconds(dt)),
    )
}

fn gradient_oracle() -> Outcome {
    let t0 = Instant::now();
    let cfg = RefineConfig::default();
    let weights = cfg.weights();
    let mut worst = 1.0f64;
    for seed in 0..20 {
        let t = generate_triplet(&preset(ScenePreset::Dynamic, seed)).unwrap();
        let depth = initial_depth(seed, &t.gt_depth, 1.2, 0.02).unwrap();
        let state = photometric_state(&depth, &t, weights.alpha).unwrap();
        let mask = keep_mask(&state, true, cfg.beta).unwrap();
        let analytic = photometric_gradient(&depth, &t, &mask, weights.gamma).unwrap();
        let numeric = finite_difference_gradient(&depth, &t, &mask, &weights, cfg.fd_step).unwrap();
        let valid = state.reprojection.both_invalid.inverted();
        let (mut ok, mut n) = (0usize, 0usize);
        for i in 0..valid.data().len() {
            if !valid.is_set(i) {
                continue;
            }
            n += 1;
            let (a, b) = (analytic.data()[i], numeric.data()[i]);
            if (a - b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-12) {
                ok += 1;
            }
        }
        worst = worst.min(ok as f64 / n as f64);
    }
    let dt = t0.elapsed();
    outcome(
        worst >= 0.99 && dt < Duration::from_secs(120),
        format!("20 scenes, worst agreement {:.4}, {:.1}s", worst, seconds(dt)),
    )
}

fn region_rates(mask: &BinaryMask, oracle: &BinaryMask) -> (f64, f64) {
    let (mut rec, mut nd, mut fm, mut ns) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..mask.data().len() {
        let masked = !mask.is_set(i);
        if oracle.is_set(i) {
            nd += 1;
            rec += usize::from(masked);
        } else {
            ns += 1;
            fm += usize::from(masked);
        }
    }
    (rec as f64 / nd as f64, fm as f64 / ns as f64)
}

fn dynamic_mask_correctness() -> Outcome {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let (mut min_recall, mut max_false, mut max_frac) = (1.0f64, 0.0f64, 0.0f64);
    for seed in 0..10 {
        let t = generate_triplet(&preset(ScenePreset::Dynamic, seed)).unwrap();
        let (h, w) = t.shape();
        let state = photometric_state(&t.gt_depth, &t, RefineConfig::default().weights().alpha).unwrap();
        let m = dynamic_mask(&state.losses, 0.8).unwrap();
        let frac = m.zero_fraction();
        let (recall, false_rate) = region_rates(&m, &t.dynamic_oracle);
        if frac > 0.2 + 1.0 / (h * w) as f64 + 1e-12 || recall < 0.5 || false_rate > 0.4 {
            fails.push(seed);
        }
        min_recall = min_recall.min(recall);
        max_false = max_false.max(false_rate);
        max_frac = max_frac.max(frac);
    }
    let dt = t0.elapsed();
    outcome(
        fails.is_empty() && dt < Duration::from_secs(30),
        format!(
            "max masked {max_frac:.3}, min recall {min_recall:.3}, max static false {max_false:.3}, failing seeds {fails:?}, {:.2}s",
            seconds(dt)
        ),
    )
}

fn rescaling_invariance() -> Outcome {
    let mut compared = 0usize;
    let mut differing = 0usize;
    for seed in 0..5 {
        let t = generate_triplet(&preset(ScenePreset::Dynamic, seed)).unwrap();
        let (h, w) = t.shape();
        for alpha in [0.0, 0.85] {
            let losses = photometric_state(&t.gt_depth, &t, alpha).unwrap().losses;
            let mapped = LossMap::new(h, w, 2, losses.data().iter().map(|x| 3.0 * x + 1.0).collect()).unwrap();
            for beta in [0.05, 0.1, 0.25, 0.5, 0.75, 0.8, 0.9, 0.95, 0.99, 1.0] {
                let a = dynamic_mask(&losses, beta).unwrap();
                let b = dynamic_mask(&mapped, beta).unwrap();
                compared += 1;
                differing += usize::from(a != b);
            }
        }
    }
    outcome(differing == 0, format!("{compared} masks over 5 seeds, {differing} differ"))
}

fn cvam() -> Outcome {
    let mut notes = Vec::new();
    let t = generate_triplet(&preset(ScenePreset::Dynamic, 0)).unwrap();
    let (h, w) = t.shape();
    let cfg = MultiFrameConfig::default();
    let same = multi_frame_depth(&t.center, &t.center, &t.pose_to_prev, &t.camera, &cfg).unwrap();
    let all_zero = same.m_cost.count_ones() == 0 && same.m_down.count_ones() == 0 && same.degenerate;
    if !all_zero {
        notes.push("identical frames kept pixels".to_string());
    }

    let mut cases = 0;
    for &(r, c) in &[(0, 0), (h - 1, w - 1), (13, 37), (31, 2), (5, w - 3)] {
        let mut data = t.center.data().to_vec();
        data[r * w + c] = (data[r * w + c] + 0.5) % 1.0;
        let other = ImageGrid::new(h, w, 1, data).unwrap();
        let m_cost = cvam_mask(&consistency_mask(&t.center, &other, cfg.tau_eq).unwrap());
        for scale in 0..=2u32 {
            let f = 1usize << scale;
            let (dh, dw) = (h.div_ceil(f), w.div_ceil(f));
            let expected = BinaryMask::from_fn(dh, dw, |br, bc| br == r / f && bc == c / f);
            let got = downsample_cvam(&m_cost, scale).unwrap();
            cases += 1;
            if got != expected {
                notes.push(format!("pixel ({r},{c}) scale {scale} mismatch"));
            }
        }
    }
    let detail = if notes.is_empty() {
        format!("identical frames fully excluded, {cases} one-pixel cases exact")
    } else {
        notes.join("; ")
    };
    outcome(notes.is_empty(), detail)
}

fn plane_sweep() -> Outcome {
    let t0 = Instant::now();
    let cfg = MultiFrameConfig::default();
    let mut worst = (1.0f64, String::new());
    let mut slowest = Duration::ZERO;
    for kind in [ScenePreset::Plane, ScenePreset::Static] {
        for seed in 0..10 {
            let spec = preset(kind, seed);
            let t = generate_triplet(&spec).unwrap();
            // in bounds of the source at the true depth and not occluded there
            let in_view = inverse_warp(&t.prev, &t.gt_depth, &t.pose_to_prev, &t.camera).unwrap().validity;
            let valid = covisibility_mask(&spec, spec.center_frame - 1).unwrap().and(&in_view).unwrap();
            let s0 = Instant::now();
            let out = multi_frame_depth(&t.center, &t.prev, &t.pose_to_prev, &t.camera, &cfg).unwrap();
            slowest = slowest.max(s0.elapsed());
            let (range_lo, range_hi) = out.hypotheses.range();
            let (mut ok, mut n) = (0usize, 0usize);
            for (i, &g) in t.gt_depth.data().iter().enumerate() {
                if !valid.is_set(i) || g < range_lo || g > range_hi {
                    continue;
                }
                n += 1;
                ok += usize::from((out.depth.data()[i] - g).abs() <= out.hypotheses.spacing_at(g));
            }
            let frac = ok as f64 / n as f64;
            if frac < worst.0 {
                worst = (frac, format!("{kind:?} seed {seed}"));
            }
        }
    }
    let dt = t0.elapsed();
    outcome(
        worst.0 >= 0.95 && slowest < Duration::from_secs(60),
        format!(
            "20 scenes, worst {:.4} ({}), slowest sweep {:.3}s, total {:.1}s",
            worst.0,
            worst.1,
            seconds(slowest),
            seconds(dt)
        ),
    )
}

/// Magnitude-spectrum entropy of one distribution by a direct DFT.
fn entropy_by_dft(p: &[f64], eps: f64) -> f64 {
    let n = p.len();
    let mags: Vec<f64> = (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in p.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re.hypot(im)
        })
        .collect();
    let total: f64 = mags.iter().sum();
    -mags.iter().map(|m| m / total).map(|q| q * (q + eps).ln()).sum::<f64>()
}

fn volume(bins: usize, h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ProbabilityVolume {
    let mut data = vec![0.0; bins * h * w];
    for b in 0..bins {
        for i in 0..h * w {
            data[b * h * w + i] = f(b, i);
        }
    }
    ProbabilityVolume::new(bins, h, w, data).unwrap()
}

fn seu_analytics() -> Outcome {
    let mut notes = Vec::new();
    let params = SeuParams::default();
    let n = 32;
    let ln_n = (n as f64).ln();
    let uniform = volume(n, 2, 3, |_, _| 1.0 / n as f64);
    let (hu, _) = uncertainty_from_volume(&uniform, &params).unwrap();
    let max_uniform = hu.data().iter().cloned().fold(0.0, f64::max);
    if max_uniform > 1e-6 {
        notes.push(format!("uniform H {max_uniform:e}"));
    }
    let one_hot = volume(n, 4, 8, |b, i| f64::from(u8::from(b == i % n)));
    let (ho, _) = uncertainty_from_volume(&one_hot, &params).unwrap();
    let dev = ho.data().iter().map(|h| (h - ln_n).abs()).fold(0.0, f64::max);
    if dev > 1e-6 {
        notes.push(format!("one-hot |H - ln N| {dev:e}"));
    }

    // every volume of the plane-sweep and SEU suites
    let cfg = MultiFrameConfig::default();
    let (mut pixels, mut out_of_bounds, mut dft_dev) = (0usize, 0usize, 0.0f64);
    for kind in [ScenePreset::Plane, ScenePreset::Static, ScenePreset::Dynamic] {
        for seed in 0..10 {
            let t = generate_triplet(&preset(kind, seed)).unwrap();
            for cvam in [false, true] {
                let c = MultiFrameConfig { cvam, ..cfg };
                let out = multi_frame_depth(&t.center, &t.prev, &t.pose_to_prev, &t.camera, &c).unwrap();
                let (h, u) = uncertainty_from_volume(&out.probability, &params).unwrap();
                for (&e, &ui) in h.data().iter().zip(u.data()) {
                    pixels += 1;
                    if !(e >= 0.0 && e <= ln_n + 1e-9 && (0.0..=1.0).contains(&ui)) {
                        out_of_bounds += 1;
                    }
                }
                let mut col = vec![0.0; out.probability.bins()];
                for px in (0..h.data().len()).step_by(397) {
                    out.probability.column_into(px, &mut col);
                    dft_dev = dft_dev.max((entropy_by_dft(&col, params.epsilon).max(0.0) - h.data()[px]).abs());
                }
            }
        }
    }
    if out_of_bounds > 0 {
        notes.push(format!("{out_of_bounds} pixels outside [0, ln N]"));
    }
    if dft_dev > 1e-9 {
        notes.push(format!("entropy differs from a direct DFT by {dft_dev:e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (h, w) = (16, 24);
    let a = DepthMap::new(h, w, (0..h * w).map(|_| rng.random_range(1.0..80.0)).collect()).unwrap();
    let b = DepthMap::new(h, w, (0..h * w).map(|_| rng.random_range(1.0..80.0)).collect()).unwrap();
    let zeros = UncertaintyField::constant(h, w, 0.0).unwrap();
    let ones = UncertaintyField::constant(h, w, 1.0).unwrap();
    let mixed = UncertaintyField::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap();
    let endpoints = fuse_depth(&a, &b, &zeros).unwrap() == a && fuse_depth(&a, &b, &ones).unwrap() == b;
    let fused = fuse_depth(&a, &b, &mixed).unwrap();
    let inside = fused
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .all(|(&f, (&x, &y))| f >= x.min(y) && f <= x.max(y));
    if !(endpoints && inside) {
        notes.push("fusion outside its endpoints".into());
    }
    let detail = format!(
        "uniform H {max_uniform:.1e}, one-hot dev {dev:.1e}, {pixels} volume pixels, {out_of_bounds} out of bounds, DFT dev {dft_dev:.1e}{}",
        if notes.is_empty() { String::new() } else { format!(": {}", notes.join("; ")) }
    );
    outcome(notes.is_empty(), detail)
}

fn seu_direction() -> Outcome {
    let mut margins = Vec::new();
    for seed in 0..10 {
        let t = generate_triplet(&preset(ScenePreset::Dynamic, seed)).unwrap();
        let target = fusion_target(&t, &MultiFrameConfig::default(), &SeuParams::default()).unwrap();
        let (mut a, mut na, mut b, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for (i, u) in target.uncertainty.data().iter().enumerate() {
            if t.dynamic_oracle.is_set(i) {
                a += u;
                na += 1;
            } else {
                b += u;
                nb += 1;
            }
        }
        margins.push(a / na as f64 - b / nb as f64);
    }
    let min = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(min > 0.0, format!("10 seeds, smallest sprite-minus-background mean U {min:+.4}"))
}

fn static_abs_rel(row: &AblationRow) -> f64 {
    row.refined.static_region.expect("static pixels exist").abs_rel
}

fn ablation_direction() -> Outcome {
    let t0 = Instant::now();
    let scenes: Vec<_> = (0..10).map(|s| (s, preset(ScenePreset::Dynamic, s))).collect();
    let rows = run_ablation(&scenes, &full_grid(), &AblationConfig::default()).unwrap();
    let dt = t0.elapsed();
    let find = |seed: u64, c: Components| {
        rows.iter()
            .find(|r| r.seed == seed && r.components == c)
            .map(static_abs_rel)
            .unwrap()
    };
    let dm_only = Components {
        dm: true,
        ..Components::BASELINE
    };
    let gains: Vec<f64> = (0..10).map(|s| find(s, Components::BASELINE) - find(s, dm_only)).collect();
    let mean_of = |c| (0..10).map(|s| find(s, c)).sum::<f64>() / 10.0;
    let (base, full) = (mean_of(Components::BASELINE), mean_of(Components::FULL));
    let min_gain = gains.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        min_gain > 0.0 && full <= base && dt < Duration::from_secs(600),
        format!(
            "smallest DM gain {min_gain:.4}, mean static AbsRel baseline {base:.4} full {full:.4}, {} rows, {:.0}s",
            rows.len(),
            seconds(dt)
        ),
    )
}

fn metrics_conformance() -> Outcome {
    let gt = DepthMap::from_fn(8, 8, |r, c| 1.0 + r as f64 * 3.0 + c as f64 * 0.7).unwrap();
    let opts = EvalOptions::default();
    let perfect = evaluate(&gt, &gt, None, opts).unwrap().as_array() == [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let scaled = DepthMap::new(8, 8, gt.data().iter().map(|v| v * 1.25).collect()).unwrap();
    let strict = evaluate(&scaled, &gt, None, opts).unwrap().delta1 == 0.0;
    let far = DepthMap::from_fn(8, 8, |r, c| if r < 4 { gt.get(r, c) } else { 95.0 }).unwrap();
    let wild = DepthMap::from_fn(8, 8, |r, c| if r < 4 { gt.get(r, c) } else { 3.0 }).unwrap();
    let capped = evaluate(&wild, &far, None, opts).unwrap().abs_rel == 0.0;
    outcome(
        perfect && strict && capped,
        format!("perfect {perfect}, strict delta {strict}, 80 m cap {capped}"),
    )
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dyndepth"))
}

fn dyndepth(args: &[&str], dir: &Path) -> (i32, Vec<u8>) {
    let out = Command::new(bin()).args(args).current_dir(dir).output().unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Runs the full command sequence in `dir`, returning every file and the
/// stdout of each command.
fn cli_session(dir: &Path) -> (BTreeMap<PathBuf, Vec<u8>>, Vec<(i32, Vec<u8>)>) {
    std::fs::write(dir.join("masks.json"), r#"{"bundle": "bundle"}"#).unwrap();
    std::fs::write(
        dir.join("refine.json"),
        r#"{"bundle": "bundle", "seu": true, "refine": {"iterations": 15}}"#,
    )
    .unwrap();
    std::fs::write(
        dir.join("ablate.json"),
        r#"{"scenes": 2, "grid": [{"dm": false, "cvam": false, "seu": false}, {"dm": true, "cvam": true, "seu": true}],
            "ablation": {"refine": {"iterations": 10}}}"#,
    )
    .unwrap();
    let runs = vec![
        dyndepth(&["synth", "--seed", "4", "--out", "bundle"], dir),
        dyndepth(&["masks", "--config", "masks.json", "--out", "masks", "--beta", "0.75"], dir),
        dyndepth(&["refine", "--config", "refine.json", "--seed", "9", "--out", "refined", "--gamma", "0.05"], dir),
        dyndepth(
            &["eval", "refined/depth.pfm", "bundle/gt_depth.pfm", "--median-scale", "--out", "eval"],
            dir,
        ),
        dyndepth(&["ablate", "--config", "ablate.json", "--seed", "3", "--jobs", "2", "--out", "ablation"], dir),
    ];
    (snapshot(dir), runs)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (files_a, runs_a) = cli_session(a.path());
    let (files_b, runs_b) = cli_session(b.path());
    let codes: Vec<i32> = runs_a.iter().map(|r| r.0).collect();
    let differing: Vec<_> = files_a
        .iter()
        .filter(|(k, v)| files_b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same = files_a.len() == files_b.len() && differing.is_empty() && runs_a == runs_b;
    outcome(
        same && codes.iter().all(|&c| c == 0),
        format!(
            "5 commands, exit codes {codes:?}, {} files compared, differing {differing:?}",
            files_a.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("warp identity", warp_identity),
        ("gradient oracle", gradient_oracle),
        ("dynamic mask", dynamic_mask_correctness),
        ("monotone rescaling", rescaling_invariance),
        ("cost-volume auto-mask", cvam),
        ("plane sweep", plane_sweep),
        ("entropy analytics", seu_analytics),
        ("uncertainty direction", seu_direction),
        ("ablation direction", ablation_direction),
        ("metrics conformance", metrics_conformance),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {:<22} {}  {}",
            k + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
