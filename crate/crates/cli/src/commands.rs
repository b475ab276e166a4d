//! The five subcommands.

use std::path::PathBuf;

use dyndepth::costvolume::{consistency_mask, cvam_mask, downsample_cvam, MultiFrameConfig};
use dyndepth::dynmask::dynamic_mask_with_thresholds;
use dyndepth::metrics::{evaluate, region_split_evaluate, DepthMetrics, EvalOptions, RegionMetrics, CSV_HEADER};
use dyndepth::optimizer::{
    ablation_csv, fusion_target, initial_depth, photometric_state, refine_depth_with_fusion, run_ablation,
    AblationConfig, AblationRow, Components, RefineConfig, RefineStatus,
};
use dyndepth::seu::{fuse_depth, SeuParams};
use dyndepth::synth::{generate_triplet, preset, SceneSpec, ScenePreset};
use dyndepth::{io, BinaryMask};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{load_bundle, load_mask, write_bundle};
use crate::config::{self, base_dir, ensure_dir, resolve, to_json, write_json, write_text};
use crate::{AblateArgs, CliError, CliResult, EvalArgs, MasksArgs, RefineArgs, SynthArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Scene family rendered from the seed; `dynamic` when neither this nor
    /// `scene` is given.
    pub preset: Option<ScenePreset>,
    pub seed: Option<u64>,
    /// Explicit scene, used as is.
    pub scene: Option<SceneSpec>,
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let cfg: SynthConfig = match &args.config {
        Some(p) => config::load(p)?,
        None => SynthConfig::default(),
    };
    let (spec, seed) = match (cfg.scene, cfg.preset) {
        (Some(_), Some(_)) => return Err(usage("config: give either `preset` or `scene`, not both")),
        (Some(spec), None) => (spec, None),
        (None, kind) => {
            let seed = args.seed.or(cfg.seed).unwrap_or(0);
            (preset(kind.unwrap_or(ScenePreset::Dynamic), seed), Some(seed))
        }
    };
    let triplet = generate_triplet(&spec)?;
    write_bundle(&args.out, &spec, &triplet, seed)?;
    Ok(())
}

fn default_beta() -> f64 {
    0.8
}

fn default_alpha() -> f64 {
    0.85
}

fn default_tau_eq() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasksConfig {
    pub bundle: PathBuf,
    /// Depth (PFM) at which the losses are computed; ground truth if absent.
    #[serde(default)]
    pub depth: Option<PathBuf>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// SSIM weight of the photometric error.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau_eq")]
    pub tau_eq: f64,
    /// Feature pyramid level for the pooled cost-volume mask.
    #[serde(default)]
    pub scale: u32,
}

#[derive(Debug, Serialize)]
struct MaskStats {
    beta: f64,
    alpha: f64,
    thresholds: [f64; 2],
    dynamic_masked_fraction: f64,
    /// Share of oracle (moving) pixels the dynamic mask removes.
    oracle_recall: Option<f64>,
    /// Share of static pixels the dynamic mask removes.
    static_false_rate: Option<f64>,
    tau_eq: f64,
    scale: u32,
    cvam_masked_fraction: f64,
    cvam_masked_fraction_down: f64,
}

/// Share of pixels in `region` (or all) where `mask` is 0.
fn masked_share(mask: &BinaryMask, region: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut n, mut hit) = (0usize, 0usize);
    for i in 0..mask.data().len() {
        if region(i) {
            n += 1;
            hit += usize::from(!mask.is_set(i));
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

pub fn masks(args: &MasksArgs) -> CliResult<()> {
    let mut cfg: MasksConfig = config::load(&args.config)?;
    if let Some(b) = args.beta {
        cfg.beta = b;
    }
    let base = base_dir(&args.config);
    let (_, triplet) = load_bundle(&resolve(&base, &cfg.bundle))?;
    let depth = match &cfg.depth {
        Some(p) => io::load_pfm(&resolve(&base, p))?,
        None => triplet.gt_depth.clone(),
    };
    let state = photometric_state(&depth, &triplet, cfg.alpha)?;
    let dm = dynamic_mask_with_thresholds(&state.losses, cfg.beta)?;
    let m_cost = cvam_mask(&consistency_mask(&triplet.center, &triplet.prev, cfg.tau_eq)?);
    let m_down = downsample_cvam(&m_cost, cfg.scale)?;

    let oracle = &triplet.dynamic_oracle;
    let stats = MaskStats {
        beta: cfg.beta,
        alpha: cfg.alpha,
        thresholds: dm.thresholds,
        dynamic_masked_fraction: dm.mask.zero_fraction(),
        oracle_recall: masked_share(&dm.mask, |i| oracle.is_set(i)),
        static_false_rate: masked_share(&dm.mask, |i| !oracle.is_set(i)),
        tau_eq: cfg.tau_eq,
        scale: cfg.scale,
        cvam_masked_fraction: m_cost.zero_fraction(),
        cvam_masked_fraction_down: m_down.zero_fraction(),
    };

    let out = &args.out;
    ensure_dir(out)?;
    let (h, w) = triplet.shape();
    io::save_pgm(&dm.mask.to_image(), &out.join("dynamic_mask.pgm"))?;
    io::save_pgm(&m_cost.to_image(), &out.join("cvam_mask.pgm"))?;
    io::save_pgm(&m_down.to_image(), &out.join("cvam_mask_down.pgm"))?;
    io::save_pfm_raster(h, w, state.losses.channel(0), &out.join("loss_prev.pfm"))?;
    io::save_pfm_raster(h, w, state.losses.channel(1), &out.join("loss_next.pfm"))?;
    write_json(&out.join("stats.json"), &stats)
}

fn default_init_scale() -> f64 {
    AblationConfig::default().init_scale
}

fn default_init_jitter() -> f64 {
    AblationConfig::default().init_jitter
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineJob {
    pub bundle: PathBuf,
    /// Seed of the initial-depth jitter; defaults to the bundle's seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Starting depth (PFM); a jittered multiple of ground truth if absent.
    #[serde(default)]
    pub initial: Option<PathBuf>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_init_jitter")]
    pub init_jitter: f64,
    #[serde(default)]
    pub refine: RefineConfig,
    /// Blend the plane-sweep depth into the objective by its uncertainty.
    #[serde(default)]
    pub seu: bool,
    #[serde(default)]
    pub multi: MultiFrameConfig,
    #[serde(default)]
    pub seu_params: SeuParams,
}

#[derive(Debug, Serialize)]
struct FusionReport {
    multi: RegionMetrics,
    fused: RegionMetrics,
    mean_uncertainty: f64,
}

#[derive(Debug, Serialize)]
struct RefineSummary {
    seed: u64,
    status: RefineStatus,
    iterations_run: usize,
    initial_loss: f64,
    final_loss: f64,
    initial: RegionMetrics,
    refined: RegionMetrics,
    fusion: Option<FusionReport>,
    config: RefineConfig,
}

#[derive(Debug, Serialize)]
struct LossTrace<'a> {
    loss: &'a [f64],
}

fn region_csv(m: &RegionMetrics) -> String {
    let mut s = format!("region,{CSV_HEADER}\n");
    for (name, side) in [("static", &m.static_region), ("dynamic", &m.dynamic_region)] {
        if let Some(x) = side {
            s.push_str(&format!("{name},{}\n", x.to_csv_row()));
        }
    }
    s
}

pub fn refine(args: &RefineArgs) -> CliResult<()> {
    let mut job: RefineJob = config::load(&args.config)?;
    if let Some(b) = args.beta {
        job.refine.beta = b;
    }
    if let Some(g) = args.gamma {
        job.refine.gamma = g;
    }
    if let Some(c) = args.cap {
        job.refine.depth_cap = c;
    }
    job.refine.validate()?;
    let base = base_dir(&args.config);
    let (manifest, triplet) = load_bundle(&resolve(&base, &job.bundle))?;
    let seed = args.seed.or(job.seed).or(manifest.seed).unwrap_or(0);
    let initial = match &job.initial {
        Some(p) => io::load_pfm(&resolve(&base, p))?,
        None => initial_depth(seed, &triplet.gt_depth, job.init_scale, job.init_jitter)?,
    };
    let target = if job.seu {
        Some(fusion_target(&triplet, &job.multi, &job.seu_params)?)
    } else {
        None
    };
    let report = refine_depth_with_fusion(&initial, &triplet, &job.refine, target.as_ref())?;

    let opts = EvalOptions {
        cap: job.refine.depth_cap,
        median_scale: false,
    };
    let oracle = &triplet.dynamic_oracle;
    let out = &args.out;
    ensure_dir(out)?;
    let fusion = match &target {
        Some(t) => {
            let fused = fuse_depth(&t.d_multi, &report.depth, &t.uncertainty)?;
            let (h, w) = triplet.shape();
            io::save_pfm(&t.d_multi, &out.join("multi_depth.pfm"))?;
            io::save_pfm_raster(h, w, t.uncertainty.data(), &out.join("uncertainty.pfm"))?;
            io::save_pfm(&fused, &out.join("fused_depth.pfm"))?;
            Some(FusionReport {
                multi: region_split_evaluate(&t.d_multi, &triplet.gt_depth, oracle, opts)?,
                fused: region_split_evaluate(&fused, &triplet.gt_depth, oracle, opts)?,
                mean_uncertainty: t.uncertainty.mean(),
            })
        }
        None => None,
    };
    let trace = &report.loss_trace;
    let summary = RefineSummary {
        seed,
        status: report.status,
        iterations_run: report.iterations_run,
        initial_loss: trace.first().copied().unwrap_or(f64::NAN),
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        initial: region_split_evaluate(&initial, &triplet.gt_depth, oracle, opts)?,
        refined: report.metrics,
        fusion,
        config: job.refine,
    };
    io::save_pfm(&report.depth, &out.join("depth.pfm"))?;
    io::save_pgm(&report.final_mask.to_image(), &out.join("final_mask.pgm"))?;
    write_json(&out.join("loss_trace.json"), &LossTrace { loss: trace })?;
    write_text(&out.join("metrics.csv"), &region_csv(&report.metrics))?;
    write_json(&out.join("report.json"), &summary)?;
    if report.status == RefineStatus::Diverged {
        return Err(CliError::Diverged {
            iterations: report.iterations_run,
            out: out.clone(),
        });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    cap: f64,
    median_scale: bool,
    metrics: DepthMetrics,
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let pred = io::load_pfm(&args.pred)?;
    let gt = io::load_pfm(&args.gt)?;
    let valid = args.valid.as_deref().map(load_mask).transpose()?;
    let opts = EvalOptions {
        cap: args.cap.unwrap_or(dyndepth::metrics::DEFAULT_CAP),
        median_scale: args.median_scale,
    };
    let metrics = evaluate(&pred, &gt, valid.as_ref(), opts)?;
    let report = EvalReport {
        cap: opts.cap,
        median_scale: opts.median_scale,
        metrics,
    };
    let text = to_json(&report);
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_text(&out.join("metrics.json"), &text)?;
        write_text(&out.join("metrics.csv"), &format!("{CSV_HEADER}\n{}\n", metrics.to_csv_row()))?;
    }
    print!("{text}");
    Ok(())
}

fn default_scene_count() -> usize {
    10
}

fn default_preset() -> ScenePreset {
    ScenePreset::Dynamic
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    /// Explicit scene seeds; otherwise `scenes` consecutive seeds from
    /// `first_seed`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default = "default_scene_count")]
    pub scenes: usize,
    #[serde(default = "default_preset")]
    pub preset: ScenePreset,
    /// Component settings to run; all eight when absent.
    #[serde(default)]
    pub grid: Option<Vec<Components>>,
    #[serde(default)]
    pub ablation: AblationConfig,
}

impl Default for AblateConfig {
    fn default() -> Self {
        config::parse("{}").expect("empty config parses")
    }
}

#[derive(Debug, Serialize)]
struct CellSummary {
    components: Components,
    mean_static_abs_rel: Option<f64>,
    mean_dynamic_abs_rel: Option<f64>,
    mean_fused_static_abs_rel: Option<f64>,
    stalled: usize,
    diverged: usize,
}

#[derive(Debug, Serialize)]
struct AblationSummary {
    seeds: Vec<u64>,
    cells: Vec<CellSummary>,
    /// Row pairs differing only in DM, and how many of them DM improves on
    /// static AbsRel.
    dm_pairs: usize,
    dm_pairs_improved: usize,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn static_abs_rel(m: &RegionMetrics) -> Option<f64> {
    m.static_region.map(|x| x.abs_rel)
}

fn summarize(seeds: &[u64], grid: &[Components], rows: &[AblationRow]) -> AblationSummary {
    let cells = grid
        .iter()
        .map(|&c| {
            let of = || rows.iter().filter(move |r| r.components == c);
            CellSummary {
                components: c,
                mean_static_abs_rel: mean(of().map(|r| static_abs_rel(&r.refined))),
                mean_dynamic_abs_rel: mean(of().map(|r| r.refined.dynamic_region.map(|x| x.abs_rel))),
                mean_fused_static_abs_rel: mean(of().map(|r| static_abs_rel(&r.fused))),
                stalled: of().filter(|r| r.status == RefineStatus::Stalled).count(),
                diverged: of().filter(|r| r.status == RefineStatus::Diverged).count(),
            }
        })
        .collect();
    let (mut pairs, mut improved) = (0, 0);
    for on in rows.iter().filter(|r| r.components.dm) {
        let off = rows.iter().find(|r| {
            r.seed == on.seed
                && r.components
                    == Components {
                        dm: false,
                        ..on.components
                    }
        });
        if let Some(off) = off {
            pairs += 1;
            if let (Some(a), Some(b)) = (static_abs_rel(&on.refined), static_abs_rel(&off.refined)) {
                improved += usize::from(a < b);
            }
        }
    }
    AblationSummary {
        seeds: seeds.to_vec(),
        cells,
        dm_pairs: pairs,
        dm_pairs_improved: improved,
    }
}

pub fn ablate(args: &AblateArgs) -> CliResult<()> {
    let mut cfg: AblateConfig = match &args.config {
        Some(p) => config::load(p)?,
        None => AblateConfig::default(),
    };
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let seeds = match (&cfg.seeds, args.seed) {
        (Some(_), Some(_)) => return Err(usage("--seed conflicts with an explicit `seeds` list")),
        (Some(list), None) => list.clone(),
        (None, seed) => {
            let first = seed.unwrap_or(cfg.first_seed);
            (0..cfg.scenes as u64).map(|k| first + k).collect()
        }
    };
    if seeds.is_empty() {
        return Err(usage("ablation needs at least one scene"));
    }
    let refine = &mut cfg.ablation.refine;
    if let Some(b) = args.beta {
        refine.beta = b;
    }
    if let Some(g) = args.gamma {
        refine.gamma = g;
    }
    if let Some(c) = args.cap {
        refine.depth_cap = c;
    }
    refine.validate()?;
    let grid = cfg.grid.clone().unwrap_or_else(dyndepth::optimizer::full_grid);
    if grid.is_empty() {
        return Err(usage("config: `grid` is empty"));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    let per_scene: Vec<Vec<AblationRow>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| run_ablation(&[(seed, preset(cfg.preset, seed))], &grid, &cfg.ablation))
            .collect::<dyndepth::Result<_>>()
    })?;
    let rows: Vec<AblationRow> = per_scene.into_iter().flatten().collect();

    let out = &args.out;
    ensure_dir(out)?;
    write_text(&out.join("ablation.csv"), &ablation_csv(&rows))?;
    write_json(&out.join("summary.json"), &summarize(&seeds, &grid, &rows))
}

