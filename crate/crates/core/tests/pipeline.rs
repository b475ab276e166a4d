use dyndepth::dynmask::dynamic_mask;
use dyndepth::io::{load_pfm, load_pgm, save_pfm, save_pgm};
use dyndepth::metrics::{evaluate, EvalOptions};
use dyndepth::optimizer::{
    initial_depth, photometric_state, refine_depth, run_triplet, AblationConfig, Components, RefineConfig, RefineStatus,
};
use dyndepth::synth::{generate_triplet, preset, ScenePreset};

#[test]
fn bundle_files_round_trip() {
    let t = generate_triplet(&preset(ScenePreset::Dynamic, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let depth = dir.path().join("gt.pfm");
    save_pfm(&t.gt_depth, &depth).unwrap();
    let back = load_pfm(&depth).unwrap();
    for (a, b) in back.data().iter().zip(t.gt_depth.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let frame = dir.path().join("center.pgm");
    save_pgm(&t.center, &frame).unwrap();
    let img = load_pgm(&frame).unwrap();
    assert_eq!(img.shape(), t.center.shape());
    for (a, b) in img.data().iter().zip(t.center.data()) {
        assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
    }
}

#[test]
fn mask_at_true_depth_prefers_sprites() {
    let t = generate_triplet(&preset(ScenePreset::Dynamic, 4)).unwrap();
    let state = photometric_state(&t.gt_depth, &t, 0.0).unwrap();
    let mask = dynamic_mask(&state.losses, 0.8).unwrap();
    let (mut hit, mut n_dyn, mut false_hit, mut n_static) = (0, 0, 0, 0);
    for i in 0..mask.data().len() {
        let masked = usize::from(!mask.is_set(i));
        if t.dynamic_oracle.is_set(i) {
            n_dyn += 1;
            hit += masked;
        } else {
            n_static += 1;
            false_hit += masked;
        }
    }
    assert!(n_dyn > 0);
    assert!(hit as f64 / n_dyn as f64 > false_hit as f64 / n_static as f64);
}

#[test]
fn refinement_descends_and_improves_static_depth() {
    let t = generate_triplet(&preset(ScenePreset::Static, 2)).unwrap();
    let init = initial_depth(2, &t.gt_depth, 1.3, 0.02).unwrap();
    let cfg = RefineConfig {
        iterations: 40,
        ..RefineConfig::default()
    };
    let report = refine_depth(&init, &t, &cfg).unwrap();
    assert_ne!(report.status, RefineStatus::Diverged);
    assert!(report.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    let before = evaluate(&init, &t.gt_depth, None, EvalOptions::default()).unwrap();
    let after = evaluate(&report.depth, &t.gt_depth, None, EvalOptions::default()).unwrap();
    assert!(after.abs_rel < before.abs_rel);
}

#[test]
fn ablation_rows_are_reproducible() {
    let t = generate_triplet(&preset(ScenePreset::Dynamic, 1)).unwrap();
    let mut cfg = AblationConfig::default();
    cfg.refine.iterations = 10;
    let a = run_triplet(1, &t, Components::FULL, &cfg).unwrap();
    let b = run_triplet(1, &t, Components::FULL, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.refined.static_region.is_some());
}
