use dyndepth_web::{entropy_of_bump, Scene};

#[test]
fn views_match_scene_size() {
    let scene = Scene::new(5).unwrap();
    let n = 4 * scene.width() * scene.height();
    assert_eq!(scene.frame().len(), n);
    assert_eq!(scene.mask_overlay(0.9).unwrap().rgba().len(), n);
    let u = scene.uncertainty(0.005, false).unwrap();
    assert_eq!(u.u_rgba().len(), n);
    assert_eq!(u.depth_rgba().len(), n);
}

#[test]
fn moderate_bump_is_partly_certain() {
    let view = entropy_of_bump(8, 3.0, 1.0).unwrap();
    assert!(view.uncertainty() > 0.0 && view.uncertainty() < 1.0);
}
