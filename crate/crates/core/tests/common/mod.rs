#![allow(dead_code)]

use georeg::synth::{generate_scene, georef_from_pose, perturb_pose, Scene, SceneSpec};

/// Synthetic scene whose image carries the georeference of a camera moved
/// horizontally by `shift` meters.
pub fn shifted_scene(spec: &SceneSpec, shift: f64) -> Scene {
    let mut scene = generate_scene(spec).unwrap();
    let pose = perturb_pose(&scene.truth.pose, shift, 0.0, spec.seed + 1000);
    scene.image.geo = georef_from_pose(&pose, spec.resolution).unwrap();
    scene
}

pub fn spec(seed: u64, n_buildings: usize) -> SceneSpec {
    SceneSpec {
        seed,
        n_buildings,
        ..SceneSpec::default()
    }
}
