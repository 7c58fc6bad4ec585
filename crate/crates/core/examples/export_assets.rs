//! Regenerates the repository's `assets/` tree: the built-in T42 hand
//! files, the benchmark object meshes, and one noise-free example scene
//! with its wrist prior and a pipeline config tuned for it.
//!
//! Usage: `cargo run --example export_assets [out_dir]` (default `assets`).

use std::path::PathBuf;

use inhand_core::config::PipelineConfig;
use inhand_core::hand::t42::{t42_hand_model, write_t42_assets};
use inhand_core::mesh::io::save_obj;
use inhand_core::scenes::{generate_dataset, standard_objects, DatasetParams, NoiseModel};
use inhand_core::Result;

fn main() -> Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "assets".into())
        .into();

    let hand_dir = write_t42_assets(&out.join("t42"))?;
    println!("hand model: {}", hand_dir.display());

    let objects = standard_objects();
    let obj_dir = out.join("objects");
    std::fs::create_dir_all(&obj_dir).map_err(|e| inhand_core::Error::io(&obj_dir, e))?;
    for (name, mesh) in &objects {
        let path = obj_dir.join(format!("{name}.obj"));
        save_obj(mesh, &path)?;
        println!("object: {}", path.display());
    }

    // One noise-free cylinder grasp; the seed is fixed so the committed
    // scene stays byte-identical across regenerations.
    let scene_dir = out.join("example_scene");
    let dataset = DatasetParams {
        n_per_combination: 1,
        noise: NoiseModel {
            depth_sigma: 0.0,
            dropout_rate: 0.0,
        },
        ..DatasetParams::default()
    };
    let hands = vec![("t42".to_string(), t42_hand_model())];
    let cylinder = vec![objects[0].clone()];
    let records = generate_dataset(&cylinder, &hands, &dataset, 5, &scene_dir)?;
    let record = &records[0];
    let prior = record
        .wrist_pose
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let prior_path = scene_dir.join("prior.txt");
    std::fs::write(&prior_path, format!("{prior}\n"))
        .map_err(|e| inhand_core::Error::io(&prior_path, e))?;

    // Sampling density and congruence tolerances sized for the example
    // objects; the library defaults are deliberately permissive and far
    // slower on these small symmetric shapes.
    let mut config = PipelineConfig {
        model_samples: 150,
        ..PipelineConfig::default()
    };
    config.registration.n_bases = 6;
    config.registration.rejection_budget_factor = 2000;
    config.registration.base.congruence_distance_tol = 0.0015;
    config.registration.base.congruence_ratio_tol = 0.02;
    config.save(&scene_dir.join("config.toml"))?;

    println!("example scene: {}", scene_dir.display());
    Ok(())
}
