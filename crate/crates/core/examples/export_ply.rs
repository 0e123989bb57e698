//! Writes a generated scene as an ASCII PLY colored by instance id.
//!
//! cargo run --release --example export_ply -- [out.ply] [seed]

use std::path::PathBuf;

use simgroup::datagen::{generate_scene, SceneSpec};
use simgroup::io::export_ply;

fn main() -> simgroup::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "scene.ply".into()));
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let scene = generate_scene(&SceneSpec::default(), seed)?;
    export_ply(&out, &scene.cloud, &scene.labels.instance)?;
    println!(
        "wrote {} points in {} instances to {}",
        scene.cloud.n_points(),
        scene.labels.instance_ids().len(),
        out.display()
    );
    Ok(())
}
