//! Writes the built-in B1 graph and its synthesized weights as a manifest.
//!
//! `cargo run --example export_manifest -- out/b1.json 224`

use std::path::PathBuf;

use mixq::netgraph::{build_efficientvit_at, synthesize_weights, NetworkManifest, Variant};

fn main() -> mixq::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "b1.json".into()));
    let res = args.next().and_then(|s| s.parse().ok()).unwrap_or(224);
    let graph = build_efficientvit_at(Variant::B1, res)?;
    let weights = synthesize_weights(&graph, 0);
    let blob_name = path
        .with_extension("bin")
        .file_name()
        .unwrap()
        .to_string_lossy()
        .into_owned();
    let (manifest, blob) = NetworkManifest::with_weights(&graph, &weights, &blob_name);
    manifest.save(&path, Some(&blob))?;
    println!("wrote {} ({} layers)", path.display(), graph.layers.len());
    Ok(())
}
