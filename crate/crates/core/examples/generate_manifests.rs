//! Regenerates the shipped manifests through the canonical serializer:
//! `cargo run --example generate_manifests [dir]`.

use nlse_lab::manifest::{example_solve_manifest, GeneratorSpec, Manifest};

fn variants() -> Vec<(&'static str, Manifest)> {
    let base = example_solve_manifest;

    let mut linearize = base();
    linearize.experiment.kind = "linearize".into();
    linearize.coefficients.q = GeneratorSpec::sine(1.0, 1);
    linearize.experiment.order = Some(1);
    linearize.experiment.epsilons = Some(vec![0.1, 0.05, 0.025, 0.0125]);

    let mut carleman = base();
    carleman.experiment.kind = "carleman-check".into();
    carleman.experiment.x0 = Some(vec![-10.0]);
    carleman.experiment.lambda = Some(0.01);
    carleman.experiment.s0 = Some(0.02);
    carleman.experiment.s_rungs = Some(3);

    let mut fbi = base();
    fbi.experiment.kind = "fbi-check".into();
    fbi.experiment.gammas = Some(vec![50.0, 100.0, 400.0]);

    let mut recover_q = base();
    recover_q.experiment.kind = "recover-q".into();
    recover_q.coefficients.q = GeneratorSpec::constant(0.5);
    recover_q.experiment.data = GeneratorSpec::sine(1.0, 1);
    recover_q.experiment.x0 = Some(vec![-1.0]);
    recover_q.experiment.family_count = Some(3);

    let mut partial = recover_q.clone();
    partial.experiment.kind = "partial-data".into();
    partial.experiment.family_count = Some(2);
    partial.experiment.gamma_fraction = Some(0.5);
    partial.experiment.gammas = Some(vec![5.0, 10.0, 20.0]);

    vec![
        ("solve.toml", base()),
        ("linearize.toml", linearize),
        ("carleman-check.toml", carleman),
        ("fbi-check.toml", fbi),
        ("recover-q.toml", recover_q),
        ("partial-data.toml", partial),
    ]
}

fn main() {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "manifests".into());
    std::fs::create_dir_all(&dir).unwrap();
    for (name, manifest) in variants() {
        manifest.validate().unwrap();
        let path = std::path::Path::new(&dir).join(name);
        std::fs::write(&path, manifest.canonical()).unwrap();
        println!("wrote {}", path.display());
    }
}
