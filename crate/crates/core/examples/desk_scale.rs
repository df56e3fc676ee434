//! Trains NTBC and the naive baseline on a synthetic 256x256 material and
//! prints the quality table for each.
//!
//! cargo run --release -p ntbc --example desk_scale -- [iterations] [batch_blocks] [seed]

use std::time::Instant;

use ntbc::model::{Approach, Layout, ModelMode};
use ntbc::synth;
use ntbc::trainer::{evaluate, train, Material, TrainConfig};

fn main() -> ntbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let batch_blocks = args.next().and_then(|s| s.parse().ok()).unwrap_or(256);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let material = Material::new(
        "synthetic",
        vec![
            ("gradient".into(), synth::smooth_gradient_rgb(256, 256)),
            ("noise".into(), synth::perlin_single(256, 256, 4.0, 11)),
        ],
    )?;
    let config = TrainConfig {
        iterations,
        batch_blocks,
        seed,
        ..Default::default()
    };
    for approach in [Approach::Ntbc, Approach::Naive] {
        let mode = ModelMode::new(approach, Layout::Aggressive, 1, 1)?;
        let t = Instant::now();
        let out = train(&material, mode, None, &config)?;
        println!("{mode}: trained in {:.1} s", t.elapsed().as_secs_f64());
        print!("{}", evaluate(&[&out.model], &material)?.to_table());
        print!("pre-QAT\n{}", evaluate(&[&out.pre_qat], &material)?.to_table());
    }
    Ok(())
}
