//! Trains one variant on the standard synthetic benchmark and prints
//! held-out scores every five epochs.
//!
//! ```text
//! cargo run --release --example train_benchmark -- [variant] [epochs]
//! ```

use std::time::Instant;

use catpose_core::eval::Metric;
use catpose_core::learn::{evaluate_model, ModelConfig, TrainConfig, Trainer, Variant};
use catpose_core::synth::standard_benchmark;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = match args.first() {
        Some(name) => Variant::from_name(name).unwrap_or_else(|| panic!("unknown variant {name}")),
        None => Variant::Full,
    };
    let (mut mc, mut tc) = (ModelConfig::default(), TrainConfig::default());
    if let Some(e) = args.get(1) {
        tc.epochs = e.parse().expect("epochs");
    }
    variant.apply(&mut mc, &mut tc);

    let (train, test) = standard_benchmark(0).expect("benchmark");
    let t0 = Instant::now();
    let mut trainer = Trainer::new(&train, mc, tc).expect("trainer");
    let epochs = trainer.config.epochs;
    for e in 1..=epochs {
        trainer.run_epoch().expect("epoch");
        if e % 5 == 0 || e == epochs {
            let recent = &trainer.history[trainer.history.len().saturating_sub(30)..];
            let l_z = recent.iter().map(|r| r.terms.l_z).sum::<f64>() / recent.len() as f64;
            let ev = evaluate_model(&trainer.model, &test).expect("evaluation");
            let aps: Vec<String> = Metric::ALL
                .iter()
                .map(|m| format!("{}={:.3}", m.name(), ev.report.mean_ap(*m).unwrap_or(0.0)))
                .collect();
            println!(
                "epoch {e:3} {:6.0}s  train L_z {l_z:.4}  test depth L1 {:.4}  {}",
                t0.elapsed().as_secs_f64(),
                ev.depth_l1,
                aps.join(" ")
            );
        }
    }
}
