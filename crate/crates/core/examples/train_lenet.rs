//! Trains LeNet on MNIST for a given number of steps and prints errors.
//!
//! `cargo run --release --example train_lenet -- data/mnist 24000`

use std::time::Instant;

use lmc::data::{load_mnist_idx, Augmentation, MnistFiles, NoiseSpec, Split};
use lmc::engine::{evaluate_error, init_params};
use lmc::instability::{TrainPlan, Trainer};

fn main() -> lmc::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let data = load_mnist_idx(&MnistFiles::in_dir(&dir))?;
    let plan = TrainPlan::lenet();
    let w0 = init_params(&plan.architecture, 0)?;
    let mut trainer = Trainer::new(&plan, &data, w0, NoiseSpec::from_seed(0, Augmentation::None), None)?;
    let start = Instant::now();
    while trainer.step() < steps.min(plan.total_steps) {
        let target = (trainer.step() + 1000).min(steps);
        trainer.advance_to(target)?;
        println!(
            "step {:>6}  test error {:.4}  ({:.1}s)",
            trainer.step(),
            evaluate_error(trainer.params(), &data, Split::Test)?,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
