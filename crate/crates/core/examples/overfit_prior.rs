//! Overfit the desk-scale prior on token sequences of a saved tokenizer.
//!
//! `cargo run --release -p arch-core --example overfit_prior -- VQGAN_DIR [houses] [epochs]`

use std::time::Instant;

use arch_core::dataprep::synth_house;
use arch_core::prior::{sequence_nll, teacher_forced_accuracy, tokenize, PriorConfig, PriorTrainer};
use arch_core::vqgan::load_checkpoint;

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = args.next().expect("tokenizer checkpoint dir");
    let houses: u64 = args.next().map_or(8, |a| a.parse().unwrap());
    let epochs: usize = args.next().map_or(400, |a| a.parse().unwrap());
    let vq = load_checkpoint(std::path::Path::new(&dir)).unwrap().model;
    let seqs: Vec<_> = (0..houses)
        .map(|s| tokenize(&vq.tokens(&synth_house(s, 32).grid).unwrap(), vq.config.codebook_size).unwrap())
        .collect();
    let mut config = PriorConfig::desk();
    config.epochs = epochs;
    let mut t = PriorTrainer::new(config).unwrap();
    println!("initial nll {:.4} (ln K = {:.4})", sequence_nll(&t.gpt, &seqs), (vq.config.codebook_size as f64).ln());
    let start = Instant::now();
    for _ in 0..epochs {
        let log = t.train_epoch(&seqs).unwrap();
        if log.epoch % 20 == 0 {
            println!(
                "epoch {:4} {:6.1}s loss {:.4} lr {:.2e} acc {:.4}",
                log.epoch,
                start.elapsed().as_secs_f64(),
                log.loss,
                log.lr,
                teacher_forced_accuracy(&t.gpt, &seqs)
            );
        }
    }
}
