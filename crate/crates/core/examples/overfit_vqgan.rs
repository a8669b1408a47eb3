//! Overfit the desk-scale tokenizer on a few synthetic houses and report IoU.
//!
//! `cargo run --release -p arch-core --example overfit_vqgan -- [houses] [epochs]`;
//! set `SAVE=dir` to keep the checkpoint.

use std::time::Instant;

use arch_core::dataprep::synth_house;
use arch_core::vqgan::{reconstruction_iou, save_checkpoint, Trainer, VqganConfig};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let houses = args.next().unwrap_or(8);
    let epochs = args.next().unwrap_or(128);
    let data: Vec<_> = (0..houses as u64).map(|s| synth_house(s, 32).grid).collect();
    let mut config = VqganConfig::desk();
    config.epochs = epochs;
    let mut t = Trainer::new(config).unwrap();
    let start = Instant::now();
    for _ in 0..epochs {
        let log = t.train_epoch(&data).unwrap();
        let iou = if log.epoch % 4 == 0 { reconstruction_iou(&t.model, &data).unwrap() } else { f64::NAN };
        println!(
            "epoch {:4} {:7.1}s recon {:.4} perc {:.5} commit {:.4} adv {:.3} disc {:.3} usage {:.2} iou {:.4}",
            log.epoch,
            start.elapsed().as_secs_f64(),
            log.losses.reconstruction,
            log.losses.perceptual,
            log.losses.commitment,
            log.losses.adversarial,
            log.discriminator,
            log.codebook_usage,
            iou
        );
    }
    println!("iou {:.4}", reconstruction_iou(&t.model, &data).unwrap());
    if let Some(dir) = std::env::var_os("SAVE") {
        save_checkpoint(std::path::Path::new(&dir), &t).unwrap();
    }
}
