//! Trains on the clustered toy data and prints test retrieval metrics.
//!
//! `cargo run --release -p patr-core --example synthetic_run -- [patr|l2|triplet] [both|caption|click]`

use std::time::Instant;

use patr_core::evalret::{evaluate, Direction};
use patr_core::loss::LossVariant;
use patr_core::synthetic::SyntheticConfig;
use patr_core::trainer::{TrainConfig, Trainer};

fn main() -> patr_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let variant: LossVariant = args.get(1).map_or("patr", String::as_str).parse()?;
    let sources = args.get(2).map_or("both", String::as_str).to_string();

    let data = SyntheticConfig::default().generate()?;
    let mut cfg = TrainConfig {
        batch_size: 128,
        epochs: 30,
        lr_schedule: vec![(0, 1e-3)],
        ..TrainConfig::default()
    };
    cfg.loss.variant = variant;
    if variant == LossVariant::Triplet {
        cfg.loss.n_negatives = 1;
    }
    cfg.encoder.hidden_size = 32;
    cfg.encoder.num_layers = 2;

    let start = Instant::now();
    let mut trainer = Trainer::new(cfg, data.words.clone(), &data.features)?;
    let cap = trainer.prepare(&data.caption_train, &data.features, &data.stopwords)?;
    let click = trainer.prepare(&data.click_train, &data.features, &data.stopwords)?;
    let (first, second) = match sources.as_str() {
        "caption" => (&cap, None),
        "click" => (&click, None),
        _ => (&cap, Some(&click)),
    };
    trainer.run(first, second, &data.features, |s, _| {
        println!("epoch\t{}\t{:.5}\t{}", s.epoch, s.mean_loss, s.learning_rate);
        Ok(())
    })?;
    println!("trained in {:.1?}", start.elapsed());

    for (name, test) in [("caption", &data.caption_test), ("click", &data.click_test)] {
        let ev = evaluate(
            trainer.encoder(),
            name,
            test,
            &data.features,
            Some(&data.labels),
            Direction::TextToImage,
            &[1, 10, 20],
            50,
        )?;
        println!("{name}: {:?} map {:?}", ev.row.recall, ev.row.map);
    }
    Ok(())
}
