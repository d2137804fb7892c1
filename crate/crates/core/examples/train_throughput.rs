//! Times a few epochs of training on random 32x32 RGB data.
//!
//! `cargo run --release --example train_throughput -- [images] [epochs] [blocks] [hidden]`
//! where `blocks` looks like `32,32/64,64`.

use std::time::Instant;

use dctaug::augment::AugmentConfig;
use dctaug::dataset::LabeledSet;
use dctaug::image::ImageTensor;
use dctaug::nn::NetworkConfig;
use dctaug::train::{train_with_observer, TrainConfig};
use rand::{Rng, SeedableRng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(1000), |s| s.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(2), |s| s.parse())?;
    let blocks: Vec<Vec<usize>> = args
        .get(2)
        .map_or("32,32/64,64", |s| s.as_str())
        .split('/')
        .map(|b| b.split(',').map(|f| f.parse()).collect())
        .collect::<Result<_, _>>()?;
    let hidden: usize = args.get(3).map_or(Ok(256), |s| s.parse())?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let images = (0..n)
        .map(|_| ImageTensor::<f32>::from_fn(3, 32, 32, |_, _, _| rng.random_range(0.0..255.0)))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = (0..n).map(|i| i % 10).collect();
    let set = LabeledSet::new(images, labels, (0..10).map(|i| i.to_string()).collect())?;
    let net = NetworkConfig {
        conv_blocks: blocks,
        hidden_units: hidden,
        ..NetworkConfig::desk_scale(3, 32, 32, 10)
    };
    for augment in [false, true] {
        let cfg = TrainConfig {
            epochs,
            augmentation: augment.then(AugmentConfig::default),
            ..TrainConfig::default()
        };
        let start = Instant::now();
        train_with_observer(&set, &net, &cfg, |e| {
            println!(
                "augment={augment} epoch {} loss {:.4} ({:.1}s)",
                e.epoch,
                e.loss,
                start.elapsed().as_secs_f64()
            )
        })?;
        let per = start.elapsed().as_secs_f64() / (epochs * n) as f64;
        println!("augment={augment}: {:.3} ms/image/epoch", per * 1e3);
    }
    Ok(())
}
