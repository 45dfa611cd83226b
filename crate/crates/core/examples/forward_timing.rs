use std::time::Instant;

use lumenseg::model::{build, ArchConfig};
use lumenseg::Tensor;

fn main() -> lumenseg::Result<()> {
    // optional `SIZE KERNEL` pair; defaults to both preset sizes at k=5
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cases = match args[..] {
        [size, k] => vec![(size, k)],
        _ => vec![(224, 5), (384, 5)],
    };
    for (size, k) in cases {
        let t0 = Instant::now();
        let g = build(&ArchConfig::vgg16_unet(size).with_kernel(k))?;
        let built = t0.elapsed();
        let x = Tensor::full(&[1, 1, size, size], 0.5);
        let t1 = Instant::now();
        let y = g.forward(&x)?;
        println!(
            "{size}px k{k}: {} params, build {:.2?}, forward {:.2?}, out {:?}",
            g.param_count(),
            built,
            t1.elapsed(),
            y.shape()
        );
    }
    Ok(())
}
