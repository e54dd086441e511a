//! Rough single-machine throughput check for the nearest-neighbour kernel.
//!
//! Run with `cargo run --example bench_kernel` (the workspace dev profile is
//! already optimized). Prints timings for the stress-test shape and for the
//! synthetic demo shape so budget decisions are grounded in measurements.

use std::time::Instant;

use nfm_core::manifest::LoadedSample;
use nfm_core::scoring::score_stream;
use nfm_core::synthetic::GaussianSource;
use nfm_core::tensor_io::Tensor;

fn gaussian_tensor(rows: usize, dim: usize, seed: u64) -> Tensor {
    let mut src = GaussianSource::new(seed);
    let data: Vec<f32> = (0..rows * dim).map(|_| src.sample() as f32).collect();
    Tensor::new(rows, dim, data).unwrap()
}

fn main() {
    // Stress shape: 10k single-row samples against a 10k x 512 bank.
    let bank = gaussian_tensor(10_000, 512, 1);
    let queries = gaussian_tensor(10_000, 512, 2);
    let samples: Vec<LoadedSample> = (0..queries.rows())
        .map(|i| LoadedSample {
            id: format!("q{i:05}"),
            rows: Tensor::new(1, 512, queries.row(i).to_vec()).unwrap(),
        })
        .collect();

    let t0 = Instant::now();
    let table = score_stream("bench", &samples, &bank, 3, true).unwrap();
    let parallel = t0.elapsed();
    println!("stress 10k x (10k x 512) parallel: {parallel:?} ({} scores)", table.len());

    let t0 = Instant::now();
    let table2 = score_stream("bench", &samples, &bank, 3, false).unwrap();
    let sequential = t0.elapsed();
    println!("stress sequential: {sequential:?}");
    let same = table
        .iter()
        .zip(table2.iter())
        .all(|((ia, sa), (ib, sb))| ia == ib && sa.to_bits() == sb.to_bits());
    println!("parallel == sequential bitwise: {same}");

    // Demo shape: bank of labeled-normal training rows vs multi-row eval samples.
    for (bank_rows, eval_rows, n_eval) in [(42_000usize, 192usize, 460usize)] {
        let bank = gaussian_tensor(bank_rows, 16, 3);
        let samples: Vec<LoadedSample> = (0..n_eval)
            .map(|i| LoadedSample {
                id: format!("s{i:04}"),
                rows: gaussian_tensor(eval_rows, 16, 100 + i as u64),
            })
            .collect();
        let t0 = Instant::now();
        score_stream("demo", &samples, &bank, 3, true).unwrap();
        println!(
            "demo bank {bank_rows} x 16, {n_eval} samples x {eval_rows} rows: {:?}",
            t0.elapsed()
        );
    }
}
