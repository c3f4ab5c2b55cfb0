// temporary throughput probe
use ndarray::Array2;
use std::time::Instant;

fn bench(name: &str, m: usize, k: usize, n: usize, reps: usize) {
    let a = Array2::<f32>::from_elem((m, k), 1.003);
    let b = Array2::<f32>::from_elem((k, n), 0.997);
    let t0 = Instant::now();
    let mut acc = 0.0f32;
    for _ in 0..reps {
        let c = a.dot(&b);
        acc += c[(0, 0)];
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * (m * k * n * reps) as f64;
    println!("{name} {m}x{k}x{n}: {:.1} GFLOP/s ({acc})", flops / dt / 1e9);
}

fn main() {
    // conv as (out_ch x K) . (K x positions)
    bench("W.cols ", 8, 72, 16384, 300);
    bench("colsT.WT", 16384, 72, 8, 300);
    bench("W.cols ", 16, 144, 4096, 300);
    bench("colsT.WT", 4096, 144, 16, 300);
    bench("W.cols ", 32, 288, 1024, 300);
    bench("colsT.WT", 1024, 288, 32, 300);
}
