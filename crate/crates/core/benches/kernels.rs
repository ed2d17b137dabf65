use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use retiqa::bench::random_plane;
use retiqa::data::{generate_dataset, SyntheticParams};
use retiqa::imgproc::RawImage;
use retiqa::nnet::{images_to_tensor, softmax_cross_entropy, Mode, Model, ModelConfig, StemVariant};
use retiqa::priors::{dark_channel, naive_extremum, prior_maps, sliding_extremum_plane, Extremum, PriorConfig};

fn extremum(c: &mut Criterion) {
    let mut g = c.benchmark_group("extremum");
    g.sample_size(10);
    for (size, radius) in [(128, 7), (256, 7)] {
        let plane = random_plane(size, 3);
        let id = format!("{size}px_r{radius}");
        g.bench_with_input(BenchmarkId::new("naive", &id), &plane, |b, p| {
            b.iter(|| naive_extremum(black_box(p), size, size, radius, Extremum::Min))
        });
        g.bench_with_input(BenchmarkId::new("van_herk", &id), &plane, |b, p| {
            b.iter(|| sliding_extremum_plane(black_box(p), size, size, radius, Extremum::Min))
        });
    }
    g.finish();
}

fn test_image(size: usize) -> RawImage {
    let planes = [random_plane(size, 1), random_plane(size, 2), random_plane(size, 3)];
    RawImage::from_fn(size, size, |y, x| {
        let i = y * size + x;
        [planes[0][i], planes[1][i], planes[2][i]]
    })
}

fn priors(c: &mut Criterion) {
    let img = test_image(512);
    let cfg = PriorConfig::default();
    let mut g = c.benchmark_group("priors_512");
    g.bench_function("exact_dark_channel", |b| b.iter(|| dark_channel(black_box(&img), 7)));
    g.bench_function("stem_prior_maps", |b| b.iter(|| prior_maps(black_box(&img), &cfg).unwrap()));
    g.finish();
}

fn train_step(model: &mut Model<f32>, x: &retiqa::nnet::Tensor<f32>, labels: &[usize]) {
    let pass = model.forward(x, Mode::Train).unwrap();
    let (_, grad) = softmax_cross_entropy(&pass.logits, labels).unwrap();
    model.params_mut().zero_grad();
    model.backward(&pass, &grad).unwrap();
}

/// Runs the same workload on a single-thread pool and on the default pool.
/// Built without the `parallel` feature, only the sequential path exists.
fn with_pools(c: &mut Criterion, group: &str, mut work: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function("rayon_1_thread", |b| b.iter(|| single.install(&mut work)));
        let threads = rayon::current_num_threads();
        g.bench_function(format!("rayon_{threads}_threads"), |b| b.iter(&mut work));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function("sequential", |b| b.iter(&mut work));
    g.finish();
}

fn training(c: &mut Criterion) {
    let params = SyntheticParams::default();
    let samples = generate_dataset([3, 3, 2], 5, &params).unwrap();
    let images: Vec<&RawImage> = samples.iter().map(|s| &s.image).collect();
    let x = images_to_tensor::<f32>(&images).unwrap();
    let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let mut config = ModelConfig::default();
    config.stem.variant = StemVariant::DarkBright;
    let mut model = Model::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    with_pools(c, "train_step_batch8", || train_step(&mut model, &x, &labels));
}

fn synthesis(c: &mut Criterion) {
    let params = SyntheticParams::default();
    with_pools(c, "synth_24_images", || {
        black_box(generate_dataset([8, 8, 8], 9, &params).unwrap());
    });
}

criterion_group!(benches, extremum, priors, training, synthesis);
criterion_main!(benches);
