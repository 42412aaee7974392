use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use voxsep::dsp::StftPlan;
use voxsep::evaluation::{bss_eval_frame, DEFAULT_FILTER_LEN};
use voxsep::mining::cross_correlation;
use voxsep::model::{UNet, UNetConfig};
use voxsep::StemName;
use voxsep_bench::{magnitudes, noise, stereo_noise};

fn stft(c: &mut Criterion) {
    let plan = StftPlan::new(2048, 512).unwrap();
    let clip = stereo_noise(22050 * 10, 22050, 1);
    let spec = plan.stft(&clip).unwrap();
    let mut g = c.benchmark_group("stft");
    g.sample_size(20);
    g.bench_function("forward_10s_stereo", |b| b.iter(|| plan.stft(black_box(&clip)).unwrap()));
    g.bench_function("inverse_10s_stereo", |b| {
        b.iter(|| plan.istft(black_box(&spec), Some(clip.len())).unwrap())
    });
    g.finish();
}

fn unet(c: &mut Criterion) {
    let mut g = c.benchmark_group("unet");
    g.sample_size(10);
    for (frames, bins) in [(64, 128), (128, 256)] {
        let cfg = UNetConfig { depth: 3, base_channels: 8, frames, bins, ..UNetConfig::default() };
        let model = UNet::new(cfg, 7).unwrap();
        let x = magnitudes(2, frames, bins, 2);
        let y = x.mapv(|v| 0.5 * v);
        let id = format!("{frames}x{bins}");
        g.bench_with_input(BenchmarkId::new("forward", &id), &x, |b, x| b.iter(|| model.forward(x).unwrap()));
        g.bench_with_input(BenchmarkId::new("gradient", &id), &x, |b, x| {
            b.iter(|| model.gradient(x, &y, None).unwrap())
        });
    }
    g.finish();
}

fn bss(c: &mut Criterion) {
    let rate = 44100;
    let vocals = stereo_noise(rate as usize, rate, 3);
    let accomp = stereo_noise(rate as usize, rate, 5);
    let references = BTreeMap::from([(StemName::Vocals, vocals.clone()), (StemName::Instrumental, accomp.clone())]);
    let blend = |a: &voxsep::AudioClip, b: &voxsep::AudioClip| {
        let ch = a.channels().iter().zip(b.channels()).map(|(x, y)| x.iter().zip(y).map(|(p, q)| 0.9 * p + 0.1 * q).collect()).collect();
        voxsep::AudioClip::new(ch, rate).unwrap()
    };
    let estimates = BTreeMap::from([
        (StemName::Vocals, blend(&vocals, &accomp)),
        (StemName::Instrumental, blend(&accomp, &vocals)),
    ]);
    let mut g = c.benchmark_group("bss_eval");
    g.sample_size(10);
    g.bench_function("frame_1s_stereo_two_sources", |b| {
        b.iter(|| bss_eval_frame(black_box(&estimates), &references, DEFAULT_FILTER_LEN).unwrap())
    });
    g.finish();
}

fn xcorr(c: &mut Criterion) {
    let a = noise(8000 * 30, 11);
    let b = noise(8000 * 30, 12);
    let mut g = c.benchmark_group("cross_correlation");
    g.sample_size(20);
    g.bench_function("30s_at_8k_lag_2s", |bench| {
        bench.iter(|| cross_correlation(black_box(&a), black_box(&b), 16000))
    });
    g.finish();
}

criterion_group!(benches, stft, unet, bss, xcorr);
criterion_main!(benches);
