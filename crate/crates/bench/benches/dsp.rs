use std::hint::black_box;

use cardiax_bench::scg_record;
use cardiax_core::bp_calib::BpModel;
use cardiax_core::dsp::extract::extract_record;
use cardiax_core::dsp::ExtractorConfig;
use criterion::{criterion_group, criterion_main, Criterion, Throughput};

fn extraction(c: &mut Criterion) {
    let mut g = c.benchmark_group("extract");
    for secs in [2.0, 30.0, 120.0] {
        let (a1, a2) = scg_record(secs, 1);
        g.throughput(Throughput::Elements(a1.len() as u64));
        g.bench_function(format!("{secs}s"), |b| {
            b.iter(|| {
                extract_record(ExtractorConfig::default(), Some(BpModel::default()), black_box(&a1), black_box(&a2))
            })
        });
    }
    g.finish();
}

criterion_group!(benches, extraction);
criterion_main!(benches);
