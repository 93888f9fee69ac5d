use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use censusflow::label_codec::{generate_synthetic_page, SyntheticProfile};
use censusflow::metrics::char_distance;
use censusflow::{decode_lenient, decode_strict, encode};

fn codec(c: &mut Criterion) {
    let page = generate_synthetic_page(11, &SyntheticProfile::default()).unwrap();
    let label = encode(&page).unwrap().text;
    let mut g = c.benchmark_group("codec");
    g.throughput(Throughput::Bytes(label.len() as u64));
    g.bench_function("encode", |b| b.iter(|| encode(black_box(&page)).unwrap()));
    g.bench_function("decode_strict", |b| {
        b.iter(|| decode_strict(black_box(&label)).unwrap())
    });
    g.bench_function("decode_lenient", |b| {
        b.iter(|| decode_lenient(black_box(&label)))
    });
    g.finish();

    let other = generate_synthetic_page(12, &SyntheticProfile::default()).unwrap();
    let other = encode(&other).unwrap().text;
    c.bench_function("char_distance/page", |b| {
        b.iter(|| char_distance(black_box(&label), black_box(&other)))
    });
}

criterion_group!(benches, codec);
criterion_main!(benches);
