#[path = "../examples/codeword_container.rs"]
#[allow(dead_code)]
mod codeword_container;

#[path = "../examples/qim_embed_extract.rs"]
#[allow(dead_code)]
mod qim_embed_extract;

#[path = "../examples/build_dataset.rs"]
#[allow(dead_code)]
mod build_dataset;

#[path = "../examples/gradient_check.rs"]
#[allow(dead_code)]
mod gradient_check;

#[path = "../examples/export_features.rs"]
#[allow(dead_code)]
mod export_features;

#[path = "../examples/stream_detect.rs"]
#[allow(dead_code)]
mod stream_detect;

#[path = "../examples/train_and_evaluate.rs"]
#[allow(dead_code)]
mod train_and_evaluate;

#[path = "../examples/latency_bench.rs"]
#[allow(dead_code)]
mod latency_bench;

#[path = "../examples/ablation.rs"]
#[allow(dead_code)]
mod ablation;

#[test]
fn codeword_container_example_runs() {
    codeword_container::run_example().expect("codeword_container example should run");
}

#[test]
fn qim_embed_extract_example_runs() {
    qim_embed_extract::run_example().expect("qim_embed_extract example should run");
}

#[test]
fn build_dataset_example_runs() {
    build_dataset::run_example().expect("build_dataset example should run");
}

#[test]
fn gradient_check_example_runs() {
    gradient_check::run_example().expect("gradient_check example should run");
}

#[test]
fn export_features_example_runs() {
    export_features::run_example().expect("export_features example should run");
}

#[test]
fn stream_detect_example_runs() {
    stream_detect::run_example().expect("stream_detect example should run");
}

#[test]
fn train_and_evaluate_example_runs() {
    train_and_evaluate::run_example().expect("train_and_evaluate example should run");
}

#[test]
fn latency_bench_example_runs() {
    latency_bench::run_example().expect("latency_bench example should run");
}

#[test]
fn ablation_example_runs() {
    ablation::run_example().expect("ablation example should run");
}
