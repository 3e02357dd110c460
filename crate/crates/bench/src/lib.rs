//! Benchmark fixtures; the benchmarks themselves live under `benches/`.

use robsig::sysmodel::{tracking_benchmark, MeasurementMode, Scenario};

pub fn perfect_benchmark() -> Scenario {
    tracking_benchmark(MeasurementMode::Perfect)
}

pub fn imperfect_benchmark() -> Scenario {
    tracking_benchmark(MeasurementMode::Imperfect)
}
