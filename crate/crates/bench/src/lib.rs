//! Criterion benchmarks for the decoders, GF(2) elimination and quantizer
//! design live in `benches/`.
