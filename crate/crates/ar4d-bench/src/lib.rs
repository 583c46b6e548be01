//! No library surface; see `benches/hot_paths.rs`.
