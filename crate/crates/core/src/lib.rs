//! Composable object-proxy neural field scenes.
//!
//! A scene is a set of object proxies, each binding a small neural field to a
//! placement, a text prompt and an optional coarse shape. Proxies are rendered
//! together by partitioning ray samples among them, trained with alternating
//! per-object and whole-scene steps against a pluggable image-space guidance
//! oracle, and edited after training by moving proxies or fine-tuning one field.

pub mod edit;
pub mod field;
pub mod geometry;
pub mod guidance;
pub mod math;
pub mod render;
pub mod scene;
pub mod service;
pub mod train;
