//! Desk-scale satellite observation pipeline: swath remapping onto an
//! equirectangular grid, a masked ViT-VAE per sensor, a multi-modal masked
//! autoencoder that fills gaps in the latent token field, and a tiled
//! spatiotemporal forecaster that conditions each tile on its eight
//! neighbours through a double-buffered global state cache.

pub mod aida;
pub mod aiwp;
pub mod config;
pub mod error;
pub mod gradsuite;
pub mod grid;
pub mod mvae;
pub mod obsio;
pub mod pipeline;
pub mod precipmap;
pub mod statecache;
pub mod synthgen;
pub mod train;
pub mod verify;

pub use error::{CoreError, Result};
pub use grid::{cell_of_latlon, neighbours8, tile_of_cell, GridSpec, TileCoord};
