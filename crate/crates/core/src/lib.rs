//! Global camera localization in maps of ellipsoid landmarks that carry text
//! labels.
//!
//! A query image is reduced to detection boxes with image embeddings. Each box
//! is paired with landmarks whose text embeddings are nearest ([`association`]),
//! three-pair samples are drawn by a RANSAC-family sampler ([`consensus`]), a
//! pose is solved from each sample ([`pnp`]) and scored by the overlap of
//! projected landmark ellipses with the detection boxes ([`geometry`]).
//!
//! [`pipeline`] runs one query end to end, [`io`] reads and writes the file
//! formats, [`bench`](mod@bench) generates synthetic scenes and runs method grids, and
//! [`cli`] backs the `cliploc` binary.

pub mod association;
pub mod bench;
pub mod cli;
pub mod consensus;
pub mod geometry;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod pnp;
