//! Simulation, fitting, and learned regression for cold-atom absorption images.
//!
//! The pipeline works on triples of 16-bit camera frames `(I_atoms, I_bg,
//! I_dark)`. From a triple the per-pixel transmission and optical density
//! (OD) are derived; a cloud's OD is modeled as a rotated 2-D Gaussian with
//! seven parameters `<x0, y0, sigma_x, sigma_y, rho, B, theta>`.
//!
//! Pixel convention: pixel `(i, j)` has its center at `(x, y) = (i, j)` with
//! `x` the column index (horizontal) and `y` the row index (vertical),
//! origin at the top-left pixel center. All grids are row-major, top row
//! first.
//!
//! Four analysis methods are provided and benchmarked against each other:
//! the fast `3x1D-LS` slice fitter, the full rotated `2D-LS` fit, and the
//! compact CNN regressors `ML-1` (atoms frame only) and `ML-3` (atoms, bg,
//! dark stacked).

pub mod cnn;
pub mod error;
pub mod evaluate;
pub mod imaging;
pub mod io;
pub mod lsfit;
pub mod simulator;

pub use error::{Error, Result};
pub use imaging::{Frame, FrameTriple, GaussianParams, ODMap, PixelState};
pub use simulator::{BackgroundLibrary, FringeSpec, LabeledShot, ParamRanges};
