//! Differentiable compositing of discrete pattern elements.
//!
//! Elements are instances of library patches with a soft type, a center,
//! an orientation, a depth and a color. The soft compositor renders them
//! into an image whose derivatives with respect to every element parameter
//! are available through [`grad`]; the hard compositor renders the
//! discretized result exactly.

pub mod baseline;
pub mod compositor;
pub mod element;
pub mod error;
pub mod eval;
pub mod features;
pub mod grad;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod library;
pub mod losses;
pub mod optimizer;
pub mod pyramid;
pub mod rng;
pub mod synth;

pub use element::{DiscreteElement, DiscreteScene, Element, ElementSet};
pub use error::{Error, Result};
pub use image::{Plane, RgbmImage};
pub use library::{Background, PatchLibrary};
