//! Core algorithms for imaging a 3D scene with momentum-correlated photon pairs.
//!
//! One photon of each pair traverses the scene and is position-resolved on a
//! camera; its twin never sees the scene and is momentum-resolved on a second
//! camera. Pairing the two detections in time yields a complete geometric ray
//! (position plus angle) per pair, which can be propagated to any virtual plane
//! after the fact: refocusing, synthetic parallax and depth-from-focus all
//! happen in software on the recorded ray bundle.
//!
//! The crate is `no_std` (alloc required); IO, file formats and the CLI live in
//! the companion `qcrt` crate.
//!
//! Pipeline stages, in data order:
//!
//! * [`optics`]: 2x2 ray-transfer matrices, ray propagation and the
//!   twin-photon backtracking solve.
//! * [`event`]: pixel hits, camera geometry, beam regions and the affine
//!   pixel/physical coordinate maps.
//! * [`centroid`]: clustering of intensifier flashes into sub-pixel photon
//!   events with amplitude-dependent timing correction.
//! * [`coincidence`]: delay histograms, peak finding and injective pair
//!   extraction within a gate.
//! * [`reconstruct`]: paired events to sample-plane rays, refocused images,
//!   momentum filtering, parallax views and focal stacks.
//! * [`depthmap`]: focus metrics over a stack, per-pixel depth with sub-slice
//!   refinement, all-in-focus compositing and foreground masking.
//! * [`sim`]: a Monte Carlo source + scene + detector model that produces hit
//!   streams with ground-truth labels for every stage above.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod centroid;
pub mod coincidence;
pub mod depthmap;
pub mod event;
pub mod optics;
pub mod reconstruct;
pub mod sim;
mod vec2;

pub use vec2::Vec2;
