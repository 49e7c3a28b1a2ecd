//! Particle simulation of second-order swarming models in bounded domains
//! with specular reflection, idiosyncratic and common noise, together with
//! statistical checks of their mean-field behaviour.

pub mod error;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod measure;
pub mod noise;
pub mod oracle;
pub mod simulator;
pub mod testfns;
pub mod validator;
pub mod vector;

pub use error::{Error, Result};
pub use geometry::{reflect, Domain, DomainSpec, LevelSet, SurfaceHit};
pub use io::{Check, Report};
pub use kernels::KernelSpec;
pub use measure::{bl_distance, integrate, BLDictionary, EmpiricalSnapshot};
pub use noise::{Increments, NoiseConfig, NoiseStreams};
pub use simulator::{simulate, SimConfig, Simulator, SystemState, Trajectory};
pub use testfns::{default_family, TestFunction};
pub use vector::Vector;
