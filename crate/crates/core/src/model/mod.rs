//! Sea-ice physics: parameters, rheology and forcing, the space-time forms
//! of the coupled and partitioned schemes, and the goal functional.

pub mod forms;
pub mod goal;
pub mod params;
pub mod rheology;

pub use goal::GoalSpec;
pub use params::PhysParams;
