//! Ground-truth signal synthesis.

pub mod encode;
pub mod phantom;
pub mod scan;
pub mod script;

pub use encode::{synthesize_samples, synthesize_with_phase, ForwardModel, NoiseSource};
pub use phantom::{CoilModel, CoilSet, DigitalPhantom, PhantomConfig};
pub use scan::{run_scan, NavigatorSignal, ScanController, ScanRecord, ShotData, ShotTruth};
pub use script::{CombTransient, FrequencyTerm, PerturbationScript, PhaseTerm, PoseSchedule};
