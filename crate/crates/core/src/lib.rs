//! Articulated CAD assemblies from declarative plans.
//!
//! A plan names parts, their connector frames and the typed joints between
//! them. Part geometry is a small CSG program. Assembly aligns connector
//! pairs deterministically, the verifier checks the result, and the
//! orchestrator drives pluggable agents through design, generation, repair
//! and review. Finished models export to URDF.

pub mod aabb;
pub mod assembler;
pub mod export;
pub mod mesh;
pub mod metrics;
pub mod orchestrator;
pub mod plan;
pub mod program;
pub mod report;
pub mod se3;
pub mod store;
pub mod verifier;

pub use assembler::{assemble_at_rest, AssembledModel, JointCoordinates};
pub use plan::{parse_plan, validate_plan, AssemblyPlan};
pub use program::{parse_program, PartProgram};
pub use se3::{Pose, Rotation, Vec3};
