//! Numerical toolkit for sup-norm growth of Laplace eigenfunctions: geodesic
//! return dynamics at a point, semiclassical defect-measure pairings,
//! maximal-growth quasimodes and the associated sup-norm bounds on model
//! manifolds.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod fiber;
pub mod manifold;
pub mod microlocal;
pub mod ode;
pub mod quasimode;
pub mod sht;
pub mod special;

pub use bounds::{BoundReport, FiberAtom, FlowoutDensity, GrowthConstants, MeasureDecomposition, PointVerdict};
pub use dynamics::{
    Dissipativity, DissipativityOptions, HamiltonianModel, PhasePoint, PrincipalSymbol, RecurrenceEstimate,
    ReturnRecord, TubeSpec,
};
pub use error::{Error, Result};
pub use fiber::FiberGrid;
pub use manifold::{ChartId, ChartPoint, InjectivityRadius, ManifoldModel, NormalChart, Profile};
pub use microlocal::{DefectEstimate, DictionaryEntry, Symbol, WaveField};
pub use quasimode::{Atom, CircleFunction, Quasimode, QuasimodeSpec};
pub use sht::ShtGrid;
