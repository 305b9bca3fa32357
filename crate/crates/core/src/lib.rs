//! Deformation-to-the-normal-cone charts, Schwartz-class fields on them and
//! convolution over tangent groupoids.

pub mod atlas;
pub mod checks;
pub mod convolution;
pub mod families;
pub mod fields;
pub mod fourier;
pub mod groupoid;
pub mod linalg;
pub mod quadrature;
pub mod scalar;
pub mod support;

pub use scalar::Scalar;

pub use atlas::{DncPoint, PairMorphism, SlicePair};
pub use convolution::{convolve, evaluate_e0, evaluate_et, m_rc, Evaluation, TwoVariableField};
pub use fields::{BundleSchwartzField, SchwartzDncField};
pub use groupoid::{by_key, GroupoidModel, SharedModel, TangentGroupoid};
pub use quadrature::QuadratureSpec;
pub use support::ConicCompactSet;

pub type Field64 = SchwartzDncField<f64>;
pub type Field32 = SchwartzDncField<f32>;
pub type BundleField64 = BundleSchwartzField<f64>;
pub type BundleField32 = BundleSchwartzField<f32>;
pub type Spec64 = QuadratureSpec<f64>;
pub type Spec32 = QuadratureSpec<f32>;
