//! Vortex-filament approximation of sampled 3D Ginzburg-Landau configurations.
//!
//! The pipeline goes lattice field -> grid choice -> face vortices -> minimal
//! connections -> polyhedral current, with energy certificates and norm
//! estimates on top. See `report::analyze` for the end-to-end run.

pub mod balls;
pub mod current;
pub mod dynamics;
pub mod field;
pub mod geom;
pub mod grid;
pub mod lower_bound;
pub mod matching;
pub mod report;
pub mod slice;
pub mod zeta;

pub use num_complex::Complex64;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("region selects no nodes")]
    EmptyRegion,
    #[error("|u| vanishes at node {0}")]
    ZeroModulus(usize),
    #[error("geometry leaves the lattice box: {0}")]
    GeometryOutOfBounds(String),
    #[error("bad field file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
    #[error("no admissible grid after {trials} trials (best min|u| {best_min_modulus:.4}, e1 {best_e1:.4e}, e2 {best_e2:.4e})")]
    GridNotFound {
        trials: usize,
        best_min_modulus: f64,
        best_e1: f64,
        best_e2: f64,
    },
    #[error("low-modulus component touches the face boundary")]
    BoundaryTouch,
    #[error("|u| = 0 on a winding contour")]
    ZeroOnContour,
    #[error("growing ball with nonzero degree left the admissible region")]
    BoundaryCollision,
    #[error("unbalanced configuration: {pos} positive vs {neg} negative points")]
    Unbalanced { pos: usize, neg: usize },
    #[error("point outside the domain: {0:?}")]
    PointOutsideDomain([f64; 3]),
    #[error("point not on the grid boundary surface: {0:?}")]
    PointNotOnSurface([f64; 3]),
    #[error("theta {0} too large for the displacement")]
    ThetaTooLarge(f64),
    #[error("zeta variant does not match the potentials")]
    VariantMismatch,
    #[error("kappa {kappa} must stay below lambda^(2 rho)/3 = {limit}")]
    KappaTooLarge { kappa: f64, limit: f64 },
    #[error("domain is not convex or not supported: {0}")]
    NonConvexDomain(String),
    #[error("boundary descriptor lacks an analytic distance")]
    DomainNotSupported,
    #[error("face orientations disagree on a shared face")]
    OrientationMismatch,
    #[error("gamma {0} outside (0, 1]")]
    GammaOutOfRange(f64),
    #[error("parameters infeasible: {0}")]
    ParamsInfeasible(String),
    #[error("test data touches the space-time boundary")]
    UnsupportedGeometry,
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
