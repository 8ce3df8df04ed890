pub mod bounds;
pub mod calibration;
pub mod empirical;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod model;
pub mod stream;

pub use empirical::{
    ks_distance, projected_tv, Direction, EmpiricalCdf, MatchSpec, Matcher, Sample,
};
pub use error::{Error, Result};
pub use inference::{Posterior, PosteriorAtom, PosteriorMode, SummaryStats, Weighting};
pub use model::{GenerativeModel, Model, Parameter, Prior};
pub use stream::Streams;
