//! Voronoi-diagram guidance for online test-time adaptation.
//!
//! Class prototypes act as Voronoi sites in feature space. Unlabelled test
//! batches are classified by the cell they fall into, and a per-dimension
//! affine on the features is adapted to make those assignments confident.
//! Four partitions are available: plain Voronoi, power (weighted) diagrams,
//! and their cluster-induced versions built from rotation-expanded sites.
//! Samples on which the weighted and unweighted diagrams disagree can be
//! filtered out of the adaptation loss.
//!
//! ```
//! use ttvd_core::geometry::{vd_assign, SiteSet};
//!
//! let sites = SiteSet::new(vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
//! assert_eq!(vd_assign(&[1.5, 0.0], &sites).unwrap(), 1);
//! ```

pub mod adaptation;
pub mod augment;
pub mod experiment;
pub mod filter;
pub mod geometry;
pub mod metrics;
pub mod par;
pub mod stream_sim;
pub mod svg;

pub use adaptation::{AdaptConfig, FeatureExtractor, Mode, RunTrace};
pub use augment::AugmentationFamily;
pub use geometry::{ClusterSiteSet, InfluenceConfig, PowerSiteSet, SiteSet};
pub use par::Exec;
pub use stream_sim::{Batch, StreamConfig};
