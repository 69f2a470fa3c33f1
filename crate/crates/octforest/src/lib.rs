//! Distributed forest-of-octrees adaptive mesh refinement.
//!
//! Leaves are stored per tree in Morton order. Ranks are simulated in-process by
//! [`transport`]. On top of the forest sit recursive multi-query search, ghost layers
//! for arbitrarily graded forests, a topology iterator over cells, faces, edges and
//! corners, and continuous high-order node numbering.

pub mod connectivity;
pub mod error;
pub mod forest;
pub mod ghost;
pub mod iterate;
pub mod lnodes;
pub mod octant;
pub mod point;
pub mod search;
pub mod transport;

pub use connectivity::{Connectivity, FaceLink, Xform};
pub use error::{Error, Result};
pub use octant::{AtomRange, Octant, Space};
pub use point::{BMask, Cell, Code, Image, Point, PointKey, SuppEntry};
pub use forest::Forest;
pub use ghost::GhostLayer;
pub use iterate::{iterate, IterOptions, IterStats, Relevance, Side, Visit};
pub use lnodes::{lnodes, GlobalNode, Lnodes, NodeKey};
