//! Discourse structure construction: intra-chunk RST trees and the
//! inter-chunk rhetorical graph.

pub mod inter;
pub mod intra;
