//! Binary event windows and pairwise transfer entropy.

pub mod estimator;
pub mod matrix;
pub mod oracle;
pub mod pairs;
pub mod recorder;
pub mod window;

pub use estimator::{binarize, te_from_counts, te_pair, triplet_counts, TripletCounts};
pub use matrix::{compute_te_matrix, Direction, TeMatrix};
pub use oracle::{next_given_prev_entropy, te_pair_oracle};
pub use pairs::{pair_count, select_pairs, PairPolicy, PairSet};
pub use recorder::{Recorder, ThresholdMode};
pub use window::BinaryWindow;
