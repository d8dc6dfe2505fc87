//! Exact reference dynamics for small systems.
//!
//! [`master`] and [`mcwf`] treat two-level arrays using the excitation-number
//! block structure; [`dense`] is a plain multilevel Lindblad solver used to
//! validate the cumulant equations on a handful of atoms.

mod blocks;
pub mod dense;
pub mod master;
pub mod mcwf;

pub use blocks::Blocks;
pub use master::{master_equation_evolve, MasterOptions, MAX_MASTER_ATOMS};
pub use mcwf::{mcwf_ensemble, McwfOptions, Unravelling, MAX_MCWF_ATOMS};

use crate::error::{invalid, Result};
use crate::interactions::CouplingSet;

pub(crate) fn require_two_level(set: &CouplingSet) -> Result<()> {
    if set.n_channels() != 1 {
        return invalid(format!(
            "exact two-level solvers need a single channel, got {}",
            set.n_channels()
        ));
    }
    Ok(())
}
