//! The two training objectives and their composition contracts.
//!
//! Stage 1 optimises a risk-variance objective: the mean of per-environment
//! losses plus a scaled penalty on their spread, pushing the model toward
//! features that predict equally well everywhere. Stage 2 optimises plain
//! cross-entropy on convex mixtures of example pairs, preferring pairs drawn
//! from different domains.

mod mixup;
mod vrex;

pub use mixup::{
    mixed_loss, mixup_pair, sample_mixup_batch, MixedBatch, MixupConfig, Pairing,
};
pub use vrex::{
    lambda_at_epoch, per_environment_risks, vrex_objective, RiskVector, VrexConfig, VrexTerms,
};
