//! Training variants, registered by name.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model1d::{Encoder1D, ExplicitField1D, Field1D, FreeAngles, LatentModel, NeuralField1D, OutputAffine};
use crate::scene1d::CropDataset1D;

/// The models a strategy trains, freshly initialized.
pub struct ModelPair {
    pub field: Box<dyn Field1D>,
    pub latent: Box<dyn LatentModel>,
}

/// One way of setting up the joint field/latent optimization.
pub trait TrainingStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;

    /// Replication order actually used for a requested order.
    fn effective_order(&self, requested: usize) -> usize {
        requested
    }

    /// Initializes the models; `rng` is the run's initialization stream.
    fn build(&self, dataset: &CropDataset1D, affine: OutputAffine, rng: &mut ChaCha8Rng) -> ModelPair;
}

struct Full;
struct ExplicitField;
struct L2Loss;
struct FreeAngleFit;

impl TrainingStrategy for Full {
    fn name(&self) -> &'static str {
        "full"
    }

    fn description(&self) -> &'static str {
        "encoder + neural field under the modulo loss"
    }

    fn build(&self, _: &CropDataset1D, affine: OutputAffine, rng: &mut ChaCha8Rng) -> ModelPair {
        let field = Box::new(NeuralField1D::new(rng, affine));
        let latent = Box::new(Encoder1D::new(rng));
        ModelPair { field, latent }
    }
}

impl TrainingStrategy for ExplicitField {
    fn name(&self) -> &'static str {
        "explicit"
    }

    fn description(&self) -> &'static str {
        "encoder + 512-node interpolated grid under the modulo loss"
    }

    fn build(&self, _: &CropDataset1D, affine: OutputAffine, rng: &mut ChaCha8Rng) -> ModelPair {
        let field = Box::new(ExplicitField1D::new(affine));
        let latent = Box::new(Encoder1D::new(rng));
        ModelPair { field, latent }
    }
}

impl TrainingStrategy for L2Loss {
    fn name(&self) -> &'static str {
        "l2"
    }

    fn description(&self) -> &'static str {
        "encoder + neural field under the plain L2 loss (N forced to 1)"
    }

    fn effective_order(&self, _: usize) -> usize {
        1
    }

    fn build(&self, dataset: &CropDataset1D, affine: OutputAffine, rng: &mut ChaCha8Rng) -> ModelPair {
        Full.build(dataset, affine, rng)
    }
}

impl TrainingStrategy for FreeAngleFit {
    fn name(&self) -> &'static str {
        "free"
    }

    fn description(&self) -> &'static str {
        "one free angle per crop + neural field under the modulo loss"
    }

    fn build(&self, dataset: &CropDataset1D, affine: OutputAffine, rng: &mut ChaCha8Rng) -> ModelPair {
        let field = Box::new(NeuralField1D::new(rng, affine));
        let latent = Box::new(FreeAngles::new(dataset.len(), rng));
        ModelPair { field, latent }
    }
}

/// The four built-in variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AblationMode {
    Full,
    ExplicitField,
    L2Loss,
    FreeAngles,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [Self::Full, Self::ExplicitField, Self::L2Loss, Self::FreeAngles];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::ExplicitField => "explicit",
            Self::L2Loss => "l2",
            Self::FreeAngles => "free",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown training mode '{s}'")))
    }
}

/// Name-indexed table of training strategies.
#[derive(Clone, Default)]
pub struct StrategyRegistry {
    entries: BTreeMap<&'static str, Arc<dyn TrainingStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Full));
        r.register(Arc::new(ExplicitField));
        r.register(Arc::new(L2Loss));
        r.register(Arc::new(FreeAngleFit));
        r
    }

    /// Adds or replaces the strategy under its own name.
    pub fn register(&mut self, s: Arc<dyn TrainingStrategy>) {
        self.entries.insert(s.name(), s);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn TrainingStrategy>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown training mode '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}
