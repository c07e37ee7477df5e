//! Versioned policy files (`adpolicy-v1`).

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    FatiguePolicy, FatiguePolicyConfig, FixedCountPolicy, GreedyPolicy, MaxAdsPolicy, MixturePolicy, NoAdsPolicy, Policy,
    SoftmaxPolicy, SoftmaxPolicyParams, StaticPolicy, StaticPolicyConfig, UniformPolicy,
};
use crate::action_space::ActionConstraints;
use crate::error::{Error, Result};
use crate::estimators::FittedRewardModel;
use crate::simulator::ContextSchema;

pub const POLICY_FORMAT: &str = "adpolicy-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    NoAds,
    MaxAds,
    Uniform,
    FixedCount { ads: u32 },
    Static(StaticPolicyConfig),
    Fatigue(FatiguePolicyConfig),
    Softmax { name: String, params: SoftmaxPolicyParams },
    Dm { model: FittedRewardModel },
    Mixture { name: String, components: Vec<(f64, PolicySpec)> },
    /// Argmax serving of the wrapped policy.
    Greedy { policy: Box<PolicySpec> },
}

impl PolicySpec {
    pub fn build(&self, schema: &ContextSchema) -> Result<Arc<dyn Policy>> {
        Ok(match self {
            PolicySpec::NoAds => Arc::new(NoAdsPolicy),
            PolicySpec::MaxAds => Arc::new(MaxAdsPolicy),
            PolicySpec::Uniform => Arc::new(UniformPolicy),
            PolicySpec::FixedCount { ads } => Arc::new(FixedCountPolicy::new(*ads)),
            PolicySpec::Static(c) => Arc::new(StaticPolicy::new(*c)?),
            PolicySpec::Fatigue(c) => Arc::new(FatiguePolicy::new(*c, schema)?),
            PolicySpec::Softmax { name, params } => Arc::new(SoftmaxPolicy::new(name.clone(), params.clone())?),
            PolicySpec::Dm { model } => Arc::new(super::DmPolicy::new(Arc::new(model.clone()))),
            PolicySpec::Mixture { name, components } => {
                let built = components
                    .iter()
                    .map(|(w, s)| Ok((*w, s.build(schema)?)))
                    .collect::<Result<Vec<_>>>()?;
                Arc::new(MixturePolicy::new(name.clone(), built)?)
            }
            PolicySpec::Greedy { policy } => Arc::new(GreedyPolicy::new(policy.build(schema)?)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format: String,
    pub constraints_hash: String,
    pub context_schema: String,
    pub policy: PolicySpec,
}

impl PolicyFile {
    pub fn new(policy: PolicySpec, constraints: &ActionConstraints, schema: &ContextSchema) -> Self {
        Self {
            format: POLICY_FORMAT.to_string(),
            constraints_hash: constraints.hash(),
            context_schema: schema.name.clone(),
            policy,
        }
    }

    /// Builds the policy after checking format, constraints and schema.
    pub fn instantiate(&self, constraints: &ActionConstraints, schema: &ContextSchema) -> Result<Arc<dyn Policy>> {
        if self.format != POLICY_FORMAT {
            return Err(Error::Schema {
                found: self.format.clone(),
                expected: POLICY_FORMAT.to_string(),
            });
        }
        let catalog = constraints.hash();
        if self.constraints_hash != catalog {
            return Err(Error::ConstraintMismatch {
                policy: self.constraints_hash.clone(),
                catalog,
            });
        }
        if self.context_schema != schema.name {
            return Err(Error::Schema {
                found: self.context_schema.clone(),
                expected: schema.name.clone(),
            });
        }
        self.policy.build(schema)
    }
}

pub fn save_policy(path: impl AsRef<Path>, file: &PolicyFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Reads a policy file and instantiates it for `constraints`.
pub fn load_policy(
    path: impl AsRef<Path>,
    constraints: &ActionConstraints,
    schema: &ContextSchema,
) -> Result<(PolicyFile, Arc<dyn Policy>)> {
    let text = std::fs::read_to_string(path)?;
    let file: PolicyFile = serde_json::from_str(&text)?;
    let policy = file.instantiate(constraints, schema)?;
    Ok((file, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::{CatalogKey, CatalogSet};
    use crate::estimators::ConstantRewardModel;

    #[test]
    fn round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let schema = ContextSchema::simulator();
        let constraints = ActionConstraints::default();
        let spec = PolicySpec::Mixture {
            name: "mix".into(),
            components: vec![
                (0.5, PolicySpec::Static(StaticPolicyConfig { offset: 3, post_gap: 5 })),
                (0.5, PolicySpec::Dm { model: FittedRewardModel::Constant(ConstantRewardModel::new(1.0)) }),
                (
                    0.5,
                    PolicySpec::Greedy {
                        policy: Box::new(PolicySpec::Fatigue(FatiguePolicyConfig::default())),
                    },
                ),
            ],
        };
        save_policy(&path, &PolicyFile::new(spec.clone(), &constraints, &schema)).unwrap();
        let (file, pol) = load_policy(&path, &constraints, &schema).unwrap();
        assert_eq!(file.policy, spec);
        let cat = CatalogSet::new(constraints).unwrap().get(CatalogKey::new(0, None));
        let p = pol.probabilities(&vec![0.0; schema.len()], &cat);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let other = ActionConstraints {
            max_ads: 1,
            ..constraints
        };
        let err = load_policy(&path, &other, &schema).err().unwrap();
        assert!(matches!(err, Error::ConstraintMismatch { .. }));
    }

    #[test]
    fn wrong_format_is_rejected() {
        let schema = ContextSchema::simulator();
        let mut f = PolicyFile::new(PolicySpec::Uniform, &ActionConstraints::default(), &schema);
        f.format = "adpolicy-v0".into();
        assert!(matches!(
            f.instantiate(&ActionConstraints::default(), &schema).err().unwrap(),
            Error::Schema { .. }
        ));
    }
}
