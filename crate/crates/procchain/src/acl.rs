//! Ordered, first-match access-control rules.
//!
//! A rule matches on the invoker's role, the operation, and the resource (an
//! asset or a transaction on an asset), and may additionally bind the
//! invoker to the asset through relationship fields: `Relationship(f)`
//! requires the invoker to be the participant the asset's field `f` names
//! (or a member, for set-valued fields), and `AllOf` requires every listed
//! field to bind. Evaluation walks the rules in order and returns the
//! effect of the first match; a policy that matches nothing denies.

use crate::engine::{OrderAsset, Participant, RelationshipRef};
use crate::process::{ProcessDefinition, TransactionKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AclOperation {
    Create,
    Read,
    Update,
    Delete,
}

impl fmt::Display for AclOperation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AclOperation::Create => f.write_str("CREATE"),
            AclOperation::Read => f.write_str("READ"),
            AclOperation::Update => f.write_str("UPDATE"),
            AclOperation::Delete => f.write_str("DELETE"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Effect {
    Allow,
    Deny,
}

/// How a rule ties the invoker to the asset under access.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    /// No relationship requirement.
    Any,
    /// Invoker must be (or be among) the participants the asset's named
    /// relationship field points at.
    Relationship(String),
    /// Every listed field must bind the invoker.
    AllOf(Vec<String>),
}

/// What a rule applies to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceSelector {
    Any,
    /// Any operation on assets of the named type.
    AssetType(String),
    /// Invocation of the named transaction.
    Transaction(String),
}

/// The resource a request is about to touch.
#[derive(Clone, Copy, Debug)]
pub enum AclResource<'a> {
    Asset(&'a OrderAsset),
    /// A transaction applied to (or creating) `asset`. For creates the
    /// asset is the prospective instance, so bindings can be checked
    /// before anything is stored.
    Transaction { name: &'a str, asset: &'a OrderAsset },
}

impl<'a> AclResource<'a> {
    fn asset(&self) -> &'a OrderAsset {
        match self {
            AclResource::Asset(a) => a,
            AclResource::Transaction { asset, .. } => asset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclRule {
    /// Role the invoker must hold; `None` matches any role.
    pub role: Option<crate::process::PartyRole>,
    /// Operations the rule covers; must be non-empty.
    pub operations: BTreeSet<AclOperation>,
    pub resource: ResourceSelector,
    pub binding: Binding,
    pub effect: Effect,
}

impl AclRule {
    pub fn new(
        role: Option<crate::process::PartyRole>,
        operations: impl IntoIterator<Item = AclOperation>,
        resource: ResourceSelector,
        binding: Binding,
        effect: Effect,
    ) -> Self {
        let operations: BTreeSet<AclOperation> = operations.into_iter().collect();
        assert!(!operations.is_empty(), "a rule must cover at least one operation");
        AclRule {
            role,
            operations,
            resource,
            binding,
            effect,
        }
    }

    pub fn allow(
        role: Option<crate::process::PartyRole>,
        operations: impl IntoIterator<Item = AclOperation>,
        resource: ResourceSelector,
        binding: Binding,
    ) -> Self {
        AclRule::new(role, operations, resource, binding, Effect::Allow)
    }

    pub fn deny(
        role: Option<crate::process::PartyRole>,
        operations: impl IntoIterator<Item = AclOperation>,
        resource: ResourceSelector,
        binding: Binding,
    ) -> Self {
        AclRule::new(role, operations, resource, binding, Effect::Deny)
    }
}

/// Ordered rule list. Position is precedence: the first matching rule wins,
/// and a request matching no rule is denied.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclPolicy {
    rules: Vec<AclRule>,
}

impl AclPolicy {
    pub fn new(rules: Vec<AclRule>) -> Self {
        AclPolicy { rules }
    }

    pub fn empty() -> Self {
        AclPolicy { rules: Vec::new() }
    }

    pub fn rules(&self) -> &[AclRule] {
        &self.rules
    }
}

/// Evaluation outcome: the winning effect and, when a rule matched, its
/// zero-based position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub effect: Effect,
    pub matched_rule: Option<usize>,
}

impl Decision {
    pub fn is_allowed(&self) -> bool {
        self.effect == Effect::Allow
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AclError {
    #[error("binding references unknown relationship field `{field}`")]
    UnknownRelationship { field: String },
}

/// First-match evaluation. Errors only when a rule that otherwise matches
/// binds on a relationship field the asset does not have.
pub fn evaluate(
    policy: &AclPolicy,
    invoker: &Participant,
    operation: AclOperation,
    resource: &AclResource<'_>,
) -> Result<Decision, AclError> {
    for (index, rule) in policy.rules.iter().enumerate() {
        if let Some(role) = &rule.role {
            if *role != invoker.role {
                continue;
            }
        }
        if !rule.operations.contains(&operation) {
            continue;
        }
        if !selector_matches(&rule.resource, resource) {
            continue;
        }
        if !binding_matches(&rule.binding, invoker, resource.asset())? {
            continue;
        }
        return Ok(Decision {
            effect: rule.effect,
            matched_rule: Some(index),
        });
    }
    Ok(Decision {
        effect: Effect::Deny,
        matched_rule: None,
    })
}

fn selector_matches(selector: &ResourceSelector, resource: &AclResource<'_>) -> bool {
    match (selector, resource) {
        (ResourceSelector::Any, _) => true,
        (ResourceSelector::AssetType(t), AclResource::Asset(a)) => a.asset_type() == t.as_str(),
        // An asset-type rule also covers transactions touching that type:
        // updating an order is an operation on the order.
        (ResourceSelector::AssetType(t), AclResource::Transaction { asset, .. }) => {
            asset.asset_type() == t.as_str()
        }
        (ResourceSelector::Transaction(n), AclResource::Transaction { name, .. }) => n == name,
        (ResourceSelector::Transaction(_), AclResource::Asset(_)) => false,
    }
}

fn binding_matches(
    binding: &Binding,
    invoker: &Participant,
    asset: &OrderAsset,
) -> Result<bool, AclError> {
    match binding {
        Binding::Any => Ok(true),
        Binding::Relationship(field) => field_binds(field, invoker, asset),
        Binding::AllOf(fields) => {
            for field in fields {
                if !field_binds(field, invoker, asset)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

fn field_binds(field: &str, invoker: &Participant, asset: &OrderAsset) -> Result<bool, AclError> {
    match asset.relationship(field) {
        None => Err(AclError::UnknownRelationship {
            field: field.to_string(),
        }),
        Some(RelationshipRef::One(id)) => Ok(id == invoker.id),
        Some(RelationshipRef::Many(ids)) => Ok(ids.contains(&invoker.id)),
    }
}

/// READ-visibility filter; preserves input order.
pub fn filter_readable<'a>(
    policy: &AclPolicy,
    invoker: &Participant,
    assets: impl IntoIterator<Item = &'a OrderAsset>,
) -> Vec<&'a OrderAsset> {
    assets
        .into_iter()
        .filter(|asset| {
            evaluate(policy, invoker, AclOperation::Read, &AclResource::Asset(asset))
                .map(|d| d.is_allowed())
                .unwrap_or(false)
        })
        .collect()
}

/// Derives the standard policy for a definition:
///
/// 1. the create actor may run the create transaction on orders naming
///    them in the actor's role;
/// 2. every declared party may read orders it is related to;
/// 3. each task may be run only by the participant bound in that task's
///    actor role, and only while that participant is responsible (the
///    actor of some currently enabled task).
///
/// Everything else, admin included, falls through to the implicit deny.
pub fn policy_for_definition(def: &ProcessDefinition) -> AclPolicy {
    let mut rules = Vec::new();
    for tx in &def.transactions {
        if tx.kind != TransactionKind::Create {
            continue;
        }
        rules.push(AclRule::allow(
            Some(tx.actor.clone()),
            [AclOperation::Create],
            ResourceSelector::Transaction(tx.name.clone()),
            Binding::Relationship(tx.actor.as_str().to_string()),
        ));
    }
    for party in &def.parties {
        rules.push(AclRule::allow(
            Some(party.clone()),
            [AclOperation::Read],
            ResourceSelector::AssetType(crate::engine::ORDER_ASSET_TYPE.to_string()),
            Binding::Relationship(party.as_str().to_string()),
        ));
    }
    for tx in def.task_transactions() {
        rules.push(AclRule::allow(
            Some(tx.actor.clone()),
            [AclOperation::Update],
            ResourceSelector::Transaction(tx.name.clone()),
            Binding::AllOf(vec![
                tx.actor.as_str().to_string(),
                crate::engine::RESPONSIBLE_FIELD.to_string(),
            ]),
        ));
    }
    AclPolicy::new(rules)
}

/// The derived policy for the built-in order-processing definition.
pub fn default_order_processing_policy() -> AclPolicy {
    policy_for_definition(&crate::process::builtin_order_processing())
}

fn render_rule(rule: &AclRule) -> String {
    let role = rule
        .role
        .as_ref()
        .map(|r| r.as_str().to_string())
        .unwrap_or_else(|| "any".to_string());
    let ops = rule
        .operations
        .iter()
        .map(|o| o.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let resource = match &rule.resource {
        ResourceSelector::Any => "any".to_string(),
        ResourceSelector::AssetType(t) => t.clone(),
        ResourceSelector::Transaction(t) => t.clone(),
    };
    let binding = match &rule.binding {
        Binding::Any => "any".to_string(),
        Binding::Relationship(f) => f.clone(),
        Binding::AllOf(fs) => fs.join("+"),
    };
    let effect = match rule.effect {
        Effect::Allow => "ALLOW",
        Effect::Deny => "DENY",
    };
    format!("{effect} {role} {ops} {resource} bound {binding}")
}

impl fmt::Display for AclPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            writeln!(f, "{}", render_rule(rule))?;
        }
        writeln!(f, "DENY any any any bound any (implicit)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::test_support::{order_between, participant};
    use crate::process::PartyRole;

    #[test]
    fn empty_policy_denies_everything() {
        let p = participant("S1", "shopper");
        let asset = order_between("O1", "S1", "M1", "L1");
        let d = evaluate(
            &AclPolicy::empty(),
            &p,
            AclOperation::Read,
            &AclResource::Asset(&asset),
        )
        .expect("evaluates");
        assert_eq!(d.effect, Effect::Deny);
        assert_eq!(d.matched_rule, None);
    }

    #[test]
    fn first_match_wins_over_later_rules() {
        let deny_first = AclPolicy::new(vec![
            AclRule::deny(
                None,
                [AclOperation::Read],
                ResourceSelector::Any,
                Binding::Any,
            ),
            AclRule::allow(
                None,
                [AclOperation::Read],
                ResourceSelector::Any,
                Binding::Any,
            ),
        ]);
        let p = participant("S1", "shopper");
        let asset = order_between("O1", "S1", "M1", "L1");
        let d = evaluate(&deny_first, &p, AclOperation::Read, &AclResource::Asset(&asset))
            .expect("evaluates");
        assert_eq!(d.effect, Effect::Deny);
        assert_eq!(d.matched_rule, Some(0));
    }

    #[test]
    fn relationship_binding_requires_matching_participant() {
        let policy = default_order_processing_policy();
        let bound = participant("S1", "shopper");
        let unbound = participant("S2", "shopper");
        let asset = order_between("O1", "S1", "M1", "L1");
        let d = evaluate(&policy, &bound, AclOperation::Read, &AclResource::Asset(&asset))
            .expect("evaluates");
        assert!(d.is_allowed());
        let d = evaluate(&policy, &unbound, AclOperation::Read, &AclResource::Asset(&asset))
            .expect("evaluates");
        assert_eq!(d.effect, Effect::Deny);
    }

    #[test]
    fn all_of_binding_requires_every_field() {
        let policy = default_order_processing_policy();
        let seller = participant("M1", "seller");
        // Seller is bound but not responsible: receiveOrder already done,
        // nothing currently on the seller.
        let mut asset = order_between("O1", "S1", "M1", "L1");
        asset.responsible.clear();
        asset.responsible.insert("S1".to_string());
        let d = evaluate(
            &policy,
            &seller,
            AclOperation::Update,
            &AclResource::Transaction {
                name: "receiveOrder",
                asset: &asset,
            },
        )
        .expect("evaluates");
        assert_eq!(d.effect, Effect::Deny);

        asset.responsible.insert("M1".to_string());
        let d = evaluate(
            &policy,
            &seller,
            AclOperation::Update,
            &AclResource::Transaction {
                name: "receiveOrder",
                asset: &asset,
            },
        )
        .expect("evaluates");
        assert!(d.is_allowed());
    }

    #[test]
    fn role_mismatch_never_matches() {
        let policy = default_order_processing_policy();
        let delivery = participant("L1", "delivery");
        let asset = order_between("O1", "S1", "M1", "L1");
        // Delivery party bound on the asset, but receiveOrder is a seller
        // transaction.
        let d = evaluate(
            &policy,
            &delivery,
            AclOperation::Update,
            &AclResource::Transaction {
                name: "receiveOrder",
                asset: &asset,
            },
        )
        .expect("evaluates");
        assert_eq!(d.effect, Effect::Deny);
    }

    #[test]
    fn unknown_binding_field_is_an_error() {
        let policy = AclPolicy::new(vec![AclRule::allow(
            None,
            [AclOperation::Read],
            ResourceSelector::Any,
            Binding::Relationship("auditor".to_string()),
        )]);
        let p = participant("S1", "shopper");
        let asset = order_between("O1", "S1", "M1", "L1");
        let err = evaluate(&policy, &p, AclOperation::Read, &AclResource::Asset(&asset))
            .expect_err("unknown field");
        assert_eq!(
            err,
            AclError::UnknownRelationship {
                field: "auditor".to_string()
            }
        );
    }

    #[test]
    fn non_matching_binding_rule_is_skipped_not_deny() {
        // A later rule can still allow when an earlier rule's binding
        // merely fails to match.
        let policy = AclPolicy::new(vec![
            AclRule::allow(
                None,
                [AclOperation::Read],
                ResourceSelector::Any,
                Binding::Relationship("seller".to_string()),
            ),
            AclRule::allow(
                None,
                [AclOperation::Read],
                ResourceSelector::Any,
                Binding::Any,
            ),
        ]);
        let p = participant("S1", "shopper");
        let asset = order_between("O1", "S1", "M1", "L1");
        let d = evaluate(&policy, &p, AclOperation::Read, &AclResource::Asset(&asset))
            .expect("evaluates");
        assert!(d.is_allowed());
        assert_eq!(d.matched_rule, Some(1));
    }

    #[test]
    fn filter_readable_keeps_only_related_assets() {
        let policy = default_order_processing_policy();
        let shopper = participant("S1", "shopper");
        let mine = order_between("O1", "S1", "M1", "L1");
        let other = order_between("O2", "S2", "M1", "L1");
        let visible = filter_readable(&policy, &shopper, [&mine, &other]);
        assert_eq!(visible.len(), 1);
        assert_eq!(visible[0].id, "O1");
    }

    #[test]
    fn derived_policy_shape_for_builtin() {
        let policy = default_order_processing_policy();
        // 1 create + 3 read + 9 update rules.
        assert_eq!(policy.rules().len(), 13);
        assert_eq!(
            policy.rules()[0],
            AclRule::allow(
                Some(PartyRole::new("shopper")),
                [AclOperation::Create],
                ResourceSelector::Transaction("createOrder".to_string()),
                Binding::Relationship("shopper".to_string()),
            )
        );
        let update_rules: Vec<_> = policy
            .rules()
            .iter()
            .filter(|r| r.operations.contains(&AclOperation::Update))
            .collect();
        assert_eq!(update_rules.len(), 9);
        for rule in update_rules {
            match &rule.binding {
                Binding::AllOf(fields) => {
                    assert_eq!(fields.len(), 2);
                    assert_eq!(fields[1], "responsible");
                }
                other => panic!("update rules bind conjunctively, got {other:?}"),
            }
        }
    }

    #[test]
    fn policy_renders_one_line_per_rule_plus_implicit_deny() {
        let policy = default_order_processing_policy();
        let text = policy.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 14);
        assert_eq!(
            lines[0],
            "ALLOW shopper CREATE createOrder bound shopper"
        );
        assert!(lines[13].starts_with("DENY any any any bound any"));
        assert!(text.contains("ALLOW seller UPDATE receiveOrder bound seller+responsible"));
    }
}
