//! Static compatibility verifier for intelligence-role packages: no
//! INTERNET permission, no egress channel besides the gateway package, and
//! associations restricted to the allowed partner categories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AssociationRule, AssociationSet, PackageId, PackageManifest, INTERNET_PERMISSION};

/// A failed compatibility predicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CddViolation {
    pub rule_id: String,
    pub package: PackageId,
    pub detail: String,
}

/// Allowed association partner categories, as configurable name lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CddPartnerConfig {
    /// category name -> allowed partner packages
    pub allowed_partners: BTreeMap<String, Vec<PackageId>>,
}

impl Default for CddPartnerConfig {
    fn default() -> Self {
        let pkg = |s: &str| PackageId::new(s).unwrap();
        let mut allowed_partners = BTreeMap::new();
        allowed_partners.insert("bluetooth".into(), vec![pkg("com.android.bluetooth")]);
        allowed_partners.insert("contacts".into(), vec![pkg("com.android.providers.contacts")]);
        allowed_partners.insert(
            "media".into(),
            vec![
                pkg("com.android.providers.media"),
                pkg("com.google.android.providers.media.module"),
            ],
        );
        allowed_partners.insert("pcs".into(), vec![pkg("com.google.android.as.oss")]);
        allowed_partners.insert("system_ui".into(), vec![pkg("com.android.systemui")]);
        allowed_partners.insert("telephony".into(), vec![pkg("com.android.providers.telephony")]);
        CddPartnerConfig { allowed_partners }
    }
}

impl CddPartnerConfig {
    fn is_allowed(&self, partner: &PackageId) -> bool {
        self.allowed_partners.values().any(|pkgs| pkgs.contains(partner))
    }

    fn gateway_packages(&self) -> &[PackageId] {
        self.allowed_partners.get("pcs").map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Verifier outcome. Packages holding an intelligence role get violations;
/// packages without one get the same findings as advisories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CddReport {
    pub violations: Vec<CddViolation>,
    pub advisories: Vec<CddViolation>,
}

impl CddReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// JSON Lines rendering of the violations, stable field order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for v in &self.violations {
            out.push_str(&serde_json::to_string(v).expect("violation serializes"));
            out.push('\n');
        }
        out
    }
}

/// Evaluates the compatibility predicates for one package manifest against
/// the association rule set. Total: never fails.
pub fn verify_cdd(
    manifest: &PackageManifest,
    rules: &[AssociationRule],
    config: &CddPartnerConfig,
) -> CddReport {
    let mut findings = Vec::new();
    let pkg = &manifest.package;

    if manifest.has_permission(INTERNET_PERMISSION) {
        findings.push(CddViolation {
            rule_id: "9.8.6-internet".into(),
            package: pkg.clone(),
            detail: format!("{pkg} requests {INTERNET_PERMISSION}"),
        });
    }

    for channel in &manifest.egress_channels {
        if !config.gateway_packages().contains(channel) {
            findings.push(CddViolation {
                rule_id: "9.8.6-egress".into(),
                package: pkg.clone(),
                detail: format!("egress channel {channel} is not the gateway package"),
            });
        }
    }

    let set = AssociationSet::new(rules.to_vec());
    for partner in set.partners(pkg) {
        if !config.is_allowed(&partner) {
            findings.push(CddViolation {
                rule_id: "9.8.6-association".into(),
                package: pkg.clone(),
                detail: format!("association with {partner} outside allowed partner categories"),
            });
        }
    }

    if manifest.has_intelligence_role() {
        CddReport { violations: findings, advisories: Vec::new() }
    } else {
        CddReport { violations: Vec::new(), advisories: findings }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{parse_association_config, parse_manifest};

    pub(crate) const TABLE2: &str = r#"
<allow-association target="com.google.android.as" allowed="com.android.bluetooth" />
<allow-association target="com.google.android.as" allowed="com.android.providers.contacts" />
<allow-association target="com.google.android.as" allowed="com.android.providers.media" />
<allow-association target="com.google.android.as" allowed="com.android.providers.telephony" />
<allow-association target="com.google.android.as" allowed="com.android.systemui" />
<allow-association target="com.google.android.as" allowed="com.google.android.providers.media.module" />
// Private Compute Services
<allow-association target="com.google.android.as" allowed="com.google.android.as.oss" />
"#;

    fn asi_manifest() -> PackageManifest {
        parse_manifest(
            r#"{"package": "com.google.android.as",
                "permissions": ["android.permission.RECORD_AUDIO", "android.permission.CAMERA"],
                "roles": ["SYSTEM_UI_INTELLIGENCE", "SYSTEM_AMBIENT_AUDIO_INTELLIGENCE",
                          "SYSTEM_AUDIO_INTELLIGENCE", "SYSTEM_NOTIFICATION_INTELLIGENCE",
                          "SYSTEM_TEXT_INTELLIGENCE", "SYSTEM_VISUAL_INTELLIGENCE"],
                "in_pcc": true, "trusted_signature": true}"#,
        )
        .unwrap()
    }

    #[test]
    fn compliant_package_is_clean() {
        let rules = parse_association_config(TABLE2).unwrap();
        let report = verify_cdd(&asi_manifest(), &rules, &CddPartnerConfig::default());
        assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn internet_permission_is_one_violation() {
        let mut manifest = asi_manifest();
        manifest.permissions.insert(super::super::Permission::new(INTERNET_PERMISSION));
        let rules = parse_association_config(TABLE2).unwrap();
        let report = verify_cdd(&manifest, &rules, &CddPartnerConfig::default());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule_id, "9.8.6-internet");
    }

    #[test]
    fn foreign_association_is_one_violation() {
        let mut rules = parse_association_config(TABLE2).unwrap();
        rules.push(AssociationRule {
            target: PackageId::new("com.google.android.as").unwrap(),
            allowed: PackageId::new("com.example.thirdparty").unwrap(),
        });
        let report = verify_cdd(&asi_manifest(), &rules, &CddPartnerConfig::default());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule_id, "9.8.6-association");
        assert!(report.violations[0].detail.contains("com.example.thirdparty"));
    }

    #[test]
    fn non_gateway_egress_channel_is_flagged() {
        let mut manifest = asi_manifest();
        manifest.egress_channels.push(PackageId::new("com.example.uploader").unwrap());
        let report = verify_cdd(&manifest, &[], &CddPartnerConfig::default());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule_id, "9.8.6-egress");
    }

    #[test]
    fn role_free_package_gets_advisories() {
        let manifest = parse_manifest(
            r#"{"package": "com.example.app",
                "permissions": ["android.permission.INTERNET"]}"#,
        )
        .unwrap();
        let report = verify_cdd(&manifest, &[], &CddPartnerConfig::default());
        assert!(report.violations.is_empty());
        assert_eq!(report.advisories.len(), 1);
    }

    #[test]
    fn verification_is_monotone() {
        // Adding a permission or an association rule never removes a finding.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let extra_perms =
            ["android.permission.INTERNET", "android.permission.VIBRATE", "android.permission.CAMERA"];
        let partners =
            ["com.example.one", "com.example.two", "com.android.systemui", "com.android.bluetooth"];
        for _ in 0..50 {
            let mut manifest = asi_manifest();
            let mut rules = parse_association_config(TABLE2).unwrap();
            let mut prev = verify_cdd(&manifest, &rules, &CddPartnerConfig::default());
            for _ in 0..6 {
                if rng.random_bool(0.5) {
                    let p = extra_perms[rng.random_range(0..extra_perms.len())];
                    manifest.permissions.insert(super::super::Permission::new(p));
                } else {
                    let p = partners[rng.random_range(0..partners.len())];
                    rules.push(AssociationRule {
                        target: manifest.package.clone(),
                        allowed: PackageId::new(p).unwrap(),
                    });
                }
                let next = verify_cdd(&manifest, &rules, &CddPartnerConfig::default());
                for v in &prev.violations {
                    assert!(next.violations.contains(v), "violation disappeared: {v:?}");
                }
                prev = next;
            }
        }
    }
}
