//! Type and emptiness filtering.

use std::collections::BTreeMap;

use super::BugInstance;

/// Bug types whose records do not carry usable before/after statements.
pub const DEFAULT_EXCLUDED_TYPES: [&str; 3] = [
    "MISSING_THROWS_EXCEPTION",
    "DELETE_THROWS_EXCEPTION",
    "CHANGE_MODIFIER",
];

/// Dropped-instance tally, keyed by cause.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterDelta {
    pub reasons: BTreeMap<String, usize>,
}

impl FilterDelta {
    pub fn total_dropped(&self) -> usize {
        self.reasons.values().sum()
    }
}

/// Canonical form for matching category labels: uppercase, separators
/// collapsed to underscores ("Missing Throws Exception" == "MISSING_THROWS_EXCEPTION").
fn canonical_type(label: &str) -> String {
    label
        .trim()
        .chars()
        .map(|c| {
            if c == ' ' || c == '-' {
                '_'
            } else {
                c.to_ascii_uppercase()
            }
        })
        .collect()
}

/// Drop instances of the excluded types and any instance with an empty
/// buggy or fixed side. Total function: never fails, every drop is tallied.
pub fn filter_usable(instances: &[BugInstance]) -> (Vec<BugInstance>, FilterDelta) {
    let excluded: Vec<String> = DEFAULT_EXCLUDED_TYPES
        .iter()
        .map(|t| canonical_type(t))
        .collect();

    let mut kept = Vec::with_capacity(instances.len());
    let mut delta = FilterDelta::default();
    for instance in instances {
        let reason = if excluded.contains(&canonical_type(&instance.bug_type)) {
            Some(format!("excluded_type:{}", canonical_type(&instance.bug_type)))
        } else if instance.source_before_fix.trim().is_empty() {
            Some("empty_source_before_fix".to_string())
        } else if instance.source_after_fix.trim().is_empty() {
            Some("empty_source_after_fix".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => *delta.reasons.entry(reason).or_insert(0) += 1,
            None => kept.push(instance.clone()),
        }
    }
    (kept, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(bug_type: &str, before: &str, after: &str) -> BugInstance {
        BugInstance {
            id: format!("{bug_type}:{before}:{after}"),
            project_name: "p".into(),
            fix_commit_sha1: "a".repeat(40),
            bug_type: bug_type.into(),
            source_before_fix: before.into(),
            source_after_fix: after.into(),
            extra: serde_json::Map::new(),
        }
    }

    #[test]
    fn drops_excluded_types_and_empty_sides() {
        let input = vec![
            inst("CHANGE_OPERATOR", "a < b", "a <= b"),
            inst("CHANGE_MODIFIER", "public", "private"),
            inst("DELETE_THROWS_EXCEPTION", "x", "y"),
            inst("Missing Throws Exception", "x", "y"),
            inst("CHANGE_OPERAND", "", "y"),
            inst("CHANGE_OPERAND", "x", "  "),
        ];
        let (kept, delta) = filter_usable(&input);
        assert_eq!(kept.len(), 1);
        assert_eq!(delta.total_dropped(), 5);
        assert_eq!(delta.reasons["excluded_type:CHANGE_MODIFIER"], 1);
        assert_eq!(delta.reasons["excluded_type:MISSING_THROWS_EXCEPTION"], 1);
        assert_eq!(delta.reasons["empty_source_before_fix"], 1);
        assert_eq!(delta.reasons["empty_source_after_fix"], 1);
    }

    #[test]
    fn identity_when_nothing_excluded() {
        let input = vec![
            inst("CHANGE_OPERATOR", "a < b", "a <= b"),
            inst("SWAP_ARGUMENTS", "f(a,b)", "f(b,a)"),
        ];
        let (kept, delta) = filter_usable(&input);
        assert_eq!(kept, input);
        assert_eq!(delta.total_dropped(), 0);
    }

    #[test]
    fn conservation_kept_plus_dropped_equals_input() {
        let input = vec![
            inst("CHANGE_OPERATOR", "a", "b"),
            inst("CHANGE_MODIFIER", "a", "b"),
            inst("CHANGE_OPERAND", "", ""),
        ];
        let (kept, delta) = filter_usable(&input);
        assert_eq!(kept.len() + delta.total_dropped(), input.len());
    }
}
