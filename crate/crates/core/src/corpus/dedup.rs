//! Duplicate (buggy, fixed) pair removal for the Unique variants.

use std::collections::HashSet;

use super::BugInstance;

/// Keep the first occurrence (in input order) of each whitespace-normalized
/// (buggy, fixed) pair and drop later repeats.
pub fn deduplicate(instances: &[BugInstance]) -> Vec<BugInstance> {
    let mut seen: HashSet<(String, String)> = HashSet::with_capacity(instances.len());
    let mut kept = Vec::with_capacity(instances.len());
    for instance in instances {
        if seen.insert(instance.normalized_pair()) {
            kept.push(instance.clone());
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, before: &str, after: &str) -> BugInstance {
        BugInstance {
            id: id.into(),
            project_name: "p".into(),
            fix_commit_sha1: "a".repeat(40),
            bug_type: "T".into(),
            source_before_fix: before.into(),
            source_after_fix: after.into(),
            extra: serde_json::Map::new(),
        }
    }

    #[test]
    fn first_occurrence_wins_under_normalization() {
        let input = vec![
            inst("1", "a = b ;", "a = c ;"),
            inst("2", "a  =  b ;", "a =  c ;"), // same pair modulo whitespace
            inst("3", "a = b ;", "a = d ;"),    // different fix, kept
        ];
        let out = deduplicate(&input);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].id, "1");
        assert_eq!(out[1].id, "3");
    }

    #[test]
    fn all_distinct_is_identity() {
        let input = vec![inst("1", "a", "b"), inst("2", "c", "d")];
        assert_eq!(deduplicate(&input), input);
    }

    #[test]
    fn idempotent() {
        let input = vec![
            inst("1", "a", "b"),
            inst("2", "a", "b"),
            inst("3", "c", "d"),
        ];
        let once = deduplicate(&input);
        assert_eq!(deduplicate(&once), once);
    }
}
