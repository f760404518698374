//! Public-suffix rules and registrable-domain (eTLD+1) computation.
//!
//! Rules use the publicsuffix.org text format: one rule per line, `//`
//! comments, `*.` wildcards and `!` exceptions. Matching follows the
//! published algorithm: an exception rule beats every other rule, otherwise
//! the rule with the most labels wins. Hosts no rule covers fall back to their
//! last two labels.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

const MAX_HOST_LEN: usize = 253;
const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuffixRuleSet {
    exact: HashSet<String>,
    /// Parents of `*.` rules: `*.ck` is stored as `ck`.
    wildcard: HashSet<String>,
    /// `!www.ck` is stored as `www.ck`.
    exception: HashSet<String>,
}

impl SuffixRuleSet {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = SuffixRuleSet::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            // Only the first whitespace-delimited token is the rule.
            let rule = line
                .split_whitespace()
                .next()
                .unwrap_or_default()
                .to_lowercase();
            let bad =
                |why: &str| Error::SuffixRules(format!("line {}: rule {rule:?} {why}", idx + 1));

            if rule == "*" {
                // The implicit default rule; identical to the two-label fallback.
                continue;
            }
            let (set, body) = if let Some(rest) = rule.strip_prefix('!') {
                (&mut rules.exception, rest)
            } else if let Some(rest) = rule.strip_prefix("*.") {
                (&mut rules.wildcard, rest)
            } else {
                (&mut rules.exact, rule.as_str())
            };
            if body.is_empty() || body.split('.').any(str::is_empty) {
                return Err(bad("has an empty label"));
            }
            if body.contains(['*', '!', '/']) {
                return Err(bad("has a misplaced marker"));
            }
            if rule.starts_with('!') && !body.contains('.') {
                return Err(bad("is an exception without a parent suffix"));
            }
            set.insert(body.to_string());
        }
        if rules.is_empty() {
            return Err(Error::SuffixRules("no rules found".into()));
        }
        Ok(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::SuffixRules(msg) => Error::SuffixRules(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The rule subset shipped with the crate (common generic and country-code
    /// suffixes, including second-level registries such as `co.uk`).
    pub fn bundled() -> Self {
        Self::parse(include_str!("../../data/public_suffix_list.dat"))
            .expect("bundled suffix list is valid")
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.wildcard.len() + self.exception.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of labels in the public suffix of an already-normalized host,
    /// or `None` when no rule matches.
    fn suffix_labels(&self, host: &str) -> Option<usize> {
        // Byte offsets at which each label starts; suffix i is host[starts[i]..].
        let starts: Vec<usize> = std::iter::once(0)
            .chain(host.match_indices('.').map(|(i, _)| i + 1))
            .collect();
        let n = starts.len();

        for (i, &start) in starts.iter().enumerate() {
            if self.exception.contains(&host[start..]) {
                // The exception's own leftmost label is registrable.
                return Some(n - i - 1);
            }
        }

        let mut best = None;
        for (i, &start) in starts.iter().enumerate() {
            let suffix = &host[start..];
            let labels = n - i;
            let exact = self.exact.contains(suffix);
            let wild = i + 1 < n && self.wildcard.contains(&host[starts[i + 1]..]);
            if exact || wild {
                // Leftmost match has the most labels.
                best = Some(labels);
                break;
            }
        }
        best
    }

    pub fn registrable_domain(&self, host: &str) -> Result<String> {
        let host = normalize_host(host)?;
        if is_ipv4(&host) {
            return Ok(host);
        }
        let n = host.split('.').count();
        let suffix = self.suffix_labels(&host).unwrap_or(1);
        if suffix >= n {
            // The host is itself a public suffix (or a bare label).
            return Ok(host);
        }
        let keep = suffix + 1;
        let start = host
            .rmatch_indices('.')
            .nth(keep - 1)
            .map(|(i, _)| i + 1)
            .unwrap_or(0);
        Ok(host[start..].to_string())
    }
}

/// Free-function form of [`SuffixRuleSet::registrable_domain`].
pub fn registrable_domain(host: &str, rules: &SuffixRuleSet) -> Result<String> {
    rules.registrable_domain(host)
}

/// Case-folds, strips one trailing dot and validates a hostname.
pub fn normalize_host(host: &str) -> Result<String> {
    let err = |reason| Error::Hostname {
        host: host.to_string(),
        reason,
    };
    let trimmed = host.trim();
    let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed);
    if trimmed.is_empty() {
        return Err(err("empty"));
    }
    if trimmed.len() > MAX_HOST_LEN {
        return Err(err("longer than 253 characters"));
    }
    let lower = trimmed.to_ascii_lowercase();
    for label in lower.split('.') {
        if label.is_empty() {
            return Err(err("empty label"));
        }
        if label.len() > MAX_LABEL_LEN {
            return Err(err("label longer than 63 characters"));
        }
        if !label
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
        {
            return Err(err("illegal character"));
        }
    }
    Ok(lower)
}

fn is_ipv4(host: &str) -> bool {
    let parts: Vec<&str> = host.split('.').collect();
    parts.len() == 4 && parts.iter().all(|p| p.parse::<u8>().is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(text: &str) -> SuffixRuleSet {
        SuffixRuleSet::parse(text).unwrap()
    }

    #[test]
    fn single_rule_application() {
        let r = rules("com\nco.uk\nuk\n");
        assert_eq!(
            r.registrable_domain("cdn.shop.example.com").unwrap(),
            "example.com"
        );
        assert_eq!(
            r.registrable_domain("a.b.example.co.uk").unwrap(),
            "example.co.uk"
        );
        assert_eq!(r.registrable_domain("example.com").unwrap(), "example.com");
    }

    #[test]
    fn fallback_to_last_two_labels() {
        let r = rules("com\n");
        assert_eq!(
            r.registrable_domain("x.y.example.zz").unwrap(),
            "example.zz"
        );
    }

    #[test]
    fn wildcard_and_exception() {
        let r = rules("// comment\n*.ck\n!www.ck\n");
        assert_eq!(r.registrable_domain("a.b.c.ck").unwrap(), "b.c.ck");
        assert_eq!(r.registrable_domain("www.ck").unwrap(), "www.ck");
        assert_eq!(r.registrable_domain("x.www.ck").unwrap(), "www.ck");
    }

    #[test]
    fn case_and_trailing_dot_are_normalized() {
        let r = rules("com\n");
        assert_eq!(
            r.registrable_domain("WWW.Example.COM.").unwrap(),
            "example.com"
        );
    }

    #[test]
    fn host_that_is_a_suffix_maps_to_itself() {
        let r = rules("co.uk\nuk\n");
        assert_eq!(r.registrable_domain("co.uk").unwrap(), "co.uk");
        assert_eq!(r.registrable_domain("localhost").unwrap(), "localhost");
    }

    #[test]
    fn ip_literals_pass_through() {
        let r = rules("com\n");
        assert_eq!(r.registrable_domain("10.0.0.1").unwrap(), "10.0.0.1");
    }

    #[test]
    fn malformed_hosts_name_the_host() {
        let r = rules("com\n");
        for bad in ["", "a..com", "exa mple.com", "ex!ample.com", ".com"] {
            let err = r.registrable_domain(bad).unwrap_err();
            match &err {
                Error::Hostname { host, .. } => assert_eq!(host, bad),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_empty_and_malformed_rule_files() {
        assert!(SuffixRuleSet::parse("// only comments\n\n").is_err());
        assert!(SuffixRuleSet::parse("co..uk\n").is_err());
        assert!(SuffixRuleSet::parse("a.*.uk\n").is_err());
        assert!(SuffixRuleSet::parse("!ck\n").is_err());
    }

    #[test]
    fn bundled_list_covers_common_suffixes() {
        let r = SuffixRuleSet::bundled();
        assert_eq!(r.registrable_domain("news.bbc.co.uk").unwrap(), "bbc.co.uk");
        assert_eq!(
            r.registrable_domain("ads.example.com.au").unwrap(),
            "example.com.au"
        );
        assert_eq!(
            r.registrable_domain("static.doubleclick.net").unwrap(),
            "doubleclick.net"
        );
    }
}
