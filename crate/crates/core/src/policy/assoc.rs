//! Parser and serializer for the allow-association config dialect: a
//! sequence of `<allow-association target="…" allowed="…"/>` elements with
//! `//`-prefixed comment lines permitted between them.

use std::collections::HashSet;

use super::{AssociationRule, PackageId, PolicyError};

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { chars: text.chars().peekable(), line: 1 }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next();
        if c == Some('\n') {
            self.line += 1;
        }
        c
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn err(&self, msg: impl Into<String>) -> PolicyError {
        PolicyError::Parse { line: self.line, msg: msg.into() }
    }

    fn skip_trivia(&mut self) -> Result<(), PolicyError> {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('/') => {
                    self.bump();
                    if self.peek() == Some('/') {
                        while let Some(c) = self.bump() {
                            if c == '\n' {
                                break;
                            }
                        }
                    } else {
                        return Err(self.err("stray '/' outside a comment"));
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn ident(&mut self) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                out.push(c);
                self.bump();
            } else {
                break;
            }
        }
        out
    }
}

/// Parses an allow-association config document into its rules, in document
/// order. Attribute order within an element is irrelevant.
pub fn parse_association_config(text: &str) -> Result<Vec<AssociationRule>, PolicyError> {
    let mut cur = Cursor::new(text);
    let mut rules = Vec::new();
    loop {
        cur.skip_trivia()?;
        match cur.peek() {
            None => break,
            Some('<') => {
                cur.bump();
                rules.push(parse_element(&mut cur)?);
            }
            Some(c) => return Err(cur.err(format!("expected '<', found {c:?}"))),
        }
    }
    Ok(rules)
}

fn parse_element(cur: &mut Cursor) -> Result<AssociationRule, PolicyError> {
    let name = cur.ident();
    if name != "allow-association" {
        return Err(cur.err(format!("unknown element <{name}>")));
    }
    let mut target: Option<PackageId> = None;
    let mut allowed: Option<PackageId> = None;
    loop {
        cur.skip_ws();
        match cur.peek() {
            Some('/') => {
                cur.bump();
                if cur.bump() != Some('>') {
                    return Err(cur.err("expected '>' after '/'"));
                }
                break;
            }
            Some(c) if c.is_ascii_lowercase() => {
                let attr = cur.ident();
                cur.skip_ws();
                if cur.bump() != Some('=') {
                    return Err(cur.err(format!("expected '=' after attribute {attr:?}")));
                }
                cur.skip_ws();
                if cur.bump() != Some('"') {
                    return Err(cur.err("expected opening quote"));
                }
                let mut value = String::new();
                loop {
                    match cur.bump() {
                        Some('"') => break,
                        Some('\n') | None => return Err(cur.err("unterminated quote")),
                        Some(c) => value.push(c),
                    }
                }
                let line = cur.line;
                let pkg = PackageId::new(&value)
                    .map_err(|_| PolicyError::Parse {
                        line,
                        msg: format!("invalid package name {value:?}"),
                    })?;
                let slot = match attr.as_str() {
                    "target" => &mut target,
                    "allowed" => &mut allowed,
                    other => return Err(cur.err(format!("unknown attribute {other:?}"))),
                };
                if slot.replace(pkg).is_some() {
                    return Err(cur.err(format!("duplicate attribute {attr:?}")));
                }
            }
            Some(c) => return Err(cur.err(format!("unexpected character {c:?} in element"))),
            None => return Err(cur.err("unterminated element")),
        }
    }
    match (target, allowed) {
        (Some(target), Some(allowed)) => Ok(AssociationRule { target, allowed }),
        (None, _) => Err(cur.err("missing attribute \"target\"")),
        (_, None) => Err(cur.err("missing attribute \"allowed\"")),
    }
}

/// Renders rules back to the config dialect; inverse of the parser.
pub fn serialize_association_config(rules: &[AssociationRule]) -> String {
    let mut out = String::new();
    for rule in rules {
        out.push_str(&format!(
            "<allow-association target=\"{}\" allowed=\"{}\" />\n",
            rule.target, rule.allowed
        ));
    }
    out
}

/// The rule set together with its symmetric closure, which is the relation
/// the IPC broker enforces.
#[derive(Debug, Clone, Default)]
pub struct AssociationSet {
    rules: Vec<AssociationRule>,
    closure: HashSet<(PackageId, PackageId)>,
}

impl AssociationSet {
    pub fn new(rules: Vec<AssociationRule>) -> Self {
        let mut closure = HashSet::new();
        for r in &rules {
            closure.insert((r.target.clone(), r.allowed.clone()));
            closure.insert((r.allowed.clone(), r.target.clone()));
        }
        AssociationSet { rules, closure }
    }

    /// The raw directional rules, in document order.
    pub fn rules(&self) -> &[AssociationRule] {
        &self.rules
    }

    /// Whether the symmetric closure permits the (src, dst) pair.
    pub fn allows(&self, src: &PackageId, dst: &PackageId) -> bool {
        self.closure.contains(&(src.clone(), dst.clone()))
    }

    /// All partners of `pkg` under the symmetric closure, sorted.
    pub fn partners(&self, pkg: &PackageId) -> Vec<PackageId> {
        let mut out: Vec<PackageId> = self
            .closure
            .iter()
            .filter(|(a, _)| a == pkg)
            .map(|(_, b)| b.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE2: &str = r#"
<allow-association target="com.google.android.as" allowed="com.android.bluetooth" />
<allow-association target="com.google.android.as" allowed="com.android.providers.contacts" />
<allow-association target="com.google.android.as" allowed="com.android.providers.media" />
<allow-association target="com.google.android.as" allowed="com.android.providers.telephony" />
<allow-association target="com.google.android.as" allowed="com.android.systemui" />
<allow-association target="com.google.android.as" allowed="com.google.android.providers.media.module" />
// Private Compute Services
<allow-association target="com.google.android.as" allowed="com.google.android.as.oss" />
"#;

    #[test]
    fn single_element() {
        let rules = parse_association_config(
            r#"<allow-association target="com.google.android.as" allowed="com.android.systemui" />"#,
        )
        .unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].target.as_str(), "com.google.android.as");
        assert_eq!(rules[0].allowed.as_str(), "com.android.systemui");
    }

    #[test]
    fn empty_document() {
        assert!(parse_association_config("").unwrap().is_empty());
        assert!(parse_association_config("  \n// just a comment\n").unwrap().is_empty());
    }

    #[test]
    fn full_allowlist_document() {
        let rules = parse_association_config(TABLE2).unwrap();
        assert_eq!(rules.len(), 7);
        assert_eq!(rules[6].allowed.as_str(), "com.google.android.as.oss");
    }

    #[test]
    fn attribute_order_is_irrelevant() {
        let rules = parse_association_config(
            r#"<allow-association allowed="com.android.systemui" target="com.google.android.as" />"#,
        )
        .unwrap();
        assert_eq!(rules[0].target.as_str(), "com.google.android.as");
    }

    #[test]
    fn malformed_elements_report_line_numbers() {
        let err = parse_association_config(
            "<allow-association target=\"com.a.b\" />",
        )
        .unwrap_err();
        assert_eq!(err, PolicyError::Parse { line: 1, msg: "missing attribute \"allowed\"".into() });

        let err = parse_association_config(
            "\n\n<allow-association target=\"com.a.b\" allowed=\"unclosed />",
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::Parse { line: 3, .. }), "{err:?}");

        let err = parse_association_config(
            r#"<allow-association target="com.a.b" allowed="com.c.d" color="red" />"#,
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::Parse { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn roundtrip_is_identity() {
        let rules = parse_association_config(TABLE2).unwrap();
        let text = serialize_association_config(&rules);
        assert_eq!(parse_association_config(&text).unwrap(), rules);
    }

    #[test]
    fn symmetric_closure() {
        let set = AssociationSet::new(parse_association_config(TABLE2).unwrap());
        let asi = PackageId::new("com.google.android.as").unwrap();
        let sysui = PackageId::new("com.android.systemui").unwrap();
        assert!(set.allows(&asi, &sysui));
        assert!(set.allows(&sysui, &asi));
        let stranger = PackageId::new("com.example.messenger").unwrap();
        assert!(!set.allows(&asi, &stranger));
        assert_eq!(set.partners(&asi).len(), 7);
    }
}
