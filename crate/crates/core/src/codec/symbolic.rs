//! Rendering and parsing for the grammar-driven symbolic regimes.
//!
//! Every atom is rendered through the most compact form its grammar offers
//! (domain header slot, negation, `+` mark, key row) and each candidate is
//! checked by parsing it back; the annotated `subject(...)` form is the
//! fallback that covers any atom without an evidence span.

use crate::atom::{AtomType, Modality, Predicate, Scope, SemanticAtom, Value};
use crate::normalize::{normalize_atom, normalize_value, AliasTable, NormValue, NormalizedAtom};

use super::dict::ProtocolDictionary;
use super::grammar::{AnnotationStyle, AtomShape, Domain, Grammar, KeyRow, ListStyle, RowKind, RowScope};
use super::CodecError;

const LIST_SEPARATORS: &[char] = &[',', '|', '+'];

const DEFAULT_TYPE: AtomType = AtomType::Constraint;
const DEFAULT_PREDICATE: Predicate = Predicate::Equals;
const DEFAULT_MODALITY: Modality = Modality::Must;
const DEFAULT_SCOPE: Scope = Scope::Task;

fn type_letter(t: AtomType) -> char {
    match t {
        AtomType::Constraint => 'c',
        AtomType::Goal => 'g',
        AtomType::Entity => 'e',
        AtomType::Preference => 'p',
        AtomType::Decision => 'd',
        AtomType::Procedure => 'r',
        AtomType::Output => 'o',
        AtomType::Safety => 's',
    }
}

fn predicate_letter(p: Predicate) -> char {
    match p {
        Predicate::Equals => 'e',
        Predicate::Allowed => 'a',
        Predicate::Required => 'r',
        Predicate::Preferred => 'p',
        Predicate::Includes => 'i',
    }
}

fn modality_letter(m: Modality) -> char {
    match m {
        Modality::Must => 'm',
        Modality::Should => 's',
        Modality::May => 'y',
        Modality::Unknown => 'u',
    }
}

fn scope_letter(s: Scope) -> char {
    match s {
        Scope::Task => 't',
        Scope::Output => 'o',
        Scope::Artifact => 'a',
        Scope::Trip => 'r',
        Scope::Code => 'c',
        Scope::Unknown => 'u',
    }
}

fn from_letter<T: Copy>(all: &[T], letter: fn(T) -> char, c: char) -> Option<T> {
    all.iter().copied().find(|v| letter(*v) == c)
}

// ---------------------------------------------------------------------------
// lexical helpers

/// Split on top-level whitespace; quotes and braces group.
pub(crate) fn tokenize(payload: &str) -> Result<Vec<String>, CodecError> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut depth = 0usize;
    let mut in_quote = false;
    let mut escaped = false;
    for ch in payload.chars() {
        if in_quote {
            current.push(ch);
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_quote = false;
            }
            continue;
        }
        match ch {
            '"' => {
                in_quote = true;
                current.push(ch);
            }
            '{' => {
                depth += 1;
                current.push(ch);
            }
            '}' => {
                if depth == 0 {
                    current.push(ch);
                    return Err(CodecError::UnbalancedBraces { segment: current });
                }
                depth -= 1;
                current.push(ch);
            }
            c if c.is_whitespace() && depth == 0 => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            }
            c => current.push(c),
        }
    }
    if in_quote {
        return Err(CodecError::UnterminatedQuote { segment: current });
    }
    if depth != 0 {
        return Err(CodecError::UnbalancedBraces { segment: current });
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    Ok(tokens)
}

/// Byte offsets of top-level occurrences of any of `targets`.
fn top_level_positions(s: &str, targets: &[char]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut in_quote = false;
    let mut escaped = false;
    for (i, ch) in s.char_indices() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_quote = false;
            }
            continue;
        }
        match ch {
            '"' => in_quote = true,
            '{' => depth += 1,
            '}' => depth = depth.saturating_sub(1),
            c if depth == 0 && targets.contains(&c) => out.push(i),
            _ => {}
        }
    }
    out
}

fn split_top<'a>(s: &'a str, seps: &[char]) -> Vec<&'a str> {
    let mut parts = Vec::new();
    let mut start = 0;
    for pos in top_level_positions(s, seps) {
        parts.push(&s[start..pos]);
        // every separator is one byte
        start = pos + 1;
    }
    parts.push(&s[start..]);
    parts
}

fn unquote(s: &str) -> Result<Option<String>, CodecError> {
    if !s.starts_with('"') {
        return Ok(None);
    }
    serde_json::from_str::<String>(s)
        .map(Some)
        .map_err(|_| CodecError::BadQuoted { segment: s.to_string() })
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn is_decimal(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

fn is_bare_safe(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.')
}

fn same_structure(a: &NormalizedAtom, b: &NormalizedAtom) -> bool {
    a.atom_type == b.atom_type
        && a.subject == b.subject
        && a.predicate == b.predicate
        && a.value == b.value
        && a.modality == b.modality
        && a.scope == b.scope
}

// ---------------------------------------------------------------------------

pub struct SymbolicCodec<'a> {
    pub grammar: &'a Grammar,
    pub dict: Option<&'a ProtocolDictionary>,
    pub table: &'a AliasTable,
}

struct ParseState<'g> {
    domain: Option<&'g Domain>,
    /// Verification parses run with a fixed domain.
    locked: bool,
    atoms: Vec<SemanticAtom>,
}

impl<'g> ParseState<'g> {
    fn scope(&self, row: RowScope) -> Scope {
        match row {
            RowScope::Fixed(s) => s,
            RowScope::Domain => self.negation_scope(),
        }
    }

    fn negation_scope(&self) -> Scope {
        self.domain.map_or(Scope::Task, |d| d.scope)
    }

    fn enter_domain(&mut self, domain: &'g Domain) {
        if !self.locked && self.domain.is_none() {
            self.domain = Some(domain);
        }
    }
}

fn negation_atom(subject: String, scope: Scope) -> SemanticAtom {
    SemanticAtom::new(
        AtomType::Constraint,
        subject,
        Predicate::Allowed,
        Value::Bool(false),
        Modality::Must,
        scope,
    )
}

fn domain_atom(domain: &Domain) -> SemanticAtom {
    SemanticAtom::new(
        AtomType::Goal,
        "task",
        Predicate::Equals,
        Value::Text(domain.task_value.clone()),
        Modality::Must,
        Scope::Task,
    )
}

fn shape_atom(shape: &AtomShape, value: Value, scope: Scope) -> SemanticAtom {
    SemanticAtom::new(
        shape.atom_type,
        shape.subject.clone(),
        shape.predicate,
        value,
        shape.modality,
        scope,
    )
}

impl<'a> SymbolicCodec<'a> {
    pub fn new(grammar: &'a Grammar, dict: Option<&'a ProtocolDictionary>, table: &'a AliasTable) -> Self {
        SymbolicCodec { grammar, dict, table }
    }

    // ---------------------------------------------------------------- parse

    pub fn parse(&self, payload: &str) -> Result<Vec<SemanticAtom>, CodecError> {
        let tokens = tokenize(payload)?;
        let mut rest = tokens.as_slice();
        if let Some(header) = &self.grammar.header {
            match rest.first() {
                Some(t) if t == header => rest = &rest[1..],
                other => {
                    return Err(CodecError::MissingHeader {
                        expected: header.clone(),
                        found: other.cloned().unwrap_or_default(),
                    })
                }
            }
        }
        let mut state = ParseState {
            domain: None,
            locked: false,
            atoms: Vec::new(),
        };
        self.parse_tokens(rest, &mut state)?;
        Ok(state.atoms)
    }

    fn parse_tokens<'g>(&'g self, tokens: &[String], state: &mut ParseState<'a>) -> Result<(), CodecError> {
        let mut i = 0;
        while i < tokens.len() {
            let token = tokens[i].as_str();
            i += 1;
            if let Some(rest) = token.strip_prefix('@') {
                let (tag, inline) = match rest.split_once(self.grammar.assign) {
                    Some((t, s)) => (t, Some(s)),
                    None => (rest, None),
                };
                let domain = self
                    .grammar
                    .domain_by_tag(tag)
                    .ok_or_else(|| CodecError::UnknownSegment { segment: token.to_string() })?;
                let slots = match inline {
                    Some(s) => Some(s),
                    None => match tokens.get(i) {
                        Some(next) if self.is_slot_token(next) => {
                            i += 1;
                            Some(next.as_str())
                        }
                        _ => None,
                    },
                };
                self.apply_domain_header(domain, slots, state)?;
                continue;
            }
            if let Some(mark) = self.grammar.negation_mark {
                if let Some(rest) = token.strip_prefix(mark) {
                    for element in split_top(rest, LIST_SEPARATORS) {
                        if !element.is_empty() {
                            self.push_negation(element, state)?;
                        }
                    }
                    continue;
                }
            }
            if let Some(rest) = token.strip_prefix('+') {
                let row = self
                    .grammar
                    .mark_row('+', state.domain)
                    .ok_or_else(|| CodecError::UnknownSegment { segment: token.to_string() })?;
                self.apply_row(row, rest, state)?;
                continue;
            }
            let Some(&pos) = top_level_positions(token, &[self.grammar.assign]).first() else {
                return Err(CodecError::UnknownSegment { segment: token.to_string() });
            };
            let (key, value) = (&token[..pos], &token[pos + 1..]);
            if key.starts_with(|c: char| c.is_ascii_uppercase()) {
                if let Some(row) = self.grammar.key_row(key, state.domain) {
                    self.apply_row(row, value, state)?;
                } else if let Some(domain) = self.grammar.domain_by_tag(key) {
                    self.apply_domain_header(domain, Some(value), state)?;
                } else {
                    return Err(CodecError::UnknownSegment { segment: key.to_string() });
                }
            } else {
                self.apply_generic(token, key, value, state)?;
            }
        }
        Ok(())
    }

    fn is_slot_token(&self, token: &str) -> bool {
        !token.starts_with(['@', '+'])
            && self.grammar.negation_mark.is_none_or(|m| !token.starts_with(m))
            && top_level_positions(token, &[self.grammar.assign]).is_empty()
    }

    fn apply_domain_header(
        &self,
        domain: &'a Domain,
        slots: Option<&str>,
        state: &mut ParseState<'a>,
    ) -> Result<(), CodecError> {
        state.enter_domain(domain);
        state.atoms.push(domain_atom(domain));
        let Some(slots) = slots.filter(|s| !s.is_empty()) else {
            return Ok(());
        };
        let keys = self.grammar.slots_for(&domain.tag);
        let parts = split_top(slots, &['/']);
        if parts.len() > keys.len() {
            return Err(CodecError::TooManySlots {
                tag: domain.tag.clone(),
                count: parts.len(),
            });
        }
        for (part, key) in parts.into_iter().zip(keys) {
            if part.is_empty() {
                continue;
            }
            let row = self
                .grammar
                .key_row(key, Some(domain))
                .expect("slot keys are checked at grammar load");
            self.apply_row(row, part, state)?;
        }
        Ok(())
    }

    fn push_negation(&self, element: &str, state: &mut ParseState<'a>) -> Result<(), CodecError> {
        let subject = match unquote(element)? {
            Some(s) => s,
            None => {
                let e = element.strip_prefix('!').unwrap_or(element);
                if let Some(s) = self.grammar.expand_subject(e) {
                    s.to_string()
                } else if let Some(s) = self.dict.and_then(|d| d.negation_subject(e)) {
                    s
                } else {
                    e.to_string()
                }
            }
        };
        state.atoms.push(negation_atom(subject, state.negation_scope()));
        Ok(())
    }

    fn decode_token(&self, raw: &str) -> Result<Option<String>, CodecError> {
        if let Some(s) = unquote(raw)? {
            return Ok(Some(s));
        }
        if raw.starts_with('$') {
            return match self.dict.and_then(|d| d.expand(raw)) {
                Some(e) => Ok(Some(e.to_string())),
                None => Err(CodecError::UndefinedCode { code: raw.to_string() }),
            };
        }
        if let Some(v) = self.grammar.expand_value(raw) {
            return Ok(Some(v.to_string()));
        }
        Ok(self
            .dict
            .filter(|_| !raw.starts_with('!'))
            .and_then(|d| d.expand(raw))
            .map(str::to_string))
    }

    fn decode_scalar(&self, raw: &str, suffix: Option<&str>) -> Result<Value, CodecError> {
        if let Some(s) = self.decode_token(raw)? {
            return Ok(Value::Text(s));
        }
        match raw {
            "true" => return Ok(Value::Bool(true)),
            "false" => return Ok(Value::Bool(false)),
            _ => {}
        }
        let numeric = suffix
            .and_then(|sfx| raw.strip_suffix(sfx))
            .filter(|n| is_decimal(n))
            .or_else(|| Some(raw).filter(|n| is_decimal(n)));
        if let Some(n) = numeric {
            return Ok(Value::Number(n.parse().expect("decimal literal parses")));
        }
        if raw.is_empty() {
            return Err(CodecError::UnknownSegment { segment: raw.to_string() });
        }
        Ok(Value::Text(raw.to_string()))
    }

    /// List elements (with `!x` elements split out as negations), or a scalar.
    fn split_value<'v>(&self, raw: &'v str) -> Result<Option<Vec<&'v str>>, CodecError> {
        if let Some(inner) = raw.strip_prefix('{') {
            let inner = inner
                .strip_suffix('}')
                .ok_or_else(|| CodecError::UnbalancedBraces { segment: raw.to_string() })?;
            return Ok(Some(
                split_top(inner, LIST_SEPARATORS).into_iter().filter(|e| !e.is_empty()).collect(),
            ));
        }
        if top_level_positions(raw, LIST_SEPARATORS).is_empty() {
            return Ok(None);
        }
        Ok(Some(
            split_top(raw, LIST_SEPARATORS).into_iter().filter(|e| !e.is_empty()).collect(),
        ))
    }

    fn is_negated_element<'v>(&self, element: &'v str) -> Option<&'v str> {
        self.grammar.negation_mark.and_then(|m| element.strip_prefix(m))
    }

    fn apply_row(&self, row: &KeyRow, raw: &str, state: &mut ParseState<'a>) -> Result<(), CodecError> {
        let elements = self.split_value(raw)?;
        let shape = match &row.kind {
            RowKind::NegList => {
                for e in elements.unwrap_or_else(|| vec![raw]) {
                    self.push_negation(e, state)?;
                }
                return Ok(());
            }
            RowKind::Atom(shape) => shape,
        };
        let scope = state.scope(shape.scope);
        let suffix = row.suffix.as_deref();
        let mut values = Vec::new();
        match elements {
            None => values.push(self.decode_scalar(raw, suffix)?),
            Some(elements) => {
                let mut items = Vec::new();
                for e in elements {
                    if let Some(neg) = self.is_negated_element(e) {
                        self.push_negation(neg, state)?;
                    } else if row.multi {
                        values.push(self.decode_scalar(e, suffix)?);
                    } else {
                        items.push(self.decode_token(e)?.unwrap_or_else(|| e.to_string()));
                    }
                }
                if !row.multi {
                    values.push(Value::List(items));
                }
            }
        }
        for value in values {
            if row.domain_key {
                if let NormValue::Token(t) = normalize_value(&value, self.table) {
                    if let Some(d) = self.grammar.domain_by_task(&t) {
                        state.enter_domain(d);
                    }
                }
            }
            state.atoms.push(shape_atom(shape, value, scope));
        }
        Ok(())
    }

    fn parse_annotation(&self, segment: &str, text: &str) -> Result<(AtomType, Predicate, Modality, Scope), CodecError> {
        let bad = || CodecError::BadAnnotation { segment: segment.to_string() };
        match self.grammar.annotation {
            AnnotationStyle::Words => {
                let parts: Vec<&str> = text.split('/').collect();
                if parts.len() != 4 {
                    return Err(bad());
                }
                Ok((
                    parts[0].parse().map_err(|_| bad())?,
                    parts[1].parse().map_err(|_| bad())?,
                    parts[2].parse().map_err(|_| bad())?,
                    parts[3].parse().map_err(|_| bad())?,
                ))
            }
            AnnotationStyle::Letters => {
                let c: Vec<char> = text.chars().collect();
                if c.len() != 4 {
                    return Err(bad());
                }
                Ok((
                    from_letter(AtomType::ALL, type_letter, c[0]).ok_or_else(bad)?,
                    from_letter(Predicate::ALL, predicate_letter, c[1]).ok_or_else(bad)?,
                    from_letter(Modality::ALL, modality_letter, c[2]).ok_or_else(bad)?,
                    from_letter(Scope::ALL, scope_letter, c[3]).ok_or_else(bad)?,
                ))
            }
        }
    }

    fn apply_generic(&self, token: &str, key: &str, raw: &str, state: &mut ParseState<'a>) -> Result<(), CodecError> {
        let (subject, annotation) = match key.split_once('(') {
            Some((s, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| CodecError::BadAnnotation { segment: token.to_string() })?;
                (s, Some(self.parse_annotation(token, inner)?))
            }
            None => (key, None),
        };
        if subject.is_empty() || subject.contains([')', '"', '{', '}']) {
            return Err(CodecError::UnknownSegment { segment: token.to_string() });
        }
        let (t, p, m, s) = annotation.unwrap_or((DEFAULT_TYPE, DEFAULT_PREDICATE, DEFAULT_MODALITY, DEFAULT_SCOPE));
        let value = match self.split_value(raw)? {
            None => self.decode_scalar(raw, None)?,
            Some(elements) => {
                let mut items = Vec::new();
                for e in elements {
                    if let Some(neg) = self.is_negated_element(e) {
                        self.push_negation(neg, state)?;
                    } else {
                        items.push(self.decode_token(e)?.unwrap_or_else(|| e.to_string()));
                    }
                }
                Value::List(items)
            }
        };
        state.atoms.push(SemanticAtom::new(t, subject, p, value, m, s));
        Ok(())
    }

    // --------------------------------------------------------------- render

    fn token_candidates(&self, t: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        if let Some(code) = self.dict.and_then(|d| d.value_code(t)) {
            out.push(code.to_string());
        }
        if let Some(code) = self.grammar.value_code(t) {
            out.push(code.to_string());
        }
        if is_bare_safe(t) {
            out.push(t.to_string());
        }
        out.push(quote(t));
        out.dedup();
        out
    }

    fn scalar_candidates(&self, v: &NormValue, suffix: Option<&str>) -> Vec<String> {
        match v {
            NormValue::Bool(b) => vec![b.to_string()],
            NormValue::Number(n) => {
                let plain = crate::atom::format_number(*n);
                match suffix {
                    Some(s) => vec![format!("{plain}{s}"), plain],
                    None => vec![plain],
                }
            }
            NormValue::Token(t) => self.token_candidates(t),
            NormValue::List(_) => Vec::new(),
        }
    }

    fn list_candidates(&self, items: &[String], alt: bool) -> Vec<String> {
        if items.is_empty() {
            return vec!["{}".to_string()];
        }
        let coded: Vec<String> = items
            .iter()
            .map(|t| self.token_candidates(t).swap_remove(0))
            .collect();
        let quoted: Vec<String> = items.iter().map(|t| quote(t)).collect();
        let sep = if alt { "|" } else { "," };
        let mut out = Vec::new();
        for elems in [coded, quoted] {
            let text = match self.grammar.lists {
                ListStyle::Braces => format!("{{{}}}", elems.join(",")),
                ListStyle::Delimited if elems.len() == 1 => format!("{}{sep}", elems[0]),
                ListStyle::Delimited => elems.join(sep),
            };
            if !out.contains(&text) {
                out.push(text);
            }
        }
        out
    }

    fn value_candidates(&self, v: &NormValue, suffix: Option<&str>, alt: bool) -> Vec<String> {
        match v {
            NormValue::List(items) => self.list_candidates(items, alt),
            other => self.scalar_candidates(other, suffix),
        }
    }

    /// Parse one candidate segment under a fixed domain; true iff it yields `target` alone.
    fn verifies(&self, segment: &str, domain: Option<&'a Domain>, target: &NormalizedAtom) -> bool {
        let Ok(tokens) = tokenize(segment) else {
            return false;
        };
        let mut state = ParseState {
            domain,
            locked: true,
            atoms: Vec::new(),
        };
        if self.parse_tokens(&tokens, &mut state).is_err() || state.atoms.len() != 1 {
            return false;
        }
        same_structure(&normalize_atom(&state.atoms[0], self.table), target)
    }

    fn first_verified(
        &self,
        candidates: Vec<String>,
        wrap: impl Fn(&str) -> String,
        domain: Option<&'a Domain>,
        target: &NormalizedAtom,
    ) -> Option<String> {
        candidates
            .into_iter()
            .find(|c| self.verifies(&wrap(c), domain, target))
    }

    fn shape_matches(&self, shape: &AtomShape, n: &NormalizedAtom, domain: Option<&Domain>) -> bool {
        let scope = match shape.scope {
            RowScope::Fixed(s) => s,
            RowScope::Domain => domain.map_or(Scope::Task, |d| d.scope),
        };
        shape.subject == n.subject
            && shape.atom_type == n.atom_type
            && shape.predicate == n.predicate
            && shape.modality == n.modality
            && scope == n.scope
    }

    fn is_negation(&self, n: &NormalizedAtom, domain: Option<&Domain>) -> bool {
        n.atom_type == AtomType::Constraint
            && n.predicate == Predicate::Allowed
            && n.value == NormValue::Bool(false)
            && n.modality == Modality::Must
            && n.scope == domain.map_or(Scope::Task, |d| d.scope)
    }

    fn subject_candidates(&self, subject: &str) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(code) = self.dict.and_then(|d| d.negation_code(subject)) {
            out.push(code.to_string());
        }
        if let Some(code) = self.grammar.subject_code(subject) {
            out.push(code.to_string());
        }
        if is_bare_safe(subject) {
            out.push(subject.to_string());
        }
        out.push(quote(subject));
        out.dedup();
        out
    }

    fn annotation(&self, n: &NormalizedAtom) -> String {
        let fields = (n.atom_type, n.predicate, n.modality, n.scope);
        if fields == (DEFAULT_TYPE, DEFAULT_PREDICATE, DEFAULT_MODALITY, DEFAULT_SCOPE) {
            return String::new();
        }
        match self.grammar.annotation {
            AnnotationStyle::Words => format!("({}/{}/{}/{})", n.atom_type, n.predicate, n.modality, n.scope),
            AnnotationStyle::Letters => format!(
                "({}{}{}{})",
                type_letter(n.atom_type),
                predicate_letter(n.predicate),
                modality_letter(n.modality),
                scope_letter(n.scope)
            ),
        }
    }

    pub fn render(&self, atoms: &[SemanticAtom]) -> Result<String, CodecError> {
        let regime = self.grammar.regime;
        for (index, a) in atoms.iter().enumerate() {
            if a.evidence.is_some() {
                return Err(CodecError::Render {
                    regime,
                    index,
                    subject: a.subject.clone(),
                    reason: "evidence spans have no symbolic form".into(),
                });
            }
        }
        let norms: Vec<NormalizedAtom> = atoms.iter().map(|a| normalize_atom(a, self.table)).collect();
        let has_domain_key = self.grammar.keys.iter().any(|r| r.domain_key);

        // Active domain: a header atom (`@TAG`) or the first domain-selecting key value.
        let mut header: Option<(usize, &'a Domain)> = None;
        let mut domain: Option<&'a Domain> = None;
        for (i, n) in norms.iter().enumerate() {
            let NormValue::Token(t) = &n.value else { continue };
            let Some(d) = self.grammar.domain_by_task(t) else { continue };
            let is_task = same_structure(n, &normalize_atom(&domain_atom(d), self.table));
            if has_domain_key {
                let row = self.grammar.keys.iter().find(|r| r.domain_key).expect("checked");
                if let RowKind::Atom(shape) = &row.kind {
                    if self.shape_matches(shape, n, None) {
                        domain = Some(d);
                        break;
                    }
                }
            } else if is_task {
                header = Some((i, d));
                domain = Some(d);
                break;
            }
        }

        let slot_keys: &[String] = header.map_or(&[], |(_, d)| self.grammar.slots_for(&d.tag));
        let mut slots: Vec<Option<String>> = vec![None; slot_keys.len()];
        // (row index, rendered element) in input order
        let mut by_row: Vec<Vec<String>> = vec![Vec::new(); self.grammar.keys.len()];
        let mut negations: Vec<String> = Vec::new();
        let mut generic: Vec<String> = Vec::new();
        let assign = self.grammar.assign;

        'atoms: for (index, n) in norms.iter().enumerate() {
            if header.is_some_and(|(h, _)| h == index) {
                continue;
            }
            // positional slot after the domain header
            for (pos, key) in slot_keys.iter().enumerate() {
                if slots[pos].is_some() {
                    continue;
                }
                let row = self.grammar.key_row(key, domain).expect("slot rows exist");
                let RowKind::Atom(shape) = &row.kind else { continue };
                if !self.shape_matches(shape, n, domain) {
                    continue;
                }
                let candidates: Vec<String> = self
                    .value_candidates(&n.value, row.suffix.as_deref(), row.alt)
                    .into_iter()
                    .filter(|c| top_level_positions(c, &['/']).is_empty())
                    .collect();
                if let Some(c) = self.first_verified(candidates, |c| format!("{key}{assign}{c}"), domain, n) {
                    slots[pos] = Some(c);
                    continue 'atoms;
                }
            }
            if self.is_negation(n, domain) {
                let subjects = self.subject_candidates(&n.subject);
                if let Some(mark) = self.grammar.negation_mark {
                    if let Some(c) = self.first_verified(subjects.clone(), |c| format!("{mark}{c}"), domain, n) {
                        negations.push(format!("{mark}{c}"));
                        continue;
                    }
                }
                if let Some((ri, row)) = self
                    .grammar
                    .keys
                    .iter()
                    .enumerate()
                    .find(|(_, r)| r.kind == RowKind::NegList && r.applies_in(domain))
                {
                    let key = &row.key;
                    if let Some(c) = self.first_verified(subjects, |c| format!("{key}{assign}{c}"), domain, n) {
                        by_row[ri].push(c);
                        continue;
                    }
                }
            }
            for (ri, row) in self.grammar.keys.iter().enumerate() {
                let RowKind::Atom(shape) = &row.kind else { continue };
                if !row.applies_in(domain) || !self.shape_matches(shape, n, domain) {
                    continue;
                }
                if self.grammar.key_row(&row.key, domain) != Some(row) {
                    continue; // shadowed by a domain-specific row
                }
                let candidates = if row.multi {
                    self.scalar_candidates(&n.value, row.suffix.as_deref())
                } else {
                    self.value_candidates(&n.value, row.suffix.as_deref(), row.alt)
                };
                let rendered = match row.mark {
                    Some(mark) if self.grammar.mark_row(mark, domain) == Some(row) => {
                        self.first_verified(candidates, |c| format!("{mark}{c}"), domain, n)
                    }
                    _ => {
                        let key = &row.key;
                        self.first_verified(candidates, |c| format!("{key}{assign}{c}"), domain, n)
                    }
                };
                if let Some(c) = rendered {
                    by_row[ri].push(c);
                    continue 'atoms;
                }
            }
            let subject = &n.subject;
            if subject.is_empty() || !subject.chars().all(|c| c.is_alphanumeric() || c == '_') {
                return Err(CodecError::Render {
                    regime,
                    index,
                    subject: atoms[index].subject.clone(),
                    reason: "subject is not a canonical identifier".into(),
                });
            }
            let key = format!("{subject}{}", self.annotation(n));
            let candidates = self.value_candidates(&n.value, None, false);
            match self.first_verified(candidates, |c| format!("{key}{assign}{c}"), domain, n) {
                Some(c) => generic.push(format!("{key}{assign}{c}")),
                None => {
                    return Err(CodecError::Render {
                        regime,
                        index,
                        subject: atoms[index].subject.clone(),
                        reason: "value has no form that parses back unchanged".into(),
                    })
                }
            }
        }

        let mut segments: Vec<String> = Vec::new();
        if let Some(h) = &self.grammar.header {
            segments.push(h.clone());
        }
        if let Some((_, d)) = header {
            segments.push(format!("@{}", d.tag));
            let mut filled: Vec<&str> = slots.iter().map(|s| s.as_deref().unwrap_or("")).collect();
            while filled.last() == Some(&"") {
                filled.pop();
            }
            if !filled.is_empty() {
                segments.push(filled.join("/"));
            }
        }
        for (row, elements) in self.grammar.keys.iter().zip(&by_row) {
            if elements.is_empty() {
                continue;
            }
            let key = &row.key;
            match (row.mark, &row.kind) {
                (Some(mark), RowKind::Atom(_)) if self.grammar.mark_row(mark, domain) == Some(row) => {
                    segments.extend(elements.iter().map(|e| format!("{mark}{e}")));
                }
                (_, RowKind::NegList) | (_, RowKind::Atom(_)) if row.multi || row.kind == RowKind::NegList => {
                    let joined = match (self.grammar.lists, elements.len()) {
                        (_, 1) => elements[0].clone(),
                        (ListStyle::Braces, _) => format!("{{{}}}", elements.join(",")),
                        (ListStyle::Delimited, _) => elements.join(","),
                    };
                    segments.push(format!("{key}{assign}{joined}"));
                }
                _ => segments.extend(elements.iter().map(|e| format!("{key}{assign}{e}"))),
            }
        }
        segments.extend(negations);
        segments.extend(generic);
        Ok(segments.join(" "))
    }
}
