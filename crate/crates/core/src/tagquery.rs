//! Tags, tag stores and query patterns.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_FIELDS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Sym(String),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            Value::Sym(_) => None,
        }
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Int(_) => ValueKind::Int,
            Value::Sym(_) => ValueKind::Sym,
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}
impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}
impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::Int(v as i64)
    }
}
impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}
impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Int(v as i64)
    }
}
impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Sym(v.to_string())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Sym(s) => write!(f, ":{s}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueKind {
    Int,
    Sym,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub name: String,
    pub fields: Vec<Value>,
}

impl Tag {
    pub fn new(name: &str, fields: Vec<Value>) -> Self {
        Tag { name: name.to_string(), fields }
    }

    /// Integer field `i`; panics if the field is missing or symbolic, which
    /// the schema check rules out for registered tags.
    pub fn int(&self, i: usize) -> i64 {
        self.fields[i].as_int().unwrap_or_else(|| panic!("field {i} of {} is not an int", self.name))
    }

    pub fn idx(&self, i: usize) -> usize {
        self.int(i) as usize
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fields: Vec<String> = self.fields.iter().map(|v| v.to_string()).collect();
        write!(f, "{}({})", self.name, fields.join(","))
    }
}

/// Build a tag from a name and a list of field values.
#[macro_export]
macro_rules! tag {
    ($name:expr $(, $v:expr)* $(,)?) => {
        $crate::tagquery::Tag::new($name, vec![$($crate::tagquery::Value::from($v)),*])
    };
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TagEntry {
    pub id: u64,
    pub seq: u64,
    pub time: f64,
    pub tag: Tag,
}

#[derive(Clone)]
pub enum Matcher {
    Exact(Value),
    Wildcard,
    Predicate(Rc<dyn Fn(&Value) -> bool>),
}

impl Matcher {
    fn accepts(&self, v: &Value) -> bool {
        match self {
            Matcher::Exact(e) => e == v,
            Matcher::Wildcard => true,
            Matcher::Predicate(p) => p(v),
        }
    }
}

impl fmt::Debug for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Matcher::Exact(v) => write!(f, "{v}"),
            Matcher::Wildcard => write!(f, "❓"),
            Matcher::Predicate(_) => write!(f, "<pred>"),
        }
    }
}

/// Type name plus one matcher per field; missing trailing matchers are
/// wildcards.
#[derive(Clone, Debug)]
pub struct Pattern {
    pub name: String,
    pub matchers: Vec<Matcher>,
}

impl Pattern {
    pub fn new(name: &str) -> Self {
        Pattern { name: name.to_string(), matchers: Vec::new() }
    }

    pub fn eq(mut self, v: impl Into<Value>) -> Self {
        self.matchers.push(Matcher::Exact(v.into()));
        self
    }

    pub fn any(mut self) -> Self {
        self.matchers.push(Matcher::Wildcard);
        self
    }

    pub fn pred(mut self, p: impl Fn(&Value) -> bool + 'static) -> Self {
        self.matchers.push(Matcher::Predicate(Rc::new(p)));
        self
    }

    /// Predicate on an integer field.
    pub fn int(self, p: impl Fn(i64) -> bool + 'static) -> Self {
        self.pred(move |v| v.as_int().is_some_and(&p))
    }

    pub fn matches(&self, t: &Tag) -> bool {
        t.name == self.name
            && self.matchers.len() <= t.fields.len()
            && self.matchers.iter().zip(&t.fields).all(|(m, v)| m.accepts(v))
    }
}

/// Ordered tag entries of one taggable thing.
#[derive(Clone, Debug, Default)]
pub struct TagStore {
    entries: Vec<TagEntry>,
    next_seq: u64,
}

impl TagStore {
    pub fn push(&mut self, id: u64, time: f64, tag: Tag) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push(TagEntry { id, seq, time, tag });
    }

    pub fn remove(&mut self, id: u64) -> Option<TagEntry> {
        let i = self.entries.iter().position(|e| e.id == id)?;
        Some(self.entries.remove(i))
    }

    pub fn query(&self, p: &Pattern) -> Option<&TagEntry> {
        self.entries.iter().find(|e| p.matches(&e.tag))
    }

    pub fn queryall(&self, p: &Pattern) -> Vec<&TagEntry> {
        self.entries.iter().filter(|e| p.matches(&e.tag)).collect()
    }

    pub fn querydelete(&mut self, p: &Pattern) -> Option<TagEntry> {
        let i = self.entries.iter().position(|e| p.matches(&e.tag))?;
        Some(self.entries.remove(i))
    }

    pub fn entries(&self) -> &[TagEntry] {
        &self.entries
    }

    pub fn clear(&mut self) -> Vec<TagEntry> {
        std::mem::take(&mut self.entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Field kinds per tag name, fixed at first registration.
#[derive(Clone, Debug, Default)]
pub struct SchemaRegistry {
    kinds: HashMap<String, Vec<ValueKind>>,
}

impl SchemaRegistry {
    /// Registry preloaded with the standard vocabulary.
    pub fn standard() -> Self {
        use ValueKind::*;
        let mut r = SchemaRegistry::default();
        for (name, kinds) in crate::tags::STANDARD_SCHEMAS {
            r.kinds.insert(name.to_string(), kinds.iter().map(|k| if *k { Int } else { Sym }).collect());
        }
        r
    }

    pub fn register(&mut self, name: &str, kinds: Vec<ValueKind>) -> Result<()> {
        if kinds.len() > MAX_FIELDS {
            return Err(Error::TagSchemaViolation(format!("{name} has more than {MAX_FIELDS} fields")));
        }
        match self.kinds.get(name) {
            Some(k) if *k != kinds => Err(Error::TagSchemaViolation(format!("{name} already registered as {k:?}"))),
            _ => {
                self.kinds.insert(name.to_string(), kinds);
                Ok(())
            }
        }
    }

    /// Validate, registering unknown names on first sight.
    pub fn check(&mut self, t: &Tag) -> Result<()> {
        let kinds: Vec<ValueKind> = t.fields.iter().map(|v| v.kind()).collect();
        match self.kinds.get(&t.name) {
            Some(k) if *k != kinds => {
                Err(Error::TagSchemaViolation(format!("{t} does not match registered kinds {k:?}")))
            }
            Some(_) => Ok(()),
            None => self.register(&t.name, kinds),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oldest_match_first_and_fifo_delete() {
        let mut s = TagStore::default();
        s.push(1, 0.0, tag!("EntanglementCounterpart", 2, 1));
        s.push(2, 0.0, tag!("EntanglementCounterpart", 2, 5));
        s.push(3, 0.0, tag!("Other", 2));
        let p = Pattern::new("EntanglementCounterpart").eq(2).any();
        assert_eq!(s.query(&p).unwrap().id, 1);
        assert_eq!(s.queryall(&p).len(), 2);
        assert_eq!(s.querydelete(&p).unwrap().id, 1);
        assert_eq!(s.querydelete(&p).unwrap().id, 2);
        assert!(s.querydelete(&p).is_none());
    }

    #[test]
    fn predicate_matcher() {
        let mut s = TagStore::default();
        s.push(1, 0.0, tag!("QDatagram", 7, 0, 3));
        s.push(2, 0.0, tag!("QDatagram", 8, 2, 3));
        let p = Pattern::new("QDatagram").any().int(|src| src != 2);
        assert_eq!(s.query(&p).unwrap().id, 1);
    }

    #[test]
    fn schema_is_fixed_on_first_use() {
        let mut r = SchemaRegistry::standard();
        assert!(r.check(&tag!("EntanglementCounterpart", 1, 2)).is_ok());
        assert!(matches!(r.check(&tag!("EntanglementCounterpart", "a", 2)), Err(Error::TagSchemaViolation(_))));
        assert!(r.check(&tag!("swap_request")).is_ok());
        assert!(r.check(&tag!("swap_request", 3)).is_err());
    }
}
