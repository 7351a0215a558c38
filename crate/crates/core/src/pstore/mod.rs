//! Persistent database state.
//!
//! A [`DbVersion`] maps each predicate to a persistent ordered map from key
//! tuples to value tuples. Relations have empty value tuples. Versions are
//! cheap to branch and never change once shared.

pub mod pmap;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pmap::{Cursor, Iter, PMap};

/// A scalar stored in a tuple.
///
/// Ordering across variants is tag-major (bool < int < string). Schema
/// validation keeps a column homogeneous, so the cross-variant order only
/// matters for containers and never for query results.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(Arc<str>),
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Bool(_) => ValueType::Bool,
            Value::Int(_) => ValueType::Int,
            Value::Str(_) => ValueType::Str,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Compare two values of the same type.
    pub fn try_cmp(&self, other: &Value) -> Result<std::cmp::Ordering, StoreError> {
        if self.value_type() != other.value_type() {
            return Err(StoreError::IncomparableValues(self.clone(), other.clone()));
        }
        Ok(self.cmp(other))
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::str(s)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

pub type Key = Vec<Value>;
pub type Row = Vec<Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Int,
    Str,
    Bool,
}

impl ValueType {
    pub fn parse(s: &str) -> Option<ValueType> {
        match s {
            "int" => Some(ValueType::Int),
            "string" | "str" => Some(ValueType::Str),
            "bool" => Some(ValueType::Bool),
            _ => None,
        }
    }
}

pub type PredId = u32;

/// Signature of a stored predicate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateSig {
    pub name: String,
    pub key_types: Vec<ValueType>,
    #[serde(default)]
    pub value_types: Vec<ValueType>,
}

impl PredicateSig {
    pub fn relation(name: &str, key_types: &[ValueType]) -> Self {
        PredicateSig { name: name.into(), key_types: key_types.to_vec(), value_types: vec![] }
    }

    pub fn function(name: &str, key_types: &[ValueType], value_type: ValueType) -> Self {
        PredicateSig { name: name.into(), key_types: key_types.to_vec(), value_types: vec![value_type] }
    }

    pub fn is_function(&self) -> bool {
        !self.value_types.is_empty()
    }

    pub fn key_arity(&self) -> usize {
        self.key_types.len()
    }

    pub fn arity(&self) -> usize {
        self.key_types.len() + self.value_types.len()
    }
}

/// Ordered set of predicate signatures. A predicate's id is its position.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<PredicateSig>", into = "Vec<PredicateSig>")]
pub struct Schema {
    preds: Vec<PredicateSig>,
    by_name: HashMap<String, PredId>,
}

impl From<Vec<PredicateSig>> for Schema {
    fn from(preds: Vec<PredicateSig>) -> Self {
        let by_name = preds.iter().enumerate().map(|(i, p)| (p.name.clone(), i as PredId)).collect();
        Schema { preds, by_name }
    }
}

impl From<Schema> for Vec<PredicateSig> {
    fn from(s: Schema) -> Self {
        s.preds
    }
}

impl Schema {
    pub fn new(preds: Vec<PredicateSig>) -> Result<Self, StoreError> {
        let s = Schema::from(preds);
        if s.by_name.len() != s.preds.len() {
            return Err(StoreError::DuplicatePredicate);
        }
        Ok(s)
    }

    pub fn id(&self, name: &str) -> Option<PredId> {
        self.by_name.get(name).copied()
    }

    pub fn sig(&self, id: PredId) -> &PredicateSig {
        &self.preds[id as usize]
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PredId, &PredicateSig)> {
        self.preds.iter().enumerate().map(|(i, p)| (i as PredId, p))
    }

    /// Check a record against the signature of `id`.
    pub fn validate(&self, id: PredId, key: &[Value], val: &[Value]) -> Result<(), StoreError> {
        if id as usize >= self.len() {
            return Err(StoreError::BadPredId(id));
        }
        let sig = self.sig(id);
        let mismatch = |detail: String| StoreError::SchemaMismatch { pred: sig.name.clone(), detail };
        if key.len() != sig.key_types.len() {
            return Err(mismatch(format!("key arity {} != {}", key.len(), sig.key_types.len())));
        }
        if val.len() != sig.value_types.len() {
            return Err(mismatch(format!("value arity {} != {}", val.len(), sig.value_types.len())));
        }
        for (v, t) in key.iter().chain(val.iter()).zip(sig.key_types.iter().chain(sig.value_types.iter())) {
            if v.value_type() != *t {
                return Err(mismatch(format!("{v:?} is not {t:?}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.preds).expect("schema serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, StoreError> {
        let preds: Vec<PredicateSig> =
            serde_json::from_str(s).map_err(|e| StoreError::Parse(e.to_string()))?;
        Schema::new(preds)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicate id {0} out of range")]
    BadPredId(PredId),
    #[error("schema mismatch for `{pred}`: {detail}")]
    SchemaMismatch { pred: String, detail: String },
    #[error("cannot compare {0:?} with {1:?}")]
    IncomparableValues(Value, Value),
    #[error("duplicate predicate name in schema")]
    DuplicatePredicate,
    #[error("parse error: {0}")]
    Parse(String),
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, AtomicOrdering::Relaxed)
}

/// One immutable database state. Branching is O(1).
#[derive(Clone)]
pub struct DbVersion {
    id: u64,
    schema: Arc<Schema>,
    preds: Arc<Vec<PMap<Key, Row>>>,
}

impl fmt::Debug for DbVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DbVersion").field("id", &self.id).field("records", &self.len()).finish()
    }
}

impl DbVersion {
    pub fn empty(schema: Arc<Schema>) -> Self {
        let preds = Arc::new(vec![PMap::new(); schema.len()]);
        DbVersion { id: fresh_version(), schema, preds }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    /// A new version sharing all structure with this one.
    pub fn branch(&self) -> Self {
        DbVersion { id: fresh_version(), schema: self.schema.clone(), preds: self.preds.clone() }
    }

    pub fn len(&self) -> usize {
        self.preds.iter().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pred(&self, id: PredId) -> &PMap<Key, Row> {
        &self.preds[id as usize]
    }

    pub fn pred_id(&self, name: &str) -> Result<PredId, StoreError> {
        self.schema.id(name).ok_or_else(|| StoreError::UnknownPredicate(name.into()))
    }

    pub fn validate(&self, id: PredId, key: &[Value], val: &[Value]) -> Result<(), StoreError> {
        self.schema.validate(id, key, val)
    }

    fn pred_mut(&mut self, id: PredId) -> &mut PMap<Key, Row> {
        self.id = fresh_version();
        &mut Arc::make_mut(&mut self.preds)[id as usize]
    }

    /// Insert or replace the record for `key`.
    pub fn upsert(&mut self, id: PredId, key: Key, val: Row) -> Result<Option<Row>, StoreError> {
        self.validate(id, &key, &val)?;
        Ok(self.pred_mut(id).insert(key, val))
    }

    /// Remove the record for `key`, if present.
    pub fn retract(&mut self, id: PredId, key: &[Value]) -> Result<Option<Row>, StoreError> {
        if id as usize >= self.schema.len() {
            return Err(StoreError::BadPredId(id));
        }
        if !self.pred(id).contains_key(key) {
            return Ok(None);
        }
        Ok(self.pred_mut(id).remove(key))
    }

    pub fn lookup(&self, id: PredId, key: &[Value]) -> Option<&Row> {
        self.preds.get(id as usize)?.get(key)
    }

    /// Replace one predicate map wholesale.
    pub fn set_pred(&mut self, id: PredId, map: PMap<Key, Row>) {
        *self.pred_mut(id) = map;
    }

    /// Iterate all records as `(pred, key, value)` in domain order.
    pub fn records(&self) -> impl Iterator<Item = (PredId, &Key, &Row)> {
        self.preds.iter().enumerate().flat_map(|(i, m)| m.iter().map(move |(k, v)| (i as PredId, k, v)))
    }

    /// Line-delimited export: `pred_name<TAB>key_json<TAB>value_json`.
    pub fn export_snapshot(&self) -> String {
        let mut out = String::new();
        for (p, k, v) in self.records() {
            out.push_str(&self.schema.sig(p).name);
            out.push('\t');
            out.push_str(&serde_json::to_string(k).expect("key serializes"));
            out.push('\t');
            out.push_str(&serde_json::to_string(v).expect("value serializes"));
            out.push('\n');
        }
        out
    }

    pub fn import_snapshot(schema: Arc<Schema>, text: &str) -> Result<Self, StoreError> {
        let mut db = DbVersion::empty(schema);
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(name), Some(k), Some(v)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(StoreError::Parse(format!("line {}: expected three fields", n + 1)));
            };
            let id = db.pred_id(name)?;
            let key: Key = serde_json::from_str(k).map_err(|e| StoreError::Parse(format!("line {}: {e}", n + 1)))?;
            let val: Row = serde_json::from_str(v).map_err(|e| StoreError::Parse(format!("line {}: {e}", n + 1)))?;
            db.upsert(id, key, val)?;
        }
        Ok(db)
    }

    /// Structural equality of contents.
    pub fn same_contents(&self, other: &DbVersion) -> bool {
        self.preds.len() == other.preds.len()
            && self.preds.iter().zip(other.preds.iter()).all(|(a, b)| a.ptr_eq(b) || a == b)
    }
}
