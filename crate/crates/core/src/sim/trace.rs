use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::Value;

use super::Tick;

/// Every record kind a run can emit. `docs/formats.md` lists the keys each
/// one carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKind {
    Alloc,
    Dealloc,
    Swap,
    Evict,
    Reload,
    Unresolvable,
    ExcSignal,
    Retry,
    ResolveReq,
    ResolveHop,
    ResolveOk,
    ResolveMiss,
    Establish,
    EstablishFault,
    Send,
    Deliver,
    Rebind,
    Stale,
    Overflow,
    SendFault,
    Close,
    Hop,
    Error,
}

impl TraceKind {
    pub const ALL: [TraceKind; 23] = [
        TraceKind::Alloc,
        TraceKind::Dealloc,
        TraceKind::Swap,
        TraceKind::Evict,
        TraceKind::Reload,
        TraceKind::Unresolvable,
        TraceKind::ExcSignal,
        TraceKind::Retry,
        TraceKind::ResolveReq,
        TraceKind::ResolveHop,
        TraceKind::ResolveOk,
        TraceKind::ResolveMiss,
        TraceKind::Establish,
        TraceKind::EstablishFault,
        TraceKind::Send,
        TraceKind::Deliver,
        TraceKind::Rebind,
        TraceKind::Stale,
        TraceKind::Overflow,
        TraceKind::SendFault,
        TraceKind::Close,
        TraceKind::Hop,
        TraceKind::Error,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::Alloc => "alloc",
            TraceKind::Dealloc => "dealloc",
            TraceKind::Swap => "swap",
            TraceKind::Evict => "evict",
            TraceKind::Reload => "reload",
            TraceKind::Unresolvable => "unresolvable",
            TraceKind::ExcSignal => "exc_signal",
            TraceKind::Retry => "retry",
            TraceKind::ResolveReq => "resolve_req",
            TraceKind::ResolveHop => "resolve_hop",
            TraceKind::ResolveOk => "resolve_ok",
            TraceKind::ResolveMiss => "resolve_miss",
            TraceKind::Establish => "establish",
            TraceKind::EstablishFault => "establish_fault",
            TraceKind::Send => "send",
            TraceKind::Deliver => "deliver",
            TraceKind::Rebind => "rebind",
            TraceKind::Stale => "stale",
            TraceKind::Overflow => "overflow",
            TraceKind::SendFault => "send_fault",
            TraceKind::Close => "close",
            TraceKind::Hop => "hop",
            TraceKind::Error => "error",
        }
    }

    /// Hop records: each one counts as a message at both of its nodes.
    pub fn is_hop(&self) -> bool {
        matches!(self, TraceKind::Hop | TraceKind::ResolveHop)
    }

    /// Records that close out a send.
    pub fn is_send_terminal(&self) -> bool {
        matches!(
            self,
            TraceKind::Deliver | TraceKind::Stale | TraceKind::Overflow | TraceKind::SendFault
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub tick: Tick,
    pub kind: TraceKind,
    pub fields: BTreeMap<&'static str, Value>,
}

impl TraceRecord {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.fields.get(key)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key).and_then(Value::as_u64)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(Value::as_str)
    }
}

impl Serialize for TraceRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.fields.len() + 2))?;
        map.serialize_entry("tick", &self.tick)?;
        map.serialize_entry("kind", self.kind.as_str())?;
        for (k, v) in &self.fields {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub(crate) fn push(&mut self, record: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.tick <= record.tick));
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.of_kind(kind).count()
    }

    /// Kinds in record order.
    pub fn kinds(&self) -> Vec<TraceKind> {
        self.records.iter().map(|r| r.kind).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_is_tick_kind_then_alphabetical() {
        let mut fields = BTreeMap::new();
        fields.insert("zeta", json!(1));
        fields.insert("alpha", json!("v:0305"));
        let rec = TraceRecord {
            tick: 7,
            kind: TraceKind::ResolveOk,
            fields,
        };
        let text = serde_json::to_string(&rec).unwrap();
        assert_eq!(text, r#"{"tick":7,"kind":"resolve_ok","alpha":"v:0305","zeta":1}"#);
    }

    #[test]
    fn kind_names_are_unique() {
        let mut names: Vec<_> = TraceKind::ALL.iter().map(|k| k.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), TraceKind::ALL.len());
    }
}
