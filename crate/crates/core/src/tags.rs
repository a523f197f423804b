//! The standard tag vocabulary protocols agree on. Every field is an integer
//! (node and slot indices, uuids, bits, words).

use crate::tagquery::{Pattern, Tag};

pub const ENTANGLEMENT_COUNTERPART: &str = "EntanglementCounterpart";
pub const ENTANGLEMENT_HISTORY: &str = "EntanglementHistory";
pub const ENTANGLEMENT_UPDATE_X: &str = "EntanglementUpdateX";
pub const ENTANGLEMENT_UPDATE_Z: &str = "EntanglementUpdateZ";
pub const ENTANGLEMENT_DELETE: &str = "EntanglementDelete";
pub const SWAP_REQUEST: &str = "SwapRequest";
pub const GRAPH_STATE_STORAGE: &str = "GraphStateStorage";
pub const PURIFIER_RESULTS: &str = "PurifierBellMeasurementResults";
pub const PURIFIED_COUNTERPART: &str = "PurifiedEntanglementCounterpart";
pub const DISTILLED: &str = "DistilledTag";
pub const FLOW: &str = "Flow";
pub const QDATAGRAM: &str = "QDatagram";
pub const QDATAGRAM_SUCCESS: &str = "QDatagramSuccess";
pub const QDATAGRAM_SLOT: &str = "QDatagramSlot";
pub const LINK_REQUEST: &str = "LinkLevelRequest";
pub const LINK_REPLY: &str = "LinkLevelReply";
pub const LINK_REPLY_AT_HOP: &str = "LinkLevelReplyAtHop";
pub const CONSUME_LOG: &str = "ConsumeLog";

/// (name, field kinds) with `true` for integer fields.
pub(crate) const STANDARD_SCHEMAS: &[(&str, &[bool])] = &[
    (ENTANGLEMENT_COUNTERPART, &[true, true]),
    (ENTANGLEMENT_HISTORY, &[true, true, true, true, true]),
    (ENTANGLEMENT_UPDATE_X, &[true, true, true, true, true, true]),
    (ENTANGLEMENT_UPDATE_Z, &[true, true, true, true, true, true]),
    (ENTANGLEMENT_DELETE, &[true, true, true, true]),
    (SWAP_REQUEST, &[]),
    (GRAPH_STATE_STORAGE, &[true, true]),
    (PURIFIER_RESULTS, &[true, true, true, true]),
    (PURIFIED_COUNTERPART, &[true, true, true]),
    (DISTILLED, &[true, true]),
    (FLOW, &[true, true, true, true]),
    (QDATAGRAM, &[true, true, true, true, true]),
    (QDATAGRAM_SUCCESS, &[true, true, true]),
    (QDATAGRAM_SLOT, &[true, true]),
    (LINK_REQUEST, &[true, true, true]),
    (LINK_REPLY, &[true, true, true]),
    (LINK_REPLY_AT_HOP, &[true, true, true]),
    (CONSUME_LOG, &[true, true, true]),
];

pub fn counterpart(remote_node: usize, remote_slot: usize) -> Tag {
    crate::tag!(ENTANGLEMENT_COUNTERPART, remote_node, remote_slot)
}

/// Left on a slot consumed by a swap so late updates can be forwarded.
pub fn history(
    remote_node: usize,
    remote_slot: usize,
    swap_remote_node: usize,
    swap_remote_slot: usize,
    swapped_local: usize,
) -> Tag {
    crate::tag!(ENTANGLEMENT_HISTORY, remote_node, remote_slot, swap_remote_node, swap_remote_slot, swapped_local)
}

/// Fields: past remote node, past remote slot, local slot, new remote node,
/// new remote slot, correction bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Update {
    pub past_remote_node: usize,
    pub past_remote_slot: usize,
    pub local_slot: usize,
    pub new_remote_node: usize,
    pub new_remote_slot: usize,
    pub bit: bool,
}

impl Update {
    pub fn to_tag(self, name: &str) -> Tag {
        crate::tag!(
            name,
            self.past_remote_node,
            self.past_remote_slot,
            self.local_slot,
            self.new_remote_node,
            self.new_remote_slot,
            self.bit
        )
    }

    pub fn from_tag(t: &Tag) -> Update {
        Update {
            past_remote_node: t.idx(0),
            past_remote_slot: t.idx(1),
            local_slot: t.idx(2),
            new_remote_node: t.idx(3),
            new_remote_slot: t.idx(4),
            bit: t.int(5) != 0,
        }
    }
}

/// Sent by the cutoff protocol: (sender node, sender slot, receiver node, receiver slot).
pub fn delete(send_node: usize, send_slot: usize, rec_node: usize, rec_slot: usize) -> Tag {
    crate::tag!(ENTANGLEMENT_DELETE, send_node, send_slot, rec_node, rec_slot)
}

pub fn swap_request() -> Tag {
    crate::tag!(SWAP_REQUEST)
}

pub fn graph_state_storage(uuid: u64, vertex: usize) -> Tag {
    crate::tag!(GRAPH_STATE_STORAGE, uuid, vertex)
}

pub fn purifier_results(node: usize, xx: u64, zz: u64, session: u64) -> Tag {
    crate::tag!(PURIFIER_RESULTS, node, xx, zz, session)
}

pub fn purified_counterpart(remote_node: usize, remote_slot: usize, session: u64) -> Tag {
    crate::tag!(PURIFIED_COUNTERPART, remote_node, remote_slot, session)
}

pub fn distilled(remote_node: usize, remote_slot: usize) -> Tag {
    crate::tag!(DISTILLED, remote_node, remote_slot)
}

pub fn counterpart_pattern() -> Pattern {
    Pattern::new(ENTANGLEMENT_COUNTERPART)
}
