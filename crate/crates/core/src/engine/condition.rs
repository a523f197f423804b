use std::fmt;
use std::ops::{BitAnd, BitOr};
use std::rc::Rc;

use super::{LockId, Output, ProcessId, SignalId};

/// Something a process can wait on.
#[derive(Clone)]
pub enum Condition {
    Timeout(f64),
    Lock(LockId),
    /// Fires on the next notification of the signal.
    Changed(SignalId),
    /// Fires as soon as `probe` returns true. The probe is re-evaluated
    /// after every notification of `signal`.
    Query { signal: SignalId, probe: Rc<dyn Fn() -> bool> },
    ProcessDone(ProcessId),
    AllOf(Vec<Condition>),
    AnyOf(Vec<Condition>),
}

impl Condition {
    pub fn query(signal: SignalId, probe: impl Fn() -> bool + 'static) -> Self {
        Condition::Query { signal, probe: Rc::new(probe) }
    }
}

impl fmt::Debug for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Timeout(d) => write!(f, "Timeout({d})"),
            Condition::Lock(l) => write!(f, "Lock({})", l.0),
            Condition::Changed(s) => write!(f, "Changed({})", s.0),
            Condition::Query { signal, .. } => write!(f, "Query({})", signal.0),
            Condition::ProcessDone(p) => write!(f, "ProcessDone({})", p.0),
            Condition::AllOf(c) => f.debug_tuple("AllOf").field(c).finish(),
            Condition::AnyOf(c) => f.debug_tuple("AnyOf").field(c).finish(),
        }
    }
}

impl BitAnd for Condition {
    type Output = Condition;
    fn bitand(self, rhs: Condition) -> Condition {
        match self {
            Condition::AllOf(mut v) => {
                v.push(rhs);
                Condition::AllOf(v)
            }
            lhs => Condition::AllOf(vec![lhs, rhs]),
        }
    }
}

impl BitOr for Condition {
    type Output = Condition;
    fn bitor(self, rhs: Condition) -> Condition {
        match self {
            Condition::AnyOf(mut v) => {
                v.push(rhs);
                Condition::AnyOf(v)
            }
            lhs => Condition::AnyOf(vec![lhs, rhs]),
        }
    }
}

/// What a process receives when its condition is satisfied.
#[derive(Clone)]
pub enum Wake {
    Fired,
    Done(Output),
    /// The AnyOf branch at `index` fired first.
    Any { index: usize, wake: Box<Wake> },
    All(Vec<Wake>),
    /// The waited-on lock, signal or process does not exist.
    TargetGone,
}

impl Wake {
    pub fn any_index(&self) -> Option<usize> {
        match self {
            Wake::Any { index, .. } => Some(*index),
            _ => None,
        }
    }

    pub fn is_gone(&self) -> bool {
        matches!(self, Wake::TargetGone)
    }

    /// Downcast a `Done` payload.
    pub fn output<T: 'static>(&self) -> Option<Rc<T>> {
        match self {
            Wake::Done(o) => o.clone().downcast::<T>().ok(),
            Wake::Any { wake, .. } => wake.output(),
            _ => None,
        }
    }
}

impl fmt::Debug for Wake {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Wake::Fired => write!(f, "Fired"),
            Wake::Done(_) => write!(f, "Done(..)"),
            Wake::Any { index, wake } => write!(f, "Any({index}, {wake:?})"),
            Wake::All(w) => f.debug_tuple("All").field(w).finish(),
            Wake::TargetGone => write!(f, "TargetGone"),
        }
    }
}
