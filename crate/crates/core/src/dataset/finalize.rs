//! Two-pass assembly of records whose signals depend on how the feed run
//! ended (depth reached, abandonment), which is only known afterwards.

use std::collections::HashMap;

use super::LoggedRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RawEvent {
    /// A served sub-feed. `rank_i` must already be set.
    Fetch(LoggedRecord),
    /// End of the current feed run within a session.
    RunEnd {
        session_id: String,
        rank_d: u32,
        feed_abandoned: bool,
    },
}

/// Applies every `RunEnd` to the fetches of its run and returns the records in
/// fetch order. Fetches with no closing event keep `rank_d = rank_i`.
pub fn finalize_records(events: Vec<RawEvent>) -> Result<Vec<LoggedRecord>> {
    let mut out: Vec<LoggedRecord> = Vec::new();
    let mut open: HashMap<String, Vec<usize>> = HashMap::new();
    for ev in events {
        match ev {
            RawEvent::Fetch(r) => {
                open.entry(r.session_id.clone()).or_default().push(out.len());
                out.push(r);
            }
            RawEvent::RunEnd {
                session_id,
                rank_d,
                feed_abandoned,
            } => {
                for idx in open.remove(&session_id).unwrap_or_default() {
                    let s = &mut out[idx].sat_signals;
                    if s.rank_i > rank_d {
                        return Err(Error::Data(format!(
                            "session {session_id}: fetch rank {} beyond run depth {rank_d}",
                            s.rank_i
                        )));
                    }
                    s.rank_d = rank_d;
                    s.feed_abandoned = u8::from(feed_abandoned);
                }
            }
        }
    }
    for idx in open.into_values().flatten() {
        let s = &mut out[idx].sat_signals;
        s.rank_d = s.rank_i;
    }
    Ok(out)
}
