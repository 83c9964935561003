use std::collections::BTreeSet;

use crate::model::{validate_trace, CallPath, TraceError, TraceGraph};

/// Root-to-leaf call paths of a trace, deduplicated as element sequences.
/// A span shared by several callers yields one path per caller chain.
pub fn extract_call_paths(trace: &TraceGraph) -> Result<BTreeSet<CallPath>, TraceError> {
    validate_trace(trace)?;
    let children = trace.children();
    let root = (0..trace.spans.len())
        .find(|i| trace.edges.iter().all(|&(_, c)| c != *i))
        .expect("validated trace has a root");

    let mut out = BTreeSet::new();
    let mut stack = vec![(root, vec![trace.spans[root].op_key()])];
    while let Some((node, prefix)) = stack.pop() {
        if children[node].is_empty() {
            out.insert(CallPath::new(prefix).expect("prefix holds the root"));
            continue;
        }
        for &child in &children[node] {
            let mut next = prefix.clone();
            next.push(trace.spans[child].op_key());
            stack.push((child, next));
        }
    }
    Ok(out)
}
