use crate::graph::Window;

/// Merges the context windows `[t, t + e]` of every branching time into
/// disjoint sorted intervals. Windows that share at least one timestep are
/// merged.
pub fn cluster_windows(branch_times: &[u32], e: u32) -> Vec<Window> {
    merge_windows(branch_times.iter().map(|&t| Window::from_length(t, e)).collect())
}

pub(crate) fn merge_windows(mut windows: Vec<Window>) -> Vec<Window> {
    windows.sort();
    let mut merged: Vec<Window> = Vec::with_capacity(windows.len());
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.start <= last.end => last.end = last.end.max(w.end),
            _ => merged.push(w),
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_examples() {
        assert_eq!(cluster_windows(&[49], 10), vec![Window::new(49, 59)]);
        assert_eq!(cluster_windows(&[5, 12], 10), vec![Window::new(5, 22)]);
        assert_eq!(cluster_windows(&[0, 30], 10), vec![Window::new(0, 10), Window::new(30, 40)]);
        assert!(cluster_windows(&[], 10).is_empty());
        // shared endpoint merges, adjacent integers do not
        assert_eq!(cluster_windows(&[0, 10], 10), vec![Window::new(0, 20)]);
        assert_eq!(cluster_windows(&[0, 11], 10).len(), 2);
    }

    proptest! {
        #[test]
        fn idempotent_and_covering(times in proptest::collection::vec(0u32..200, 0..20), e in 0u32..30) {
            let out = cluster_windows(&times, e);
            for pair in out.windows(2) {
                prop_assert!(pair[0].end < pair[1].start);
            }
            for &t in &times {
                let w = Window::from_length(t, e);
                prop_assert_eq!(out.iter().filter(|o| o.start <= w.start && w.end <= o.end).count(), 1);
            }
            // re-clustering the output (as windows of their own length) is a no-op
            let mut again: Vec<Window> = Vec::new();
            for w in &out {
                again.extend(cluster_windows(&[w.start], w.end - w.start));
            }
            prop_assert_eq!(&again, &out);
        }
    }
}
