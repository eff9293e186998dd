use std::ops::Range;

/// Sorted, coalesced set of half-open byte ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct RangeSet {
    ranges: Vec<Range<u64>>,
}

impl RangeSet {
    pub(crate) fn insert(&mut self, r: Range<u64>) {
        if r.is_empty() {
            return;
        }
        let mut merged = r;
        let mut out = Vec::with_capacity(self.ranges.len() + 1);
        let mut placed = false;
        for cur in self.ranges.drain(..) {
            if cur.end < merged.start {
                out.push(cur);
            } else if merged.end < cur.start {
                if !placed {
                    out.push(merged.clone());
                    placed = true;
                }
                out.push(cur);
            } else {
                merged = merged.start.min(cur.start)..merged.end.max(cur.end);
            }
        }
        if !placed {
            out.push(merged);
        }
        self.ranges = out;
    }

    pub(crate) fn contains_range(&self, r: &Range<u64>) -> bool {
        self.ranges
            .iter()
            .any(|c| c.start <= r.start && r.end <= c.end)
    }

    /// End of the contiguous run starting at `from`, or `from` itself.
    pub(crate) fn contiguous_end(&self, from: u64) -> u64 {
        self.ranges
            .iter()
            .find(|c| c.start <= from && from < c.end)
            .map_or(from, |c| c.end)
    }

    pub(crate) fn total(&self) -> u64 {
        self.ranges.iter().map(|r| r.end - r.start).sum()
    }

    #[cfg(test)]
    pub(crate) fn as_slice(&self) -> &[Range<u64>] {
        &self.ranges
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn merges_adjacent_and_overlapping() {
        let mut s = RangeSet::default();
        s.insert(1300..1400);
        s.insert(1400..1500);
        s.insert(0..1200);
        assert_eq!(s.as_slice(), &[0..1200, 1300..1500]);
        s.insert(1200..1300);
        assert_eq!(s.as_slice().to_vec(), vec![0..1500]);
        assert_eq!(s.contiguous_end(0), 1500);
        assert_eq!(s.contiguous_end(1600), 1600);
    }

    proptest! {
        #[test]
        fn matches_bitmap(ops in proptest::collection::vec((0u64..60, 1u64..10), 0..30)) {
            let mut set = RangeSet::default();
            let mut bits = [false; 80];
            for (start, len) in ops {
                set.insert(start..start + len);
                for b in &mut bits[start as usize..(start + len) as usize] {
                    *b = true;
                }
            }
            prop_assert_eq!(set.total(), bits.iter().filter(|b| **b).count() as u64);
            for w in set.as_slice().windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            let mut run = 0;
            while run < bits.len() && bits[run] {
                run += 1;
            }
            prop_assert_eq!(set.contiguous_end(0), run as u64);
        }
    }
}
