use std::fmt;

/// Inclusive column interval `[left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Segment {
    pub left: usize,
    pub right: usize,
}

impl Segment {
    pub fn new(left: usize, right: usize) -> Self {
        debug_assert!(left <= right, "segment [{left}, {right}] is reversed");
        Self { left, right }
    }

    /// Number of columns covered.
    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    /// Number of columns shared with `other`.
    pub fn overlap(&self, other: &Segment) -> usize {
        let lo = self.left.max(other.left);
        let hi = self.right.min(other.right);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.left, self.right)
    }
}

/// Renders segments as a JSON array of `[left, right]` pairs.
pub fn segments_to_json(segments: &[Segment]) -> String {
    let pairs: Vec<[usize; 2]> = segments.iter().map(|s| [s.left, s.right]).collect();
    serde_json::to_string(&pairs).expect("integer pairs always serialize")
}

pub fn segments_from_json(text: &str) -> Result<Vec<Segment>, String> {
    let pairs: Vec<[usize; 2]> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    pairs
        .into_iter()
        .map(|[l, r]| {
            if l <= r {
                Ok(Segment::new(l, r))
            } else {
                Err(format!("reversed segment [{l}, {r}]"))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let segs = vec![Segment::new(0, 4), Segment::new(4, 9)];
        let text = segments_to_json(&segs);
        assert_eq!(text, "[[0,4],[4,9]]");
        assert_eq!(segments_from_json(&text).unwrap(), segs);
        assert_eq!(segments_to_json(&[]), "[]");
        assert!(segments_from_json("[[5,2]]").is_err());
    }

    #[test]
    fn overlap_counts_shared_columns() {
        let a = Segment::new(3, 7);
        assert_eq!(a.overlap(&Segment::new(5, 9)), 3);
        assert_eq!(a.overlap(&Segment::new(8, 9)), 0);
        assert_eq!(a.overlap(&a), 5);
    }
}
