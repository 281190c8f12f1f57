use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Intersection-over-union kept as exact pixel counts.
///
/// Comparisons cross-multiply the counts so equal fractions with different
/// denominators compare equal without any floating-point rounding.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Iou {
    intersection: u32,
    union: u32,
}

impl Iou {
    pub const ZERO: Iou = Iou {
        intersection: 0,
        union: 0,
    };

    /// `None` when `intersection > union`.
    pub fn new(intersection: u32, union: u32) -> Option<Self> {
        (intersection <= union).then_some(Self {
            intersection,
            union,
        })
    }

    pub fn intersection(&self) -> u32 {
        self.intersection
    }

    pub fn union(&self) -> u32 {
        self.union
    }

    /// An empty union counts as zero overlap.
    pub fn value(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            f64::from(self.intersection) / f64::from(self.union)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.intersection == 0
    }

    pub fn is_one(&self) -> bool {
        self.union > 0 && self.intersection == self.union
    }
}

impl PartialEq for Iou {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Iou {}

impl PartialOrd for Iou {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Iou {
    fn cmp(&self, other: &Self) -> Ordering {
        // 0/0 is treated as 0/1
        let (a, b) = (u64::from(self.intersection), u64::from(self.union.max(1)));
        let (c, d) = (u64::from(other.intersection), u64::from(other.union.max(1)));
        (a * d).cmp(&(c * b))
    }
}

impl fmt::Display for Iou {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.intersection, self.union)
    }
}
