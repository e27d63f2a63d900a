use serde::{Deserialize, Serialize};

use crate::space::SlotBounds;

/// Mesh state shared by every slot.
///
/// The poll size of a slot is `initial_step · 2^index` and its mesh size is
/// `initial_step · 4^index`, each floored at the slot granularity. With
/// `index ≤ 0` the mesh is never coarser than the poll size and becomes
/// relatively finer as the index decreases, which is what lets the poll
/// directions become richer over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh {
    pub index: i32,
    /// Below this index the campaign stops.
    pub min_index: i32,
}

impl Mesh {
    pub const MAX_INDEX: i32 = 0;

    pub fn new(index: i32, min_index: i32) -> Self {
        Self {
            index: index.min(Self::MAX_INDEX),
            min_index,
        }
    }

    /// Scale factor `2^index` applied to the initial steps.
    pub fn scale(&self) -> f64 {
        2f64.powi(self.index)
    }

    /// Unclamped poll size Δ of a slot.
    pub fn delta(&self, b: &SlotBounds) -> f64 {
        b.initial_step * self.scale()
    }

    /// Poll size used to build candidates.
    pub fn poll_size(&self, b: &SlotBounds) -> f64 {
        let d = self.delta(b).max(b.granularity);
        if b.integer {
            d.round().max(1.0)
        } else {
            d
        }
    }

    /// Mesh size used to project candidates.
    pub fn mesh_size(&self, b: &SlotBounds) -> f64 {
        let d = (b.initial_step * 4f64.powi(self.index)).max(b.granularity);
        if b.integer {
            d.round().max(1.0)
        } else {
            d
        }
    }

    pub fn refined(&self) -> Self {
        Self {
            index: self.index - 1,
            ..*self
        }
    }

    pub fn coarsened(&self) -> Self {
        Self {
            index: (self.index + 1).min(Self::MAX_INDEX),
            ..*self
        }
    }

    /// The campaign ends once the index drops below its minimum.
    pub fn is_exhausted(&self) -> bool {
        self.index < self.min_index
    }
}

impl Default for Mesh {
    fn default() -> Self {
        Self::new(0, -50)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let b = SlotBounds::int(1.0, 128.0, 16.0);
        let m = Mesh::new(-1, -10);
        assert_eq!(m.poll_size(&b), 8.0);
        assert_eq!(m.mesh_size(&b), 4.0);
        let m = Mesh::new(-3, -10);
        assert_eq!(m.poll_size(&b), 2.0);
        assert_eq!(m.mesh_size(&b), 1.0);
        let m = Mesh::new(-9, -10);
        assert_eq!(m.poll_size(&b), 1.0);

        let r = SlotBounds::real(0.0, 1.0, 1e-3, 0.125);
        let m = Mesh::new(-2, -10);
        assert_eq!(m.poll_size(&r), 0.03125);
        assert_eq!(m.mesh_size(&r), 0.0078125);
        assert_eq!(Mesh::new(-20, -30).mesh_size(&r), 1e-3);
    }

    #[test]
    fn index_capped_at_zero() {
        assert_eq!(Mesh::new(3, -5).index, 0);
        assert_eq!(Mesh::new(0, -5).coarsened().index, 0);
        assert_eq!(Mesh::new(-3, -5).coarsened().index, -2);
        assert_eq!(Mesh::new(-3, -5).refined().index, -4);
        assert!(!Mesh::new(-5, -5).is_exhausted());
        assert!(Mesh::new(-6, -5).is_exhausted());
    }
}
