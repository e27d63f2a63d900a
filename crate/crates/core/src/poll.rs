//! Poll set construction: a maximal positive basis around the incumbent plus
//! its categorical neighbors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mesh::Mesh;
use crate::space::{Configuration, NeighborKind, SpaceBounds};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PollOrigin {
    /// Index into [`PollSet::directions`].
    Direction(usize),
    Neighbor(NeighborKind),
    /// Proposed by a search step.
    Search,
}

impl PollOrigin {
    pub fn tag(&self) -> &'static str {
        match self {
            PollOrigin::Direction(_) => "poll-direction",
            PollOrigin::Neighbor(_) => "categorical-neighbor",
            PollOrigin::Search => "search",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PollCandidate {
    pub config: Configuration,
    pub origin: PollOrigin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PollSet {
    pub candidates: Vec<PollCandidate>,
    /// The 2n directions of the maximal positive basis, `[H, -H]`.
    pub directions: Vec<Vec<f64>>,
    /// `Δ ∘ d` for every direction, before projection.
    pub displacements: Vec<Vec<f64>>,
}

impl PollSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Householder basis of a seeded random unit vector and its negation.
///
/// The columns of `H = I - 2vvᵀ` are orthonormal; each is rescaled to unit
/// max-norm so the largest component of every poll step equals the poll
/// size of that slot.
pub fn positive_basis(n: usize, seed: u64) -> Vec<Vec<f64>> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v[0] = 1.0;
    }

    let mut dirs = Vec::with_capacity(2 * n);
    for j in 0..n {
        let mut col: Vec<f64> = (0..n)
            .map(|i| f64::from(u8::from(i == j)) - 2.0 * v[i] * v[j])
            .collect();
        let inf = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        col.iter_mut().for_each(|x| *x /= inf);
        dirs.push(col);
    }
    let negated: Vec<Vec<f64>> = dirs
        .iter()
        .map(|d| d.iter().map(|x| -x).collect())
        .collect();
    dirs.extend(negated);
    dirs
}

/// Poll set around `incumbent`, categorical neighbors included.
pub fn generate_poll(
    incumbent: &Configuration,
    mesh: &Mesh,
    seed: u64,
    bounds: &SpaceBounds,
) -> PollSet {
    generate_poll_with(incumbent, mesh, seed, bounds, true)
}

/// Builds `{x + Δ∘d}` for the seeded basis, projects to mesh and bounds,
/// removes duplicates and points equal to the incumbent, then optionally
/// appends the projected categorical neighbors.
pub fn generate_poll_with(
    incumbent: &Configuration,
    mesh: &Mesh,
    seed: u64,
    bounds: &SpaceBounds,
    include_neighbors: bool,
) -> PollSet {
    let slots = incumbent.slots();
    let x = incumbent.values();
    let poll_sizes: Vec<f64> = slots
        .iter()
        .map(|s| mesh.poll_size(bounds.slot(s.kind)))
        .collect();
    let directions = positive_basis(slots.len(), seed);

    let mut candidates: Vec<PollCandidate> = Vec::with_capacity(directions.len() + 5);
    let mut displacements = Vec::with_capacity(directions.len());
    let push = |candidates: &mut Vec<PollCandidate>, config: Configuration, origin| {
        if config != *incumbent && !candidates.iter().any(|c| c.config == config) {
            candidates.push(PollCandidate { config, origin });
        }
    };

    for (j, d) in directions.iter().enumerate() {
        let step: Vec<f64> = d.iter().zip(&poll_sizes).map(|(d, s)| d * s).collect();
        let trial: Vec<f64> = x.iter().zip(&step).map(|(x, s)| x + s).collect();
        displacements.push(step);
        let config = incumbent.with_values(&trial).project_to_mesh(mesh, bounds);
        push(&mut candidates, config, PollOrigin::Direction(j));
    }

    if include_neighbors {
        if let Ok(neighbors) = incumbent.neighbors(bounds) {
            for (kind, n) in neighbors {
                push(
                    &mut candidates,
                    n.project_to_mesh(mesh, bounds),
                    PollOrigin::Neighbor(kind),
                );
            }
        }
    }

    PollSet {
        candidates,
        directions,
        displacements,
    }
}
