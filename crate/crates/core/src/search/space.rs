use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, SearchError};
use crate::model::{Assignment, ComponentKey, CompressionConfig, ModelArchitecture, MIN_BITS, REFERENCE_BITS};

/// A point of the discrete grid: `[b_idx_0, p_idx_0, b_idx_1, p_idx_1, ...]`,
/// one pair per group.
pub type GridPoint = Vec<usize>;

/// Spaces at most this large are enumerated instead of sampled.
pub const ENUMERATION_LIMIT: u128 = 4096;

/// The discrete configuration space.
///
/// Components are arranged in groups that share one `(bits, prune)` pair.
/// The usual space has one group per component; tying components together
/// (say, the same component type across layers) yields smaller spaces.
/// Components outside every group keep a fixed assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    bits: Vec<u8>,
    prunes: Vec<f64>,
    p_max: f64,
    groups: Vec<Vec<ComponentKey>>,
    fixed: BTreeMap<ComponentKey, Assignment>,
}

impl SearchSpace {
    /// One group per component of `arch`.
    pub fn per_component(arch: &ModelArchitecture, bits: &[u8], prunes: &[f64], p_max: f64) -> Result<Self> {
        let groups = arch.component_keys().into_iter().map(|k| vec![k]).collect();
        Self::grouped(arch, bits, prunes, p_max, groups, BTreeMap::new())
    }

    pub fn grouped(
        arch: &ModelArchitecture,
        bits: &[u8],
        prunes: &[f64],
        p_max: f64,
        groups: Vec<Vec<ComponentKey>>,
        fixed: BTreeMap<ComponentKey, Assignment>,
    ) -> Result<Self> {
        let bits: Vec<u8> = bits.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let mut prunes = prunes.to_vec();
        prunes.sort_by(f64::total_cmp);
        prunes.dedup();
        let bad = |m: String| Err(SearchError::Space(m));
        if bits.is_empty() || prunes.is_empty() {
            return bad("bit-width and pruning sets must be non-empty".into());
        }
        if let Some(b) = bits.iter().find(|b| !(MIN_BITS..=REFERENCE_BITS).contains(*b)) {
            return bad(format!("bit-width {b} outside [{MIN_BITS}, {REFERENCE_BITS}]"));
        }
        if !(0.0..1.0).contains(&p_max) {
            return bad(format!("p_max {p_max} outside [0, 1)"));
        }
        if let Some(p) = prunes.iter().find(|p| !(0.0..=p_max).contains(*p)) {
            return bad(format!("pruning ratio {p} outside [0, {p_max}]"));
        }
        if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
            return bad("groups must be non-empty".into());
        }
        let all: BTreeSet<ComponentKey> = arch.component_keys().into_iter().collect();
        let mut seen = BTreeSet::new();
        for key in groups.iter().flatten().chain(fixed.keys()) {
            if !all.contains(key) {
                return bad(format!("{key} is not a component of the architecture"));
            }
            if !seen.insert(*key) {
                return bad(format!("{key} appears more than once"));
            }
        }
        if seen.len() != all.len() {
            let missing = all.difference(&seen).next().expect("non-empty difference");
            return bad(format!("{missing} is neither searched nor fixed"));
        }
        for a in fixed.values() {
            if !(MIN_BITS..=REFERENCE_BITS).contains(&a.bits) || !(0.0..=p_max).contains(&a.prune) {
                return bad(format!("fixed assignment {a:?} out of range"));
            }
        }
        Ok(Self {
            bits,
            prunes,
            p_max,
            groups,
            fixed,
        })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn prunes(&self) -> &[f64] {
        &self.prunes
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn groups(&self) -> &[Vec<ComponentKey>] {
        &self.groups
    }

    /// Encoding dimension, two per group.
    pub fn dim(&self) -> usize {
        2 * self.groups.len()
    }

    /// `|C|`, saturating.
    pub fn size(&self) -> u128 {
        let per = (self.bits.len() * self.prunes.len()) as u128;
        (0..self.groups.len()).fold(1u128, |acc, _| acc.saturating_mul(per))
    }

    fn levels(&self, d: usize) -> usize {
        if d % 2 == 0 {
            self.bits.len()
        } else {
            self.prunes.len()
        }
    }

    /// Largest bit-width, smallest pruning ratio in every group.
    pub fn identity_point(&self) -> GridPoint {
        (0..self.dim())
            .map(|d| if d % 2 == 0 { self.bits.len() - 1 } else { 0 })
            .collect()
    }

    pub fn random_point<R: Rng>(&self, rng: &mut R) -> GridPoint {
        (0..self.dim()).map(|d| rng.random_range(0..self.levels(d))).collect()
    }

    /// Grid points differing from `p` by one step in one coordinate.
    pub fn neighbours(&self, p: &GridPoint) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for d in 0..self.dim() {
            if p[d] > 0 {
                let mut q = p.clone();
                q[d] -= 1;
                out.push(q);
            }
            if p[d] + 1 < self.levels(d) {
                let mut q = p.clone();
                q[d] += 1;
                out.push(q);
            }
        }
        out
    }

    /// Every grid point in lexicographic order, or `None` above
    /// [`ENUMERATION_LIMIT`].
    pub fn enumerate(&self) -> Option<Vec<GridPoint>> {
        if self.size() > ENUMERATION_LIMIT {
            return None;
        }
        let mut out = vec![Vec::new()];
        for d in 0..self.dim() {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..self.levels(d)).map(move |i| {
                        let mut q = p.clone();
                        q.push(i);
                        q
                    })
                })
                .collect();
        }
        Some(out)
    }

    pub fn encode(&self, p: &GridPoint) -> Vec<f64> {
        let (bmin, bmax) = (self.bits[0] as f64, *self.bits.last().unwrap() as f64);
        p.iter()
            .enumerate()
            .map(|(d, &i)| {
                if d % 2 == 0 {
                    if bmax > bmin {
                        (self.bits[i] as f64 - bmin) / (bmax - bmin)
                    } else {
                        0.0
                    }
                } else if self.p_max > 0.0 {
                    self.prunes[i] / self.p_max
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Nearest grid point to an encoding.
    pub fn decode(&self, x: &[f64]) -> GridPoint {
        let enc_bits: Vec<f64> = (0..self.bits.len()).map(|i| self.encode_level(0, i)).collect();
        let enc_prunes: Vec<f64> = (0..self.prunes.len()).map(|i| self.encode_level(1, i)).collect();
        x.iter()
            .enumerate()
            .map(|(d, &v)| {
                let levels = if d % 2 == 0 { &enc_bits } else { &enc_prunes };
                let mut best = 0;
                for (i, l) in levels.iter().enumerate() {
                    if (l - v).abs() < (levels[best] - v).abs() {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    fn encode_level(&self, parity: usize, i: usize) -> f64 {
        let mut p = vec![0; 2];
        p[parity] = i;
        self.encode(&p)[parity]
    }

    pub fn to_config(&self, p: &GridPoint) -> CompressionConfig {
        let mut map: BTreeMap<ComponentKey, Assignment> = self.fixed.clone();
        for (g, keys) in self.groups.iter().enumerate() {
            let a = Assignment::new(self.bits[p[2 * g]], self.prunes[p[2 * g + 1]]);
            for k in keys {
                map.insert(*k, a);
            }
        }
        CompressionConfig::from_map(map)
    }

    /// Inverse of [`to_config`](Self::to_config); `None` if `kappa` is not in
    /// the space.
    pub fn point_of(&self, kappa: &CompressionConfig) -> Option<GridPoint> {
        for (k, a) in &self.fixed {
            if kappa.get(k)? != *a {
                return None;
            }
        }
        let mut p = Vec::with_capacity(self.dim());
        for keys in &self.groups {
            let a = kappa.get(&keys[0])?;
            if keys.iter().any(|k| kappa.get(k) != Some(a)) {
                return None;
            }
            p.push(self.bits.iter().position(|&b| b == a.bits)?);
            p.push(self.prunes.iter().position(|&r| r == a.prune)?);
        }
        let expected = self.fixed.len() + self.groups.iter().map(Vec::len).sum::<usize>();
        (kappa.len() == expected).then_some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Component, Style};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> ModelArchitecture {
        ModelArchitecture {
            style: Style::GptLike,
            n_layers: 2,
            hidden_dim: 16,
            n_heads: 2,
            vocab_size: 32,
            max_context: 16,
        }
    }

    #[test]
    fn sizes_and_identity() {
        let s = SearchSpace::per_component(&arch(), &[8, 16], &[0.0, 0.5], 0.5).unwrap();
        assert_eq!(s.dim(), 12);
        assert_eq!(s.size(), 4u128.pow(6));
        let id = s.to_config(&s.identity_point());
        assert_eq!(id, CompressionConfig::identity(&arch()));
        let full = SearchSpace::per_component(
            &arch(),
            &(2..=16).collect::<Vec<_>>(),
            &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            0.5,
        )
        .unwrap();
        assert_eq!(full.size(), 90u128.pow(6));
        assert!(full.enumerate().is_none());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let s = SearchSpace::per_component(&arch(), &[2, 4, 8, 16], &[0.0, 0.25, 0.5], 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = s.random_point(&mut rng);
            let x = s.encode(&p);
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(s.decode(&x), p);
            assert_eq!(s.point_of(&s.to_config(&p)), Some(p));
        }
    }

    #[test]
    fn grouped_space() {
        let a = arch();
        let groups = vec![
            vec![ComponentKey::new(1, Component::Ffn), ComponentKey::new(2, Component::Ffn)],
            vec![ComponentKey::new(1, Component::AttnQkv), ComponentKey::new(2, Component::AttnQkv)],
        ];
        let fixed = [
            (ComponentKey::new(1, Component::AttnOut), Assignment::IDENTITY),
            (ComponentKey::new(2, Component::AttnOut), Assignment::IDENTITY),
        ]
        .into();
        let s = SearchSpace::grouped(&a, &[4, 8, 16], &[0.0, 0.25, 0.5], 0.5, groups.clone(), fixed).unwrap();
        assert_eq!(s.size(), 81);
        let all = s.enumerate().unwrap();
        assert_eq!(all.len(), 81);
        let uniq: BTreeSet<_> = all.iter().collect();
        assert_eq!(uniq.len(), 81);
        for p in &all {
            assert_eq!(s.point_of(&s.to_config(p)).as_ref(), Some(p));
        }
        // Missing components are rejected.
        assert!(SearchSpace::grouped(&a, &[4], &[0.0], 0.5, groups, BTreeMap::new()).is_err());
    }

    #[test]
    fn rejects_out_of_range_sets() {
        assert!(SearchSpace::per_component(&arch(), &[1, 8], &[0.0], 0.5).is_err());
        assert!(SearchSpace::per_component(&arch(), &[8], &[0.0, 0.7], 0.5).is_err());
        assert!(SearchSpace::per_component(&arch(), &[], &[0.0], 0.5).is_err());
    }

    #[test]
    fn neighbours_stay_on_grid() {
        let s = SearchSpace::per_component(&arch(), &[4, 8, 16], &[0.0, 0.5], 0.5).unwrap();
        let id = s.identity_point();
        let n = s.neighbours(&id);
        assert_eq!(n.len(), 12);
        assert!(n.iter().all(|q| q.iter().zip(&id).filter(|(a, b)| a != b).count() == 1));
    }
}
