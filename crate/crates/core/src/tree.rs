//! Expansion-configured token trees.
//!
//! Layer `l` holds `W_l = k_1·…·k_l` nodes and every node in layer `l < L`
//! has exactly `k_{l+1}` children. Node indices inside a layer are 1-based
//! everywhere in the public interface: the root is `(0, 1)` and the children
//! of `(l, i)` are `(l+1, (i-1)·k_{l+1}+1 ..= i·k_{l+1})`.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::prob::UplinkDist;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExpansionConfig {
    ks: Vec<usize>,
    widths: Vec<usize>,
}

impl ExpansionConfig {
    pub fn new(ks: Vec<usize>) -> Result<Self> {
        if ks.is_empty() {
            return Err(Error::InvalidExpansion("depth must be at least 1".into()));
        }
        if let Some(pos) = ks.iter().position(|&k| k == 0) {
            return Err(Error::InvalidExpansion(format!("k_{} is zero", pos + 1)));
        }
        let mut widths = Vec::with_capacity(ks.len() + 1);
        widths.push(1usize);
        for &k in &ks {
            let w = widths
                .last()
                .unwrap()
                .checked_mul(k)
                .ok_or_else(|| Error::InvalidExpansion("tree too wide".into()))?;
            widths.push(w);
        }
        Ok(Self { ks, widths })
    }

    /// The all-ones configuration: a plain draft sequence of length `len`.
    pub fn chain(len: usize) -> Result<Self> {
        Self::new(vec![1; len])
    }

    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    /// Depth `L`.
    pub fn depth(&self) -> usize {
        self.ks.len()
    }

    /// `k_l` for `l` in `1..=L`: children per node of layer `l-1`.
    pub fn branching(&self, layer: usize) -> usize {
        self.ks[layer - 1]
    }

    /// `W_l`, with `W_0 = 1`.
    pub fn width(&self, layer: usize) -> usize {
        self.widths[layer]
    }

    /// `|𝒬| = 1 + Σ_{l=1}^{L-1} W_l`, the number of internal nodes.
    pub fn dist_count(&self) -> usize {
        self.widths[..self.depth()].iter().sum()
    }

    /// `Σ_{l=1}^{L} W_l`, the number of non-root nodes.
    pub fn token_count(&self) -> usize {
        self.widths[1..].iter().sum()
    }

    fn check_node(&self, layer: usize, index: usize) -> Result<()> {
        if layer > self.depth() || index == 0 || index > self.widths[layer] {
            return Err(Error::NodeOutOfRange { layer, index });
        }
        Ok(())
    }

    /// Indices in layer `l+1` of the children of `(l, i)`.
    pub fn children_range(&self, layer: usize, index: usize) -> Result<RangeInclusive<usize>> {
        if layer >= self.depth() {
            return Err(Error::NodeOutOfRange { layer, index });
        }
        self.check_node(layer, index)?;
        let k = self.ks[layer];
        Ok((index - 1) * k + 1..=index * k)
    }

    /// Index in layer `l-1` of the parent of `(l, i)`: `⌈i / k_l⌉`.
    pub fn parent(&self, layer: usize, index: usize) -> Result<usize> {
        if layer == 0 {
            return Err(Error::NodeOutOfRange { layer, index });
        }
        self.check_node(layer, index)?;
        Ok(index.div_ceil(self.ks[layer - 1]))
    }

    /// Internal nodes `(l, i)` in layer-major, index-minor order.
    pub fn internal_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.depth()).flat_map(move |l| (1..=self.widths[l]).map(move |i| (l, i)))
    }
}

impl fmt::Display for ExpansionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ks.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ExpansionConfig {
    type Err = Error;

    /// Parses `"2,2,2"`.
    fn from_str(s: &str) -> Result<Self> {
        let ks = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidExpansion(format!("bad entry {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ks)
    }
}

/// The tree as sent uplink: non-root tokens and the internal-node
/// distributions, both in layer-major, index-minor order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTree {
    pub tokens: Vec<usize>,
    pub dists: Vec<UplinkDist>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenTree {
    config: ExpansionConfig,
    prefix: Vec<usize>,
    /// `layers[l-1]` holds layer `l`.
    layers: Vec<Vec<usize>>,
    /// `dists[l]` holds the distributions of the internal nodes of layer `l`.
    dists: Vec<Vec<UplinkDist>>,
}

impl TokenTree {
    pub fn new(
        config: ExpansionConfig,
        prefix: Vec<usize>,
        layers: Vec<Vec<usize>>,
        dists: Vec<Vec<UplinkDist>>,
    ) -> Result<Self> {
        let depth = config.depth();
        if layers.len() != depth || dists.len() != depth {
            return Err(Error::InvalidExpansion(format!(
                "expected {depth} token layers and {depth} distribution layers, got {} and {}",
                layers.len(),
                dists.len()
            )));
        }
        for l in 0..depth {
            if layers[l].len() != config.width(l + 1) {
                return Err(Error::InvalidExpansion(format!(
                    "layer {} has {} tokens, expected {}",
                    l + 1,
                    layers[l].len(),
                    config.width(l + 1)
                )));
            }
            if dists[l].len() != config.width(l) {
                return Err(Error::InvalidExpansion(format!(
                    "layer {l} has {} distributions, expected {}",
                    dists[l].len(),
                    config.width(l)
                )));
            }
        }
        Ok(Self {
            config,
            prefix,
            layers,
            dists,
        })
    }

    pub fn config(&self) -> &ExpansionConfig {
        &self.config
    }

    pub fn prefix(&self) -> &[usize] {
        &self.prefix
    }

    /// Token at non-root node `(l, i)`.
    pub fn token(&self, layer: usize, index: usize) -> Result<usize> {
        if layer == 0 {
            return Err(Error::NodeOutOfRange { layer, index });
        }
        self.config.check_node(layer, index)?;
        Ok(self.layers[layer - 1][index - 1])
    }

    /// All tokens of layer `l >= 1`.
    pub fn layer(&self, layer: usize) -> &[usize] {
        &self.layers[layer - 1]
    }

    /// Uplinked draft distribution at internal node `(l, i)`.
    pub fn dist(&self, layer: usize, index: usize) -> Result<&UplinkDist> {
        if layer >= self.config.depth() {
            return Err(Error::NodeOutOfRange { layer, index });
        }
        self.config.check_node(layer, index)?;
        Ok(&self.dists[layer][index - 1])
    }

    /// Tokens of the children of `(l, i)`, in position order.
    pub fn children(&self, layer: usize, index: usize) -> Result<&[usize]> {
        let range = self.config.children_range(layer, index)?;
        Ok(&self.layers[layer][range.start() - 1..*range.end()])
    }

    /// `S_x`: the prefix followed by the tokens on the path to `(l, i)`.
    pub fn path_of(&self, layer: usize, index: usize) -> Result<Vec<usize>> {
        self.config.check_node(layer, index)?;
        let mut rev = Vec::with_capacity(layer);
        let (mut l, mut i) = (layer, index);
        while l > 0 {
            rev.push(self.layers[l - 1][i - 1]);
            i = self.config.parent(l, i)?;
            l -= 1;
        }
        let mut path = self.prefix.clone();
        path.extend(rev.into_iter().rev());
        Ok(path)
    }

    pub fn flatten_for_upload(&self) -> FlatTree {
        FlatTree {
            tokens: self.layers.iter().flatten().copied().collect(),
            dists: self.dists.iter().flatten().cloned().collect(),
        }
    }

    /// Rebuilds a tree from its uplink form.
    pub fn from_flat(config: ExpansionConfig, prefix: Vec<usize>, flat: FlatTree) -> Result<Self> {
        if flat.tokens.len() != config.token_count() || flat.dists.len() != config.dist_count() {
            return Err(Error::InvalidExpansion(format!(
                "flat form has {} tokens and {} distributions, expected {} and {}",
                flat.tokens.len(),
                flat.dists.len(),
                config.token_count(),
                config.dist_count()
            )));
        }
        let mut tokens = flat.tokens.into_iter();
        let mut dists = flat.dists.into_iter();
        let layers = (1..=config.depth())
            .map(|l| tokens.by_ref().take(config.width(l)).collect())
            .collect();
        let dist_layers = (0..config.depth())
            .map(|l| dists.by_ref().take(config.width(l)).collect())
            .collect();
        Self::new(config, prefix, layers, dist_layers)
    }

    /// Total (value, id) pairs across all uplinked distributions.
    pub fn uplink_entries(&self) -> usize {
        self.dists.iter().flatten().map(UplinkDist::entries).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Categorical;

    fn cfg(ks: &[usize]) -> ExpansionConfig {
        ExpansionConfig::new(ks.to_vec()).unwrap()
    }

    fn dummy_tree(config: &ExpansionConfig) -> TokenTree {
        let dist = UplinkDist::Dense(Categorical::uniform(4).unwrap());
        let mut counter = 0;
        let layers = (1..=config.depth())
            .map(|l| {
                (0..config.width(l))
                    .map(|_| {
                        counter += 1;
                        counter
                    })
                    .collect()
            })
            .collect();
        let dists = (0..config.depth())
            .map(|l| vec![dist.clone(); config.width(l)])
            .collect();
        TokenTree::new(config.clone(), vec![100, 101], layers, dists).unwrap()
    }

    #[test]
    fn children_ranges_of_binary_tree() {
        let c = cfg(&[2, 2, 2]);
        assert_eq!(c.children_range(0, 1).unwrap(), 1..=2);
        assert_eq!(c.children_range(1, 2).unwrap(), 3..=4);
        assert_eq!(c.children_range(2, 4).unwrap(), 7..=8);
        assert!(c.children_range(3, 1).is_err());
        assert!(c.children_range(1, 3).is_err());
        assert!(c.children_range(1, 0).is_err());
    }

    #[test]
    fn chain_ranges_have_width_one() {
        let c = cfg(&[1, 1]);
        for (l, i) in c.internal_nodes() {
            let r = c.children_range(l, i).unwrap();
            assert_eq!(r.start(), r.end());
        }
    }

    #[test]
    fn counts() {
        let c = cfg(&[2, 2, 2]);
        assert_eq!((1..=3).map(|l| c.width(l)).collect::<Vec<_>>(), vec![2, 4, 8]);
        assert_eq!(c.token_count(), 14);
        assert_eq!(c.dist_count(), 7);
        let single = cfg(&[1]);
        assert_eq!(single.token_count(), 1);
        assert_eq!(single.dist_count(), 1);
    }

    #[test]
    fn parse_and_display() {
        let c: ExpansionConfig = "2, 3,1".parse().unwrap();
        assert_eq!(c.ks(), &[2, 3, 1]);
        assert_eq!(c.to_string(), "2,3,1");
        assert!("".parse::<ExpansionConfig>().is_err());
        assert!("2,0".parse::<ExpansionConfig>().is_err());
        assert!("2,x".parse::<ExpansionConfig>().is_err());
    }

    #[test]
    fn paths_follow_ancestors() {
        let c = cfg(&[2, 2]);
        let t = dummy_tree(&c);
        assert_eq!(t.path_of(0, 1).unwrap(), vec![100, 101]);
        // (2,3) -> parent (1,2) -> root.
        assert_eq!(c.parent(2, 3).unwrap(), 2);
        let expect = vec![100, 101, t.token(1, 2).unwrap(), t.token(2, 3).unwrap()];
        assert_eq!(t.path_of(2, 3).unwrap(), expect);
        assert!(t.path_of(2, 5).is_err());
        for l in 0..=2 {
            for i in 1..=c.width(l) {
                assert_eq!(t.path_of(l, i).unwrap().len(), 2 + l);
            }
        }
    }

    #[test]
    fn children_slices_match_ranges() {
        let c = cfg(&[2, 3]);
        let t = dummy_tree(&c);
        assert_eq!(t.children(0, 1).unwrap(), &[1, 2]);
        assert_eq!(t.children(1, 2).unwrap(), &[6, 7, 8]);
    }

    #[test]
    fn flat_round_trip() {
        let c = cfg(&[2, 1, 3]);
        let t = dummy_tree(&c);
        let flat = t.flatten_for_upload();
        assert_eq!(flat.tokens.len(), c.token_count());
        assert_eq!(flat.dists.len(), c.dist_count());
        let rebuilt = TokenTree::from_flat(c.clone(), t.prefix().to_vec(), flat.clone()).unwrap();
        assert_eq!(rebuilt, t);
        let mut short = flat;
        short.tokens.pop();
        assert!(TokenTree::from_flat(c, vec![], short).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExpansionConfig::new(vec![]).is_err());
        assert!(ExpansionConfig::new(vec![1, 0]).is_err());
        assert!(ExpansionConfig::new(vec![usize::MAX, 2]).is_err());
    }
}
