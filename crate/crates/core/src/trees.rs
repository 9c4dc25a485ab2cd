//! Rooted phylogenies with branch lengths: Newick I/O, grafting, pruning and
//! Kingman coalescent simulation.
//!
//! Trees are stored as a flat arena of [`Node`]s addressed by index. Every
//! operation that changes topology returns a new tree.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::real::Real;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    /// Tip taxon name, or an optional clade label on internal nodes.
    pub label: Option<String>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Length of the branch leading into this node from its parent.
    pub branch_length: T,
}

impl<T> Node<T> {
    pub fn is_tip(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyloTree<T> {
    nodes: Vec<Node<T>>,
    root: NodeId,
}

impl<T: Real> PhyloTree<T> {
    /// Builds a tree from an arena, checking the structural invariants.
    pub fn from_nodes(nodes: Vec<Node<T>>, root: NodeId) -> Result<Self> {
        let tree = PhyloTree { nodes, root };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        if self.root >= self.nodes.len() || self.nodes[self.root].parent.is_some() {
            return Err(Error::Alignment("tree root is missing or has a parent".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        let mut labels = HashSet::new();
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Alignment(format!("node {id} reachable twice")));
            }
            let node = &self.nodes[id];
            if node.branch_length < T::zero() || node.branch_length.is_nan() {
                return Err(Error::NegativeBranchLength {
                    node: node.label.clone().unwrap_or_else(|| format!("#{id}")),
                    length: node.branch_length.as_f64(),
                });
            }
            if node.is_tip() {
                let label = node
                    .label
                    .as_ref()
                    .ok_or_else(|| Error::Alignment(format!("tip #{id} has no label")))?;
                if !labels.insert(label.clone()) {
                    return Err(Error::DuplicateLabel(label.clone()));
                }
            }
            for &c in &node.children {
                if c >= self.nodes.len() || self.nodes[c].parent != Some(id) {
                    return Err(Error::Alignment(format!("broken parent link at node {c}")));
                }
                stack.push(c);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Alignment("unreachable nodes in arena".into()));
        }
        Ok(())
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn tips(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.preorder().into_iter().filter(move |&id| self.nodes[id].is_tip())
    }

    pub fn n_tips(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_tip()).count()
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.len() - self.n_tips()
    }

    /// Tip labels in preorder.
    pub fn tip_labels(&self) -> Vec<String> {
        self.tips().map(|id| self.nodes[id].label.clone().unwrap_or_default()).collect()
    }

    pub fn find_tip(&self, label: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.is_tip() && n.label.as_deref() == Some(label))
    }

    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }

    /// Children always precede their parent.
    pub fn postorder(&self) -> Vec<NodeId> {
        let mut out = self.preorder();
        out.reverse();
        out
    }

    /// Distance from the root to every node (root stem excluded).
    pub fn node_depths(&self) -> Vec<T> {
        let mut depth = vec![T::zero(); self.nodes.len()];
        for id in self.preorder() {
            if let Some(p) = self.nodes[id].parent {
                depth[id] = depth[p] + self.nodes[id].branch_length;
            }
        }
        depth
    }

    pub fn tip_depths(&self) -> BTreeMap<String, T> {
        let depth = self.node_depths();
        self.tips()
            .map(|id| (self.nodes[id].label.clone().unwrap_or_default(), depth[id]))
            .collect()
    }

    /// Maximum tip depth, i.e. the root age for an ultrametric tree.
    pub fn height(&self) -> T {
        self.tip_depths().values().copied().fold(T::zero(), T::max)
    }

    /// Spread between the deepest and shallowest tip.
    pub fn ultrametric_spread(&self) -> T {
        let depths = self.tip_depths();
        let max = depths.values().copied().fold(T::neg_infinity(), T::max);
        let min = depths.values().copied().fold(T::infinity(), T::min);
        max - min
    }

    pub fn total_length(&self) -> T {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(id, _)| *id != self.root)
            .map(|(_, n)| n.branch_length)
            .sum()
    }

    /// Path length between two tips.
    pub fn tip_distance(&self, a: &str, b: &str) -> Result<T> {
        let ia = self.find_tip(a).ok_or_else(|| Error::UnknownTaxon(a.to_owned()))?;
        let ib = self.find_tip(b).ok_or_else(|| Error::UnknownTaxon(b.to_owned()))?;
        let ancestors: HashSet<NodeId> = self.ancestors(ia).collect();
        let lca = self
            .ancestors(ib)
            .find(|n| ancestors.contains(n))
            .expect("tips share the root");
        let depth = self.node_depths();
        Ok(depth[ia] + depth[ib] - depth[lca] - depth[lca])
    }

    /// The node itself followed by its ancestors up to the root.
    fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(Some(id), move |&n| self.nodes[n].parent)
    }

    /// All unordered tip pairs with their path lengths.
    pub fn pairwise_distances(&self) -> BTreeMap<(String, String), T> {
        let labels = self.tip_labels();
        let mut out = BTreeMap::new();
        for (i, a) in labels.iter().enumerate() {
            for b in &labels[i + 1..] {
                let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                out.insert(key, self.tip_distance(a, b).expect("labels come from the tree"));
            }
        }
        out
    }

    /// Returns a copy with every branch length multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        let mut t = self.clone();
        for n in &mut t.nodes {
            n.branch_length = n.branch_length * c;
        }
        t
    }

    /// Returns a copy with child order shuffled at every internal node.
    pub fn permute_children<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut t = self.clone();
        for n in &mut t.nodes {
            n.children.shuffle(rng);
        }
        t
    }

    /// Inserts `new_taxon` as the sister of tip `sibling`.
    ///
    /// A new internal node is placed on the sibling's branch, `split_fraction`
    /// of the way down from the parent; the new tip gets the same depth as
    /// the sibling.
    pub fn graft_taxon(&self, new_taxon: &str, sibling: &str, split_fraction: T) -> Result<Self> {
        if !(split_fraction > T::zero() && split_fraction < T::one()) {
            return Err(Error::SplitFraction(split_fraction.as_f64()));
        }
        let sib = self
            .find_tip(sibling)
            .ok_or_else(|| Error::UnknownTaxon(sibling.to_owned()))?;
        if self.find_tip(new_taxon).is_some() {
            return Err(Error::TaxonExists(new_taxon.to_owned()));
        }
        let mut nodes = self.nodes.clone();
        let len = nodes[sib].branch_length;
        let upper = len * split_fraction;
        let lower = len - upper;
        let join = nodes.len();
        let tip = join + 1;
        let parent = nodes[sib].parent;
        nodes.push(Node {
            label: None,
            parent,
            children: vec![sib, tip],
            branch_length: upper,
        });
        nodes.push(Node {
            label: Some(new_taxon.to_owned()),
            parent: Some(join),
            children: Vec::new(),
            branch_length: lower,
        });
        nodes[sib].parent = Some(join);
        nodes[sib].branch_length = lower;
        let root = match parent {
            Some(p) => {
                for c in &mut nodes[p].children {
                    if *c == sib {
                        *c = join;
                    }
                }
                self.root
            }
            // single-node tree: the join becomes the new root
            None => join,
        };
        PhyloTree::from_nodes(nodes, root)
    }

    /// Induced subtree on `keep`; unary internal nodes are suppressed and
    /// their branch lengths merged into the surviving child.
    pub fn prune_to_taxa<S: AsRef<str>>(&self, keep: &[S]) -> Result<Self> {
        let keep: BTreeSet<&str> = keep.iter().map(|s| s.as_ref()).collect();
        for k in &keep {
            if self.find_tip(k).is_none() {
                return Err(Error::UnknownTaxon((*k).to_owned()));
            }
        }
        if keep.len() < 2 {
            return Err(Error::TooFewTaxa(keep.len()));
        }
        let mut out: Vec<Node<T>> = Vec::new();
        // new id per old node, for nodes that survive as themselves
        let mut mapped: Vec<Option<NodeId>> = vec![None; self.nodes.len()];
        for id in self.postorder() {
            let node = &self.nodes[id];
            if node.is_tip() {
                if keep.contains(node.label.as_deref().unwrap_or_default()) {
                    mapped[id] = Some(out.len());
                    out.push(Node {
                        label: node.label.clone(),
                        parent: None,
                        children: Vec::new(),
                        branch_length: node.branch_length,
                    });
                }
                continue;
            }
            let kids: Vec<NodeId> = node.children.iter().filter_map(|&c| mapped[c]).collect();
            match kids.len() {
                0 => {}
                1 => {
                    let k = kids[0];
                    out[k].branch_length = out[k].branch_length + node.branch_length;
                    mapped[id] = Some(k);
                }
                _ => {
                    let new_id = out.len();
                    for &k in &kids {
                        out[k].parent = Some(new_id);
                    }
                    out.push(Node {
                        label: node.label.clone(),
                        parent: None,
                        children: kids,
                        branch_length: node.branch_length,
                    });
                    mapped[id] = Some(new_id);
                }
            }
        }
        let root = mapped[self.root].expect("at least two kept tips");
        PhyloTree::from_nodes(out, root)
    }

    /// Structural equality up to child order, node numbering and a branch-length tolerance.
    pub fn structurally_equal(&self, other: &Self, tol: T) -> bool {
        fn canon<T: Real>(t: &PhyloTree<T>, id: NodeId, tol: T) -> String {
            let node = &t.nodes[id];
            let mut s = String::new();
            if !node.is_tip() {
                let mut kids: Vec<String> =
                    node.children.iter().map(|&c| canon(t, c, tol)).collect();
                kids.sort();
                s.push('(');
                s.push_str(&kids.join(","));
                s.push(')');
            } else {
                s.push_str(node.label.as_deref().unwrap_or_default());
            }
            s
        }
        if canon(self, self.root, tol) != canon(other, other.root, tol) {
            return false;
        }
        // Same labelled topology; compare every clade's stem length.
        let clades = |t: &Self| -> HashMap<BTreeSet<String>, T> {
            let mut below: Vec<BTreeSet<String>> = vec![BTreeSet::new(); t.nodes.len()];
            for id in t.postorder() {
                let n = &t.nodes[id];
                if n.is_tip() {
                    below[id].insert(n.label.clone().unwrap_or_default());
                } else {
                    let merged: BTreeSet<String> =
                        n.children.iter().flat_map(|&c| below[c].iter().cloned()).collect();
                    below[id] = merged;
                }
            }
            below
                .into_iter()
                .enumerate()
                .filter(|(id, _)| *id != t.root)
                .map(|(id, set)| (set, t.nodes[id].branch_length))
                .collect()
        };
        let a = clades(self);
        let b = clades(other);
        a.len() == b.len()
            && a.iter().all(|(k, &v)| b.get(k).is_some_and(|&w| (v - w).abs() <= tol))
    }

    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root, &mut out);
        let root_len = self.nodes[self.root].branch_length;
        if root_len > T::zero() {
            let _ = write!(out, ":{root_len:?}");
        }
        out.push(';');
        out
    }

    fn write_node(&self, id: NodeId, out: &mut String) {
        let node = &self.nodes[id];
        if !node.is_tip() {
            out.push('(');
            for (i, &c) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                self.write_node(c, out);
                let _ = write!(out, ":{:?}", self.nodes[c].branch_length);
            }
            out.push(')');
        }
        if let Some(label) = &node.label {
            out.push_str(&quote_label(label));
        }
    }
}

fn quote_label(label: &str) -> String {
    let plain = !label.is_empty()
        && label
            .chars()
            .all(|c| !c.is_whitespace() && !"()[]':;,".contains(c));
    if plain {
        label.to_owned()
    } else {
        format!("'{}'", label.replace('\'', "''"))
    }
}

/// Parses a single Newick tree. Missing branch lengths default to zero.
pub fn parse_newick<T: Real>(text: &str) -> Result<PhyloTree<T>> {
    NewickParser { src: text.as_bytes(), pos: 0, nodes: Vec::new() }.parse()
}

impl<T: Real> FromStr for PhyloTree<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_newick(s)
    }
}

struct NewickParser<'a, T> {
    src: &'a [u8],
    pos: usize,
    nodes: Vec<Node<T>>,
}

impl<T: Real> NewickParser<'_, T> {
    fn error<R>(&self, message: impl Into<String>) -> Result<R> {
        Err(Error::NewickSyntax { position: self.pos, message: message.into() })
    }

    fn skip_ws(&mut self) -> Result<()> {
        loop {
            match self.src.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    match self.src[self.pos..].iter().position(|&b| b == b']') {
                        Some(off) => self.pos += off + 1,
                        None => return self.error("unterminated comment"),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>> {
        self.skip_ws()?;
        Ok(self.src.get(self.pos).copied())
    }

    fn parse(mut self) -> Result<PhyloTree<T>> {
        let root = self.subtree()?;
        if self.peek()? == Some(b':') {
            self.pos += 1;
            self.nodes[root].branch_length = self.length()?;
        }
        match self.peek()? {
            Some(b';') => self.pos += 1,
            _ => return self.error("expected ';'"),
        }
        if self.peek()?.is_some() {
            return self.error("trailing characters after ';'");
        }
        PhyloTree::from_nodes(self.nodes, root)
    }

    fn subtree(&mut self) -> Result<NodeId> {
        let id = self.nodes.len();
        self.nodes.push(Node { label: None, parent: None, children: Vec::new(), branch_length: T::zero() });
        if self.peek()? == Some(b'(') {
            self.pos += 1;
            loop {
                let child = self.subtree()?;
                self.nodes[child].parent = Some(id);
                self.nodes[id].children.push(child);
                if self.peek()? == Some(b':') {
                    self.pos += 1;
                    self.nodes[child].branch_length = self.length()?;
                }
                match self.peek()? {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.error("expected ',' or ')'"),
                }
            }
            self.nodes[id].label = self.label()?;
        } else {
            match self.label()? {
                Some(l) => self.nodes[id].label = Some(l),
                None => return self.error("expected a taxon label"),
            }
        }
        Ok(id)
    }

    fn label(&mut self) -> Result<Option<String>> {
        match self.peek()? {
            Some(b'\'') => {
                self.pos += 1;
                let mut bytes = Vec::new();
                loop {
                    match self.src.get(self.pos) {
                        None => return self.error("unterminated quoted label"),
                        Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                            bytes.push(b'\'');
                            self.pos += 2;
                        }
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(&b) => {
                            bytes.push(b);
                            self.pos += 1;
                        }
                    }
                }
                match String::from_utf8(bytes) {
                    Ok(s) => Ok(Some(s)),
                    Err(_) => self.error("label is not valid UTF-8"),
                }
            }
            Some(_) => {
                let start = self.pos;
                while let Some(&b) = self.src.get(self.pos) {
                    if b.is_ascii_whitespace() || b"()[]':;,".contains(&b) {
                        break;
                    }
                    self.pos += 1;
                }
                if start == self.pos {
                    return Ok(None);
                }
                match std::str::from_utf8(&self.src[start..self.pos]) {
                    Ok(s) => Ok(Some(s.to_owned())),
                    Err(_) => self.error("label is not valid UTF-8"),
                }
            }
            None => Ok(None),
        }
    }

    fn length(&mut self) -> Result<T> {
        self.skip_ws()?;
        let start = self.pos;
        while let Some(&b) = self.src.get(self.pos) {
            if b.is_ascii_digit() || b"+-.eE".contains(&b) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        let value: f64 = match text.parse() {
            Ok(v) => v,
            Err(_) => {
                self.pos = start;
                return self.error(format!("invalid branch length `{text}`"));
            }
        };
        if value < 0.0 {
            return Err(Error::NegativeBranchLength { node: format!("at byte {start}"), length: value });
        }
        Ok(T::lit(value))
    }
}

/// A posterior sample of trees sharing one taxon set.
#[derive(Debug, Clone)]
pub struct TreeSample<T> {
    pub trees: Vec<PhyloTree<T>>,
    pub taxa: BTreeSet<String>,
    pub source: String,
}

impl<T: Real> TreeSample<T> {
    pub fn new(trees: Vec<PhyloTree<T>>, source: impl Into<String>) -> Result<Self> {
        let first = trees.first().ok_or_else(|| Error::parse("tree sample", "no trees"))?;
        let taxa: BTreeSet<String> = first.tip_labels().into_iter().collect();
        for (i, t) in trees.iter().enumerate().skip(1) {
            let other: BTreeSet<String> = t.tip_labels().into_iter().collect();
            if other != taxa {
                return Err(Error::TaxonSetMismatch(i));
            }
        }
        Ok(TreeSample { trees, taxa, source: source.into() })
    }

    /// One tree per non-empty line; lines starting with `#` are comments.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut trees = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tree = parse_newick(line).map_err(|e| {
                Error::parse(format!("{source}:{}", lineno + 1), e.to_string())
            })?;
            trees.push(tree);
        }
        Self::new(trees, source)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }
}

/// Kingman coalescent with unit effective population size.
///
/// With `k` lineages the waiting time is Exponential(k(k-1)/2) and two
/// lineages chosen uniformly at random merge. Tips are labelled `t1..tn`.
pub fn simulate_coalescent(n_taxa: usize, seed: u64) -> Result<PhyloTree<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_coalescent_with(n_taxa, &mut rng)
}

pub fn simulate_coalescent_with<R: Rng + ?Sized>(n_taxa: usize, rng: &mut R) -> Result<PhyloTree<f64>> {
    if n_taxa < 2 {
        return Err(Error::CoalescentSize(n_taxa));
    }
    let mut nodes: Vec<Node<f64>> = (1..=n_taxa)
        .map(|i| Node { label: Some(format!("t{i}")), parent: None, children: Vec::new(), branch_length: 0.0 })
        .collect();
    let mut heights = vec![0.0; n_taxa];
    let mut active: Vec<NodeId> = (0..n_taxa).collect();
    let mut time = 0.0;
    while active.len() > 1 {
        let k = active.len() as f64;
        let wait = Exp::new(k * (k - 1.0) / 2.0).expect("positive rate");
        time += wait.sample(rng);
        let i = rng.random_range(0..active.len());
        let a = active.swap_remove(i);
        let j = rng.random_range(0..active.len());
        let b = active.swap_remove(j);
        let id = nodes.len();
        for c in [a, b] {
            nodes[c].parent = Some(id);
            nodes[c].branch_length = time - heights[c];
        }
        nodes.push(Node { label: None, parent: None, children: vec![a, b], branch_length: 0.0 });
        heights.push(time);
        active.push(id);
    }
    PhyloTree::from_nodes(nodes, active[0])
}
