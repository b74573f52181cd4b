//! A reduced SELFIES dialect with a total decoder.
//!
//! Alphabet: the six atoms with optional `=`/`#` bond prefix, `[Branch1..3]`
//! and `[Ring1..5]`; 26 tokens in all. Decoding never fails: any action that
//! would break valence or graph simplicity is dropped.
//!
//! Branch bookkeeping: `[BranchK]` opens a frame rooted at the current atom
//! that lasts for `K` items, where an item is a created atom or a nested
//! branch that has closed. A finished frame is closed lazily, right before
//! the next atom or branch token, so ring tokens that follow the last atom of
//! a branch still bind to that atom. Closing returns attachment to the root.

use std::fmt;
use std::str::FromStr;

use crate::element::Element;
use crate::error::{ChemError, Result};
use crate::graph::MolecularGraph;

pub const MAX_BRANCH: u8 = 3;
pub const MAX_RING: u8 = 5;
pub const ALPHABET_SIZE: usize = Element::ALL.len() * 3 + MAX_BRANCH as usize + MAX_RING as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelfiesToken {
    /// New atom joined to the current atom with the requested order.
    Atom {
        element: Element,
        order: u8,
    },
    Branch(u8),
    Ring(u8),
}

impl SelfiesToken {
    /// Every dialect token in a fixed order; the position is the dialect id.
    pub fn alphabet() -> Vec<SelfiesToken> {
        let mut out = Vec::with_capacity(ALPHABET_SIZE);
        for order in 1..=3 {
            for element in Element::ALL {
                out.push(SelfiesToken::Atom { element, order });
            }
        }
        out.extend((1..=MAX_BRANCH).map(SelfiesToken::Branch));
        out.extend((1..=MAX_RING).map(SelfiesToken::Ring));
        out
    }

    pub fn dialect_id(self) -> usize {
        match self {
            SelfiesToken::Atom { element, order } => (order as usize - 1) * Element::ALL.len() + element.index(),
            SelfiesToken::Branch(k) => Element::ALL.len() * 3 + k as usize - 1,
            SelfiesToken::Ring(k) => Element::ALL.len() * 3 + MAX_BRANCH as usize + k as usize - 1,
        }
    }

    pub fn from_dialect_id(id: usize) -> Option<SelfiesToken> {
        let n_el = Element::ALL.len();
        match id {
            i if i < 3 * n_el => Some(SelfiesToken::Atom { element: Element::ALL[i % n_el], order: (i / n_el) as u8 + 1 }),
            i if i < 3 * n_el + MAX_BRANCH as usize => Some(SelfiesToken::Branch((i - 3 * n_el) as u8 + 1)),
            i if i < ALPHABET_SIZE => Some(SelfiesToken::Ring((i - 3 * n_el - MAX_BRANCH as usize) as u8 + 1)),
            _ => None,
        }
    }

    pub fn is_atom(self) -> bool {
        matches!(self, SelfiesToken::Atom { .. })
    }
}

impl fmt::Display for SelfiesToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelfiesToken::Atom { element, order } => {
                let prefix = match order {
                    2 => "=",
                    3 => "#",
                    _ => "",
                };
                write!(f, "[{prefix}{element}]")
            }
            SelfiesToken::Branch(k) => write!(f, "[Branch{k}]"),
            SelfiesToken::Ring(k) => write!(f, "[Ring{k}]"),
        }
    }
}

impl FromStr for SelfiesToken {
    type Err = ChemError;

    /// Parses one bracketed token, e.g. `[=O]`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || ChemError::UnknownToken(s.to_string());
        let inner = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(unknown)?;
        let bounded = |digits: &str, max: u8| digits.parse::<u8>().ok().filter(|k| (1..=max).contains(k) && digits.len() == 1);
        if let Some(d) = inner.strip_prefix("Branch") {
            return bounded(d, MAX_BRANCH).map(SelfiesToken::Branch).ok_or_else(unknown);
        }
        if let Some(d) = inner.strip_prefix("Ring") {
            return bounded(d, MAX_RING).map(SelfiesToken::Ring).ok_or_else(unknown);
        }
        let (order, sym) = match inner.as_bytes().first() {
            Some(b'=') => (2, &inner[1..]),
            Some(b'#') => (3, &inner[1..]),
            _ => (1, inner),
        };
        let element = sym.parse::<Element>().map_err(|_| unknown())?;
        Ok(SelfiesToken::Atom { element, order })
    }
}

/// A string of dialect tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SelfiesSequence {
    tokens: Vec<SelfiesToken>,
}

impl SelfiesSequence {
    pub fn new(tokens: Vec<SelfiesToken>) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &[SelfiesToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dialect_ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.dialect_id()).collect()
    }

    pub fn from_dialect_ids(ids: &[usize]) -> Option<Self> {
        ids.iter().map(|&i| SelfiesToken::from_dialect_id(i)).collect::<Option<Vec<_>>>().map(Self::new)
    }

    /// Splits text on top-level brackets. Whitespace and any other character
    /// outside brackets is rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut open: Option<usize> = None;
        for (pos, ch) in text.char_indices() {
            match (ch, open) {
                ('[', None) => open = Some(pos),
                ('[', Some(_)) => return Err(ChemError::UnbalancedBrackets(pos)),
                (']', Some(start)) => {
                    tokens.push(text[start..=pos].parse()?);
                    open = None;
                }
                (']', None) => return Err(ChemError::UnbalancedBrackets(pos)),
                (_, Some(_)) => {}
                (ch, None) => return Err(ChemError::UnexpectedChar { ch, pos }),
            }
        }
        if let Some(start) = open {
            return Err(ChemError::UnbalancedBrackets(start));
        }
        Ok(Self { tokens })
    }

    pub fn render(&self) -> String {
        self.tokens.iter().map(ToString::to_string).collect()
    }

    pub fn render_tokens(&self) -> Vec<String> {
        self.tokens.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for SelfiesSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for SelfiesSequence {
    type Err = ChemError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

struct Frame {
    root: usize,
    remaining: u8,
}

/// Total decoder. Every sequence yields a valid, connected graph.
pub fn decode(seq: &SelfiesSequence) -> MolecularGraph {
    let mut g = MolecularGraph::new();
    let mut current: Option<usize> = None;
    let mut frames: Vec<Frame> = Vec::new();

    for &tok in seq.tokens() {
        if !matches!(tok, SelfiesToken::Ring(_)) {
            // Close finished frames before the next counting token.
            while frames.last().is_some_and(|f| f.remaining == 0) {
                let f = frames.pop().unwrap();
                current = Some(f.root);
                if let Some(parent) = frames.last_mut() {
                    parent.remaining -= 1;
                }
            }
        }
        match tok {
            SelfiesToken::Atom { element, order } => match current {
                None => {
                    if g.is_empty() {
                        current = Some(g.add_atom(element));
                    }
                }
                Some(c) => {
                    let order = order.min(g.remaining_valence(c)).min(element.valence_cap());
                    if order == 0 {
                        continue;
                    }
                    let a = g.add_atom(element);
                    g.add_bond(c, a, order).expect("clamped bond is valid");
                    current = Some(a);
                    if let Some(f) = frames.last_mut() {
                        f.remaining -= 1;
                    }
                }
            },
            SelfiesToken::Branch(k) => {
                if let Some(c) = current.filter(|&c| g.remaining_valence(c) > 0) {
                    frames.push(Frame { root: c, remaining: k });
                }
            }
            SelfiesToken::Ring(k) => {
                let Some(c) = current else { continue };
                let target = c.saturating_sub(k as usize);
                if target == c || g.bond_between(c, target).is_some() || g.remaining_valence(c) == 0 || g.remaining_valence(target) == 0 {
                    continue;
                }
                g.add_bond(c, target, 1).expect("checked ring bond");
            }
        }
    }
    g
}

/// Depth-first serialization from atom 0 with neighbors visited in index
/// order. The longest subtree (the last one on ties) continues the main chain;
/// other children become branches. Because decoding numbers branch atoms
/// before the main chain, re-encoding a decoded graph gives the same string.
pub fn encode(g: &MolecularGraph) -> Result<SelfiesSequence> {
    g.validate()?;
    let n = g.num_atoms();
    if n == 0 {
        return Ok(SelfiesSequence::default());
    }
    if !g.is_connected() {
        return Err(ChemError::Disconnected);
    }
    let adj: Vec<Vec<(usize, u8)>> = (0..n).map(|a| g.neighbors(a)).collect();

    // Spanning tree, iterative to avoid deep recursion on long chains.
    let mut parent = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    let mut preorder = Vec::with_capacity(n);
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    visited[0] = true;
    preorder.push(0);
    while let Some(&mut (a, ref mut next)) = stack.last_mut() {
        if *next < adj[a].len() {
            let (w, order) = adj[a][*next];
            *next += 1;
            if !visited[w] {
                visited[w] = true;
                parent[w] = a;
                children[a].push((w, order));
                preorder.push(w);
                stack.push((w, 0));
            }
        } else {
            stack.pop();
        }
    }

    // Items contributed by the chain that starts at each atom.
    let mut items = vec![0usize; n];
    let mut main = vec![None; n];
    for &a in preorder.iter().rev() {
        let best = children[a].iter().enumerate().max_by_key(|&(_, &(c, _))| items[c]).map(|(i, _)| i);
        main[a] = best;
        items[a] = 1 + children[a].len().saturating_sub(1) + best.map_or(0, |i| items[children[a][i].0]);
    }

    let mut pos = vec![usize::MAX; n];
    let mut tokens = Vec::new();
    let mut emitted = 0usize;
    // Explicit work stack: either emit an atom or emit a branch opener.
    enum Work {
        Atom(usize, u8),
        Branch(usize, u8),
    }
    let mut work = vec![Work::Atom(0, 1)];
    while let Some(item) = work.pop() {
        let (a, order) = match item {
            Work::Branch(c, order) => {
                let k = items[c];
                if k > MAX_BRANCH as usize {
                    return Err(ChemError::Inexpressible(format!("branch of {k} items exceeds {MAX_BRANCH}")));
                }
                tokens.push(SelfiesToken::Branch(k as u8));
                (c, order)
            }
            Work::Atom(a, order) => (a, order),
        };
        tokens.push(SelfiesToken::Atom { element: g.element(a), order });
        pos[a] = emitted;
        emitted += 1;
        for &(w, order) in &adj[a] {
            if parent[a] == w || parent[w] == a || pos[w] == usize::MAX {
                continue;
            }
            if order != 1 {
                return Err(ChemError::Inexpressible(format!("ring bond of order {order}")));
            }
            let span = pos[a] - pos[w];
            if span > MAX_RING as usize {
                return Err(ChemError::Inexpressible(format!("ring span {span} exceeds {MAX_RING}")));
            }
            tokens.push(SelfiesToken::Ring(span as u8));
        }
        // Pushed in reverse so side branches come first, in child order.
        if let Some(m) = main[a] {
            let (c, o) = children[a][m];
            work.push(Work::Atom(c, o));
        }
        for (i, &(c, o)) in children[a].iter().enumerate().rev() {
            if Some(i) != main[a] {
                work.push(Work::Branch(c, o));
            }
        }
    }
    Ok(SelfiesSequence::new(tokens))
}
