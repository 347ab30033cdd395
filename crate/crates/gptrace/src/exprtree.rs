//! Expression-tree genotypes stored as flat preorder arrays.
//!
//! Every node knows the length of the subtree rooted at it, so a subtree is
//! just a contiguous interval `[i, i + l)` of the node array and all subtree
//! arithmetic (containment, extraction, splicing) works on intervals without
//! touching pointers. Trees are immutable after construction and cheap to
//! share across threads.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Binary operators of the function set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div];

    pub fn token(self) -> char {
        match self {
            OpKind::Add => '+',
            OpKind::Sub => '-',
            OpKind::Mul => '*',
            OpKind::Div => '/',
        }
    }

    /// Applies the operator. Division is unprotected: IEEE semantics, so the
    /// result may be non-finite; callers deal with that at fitness time.
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            OpKind::Add => a + b,
            OpKind::Sub => a - b,
            OpKind::Mul => a * b,
            OpKind::Div => a / b,
        }
    }
}

/// Node payload: an operator, a constant, or a weighted variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Symbol {
    Op(OpKind),
    Constant(f64),
    Variable { index: usize, weight: f64 },
}

impl Symbol {
    pub fn arity(&self) -> usize {
        match self {
            Symbol::Op(_) => 2,
            _ => 0,
        }
    }
}

/// One slot of the preorder array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub symbol: Symbol,
    /// Number of nodes in the subtree rooted here, including this one.
    pub subtree_len: usize,
}

/// A subtree of some tree, identified by preorder index and node count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SubtreeRef {
    pub index: usize,
    pub len: usize,
}

impl SubtreeRef {
    pub fn new(index: usize, len: usize) -> Self {
        SubtreeRef { index, len }
    }

    /// One past the last preorder index of the subtree.
    pub fn end(&self) -> usize {
        self.index + self.len
    }

    /// Strict containment test on preorder indices: `b` lies inside `self`
    /// iff `self.index < b.index < self.index + self.len`. A subtree never
    /// strictly contains itself. For two valid subtrees of the same tree
    /// this single comparison on start indices is exact, because preorder
    /// intervals either nest or are disjoint.
    pub fn contains(&self, b: SubtreeRef) -> bool {
        self.index < b.index && b.index < self.end()
    }

    /// Interval containment allowing equality: every index of `b` lies in
    /// `self`. Unlike [`contains`](Self::contains) this is robust for
    /// intervals that share a start index (a node vs. one of length 1 at the
    /// same position), which the trace arithmetic needs.
    pub fn covers(&self, b: SubtreeRef) -> bool {
        self.index <= b.index && b.end() <= self.end()
    }
}

impl fmt::Display for SubtreeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.index, self.end())
    }
}

#[derive(Debug, Error)]
pub enum TreeParseError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token `{0}`")]
    UnexpectedToken(String),
    #[error("invalid number `{0}`")]
    InvalidNumber(String),
    #[error("trailing input after tree")]
    TrailingInput,
}

/// An expression tree in preorder; never empty.
#[derive(Clone, PartialEq)]
pub struct ExpressionTree {
    nodes: Vec<Node>,
}

impl ExpressionTree {
    /// Builds a tree from preorder nodes. Debug builds assert validity.
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        let tree = ExpressionTree { nodes };
        debug_assert!(tree.validate().is_ok(), "invalid tree: {:?}", tree.validate());
        tree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    /// The subtree rooted at `index`. Panics if `index` is out of range.
    pub fn subtree_at(&self, index: usize) -> SubtreeRef {
        assert!(index < self.nodes.len(), "preorder index {index} out of range");
        SubtreeRef::new(index, self.nodes[index].subtree_len)
    }

    /// Copies the subtree `r` out as a standalone tree.
    pub fn extract(&self, r: SubtreeRef) -> ExpressionTree {
        assert!(r.len >= 1 && r.end() <= self.nodes.len(), "invalid subtree ref {r}");
        ExpressionTree { nodes: self.nodes[r.index..r.end()].to_vec() }
    }

    /// Preorder splice: the nodes before `at` are unchanged, `fragment`
    /// replaces the interval, the suffix shifts, and the `subtree_len` of
    /// every ancestor of the splice point is adjusted.
    pub fn replace_subtree(&self, at: SubtreeRef, fragment: &ExpressionTree) -> ExpressionTree {
        assert!(
            at.len >= 1 && at.end() <= self.nodes.len() && self.nodes[at.index].subtree_len == at.len,
            "invalid subtree ref {at}"
        );
        let delta = fragment.len() as isize - at.len as isize;
        let mut nodes = Vec::with_capacity((self.len() as isize + delta) as usize);
        nodes.extend_from_slice(&self.nodes[..at.index]);
        nodes.extend_from_slice(&fragment.nodes);
        nodes.extend_from_slice(&self.nodes[at.end()..]);
        // ancestors are exactly the prefix nodes whose interval crosses the cut
        for (j, node) in self.nodes[..at.index].iter().enumerate() {
            if j + node.subtree_len > at.index {
                nodes[j].subtree_len = (node.subtree_len as isize + delta) as usize;
            }
        }
        ExpressionTree { nodes }
    }

    /// Depth of the whole tree; a single node has depth 1.
    pub fn depth(&self) -> usize {
        self.depth_of(0)
    }

    /// Depth of the subtree rooted at `index`.
    pub fn depth_of(&self, index: usize) -> usize {
        let end = index + self.nodes[index].subtree_len;
        let mut max = 0;
        // depth of node i relative to the subtree root = number of open ancestors
        let mut open: Vec<usize> = Vec::new(); // stack of subtree end positions
        for i in index..end {
            while let Some(&e) = open.last() {
                if i >= e {
                    open.pop();
                } else {
                    break;
                }
            }
            open.push(i + self.nodes[i].subtree_len);
            max = max.max(open.len());
        }
        max
    }

    /// 1-based depth of the node at `index` measured from the root.
    pub fn depth_to(&self, index: usize) -> usize {
        let mut d = 1;
        for j in 0..index {
            if j + self.nodes[j].subtree_len > index {
                d += 1;
            }
        }
        d
    }

    /// Checks all structural invariants; used by tests and log replay.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        if self.nodes[0].subtree_len != self.nodes.len() {
            return Err(format!(
                "root subtree_len {} != node count {}",
                self.nodes[0].subtree_len,
                self.nodes.len()
            ));
        }
        self.validate_at(0)?;
        for (i, n) in self.nodes.iter().enumerate() {
            match n.symbol {
                Symbol::Constant(c) if !c.is_finite() => {
                    return Err(format!("non-finite constant at {i}"));
                }
                Symbol::Variable { weight, .. } if !weight.is_finite() => {
                    return Err(format!("non-finite weight at {i}"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn validate_at(&self, index: usize) -> Result<usize, String> {
        let n = &self.nodes[index];
        match n.symbol.arity() {
            0 => {
                if n.subtree_len != 1 {
                    return Err(format!("leaf at {index} has subtree_len {}", n.subtree_len));
                }
                Ok(1)
            }
            2 => {
                let left = index + 1;
                if left >= self.nodes.len() {
                    return Err(format!("operator at {index} missing children"));
                }
                let ll = self.validate_at(left)?;
                let right = left + ll;
                if right >= self.nodes.len() {
                    return Err(format!("operator at {index} missing right child"));
                }
                let rl = self.validate_at(right)?;
                if n.subtree_len != 1 + ll + rl {
                    return Err(format!(
                        "node at {index}: subtree_len {} != 1+{ll}+{rl}",
                        n.subtree_len
                    ));
                }
                Ok(n.subtree_len)
            }
            _ => unreachable!(),
        }
    }

    /// Evaluates the tree over every row of `data`, one output per row.
    /// A variable node yields `weight * column`, division is unprotected,
    /// and non-finite values propagate.
    pub fn evaluate(&self, data: &DataMatrix) -> Vec<f64> {
        let mut ev = TreeEvaluator::new();
        ev.eval(self, data)
    }
}

impl fmt::Debug for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExpressionTree({self})")
    }
}

/// Parenthesised prefix form, e.g. `(* (+ (v 0 1.0) (v 1 1.0)) (c 5.0))`.
/// Floats use shortest round-trip formatting, so parsing the output always
/// recovers the exact tree.
impl fmt::Display for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn write_at(tree: &ExpressionTree, i: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match tree.nodes[i].symbol {
                Symbol::Op(op) => {
                    write!(f, "({} ", op.token())?;
                    let left = i + 1;
                    write_at(tree, left, f)?;
                    write!(f, " ")?;
                    write_at(tree, left + tree.nodes[left].subtree_len, f)?;
                    write!(f, ")")
                }
                Symbol::Constant(c) => write!(f, "(c {c:?})"),
                Symbol::Variable { index, weight } => write!(f, "(v {index} {weight:?})"),
            }
        }
        write_at(self, 0, f)
    }
}

impl FromStr for ExpressionTree {
    type Err = TreeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = tokenize(s);
        let mut nodes = Vec::new();
        parse_node(&mut tokens, &mut nodes)?;
        if tokens.next().is_some() {
            return Err(TreeParseError::TrailingInput);
        }
        Ok(ExpressionTree::from_nodes(nodes))
    }
}

fn tokenize(s: &str) -> impl Iterator<Item = &str> {
    s.split_whitespace().flat_map(|w| {
        let mut parts = Vec::new();
        let mut rest = w;
        while let Some(p) = rest.strip_prefix('(') {
            parts.push("(");
            rest = p;
        }
        let mut tail = Vec::new();
        while let Some(p) = rest.strip_suffix(')') {
            tail.push(")");
            rest = p;
        }
        if !rest.is_empty() {
            parts.push(rest);
        }
        parts.extend(tail);
        parts
    })
}

fn parse_node<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    out: &mut Vec<Node>,
) -> Result<usize, TreeParseError> {
    match tokens.next() {
        None => Err(TreeParseError::UnexpectedEnd),
        Some("(") => {
            let head = tokens.next().ok_or(TreeParseError::UnexpectedEnd)?;
            let len = match head {
                "+" | "-" | "*" | "/" => {
                    let op = match head {
                        "+" => OpKind::Add,
                        "-" => OpKind::Sub,
                        "*" => OpKind::Mul,
                        _ => OpKind::Div,
                    };
                    let at = out.len();
                    out.push(Node { symbol: Symbol::Op(op), subtree_len: 0 });
                    let l = parse_node(tokens, out)?;
                    let r = parse_node(tokens, out)?;
                    out[at].subtree_len = 1 + l + r;
                    1 + l + r
                }
                "c" => {
                    let tok = tokens.next().ok_or(TreeParseError::UnexpectedEnd)?;
                    let c: f64 = tok
                        .parse()
                        .map_err(|_| TreeParseError::InvalidNumber(tok.to_string()))?;
                    out.push(Node { symbol: Symbol::Constant(c), subtree_len: 1 });
                    1
                }
                "v" => {
                    let itok = tokens.next().ok_or(TreeParseError::UnexpectedEnd)?;
                    let index: usize = itok
                        .parse()
                        .map_err(|_| TreeParseError::InvalidNumber(itok.to_string()))?;
                    let wtok = tokens.next().ok_or(TreeParseError::UnexpectedEnd)?;
                    let weight: f64 = wtok
                        .parse()
                        .map_err(|_| TreeParseError::InvalidNumber(wtok.to_string()))?;
                    out.push(Node { symbol: Symbol::Variable { index, weight }, subtree_len: 1 });
                    1
                }
                other => return Err(TreeParseError::UnexpectedToken(other.to_string())),
            };
            match tokens.next() {
                Some(")") => Ok(len),
                Some(other) => Err(TreeParseError::UnexpectedToken(other.to_string())),
                None => Err(TreeParseError::UnexpectedEnd),
            }
        }
        Some(other) => Err(TreeParseError::UnexpectedToken(other.to_string())),
    }
}

/// Row-major input matrix for tree evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(cols: usize, values: Vec<f64>) -> Self {
        assert!(cols > 0 && values.len().is_multiple_of(cols));
        DataMatrix { cols, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(1, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols);
            values.extend_from_slice(r);
        }
        DataMatrix { cols, values }
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }
}

/// Stack-based evaluator with a reusable scratch buffer; evaluating a
/// population re-uses one allocation per thread instead of one per node.
pub struct TreeEvaluator {
    stack: Vec<f64>,
}

impl TreeEvaluator {
    pub fn new() -> Self {
        TreeEvaluator { stack: Vec::new() }
    }

    pub fn eval(&mut self, tree: &ExpressionTree, data: &DataMatrix) -> Vec<f64> {
        let mut out = Vec::new();
        self.eval_into(tree, data, &mut out);
        out
    }

    /// Evaluates `tree` on all rows of `data` into `out`.
    ///
    /// Scans the preorder array right to left, pushing one frame of `rows`
    /// values per leaf; at an operator the top frame is the left operand.
    pub fn eval_into(&mut self, tree: &ExpressionTree, data: &DataMatrix, out: &mut Vec<f64>) {
        let rows = data.rows();
        self.stack.clear();
        let mut top = 0usize; // frames on the stack
        for node in tree.nodes().iter().rev() {
            match node.symbol {
                Symbol::Constant(c) => {
                    self.stack.resize(self.stack.len() + rows, c);
                    top += 1;
                }
                Symbol::Variable { index, weight } => {
                    assert!(index < data.cols(), "variable index {index} out of range");
                    let base = self.stack.len();
                    self.stack.resize(base + rows, 0.0);
                    for r in 0..rows {
                        self.stack[base + r] = weight * data.get(r, index);
                    }
                    top += 1;
                }
                Symbol::Op(op) => {
                    debug_assert!(top >= 2);
                    let b_base = self.stack.len() - 2 * rows; // right operand
                    let a_base = self.stack.len() - rows; // left operand
                    for r in 0..rows {
                        let v = op.apply(self.stack[a_base + r], self.stack[b_base + r]);
                        self.stack[b_base + r] = v;
                    }
                    self.stack.truncate(a_base);
                    top -= 1;
                }
            }
        }
        debug_assert_eq!(top, 1);
        out.clear();
        out.extend_from_slice(&self.stack);
    }
}

impl Default for TreeEvaluator {
    fn default() -> Self {
        Self::new()
    }
}

/// Terminal and function sets used when growing random trees.
#[derive(Clone, Debug)]
pub struct Grammar {
    pub n_variables: usize,
    pub constant_range: (f64, f64),
    /// Probability that a leaf is a constant rather than a variable.
    pub constant_prob: f64,
}

impl Grammar {
    pub fn for_variables(n_variables: usize) -> Self {
        Grammar { n_variables, constant_range: (-20.0, 20.0), constant_prob: 0.2 }
    }

    pub fn random_leaf<R: Rng>(&self, rng: &mut R) -> Node {
        let symbol = if self.n_variables == 0 || rng.gen_bool(self.constant_prob) {
            Symbol::Constant(rng.gen_range(self.constant_range.0..=self.constant_range.1))
        } else {
            Symbol::Variable { index: rng.gen_range(0..self.n_variables), weight: 1.0 }
        };
        Node { symbol, subtree_len: 1 }
    }
}

/// Size limits every genotype must respect.
#[derive(Clone, Copy, Debug)]
pub struct TreeLimits {
    pub max_depth: usize,
    pub max_length: usize,
}

impl Default for TreeLimits {
    fn default() -> Self {
        TreeLimits { max_depth: 12, max_length: 50 }
    }
}

/// Grows a random tree within `limits`: 50/50 grow/full construction per
/// tree, uniform choice between branching and leaves while growing.
pub fn random_tree<R: Rng>(rng: &mut R, grammar: &Grammar, limits: &TreeLimits) -> ExpressionTree {
    assert!(limits.max_depth >= 1 && limits.max_length >= 1);
    let full = rng.gen_bool(0.5);
    let mut nodes = Vec::new();
    grow(rng, grammar, limits.max_depth, limits.max_length, full, &mut nodes);
    ExpressionTree::from_nodes(nodes)
}

/// Grows a random subtree; used by subtree-replacement mutation where the
/// depth and length budgets come from the insertion point.
pub fn random_subtree<R: Rng>(
    rng: &mut R,
    grammar: &Grammar,
    max_depth: usize,
    max_length: usize,
) -> ExpressionTree {
    let mut nodes = Vec::new();
    grow(rng, grammar, max_depth.max(1), max_length.max(1), false, &mut nodes);
    ExpressionTree::from_nodes(nodes)
}

fn grow<R: Rng>(
    rng: &mut R,
    grammar: &Grammar,
    depth_left: usize,
    len_budget: usize,
    full: bool,
    out: &mut Vec<Node>,
) -> usize {
    let can_branch = depth_left >= 2 && len_budget >= 3;
    if !can_branch || (!full && rng.gen_bool(0.5)) {
        out.push(grammar.random_leaf(rng));
        return 1;
    }
    let op = OpKind::ALL[rng.gen_range(0..OpKind::ALL.len())];
    let at = out.len();
    out.push(Node { symbol: Symbol::Op(op), subtree_len: 0 });
    let left = grow(rng, grammar, depth_left - 1, len_budget - 2, full, out);
    let right = grow(rng, grammar, depth_left - 1, len_budget - 1 - left, full, out);
    out[at].subtree_len = 1 + left + right;
    1 + left + right
}
