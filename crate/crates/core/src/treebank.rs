//! Sentences, binary trees, labels, the two synthetic dataset families and
//! their line-based text format.
//!
//! A sentence is a list of integer tokens in `[0, 10000]` holding exactly one
//! keyword (a token below 1000). The class of a sentence is the keyword's
//! hundreds digit.
//!
//! # File format
//!
//! One example per line, `<label> <tree>`, where a tree is either a bare
//! integer (a leaf) or `(<tree> <tree>)`. Lines starting with `#` carry
//! provenance:
//!
//! ```text
//! # experiment=1 index=3 split=train size=2 seed=42
//! # constructed=
//! 6 ((3000 607) 5000)
//! 0 42
//! ```
//!
//! `constructed` lists the (0-based) indices of examples whose tree came from
//! the constructive depth sampler rather than from rejection sampling.
//! A dataset directory holds `train.txt`, `dev.txt`, `test.txt` and a `meta`
//! file of `key=value` lines.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const MAX_TOKEN: u32 = 10_000;
pub const KEYWORD_LIMIT: u32 = 1_000;
pub const NUM_CLASSES: usize = 10;

/// Rejection-sampling budget per example before the constructive sampler
/// takes over.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(u16);

impl Token {
    pub fn new(value: u32) -> Result<Token> {
        if value > MAX_TOKEN {
            return Err(Error::invalid(format!("token {value} outside [0, {MAX_TOKEN}]")));
        }
        Ok(Token(value as u16))
    }

    pub fn value(self) -> u32 {
        self.0 as u32
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_keyword(self) -> bool {
        self.value() < KEYWORD_LIMIT
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn label_of_keyword(keyword: Token) -> Result<u8> {
    if !keyword.is_keyword() {
        return Err(Error::invalid(format!("{keyword} is not a keyword")));
    }
    Ok((keyword.value() / 100) as u8)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BinaryTree {
    Leaf(Token),
    Internal(Box<BinaryTree>, Box<BinaryTree>),
}

impl BinaryTree {
    pub fn leaf(token: Token) -> Self {
        BinaryTree::Leaf(token)
    }

    pub fn internal(left: BinaryTree, right: BinaryTree) -> Self {
        BinaryTree::Internal(Box::new(left), Box::new(right))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            BinaryTree::Leaf(_) => 1,
            BinaryTree::Internal(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }

    pub fn internal_count(&self) -> usize {
        match self {
            BinaryTree::Leaf(_) => 0,
            BinaryTree::Internal(l, r) => 1 + l.internal_count() + r.internal_count(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.leaf_count() + self.internal_count()
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.leaf_count());
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<Token>) {
        match self {
            BinaryTree::Leaf(t) => out.push(*t),
            BinaryTree::Internal(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    /// Depth (in edges) of every leaf, left to right.
    pub fn leaf_depths(&self) -> Vec<(Token, usize)> {
        fn walk(t: &BinaryTree, depth: usize, out: &mut Vec<(Token, usize)>) {
            match t {
                BinaryTree::Leaf(tok) => out.push((*tok, depth)),
                BinaryTree::Internal(l, r) => {
                    walk(l, depth + 1, out);
                    walk(r, depth + 1, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, 0, &mut out);
        out
    }
}

impl fmt::Display for BinaryTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinaryTree::Leaf(t) => write!(f, "{t}"),
            BinaryTree::Internal(l, r) => write!(f, "({l} {r})"),
        }
    }
}

/// The unique keyword leaf and its depth in edges from the root.
pub fn find_keyword(tree: &BinaryTree) -> Result<(Token, usize)> {
    let mut found = tree.leaf_depths().into_iter().filter(|(t, _)| t.is_keyword());
    match (found.next(), found.next()) {
        (Some(kw), None) => Ok(kw),
        (None, _) => Err(Error::invalid("tree has no keyword leaf")),
        (Some(_), Some(_)) => Err(Error::invalid("tree has more than one keyword leaf")),
    }
}

pub fn keyword_depth(tree: &BinaryTree) -> Result<usize> {
    find_keyword(tree).map(|(_, d)| d)
}

/// How the tree of an example was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeOrigin {
    Random,
    Constructed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub tree: BinaryTree,
    pub label: u8,
    pub keyword: Token,
    pub keyword_depth: usize,
    pub origin: TreeOrigin,
}

impl LabeledExample {
    pub fn new(tree: BinaryTree, origin: TreeOrigin) -> Result<Self> {
        let (keyword, keyword_depth) = find_keyword(&tree)?;
        Ok(LabeledExample {
            label: label_of_keyword(keyword)?,
            tree,
            keyword,
            keyword_depth,
            origin,
        })
    }

    pub fn sentence_length(&self) -> usize {
        self.tree.leaf_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Sizes {
    pub const PAPER: Sizes = Sizes {
        train: 10_000,
        dev: 1_000,
        test: 1_000,
    };

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Dev => "dev.txt",
            Split::Test => "test.txt",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub experiment: u8,
    pub index: u32,
    pub sizes: Sizes,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub provenance: Provenance,
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[LabeledExample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<LabeledExample> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = &LabeledExample> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

/// `length - 1` non-keywords from `[1000, 10000]` and one keyword from
/// `[0, 999]`, uniformly shuffled.
pub fn gen_sentence(length: usize, rng: &mut SeededRng) -> Result<Vec<Token>> {
    if length == 0 {
        return Err(Error::invalid("sentence length must be at least 1"));
    }
    let mut tokens = Vec::with_capacity(length);
    tokens.push(Token(rng.int_inclusive(0, (KEYWORD_LIMIT - 1) as u64) as u16));
    for _ in 1..length {
        tokens.push(Token(rng.int_inclusive(KEYWORD_LIMIT as u64, MAX_TOKEN as u64) as u16));
    }
    rng.shuffle(&mut tokens);
    Ok(tokens)
}

/// Random binary tree over `leaves` (kept in order). Each span of `l > 1`
/// leaves is split after a position drawn uniformly from `1..l`.
pub fn gen_random_tree(leaves: &[Token], rng: &mut SeededRng) -> Result<BinaryTree> {
    if leaves.is_empty() {
        return Err(Error::invalid("cannot build a tree with no leaves"));
    }
    Ok(random_split(leaves, rng))
}

fn random_split(leaves: &[Token], rng: &mut SeededRng) -> BinaryTree {
    if leaves.len() == 1 {
        return BinaryTree::Leaf(leaves[0]);
    }
    let k = rng.int_inclusive(1, leaves.len() as u64 - 1) as usize;
    let left = random_split(&leaves[..k], rng);
    let right = random_split(&leaves[k..], rng);
    BinaryTree::internal(left, right)
}

/// Tree whose keyword leaf sits at exactly `depth` edges below the root.
///
/// The root-to-keyword path turns left or right at random; the non-keyword
/// leaves are shared among the `depth` off-path subtrees by a uniform
/// composition, and each subtree is grown with [`gen_random_tree`]. Leaf
/// order is the non-keyword order of `sentence` with the keyword moved to
/// whatever slot the path dictates.
pub fn gen_tree_with_keyword_depth(sentence: &[Token], depth: usize, rng: &mut SeededRng) -> Result<BinaryTree> {
    let mut keywords = sentence.iter().filter(|t| t.is_keyword());
    let keyword = *keywords
        .next()
        .ok_or_else(|| Error::invalid("sentence has no keyword"))?;
    if keywords.next().is_some() {
        return Err(Error::invalid("sentence has more than one keyword"));
    }
    let others: Vec<Token> = sentence.iter().copied().filter(|t| !t.is_keyword()).collect();
    if depth > others.len() || (depth == 0) != others.is_empty() {
        return Err(Error::invalid(format!(
            "depth {depth} impossible with {} leaves",
            sentence.len()
        )));
    }
    if depth == 0 {
        return Ok(BinaryTree::Leaf(keyword));
    }

    // Uniform composition of `others.len()` into `depth` positive parts:
    // choose depth-1 distinct cut points among the len-1 gaps.
    let mut gaps: Vec<usize> = (1..others.len()).collect();
    rng.shuffle(&mut gaps);
    let mut cuts: Vec<usize> = gaps[..depth - 1].to_vec();
    cuts.sort_unstable();
    let mut parts = Vec::with_capacity(depth);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(others.len())) {
        parts.push(c - prev);
        prev = c;
    }
    // parts[0] hangs next to the root, parts[depth-1] next to the keyword.
    let on_left: Vec<bool> = (0..depth).map(|_| rng.coin()).collect();

    // Left-to-right, the leaves are: the left-hanging subtrees from the root
    // downwards, the keyword, then the right-hanging ones from the keyword
    // back up to the root.
    let mut order: Vec<usize> = (0..depth).filter(|&d| on_left[d]).collect();
    order.extend((0..depth).rev().filter(|&d| !on_left[d]));
    let mut subtree_leaves: Vec<&[Token]> = vec![&[]; depth];
    let mut offset = 0;
    for &d in &order {
        subtree_leaves[d] = &others[offset..offset + parts[d]];
        offset += parts[d];
    }

    let mut node = BinaryTree::Leaf(keyword);
    for d in (0..depth).rev() {
        let side = random_split(subtree_leaves[d], rng);
        node = if on_left[d] {
            BinaryTree::internal(side, node)
        } else {
            BinaryTree::internal(node, side)
        };
    }
    Ok(node)
}

fn check_index(i: u32) -> Result<()> {
    if !(1..=10).contains(&i) {
        return Err(Error::invalid(format!("dataset index must be in 1..=10, got {i}")));
    }
    Ok(())
}

fn generate(
    experiment: u8,
    i: u32,
    sizes: Sizes,
    rng: &SeededRng,
    mut make: impl FnMut(&mut SeededRng) -> Result<LabeledExample>,
) -> Result<Dataset> {
    let mut ds = Dataset {
        provenance: Provenance {
            experiment,
            index: i,
            sizes,
            seed: rng.seed(),
        },
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let examples = (0..sizes.get(split))
            .map(|k| make(&mut rng.derive(&[split.tag(), k as u64])))
            .collect::<Result<Vec<_>>>()?;
        *ds.split_mut(split) = examples;
    }
    Ok(ds)
}

/// Experiment-1 family: the `i`-th dataset has sentence lengths uniform on
/// `[10i-9, 10i]` and random trees.
pub fn gen_dataset_exp1(i: u32, sizes: Sizes, rng: &SeededRng) -> Result<Dataset> {
    check_index(i)?;
    let (lo, hi) = (10 * i as u64 - 9, 10 * i as u64);
    generate(1, i, sizes, rng, |r| {
        let len = r.int_inclusive(lo, hi) as usize;
        let sentence = gen_sentence(len, r)?;
        let tree = gen_random_tree(&sentence, r)?;
        LabeledExample::new(tree, TreeOrigin::Random)
    })
}

pub const EXP2_MIN_LENGTH: usize = 21;
pub const EXP2_MAX_LENGTH: usize = 30;

/// Experiment-2 family: lengths uniform on `[21, 30]`, keyword depth `i` or
/// `i + 1`.
pub fn gen_dataset_exp2(i: u32, sizes: Sizes, rng: &SeededRng) -> Result<Dataset> {
    check_index(i)?;
    let targets = [i as usize, i as usize + 1];
    generate(2, i, sizes, rng, |r| {
        let len = r.int_inclusive(EXP2_MIN_LENGTH as u64, EXP2_MAX_LENGTH as u64) as usize;
        let sentence = gen_sentence(len, r)?;
        for _ in 0..MAX_REJECTION_ATTEMPTS {
            let tree = gen_random_tree(&sentence, r)?;
            if targets.contains(&keyword_depth(&tree)?) {
                return LabeledExample::new(tree, TreeOrigin::Random);
            }
        }
        let depth = targets[r.int_inclusive(0, 1) as usize];
        let tree = gen_tree_with_keyword_depth(&sentence, depth, r)?;
        LabeledExample::new(tree, TreeOrigin::Constructed)
    })
}

// ---------------------------------------------------------------------------
// Text format

pub fn format_example(ex: &LabeledExample) -> String {
    format!("{} {}", ex.label, ex.tree)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn err(&self, message: impl Into<String>) -> (usize, String) {
        (self.pos + 1, message.into())
    }

    fn expect(&mut self, b: u8) -> std::result::Result<(), (usize, String)> {
        match self.peek() {
            Some(c) if c == b => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected '{}', found '{}'", b as char, c as char))),
            None => Err(self.err(format!("expected '{}', found end of line", b as char))),
        }
    }

    fn integer(&mut self) -> std::result::Result<u32, (usize, String)> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(match self.peek() {
                Some(c) => format!("expected integer, found '{}'", c as char),
                None => "expected integer, found end of line".to_string(),
            }));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&v| v <= MAX_TOKEN)
            .ok_or_else(|| (start + 1, format!("integer out of range [0, {MAX_TOKEN}]")))
    }

    fn tree(&mut self) -> std::result::Result<BinaryTree, (usize, String)> {
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let left = self.tree()?;
            self.expect(b' ')?;
            let right = self.tree()?;
            self.expect(b')')?;
            Ok(BinaryTree::internal(left, right))
        } else {
            Ok(BinaryTree::Leaf(Token(self.integer()? as u16)))
        }
    }
}

/// Parses one `<label> <tree>` line. Errors carry a 1-based column.
pub fn parse_example_line(line: &str) -> std::result::Result<LabeledExample, (usize, String)> {
    let mut cur = Cursor {
        bytes: line.as_bytes(),
        pos: 0,
    };
    let label = cur.integer()?;
    cur.expect(b' ')?;
    let tree_col = cur.pos + 1;
    let tree = cur.tree()?;
    if cur.pos != line.len() {
        return Err(cur.err("trailing characters after tree"));
    }
    let ex = LabeledExample::new(tree, TreeOrigin::Random).map_err(|e| (tree_col, e.to_string()))?;
    if ex.label as u32 != label {
        return Err((1, format!("label {label} disagrees with keyword {}", ex.keyword)));
    }
    Ok(ex)
}

fn header_line(p: &Provenance, split: Split) -> String {
    format!(
        "# experiment={} index={} split={} size={} seed={}",
        p.experiment,
        p.index,
        split.name(),
        p.sizes.get(split),
        p.seed
    )
}

pub fn write_split(path: &Path, p: &Provenance, split: Split, examples: &[LabeledExample]) -> Result<()> {
    let constructed: Vec<String> = examples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.origin == TreeOrigin::Constructed)
        .map(|(k, _)| k.to_string())
        .collect();
    let mut out = String::new();
    out.push_str(&header_line(p, split));
    out.push('\n');
    out.push_str("# constructed=");
    out.push_str(&constructed.join(","));
    out.push('\n');
    for ex in examples {
        out.push_str(&format_example(ex));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        column,
        message: message.into(),
    }
}

fn key_values(s: &str) -> Vec<(&str, &str)> {
    s.split_whitespace().filter_map(|kv| kv.split_once('=')).collect()
}

/// Reads one split file, returning its header fields and examples.
pub fn read_split(path: &Path) -> Result<(Vec<(String, String)>, Vec<LabeledExample>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = Vec::new();
    let mut examples = Vec::new();
    let mut constructed: Vec<usize> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if let Some(rest) = line.strip_prefix('#') {
            for (k, v) in key_values(rest) {
                if k == "constructed" {
                    for idx in v.split(',').filter(|s| !s.is_empty()) {
                        constructed.push(
                            idx.parse()
                                .map_err(|_| parse_err(path, lineno, 1, format!("bad constructed index {idx:?}")))?,
                        );
                    }
                } else {
                    header.push((k.to_string(), v.to_string()));
                }
            }
            continue;
        }
        let ex = parse_example_line(line).map_err(|(col, msg)| parse_err(path, lineno, col, msg))?;
        examples.push(ex);
    }
    for idx in constructed {
        match examples.get_mut(idx) {
            Some(ex) => ex.origin = TreeOrigin::Constructed,
            None => {
                return Err(parse_err(
                    path,
                    1,
                    1,
                    format!("constructed index {idx} beyond {} examples", examples.len()),
                ))
            }
        }
    }
    Ok((header, examples))
}

/// Summary statistics written into the `meta` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetStats {
    pub min_length: usize,
    pub max_length: usize,
    pub min_depth: usize,
    pub max_depth: usize,
    pub constructed: usize,
}

pub fn dataset_stats(d: &Dataset) -> Option<DatasetStats> {
    let mut it = d.examples();
    let first = it.next()?;
    let init = DatasetStats {
        min_length: first.sentence_length(),
        max_length: first.sentence_length(),
        min_depth: first.keyword_depth,
        max_depth: first.keyword_depth,
        constructed: (first.origin == TreeOrigin::Constructed) as usize,
    };
    Some(it.fold(init, |s, e| DatasetStats {
        min_length: s.min_length.min(e.sentence_length()),
        max_length: s.max_length.max(e.sentence_length()),
        min_depth: s.min_depth.min(e.keyword_depth),
        max_depth: s.max_depth.max(e.keyword_depth),
        constructed: s.constructed + (e.origin == TreeOrigin::Constructed) as usize,
    }))
}

pub fn write_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = &d.provenance;
    let mut meta = format!(
        "experiment={}\nindex={}\ntrain={}\ndev={}\ntest={}\nseed={}\n",
        p.experiment, p.index, p.sizes.train, p.sizes.dev, p.sizes.test, p.seed
    );
    if let Some(s) = dataset_stats(d) {
        meta.push_str(&format!(
            "min_length={}\nmax_length={}\nmin_depth={}\nmax_depth={}\nconstructed={}\n",
            s.min_length, s.max_length, s.min_depth, s.max_depth, s.constructed
        ));
    }
    let meta_path = dir.join("meta");
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    for split in Split::ALL {
        write_split(&dir.join(split.file_name()), p, split, d.split(split))?;
    }
    Ok(())
}

fn read_meta(path: &Path) -> Result<Provenance> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut fields = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, lineno + 1, 1, "expected key=value"))?;
        fields.insert(k.trim().to_string(), (lineno + 1, v.trim().to_string()));
    }
    fn get<T: std::str::FromStr>(
        path: &Path,
        fields: &std::collections::HashMap<String, (usize, String)>,
        key: &str,
    ) -> Result<T> {
        let (line, v) = fields
            .get(key)
            .ok_or_else(|| parse_err(path, 1, 1, format!("missing key {key:?}")))?;
        v.parse()
            .map_err(|_| parse_err(path, *line, key.len() + 2, format!("bad value for {key}: {v:?}")))
    }
    Ok(Provenance {
        experiment: get(path, &fields, "experiment")?,
        index: get(path, &fields, "index")?,
        sizes: Sizes {
            train: get(path, &fields, "train")?,
            dev: get(path, &fields, "dev")?,
            test: get(path, &fields, "test")?,
        },
        seed: get(path, &fields, "seed")?,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let provenance = read_meta(&dir.join("meta"))?;
    let mut ds = Dataset {
        provenance,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let (_, examples) = read_split(&path)?;
        if examples.len() != provenance.sizes.get(split) {
            return Err(parse_err(
                &path,
                1,
                1,
                format!(
                    "{} examples but meta says {}",
                    examples.len(),
                    provenance.sizes.get(split)
                ),
            ));
        }
        *ds.split_mut(split) = examples;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(v: u32) -> Token {
        Token::new(v).unwrap()
    }

    fn leaf(v: u32) -> BinaryTree {
        BinaryTree::leaf(tok(v))
    }

    #[test]
    fn labels() {
        assert_eq!(label_of_keyword(tok(607)).unwrap(), 6);
        assert_eq!(label_of_keyword(tok(0)).unwrap(), 0);
        assert_eq!(label_of_keyword(tok(999)).unwrap(), 9);
        assert!(label_of_keyword(tok(1000)).is_err());
        assert!(Token::new(10_001).is_err());
    }

    #[test]
    fn sentences() {
        let one = gen_sentence(1, &mut SeededRng::new(1)).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].is_keyword());

        let s = gen_sentence(25, &mut SeededRng::new(2)).unwrap();
        assert_eq!(s.len(), 25);
        assert_eq!(s.iter().filter(|t| t.is_keyword()).count(), 1);
        assert!(s.iter().all(|t| t.value() <= MAX_TOKEN));

        assert_eq!(s, gen_sentence(25, &mut SeededRng::new(2)).unwrap());
        assert!(gen_sentence(0, &mut SeededRng::new(2)).is_err());
    }

    #[test]
    fn random_trees() {
        let mut rng = SeededRng::new(5);
        assert_eq!(gen_random_tree(&[tok(3)], &mut rng).unwrap(), leaf(3));
        assert_eq!(
            gen_random_tree(&[tok(3), tok(4000)], &mut rng).unwrap(),
            BinaryTree::internal(leaf(3), leaf(4000))
        );
        let toks: Vec<Token> = (0..8).map(|k| tok(1000 + k)).collect();
        for seed in 0..20 {
            let t = gen_random_tree(&toks, &mut SeededRng::new(seed)).unwrap();
            assert_eq!(t.internal_count(), 7);
            assert_eq!(t.leaves(), toks);
        }
        assert!(gen_random_tree(&[], &mut rng).is_err());
    }

    #[test]
    fn keyword_depths() {
        assert_eq!(keyword_depth(&leaf(607)).unwrap(), 0);
        assert_eq!(keyword_depth(&BinaryTree::internal(leaf(607), leaf(5000))).unwrap(), 1);
        let t = BinaryTree::internal(BinaryTree::internal(leaf(3000), leaf(42)), leaf(5000));
        assert_eq!(keyword_depth(&t).unwrap(), 2);
        assert!(keyword_depth(&leaf(5000)).is_err());
        assert!(keyword_depth(&BinaryTree::internal(leaf(1), leaf(2))).is_err());
    }

    #[test]
    fn constructive_sampler_hits_requested_depth() {
        for seed in 0..200u64 {
            let mut rng = SeededRng::new(seed);
            let len = rng.int_inclusive(21, 30) as usize;
            let sentence = gen_sentence(len, &mut rng).unwrap();
            let depth = rng.int_inclusive(1, len as u64 - 1) as usize;
            let t = gen_tree_with_keyword_depth(&sentence, depth, &mut rng).unwrap();
            assert_eq!(keyword_depth(&t).unwrap(), depth);
            assert_eq!(t.leaf_count(), len);
            let mut expect: Vec<Token> = sentence.iter().copied().filter(|t| !t.is_keyword()).collect();
            let got: Vec<Token> = t.leaves().into_iter().filter(|t| !t.is_keyword()).collect();
            expect.sort();
            let mut got_sorted = got.clone();
            got_sorted.sort();
            assert_eq!(got_sorted, expect);
        }
        let s = [tok(5), tok(2000)];
        assert!(gen_tree_with_keyword_depth(&s, 2, &mut SeededRng::new(0)).is_err());
        assert!(gen_tree_with_keyword_depth(&s, 0, &mut SeededRng::new(0)).is_err());
        assert_eq!(
            gen_tree_with_keyword_depth(&[tok(5)], 0, &mut SeededRng::new(0)).unwrap(),
            leaf(5)
        );
    }

    #[test]
    fn exp1_bands_and_sizes() {
        let sizes = Sizes {
            train: 200,
            dev: 30,
            test: 30,
        };
        for i in [1, 3] {
            let d = gen_dataset_exp1(i, sizes, &SeededRng::new(9)).unwrap();
            assert_eq!((d.train.len(), d.dev.len(), d.test.len()), (200, 30, 30));
            let (lo, hi) = (10 * i as usize - 9, 10 * i as usize);
            for ex in d.examples() {
                assert!((lo..=hi).contains(&ex.sentence_length()));
                assert_eq!(ex.label as u32, ex.keyword.value() / 100);
                assert_eq!(ex.tree.internal_count(), ex.sentence_length() - 1);
            }
        }
        assert!(gen_dataset_exp1(0, sizes, &SeededRng::new(9)).is_err());
        assert!(gen_dataset_exp1(11, sizes, &SeededRng::new(9)).is_err());
    }

    #[test]
    fn exp2_depths() {
        let sizes = Sizes {
            train: 60,
            dev: 10,
            test: 10,
        };
        for i in [4, 10] {
            let d = gen_dataset_exp2(i, sizes, &SeededRng::new(11)).unwrap();
            for ex in d.examples() {
                assert!([i as usize, i as usize + 1].contains(&ex.keyword_depth));
                assert!((21..=30).contains(&ex.sentence_length()));
                assert_eq!(keyword_depth(&ex.tree).unwrap(), ex.keyword_depth);
            }
        }
    }

    #[test]
    fn line_format() {
        let ex = LabeledExample::new(BinaryTree::internal(leaf(607), leaf(5000)), TreeOrigin::Random).unwrap();
        assert_eq!(format_example(&ex), "6 (607 5000)");
        let ex = LabeledExample::new(leaf(42), TreeOrigin::Random).unwrap();
        assert_eq!(format_example(&ex), "0 42");
        assert_eq!(parse_example_line("6 ((3000 607) 5000)").unwrap().keyword_depth, 2);
    }

    #[test]
    fn parse_errors_carry_columns() {
        assert_eq!(parse_example_line("6 (607 5000").unwrap_err().0, 12);
        assert_eq!(parse_example_line("6 (607  5000)").unwrap_err().0, 8);
        assert_eq!(parse_example_line("x 42").unwrap_err().0, 1);
        assert_eq!(parse_example_line("0 42 7").unwrap_err().0, 5);
        assert_eq!(parse_example_line("0 20000").unwrap_err().0, 3);
        assert!(parse_example_line("5 42").unwrap_err().1.contains("disagrees"));
        assert!(parse_example_line("0 (1 2)").unwrap_err().1.contains("keyword"));
    }

    #[test]
    fn read_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        fs::write(&path, "# experiment=1\n0 42\n6 (607 5000\n").unwrap();
        match read_split(&path).unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, 12)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dataset_round_trip_including_constructed_marks() {
        let sizes = Sizes {
            train: 40,
            dev: 5,
            test: 5,
        };
        let mut d = gen_dataset_exp1(3, sizes, &SeededRng::new(77)).unwrap();
        d.train[3].origin = TreeOrigin::Constructed;
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&d, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn serialized_trees_parse_back(seed in any::<u64>(), len in 1usize..60) {
            let mut rng = SeededRng::new(seed);
            let s = gen_sentence(len, &mut rng).unwrap();
            let tree = gen_random_tree(&s, &mut rng).unwrap();
            let ex = LabeledExample::new(tree, TreeOrigin::Random).unwrap();
            prop_assert_eq!(parse_example_line(&format_example(&ex)).unwrap(), ex);
        }
    }
}
