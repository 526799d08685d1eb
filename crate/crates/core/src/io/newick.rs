//! Newick tree parsing.
//!
//! Supports nested and multifurcating subtrees, optional internal labels,
//! quoted labels (`'it''s'`), `[...]` comments and arbitrary whitespace.
//! Missing branch lengths default to [`DEFAULT_BRANCH_LENGTH`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tree::PhyloTree;

pub const DEFAULT_BRANCH_LENGTH: f64 = 1.0;

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

impl<'a> Parser<'a> {
    fn skip_blank(&mut self) -> Result<()> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    match self.text[start..].find(']') {
                        Some(end) => self.pos = start + end + 1,
                        None => return Err(err(start, "unterminated comment")),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>> {
        self.skip_blank()?;
        Ok(self.bytes.get(self.pos).copied())
    }

    fn label(&mut self) -> Result<Option<String>> {
        self.skip_blank()?;
        if self.bytes.get(self.pos) == Some(&b'\'') {
            let start = self.pos;
            self.pos += 1;
            let mut out = String::new();
            loop {
                let rest = &self.text[self.pos..];
                match rest.find('\'') {
                    None => return Err(err(start, "unterminated quoted label")),
                    Some(q) => {
                        out.push_str(&rest[..q]);
                        self.pos += q + 1;
                        if self.bytes.get(self.pos) == Some(&b'\'') {
                            out.push('\'');
                            self.pos += 1;
                        } else {
                            return Ok(Some(out));
                        }
                    }
                }
            }
        }
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b"():;,[]'".contains(&b) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some(self.text[start..self.pos].to_string()))
        }
    }

    fn length(&mut self) -> Result<Option<f64>> {
        if self.peek()? != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_blank()?;
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_digit() || b"+-.eE".contains(&b) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let raw = &self.text[start..self.pos];
        let value: f64 = raw
            .parse()
            .map_err(|_| err(start, format!("invalid branch length {raw:?}")))?;
        if !value.is_finite() || value < 0.0 {
            return Err(err(start, format!("branch length {raw} must be finite and >= 0")));
        }
        Ok(Some(value))
    }
}

/// Parses a single Newick tree terminated by `;`.
pub fn parse_newick(text: &str) -> Result<PhyloTree> {
    let mut p = Parser {
        text,
        bytes: text.as_bytes(),
        pos: 0,
    };
    if p.peek()?.is_none() {
        return Err(err(0, "empty input"));
    }

    // (parent, length, name); offsets[i] is where node i's text starts
    let mut nodes: Vec<(Option<usize>, f64, Option<String>)> = Vec::new();
    let mut offsets: Vec<usize> = Vec::new();
    let mut open: Vec<(usize, usize)> = Vec::new(); // (node, offset of '(')
    let mut expect_node = true;

    loop {
        if expect_node {
            let parent = open.last().map(|&(n, _)| n);
            if parent.is_none() && !nodes.is_empty() {
                return Err(err(p.pos, "content after the root subtree"));
            }
            match p.peek()? {
                Some(b'(') => {
                    nodes.push((parent, DEFAULT_BRANCH_LENGTH, None));
                    offsets.push(p.pos);
                    open.push((nodes.len() - 1, p.pos));
                    p.pos += 1;
                    continue;
                }
                Some(b')') | Some(b',') | Some(b';') | None => {
                    // empty leaf such as "(,A);", rejected below for lacking a name
                    let at = p.pos;
                    let len = p.length()?.unwrap_or(DEFAULT_BRANCH_LENGTH);
                    nodes.push((parent, len, None));
                    offsets.push(at);
                }
                Some(_) => {
                    let at = p.pos;
                    let name = p.label()?;
                    let len = p.length()?.unwrap_or(DEFAULT_BRANCH_LENGTH);
                    nodes.push((parent, len, name));
                    offsets.push(at);
                }
            }
            expect_node = false;
        }

        match p.peek()? {
            Some(b',') => {
                if open.is_empty() {
                    return Err(err(p.pos, "',' outside parentheses"));
                }
                p.pos += 1;
                expect_node = true;
            }
            Some(b')') => {
                let Some((node, _)) = open.pop() else {
                    return Err(err(p.pos, "unbalanced ')'"));
                };
                p.pos += 1;
                nodes[node].2 = p.label()?;
                if let Some(len) = p.length()? {
                    nodes[node].1 = len;
                }
            }
            Some(b';') => {
                if let Some(&(_, at)) = open.last() {
                    return Err(err(at, "unbalanced '(' before ';'"));
                }
                p.pos += 1;
                if p.peek()?.is_some() {
                    return Err(err(p.pos, "trailing content after ';'"));
                }
                break;
            }
            None => {
                if let Some(&(_, at)) = open.last() {
                    return Err(err(at, "unbalanced '(' at end of input"));
                }
                return Err(err(p.pos, "missing terminating ';'"));
            }
            Some(c) => return Err(err(p.pos, format!("unexpected character {:?}", c as char))),
        }
    }

    // Leaf-level checks with byte offsets; structural checks live in PhyloTree.
    let mut has_child = vec![false; nodes.len()];
    for (parent, _, _) in &nodes {
        if let Some(q) = parent {
            has_child[*q] = true;
        }
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, (_, _, name)) in nodes.iter().enumerate() {
        if has_child[i] {
            continue;
        }
        match name.as_deref() {
            None | Some("") => return Err(err(offsets[i], "leaf without a name")),
            Some(n) => {
                if let Some(first) = seen.insert(n, offsets[i]) {
                    return Err(err(
                        offsets[i],
                        format!("duplicate leaf name {n:?} (first at byte {first})"),
                    ));
                }
            }
        }
    }
    // the root's own branch plays no role
    nodes[0].1 = 0.0;
    PhyloTree::from_parents(nodes)
}
