use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub vector: bool,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Named, contiguous slices of a flat parameter vector. Blocks partition
/// `0..dim` in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<Block>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_block(mut self, name: &str, len: usize, vector: bool) -> Self {
        let start = self.dim();
        self.blocks.push(Block {
            name: name.to_string(),
            start,
            len,
            vector,
        });
        self
    }

    pub fn scalar(self, name: &str) -> Self {
        self.push_block(name, 1, false)
    }

    pub fn vector(self, name: &str, len: usize) -> Self {
        self.push_block(name, len, true)
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.block(name).map(Block::range)
    }

    /// Scalars keep their name; vector entries become `name[i]`, 1-based.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        for b in &self.blocks {
            if b.vector {
                out.extend((1..=b.len).map(|i| format!("{}[{i}]", b.name)));
            } else {
                out.push(b.name.clone());
            }
        }
        out
    }

    /// Rebuilds a layout from column names written by `column_names`.
    pub fn from_column_names(names: &[String]) -> Self {
        let mut layout = Self::new();
        for name in names {
            let base = match name.rfind('[') {
                Some(p) if name.ends_with(']') => Some(&name[..p]),
                _ => None,
            };
            match (base, layout.blocks.last_mut()) {
                (Some(b), Some(last)) if last.vector && last.name == b => last.len += 1,
                (Some(b), _) => layout = layout.vector(b, 1),
                (None, _) => layout = layout.scalar(name),
            }
        }
        layout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        let l = ParamLayout::new()
            .scalar("beta0")
            .vector("beta", 3)
            .scalar("tau")
            .vector("eta2", 1);
        let names = l.column_names();
        assert_eq!(names, vec!["beta0", "beta[1]", "beta[2]", "beta[3]", "tau", "eta2[1]"]);
        let back = ParamLayout::from_column_names(&names);
        assert_eq!(back, l);
        assert_eq!(back.range("beta"), Some(1..4));
        assert_eq!(back.dim(), 6);
    }
}
