use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{Code, CodeKind};
use crate::error::{Error, Result};

/// Rooted drug-category tree. Leaves are drugs, inner nodes are categories.
#[derive(Debug, Clone, PartialEq)]
pub struct DrugOntology {
    nodes: Vec<Code>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    level: Vec<usize>,
    root: usize,
}

impl DrugOntology {
    /// Build from `(child, parent)` edges. Node order is first appearance,
    /// starting with the root.
    pub fn from_edges<S: AsRef<str>>(root: &str, edges: &[(S, S)]) -> Result<Self> {
        Self::build(root, edges.iter().map(|(c, p)| (c.as_ref(), p.as_ref(), 0)), Path::new("<edges>"))
    }

    fn build<'a>(
        root: &str,
        edges: impl Iterator<Item = (&'a str, &'a str, usize)>,
        path: &Path,
    ) -> Result<Self> {
        if root.is_empty() {
            return Err(Error::parse(path, 1, "empty root id"));
        }
        let mut ids: Vec<String> = vec![root.to_string()];
        let mut index: HashMap<String, usize> = HashMap::from([(root.to_string(), 0)]);
        let mut parent: Vec<Option<usize>> = vec![None];
        let mut intern = |id: &str, ids: &mut Vec<String>, parent: &mut Vec<Option<usize>>| {
            *index.entry(id.to_string()).or_insert_with(|| {
                ids.push(id.to_string());
                parent.push(None);
                ids.len() - 1
            })
        };
        for (child, par, line) in edges {
            if child.is_empty() || par.is_empty() {
                return Err(Error::parse(path, line, "empty node id"));
            }
            if child == root {
                return Err(Error::parse(path, line, format!("root `{root}` cannot have a parent")));
            }
            let c = intern(child, &mut ids, &mut parent);
            let p = intern(par, &mut ids, &mut parent);
            match parent[c] {
                Some(existing) if existing != p => {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("`{child}` already has parent `{}`", ids[existing]),
                    ))
                }
                _ => parent[c] = Some(p),
            }
        }

        let n = ids.len();
        let mut level: Vec<Option<usize>> = vec![None; n];
        level[0] = Some(0);
        for start in 0..n {
            if level[start].is_some() {
                continue;
            }
            let mut chain = vec![start];
            let mut on_chain = vec![false; n];
            on_chain[start] = true;
            let mut cur = start;
            let base = loop {
                match parent[cur] {
                    None => return Err(Error::Orphan(ids[start].clone())),
                    Some(p) => {
                        if let Some(l) = level[p] {
                            break l;
                        }
                        if on_chain[p] {
                            return Err(Error::Cycle(ids[p].clone()));
                        }
                        on_chain[p] = true;
                        chain.push(p);
                        cur = p;
                    }
                }
            };
            for (i, &node) in chain.iter().rev().enumerate() {
                level[node] = Some(base + 1 + i);
            }
        }

        let mut has_child = vec![false; n];
        for p in parent.iter().flatten() {
            has_child[*p] = true;
        }
        let nodes = ids
            .into_iter()
            .zip(&has_child)
            .map(|(id, &inner)| Code {
                id,
                kind: if inner { CodeKind::DrugCategory } else { CodeKind::Drug },
                description: None,
            })
            .collect();
        Ok(DrugOntology {
            nodes,
            index,
            parent,
            level: level.into_iter().map(|l| l.expect("all levels resolved")).collect(),
            root: 0,
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut root: Option<String> = None;
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(r) = rest.trim().strip_prefix("root=") {
                    if root.is_some() {
                        return Err(Error::parse(path, i + 1, "duplicate root header"));
                    }
                    root = Some(r.trim().to_string());
                }
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(child), Some(parent), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(path, i + 1, "expected `child<TAB>parent`"));
            };
            edges.push((child.trim(), parent.trim(), i + 1));
        }
        let root = root.ok_or_else(|| Error::parse(path, 1, "missing `#root=<id>` header"))?;
        Self::build(&root, edges.into_iter(), path)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "#root={}", self.nodes[self.root].id)?;
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                writeln!(w, "{}\t{}", self.nodes[i].id, self.nodes[*p].id)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Code] {
        &self.nodes
    }

    pub fn root(&self) -> &Code {
        &self.nodes[self.root]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parent_of(&self, id: &str) -> Option<&Code> {
        let i = self.node_index(id)?;
        self.parent[i].map(|p| &self.nodes[p])
    }

    pub fn level(&self, id: &str) -> Option<usize> {
        self.node_index(id).map(|i| self.level[i])
    }

    pub fn level_of_index(&self, i: usize) -> usize {
        self.level[i]
    }

    pub fn drugs(&self) -> impl Iterator<Item = &Code> {
        self.nodes.iter().filter(|c| c.kind == CodeKind::Drug)
    }

    /// `[drug, parent, ..., root]` as node indices.
    pub fn closure_indices(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.level[node] + 1);
        let mut cur = Some(node);
        while let Some(c) = cur {
            out.push(c);
            cur = self.parent[c];
        }
        out
    }

    /// The node itself followed by its ancestors up to the root.
    pub fn ancestor_closure(&self, id: &str) -> Result<Vec<&Code>> {
        let i = self.node_index(id).ok_or_else(|| Error::UnknownDrug(id.to_string()))?;
        Ok(self.closure_indices(i).into_iter().map(|j| &self.nodes[j]).collect())
    }

    /// Ancestor at `level`, or the node itself when it sits above that level.
    pub fn ancestor_at_level(&self, id: &str, level: usize) -> Result<&Code> {
        let i = self.node_index(id).ok_or_else(|| Error::UnknownDrug(id.to_string()))?;
        if self.level[i] <= level {
            return Ok(&self.nodes[i]);
        }
        let hit = self
            .closure_indices(i)
            .into_iter()
            .find(|&j| self.level[j] == level)
            .expect("levels decrease by one along the closure");
        Ok(&self.nodes[hit])
    }
}

pub fn load_ontology(path: impl AsRef<Path>) -> Result<DrugOntology> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DrugOntology::parse(&text, path)
}
