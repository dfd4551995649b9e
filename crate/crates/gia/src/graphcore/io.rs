//! Versioned graph container format.
//!
//! Text header `GIA1 nodes=<n> classes=<C> dim=<d>`, an `EDGES` section with
//! one `u v` pair per line, a `FEATURES` section holding `n·d` little-endian
//! 64-bit floats row-major, and a `LABELS` section with one integer per line
//! (−1 for unlabeled). Knowledge graphs use `GIA1 entities=<n> relations=<R>
//! dim=<d>` with a `TRIPLES h r t` section instead of edges/labels.

use crate::error::{Error, Result};
use crate::graphcore::graph::{Graph, KnowledgeGraph};
use crate::numkernel::Tensor;
use std::fs;
use std::path::Path;

pub const MAGIC: &str = "GIA1";

/// Either container variant, discriminated by the header.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedGraph {
    Node(Graph),
    Knowledge(KnowledgeGraph),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Parse { offset: self.offset(), detail: detail.into() }
    }

    fn line(&mut self) -> Result<&'a str> {
        if self.pos >= self.bytes.len() {
            return Err(self.err("unexpected end of file"));
        }
        let start = self.pos;
        let end = self.bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| Error::Parse {
                offset: start as u64,
                detail: "line not terminated by newline".into(),
            })?;
        let s = std::str::from_utf8(&self.bytes[start..end])
            .map_err(|_| Error::Parse { offset: start as u64, detail: "invalid utf-8 in text section".into() })?;
        self.pos = end + 1;
        Ok(s)
    }

    fn raw(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(self.err(format!(
                "binary section truncated: need {} bytes, {} remain",
                len,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }
}

fn header_field(cursor: &Cursor, token: Option<&str>, name: &str) -> Result<usize> {
    let token = token.ok_or_else(|| cursor.err(format!("header missing `{}=`", name)))?;
    let (k, v) = token
        .split_once('=')
        .ok_or_else(|| cursor.err(format!("malformed header token `{}`", token)))?;
    if k != name {
        return Err(cursor.err(format!("expected header field `{}`, got `{}`", name, k)));
    }
    v.parse()
        .map_err(|_| cursor.err(format!("header field `{}` is not an integer: `{}`", name, v)))
}

fn expect_section(cursor: &mut Cursor, name: &str) -> Result<()> {
    let at = cursor.offset();
    let line = cursor.line()?;
    if line != name {
        return Err(Error::Parse {
            offset: at,
            detail: format!("expected `{}` section, got `{}`", name, line),
        });
    }
    Ok(())
}

fn read_features(cursor: &mut Cursor, rows: usize, dim: usize) -> Result<Tensor> {
    expect_section(cursor, "FEATURES")?;
    let at = cursor.offset();
    let raw = cursor.raw(rows * dim * 8)?;
    let mut data = Vec::with_capacity(rows * dim);
    for chunk in raw.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Tensor::new(vec![rows, dim], data).map_err(|e| Error::Parse {
        offset: at,
        detail: format!("invalid feature payload: {}", e),
    })
}

/// Parse either container variant from raw bytes.
pub fn parse_any(bytes: &[u8]) -> Result<LoadedGraph> {
    let mut cursor = Cursor::new(bytes);
    let header = cursor.line()?.to_string();
    let mut tokens = header.split_whitespace();
    match tokens.next() {
        Some(MAGIC) => {}
        other => {
            return Err(Error::Parse {
                offset: 0,
                detail: format!("bad magic `{}`, expected `{}`", other.unwrap_or(""), MAGIC),
            })
        }
    }
    let first = tokens.next();
    if first.is_some_and(|t| t.starts_with("entities=")) {
        let entities = header_field(&cursor, first, "entities")?;
        let relations = header_field(&cursor, tokens.next(), "relations")?;
        let dim = header_field(&cursor, tokens.next(), "dim")?;
        expect_section(&mut cursor, "TRIPLES")?;
        let mut triples = Vec::new();
        loop {
            let at = cursor.offset();
            let line = cursor.line()?;
            if line == "FEATURES" {
                cursor.pos = at as usize; // rewind, read_features re-consumes the marker
                break;
            }
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.ok_or_else(|| Error::Parse { offset: at, detail: "triple needs `h r t`".into() })?
                    .parse()
                    .map_err(|_| Error::Parse { offset: at, detail: format!("bad triple line `{}`", line) })
            };
            let h = parse(parts.next())?;
            let r = parse(parts.next())?;
            let t = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Parse { offset: at, detail: format!("trailing tokens in `{}`", line) });
            }
            triples.push((h, r, t));
        }
        let features = read_features(&mut cursor, entities, dim)?;
        let kg = KnowledgeGraph::new(entities, triples, features, relations)?;
        Ok(LoadedGraph::Knowledge(kg))
    } else {
        let nodes = header_field(&cursor, first, "nodes")?;
        let classes = header_field(&cursor, tokens.next(), "classes")?;
        let dim = header_field(&cursor, tokens.next(), "dim")?;
        expect_section(&mut cursor, "EDGES")?;
        let mut edges = Vec::new();
        loop {
            let at = cursor.offset();
            let line = cursor.line()?;
            if line == "FEATURES" {
                cursor.pos = at as usize;
                break;
            }
            let (u, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse { offset: at, detail: format!("edge needs `u v`, got `{}`", line) })?;
            let u: usize = u
                .parse()
                .map_err(|_| Error::Parse { offset: at, detail: format!("bad edge endpoint `{}`", u) })?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse { offset: at, detail: format!("bad edge endpoint `{}`", v) })?;
            edges.push((u, v));
        }
        let features = read_features(&mut cursor, nodes, dim)?;
        expect_section(&mut cursor, "LABELS")?;
        let mut labels = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            let at = cursor.offset();
            let line = cursor.line()?;
            let l: i64 = line
                .trim()
                .parse()
                .map_err(|_| Error::Parse { offset: at, detail: format!("bad label `{}`", line) })?;
            labels.push(l);
        }
        let graph = Graph::new(nodes, edges, features, labels, classes)?;
        Ok(LoadedGraph::Node(graph))
    }
}

pub fn read_any(path: &Path) -> Result<LoadedGraph> {
    parse_any(&fs::read(path)?)
}

pub fn read_graph(path: &Path) -> Result<Graph> {
    match read_any(path)? {
        LoadedGraph::Node(g) => Ok(g),
        LoadedGraph::Knowledge(_) => Err(Error::Input(format!(
            "{} holds a knowledge graph, expected a node graph",
            path.display()
        ))),
    }
}

pub fn read_kg(path: &Path) -> Result<KnowledgeGraph> {
    match read_any(path)? {
        LoadedGraph::Knowledge(kg) => Ok(kg),
        LoadedGraph::Node(_) => Err(Error::Input(format!(
            "{} holds a node graph, expected a knowledge graph",
            path.display()
        ))),
    }
}

pub fn graph_to_bytes(graph: &Graph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "{} nodes={} classes={} dim={}\n",
            MAGIC,
            graph.node_count(),
            graph.class_count(),
            graph.feature_dim()
        )
        .as_bytes(),
    );
    out.extend_from_slice(b"EDGES\n");
    for &(u, v) in graph.edges() {
        out.extend_from_slice(format!("{} {}\n", u, v).as_bytes());
    }
    out.extend_from_slice(b"FEATURES\n");
    for &v in graph.features().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(b"LABELS\n");
    for &l in graph.labels() {
        out.extend_from_slice(format!("{}\n", l).as_bytes());
    }
    out
}

pub fn write_graph(graph: &Graph, path: &Path) -> Result<()> {
    fs::write(path, graph_to_bytes(graph))?;
    Ok(())
}

pub fn kg_to_bytes(kg: &KnowledgeGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "{} entities={} relations={} dim={}\n",
            MAGIC,
            kg.entity_count(),
            kg.relation_count(),
            kg.features().shape()[1]
        )
        .as_bytes(),
    );
    out.extend_from_slice(b"TRIPLES\n");
    for &(h, r, t) in kg.triples() {
        out.extend_from_slice(format!("{} {} {}\n", h, r, t).as_bytes());
    }
    out.extend_from_slice(b"FEATURES\n");
    for &v in kg.features().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_kg(kg: &KnowledgeGraph, path: &Path) -> Result<()> {
    fs::write(path, kg_to_bytes(kg))?;
    Ok(())
}
