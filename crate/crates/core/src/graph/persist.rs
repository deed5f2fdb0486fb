//! Line-delimited JSON persistence. The first record is a header carrying
//! store settings and record counts; nodes, entities and edges follow, one
//! per line. Unknown fields are ignored on load.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GraphError, GraphSettings, MemoryGraph};
use crate::model::{EntityNode, EventNode, NodeId, TypedEdge};

const FORMAT: &str = "strata-graph";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dimension: usize,
    theta_sim: f64,
    #[serde(default)]
    clamp_out_of_order: bool,
    next_id: u64,
    last_event_id: Option<NodeId>,
    node_count: usize,
    entity_count: usize,
    edge_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Header(Header),
    Node(EventNode),
    Entity(EntityNode),
    Edge(TypedEdge),
}

fn io_err(path: &Path, source: std::io::Error) -> GraphError {
    GraphError::Io { path: path.display().to_string(), source }
}

/// Serializes the graph to `out` in the persistence format.
pub fn write_to(graph: &MemoryGraph, out: &mut impl Write) -> std::io::Result<()> {
    let s = graph.settings();
    let header = Record::Header(Header {
        format: FORMAT.into(),
        version: VERSION,
        dimension: s.dimension,
        theta_sim: s.theta_sim,
        clamp_out_of_order: s.clamp_out_of_order,
        next_id: graph.next_id(),
        last_event_id: graph.last_event_id(),
        node_count: graph.node_count(),
        entity_count: graph.entity_count(),
        edge_count: graph.edge_count(),
    });
    let mut line = |r: &Record| -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")
    };
    line(&header)?;
    for n in graph.nodes() {
        line(&Record::Node(n.clone()))?;
    }
    for e in graph.entities() {
        line(&Record::Entity(e.clone()))?;
    }
    for e in graph.edges() {
        line(&Record::Edge(e.clone()))?;
    }
    Ok(())
}

/// Writes the graph to `path` via a temporary sibling and an atomic rename.
pub fn save(graph: &MemoryGraph, path: &Path) -> Result<(), GraphError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        let mut w = BufWriter::new(file);
        write_to(graph, &mut w).map_err(|e| io_err(&tmp, e))?;
        w.flush().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Reads a store written by [`save`].
pub fn load(path: &Path) -> Result<MemoryGraph, GraphError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse(&text)
}

/// Parses the persistence format. Any malformed or missing record fails
/// the whole load.
pub fn parse(text: &str) -> Result<MemoryGraph, GraphError> {
    let mut header: Option<Header> = None;
    let (mut nodes, mut entities, mut edges) = (Vec::new(), Vec::new(), Vec::new());
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        if raw.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(raw).map_err(|e| GraphError::Parse { line: line_no, message: e.to_string() })?;
        match (record, header.is_some()) {
            (Record::Header(h), false) => {
                if h.format != FORMAT || h.version != VERSION {
                    return Err(GraphError::Parse {
                        line: line_no,
                        message: format!("unsupported format {} v{}", h.format, h.version),
                    });
                }
                header = Some(h);
            }
            (Record::Header(_), true) => {
                return Err(GraphError::Parse { line: line_no, message: "second header record".into() });
            }
            (_, false) => return Err(GraphError::Parse { line: line_no, message: "record before header".into() }),
            (Record::Node(n), true) => nodes.push(n),
            (Record::Entity(e), true) => entities.push(e),
            (Record::Edge(e), true) => edges.push(e),
        }
    }
    let h = header.ok_or(GraphError::Parse { line: 1, message: "missing header record".into() })?;
    let counts = [("node", h.node_count, nodes.len()), ("entity", h.entity_count, entities.len()), ("edge", h.edge_count, edges.len())];
    for (kind, expected, found) in counts {
        if expected != found {
            return Err(GraphError::Parse {
                line: last_line + 1,
                message: format!("truncated store: header declares {expected} {kind} records, found {found}"),
            });
        }
    }
    let mut ids = std::collections::HashSet::new();
    for id in nodes.iter().map(|n| n.id).chain(entities.iter().map(|e| e.id)) {
        if !ids.insert(id) {
            return Err(GraphError::Parse { line: last_line, message: format!("duplicate node id {id}") });
        }
    }
    let settings = GraphSettings { dimension: h.dimension, theta_sim: h.theta_sim, clamp_out_of_order: h.clamp_out_of_order };
    Ok(MemoryGraph::from_parts(settings, nodes, entities, edges, h.next_id, h.last_event_id))
}
