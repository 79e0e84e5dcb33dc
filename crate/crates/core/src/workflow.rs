//! Multi-vehicle data collection pipeline as a typed DAG.
//!
//! The canonical graph is `IN → WP1 → SPₙ → DCₙ → (DFₙ) → AG → DA → OUT`
//! with one lane per vehicle. Execution is serial in Kahn order, always
//! picking the ready node with the smallest index, so traces are
//! reproducible.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::clock::Clock;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkflowError {
    #[error("filter mask has {got} entries for {expected} vehicles")]
    MaskLength { expected: usize, got: usize },
    #[error("graph contains a cycle")]
    Cycle,
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0}: vehicle index must be set exactly for SP, DC and DF tasks")]
    VehicleIndex(String),
    #[error("no handler for {0} tasks")]
    MissingHandler(TaskKind),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    In,
    Wp1,
    Sp,
    Dc,
    Df,
    Ag,
    Da,
    Out,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::In,
        TaskKind::Wp1,
        TaskKind::Sp,
        TaskKind::Dc,
        TaskKind::Df,
        TaskKind::Ag,
        TaskKind::Da,
        TaskKind::Out,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::In => "IN",
            TaskKind::Wp1 => "WP1",
            TaskKind::Sp => "SP",
            TaskKind::Dc => "DC",
            TaskKind::Df => "DF",
            TaskKind::Ag => "AG",
            TaskKind::Da => "DA",
            TaskKind::Out => "OUT",
        }
    }

    /// Zero-duration tasks: they appear in traces with `start == end`.
    pub fn is_pseudo(self) -> bool {
        matches!(self, TaskKind::In | TaskKind::Sp | TaskKind::Out)
    }

    pub fn per_vehicle(self) -> bool {
        matches!(self, TaskKind::Sp | TaskKind::Dc | TaskKind::Df)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskNode {
    pub id: String,
    pub kind: TaskKind,
    pub vehicle_index: Option<usize>,
}

impl TaskNode {
    pub fn new(id: impl Into<String>, kind: TaskKind, vehicle_index: Option<usize>) -> Result<Self, WorkflowError> {
        let id = id.into();
        if kind.per_vehicle() != matches!(vehicle_index, Some(v) if v >= 1) {
            return Err(WorkflowError::VehicleIndex(id));
        }
        Ok(Self { id, kind, vehicle_index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowGraph {
    nodes: Vec<TaskNode>,
    edges: Vec<(usize, usize)>,
    n_vehicles: usize,
}

/// Closed-form size of the canonical graph: `(nodes, edges)`.
///
/// Each vehicle adds SP and DC plus DF when filtered; edges are WP1→SP,
/// SP→DC, last→AG per lane, DC→DF per filtered lane, plus IN→WP1, AG→DA,
/// DA→OUT and, without vehicles, WP1→AG.
pub fn canonical_counts(n_vehicles: usize, filtered: usize) -> (usize, usize) {
    let nodes = 5 + 2 * n_vehicles + filtered;
    let edges = 3 + 3 * n_vehicles + filtered + usize::from(n_vehicles == 0);
    (nodes, edges)
}

pub fn build_graph(n_vehicles: usize, df_mask: &[bool]) -> Result<WorkflowGraph, WorkflowError> {
    if df_mask.len() != n_vehicles {
        return Err(WorkflowError::MaskLength {
            expected: n_vehicles,
            got: df_mask.len(),
        });
    }
    let mut nodes = vec![
        TaskNode::new("IN", TaskKind::In, None)?,
        TaskNode::new("WP1", TaskKind::Wp1, None)?,
    ];
    let mut edges = vec![(0, 1)];
    let mut lane_ends = Vec::with_capacity(n_vehicles);
    for (i, &df) in df_mask.iter().enumerate() {
        let v = i + 1;
        let sp = nodes.len();
        nodes.push(TaskNode::new(format!("SP{v}"), TaskKind::Sp, Some(v))?);
        nodes.push(TaskNode::new(format!("DC{v}"), TaskKind::Dc, Some(v))?);
        edges.push((1, sp));
        edges.push((sp, sp + 1));
        let mut last = sp + 1;
        if df {
            nodes.push(TaskNode::new(format!("DF{v}"), TaskKind::Df, Some(v))?);
            edges.push((last, last + 1));
            last += 1;
        }
        lane_ends.push(last);
    }
    let ag = nodes.len();
    nodes.push(TaskNode::new("AG", TaskKind::Ag, None)?);
    nodes.push(TaskNode::new("DA", TaskKind::Da, None)?);
    nodes.push(TaskNode::new("OUT", TaskKind::Out, None)?);
    if lane_ends.is_empty() {
        edges.push((1, ag));
    }
    edges.extend(lane_ends.into_iter().map(|e| (e, ag)));
    edges.push((ag, ag + 1));
    edges.push((ag + 1, ag + 2));
    Ok(WorkflowGraph {
        nodes,
        edges,
        n_vehicles,
    })
}

impl WorkflowGraph {
    /// An arbitrary task graph. Cycles are only detected on execution.
    pub fn from_parts(nodes: Vec<TaskNode>, edges: Vec<(usize, usize)>) -> Result<Self, WorkflowError> {
        let mut seen = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if seen.insert(n.id.as_str(), i).is_some() {
                return Err(WorkflowError::DuplicateNode(n.id.clone()));
            }
        }
        for &(a, b) in &edges {
            for i in [a, b] {
                if i >= nodes.len() {
                    return Err(WorkflowError::UnknownNode(format!("#{i}")));
                }
            }
        }
        let n_vehicles = nodes.iter().filter_map(|n| n.vehicle_index).max().unwrap_or(0);
        Ok(Self {
            nodes,
            edges,
            n_vehicles,
        })
    }

    pub fn nodes(&self) -> &[TaskNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_vehicles(&self) -> usize {
        self.n_vehicles
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn predecessors(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == node).map(|e| e.0).collect()
    }

    /// Kahn order with smallest-index tie breaking.
    pub fn topological_order(&self) -> Result<Vec<usize>, WorkflowError> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            indeg[b] += 1;
            succ[a].push(b);
        }
        let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &s in &succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(Reverse(s));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(WorkflowError::Cycle)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let v = n.vehicle_index.map_or_else(|| "-".to_string(), |v| v.to_string());
            let _ = writeln!(out, "node\t{}\t{}\t{}", n.id, n.kind, v);
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "edge\t{}\t{}", self.nodes[a].id, self.nodes[b].id);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, WorkflowError> {
        let mut nodes = Vec::new();
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let perr = |reason: String| WorkflowError::Parse { line: line_no, reason };
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match f.as_slice() {
                ["node", id, kind, v] => {
                    let kind = kind.parse::<TaskKind>().map_err(perr)?;
                    let v = match *v {
                        "-" => None,
                        s => Some(s.parse::<usize>().map_err(|e| perr(e.to_string()))?),
                    };
                    ids.insert(id.to_string(), nodes.len());
                    nodes.push(TaskNode::new(*id, kind, v)?);
                }
                ["edge", a, b] => {
                    let look = |s: &str| ids.get(s).copied().ok_or_else(|| WorkflowError::UnknownNode(s.to_string()));
                    edges.push((look(a)?, look(b)?));
                }
                ["trace", ..] => {}
                _ => return Err(perr(format!("unrecognised record {line:?}"))),
            }
        }
        Self::from_parts(nodes, edges)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStatus {
    Ok,
    Failed,
    Skipped,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Ok => "ok",
            TaskStatus::Failed => "failed",
            TaskStatus::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub task_id: String,
    pub start_ns: u64,
    pub end_ns: u64,
    pub status: TaskStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunTrace {
    pub entries: Vec<TraceEntry>,
}

impl RunTrace {
    pub fn succeeded(&self) -> bool {
        self.entries.iter().all(|e| e.status == TaskStatus::Ok)
    }

    pub fn status_of(&self, id: &str) -> Option<TaskStatus> {
        self.entries.iter().find(|e| e.task_id == id).map(|e| e.status)
    }

    pub fn order(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.task_id.as_str()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "trace\t{}\t{}\t{}\t{}", e.task_id, e.start_ns, e.end_ns, e.status.as_str());
        }
        out
    }
}

pub type Handler<T> = Box<dyn Fn(&TaskNode, &[&T]) -> Result<T, String> + Send + Sync>;

/// Per-kind task handlers. Each receives the node and its predecessors' outputs in edge order.
pub struct Handlers<T> {
    map: HashMap<TaskKind, Handler<T>>,
}

impl<T> Default for Handlers<T> {
    fn default() -> Self {
        Self { map: HashMap::new() }
    }
}

impl<T> Handlers<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(mut self, kind: TaskKind, f: impl Fn(&TaskNode, &[&T]) -> Result<T, String> + Send + Sync + 'static) -> Self {
        self.map.insert(kind, Box::new(f));
        self
    }

    pub fn set(&mut self, kind: TaskKind, f: Handler<T>) {
        self.map.insert(kind, f);
    }
}

#[derive(Debug)]
pub struct Execution<T> {
    pub trace: RunTrace,
    /// Output per node index; `None` for failed and skipped tasks.
    pub outputs: Vec<Option<T>>,
}

impl<T> Execution<T> {
    pub fn output(&self, graph: &WorkflowGraph, id: &str) -> Option<&T> {
        graph.index_of(id).and_then(|i| self.outputs[i].as_ref())
    }
}

pub fn execute<T>(graph: &WorkflowGraph, handlers: &Handlers<T>, clock: &dyn Clock) -> Result<Execution<T>, WorkflowError> {
    for n in &graph.nodes {
        if !handlers.map.contains_key(&n.kind) {
            return Err(WorkflowError::MissingHandler(n.kind));
        }
    }
    let order = graph.topological_order()?;
    let preds: Vec<Vec<usize>> = (0..graph.nodes.len()).map(|i| graph.predecessors(i)).collect();
    let mut outputs: Vec<Option<T>> = (0..graph.nodes.len()).map(|_| None).collect();
    let mut status = vec![TaskStatus::Skipped; graph.nodes.len()];
    let mut entries = Vec::with_capacity(order.len());

    for i in order {
        let node = &graph.nodes[i];
        if preds[i].iter().any(|&p| status[p] != TaskStatus::Ok) {
            let t = clock.now_ns();
            entries.push(TraceEntry {
                task_id: node.id.clone(),
                start_ns: t,
                end_ns: t,
                status: TaskStatus::Skipped,
                error: None,
            });
            continue;
        }
        let inputs: Vec<&T> = preds[i].iter().filter_map(|&p| outputs[p].as_ref()).collect();
        let start = clock.now_ns();
        let result = (handlers.map[&node.kind])(node, &inputs);
        let end = if node.kind.is_pseudo() { start } else { clock.now_ns().max(start) };
        let (st, err) = match result {
            Ok(v) => {
                outputs[i] = Some(v);
                (TaskStatus::Ok, None)
            }
            Err(e) => (TaskStatus::Failed, Some(e)),
        };
        status[i] = st;
        entries.push(TraceEntry {
            task_id: node.id.clone(),
            start_ns: start,
            end_ns: end,
            status: st,
            error: err,
        });
    }
    Ok(Execution {
        trace: RunTrace { entries },
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::TickClock;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counting_handlers() -> Handlers<u32> {
        let mut h = Handlers::new();
        for k in TaskKind::ALL {
            h.set(k, Box::new(|_, inputs: &[&u32]| Ok(1 + inputs.iter().copied().sum::<u32>())));
        }
        h
    }

    fn all_topological_orders(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        fn go(n: usize, edges: &[(usize, usize)], placed: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
            if placed.len() == n {
                out.push(placed.clone());
                return;
            }
            for v in 0..n {
                if used[v] || edges.iter().any(|&(a, b)| b == v && !used[a]) {
                    continue;
                }
                used[v] = true;
                placed.push(v);
                go(n, edges, placed, used, out);
                placed.pop();
                used[v] = false;
            }
        }
        let mut out = Vec::new();
        go(n, edges, &mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    #[test]
    fn empty_fleet_is_a_chain() {
        let g = build_graph(0, &[]).unwrap();
        assert_eq!(g.nodes().len(), 5);
        let ex = execute(&g, &counting_handlers(), &TickClock::new(10)).unwrap();
        assert_eq!(ex.trace.order(), ["IN", "WP1", "AG", "DA", "OUT"]);
        assert!(ex.trace.succeeded());
    }

    #[test]
    fn single_filtered_lane() {
        let g = build_graph(1, &[true]).unwrap();
        assert_eq!(g.nodes().len(), 8);
        let ex = execute(&g, &counting_handlers(), &TickClock::new(10)).unwrap();
        assert_eq!(ex.trace.order(), ["IN", "WP1", "SP1", "DC1", "DF1", "AG", "DA", "OUT"]);
    }

    #[test]
    fn three_filtered_lanes() {
        let g = build_graph(3, &[true, true, true]).unwrap();
        assert_eq!(g.nodes().len(), 14);
        assert_eq!(g.edges().len(), 15);
        let ag = g.index_of("AG").unwrap();
        let mut fan_in: Vec<&str> = g.predecessors(ag).iter().map(|&p| g.nodes()[p].id.as_str()).collect();
        fan_in.sort();
        assert_eq!(fan_in, ["DF1", "DF2", "DF3"]);
    }

    #[test]
    fn aggregation_sees_every_lane() {
        let g = build_graph(3, &[true, false, true]).unwrap();
        let ex = execute(&g, &counting_handlers(), &TickClock::new(1)).unwrap();
        // IN=1, WP1=2, SP=3, DC=4, DF=5; AG = 1 + 5 + 4 + 5
        assert_eq!(ex.output(&g, "AG"), Some(&15));
    }

    #[test]
    fn failure_skips_descendants_only() {
        let g = build_graph(2, &[true, true]).unwrap();
        let h = counting_handlers().on(TaskKind::Dc, |n, _| {
            if n.vehicle_index == Some(2) {
                Err("sensor offline".into())
            } else {
                Ok(1)
            }
        });
        let ex = execute(&g, &h, &TickClock::new(1)).unwrap();
        assert!(!ex.trace.succeeded());
        assert_eq!(ex.trace.status_of("DC1"), Some(TaskStatus::Ok));
        assert_eq!(ex.trace.status_of("DF1"), Some(TaskStatus::Ok));
        assert_eq!(ex.trace.status_of("DC2"), Some(TaskStatus::Failed));
        for id in ["DF2", "AG", "DA", "OUT"] {
            assert_eq!(ex.trace.status_of(id), Some(TaskStatus::Skipped), "{id}");
        }
    }

    #[test]
    fn pseudo_tasks_have_zero_duration() {
        let g = build_graph(2, &[false, true]).unwrap();
        let ex = execute(&g, &counting_handlers(), &TickClock::new(1_000)).unwrap();
        for (e, n) in ex.trace.entries.iter().zip(ex.trace.order()) {
            let kind = g.nodes()[g.index_of(n).unwrap()].kind;
            assert_eq!(kind.is_pseudo(), e.start_ns == e.end_ns, "{n}");
        }
    }

    #[test]
    fn trace_respects_precedence_in_time() {
        let g = build_graph(3, &[true, false, true]).unwrap();
        let ex = execute(&g, &counting_handlers(), &TickClock::new(7)).unwrap();
        let at = |id: &str| ex.trace.entries.iter().find(|e| e.task_id == id).unwrap();
        for &(a, b) in g.edges() {
            assert!(at(&g.nodes()[a].id).end_ns <= at(&g.nodes()[b].id).start_ns);
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let nodes = vec![
            TaskNode::new("a", TaskKind::Wp1, None).unwrap(),
            TaskNode::new("b", TaskKind::Ag, None).unwrap(),
        ];
        let g = WorkflowGraph::from_parts(nodes, vec![(0, 1), (1, 0)]).unwrap();
        assert_eq!(
            execute(&g, &counting_handlers(), &TickClock::new(1)).unwrap_err(),
            WorkflowError::Cycle
        );
    }

    #[test]
    fn missing_handler_and_bad_mask() {
        let g = build_graph(1, &[false]).unwrap();
        let h: Handlers<u32> = Handlers::new().on(TaskKind::In, |_, _| Ok(0));
        assert!(matches!(
            execute(&g, &h, &TickClock::new(1)),
            Err(WorkflowError::MissingHandler(_))
        ));
        assert!(matches!(build_graph(2, &[true]), Err(WorkflowError::MaskLength { .. })));
        assert!(TaskNode::new("x", TaskKind::Dc, None).is_err());
        assert!(TaskNode::new("x", TaskKind::Ag, Some(1)).is_err());
    }

    #[test]
    fn text_round_trip() {
        let g = build_graph(2, &[true, false]).unwrap();
        let text = g.to_text();
        assert!(text.starts_with("node\tIN\tIN\t-\nnode\tWP1\tWP1\t-\nnode\tSP1\tSP\t1\n"));
        assert!(text.contains("edge\tDF1\tAG\n"));
        assert_eq!(WorkflowGraph::from_text(&text).unwrap(), g);
        let ex = execute(&g, &counting_handlers(), &TickClock::new(1)).unwrap();
        let trace = ex.trace.to_text();
        assert!(trace.starts_with("trace\tIN\t0\t0\tok\n"));
        assert!(WorkflowGraph::from_text(&(text + &trace)).is_ok());
        assert!(WorkflowGraph::from_text("bogus\n").is_err());
    }

    #[test]
    fn executed_order_is_topological_on_random_small_dags() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..=8);
            // random DAG over a shuffled labelling so index order is not a topological order
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(0.35) {
                        edges.push((perm[i], perm[j]));
                    }
                }
            }
            let nodes = (0..n)
                .map(|i| TaskNode::new(format!("t{i}"), TaskKind::Dc, Some(i + 1)).unwrap())
                .collect();
            let g = WorkflowGraph::from_parts(nodes, edges.clone()).unwrap();
            let ex = execute(&g, &counting_handlers(), &TickClock::new(1)).unwrap();
            let got: Vec<usize> = ex.trace.order().iter().map(|id| g.index_of(id).unwrap()).collect();
            assert!(all_topological_orders(n, &edges).contains(&got), "{got:?} {edges:?}");
        }
    }

    proptest! {
        #[test]
        fn canonical_counts_hold(mask in proptest::collection::vec(any::<bool>(), 0..=20)) {
            let g = build_graph(mask.len(), &mask).unwrap();
            let m = mask.iter().filter(|&&b| b).count();
            prop_assert_eq!((g.nodes().len(), g.edges().len()), canonical_counts(mask.len(), m));
            prop_assert!(g.topological_order().is_ok());
        }
    }
}
