//! Task graph for the blocked solver and a dependency-counting worker pool.
//!
//! Tasks writing the same segment are chained, so every segment sees the same
//! sequence of floating-point operations regardless of the number of workers.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::{Condvar, Mutex, OnceLock, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blocked::{assemble, post_process, prepare, EigenvectorResult, GroupOutput, Prepared};
use crate::error::{Error, Result};
use crate::guard::AugmentedMatrix;
use crate::kernels::{merge, KernelFlags};
use crate::partition::TilePartition;
use crate::pencil::{RealSchurPencil, SpectralBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Pre-scaling of the pencil, eigenvalue pairs and tile norms.
    PreNorms,
    /// Diagonal tile solve of a column group; the tip when `row` is the group's tile row.
    Solve { row: usize },
    /// `Y_target -= S_{target,source} X D - T_{target,source} X B`.
    Update { target: usize, source: usize },
    /// Consistent scaling and normalization of a column group.
    Post,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub kind: TaskKind,
    pub group: Option<usize>,
    pub priority: i32,
    pub deps: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PriorityScheme {
    /// Solve and pre-processing before updates feeding the next solve, before other updates, before post-processing.
    #[default]
    CriticalPath,
    Uniform,
}

impl std::str::FromStr for PriorityScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "critical-path" | "critical_path" => Ok(Self::CriticalPath),
            "uniform" => Ok(Self::Uniform),
            _ => Err(Error::InvalidConfig(format!("unknown priority scheme {s:?}"))),
        }
    }
}

/// Tasks in insertion order (a topological order) with dependency edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    succs: Vec<Vec<usize>>,
    /// Task indices of each column group, in insertion order.
    pub group_tasks: Vec<Vec<usize>>,
}

fn priority(kind: TaskKind, scheme: PriorityScheme) -> i32 {
    if scheme == PriorityScheme::Uniform {
        return 0;
    }
    match kind {
        TaskKind::PreNorms | TaskKind::Solve { .. } => 3,
        TaskKind::Update { target, source } if target + 1 == source => 2,
        TaskKind::Update { .. } => 1,
        TaskKind::Post => 0,
    }
}

/// Builds the task graph of all column groups of `part`.
pub fn build_graph(part: &TilePartition) -> Result<TaskGraph> {
    build_graph_with(part, PriorityScheme::CriticalPath)
}

pub fn build_graph_with(part: &TilePartition, scheme: PriorityScheme) -> Result<TaskGraph> {
    if part.slots().is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut tasks = Vec::new();
    let push = |tasks: &mut Vec<Task>, kind, group, deps| {
        tasks.push(Task { kind, group, priority: priority(kind, scheme), deps });
        tasks.len() - 1
    };
    let pre = push(&mut tasks, TaskKind::PreNorms, None, vec![]);
    let mut group_tasks = Vec::with_capacity(part.groups().len());
    for (g, group) in part.groups().iter().enumerate() {
        let first = tasks.len();
        let r = group.tile_row;
        let mut solved = vec![None; r + 1];
        // last writer of each segment before its solve
        let mut last: Vec<Option<usize>> = vec![None; r + 1];
        solved[r] = Some(push(&mut tasks, TaskKind::Solve { row: r }, Some(g), vec![pre]));
        for i in (0..r).rev() {
            let src = solved[i + 1].unwrap();
            for (k, prev) in last.iter_mut().enumerate().take(i + 1) {
                let mut deps = vec![src];
                deps.extend(*prev);
                *prev = Some(push(&mut tasks, TaskKind::Update { target: k, source: i + 1 }, Some(g), deps));
            }
            solved[i] = Some(push(&mut tasks, TaskKind::Solve { row: i }, Some(g), vec![last[i].unwrap()]));
        }
        push(&mut tasks, TaskKind::Post, Some(g), solved.iter().rev().map(|s| s.unwrap()).collect());
        group_tasks.push((first..tasks.len()).collect());
    }
    let mut succs = vec![Vec::new(); tasks.len()];
    for (t, task) in tasks.iter().enumerate() {
        for &d in &task.deps {
            succs[d].push(t);
        }
    }
    Ok(TaskGraph { tasks, succs, group_tasks })
}

impl TaskGraph {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn successors(&self, t: usize) -> &[usize] {
        &self.succs[t]
    }

    pub fn count(&self, pred: impl Fn(&TaskKind) -> bool) -> usize {
        self.tasks.iter().filter(|t| pred(&t.kind)).count()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Ready {
    priority: i32,
    index: Reverse<usize>,
}

impl Ord for Ready {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.priority, self.index).cmp(&(other.priority, other.index))
    }
}

impl PartialOrd for Ready {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Ready tasks ordered by priority, then insertion index.
struct ReadyQueue {
    heap: BinaryHeap<Ready>,
    pending: Vec<usize>,
}

impl ReadyQueue {
    fn new(graph: &TaskGraph) -> Self {
        let mut q = Self { heap: BinaryHeap::new(), pending: graph.tasks.iter().map(|t| t.deps.len()).collect() };
        for (i, t) in graph.tasks.iter().enumerate() {
            if t.deps.is_empty() {
                q.heap.push(Ready { priority: t.priority, index: Reverse(i) });
            }
        }
        q
    }

    fn pop(&mut self) -> Option<usize> {
        self.heap.pop().map(|r| r.index.0)
    }

    fn complete(&mut self, graph: &TaskGraph, t: usize) {
        for &s in graph.successors(t) {
            self.pending[s] -= 1;
            if self.pending[s] == 0 {
                self.heap.push(Ready { priority: graph.tasks[s].priority, index: Reverse(s) });
            }
        }
    }
}

/// Wall-clock record of one executed task.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskTiming {
    pub task: usize,
    #[serde(flatten)]
    pub kind: TaskKind,
    pub group: Option<usize>,
    pub worker: usize,
    pub start_us: f64,
    pub end_us: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub workers: usize,
    pub wall_ms: f64,
    pub tasks: Vec<TaskTiming>,
}

struct GroupState {
    segs: Vec<RwLock<AugmentedMatrix>>,
    flags: Mutex<Vec<KernelFlags>>,
    /// First failing task (by insertion index) and its error.
    failure: Mutex<Option<(usize, Error)>>,
    output: Mutex<Option<GroupOutput>>,
}

impl GroupState {
    fn failed_before(&self, t: usize) -> bool {
        matches!(&*self.failure.lock().unwrap(), Some((i, _)) if *i < t)
    }

    fn fail(&self, t: usize, e: Error) {
        let mut f = self.failure.lock().unwrap();
        if f.as_ref().is_none_or(|(i, _)| t < *i) {
            *f = Some((t, e));
        }
    }
}

struct Shared<'p> {
    pencil: &'p RealSchurPencil,
    part: &'p TilePartition,
    graph: &'p TaskGraph,
    prep: OnceLock<Prepared<'p>>,
    specs: OnceLock<Vec<Vec<SpectralBlock>>>,
    pre_error: Mutex<Option<Error>>,
    groups: Vec<GroupState>,
}

impl<'p> Shared<'p> {
    fn run(&self, t: usize) {
        let task = &self.graph.tasks[t];
        let Some(g) = task.group else {
            match prepare(self.pencil, self.part) {
                Ok(prep) => {
                    let specs = (0..self.part.groups().len()).map(|g| prep.group_specs(self.part, g)).collect();
                    let _ = self.specs.set(specs);
                    let _ = self.prep.set(prep);
                }
                Err(e) => *self.pre_error.lock().unwrap() = Some(e),
            }
            return;
        };
        let (Some(prep), Some(specs)) = (self.prep.get(), self.specs.get()) else {
            return;
        };
        let st = &self.groups[g];
        if st.failed_before(t) {
            return;
        }
        let specs = &specs[g];
        let part = self.part;
        let res = match task.kind {
            TaskKind::Solve { row } if row == part.groups()[g].tile_row => prep.tip(part, g, specs).map(|(seg, f)| {
                *st.segs[row].write().unwrap() = seg;
                f
            }),
            TaskKind::Solve { row } => prep.solve(part, specs, row, &mut st.segs[row].write().unwrap()),
            TaskKind::Update { target, source } => {
                let x = st.segs[source].read().unwrap();
                prep.update(part, specs, target, source, &x, &mut st.segs[target].write().unwrap())
            }
            TaskKind::Post => {
                let segs: Vec<AugmentedMatrix> = st.segs.iter().map(|s| std::mem::replace(&mut *s.write().unwrap(), AugmentedMatrix::zeros(0, &[]))).collect();
                let out = post_process(part, g, &segs, &st.flags.lock().unwrap());
                *st.output.lock().unwrap() = Some(out);
                Ok(Vec::new())
            }
            TaskKind::PreNorms => unreachable!(),
        };
        match res {
            Ok(f) if !f.is_empty() => merge(&mut st.flags.lock().unwrap(), f),
            Ok(_) => {}
            Err(e) => st.fail(t, e),
        }
    }
}

/// Runs `graph` on `workers` threads. The result is bitwise identical to
/// [`crate::blocked::solve_sequential`] for every worker count.
pub fn execute(pencil: &RealSchurPencil, part: &TilePartition, graph: &TaskGraph, workers: usize) -> Result<(EigenvectorResult, ExecutionTrace)> {
    if workers == 0 {
        return Err(Error::InvalidConfig("workers must be at least 1".into()));
    }
    let groups = part
        .groups()
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let widths = part.group_widths(g);
            GroupState {
                segs: (0..=group.tile_row).map(|k| RwLock::new(AugmentedMatrix::zeros(part.tile_size(k), &widths))).collect(),
                flags: Mutex::new(vec![KernelFlags::default(); widths.len()]),
                failure: Mutex::new(None),
                output: Mutex::new(None),
            }
        })
        .collect();
    let shared = Shared { pencil, part, graph, prep: OnceLock::new(), specs: OnceLock::new(), pre_error: Mutex::new(None), groups };

    let queue = Mutex::new((ReadyQueue::new(graph), graph.len()));
    let wake = Condvar::new();
    let timings = Mutex::new(Vec::with_capacity(graph.len()));
    let t0 = Instant::now();
    std::thread::scope(|scope| {
        for w in 0..workers {
            let (shared, queue, wake, timings) = (&shared, &queue, &wake, &timings);
            scope.spawn(move || loop {
                let t = {
                    let mut q = queue.lock().unwrap();
                    loop {
                        if q.1 == 0 {
                            return;
                        }
                        if let Some(t) = q.0.pop() {
                            break t;
                        }
                        q = wake.wait(q).unwrap();
                    }
                };
                let start = t0.elapsed().as_secs_f64() * 1e6;
                shared.run(t);
                let end = t0.elapsed().as_secs_f64() * 1e6;
                let task = &graph.tasks[t];
                timings.lock().unwrap().push(TaskTiming { task: t, kind: task.kind, group: task.group, worker: w, start_us: start, end_us: end });
                let mut q = queue.lock().unwrap();
                q.0.complete(graph, t);
                q.1 -= 1;
                wake.notify_all();
            });
        }
    });
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;

    if let Some(e) = shared.pre_error.into_inner().unwrap() {
        return Err(e);
    }
    let prep = shared.prep.into_inner().expect("pre-processing ran");
    let outputs = shared
        .groups
        .into_iter()
        .enumerate()
        .map(|(g, st)| {
            let out = match st.failure.into_inner().unwrap() {
                Some((_, e)) => Err(e),
                None => Ok(st.output.into_inner().unwrap().expect("post-processing ran")),
            };
            (g, out)
        })
        .collect();
    let mut tasks = timings.into_inner().unwrap();
    tasks.sort_by(|a, b| a.start_us.total_cmp(&b.start_us));
    Ok((assemble(&prep, part, outputs), ExecutionTrace { workers, wall_ms, tasks }))
}

/// Builds the graph and executes it.
pub fn solve_parallel(pencil: &RealSchurPencil, part: &TilePartition, workers: usize) -> Result<(EigenvectorResult, ExecutionTrace)> {
    let graph = build_graph(part)?;
    execute(pencil, part, &graph, workers)
}

/// Event-driven replay of list scheduling on `workers` identical workers
/// (`None` for unbounded). Returns the makespan and the start order.
pub fn simulate(graph: &TaskGraph, workers: Option<usize>, cost: impl Fn(usize, &Task) -> f64) -> (f64, Vec<usize>) {
    let mut q = ReadyQueue::new(graph);
    let cap = workers.unwrap_or(usize::MAX);
    // (finish time, task) of running tasks
    let mut running: Vec<(f64, usize)> = Vec::new();
    let mut now = 0.0f64;
    let mut order = Vec::with_capacity(graph.len());
    loop {
        while running.len() < cap {
            let Some(t) = q.pop() else { break };
            order.push(t);
            running.push((now + cost(t, &graph.tasks[t]), t));
        }
        let Some(next) = running.iter().enumerate().min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.1 .1.cmp(&b.1 .1))).map(|(i, _)| i) else {
            break;
        };
        let (finish, t) = running.swap_remove(next);
        now = finish;
        q.complete(graph, t);
    }
    (now, order)
}
