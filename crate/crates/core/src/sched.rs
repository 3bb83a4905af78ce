//! Discrete-event simulation of the runtime scheduler.
//!
//! Several inference tasks share the composed accelerators. Each kernel runs
//! on the accelerator the runtime config names. Whenever an accelerator is
//! idle it takes the first ready kernel mapped to it, scanning tasks in
//! arrival order and kernels by id (first in, first out). Non-MM kernels are
//! charged per task after the MM timeline, sequentially.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::compose::CompositionResult;
use crate::perfmodel;
use crate::platform::PlatformSpec;
use crate::workload::ModelSpec;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Ready,
    Running,
    Done,
}

/// Kernel status for every `(task, kernel)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPool {
    num_tasks: usize,
    num_kernels: usize,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    status: Vec<Status>,
    /// Unfinished predecessors per entry.
    waiting: Vec<usize>,
}

impl TaskPool {
    /// `num_tasks` copies of a graph over `num_kernels` kernels.
    pub fn new(num_kernels: usize, edges: &[(usize, usize)], num_tasks: usize) -> Result<Self> {
        if num_tasks < 1 {
            return Err(Error::invalid("num_tasks", "need at least one task"));
        }
        let deps = crate::workload::DependencyGraph::new(edges.iter().copied());
        crate::workload::validate_graph(&deps, num_kernels)?;
        let preds = deps.predecessors(num_kernels);
        let succs = deps.successors(num_kernels);
        let mut waiting = Vec::with_capacity(num_tasks * num_kernels);
        let mut status = Vec::with_capacity(num_tasks * num_kernels);
        for _ in 0..num_tasks {
            for p in &preds {
                waiting.push(p.len());
                status.push(if p.is_empty() { Status::Ready } else { Status::Pending });
            }
        }
        Ok(TaskPool {
            num_tasks,
            num_kernels,
            preds,
            succs,
            status,
            waiting,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_kernels(&self) -> usize {
        self.num_kernels
    }

    pub fn status(&self, task: usize, kernel: usize) -> Status {
        self.status[task * self.num_kernels + kernel]
    }

    pub fn predecessors(&self, kernel: usize) -> &[usize] {
        &self.preds[kernel]
    }

    pub fn is_drained(&self) -> bool {
        self.status.iter().all(|&s| s == Status::Done)
    }

    fn start(&mut self, task: usize, kernel: usize) {
        let i = task * self.num_kernels + kernel;
        debug_assert_eq!(self.status[i], Status::Ready);
        self.status[i] = Status::Running;
    }

    fn finish(&mut self, task: usize, kernel: usize) {
        let base = task * self.num_kernels;
        debug_assert_eq!(self.status[base + kernel], Status::Running);
        self.status[base + kernel] = Status::Done;
        for &s in &self.succs[kernel] {
            self.waiting[base + s] -= 1;
            if self.waiting[base + s] == 0 {
                self.status[base + s] = Status::Ready;
            }
        }
    }
}

/// Independent copies of `model`'s MM kernel graph.
pub fn build_task_pool(model: &ModelSpec, num_tasks: usize) -> Result<TaskPool> {
    let edges: Vec<(usize, usize)> = model.deps.edges.iter().copied().collect();
    TaskPool::new(model.num_kernels(), &edges, num_tasks)
}

/// Seconds per `(kernel, accelerator)`; `None` where unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTimes<T> {
    times: Vec<Vec<Option<T>>>,
}

impl<T: Real> KernelTimes<T> {
    pub fn new(num_kernels: usize, num_accs: usize) -> Self {
        KernelTimes {
            times: vec![vec![None; num_accs]; num_kernels],
        }
    }

    pub fn set(&mut self, kernel: usize, acc: usize, seconds: T) {
        self.times[kernel][acc] = Some(seconds);
    }

    pub fn get(&self, kernel: usize, acc: usize) -> Option<T> {
        self.times.get(kernel)?.get(acc).copied().flatten()
    }

    /// Cost-model time of every kernel on every composed accelerator, each with
    /// its own bandwidth share.
    pub fn from_composition(comp: &CompositionResult, model: &ModelSpec, plat: &PlatformSpec) -> Self {
        let mut kt = KernelTimes::new(model.num_kernels(), comp.num_accs());
        for layer in &model.layers {
            for (acc, (design, budget)) in comp.accs.iter().zip(&comp.budgets).enumerate() {
                let est = perfmodel::layer_time_with_bw::<T>(layer, &design.cfg, plat, &budget.bw);
                kt.set(layer.id, acc, est.total_time);
            }
        }
        kt
    }
}

/// One kernel execution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent<T> {
    pub acc: usize,
    pub task: usize,
    pub kernel: usize,
    pub start_s: T,
    pub end_s: T,
}

/// A complete simulated schedule of the MM kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline<T> {
    /// Ordered by start time, then accelerator.
    pub events: Vec<ScheduleEvent<T>>,
    /// Latest MM end per task.
    pub task_latency: Vec<T>,
    pub makespan: T,
    pub per_acc_busy: Vec<T>,
}

impl<T: Real> Timeline<T> {
    pub fn empty(num_tasks: usize, num_accs: usize) -> Self {
        Timeline {
            events: Vec::new(),
            task_latency: vec![T::zero(); num_tasks],
            makespan: T::zero(),
            per_acc_busy: vec![T::zero(); num_accs],
        }
    }
}

/// Simulates `pool` on the composition's accelerators.
pub fn simulate<T: Real>(comp: &CompositionResult, pool: TaskPool, times: &KernelTimes<T>) -> Result<Timeline<T>> {
    simulate_assignment(&comp.assignment, comp.num_accs(), pool, times)
}

/// Simulates `pool` with kernel `k` fixed to accelerator `assignment[k]`.
pub fn simulate_assignment<T: Real>(
    assignment: &[usize],
    num_accs: usize,
    mut pool: TaskPool,
    times: &KernelTimes<T>,
) -> Result<Timeline<T>> {
    let nk = pool.num_kernels();
    if assignment.len() != nk {
        return Err(Error::invalid(
            "assignment",
            format!("{} entries for {nk} kernels", assignment.len()),
        ));
    }
    let mut duration = Vec::with_capacity(nk);
    for (kernel, &acc) in assignment.iter().enumerate() {
        if acc >= num_accs {
            return Err(Error::invalid("assignment", format!("kernel {kernel} on missing acc {acc}")));
        }
        let t = times.get(kernel, acc).ok_or(Error::MissingKernelTime { kernel, acc })?;
        if !(t > T::zero() && t.is_finite()) {
            return Err(Error::ZeroTime);
        }
        duration.push(t);
    }

    let mut tl = Timeline::empty(pool.num_tasks(), num_accs);
    // (task, kernel, end) per busy accelerator.
    let mut running: Vec<Option<(usize, usize, T)>> = vec![None; num_accs];
    let mut now = T::zero();
    loop {
        for acc in 0..num_accs {
            if running[acc].is_some() {
                continue;
            }
            let pick = (0..pool.num_tasks())
                .flat_map(|t| (0..nk).map(move |k| (t, k)))
                .find(|&(t, k)| assignment[k] == acc && pool.status(t, k) == Status::Ready);
            if let Some((task, kernel)) = pick {
                pool.start(task, kernel);
                let end = now + duration[kernel];
                running[acc] = Some((task, kernel, end));
                tl.events.push(ScheduleEvent {
                    acc,
                    task,
                    kernel,
                    start_s: now,
                    end_s: end,
                });
                tl.per_acc_busy[acc] = tl.per_acc_busy[acc] + duration[kernel];
            }
        }
        let Some(next) = running.iter().flatten().map(|r| r.2).reduce(T::min) else {
            break;
        };
        now = next;
        for slot in running.iter_mut() {
            if let Some((task, kernel, end)) = *slot {
                if end == next {
                    pool.finish(task, kernel);
                    tl.task_latency[task] = tl.task_latency[task].max(end);
                    tl.makespan = tl.makespan.max(end);
                    *slot = None;
                }
            }
        }
    }
    // Acyclic graphs with every kernel routed cannot stall.
    assert!(pool.is_drained(), "scheduler stalled with unfinished kernels");
    Ok(tl)
}

/// Latency and throughput of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub num_tasks: usize,
    /// MM completion plus the task's sequential non-MM time.
    pub task_latency: Vec<T>,
    pub makespan: T,
    /// MM operations of all tasks over the makespan.
    pub throughput_gflops: T,
    /// Busy fraction of the makespan per accelerator.
    pub utilization: Vec<T>,
}

pub fn metrics<T: Real>(tl: &Timeline<T>, model: &ModelSpec, num_tasks: usize) -> Summary<T> {
    let positive = tl.makespan > T::zero();
    let fixed = T::of(model.fixed_time());
    let ops = T::from_u128(model.total_ops() * num_tasks as u128).expect("op count converts");
    Summary {
        num_tasks,
        task_latency: if tl.events.is_empty() {
            vec![T::zero(); tl.task_latency.len()]
        } else {
            tl.task_latency.iter().map(|&l| l + fixed).collect()
        },
        makespan: tl.makespan,
        throughput_gflops: if positive {
            ops / tl.makespan / T::of(1e9)
        } else {
            T::zero()
        },
        utilization: tl
            .per_acc_busy
            .iter()
            .map(|&b| if positive { b / tl.makespan } else { T::zero() })
            .collect(),
    }
}

/// Writes `acc,task,kernel,start_s,end_s` rows with a header.
pub fn write_timeline_csv(events: &[ScheduleEvent<f64>], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(e).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_timeline_csv(input: impl Read) -> Result<Vec<ScheduleEvent<f64>>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(rows: &[&[f64]]) -> KernelTimes<f64> {
        let mut kt = KernelTimes::new(rows.len(), rows[0].len());
        for (k, row) in rows.iter().enumerate() {
            for (a, &t) in row.iter().enumerate() {
                kt.set(k, a, t);
            }
        }
        kt
    }

    #[test]
    fn forced_serialization() {
        let pool = TaskPool::new(2, &[(0, 1)], 1).unwrap();
        let tl = simulate_assignment(&[0, 1], 2, pool, &times(&[&[0.010, 0.010], &[0.005, 0.005]])).unwrap();
        assert!((tl.makespan - 0.015).abs() < 1e-15);
        assert_eq!(tl.events[1].start_s, 0.010);
    }

    #[test]
    fn fifo_serializes_in_task_order() {
        // One kernel per task on acc0; three tasks.
        let pool = TaskPool::new(1, &[], 3).unwrap();
        let tl = simulate_assignment(&[0], 2, pool, &times(&[&[1.0, 1.0]])).unwrap();
        let order: Vec<usize> = tl.events.iter().map(|e| e.task).collect();
        assert_eq!(order, vec![0, 1, 2]);
        assert_eq!(tl.makespan, 3.0);
        assert_eq!(tl.task_latency, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn pool_statuses() {
        let pool = TaskPool::new(3, &[], 1).unwrap();
        assert!((0..3).all(|k| pool.status(0, k) == Status::Ready));
        let pool = TaskPool::new(2, &[(0, 1)], 2).unwrap();
        assert_eq!(pool.status(1, 1), Status::Pending);
        assert_eq!(pool.status(1, 0), Status::Ready);
        let bert = crate::workload::builtin_model("bert").unwrap();
        let pool = build_task_pool(&bert, 4).unwrap();
        assert_eq!(pool.num_tasks() * pool.num_kernels(), 32);
    }

    #[test]
    fn missing_or_zero_times_are_errors() {
        let mut kt = KernelTimes::new(1, 2);
        kt.set(0, 1, 1.0);
        let pool = TaskPool::new(1, &[], 1).unwrap();
        assert!(matches!(
            simulate_assignment(&[0], 2, pool.clone(), &kt),
            Err(Error::MissingKernelTime { kernel: 0, acc: 0 })
        ));
        kt.set(0, 0, 0.0);
        assert!(matches!(simulate_assignment(&[0], 2, pool, &kt), Err(Error::ZeroTime)));
    }

    #[test]
    fn empty_timeline_metrics() {
        let model = crate::workload::builtin_model("mlp").unwrap();
        let s = metrics(&Timeline::<f64>::empty(2, 2), &model, 2);
        assert_eq!(s.makespan, 0.0);
        assert_eq!(s.throughput_gflops, 0.0);
        assert!(s.utilization.iter().chain(&s.task_latency).all(|&v| v == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let events = vec![
            ScheduleEvent { acc: 0, task: 0, kernel: 1, start_s: 0.0, end_s: 0.125 },
            ScheduleEvent { acc: 1, task: 2, kernel: 0, start_s: 0.1, end_s: 1.0 / 3.0 },
        ];
        let mut buf = Vec::new();
        write_timeline_csv(&events, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("acc,task,kernel,start_s,end_s\n"));
        assert_eq!(read_timeline_csv(buf.as_slice()).unwrap(), events);
    }
}
