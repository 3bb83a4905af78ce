//! Independent oracles, written from the equations rather than from the
//! library's code paths.
#![allow(dead_code)]

use hetacc_core::sched::ScheduleEvent;
use hetacc_core::{AccConfig, BandwidthProfile, LayerShape, PlatformSpec};

fn ceil(a: u64, b: u64) -> u64 {
    (a + b - 1) / b
}

pub fn ports(cfg: &AccConfig) -> (u64, u64) {
    let (a, b, c, ctc) = (cfg.a as u64, cfg.b as u64, cfg.c as u64, cfg.kernel.ctc as u64);
    (ceil(a * b, ctc) + ceil(c * b, ctc), ceil(a * c, ctc))
}

/// (L, R, O, total) in bytes.
pub fn buffers(cfg: &AccConfig) -> (u64, u64, u64, u64) {
    let k = cfg.kernel;
    let rows = cfg.x as u64 * cfg.a as u64 * k.ti as u64;
    let depth = cfg.y as u64 * cfg.b as u64 * k.tk as u64;
    let cols = cfg.z as u64 * cfg.c as u64 * k.tj as u64;
    let bpd = k.bpd as u64;
    let (l, r, o) = (rows * depth * bpd, depth * cols * bpd, rows * cols * bpd);
    (l, r, o, 2 * (l + r + o))
}

pub fn compute_seconds(cfg: &AccConfig, plat: &PlatformSpec) -> f64 {
    let k = cfg.kernel;
    let work = cfg.x as u64 * cfg.y as u64 * cfg.z as u64 * k.ti as u64 * k.tk as u64 * k.tj as u64;
    work as f64 / plat.mac_per_cycle as f64 / plat.eff / plat.aie_freq_hz
}

pub fn fits(cfg: &AccConfig, aie: u64, pin: u64, pout: u64, ram: u64) -> bool {
    let (i, o) = ports(cfg);
    cfg.a as u64 * cfg.b as u64 * cfg.c as u64 <= aie && i <= pin && o <= pout && buffers(cfg).3 <= ram
}

pub fn layer_seconds(l: &LayerShape, cfg: &AccConfig, plat: &PlatformSpec, bw: &BandwidthProfile) -> f64 {
    let k = cfg.kernel;
    let tx = ceil(l.m, cfg.a as u64 * k.ti as u64 * cfg.x as u64);
    let ty = ceil(l.k, cfg.b as u64 * k.tk as u64 * cfg.y as u64);
    let tz = ceil(l.n, cfg.c as u64 * k.tj as u64 * cfg.z as u64);
    let (bl, br, bo, _) = buffers(cfg);
    let (tl, tr, to) = (bl as f64 / bw.bw_l, br as f64 / bw.bw_r, bo as f64 / bw.bw_o);
    let tc = compute_seconds(cfg, plat);
    let per = tl.max(tr).max(tc);
    (l.batch * l.count) as f64 * (per * (tx * ty * tz) as f64 + to * (tx * tz) as f64 + tl.max(tr))
}

pub fn ops(layers: &[LayerShape]) -> f64 {
    layers
        .iter()
        .map(|l| 2.0 * (l.m * l.k * l.n * l.batch * l.count) as f64)
        .sum()
}

/// Every feasible configuration by nested loops over generous bounds.
pub fn brute_configs(aie: u64, pin: u64, pout: u64, ram: u64) -> Vec<AccConfig> {
    let unit = AccConfig::new(1, 1, 1, 1, 1, 1);
    // buff_l alone is at least x * ti * tk * bpd bytes, likewise for y and z.
    let k = unit.kernel;
    let reuse_max = ram / (k.ti as u64 * k.tk as u64 * k.bpd as u64);
    let mut out = Vec::new();
    for a in 1..=aie {
        for b in 1..=aie {
            for c in 1..=aie {
                if a * b * c > aie {
                    continue;
                }
                // Buffers grow with every reuse factor, so the first RAM
                // failure ends each loop.
                let ram_ok = |x: u64, y: u64, z: u64| {
                    buffers(&AccConfig::new(a as u32, b as u32, c as u32, x as u32, y as u32, z as u32)).3 <= ram
                };
                for x in (1..=reuse_max).take_while(|&x| ram_ok(x, 1, 1)) {
                    for y in (1..=reuse_max).take_while(|&y| ram_ok(x, y, 1)) {
                        for z in (1..=reuse_max).take_while(|&z| ram_ok(x, y, z)) {
                            let cfg = AccConfig::new(a as u32, b as u32, c as u32, x as u32, y as u32, z as u32);
                            if fits(&cfg, aie, pin, pout, ram) {
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Minimum summed time over `configs`.
pub fn brute_best(configs: &[AccConfig], layers: &[LayerShape], plat: &PlatformSpec, bw: &BandwidthProfile) -> f64 {
    configs
        .iter()
        .map(|c| layers.iter().map(|l| layer_seconds(l, c, plat, bw)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Binomial coefficient.
pub fn choose(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// All ways to cut `0..n` into `num` contiguous non-empty runs, recursively.
pub fn brute_partitions(n: usize, num: usize) -> Vec<Vec<std::ops::Range<usize>>> {
    fn go(start: usize, n: usize, left: usize, acc: &mut Vec<std::ops::Range<usize>>, out: &mut Vec<Vec<std::ops::Range<usize>>>) {
        if left == 1 {
            acc.push(start..n);
            out.push(acc.clone());
            acc.pop();
            return;
        }
        for end in start + 1..=n - (left - 1) {
            acc.push(start..end);
            go(end, n, left - 1, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    if num >= 1 && num <= n {
        go(0, n, num, &mut Vec::new(), &mut out);
    }
    out
}

/// Violations of the schedule invariants; empty when the timeline is valid.
///
/// `edges` is the per-task dependency graph.
pub fn schedule_violations(
    events: &[ScheduleEvent<f64>],
    assignment: &[usize],
    edges: &[(usize, usize)],
    num_tasks: usize,
    num_accs: usize,
) -> Vec<String> {
    let nk = assignment.len();
    let mut bad = Vec::new();
    let mut at = vec![None; num_tasks * nk];
    for e in events {
        if at[e.task * nk + e.kernel].replace(*e).is_some() {
            bad.push(format!("task {} kernel {} ran twice", e.task, e.kernel));
        }
        if e.acc != assignment[e.kernel] {
            bad.push(format!("kernel {} ran on acc {}", e.kernel, e.acc));
        }
        if !(e.end_s > e.start_s && e.start_s >= 0.0) {
            bad.push(format!("bad interval {e:?}"));
        }
    }
    if at.iter().any(Option::is_none) {
        bad.push("some kernel never ran".into());
        return bad;
    }
    let at: Vec<ScheduleEvent<f64>> = at.into_iter().map(Option::unwrap).collect();
    // Overlap per accelerator.
    for acc in 0..num_accs {
        let mut mine: Vec<_> = events.iter().filter(|e| e.acc == acc).collect();
        mine.sort_by(|p, q| p.start_s.total_cmp(&q.start_s));
        for w in mine.windows(2) {
            if w[1].start_s < w[0].end_s {
                bad.push(format!("overlap on acc {acc}: {:?} {:?}", w[0], w[1]));
            }
        }
    }
    // Dependencies and work conservation.
    for t in 0..num_tasks {
        for k in 0..nk {
            let e = at[t * nk + k];
            let ready = edges
                .iter()
                .filter(|&&(_, s)| s == k)
                .map(|&(p, _)| at[t * nk + p].end_s)
                .fold(0.0, f64::max);
            if e.start_s < ready {
                bad.push(format!("task {t} kernel {k} started before its inputs"));
            }
            // The accelerator must be busy throughout [ready, start).
            let mut covered = ready;
            let mut mine: Vec<_> = events.iter().filter(|o| o.acc == e.acc).collect();
            mine.sort_by(|p, q| p.start_s.total_cmp(&q.start_s));
            for o in mine {
                if covered >= e.start_s {
                    break;
                }
                if o.start_s <= covered && o.end_s > covered {
                    covered = o.end_s;
                }
            }
            if covered < e.start_s {
                bad.push(format!("acc {} idle at {covered} while task {t} kernel {k} was ready", e.acc));
            }
        }
    }
    bad
}

/// Longest path through one task's graph.
pub fn critical_path(durations: &[f64], edges: &[(usize, usize)]) -> f64 {
    let n = durations.len();
    let mut finish = vec![f64::NAN; n];
    fn visit(k: usize, d: &[f64], edges: &[(usize, usize)], finish: &mut [f64]) -> f64 {
        if !finish[k].is_nan() {
            return finish[k];
        }
        let start = edges
            .iter()
            .filter(|&&(_, s)| s == k)
            .map(|&(p, _)| visit(p, d, edges, finish))
            .fold(0.0, f64::max);
        finish[k] = start + d[k];
        finish[k]
    }
    (0..n).map(|k| visit(k, durations, edges, &mut finish)).fold(0.0, f64::max)
}

/// Optimal makespan with fixed assignment: minimum over every per-accelerator
/// execution order of the earliest-start schedule.
pub fn optimal_makespan(
    assignment: &[usize],
    durations: &[f64],
    edges: &[(usize, usize)],
    num_tasks: usize,
    num_accs: usize,
) -> f64 {
    let nk = assignment.len();
    let jobs: Vec<(usize, usize)> = (0..num_tasks).flat_map(|t| (0..nk).map(move |k| (t, k))).collect();
    let per_acc: Vec<Vec<usize>> = (0..num_accs)
        .map(|a| (0..jobs.len()).filter(|&j| assignment[jobs[j].1] == a).collect())
        .collect();
    let mut best = f64::INFINITY;
    let mut orders: Vec<Vec<usize>> = per_acc.clone();
    fn permute(
        acc: usize,
        orders: &mut Vec<Vec<usize>>,
        per_acc: &[Vec<usize>],
        eval: &dyn Fn(&[Vec<usize>]) -> Option<f64>,
        best: &mut f64,
    ) {
        if acc == per_acc.len() {
            if let Some(m) = eval(orders) {
                *best = best.min(m);
            }
            return;
        }
        let items = per_acc[acc].clone();
        let mut perm = items.clone();
        heap_permutations(&mut perm, &mut |p| {
            orders[acc] = p.to_vec();
            permute(acc + 1, orders, per_acc, eval, best);
        });
    }
    let eval = |orders: &[Vec<usize>]| -> Option<f64> {
        // Fixed-point longest path; None if the orders contradict the edges.
        let n = jobs.len();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, &(t, k)) in jobs.iter().enumerate() {
            for &(p, s) in edges {
                if s == k {
                    preds[j].push(t * nk + p);
                }
            }
        }
        for o in orders {
            for w in o.windows(2) {
                preds[w[1]].push(w[0]);
            }
        }
        let mut finish = vec![0.0; n];
        let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, ps) in preds.iter().enumerate() {
            for &p in ps {
                succ[p].push(j);
            }
        }
        let mut stack: Vec<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
        let mut start = vec![0.0f64; n];
        let mut seen = 0;
        while let Some(j) = stack.pop() {
            seen += 1;
            finish[j] = start[j] + durations[jobs[j].1];
            for &s in &succ[j] {
                start[s] = start[s].max(finish[j]);
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    stack.push(s);
                }
            }
        }
        (seen == n).then(|| finish.iter().copied().fold(0.0, f64::max))
    };
    permute(0, &mut orders, &per_acc, &eval, &mut best);
    best
}

fn heap_permutations(items: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    fn go(k: usize, items: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k <= 1 {
            f(items);
            return;
        }
        go(k - 1, items, f);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
            go(k - 1, items, f);
        }
    }
    let n = items.len();
    go(n, items, f);
}
