use anyhow::{bail, Context};
use hetacc_core::compose::{self, explore, spread};
use hetacc_core::platform::scale_platform;
use hetacc_core::sched::{build_task_pool, metrics, simulate as run_schedule, write_timeline_csv};
use hetacc_core::{
    dse, AccConfig, ComposerParams, CompositionResult, KernelTimes, LayerShape, ModelSpec, PlatformSpec,
    RankedDesign, ResourceBudget, RuntimeConfig, Scale,
};
use num_rational::Ratio;

use hetacc_cli::output::{
    read_json, resolve_model, resolve_platform, sha256_hex, ComposeRow, DesignDescriptor, DseRow, OutDir, Results,
    RunReport, SweepRow, TaskRow,
};
use crate::{ComposeArgs, DseArgs, SimulateArgs, SweepArgs};

struct Inputs {
    platform: PlatformSpec,
    model: Option<ModelSpec>,
}

impl Inputs {
    fn report(&self, command: String, candidates: u64, results: Results) -> RunReport {
        RunReport {
            command,
            platform: self.platform.name.clone(),
            platform_sha256: sha256_hex(self.platform.to_json_string().as_bytes()),
            model: self.model.as_ref().map(|m| m.name.clone()),
            model_sha256: self.model.as_ref().map(|m| sha256_hex(m.to_json_string().as_bytes())),
            candidates,
            results,
            files: Vec::new(),
        }
    }
}

fn ratio_str(r: &Ratio<u64>) -> String {
    r.to_string()
}

fn dse_row(problem: &str, rank: usize, d: &RankedDesign, reference_gflops: f64, candidates: u64) -> DseRow {
    let [a, b, c, x, y, z] = d.cfg.factors();
    DseRow {
        problem: problem.to_string(),
        rank: rank as u64 + 1,
        a,
        b,
        c,
        x,
        y,
        z,
        tiles: d.cfg.tiles(),
        ports_in: d.ports.ports_in,
        ports_out: d.ports.ports_out,
        buffer_bytes: d.buffers.total,
        time_s: d.total_time,
        gflops: d.gflops,
        reference_gflops,
        candidates,
    }
}

/// Throughput of the reference design, or zero when it does not fit.
fn reference_gflops(layers: &[LayerShape], plat: &PlatformSpec) -> f64 {
    let cfg = AccConfig::reference_monolithic();
    if !ResourceBudget::from_platform(plat).admits(&cfg) {
        return 0.0;
    }
    RankedDesign::evaluate(&cfg, layers, plat, &plat.bw).gflops
}

pub fn dse(args: &DseArgs) -> anyhow::Result<()> {
    let platform = resolve_platform(&args.common.platform)?;
    let model = args.model.as_deref().map(resolve_model).transpose()?;
    let problems: Vec<(String, Vec<LayerShape>)> = match (&model, &args.square) {
        (Some(m), _) => vec![(m.name.clone(), m.layers.clone())],
        (None, Some(sizes)) => sizes.0.iter().map(|&n| (format!("square{n}"), vec![LayerShape::new(0, n, n, n)])).collect(),
        (None, None) => bail!("either --model or --square is required"),
    };
    let budget = ResourceBudget::from_platform(&platform);
    let mut out = OutDir::create(&args.common.out)?;
    let mut rows = Vec::new();
    let mut candidates = 0;
    println!("{:>12} {:>4} {:>22} {:>6} {:>12} {:>10}", "problem", "rank", "a,b,c,x,y,z", "tiles", "time_s", "gflops");
    for (name, layers) in &problems {
        let r = dse::search(layers, &budget, &platform, args.top as usize)
            .with_context(|| format!("searching {name}"))?;
        candidates += r.candidates;
        let reference = reference_gflops(layers, &platform);
        let kernels: Vec<usize> = layers.iter().map(|l| l.id).collect();
        for (rank, d) in r.designs.iter().enumerate() {
            let row = dse_row(name, rank, d, reference, r.candidates);
            println!(
                "{:>12} {:>4} {:>22} {:>6} {:>12.6e} {:>10.2}",
                name,
                row.rank,
                format!("{:?}", d.cfg.factors()).trim_matches(['[', ']']).replace(' ', ""),
                row.tiles,
                row.time_s,
                row.gflops
            );
            rows.push(row);
            let desc = DesignDescriptor::new(format!("{name}_top{}", rank + 1), d, kernels.clone(), Some(budget));
            out.write_json(&format!("designs/{}.json", desc.name), &desc)?;
        }
    }
    out.write_csv("report.csv", &rows)?;
    let command = match &args.square {
        Some(s) if model.is_none() => format!("dse --square {:?} --top {}", s.0, args.top),
        _ => format!("dse --model {} --top {}", problems[0].0, args.top),
    };
    let inputs = Inputs { platform, model };
    out.finish(inputs.report(command, candidates, Results::Dse { rows }))?;
    Ok(())
}

fn compose_rows(c: &CompositionResult) -> Vec<ComposeRow> {
    c.accs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let [a, b, cc, x, y, z] = d.cfg.factors();
            ComposeRow {
                acc: i,
                kernels: c.acc_kernels[i].iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "),
                aie_budget: c.budgets[i].aie_max,
                ram_budget: c.budgets[i].ram_max,
                a,
                b,
                c: cc,
                x,
                y,
                z,
                tiles: d.cfg.tiles(),
                time_s: c.acc_times[i],
            }
        })
        .collect()
}

pub fn compose(args: &ComposeArgs) -> anyhow::Result<()> {
    let platform = resolve_platform(&args.common.platform)?;
    let model = resolve_model(&args.model)?;
    let params = ComposerParams::new(args.num as usize).with_ubound(args.ubound);
    let c = compose::compose(&model, &platform, &params)?;
    let mut out = OutDir::create(&args.common.out)?;
    for (i, d) in c.accs.iter().enumerate() {
        let desc = DesignDescriptor::new(format!("acc{i}"), d, c.acc_kernels[i].clone(), Some(c.budgets[i]));
        out.write_json(&format!("designs/acc{i}.json"), &desc)?;
    }
    out.write_json("runtime_config.json", &c.runtime_config)?;
    out.write_json("composition.json", &c)?;
    out.write_json("platform.json", &platform)?;
    out.write("model.json", format!("{}\n", model.to_json_string()).as_bytes())?;
    let rows = compose_rows(&c);
    out.write_csv("report.csv", &rows)?;
    for r in &rows {
        println!(
            "acc{} kernels [{}] aie {} ram {} -> {}x{}x{} x {}x{}x{} time {:.6e}s",
            r.acc, r.kernels, r.aie_budget, r.ram_budget, r.a, r.b, r.c, r.x, r.y, r.z, r.time_s
        );
    }
    println!("makespan {:.6e}s, {:.2} GFLOPS, {} candidates", c.makespan_s, c.gflops, c.stats.candidates);
    let command = format!("compose --model {} --num {} --ubound {}", model.name, args.num, args.ubound);
    let results = Results::Compose {
        num_accs: c.num_accs(),
        makespan_s: c.makespan_s,
        gflops: c.gflops,
        acc_times: c.acc_times.clone(),
        partitions: c.stats.partitions,
        feasible_partitions: c.stats.feasible_partitions,
    };
    let candidates = c.stats.candidates;
    let inputs = Inputs {
        platform,
        model: Some(model),
    };
    out.finish(inputs.report(command, candidates, results))?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let dir = &args.from;
    let platform = hetacc_core::platform::load_platform(dir.join("platform.json"))?;
    let model = hetacc_core::workload::load_model(dir.join("model.json"))?;
    let comp: CompositionResult = read_json(&dir.join("composition.json"))?;
    let routing: RuntimeConfig = read_json(&dir.join("runtime_config.json"))?;
    if routing != comp.runtime_config || comp.model != model.name || comp.platform != platform.name {
        bail!("{} holds files from different runs", dir.display());
    }
    let tasks = args.tasks as usize;
    let times = KernelTimes::from_composition(&comp, &model, &platform);
    let timeline = run_schedule(&comp, build_task_pool(&model, tasks)?, &times)?;
    let summary = metrics(&timeline, &model, tasks);

    let mut out = OutDir::create(&args.out)?;
    let mut csv = Vec::new();
    write_timeline_csv(&timeline.events, &mut csv)?;
    out.write("timeline.csv", &csv)?;
    let rows: Vec<TaskRow> = summary
        .task_latency
        .iter()
        .enumerate()
        .map(|(task, &latency_s)| TaskRow { task, latency_s })
        .collect();
    out.write_csv("report.csv", &rows)?;
    for r in &rows {
        println!("task {} latency {:.3} ms", r.task, r.latency_s * 1e3);
    }
    println!(
        "makespan {:.3} ms, {:.2} GFLOPS, utilization {:?}",
        summary.makespan * 1e3,
        summary.throughput_gflops,
        summary.utilization.iter().map(|u| (u * 1e3).round() / 1e3).collect::<Vec<_>>()
    );
    let command = format!("simulate --tasks {tasks}");
    let inputs = Inputs {
        platform,
        model: Some(model),
    };
    out.finish(inputs.report(command, comp.stats.candidates, Results::Simulate { summary }))?;
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let platform = resolve_platform(&args.common.platform)?;
    let model = resolve_model(&args.model)?;
    let nums: Vec<usize> = args.num.iter().map(|&n| n as usize).collect();
    let mut rows = Vec::new();
    let mut spreads = Vec::new();
    let mut candidates = 0;
    for bw in &args.bw_scale {
        for aie in &args.aie_scale {
            for ram in &args.ram_scale {
                let plat = scale_platform(&platform, &Scale::new(*aie, *ram, *bw))?;
                let cells = explore(&model, &plat, &nums, args.ubound)?;
                let point_spread = spread(&cells);
                println!(
                    "bw x{} aie x{} ram x{}: spread {}",
                    bw,
                    aie,
                    ram,
                    point_spread.map_or("n/a".into(), |s| format!("{:.1}%", s * 100.0))
                );
                spreads.push(point_spread);
                for cell in cells {
                    println!(
                        "  num {} {:<9} {}",
                        cell.num,
                        cell.variant.to_string(),
                        cell.gflops.map_or("infeasible".into(), |g| format!("{g:.2} GFLOPS"))
                    );
                    candidates += cell.candidates;
                    rows.push(SweepRow {
                        bw_scale: ratio_str(bw),
                        aie_scale: ratio_str(aie),
                        ram_scale: ratio_str(ram),
                        num: cell.num,
                        variant: cell.variant,
                        gflops: cell.gflops,
                        tiles: cell.tiles,
                        candidates: cell.candidates,
                        roof_gflops: plat.compute_roof_gflops(),
                    });
                }
            }
        }
    }
    let mut out = OutDir::create(&args.common.out)?;
    out.write_csv("report.csv", &rows)?;
    let list = |v: &[Ratio<u64>]| v.iter().map(ratio_str).collect::<Vec<_>>().join(",");
    let command = format!(
        "sweep --model {} --bw-scale {} --aie-scale {} --ram-scale {} --num {} --ubound {}",
        model.name,
        list(&args.bw_scale),
        list(&args.aie_scale),
        list(&args.ram_scale),
        nums.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
        args.ubound
    );
    let inputs = Inputs {
        platform,
        model: Some(model),
    };
    out.finish(inputs.report(command, candidates, Results::Sweep { rows, spreads }))?;
    Ok(())
}
