use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mmwave_mdp::mdp::{transition_reward, write_kernel_csv};
use mmwave_mdp::multiuser::{build_kernel, converge, Environment, PolicyProfile};
use mmwave_mdp::profile_io::read_profile;
use mmwave_mdp::simulator::{self, MdpPolicies, SweepCase, SweepRow};
use mmwave_mdp::state_space::paper_count_total;
use mmwave_mdp::{SchemeKind, StateSpace};
use rayon::prelude::*;

use crate::cache;
use crate::config::{config_error, Experiment, FileConfig, Mode, Overrides};
use crate::manifest;

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn write_file(path: PathBuf, f: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>) -> anyhow::Result<PathBuf> {
    let mut w = create(&path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(path)
}

fn space_for(exp: &Experiment, n: u32) -> anyhow::Result<StateSpace> {
    StateSpace::enumerate(exp.bss, exp.matrix().k(), n)
        .with_context(|| format!("cannot enumerate states for L={} N={n}", exp.bss))
}

struct Solved {
    n: u32,
    oh: f64,
    states: usize,
    entry: cache::CacheEntry,
    /// `None` when the cached file was reused.
    iterations: Option<usize>,
    converged: bool,
    last_cycle: Vec<usize>,
}

fn solve_one(exp: &Experiment, n: u32, oh: f64, force: bool) -> anyhow::Result<Solved> {
    let space = space_for(exp, n)?;
    let entry = cache::entry(exp, n, oh, space.len());
    let states = space.len();
    if entry.policy.exists() && !force {
        cache::load(&entry.policy, &entry.header)?;
        return Ok(Solved { n, oh, states, entry, iterations: None, converged: true, last_cycle: vec![] });
    }
    let env = Environment::new(space, exp.matrix().clone(), exp.rate_table(), oh, exp.solver())?;
    let initial = PolicyProfile::random(&env.space, exp.initial_seed);
    let result = converge(initial, &env, exp.max_outer(n))?;
    let converged = result.converged();
    cache::store(&entry, &result, converged || exp.allow_unconverged)?;
    Ok(Solved {
        n,
        oh,
        states,
        entry,
        iterations: Some(result.log.records.len()),
        converged,
        last_cycle: result.log.last_cycle(n as usize),
    })
}

/// Solves every (N, OH) pair, in parallel across pairs.
fn solve_all(exp: &Experiment, pairs: &[(u32, f64)], force: bool) -> anyhow::Result<Vec<Solved>> {
    let solved: Vec<Solved> =
        pairs.par_iter().map(|&(n, oh)| solve_one(exp, n, oh, force)).collect::<anyhow::Result<_>>()?;
    for s in &solved {
        match s.iterations {
            None => println!("N={} OH={}: cached ({} states) {}", s.n, s.oh, s.states, s.entry.policy.display()),
            Some(it) if s.converged => println!(
                "N={} OH={}: converged after {it} iterations ({} states) {}",
                s.n,
                s.oh,
                s.states,
                s.entry.policy.display()
            ),
            Some(it) => println!(
                "N={} OH={}: NOT converged after {it} iterations, last-cycle changes {:?}; log {}",
                s.n,
                s.oh,
                s.last_cycle,
                s.entry.log.display()
            ),
        }
    }
    Ok(solved)
}

fn pairs(exp: &Experiment) -> Vec<(u32, f64)> {
    exp.oh.iter().flat_map(|&oh| exp.ues.iter().map(move |&n| (n, oh))).collect()
}

pub fn solve(file: &FileConfig, flags: &Overrides, force: bool) -> anyhow::Result<()> {
    let exp = Experiment::resolve(file, flags, Mode::Single)?;
    let solved = solve_all(&exp, &pairs(&exp), force)?;
    let mut artifacts = Vec::new();
    for s in &solved {
        if s.entry.policy.exists() {
            artifacts.push(s.entry.policy.clone());
        }
        if s.entry.log.exists() {
            artifacts.push(s.entry.log.clone());
        }
    }
    manifest::write(&exp, "solve", &artifacts)?;
    let failed: Vec<String> = solved
        .iter()
        .filter(|s| !s.converged)
        .map(|s| format!("N={} OH={} (log {})", s.n, s.oh, s.entry.log.display()))
        .collect();
    if !failed.is_empty() && !exp.allow_unconverged {
        bail!(
            "best-response dynamics did not converge for {}; raise solver.max_outer or set solver.allow_unconverged",
            failed.join(", ")
        );
    }
    Ok(())
}

fn cases(exp: &Experiment, pairs: &[(u32, f64)], solve_missing: bool) -> anyhow::Result<Vec<SweepCase>> {
    if exp.wants_mdp() && solve_missing {
        let missing: Vec<(u32, f64)> = pairs
            .iter()
            .copied()
            .filter(|&(n, oh)| space_for(exp, n).map(|s| !cache::entry(exp, n, oh, s.len()).policy.exists()).unwrap_or(true))
            .collect();
        if !missing.is_empty() {
            let solved = solve_all(exp, &missing, false)?;
            if let Some(s) = solved.iter().find(|s| !s.converged && !exp.allow_unconverged) {
                bail!("best-response dynamics did not converge for N={} OH={}; log {}", s.n, s.oh, s.entry.log.display());
            }
        }
    }
    pairs
        .iter()
        .map(|&(n, oh)| {
            let mdp = if exp.wants_mdp() {
                let space = space_for(exp, n)?;
                let profile = cache::require(exp, &space, oh)?;
                Some(MdpPolicies { profile, space })
            } else {
                None
            };
            Ok(SweepCase { config: exp.sim_config(n, oh), mdp })
        })
        .collect()
}

fn print_rows(rows: &[SweepRow]) {
    println!("{:<8} {:>3} {:>6} {:>18} {:>22} {:>9}", "scheme", "N", "OH", "SE (bits/s/Hz)", "HO per UE per kslot", "gain");
    for r in rows {
        let m = &r.metrics;
        let gain = r.gain_vs_channel.map(|g| format!("{:+.1}%", g * 100.0)).unwrap_or_default();
        println!(
            "{:<8} {:>3} {:>6} {:>9.4} ± {:<6.4} {:>11.2} ± {:<8.2} {:>9}",
            m.scheme.name(),
            m.ues,
            m.oh,
            m.se.mean,
            m.se.ci95,
            m.handovers_per_ue_per_kslot.mean,
            m.handovers_per_ue_per_kslot.ci95,
            gain
        );
    }
}

fn write_results(exp: &Experiment, rows: &[SweepRow]) -> anyhow::Result<Vec<PathBuf>> {
    let metrics: Vec<_> = rows.iter().map(|r| &r.metrics).collect();
    Ok(vec![
        write_file(exp.out_dir.join("raw.csv"), |w| Ok(simulator::write_raw_csv(w, metrics.iter().copied())?))?,
        write_file(exp.out_dir.join("aggregate.csv"), |w| Ok(simulator::write_aggregate_csv(w, rows)?))?,
        write_file(exp.out_dir.join("plot.csv"), |w| Ok(simulator::write_plot_csv(w, rows)?))?,
    ])
}

pub fn simulate(file: &FileConfig, flags: &Overrides, solve_missing: bool) -> anyhow::Result<()> {
    let exp = Experiment::resolve(file, flags, Mode::Single)?;
    if exp.oh.len() != 1 {
        return Err(config_error("simulate takes a single handover cost; use `sweep` for several"));
    }
    let cases = cases(&exp, &pairs(&exp), solve_missing)?;
    let rows = simulator::sweep(&cases, &exp.scheme_kinds())?;
    print_rows(&rows);
    let artifacts = write_results(&exp, &rows)?;
    manifest::write(&exp, "simulate", &artifacts)?;
    Ok(())
}

pub fn sweep(file: &FileConfig, flags: &Overrides, solve_missing: bool) -> anyhow::Result<()> {
    let exp = Experiment::resolve(file, flags, Mode::Sweep)?;
    let cases = cases(&exp, &pairs(&exp), solve_missing)?;
    let rows = simulator::sweep(&cases, &exp.scheme_kinds())?;
    print_rows(&rows);
    let mut artifacts = write_results(&exp, &rows)?;
    let kinds = exp.scheme_kinds();
    if kinds.contains(&SchemeKind::Mdp) && kinds.contains(&SchemeKind::Channel) {
        let grid = write_file(exp.out_dir.join("gain_grid.csv"), |w| {
            write!(w, "N")?;
            for oh in &exp.oh {
                write!(w, ",oh_{oh}")?;
            }
            writeln!(w)?;
            for &n in &exp.ues {
                write!(w, "{n}")?;
                for &oh in &exp.oh {
                    let gain = rows
                        .iter()
                        .find(|r| r.metrics.scheme == SchemeKind::Mdp && r.metrics.ues == n as usize && r.metrics.oh == oh)
                        .and_then(|r| r.gain_vs_channel)
                        .expect("every case has an mdp row");
                    write!(w, ",{gain}")?;
                }
                writeln!(w)?;
            }
            Ok(())
        })?;
        artifacts.push(grid);
    }
    manifest::write(&exp, "sweep", &artifacts)?;
    Ok(())
}

pub fn statespace(file: &FileConfig, flags: &Overrides, channel_states: Option<usize>, dump: bool) -> anyhow::Result<()> {
    let mut flags = flags.clone();
    if flags.ues.is_none() && file.scenario.ues.is_none() {
        flags.ues = Some((1..=6).collect());
    }
    let exp = Experiment::resolve(file, &flags, Mode::Single)?;
    let k = channel_states.unwrap_or(exp.matrix().k());
    if k == 0 || k > u8::MAX as usize {
        return Err(config_error(format!("channel states {k} out of range")));
    }
    let l = exp.bss;
    let mut artifacts = Vec::new();
    let mut lines = Vec::new();
    println!("{:>3} {:>12} {:>12} {:>8}", "N", "enumerated", "closed form", "ratio");
    for &n in &exp.ues {
        let space = StateSpace::enumerate(l, k, n)?;
        let closed = paper_count_total(l, k, n).ok();
        let ratio = closed.map(|c| space.len() as f64 / c as f64);
        println!(
            "{n:>3} {:>12} {:>12} {:>8}",
            space.len(),
            closed.map_or("n/a".into(), |c| c.to_string()),
            ratio.map_or("n/a".into(), |r| format!("{r:.4}"))
        );
        lines.push(format!(
            "{l},{k},{n},{},{},{}",
            space.len(),
            closed.map_or(String::new(), |c| c.to_string()),
            ratio.map_or(String::new(), |r| r.to_string())
        ));
        if dump {
            artifacts.push(write_file(exp.out_dir.join(format!("states_L{l}_K{k}_N{n}.csv")), |w| {
                Ok(space.write_csv(w)?)
            })?);
        }
    }
    artifacts.insert(
        0,
        write_file(exp.out_dir.join("statespace.csv"), |w| {
            writeln!(w, "L,K,N,enumerated,closed_form,ratio")?;
            for line in &lines {
                writeln!(w, "{line}")?;
            }
            Ok(())
        })?,
    );
    manifest::write(&exp, "statespace", &artifacts)?;
    Ok(())
}

pub fn inspect_policy(
    file: &FileConfig,
    flags: &Overrides,
    policy: Option<PathBuf>,
    show_states: bool,
    dump_kernel: Option<usize>,
) -> anyhow::Result<()> {
    let exp = Experiment::resolve(file, flags, Mode::Single)?;
    let path = match policy {
        Some(p) => p,
        None => {
            if exp.ues.len() != 1 || exp.oh.len() != 1 {
                return Err(config_error("give one --ues and one --oh, or --policy PATH"));
            }
            let space = space_for(&exp, exp.ues[0])?;
            let entry = cache::entry(&exp, exp.ues[0], exp.oh[0], space.len());
            if !entry.policy.exists() {
                bail!("no cached policy at {}; run `mmwave-mdp solve` first", entry.policy.display());
            }
            entry.policy
        }
    };
    let reader = BufReader::new(File::open(&path).with_context(|| format!("cannot open {}", path.display()))?);
    let (header, profile) = read_profile(reader).with_context(|| format!("cannot read {}", path.display()))?;
    let space = StateSpace::enumerate(header.bss, header.channel_states, header.ues)?;
    if space.len() != header.states {
        bail!("{} declares {} states but L={} K={} N={} has {}", path.display(), header.states, header.bss, header.channel_states, header.ues, space.len());
    }
    println!("policy file   {}", path.display());
    println!("L={} K={} N={} states={}", header.bss, header.channel_states, header.ues, header.states);
    println!("omega={} epsilon={} oh={} channel_hash={}", header.omega, header.epsilon, header.oh, header.channel_hash);
    for (i, p) in profile.policies.iter().enumerate() {
        let mut counts = vec![0usize; header.bss];
        for &a in p.actions() {
            counts[a as usize] += 1;
        }
        let moves: Vec<String> = counts[1..].iter().enumerate().map(|(j, c)| format!("neighbor {}: {c}", j + 1)).collect();
        println!("UE {}: stay {} | {}", i + 1, counts[0], moves.join(", "));
    }
    let disagree = (0..space.len())
        .filter(|&s| profile.policies.iter().any(|p| p.action(s) != profile.policies[0].action(s)))
        .count();
    println!("states where UEs disagree: {disagree}");
    let log = path.with_extension("log.csv");
    if log.exists() {
        let text = std::fs::read_to_string(&log)?;
        let records: Vec<&str> = text.lines().skip(1).collect();
        let tail: Vec<&str> = records.iter().rev().take(header.ues as usize).rev().copied().collect();
        println!("convergence log {}: {} iterations, last cycle (iteration,ue,changed,sweeps,via_converged): {}", log.display(), records.len(), tail.join(" "));
    }
    if show_states {
        println!("index serving neighbors actions(1-based, per UE)");
        for (s, st) in space.states().iter().enumerate() {
            let neighbors: Vec<String> = st.neighbors.iter().map(|c| format!("({},{})", c.channel.0, c.load)).collect();
            let actions: Vec<String> = profile.policies.iter().map(|p| (p.action(s) + 1).to_string()).collect();
            println!("{s} ({},{}) {} {}", st.serving.channel.0, st.serving.load, neighbors.join(""), actions.join(" "));
        }
    }
    let mut artifacts = Vec::new();
    if let Some(ue) = dump_kernel {
        if ue == 0 || ue > header.ues as usize {
            return Err(config_error(format!("--dump-kernel expects a UE in 1..={}", header.ues)));
        }
        if exp.channel_hash != header.channel_hash || exp.matrix().k() != header.channel_states {
            bail!("the configured channel does not match the policy file; pass the configuration it was solved with");
        }
        let env = Environment::new(space, exp.matrix().clone(), exp.rate_table(), header.oh, exp.solver())?;
        let (kernel, _) = build_kernel(ue - 1, &profile, &env)?;
        let rates = exp.rate_table();
        let path = write_file(exp.out_dir.join(format!("kernel_ue{ue}.csv")), |w| {
            Ok(write_kernel_csv(w, &kernel, |s, a, j| {
                transition_reward(env.space.state_of(s), a, env.space.state_of(j), &rates, header.oh)
                    .expect("validated handover cost")
            })?)
        })?;
        println!("kernel written to {}", path.display());
        artifacts.push(path);
    }
    manifest::write(&exp, "inspect-policy", &artifacts)?;
    Ok(())
}
