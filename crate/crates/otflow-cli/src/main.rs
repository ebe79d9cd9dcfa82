use std::path::Path;
use std::time::Instant;

use otflow_cli::config::{describe_keys, parse_sections, resolve, SUBCOMMANDS};
use otflow_cli::exit_code;
use otflow_cli::manifest::{compare_runs, sha256_file, write_manifest, Manifest};
use otflow_cli::pipelines::{execute, parse_plan};

const USAGE: &str = "\
usage:
  otflow <subcommand> <config> [--out <dir>]   run a pipeline
  otflow validate <config>                     check a config, print it resolved
  otflow compare <manifestA> <manifestB>       diff the artifacts of two runs

subcommands: rearrange, aht, jko, gnsb, hf, ghb, crossburgers, sweep

Configs are plain text: `key = value` lines under a `[subcommand]` section
header. `otflow validate` on an empty file lists every key. `--out`
overrides the `out` key. Sweep concurrency is capped by the OTFLOW_WORKERS
environment variable.

exit codes: 0 ok, 1 invariant check failed, 2 config error, 3 solver error
";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(run_cli(&args));
}

fn run_cli(args: &[String]) -> i32 {
    match args.first().map(String::as_str) {
        None => {
            eprint!("{USAGE}");
            2
        }
        Some("-h" | "--help" | "help") => {
            print!("{USAGE}");
            0
        }
        Some("validate") => match args.get(1) {
            Some(path) => cmd_validate(Path::new(path)),
            None => {
                eprintln!("error: validate needs a config path");
                2
            }
        },
        Some("compare") => match (args.get(1), args.get(2)) {
            (Some(a), Some(b)) => cmd_compare(Path::new(a), Path::new(b)),
            _ => {
                eprintln!("error: compare needs two manifest paths");
                2
            }
        },
        Some(sub) if SUBCOMMANDS.contains(&sub) => {
            let Some(config) = args.get(1) else {
                eprintln!("error: {sub} needs a config path");
                return 2;
            };
            let mut out_override = None;
            let mut rest = args[2..].iter();
            while let Some(flag) = rest.next() {
                match flag.as_str() {
                    "--out" => match rest.next() {
                        Some(dir) => out_override = Some(dir.clone()),
                        None => {
                            eprintln!("error: --out needs a directory");
                            return 2;
                        }
                    },
                    other => {
                        eprintln!("error: unknown flag {other:?}");
                        return 2;
                    }
                }
            }
            cmd_run(sub, Path::new(config), out_override.as_deref())
        }
        Some(other) => {
            eprintln!("error: unknown subcommand {other:?}");
            eprint!("{USAGE}");
            2
        }
    }
}

fn read_config(path: &Path) -> Result<String, i32> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        2
    })
}

fn cmd_run(sub: &str, config_path: &Path, out_override: Option<&str>) -> i32 {
    let text = match read_config(config_path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let sections = match parse_sections(&text) {
        Ok(s) => s,
        Err(errors) => {
            for e in errors {
                eprintln!("config error: {e}");
            }
            return 2;
        }
    };
    let Some((_, entries)) = sections.iter().find(|(name, _)| name == sub) else {
        eprintln!("config error: {} has no [{sub}] section", config_path.display());
        return 2;
    };
    let mut res = match resolve(sub, entries) {
        Ok(r) => r,
        Err(errors) => {
            for e in errors {
                eprintln!("config error: {e}");
            }
            return 2;
        }
    };
    if let Some(dir) = out_override {
        res.override_out(dir);
    }
    let (out_dir, plan) = match parse_plan(&mut res) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return 3;
    }
    let started = Instant::now();
    let outcome = match execute(plan, &out_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let wall_ms = started.elapsed().as_millis();
    let mut artifacts = Vec::with_capacity(outcome.artifacts.len());
    for name in &outcome.artifacts {
        match sha256_file(&out_dir.join(name)) {
            Ok(hash) => artifacts.push((name.clone(), hash)),
            Err(e) => {
                eprintln!("error: hashing {name}: {e}");
                return 3;
            }
        }
    }
    let seed = res
        .echo()
        .iter()
        .find(|(k, _)| k == "seed")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let manifest = Manifest {
        subcommand: sub.to_string(),
        version: otflow::VERSION.to_string(),
        seed,
        wall_ms,
        checks: outcome.checks,
        metrics: outcome.metrics,
        config: res.echo(),
        artifacts,
    };
    let manifest_path = out_dir.join("manifest.txt");
    if let Err(e) = write_manifest(&manifest_path, &manifest) {
        eprintln!("error: writing manifest: {e}");
        return 3;
    }
    for c in &manifest.checks {
        println!(
            "check {}: {} ({:.3e} <= {:.3e})",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.value,
            c.limit
        );
    }
    for (k, v) in &manifest.metrics {
        println!("metric {k} = {v:.6e}");
    }
    println!(
        "manifest {} ({} artifacts, {wall_ms} ms)",
        manifest_path.display(),
        manifest.artifacts.len()
    );
    if manifest.invariants_pass() {
        0
    } else {
        eprintln!("error: invariant checks failed");
        1
    }
}

fn cmd_validate(path: &Path) -> i32 {
    let text = match read_config(path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let sections = match parse_sections(&text) {
        Ok(s) => s,
        Err(errors) => {
            for e in errors {
                eprintln!("config error: {e}");
            }
            return 2;
        }
    };
    if sections.is_empty() {
        eprintln!("config error: no sections; a run needs a [subcommand] section.");
        eprintln!("known subcommands and their keys:\n");
        for sub in SUBCOMMANDS {
            eprintln!("{}", describe_keys(sub));
        }
        return 2;
    }
    let mut ok = true;
    for (name, entries) in &sections {
        match resolve(name, entries) {
            Err(errors) => {
                for e in errors {
                    eprintln!("config error: {e}");
                }
                ok = false;
            }
            Ok(mut res) => match parse_plan(&mut res) {
                Err(e) => {
                    eprintln!("config error: [{name}] {e}");
                    ok = false;
                }
                Ok(_) => {
                    println!("[{name}]");
                    for (k, v) in res.echo() {
                        println!("{k} = {v}");
                    }
                    println!();
                }
            },
        }
    }
    if ok {
        println!("ok");
        0
    } else {
        2
    }
}

fn cmd_compare(a: &Path, b: &Path) -> i32 {
    let report = match compare_runs(a, b) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    println!("comparing {} vs {}", a.display(), b.display());
    for d in &report.diffs {
        match d.l2 {
            Some(l2) => println!(
                "{}: l2 {:.6e} max {:.6e} (hashes {})",
                d.name,
                l2,
                d.max,
                if d.hash_equal { "equal" } else { "differ" }
            ),
            None => println!(
                "{}: max {:.6e} (hashes {})",
                d.name,
                d.max,
                if d.hash_equal { "equal" } else { "differ" }
            ),
        }
    }
    for t in &report.trajectories {
        println!(
            "trajectory {}: {} matched snapshots, sup_t l2 {:.6e}",
            t.stem, t.matched, t.sup_l2
        );
    }
    for name in &report.only_a {
        println!("only in first run: {name}");
    }
    for name in &report.only_b {
        println!("only in second run: {name}");
    }
    0
}
