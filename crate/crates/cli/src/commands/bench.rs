use checkerfree::bench::{run_bench, standard_networks, BenchConfig, TABLE_SIZES};
use checkerfree::srnet::NetworkConfig;
use serde_json::json;

use super::DEFAULT_FACTOR;
use crate::args::{BenchArgs, Cli};
use crate::error::{CliError, Result};
use crate::Outcome;

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || CliError::usage(format!("size {s:?} is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h) = (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

pub fn run(cli: &Cli, args: &BenchArgs) -> Result<Outcome> {
    let u = cli.factor.unwrap_or(DEFAULT_FACTOR);
    if args.repeats < 3 {
        return Err(CliError::usage("--repeats must be at least 3"));
    }
    let networks = if args.networks.is_empty() {
        standard_networks(u)?
    } else {
        args.networks
            .iter()
            .map(|name| {
                let cfg = NetworkConfig::preset(name, u)?;
                Ok((cfg.display_name(), cfg))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let sizes = if args.sizes.is_empty() {
        TABLE_SIZES.to_vec()
    } else {
        args.sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?
    };
    let cfg = BenchConfig {
        networks,
        sizes,
        repeats: args.repeats,
        threads: args.threads,
        seed: cli.seed.unwrap_or(0),
    };
    let report = run_bench(&cfg)?;

    let csv_path = cli.out.join("bench.csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| CliError::io(&csv_path, e))?;

    let mut summary = String::from("network                 size        median s\n");
    for r in &report.rows {
        summary += &format!("{:<22} {:>4}x{:<4} {:>12.5}\n", r.network, r.width, r.height, r.median_seconds);
    }
    for o in &report.orderings {
        summary += &format!("{}x{} {}: {}\n", o.width, o.height, o.claim, if o.holds { "yes" } else { "no" });
    }
    summary += &format!("total {:.1} s", report.total_seconds);

    let mut o = Outcome::new(true, &report, summary)?;
    o.config = json!({
        "U": u,
        "networks": cfg.networks.iter().map(|(l, c)| json!({ "label": l, "network": c })).collect::<Vec<_>>(),
        "sizes": cfg.sizes,
        "repeats": cfg.repeats,
        "threads": cfg.threads,
        "seed": cfg.seed,
    });
    o.outputs = vec![csv_path];
    Ok(o)
}
