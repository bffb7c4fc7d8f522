use checkerfree::analysis::{checkerboard_map, minimum_input_size, network_step_report, DEFAULT_TOLERANCE};
use checkerfree::image_io::write_heatmap;
use serde_json::json;

use super::{load_network, read_luma};
use crate::args::{AnalyzeArgs, Cli};
use crate::error::{CliError, Result};
use crate::Outcome;

pub fn run(cli: &Cli, args: &AnalyzeArgs) -> Result<Outcome> {
    let (net, snapshot) = load_network(cli, args.preset.as_deref())?;
    let tol = cli.tol.unwrap_or(DEFAULT_TOLERANCE);
    let min = minimum_input_size(&net);
    let size = args.input_size.unwrap_or(min);
    let report = network_step_report(&net, size, args.level, tol).map_err(|e| match e {
        checkerfree::Error::InputTooSmall { required, got } => CliError::usage(format!(
            "--input-size {got} is too small for this network; use at least {required}"
        )),
        e => e.into(),
    })?;

    let mut outputs = Vec::new();
    let mut map_mean = None;
    if let Some(img) = &args.image {
        let y = net.forward(&read_luma(img)?)?;
        let map = checkerboard_map(&y, net.factor())?;
        map_mean = Some(map.mean());
        let path = args.heatmap.clone().unwrap_or_else(|| cli.out.join("analyze_heatmap.png"));
        write_heatmap(&path, &map, None)?;
        outputs.push(path);
    } else if args.heatmap.is_some() {
        return Err(CliError::usage("--heatmap needs --image"));
    }

    let name = net.config().display_name();
    let mut summary = format!(
        "{name}, U = {}: phase values {:?}\ncheckerboard score {:.3e} (tol {tol:.1e}) -> {}",
        report.factor,
        report.phase_values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>(),
        report.score,
        if report.artifact_free() { "artifact-free" } else { "CHECKERBOARD" }
    );
    if let Some(e) = report.prediction_error {
        summary += &format!("\nanalytic prediction error {e:.3e}");
    }
    if let Some(m) = map_mean {
        summary += &format!("\nmean checkerboard map {m:.3e}");
    }
    let pass = report.artifact_free();
    let mut o = Outcome::new(
        pass,
        json!({
            "network": name,
            "report": report,
            "minimum_input_size": min,
            "checkerboard_map_mean": map_mean,
        }),
        summary,
    )?;
    o.config = json!({
        "source": snapshot,
        "input_size": size,
        "level": args.level,
        "tol": tol,
        "image": args.image,
    });
    o.outputs = outputs;
    Ok(o)
}
