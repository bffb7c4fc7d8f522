use checkerfree::analysis::checkerboard_map;
use checkerfree::image_io::{read_image, write_heatmap, write_image, Image};
use checkerfree::srnet::{bicubic_resize, load_checkpoint, psnr};
use serde_json::json;

use crate::args::{Cli, SrArgs};
use crate::error::{CliError, Result};
use crate::{require, Outcome};

pub fn run(cli: &Cli, args: &SrArgs) -> Result<Outcome> {
    let weights = require(&cli.weights, "weights")?;
    let net = load_checkpoint(weights)?;
    let u = net.factor();
    let input = read_image(&args.input)?;
    let (h, w) = input.dims();

    // the network sees luminance only; chroma is upscaled bicubically
    let (y, out_img) = if input.is_rgb() {
        let [y, cb, cr] = input.to_ycbcr()?;
        let y_hr = net.forward(&y)?;
        let cb_hr = bicubic_resize(&cb, h * u, w * u)?;
        let cr_hr = bicubic_resize(&cr, h * u, w * u)?;
        let img = Image::from_ycbcr(&y_hr, &cb_hr, &cr_hr)?;
        (y_hr, img)
    } else {
        let y_hr = net.forward(&input.channels[0])?;
        (y_hr.clone(), Image::gray(y_hr))
    };
    let out_path = args.output.clone().unwrap_or_else(|| cli.out.join("sr.png"));
    write_image(&out_path, &out_img)?;
    let mut outputs = vec![out_path.clone()];

    let map = checkerboard_map(&y, u)?;
    let map_mean = map.mean();
    if let Some(p) = &args.heatmap {
        write_heatmap(p, &map, None)?;
        outputs.push(p.clone());
    }

    let mut psnr_y = None;
    if let Some(r) = &args.reference {
        let reference = read_image(r)?.luminance();
        if reference.shape() != y.shape() {
            return Err(CliError::usage(format!(
                "reference is {:?} but the output is {}x{}",
                reference.plane_dims()?,
                h * u,
                w * u
            )));
        }
        psnr_y = Some(psnr(&y.map(|v| v.clamp(0.0, 1.0)), &reference, 1.0)?);
    }

    let mut summary = format!(
        "{}x{} -> {}x{} written to {} (mean checkerboard map {map_mean:.3e})",
        w,
        h,
        w * u,
        h * u,
        out_path.display()
    );
    if let Some(p) = psnr_y {
        summary += &format!("\nPSNR (Y) {p:.2} dB");
    }
    let mut o = Outcome::new(
        true,
        json!({
            "network": net.config().display_name(),
            "U": u,
            "input": args.input,
            "output": out_path,
            "psnr_y": psnr_y,
            "checkerboard_map_mean": map_mean,
        }),
        summary,
    )?;
    o.config = json!({
        "weights": weights,
        "network": net.config(),
        "approach_a_gains": net.approach_a_gains(),
        "input": args.input,
        "reference": args.reference,
    });
    o.outputs = outputs;
    Ok(o)
}
