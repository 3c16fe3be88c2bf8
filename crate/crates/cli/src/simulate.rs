//! `simulate-ldct`: write a synthetic paired dataset.

use denomamba::data::{make_dataset, save_dataset};
use denomamba::Result;
use serde_json::json;

use crate::args::SimulateArgs;
use crate::resolve::{flag_object, image_format, read_json, required, resolve, echo, SimulateConfig};

pub fn run(args: &SimulateArgs) -> Result<()> {
    let file = args.config.as_deref().map(read_json).transpose()?;
    let noise = flag_object([
        ("dose", args.dose.map(|v| json!(v))),
        ("photons", args.photons.map(|v| json!(v))),
        ("electronic", args.electronic.map(|v| json!(v))),
    ]);
    let format = args.format.as_deref().map(image_format).transpose()?;
    let flags = flag_object([
        ("n", args.n.map(|v| json!(v))),
        ("size", args.size.map(|v| json!(v))),
        ("noise", Some(noise)),
        ("seed", args.seed.map(|v| json!(v))),
        ("format", format.map(|f| json!(f))),
        ("out", args.out.as_ref().map(|p| json!(p))),
    ]);
    let cfg: SimulateConfig = resolve(&SimulateConfig::default(), file.as_ref(), flags)?;
    cfg.noise.validate()?;
    let out = required(&cfg.out, "out")?;
    echo(out, &cfg)?;
    let pairs = make_dataset(cfg.n, cfg.size, &cfg.noise, cfg.seed)?;
    let manifest = save_dataset(out, &pairs, cfg.format)?;
    log::info!("wrote {} pairs and {}", pairs.len(), manifest.display());
    Ok(())
}
