//! Train and evaluate one shapes-35 cell: `run_cell <model> <seed> [epochs] [per_class]`.

use clsvae::experiment::{parse_model_kind, preset, run_cell};

fn main() -> clsvae::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let kind = parse_model_kind(args.get(1).map_or("clsvae", String::as_str))?;
    let seed = args.get(2).map_or(1, |s| s.parse().unwrap());
    let mut cfg = preset("shapes-35", kind)?.with_seed(seed);
    if let Some(e) = args.get(3) {
        cfg.train.epochs = e.parse().unwrap();
    }
    if let Some(p) = args.get(4) {
        cfg.data.per_class = p.parse().unwrap();
    }
    let run = run_cell(&cfg)?;
    match run.evaluation {
        Some(e) => println!("{}", serde_json::to_string(&e.report)?),
        None => println!("diverged: {:?}", run.divergence),
    }
    Ok(())
}
