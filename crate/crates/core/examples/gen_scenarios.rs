//! Writes the sample scenarios under `scenarios/` (or the directory given as
//! the first argument).

use std::fs;
use std::path::PathBuf;

use s4oc::ingest::serialize_trace;
use s4oc::synth;

fn main() -> std::io::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "scenarios".into());

    let attack = root.join("attack");
    fs::create_dir_all(&attack)?;
    fs::write(attack.join("arch.json"), synth::attack_arch_config().to_json())?;
    fs::write(attack.join("trace.ll"), serialize_trace(&synth::attack_trace()))?;
    fs::write(
        attack.join("scenario.toml"),
        format!(
            "# Two chains of crypto-secret work; one crypto accelerator is compromised at start.\n\
             arch = \"arch.json\"\n\
             trace = \"trace.ll\"\n\
             seed = 9\n\
             episodes = 200\n\
             attack 0 {}\n",
            synth::ATTACKED_ELEMENT
        ),
    )?;

    let pipeline = root.join("pipeline");
    fs::create_dir_all(&pipeline)?;
    fs::write(pipeline.join("arch.json"), synth::mesh16_config().to_json())?;
    let trace = synth::pipeline_trace(synth::PipelineShape::default(), 0);
    fs::write(pipeline.join("trace.ll"), serialize_trace(&trace))?;
    fs::write(
        pipeline.join("scenario.toml"),
        "# 64 tasks in 8 groups on a 4x4 mesh; a GPU is attacked mid-run.\n\
         arch = \"arch.json\"\n\
         trace = \"trace.ll\"\n\
         episodes = 20\n\
         attack 40 7\n\
         \n\
         [rl]\n\
         epsilon = 0.2\n\
         epsilon_decay = true\n",
    )?;
    println!("wrote {}", root.display());
    Ok(())
}
