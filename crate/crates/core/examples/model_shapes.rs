//! Builds the four preset UNets and the three bottleneck adapters, then
//! prints latent shapes, parameter counts and MOps per two-second input.

use denoise_kd::nn::{count_mops, count_params, BottleneckAdapter, ModelConfig, Scenario, UNetModel};
use denoise_kd::Result;

fn main() -> Result<()> {
    println!("{:<6} {:>16} {:>10} {:>12}", "model", "latent", "params", "MOps");
    for name in ["t1", "t2", "s1", "s2"] {
        let model = UNetModel::new(ModelConfig::preset(name).expect("preset"), 0)?;
        println!(
            "{:<6} {:>16} {:>10} {:>12.2}",
            name,
            model.latent_shape().to_string(),
            count_params(&model),
            count_mops(&model)
        );
    }
    println!();
    for scenario in Scenario::ALL {
        let t = ModelConfig::preset(scenario.teacher()).expect("preset").latent_shape()?;
        let s = ModelConfig::preset(scenario.student()).expect("preset").latent_shape()?;
        let adapter = BottleneckAdapter::for_scenario(scenario, t, s, 0)?;
        let maps: Vec<String> = adapter.maps().iter().map(|m| format!("{}:{}->{}", m.axis, m.from, m.to)).collect();
        println!("{scenario}: {t} -> {s} via [{}] ({} params)", maps.join(", "), adapter.params().numel());
    }
    Ok(())
}
