// Sweep the refinement weight from a common base model.

use margin_lab::objectives::Objective;
use margin_lab::toy::{dose_response, dose_csv, train, ToyData, ToyLm, ToyLmConfig, TrainConfig, BUNDLED_CORPUS};

fn main() {
    let data = ToyData::from_text(&BUNDLED_CORPUS[..80_000], 256, 0.2).unwrap();
    let cfg = ToyLmConfig { hidden_dim: 32, context: 32, ..data.model_config() };
    let pre = TrainConfig { steps: 40, learning_rate: 3e-3, ..TrainConfig::default() };
    let base = train(&ToyLm::new(cfg, 0).unwrap(), &data.train, &pre).unwrap().model;

    let sweep = TrainConfig { steps: 10, ..TrainConfig::default() };
    let d = dose_response(&base, &data.train, &data.audit, &[0.0, 0.3, 0.6], Objective::Margin, &sweep).unwrap();
    println!("base median margin {:.4}", d.baseline.median_margin);
    print!("{}", dose_csv(&d.rows));
}
