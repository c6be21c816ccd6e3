// Correlate per-position loss with the margin deficit read off each layer.

use margin_lab::toy::{layer_scan, layer_scan_csv, train, ToyData, ToyLm, ToyLmConfig, TrainConfig, BUNDLED_CORPUS};

fn main() {
    let data = ToyData::from_text(&BUNDLED_CORPUS[..30_000], 256, 0.1).unwrap();
    let cfg = ToyLmConfig { hidden_dim: 32, context: 32, layers: 3, ..data.model_config() };
    let tc = TrainConfig { steps: 30, learning_rate: 3e-3, ..TrainConfig::default() };
    let model = train(&ToyLm::new(cfg, 0).unwrap(), &data.train, &tc).unwrap().model;
    print!("{}", layer_scan_csv(&layer_scan(&model, &data.audit, 0.5).unwrap()));
}
