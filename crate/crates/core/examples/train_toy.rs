// Train the toy language model briefly, with and without margin refinement,
// and audit both on held-out text.

use margin_lab::margin::margin_quantiles;
use margin_lab::toy::{audit_tokens, train, ToyData, ToyLm, ToyLmConfig, TrainConfig, BUNDLED_CORPUS};

fn main() {
    let data = ToyData::from_text(&BUNDLED_CORPUS[..30_000], 256, 0.1).unwrap();
    let cfg = ToyLmConfig { hidden_dim: 32, context: 32, ..data.model_config() };
    let init = ToyLm::new(cfg, 0).unwrap();
    println!("{} parameters, vocab {}", init.param_count(), data.tokenizer.len());

    for lambda in [0.0, 0.3] {
        let mut tc = TrainConfig { steps: 30, learning_rate: 3e-3, ..TrainConfig::default() };
        tc.mrp.lambda_mrp = lambda;
        let out = train(&init, &data.train, &tc).unwrap();
        let last = out.log.last().unwrap();
        let audit = audit_tokens(&out.model, &data.audit).unwrap();
        let q = margin_quantiles(&audit.iter().map(|r| r.margin).collect::<Vec<_>>()).unwrap();
        let acc = audit.iter().filter(|r| r.correct).count() as f64 / audit.len() as f64;
        println!(
            "lambda {lambda}: train ce {:.3}, held-out accuracy {acc:.3}, median margin {:.3}",
            last.ce, q.median
        );
    }
}
