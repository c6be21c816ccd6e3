// Compare a baseline and a polished audit position by position.

use std::collections::HashMap;
use std::path::Path;

use margin_lab::audit::{band_accuracy, churn_report, class_audit, expansion_report, frequency_audit, rotation_report};
use margin_lab::io::read_audit;

fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let (_, base) = read_audit(&fixtures.join("baseline6.jsonl")).unwrap();
    let (_, pol) = read_audit(&fixtures.join("polished6.jsonl")).unwrap();

    let c = churn_report(&base, &pol).unwrap();
    println!("churned {} of {}: W->R {}, R->W {}, W->W {}, net {:+}", c.churned, c.total, c.w2r, c.r2w, c.w2w, c.net_corrected);
    let r = rotation_report(&base, &pol).unwrap();
    println!("runner-up rotations {}, {} wider, mean delta {:+.3}", r.rotated, r.rotated_wider, r.mean_margin_delta);
    let e = expansion_report(&base, &pol).unwrap();
    println!("{:.1}% of margins widened, median delta {:+.3}", e.pct_wider, e.median_delta);

    for (name, t) in [("baseline", band_accuracy(&base).unwrap()), ("polished", band_accuracy(&pol).unwrap())] {
        let acc: Vec<String> = t.bands.iter().map(|b| b.accuracy.map_or("-".into(), |a| format!("{a:.2}"))).collect();
        println!("{name} band accuracy [{}]", acc.join(", "));
    }

    let counts: HashMap<u32, u64> = HashMap::from([(1, 1), (0, 3), (4, 7), (2, 25), (5, 150)]);
    for g in frequency_audit(&base, &pol, &counts).unwrap().buckets {
        println!("frequency {:>6}: net {:+}", g.label, g.net);
    }
    let texts: Vec<String> = [",", "the", "Paris", "running", "x3", "2023"].map(String::from).to_vec();
    for g in class_audit(&base, &pol, &texts).unwrap().classes {
        println!("class {:>14}: net {:+}", g.label, g.net);
    }
}
