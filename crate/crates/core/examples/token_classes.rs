// Assign tokens to the coarse classes used by the class audit.

use margin_lab::audit::classify_token;

fn main() {
    for t in [",", "--", "1999", "3.5%", "the", "which", "Paris", "NASA", "running", "x3", " the", ""] {
        println!("{t:>8?} -> {}", classify_token(t).as_str());
    }
}
