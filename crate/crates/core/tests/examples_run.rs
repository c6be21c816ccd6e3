//! Every example runs to completion.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
            #[test]
            fn runs() {
                main();
            }
        }
    };
}

example!(bf16_artifact);
example!(gap_fit);
example!(objectives);
example!(compare_audits);
example!(token_classes);
example!(synth_validate);
example!(train_toy);
example!(dose_response);
example!(layer_scan);
