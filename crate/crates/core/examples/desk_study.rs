//! Desk-scale strategy comparison: 4 models × 2 prior-drawn truths, 10
//! replications of 15 experiments. Usage: `desk_study OUT_DIR [STRIDE]`.

use std::path::PathBuf;

use fr_design::study::{run_study, write_outputs, DefaultTruths, Strategy, StudyManifest};
use fr_design::utility::SurfaceOptions;

fn main() {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().expect("output directory"));
    let stride: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let m = StudyManifest {
        seed: 20,
        default_truths: DefaultTruths {
            illustration: false,
            draws_per_model: 2,
        },
        strategies: vec![
            Strategy::Random,
            Strategy::ParameterEstimation,
            Strategy::ModelDiscrimination,
            Strategy::TotalEntropy,
        ],
        surface: SurfaceOptions {
            stride,
            refine_window: 5,
        },
        ..StudyManifest::default()
    };
    let records = run_study(&m, Some(&out)).unwrap();
    let summary = write_outputs(&out, &records, m.design_grid.points()).unwrap();
    for c in &summary.cells {
        println!(
            "truth {} ({}) {:>3}: median final log precision {:.3}, median true-model prob {:.3}",
            c.truth,
            c.truth_label,
            c.strategy,
            c.final_log_precision.map_or(f64::NAN, |q| q.median),
            c.final_true_model_prob.map_or(f64::NAN, |q| q.median)
        );
    }
}
