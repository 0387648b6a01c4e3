use std::time::Instant;

use fr_design::study::{run_study, Strategy, StudyManifest, Truth};
use fr_design::utility::SurfaceOptions;

fn main() {
    let stride: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    for strategy in [
        Strategy::Random,
        Strategy::ParameterEstimation,
        Strategy::ModelDiscrimination,
        Strategy::TotalEntropy,
    ] {
        let m = StudyManifest {
            seed: 1,
            replications: 1,
            experiments: 15,
            particles: 1000,
            strategies: vec![strategy],
            truths: vec![Truth::illustration()],
            surface: SurfaceOptions {
                stride,
                refine_window: 5,
            },
            ..StudyManifest::default()
        };
        let t = Instant::now();
        let r = run_study(&m, None).unwrap();
        println!(
            "{strategy}: {:.1}s final prec {:?} prob {:?}",
            t.elapsed().as_secs_f64(),
            r[0].final_log_precision(),
            r[0].final_true_model_prob()
        );
    }
}
