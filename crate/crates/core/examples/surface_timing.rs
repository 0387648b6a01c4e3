use std::time::Instant;

use fr_design::model::{ModelSpec, Observation};
use fr_design::smc::{DesignState, MoveConfig};
use fr_design::utility::{utility_surface, SurfaceOptions, UtilityKind};

fn main() {
    let mut st =
        DesignState::<f64>::new(ModelSpec::standard_set(), 1000, MoveConfig::default(), 1).unwrap();
    let grid: Vec<u32> = (1..=300).collect();
    for kind in UtilityKind::ALL {
        let t = Instant::now();
        let s = utility_surface(&st, &grid, 24.0, kind, SurfaceOptions::default()).unwrap();
        println!("{kind}: argmax {} in {:.2?}", s.argmax, t.elapsed());
    }
    let t = Instant::now();
    let mut acc = 0.0;
    for ps in &st.sets {
        for th in &ps.particles {
            for d in 1..=300u32 {
                acc += fr_design::model::expected_proportion(ps.model.mech, th, d, 24.0).unwrap();
            }
        }
    }
    println!("solves: {:.2?} ({acc})", t.elapsed());
    let t = Instant::now();
    st.update(Observation::new(150, 60, 24.0).unwrap()).unwrap();
    println!("update: {:.2?}", t.elapsed());
}
