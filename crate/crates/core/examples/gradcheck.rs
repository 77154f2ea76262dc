//! Analytic gradients against central differences for every loss, on a few
//! random small networks.

use clonalnet::autograd::{FdReport, GradcheckProblem, LossConfig, LossKind};

fn main() -> clonalnet::Result<()> {
    let variants = [
        (LossKind::BaselineCe, false),
        (LossKind::FocusingPicking, false),
        (LossKind::FocusingPicking, true),
        (LossKind::LabelSmoothing, false),
        (LossKind::Kd, false),
    ];
    println!("{},detach_d", FdReport::CSV_HEADER);
    for (kind, detach_d) in variants {
        let cfg = LossConfig {
            detach_d,
            ..LossConfig::default()
        };
        for seed in 0..3 {
            let problem = GradcheckProblem::random(seed);
            let report = problem.check(kind, &cfg, 25, 1e-5, seed)?;
            println!("{},{detach_d}", report.csv_row(kind.as_str()));
            assert!(report.max_rel_error < 1e-6);
        }
    }
    Ok(())
}
