// probe: both intervals with GCV ridge, default floor vs no floor
use ivdrf::data::TargetInterval;
use ivdrf::scores::EstimatorTag;
use ivdrf::sim::{run_benchmark, BenchmarkConfig};

fn main() {
    for floor in [None, Some(1e-9f64)] {
        let interval = TargetInterval::new(-0.75, -0.25).unwrap();
        let mut cfg = BenchmarkConfig::new(5000, 30, interval, 20260810);
        cfg.folds = 5;
        cfg.tags = vec![EstimatorTag::AipwIv];
        cfg.nuisance.kappa_floor = floor;
        let report = run_benchmark(&cfg).unwrap();
        let row = report.row(EstimatorTag::AipwIv).unwrap();
        let rmse_mid = row.points.iter().find(|(a, _)| (a + 0.5).abs() < 1e-9).map(|(_, c)| c.rmse).unwrap();
        println!("neg floor {floor:?}: rmse(-0.5) {:.4}, rmse_N {:.4}, ratio {:.2}, biases {:?}",
            rmse_mid, row.integrated.rmse, row.integrated.rmse / rmse_mid,
            row.points.iter().map(|(_, c)| (c.bias * 1e4).round() / 1e4).collect::<Vec<f64>>());
    }
    let interval = TargetInterval::new(0.25, 0.75).unwrap();
    let mut cfg = BenchmarkConfig::new(5000, 30, interval, 20260809);
    cfg.folds = 5;
    cfg.tags = vec![EstimatorTag::AipwIv, EstimatorTag::AipwNuc];
    let report = run_benchmark(&cfg).unwrap();
    let iv = report.row(EstimatorTag::AipwIv).unwrap();
    let nuc = report.row(EstimatorTag::AipwNuc).unwrap();
    println!("pos default floor: iv bias {:.4}, iv rmse {:.4}, nuc bias {:.4}",
        iv.integrated.bias, iv.integrated.rmse, nuc.integrated.bias);
}
