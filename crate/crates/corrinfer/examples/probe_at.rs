// probe convergence around the AT tangency (dev tool)
use corrinfer::models::{ChannelModel, ModelPair, PriorModel};
use corrinfer::replica::{solve_rs, SolveOptions, WarmStart};
use corrinfer::spectrum::SpectrumModel;

fn main() {
    let gen = ModelPair::new(PriorModel::ising_normalized(), ChannelModel::RandomLabel);
    let rec = ModelPair::new(PriorModel::ising(), ChannelModel::PerceptronStep);
    // march up to 0.80 quickly
    let mut warm: Option<WarmStart> = None;
    for k in 1..=16 {
        let a = 0.05 * k as f64;
        let spec = SpectrumModel::random_orthogonal(a).unwrap();
        let opts = SolveOptions {
            warm_start: warm,
            max_iter: 60000,
            ..Default::default()
        };
        let sol = solve_rs(&spec, &gen, &rec, &opts).expect("march");
        assert!(sol.converged, "march failed at {a}");
        warm = Some(WarmStart::from(&sol));
    }
    let warm80 = warm.unwrap();
    println!("-- fine probes from the 0.80 warm state:");
    for a in [
        0.801, 0.803, 0.805, 0.807, 0.809, 0.810, 0.811, 0.8125, 0.815, 0.8175, 0.82, 0.83,
        0.84, 0.85, 0.86, 0.88, 0.90, 0.92, 0.94, 0.96,
    ] {
        let spec = SpectrumModel::random_orthogonal(a).unwrap();
        let t0 = std::time::Instant::now();
        let opts = SolveOptions {
            warm_start: Some(warm80),
            max_iter: 60000,
            ..Default::default()
        };
        match solve_rs(&spec, &gen, &rec, &opts) {
            Ok(s) if s.converged => println!(
                "a={a:.4} s={:+.7} margin={:+.4e} u={:.5} ustar={:.3} prod={:.7} it={} [{:?}]",
                s.entropy,
                s.at_margin,
                s.u_saddle,
                2.0 * a - 1.0,
                a * s.params.chi_w * s.params.chi_u,
                s.iterations,
                t0.elapsed()
            ),
            Ok(s) => println!(
                "a={a:.4} NOCONV it={} delta={:.2e} [{:?}]",
                s.iterations,
                s.residual,
                t0.elapsed()
            ),
            Err(e) => println!("a={a:.4} ERR {e} [{:?}]", t0.elapsed()),
        }
    }
}
