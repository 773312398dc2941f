// scratch scan of the orthogonal storage problem (dev tool)
use corrinfer::models::{ChannelModel, ModelPair, PriorModel};
use corrinfer::replica::{solve_rs, SolveOptions, WarmStart};
use corrinfer::spectrum::SpectrumModel;

fn main() {
    let gen = ModelPair::new(PriorModel::ising_normalized(), ChannelModel::RandomLabel);
    let rec = ModelPair::new(PriorModel::ising(), ChannelModel::PerceptronStep);
    let mut warm: Option<WarmStart> = None;
    let t0 = std::time::Instant::now();
    let mut a = 0.05;
    while a < 0.99 {
        let spec = SpectrumModel::random_orthogonal(a).unwrap();
        let opts = SolveOptions { warm_start: warm, ..Default::default() };
        match solve_rs(&spec, &gen, &rec, &opts) {
            Ok(sol) => {
                println!(
                    "a={a:.3} s={:+.7} margin={:+.5e} it={} conv={} prod={:.6} [{:?}]",
                    sol.entropy, sol.at_margin, sol.iterations, sol.converged,
                    a * sol.params.chi_w * sol.params.chi_u, t0.elapsed()
                );
                if sol.converged { warm = Some(WarmStart::from(&sol)); }
            }
            Err(e) => println!("a={a:.3} ERROR {e}"),
        }
        a += 0.01;
    }
}
