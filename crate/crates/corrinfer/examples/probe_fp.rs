// verify the known far-side fixed point is a root of the residual map (dev tool)
use corrinfer::models::{ChannelModel, ModelPair, PriorModel};
use corrinfer::replica::{solve_rs, SolveOptions, WarmStart};
use corrinfer::spectrum::SpectrumModel;

fn main() {
    let gen = ModelPair::new(PriorModel::ising_normalized(), ChannelModel::RandomLabel);
    let rec = ModelPair::new(PriorModel::ising(), ChannelModel::PerceptronStep);
    // hand the solver a warm start right at the independently-computed
    // fixed point for alpha = 0.9 (branch-2 saddle)
    let warm = WarmStart {
        chi_w: 1.0 - 0.657137,
        q_w: 0.657137,
        m_w: 0.0,
        chi_u: 0.803959,
        q_u: 1.386577,
        m_u: 0.0,
        u_saddle: 0.65508,
    };
    let spec = SpectrumModel::random_orthogonal(0.9).unwrap();
    let opts = SolveOptions {
        warm_start: Some(warm),
        max_iter: 60000,
        ..Default::default()
    };
    match solve_rs(&spec, &gen, &rec, &opts) {
        Ok(s) => println!(
            "a=0.90 conv={} s={:+.7} margin={:+.4e} u={:.5} qw={:.6} qu={:.6} chu={:.6} it={}",
            s.converged, s.entropy, s.at_margin, s.u_saddle, s.params.q_w, s.params.q_u,
            s.params.chi_u, s.iterations
        ),
        Err(e) => println!("ERR {e}"),
    }
}
