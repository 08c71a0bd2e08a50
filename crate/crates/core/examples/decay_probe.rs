// scratch probe: cubic decay at acceptance parameters
use milstein_core::increments::IncrementStream;
use milstein_core::model::builtin_model;
use milstein_core::scheme::SchemeParams;
use milstein_core::stepper::{Scheme, Stepper};
use milstein_core::SolverOptions;

fn main() {
    let m = builtin_model("cubic", &[]).unwrap();
    for (dt, t_end) in [(0.5f64, 200.0f64), (0.05, 200.0), (0.5, 2000.0)] {
        let p = SchemeParams::new(0.5, 1.0, dt).unwrap();
        let stepper = Stepper::new(&m, p, Scheme::ThetaSigma, SolverOptions::default()).unwrap();
        let n = 1000u64;
        let mut terms: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = IncrementStream::new(7, i, dt);
                stepper.simulate(1.0, t_end, &mut s, false).unwrap().terminal_state.abs()
            })
            .collect();
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let frac = |t: f64| terms.iter().filter(|&&x| x < t).count() as f64 / n as f64;
        println!(
            "dt={dt} T={t_end}: median={:.4e} p99={:.4e} min={:.3e} max={:.3e} frac<1e-1={} frac<1e-2={} frac<1e-3={}",
            terms[500], terms[990], terms[0], terms[999], frac(0.1), frac(0.01), frac(1e-3)
        );
    }
}
