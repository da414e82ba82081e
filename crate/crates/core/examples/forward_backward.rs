//! Teacher-forced forward pass, backward pass from a sparse gradient on
//! output log-probabilities, and a finite-difference spot check.

use fcm_core::corpus::{BOS_ID, EOS_ID};
use fcm_core::model::{backward, forward_teacher, init_params, StepGradient};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = init_params(6, 5, 7, 3)?;
    let input = [1, 4, 2, 3];
    let target = [BOS_ID, 3, 5, 2];
    let trace = forward_teacher(&params, &input, &target)?;
    for n in 0..trace.num_steps() {
        let row: Vec<String> = (0..7).map(|i| format!("{:.3}", trace.log_prob(n, i).exp())).collect();
        println!("step {n}: {}", row.join(" "));
    }

    // dF/dlog o: reward token 5 at step 1, penalize EOS at step 3
    let g = StepGradient::new(vec![(1, 5, 1.0), (3, EOS_ID, -0.5)])?;
    let grads = backward(&params, &trace, &g)?;
    let objective = |p: &fcm_core::model::ModelParams| {
        let t = forward_teacher(p, &input, &target).unwrap();
        t.log_prob(1, 5) - 0.5 * t.log_prob(3, EOS_ID)
    };
    println!("gradient norm {:.6}", grads.norm());
    let h = 1e-6;
    let nudged = |name: &str, r: usize, c: usize, delta: f64| {
        let mut p = params.clone();
        for (n, m) in p.matrices_mut() {
            if n == name {
                m.row_mut(r)[c] += delta;
            }
        }
        p
    };
    for (name, r, c) in [("attention", 1, 2), ("dec_state", 0, 5), ("out_bias", 0, 5)] {
        let fd = (objective(&nudged(name, r, c, h)) - objective(&nudged(name, r, c, -h))) / (2.0 * h);
        let an = grads.matrices().iter().find(|m| m.0 == name).unwrap().1.get(r, c);
        println!("{name}[{r},{c}]: analytic {an:+.8}  numeric {fd:+.8}");
    }
    Ok(())
}
