//! ML-Poly aggregation of a pool of forecasters and greedy subset selection.

use loadcast::aggregation::{greedy_select, AggregationState, SelectionData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> loadcast::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let n = 24 * 150;
    let k = 12;

    // four experts with offsetting biases, eight noisy ones
    let bias = [-8.0, -2.0, 3.0, 7.0];
    let mut forecasts = vec![Vec::new(); k];
    let mut targets = Vec::with_capacity(n);
    let mut hours = Vec::with_capacity(n);
    for t in 0..n {
        let y = 1000.0 + 150.0 * (t as f64 * std::f64::consts::TAU / 24.0).sin() + 20.0 * normal();
        for (j, f) in forecasts.iter_mut().enumerate() {
            f.push(if j < 4 {
                y + bias[j] + 5.0 * normal()
            } else {
                y + 30.0 * normal()
            });
        }
        targets.push(y);
        hours.push((t % 24) as u32);
    }

    let names: Vec<String> = (0..k).map(|j| format!("expert{j}")).collect();
    let mut agg = AggregationState::new(names.clone());
    let mut err = 0.0;
    for t in 0..n {
        let f: Vec<f64> = forecasts.iter().map(|s| s[t]).collect();
        err += (agg.update(hours[t], &f, targets[t])? - targets[t]).abs();
    }
    println!("aggregated MAE {:.2}", err / n as f64);
    let w = agg.weights(18);
    println!(
        "weights at 18:00: {}",
        w.iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join(" ")
    );

    let data = SelectionData {
        forecasts: &forecasts,
        targets: &targets,
        hours: &hours,
        score_from: n / 2,
    };
    let sel = greedy_select(data, k)?;
    for (size, (j, mae)) in sel.order.iter().zip(&sel.curve).enumerate() {
        println!("{:>2} + {:<8} validation MAE {mae:.3}", size + 1, names[*j]);
    }
    Ok(())
}
