//! The misspecification story in one run: with correlated innovations
//! (rho = 0.8), the joint estimator stays near the truth while the partial
//! estimator — which ignores the contemporaneous correlation — drags the
//! transition parameters far from their true values.

use tvtp::estimate::{fit, FitOptions};
use tvtp::mc::relabel;
use tvtp::model::{Layout, ModelConfig, Variant};
use tvtp::simulate::{simulate_dgp, DgpSpec};

fn main() -> tvtp::Result<()> {
    let spec = DgpSpec::study(0.8, 1600, 7, 0);
    let data = simulate_dgp(&spec)?;
    println!("T = 1600, rho = 0.8\n");

    println!("{:<10} {:>9} {:>12} {:>12}", "parameter", "truth", "joint", "partial");
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut truths: Vec<f64> = Vec::new();

    for variant in [Variant::Joint, Variant::Partial] {
        let config = match variant {
            Variant::Joint => ModelConfig::joint(2, 1, 1),
            Variant::Partial => ModelConfig::partial(2, 1),
        };
        let truth = spec.params.restrict_to(variant)?;
        let starts = vec![truth.clone(), tvtp::estimate::moment_anchor(&data, &config)?];
        let mut options = FitOptions::new(starts);
        options.grad_tol = 1e-7;
        let result = relabel(&fit(&data, &config, &options)?);
        let layout = Layout::new(&config);
        if variant == Variant::Joint {
            names = layout.names();
            truths = (0..layout.n_free()).map(|j| layout.get_free(&truth, j)).collect();
        }
        columns.push((0..layout.n_free()).map(|j| layout.get_free(&result.theta_hat, j)).collect());
        eprintln!(
            "[{variant:?}] loglik {:.3}, converged {}, grad norm {:.1e}",
            result.loglik, result.converged, result.grad_norm
        );
    }

    for (j, name) in names.iter().enumerate() {
        let partial = columns[1].get(j).map(|v| format!("{v:>12.4}"));
        println!(
            "{:<10} {:>9.4} {:>12.4} {}",
            name,
            truths[j],
            columns[0][j],
            partial.unwrap_or_else(|| format!("{:>12}", "-"))
        );
    }
    println!("\nWatch beta0/alpha0: the partial column drifts far from the truth,");
    println!("the joint column does not — that gap is the cost of treating Z as exogenous.");
    Ok(())
}
