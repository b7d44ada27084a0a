//! Pure demo logic behind the wasm exports: CSV in, JSON out, so the same
//! code paths run under native tests and in the browser.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use maxent::{
    build_grid, fit_scaling, sample_moments, solve_dual, sweep_degrees, Dataset, MaxEntDensity,
    MaxEntFit, MomentBasis, SolverConfig, SolverError, SupportRegion, SweepOptions,
};

const MAX_DEMO_ROWS: usize = 200_000;

/// Generate one-column demo data as CSV text.
pub fn sample_csv(kind: &str, n: u32, seed: u32) -> Result<String, String> {
    if n == 0 || n as usize > MAX_DEMO_ROWS {
        return Err(format!("sample count must be in 1..={MAX_DEMO_ROWS}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let mut out = String::with_capacity(n as usize * 12);
    for _ in 0..n {
        let x = match kind {
            "uniform" => rng.gen_range(-1.0..1.0),
            "normal" => truncated_normal(&mut rng, 0.0, 0.35),
            "bimodal" => {
                let center = if rng.gen_bool(0.5) { -0.5 } else { 0.5 };
                truncated_normal(&mut rng, center, 0.15)
            }
            "skewed" => {
                let u: f64 = rng.gen_range(0.0..1.0);
                u.powf(0.4) * 1.9 - 0.95
            }
            other => return Err(format!("unknown dataset kind `{other}`")),
        };
        out.push_str(&format!("{x:.6}\n"));
    }
    Ok(out)
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sd * z;
        if (-1.0..1.0).contains(&x) {
            return x;
        }
    }
}

/// Fit one degree and return the fitted curve plus diagnostics as JSON.
pub fn fit_density(
    csv: &str,
    degree: u32,
    pad_fraction: f64,
    nodes: u32,
    curve_points: u32,
) -> Result<String, String> {
    let (data, support) = prepare(csv, pad_fraction)?;
    let fit = fit_one(&data, &support, degree, nodes).map_err(|e| e.to_string())?;
    let n = data.n_rows();
    let log_likelihood = n as f64 * fit.dual_value();
    let evidence =
        maxent::evidence(log_likelihood, fit.n_params(), n).map_err(|e| e.to_string())?;
    let curve = curve_json(&fit, curve_points.max(2) as usize);
    let histogram = histogram_json(&data, &support, 40);
    let value = json!({
        "n": n,
        "degree": degree,
        "l": fit.n_params(),
        "support": support_bounds(&support),
        "h_min": fit.h_min(),
        "log_likelihood": log_likelihood,
        "evidence": evidence,
        "iterations": fit.iterations(),
        "grad_norm": fit.grad_norm_final(),
        "converged": fit.converged(),
        "lambda_hat": fit.lambda_hat(),
        "curve": curve,
        "histogram": histogram,
    });
    Ok(value.to_string())
}

/// Sweep the listed degrees, score them by BIC evidence, and return the
/// per-degree table plus the winning curve as JSON.
pub fn sweep_select(
    csv: &str,
    degrees: &str,
    pad_fraction: f64,
    nodes: u32,
    curve_points: u32,
) -> Result<String, String> {
    let (data, support) = prepare(csv, pad_fraction)?;
    let degree_list: Vec<u32> = degrees
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| format!("invalid degree `{s}`"))
        })
        .collect::<Result<Vec<u32>, String>>()?;
    let options = SweepOptions {
        nodes_per_dim: if nodes == 0 { None } else { Some(nodes as usize) },
        allow_odd: true,
    };
    let result = sweep_degrees(
        &data,
        &support,
        &degree_list,
        &SolverConfig::default(),
        &options,
    )
    .map_err(|e| e.to_string())?;
    let evidences: Vec<f64> = result.fits.iter().map(|df| df.evidence).collect();
    let posteriors =
        maxent::posterior_probabilities(&evidences).map_err(|e| e.to_string())?;
    let rows: Vec<serde_json::Value> = result
        .fits
        .iter()
        .zip(&posteriors)
        .map(|(df, p)| {
            json!({
                "degree": df.degree,
                "l": df.fit.n_params(),
                "h_min": df.fit.h_min(),
                "evidence": df.evidence,
                "posterior": p,
                "converged": df.fit.converged(),
            })
        })
        .collect();
    let curve = curve_json(result.selected_fit(), curve_points.max(2) as usize);
    let histogram = histogram_json(&data, &support, 40);
    let value = json!({
        "n": data.n_rows(),
        "support": support_bounds(&support),
        "degrees": rows,
        "selected": result.selected_degree(),
        "curve": curve,
        "histogram": histogram,
    });
    Ok(value.to_string())
}

fn prepare(csv: &str, pad_fraction: f64) -> Result<(Dataset, SupportRegion), String> {
    let data = Dataset::from_csv_str(csv).map_err(|e| e.to_string())?;
    if data.dim() != 1 {
        return Err(format!(
            "the demo fits one-column data; got {} columns",
            data.dim()
        ));
    }
    if !(0.0..=2.0).contains(&pad_fraction) {
        return Err("pad fraction must lie in [0, 2]".to_string());
    }
    let (lo, hi) = data.column_range(0);
    let range = hi - lo;
    if range <= 0.0 {
        return Err("data column has zero range".to_string());
    }
    let support = SupportRegion::bounded_box(vec![(
        lo - pad_fraction * range,
        hi + pad_fraction * range,
    )])
    .map_err(|e| e.to_string())?;
    Ok((data, support))
}

fn fit_one(
    data: &Dataset,
    support: &SupportRegion,
    degree: u32,
    nodes: u32,
) -> Result<MaxEntFit, SolverError> {
    let scaling = fit_scaling(data, support).expect("data inside its own padded box");
    let basis = MomentBasis::new(1, degree, scaling).expect("validated degree");
    let nodes = if nodes == 0 {
        maxent::default_nodes_per_dim(1)
    } else {
        nodes as usize
    }
    .max(degree as usize + 1);
    let grid = build_grid(support, &basis, nodes).expect("validated grid");
    let moments = sample_moments(data, &basis).expect("dimensions match");
    solve_dual(&grid, &moments, &SolverConfig::default())
}

fn curve_json(fit: &MaxEntFit, points: usize) -> serde_json::Value {
    let density = MaxEntDensity::from_fit(fit.clone());
    let (lo, hi) = match fit.support() {
        SupportRegion::Box { bounds } => bounds[0],
        SupportRegion::Ball { radius, .. } => (-radius, *radius),
    };
    let mut xs = Vec::with_capacity(points);
    let mut fs = Vec::with_capacity(points);
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        xs.push(x);
        fs.push(density.density_at(&[x]));
    }
    json!({ "x": xs, "density": fs })
}

fn histogram_json(data: &Dataset, support: &SupportRegion, bins: usize) -> serde_json::Value {
    let (lo, hi) = match support {
        SupportRegion::Box { bounds } => bounds[0],
        SupportRegion::Ball { radius, .. } => (-radius, *radius),
    };
    let width = (hi - lo) / bins.max(1) as f64;
    let mut counts = vec![0usize; bins];
    for row in 0..data.n_rows() {
        let x = data.row(row)[0];
        let mut b = ((x - lo) / width) as usize;
        if b >= bins {
            b = bins - 1;
        }
        counts[b] += 1;
    }
    let scale = 1.0 / (data.n_rows() as f64 * width);
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let density: Vec<f64> = counts.iter().map(|&c| c as f64 * scale).collect();
    json!({ "edges": edges, "density": density })
}

fn support_bounds(support: &SupportRegion) -> Vec<f64> {
    match support {
        SupportRegion::Box { bounds } => vec![bounds[0].0, bounds[0].1],
        SupportRegion::Ball { radius, .. } => vec![-radius, *radius],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_kinds_produce_parseable_csv() {
        for kind in ["uniform", "normal", "bimodal", "skewed"] {
            let csv = sample_csv(kind, 500, 1).unwrap();
            let data = Dataset::from_csv_str(&csv).unwrap();
            assert_eq!(data.n_rows(), 500);
            assert_eq!(data.dim(), 1);
        }
        assert!(sample_csv("cauchy", 10, 1).is_err());
        assert!(sample_csv("uniform", 0, 1).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample_csv("bimodal", 100, 9).unwrap();
        let b = sample_csv("bimodal", 100, 9).unwrap();
        let c = sample_csv("bimodal", 100, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fit_returns_normalized_curve() {
        let csv = sample_csv("normal", 2000, 3).unwrap();
        let out = fit_density(&csv, 2, 0.1, 128, 201).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["n"], 2000);
        assert_eq!(v["converged"], true);
        let xs = v["curve"]["x"].as_array().unwrap();
        let fs = v["curve"]["density"].as_array().unwrap();
        assert_eq!(xs.len(), 201);
        // trapezoid mass of the curve is close to one
        let mut mass = 0.0;
        for i in 1..xs.len() {
            let dx = xs[i].as_f64().unwrap() - xs[i - 1].as_f64().unwrap();
            mass += 0.5 * dx * (fs[i].as_f64().unwrap() + fs[i - 1].as_f64().unwrap());
        }
        assert!((mass - 1.0).abs() < 1e-3, "curve mass {mass}");
    }

    #[test]
    fn sweep_reports_selected_degree_and_posteriors() {
        let csv = sample_csv("bimodal", 4000, 5).unwrap();
        let out = sweep_select(&csv, "2,4,6", 0.1, 128, 101).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let rows = v["degrees"].as_array().unwrap();
        assert_eq!(rows.len(), 3);
        let posterior_sum: f64 = rows
            .iter()
            .map(|r| r["posterior"].as_f64().unwrap())
            .sum();
        assert!((posterior_sum - 1.0).abs() < 1e-9);
        // bimodal data needs more than a quadratic tilt
        assert!(v["selected"].as_u64().unwrap() >= 4);
    }

    #[test]
    fn rejects_multicolumn_and_garbage() {
        assert!(fit_density("1,2\n3,4\n", 2, 0.1, 64, 50).is_err());
        assert!(fit_density("abc\n", 2, 0.1, 64, 50).is_err());
        assert!(sweep_select("1\n2\n3\n", "2,x", 0.1, 64, 50).is_err());
    }
}
