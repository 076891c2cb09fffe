//! The full experiment behind `tailchain run`.
//!
//! Stage streams are `split(seed, id)`: 1 simulation, 2 tail chain paths,
//! 3 two-sample tests, 4 time-change estimates, 5 model-specific checks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use tailchain::chain::{
    battery, family_agrees, sample_bftc_paths, timechange_family, TailChainPath,
};
use tailchain::diagnostics::{binomial_ci, energy_permutation_test, ks_one_sample, TestRecord};
use tailchain::engine::{
    extract_windows, hill_alpha, norm_percentile, simulate_with, ExtremeWindow, SimConfig,
};
use tailchain::measures::norm;
use tailchain::models::{kesten_spectral_fixedpoint_gap, BuiltModel, FixedPointGap};
use tailchain::rng;

use crate::config::ExperimentConfig;
use crate::io::{write_json, write_paths, write_trajectory, write_windows, Sidecar};

/// Ratio `‖X_{-1}‖/‖X_0‖` below which a window counts as started from 0.
pub const EXTINCTION_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub p_value: Option<f64>,
    pub gated: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub percentile: f64,
    pub threshold: f64,
    pub windows: usize,
    pub used: usize,
    pub energy: f64,
    pub p_value: f64,
    pub extinction_windows: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimechangeRow {
    pub functional: String,
    pub i: usize,
    pub estimate: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extinction {
    pub analytic: f64,
    pub bftc: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scaling {
    pub exceed_x: u64,
    pub exceed_2x: u64,
    pub ratio: f64,
    pub expected: f64,
    pub ci: (f64, f64),
    pub hill_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RStarKs {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub model: String,
    pub d: usize,
    pub alpha: f64,
    pub seed: u64,
    pub n: usize,
    pub s: usize,
    pub t: usize,
    pub level: f64,
    pub thresholds: Vec<ThresholdRow>,
    pub extinction: Extinction,
    pub scaling: Scaling,
    pub timechange: Vec<TimechangeRow>,
    pub r_star_ks: Option<RStarKs>,
    pub fixed_point: Option<FixedPointGap>,
    pub records: Vec<TestRecord>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub diagnostics: Diagnostics,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.diagnostics.passed
    }
}

fn evenly_spaced<T: Clone>(items: &[T], m: usize) -> Vec<T> {
    if items.len() <= m {
        return items.to_vec();
    }
    (0..m).map(|k| items[k * items.len() / m].clone()).collect()
}

fn percentile_label(p: f64) -> String {
    format!("{p}")
}

fn window_extinct(w: &ExtremeWindow, s: usize) -> bool {
    s >= 1 && norm(w.at(s, -1)) < EXTINCTION_CUTOFF * norm(w.at(s, 0))
}

/// Runs the experiment and writes its files under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<RunReport> {
    let built = cfg.build_model().context("[models] building model")?;
    let model = built.as_model();
    let (d, alpha, level) = (model.dim(), model.alpha().value(), cfg.level);
    let (s, t) = (cfg.s, cfg.t);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut files = Vec::new();
    let mut checks = Vec::new();
    let mut records = Vec::new();

    // simulation
    let mut sim_cfg = SimConfig::new(cfg.n);
    if let Some(b) = cfg.burn_in {
        sim_cfg = sim_cfg.burn_in(b);
    }
    let traj = simulate_with(model.as_ref(), &sim_cfg, &mut rng::split(cfg.seed, 1))
        .context("[engine] simulating")?;
    let bin = out_dir.join("simulation.bin");
    let header = Sidecar {
        d,
        n: cfg.n,
        seed: cfg.seed,
        model: serde_json::to_value(cfg.model.resolve()?)?,
        burn_in: cfg.burn_in.unwrap_or_else(|| model.burn_in()),
    };
    write_trajectory(&bin, &traj, &header)?;
    files.push(bin.clone());
    files.push(crate::io::sidecar_path(&bin));

    // tail chain paths
    let spec = built
        .bftc_spec()
        .context("[tailchain] building the tail chain")?;
    let paths = sample_bftc_paths(&spec, s, t, cfg.bftc_paths, &mut rng::split(cfg.seed, 2))
        .context("[tailchain] sampling paths")?;
    let bftc_csv = out_dir.join("bftc.csv");
    write_paths(fs::File::create(&bftc_csv)?, &paths, d)?;
    files.push(bftc_csv);
    let flat_paths: Vec<Vec<f64>> = paths.iter().map(TailChainPath::flatten).collect();

    // windows against the tail chain
    let mut test_rng = rng::split(cfg.seed, 3);
    let mut rows = Vec::new();
    let mut top_x = 0.0;
    let all = [&traj];
    for (k, &pct) in cfg.thresholds.iter().enumerate() {
        let x = norm_percentile(&all, pct).context("[engine] threshold")?;
        let windows = extract_windows(&traj, x, s, t)
            .with_context(|| format!("[engine] windows at percentile {pct}"))?;
        let path = out_dir.join(format!("windows_p{}.csv", percentile_label(pct)));
        write_windows(fs::File::create(&path)?, &windows, s, t, d)?;
        files.push(path);
        let used = evenly_spaced(&windows, cfg.max_windows);
        let xs: Vec<Vec<f64>> = used.iter().map(|w| w.normalized.concat()).collect();
        let ys = &flat_paths[..used.len().min(flat_paths.len())];
        let res = energy_permutation_test(&xs, ys, cfg.permutations, &mut test_rng)
            .context("[diagnostics] window comparison")?;
        let name = format!("windows-vs-tail-chain@p{pct}");
        records.push(TestRecord::new(name.clone(), &res, cfg.seed));
        let last = k + 1 == cfg.thresholds.len();
        checks.push(Check {
            name,
            value: res.statistic,
            p_value: Some(res.p_value),
            gated: last,
            passed: !res.rejects(level),
        });
        let extinct = windows.iter().filter(|w| window_extinct(w, s)).count();
        rows.push(ThresholdRow {
            percentile: pct,
            threshold: x,
            windows: windows.len(),
            used: used.len(),
            energy: res.statistic,
            p_value: res.p_value,
            extinction_windows: extinct as f64 / windows.len() as f64,
        });
        top_x = x;
    }

    // backward extinction of the tail chain
    let analytic = match &built {
        BuiltModel::Ar1(m) => m.tail_decomposition()?.p[0],
        BuiltModel::Kesten(_) => 0.0,
    };
    let zeros = if s >= 1 {
        paths.iter().filter(|p| norm(p.at(-1)) == 0.0).count()
    } else {
        0
    };
    let ci = binomial_ci(zeros as u64, paths.len() as u64, 1.0 - level);
    let extinction = Extinction {
        analytic,
        bftc: zeros as f64 / paths.len() as f64,
        ci,
    };
    checks.push(Check {
        name: "backward-extinction".into(),
        value: extinction.bftc,
        p_value: None,
        gated: s >= 1,
        passed: s == 0 || (ci.0 <= analytic && analytic <= ci.1),
    });

    // exceedance scaling
    let norms = traj.norms();
    let exceed_x = norms.iter().filter(|r| **r > top_x).count() as u64;
    let exceed_2x = norms.iter().filter(|r| **r > 2.0 * top_x).count() as u64;
    let expected = 2f64.powf(-alpha);
    let sci = binomial_ci(exceed_2x, exceed_x, 0.99);
    let hill = hill_alpha(&norms, exceed_x as usize)
        .map(|a| a.value())
        .unwrap_or(f64::NAN);
    let scaling = Scaling {
        exceed_x,
        exceed_2x,
        ratio: exceed_2x as f64 / exceed_x as f64,
        expected,
        ci: sci,
        hill_alpha: hill,
    };
    checks.push(Check {
        name: "exceedance-scaling".into(),
        value: scaling.ratio,
        p_value: None,
        gated: false,
        passed: sci.0 <= expected && expected <= sci.1,
    });

    // time-change family
    let fs_ = battery();
    let family = timechange_family(
        &fs_,
        &spec,
        s,
        t,
        cfg.bftc_paths,
        &mut rng::split(cfg.seed, 4),
    )
    .context("[tailchain] time-change family")?;
    let mut timechange = Vec::new();
    let mut agrees = true;
    for (f, fam) in fs_.iter().zip(&family) {
        agrees &= family_agrees(fam);
        for (i, e) in fam.iter().enumerate() {
            timechange.push(TimechangeRow {
                functional: f.name().to_string(),
                i,
                estimate: e.estimate,
                ci: e.ci,
            });
        }
    }
    let worst = family
        .iter()
        .flat_map(|fam| {
            fam.iter().enumerate().flat_map(move |(i, a)| {
                fam[i + 1..]
                    .iter()
                    .map(move |b| (a.estimate - b.estimate).abs() - a.ci - b.ci)
            })
        })
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check {
        name: "time-change-family".into(),
        value: worst,
        p_value: None,
        gated: true,
        passed: agrees,
    });

    // model-specific
    let mut model_rng = rng::split(cfg.seed, 5);
    let (mut r_star_ks, mut fixed_point) = (None, None);
    if let BuiltModel::Kesten(k) = &built {
        let back = k
            .backward_increment()
            .context("[models] backward increment")?;
        if back.analytic_cdf(1.0).is_some() {
            let sample: Vec<f64> = (0..cfg.bftc_paths)
                .map(|_| back.sample_radial(&mut model_rng))
                .collect();
            let ks = ks_one_sample(&sample, |y| back.analytic_cdf(y).unwrap_or(f64::NAN));
            records.push(TestRecord {
                test: "r-star-ks".into(),
                statistic: ks.statistic,
                p_value: ks.p_value,
                n1: ks.n,
                n2: 0,
                seed: cfg.seed,
            });
            checks.push(Check {
                name: "r-star-ks".into(),
                value: ks.statistic,
                p_value: Some(ks.p_value),
                gated: true,
                passed: ks.p_value > level,
            });
            r_star_ks = Some(RStarKs {
                statistic: ks.statistic,
                p_value: ks.p_value,
                n: ks.n,
            });
        }
        let gap = kesten_spectral_fixedpoint_gap(k, cfg.bftc_paths.max(1000), &mut model_rng)
            .context("[models] fixed-point gap")?;
        checks.push(Check {
            name: "spectral-fixed-point".into(),
            value: gap.max_gap,
            p_value: None,
            gated: false,
            passed: !gap.flagged,
        });
        fixed_point = Some(gap);
    }

    let passed = checks.iter().filter(|c| c.gated).all(|c| c.passed);
    let diagnostics = Diagnostics {
        model: cfg.model.label(),
        d,
        alpha,
        seed: cfg.seed,
        n: cfg.n,
        s,
        t,
        level,
        thresholds: rows,
        extinction,
        scaling,
        timechange,
        r_star_ks,
        fixed_point,
        records,
        checks,
        passed,
    };
    let diag_path = out_dir.join("diagnostics.json");
    write_json(&diag_path, &diagnostics)?;
    files.push(diag_path);
    let summary = out_dir.join("summary.txt");
    fs::write(&summary, render_summary(&diagnostics))?;
    files.push(summary);
    Ok(RunReport { diagnostics, files })
}

fn fmt_p(p: Option<f64>) -> String {
    p.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into())
}

/// Human-readable report; the only output carrying a timestamp.
pub fn render_summary(d: &Diagnostics) -> String {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|t| t.as_secs())
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model {} (d = {}, alpha = {}), seed {}, n = {}",
        d.model, d.d, d.alpha, d.seed, d.n
    );
    let _ = writeln!(out, "generated at unix time {now}");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>10} {:>12} {:>8} {:>6} {:>10} {:>8} {:>10}",
        "percentile", "threshold", "windows", "used", "energy", "p-value", "extinct"
    );
    for r in &d.thresholds {
        let _ = writeln!(
            out,
            "{:>10} {:>12.4} {:>8} {:>6} {:>10.5} {:>8.4} {:>10.4}",
            r.percentile, r.threshold, r.windows, r.used, r.energy, r.p_value, r.extinction_windows
        );
    }
    let _ = writeln!(out);
    let e = &d.extinction;
    let _ = writeln!(
        out,
        "backward extinction: tail chain {:.4} [{:.4}, {:.4}], analytic {:.4}",
        e.bftc, e.ci.0, e.ci.1, e.analytic
    );
    let sc = &d.scaling;
    let _ = writeln!(
        out,
        "exceedance ratio #{{>2x}}/#{{>x}}: {:.4} [{:.4}, {:.4}] vs {:.4} ({} exceedances), Hill alpha {:.3}",
        sc.ratio, sc.ci.0, sc.ci.1, sc.expected, sc.exceed_x, sc.hill_alpha
    );
    if let Some(ks) = &d.r_star_ks {
        let _ = writeln!(
            out,
            "R* KS: statistic {:.5}, p-value {:.4}, n = {}",
            ks.statistic, ks.p_value, ks.n
        );
    }
    if let Some(g) = &d.fixed_point {
        let _ = writeln!(
            out,
            "spectral fixed point: max gap {:.5}, flagged {}",
            g.max_gap, g.flagged
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<32} {:>3} {:>12} {:>12}",
        "functional", "i", "estimate", "ci"
    );
    for r in &d.timechange {
        let _ = writeln!(
            out,
            "{:<32} {:>3} {:>12.5} {:>12.5}",
            r.functional, r.i, r.estimate, r.ci
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<36} {:>12} {:>8} {:>6} {:>6}",
        "check", "value", "p-value", "gated", "result"
    );
    for c in &d.checks {
        let _ = writeln!(
            out,
            "{:<36} {:>12.5} {:>8} {:>6} {:>6}",
            c.name,
            c.value,
            fmt_p(c.p_value),
            if c.gated { "yes" } else { "no" },
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "overall: {}", if d.passed { "PASS" } else { "FAIL" });
    out
}
