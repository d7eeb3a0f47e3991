use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};

use cccert::lab::{
    berry_esseen_rhs, fft_mean_density, log_yup, yup_population, BerryEsseenMode, MomentSummary,
    XDistribution, DEFAULT_Q, REFERENCE_TABLE, YUP_T_RANGE,
};

use crate::util::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BeMode {
    /// C·ρ/(σ⁴·n)
    Paper,
    /// C·ρ/(σ³·√n)
    Standard,
}

impl From<BeMode> for BerryEsseenMode {
    fn from(m: BeMode) -> Self {
        match m {
            BeMode::Paper => BerryEsseenMode::Paper,
            BeMode::Standard => BerryEsseenMode::Standard,
        }
    }
}

/// A Y^up row request, `DIST:N:A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSpec {
    pub dist: XDistribution,
    pub n: usize,
    pub a: f64,
}

fn parse_row(s: &str) -> Result<RowSpec, String> {
    // The distribution itself may contain colons only via N(0,SD), so split from the right.
    let mut parts = s.rsplitn(3, ':');
    let (Some(a), Some(n), Some(dist)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("expected DIST:N:A, got `{s}`"));
    };
    let dist: XDistribution = dist.parse().map_err(|e: cccert::Error| e.to_string())?;
    let n: usize = n.parse().map_err(|_| format!("bad n `{n}`"))?;
    let a: f64 = a.parse().map_err(|_| format!("bad a `{a}`"))?;
    if n < 1 || !a.is_finite() {
        return Err(format!("need n >= 1 and finite a in `{s}`"));
    }
    Ok(RowSpec { dist, n, a })
}

/// FFT density request: `t=T n=N m=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftSpec {
    pub t: f64,
    pub n: usize,
    pub m: usize,
}

fn parse_fft(tokens: &[String]) -> anyhow::Result<FftSpec> {
    let (mut t, mut n, mut m) = (None, None, 200usize);
    for tok in tokens
        .iter()
        .flat_map(|s| s.split([' ', ',']))
        .filter(|s| !s.is_empty())
    {
        let Some((k, v)) = tok.split_once('=') else {
            return usage(format!("--fft expects key=value pairs, got `{tok}`"));
        };
        let bad = || usage::<()>(format!("--fft: bad value `{v}` for {k}"));
        match k {
            "t" => match v.parse() {
                Ok(x) => t = Some(x),
                Err(_) => bad()?,
            },
            "n" => match v.parse() {
                Ok(x) => n = Some(x),
                Err(_) => bad()?,
            },
            "m" => match v.parse() {
                Ok(x) => m = x,
                Err(_) => bad()?,
            },
            other => return usage(format!("--fft: unknown key `{other}` (t, n, m)")),
        }
    }
    match (t, n) {
        (Some(t), Some(n)) => Ok(FftSpec { t, n, m }),
        _ => usage("--fft needs t=T and n=N (m=M defaults to 200)"),
    }
}

#[derive(Debug, Args)]
pub struct LabArgs {
    /// Write the Y^up minimum table as CSV.
    #[arg(long, value_name = "PATH")]
    pub yup_table: Option<PathBuf>,
    /// Write Y^up(t) on a log t grid for each row as CSV.
    #[arg(long, value_name = "PATH")]
    pub yup_curve: Option<PathBuf>,
    /// Rows DIST:N:A, e.g. U(0,1):100:1.2 or N(0,3):1000:9 [default: the reference table].
    #[arg(long = "row", value_name = "ROW", value_parser = parse_row)]
    pub rows: Vec<RowSpec>,
    /// Confidence multiplier q in Y^up.
    #[arg(long, default_value_t = DEFAULT_Q)]
    pub q: f64,
    /// Points on the Y^up curve grid.
    #[arg(long, default_value_t = 200)]
    pub curve_points: usize,

    /// Write the Berry-Esseen bound for X ~ U(0,1) as CSV.
    #[arg(long, value_name = "PATH")]
    pub be: Option<PathBuf>,
    /// Berry-Esseen formula.
    #[arg(long, value_enum, default_value_t = BeMode::Paper)]
    pub be_mode: BeMode,
    /// Sample sizes for the Berry-Esseen curves.
    #[arg(
        long,
        value_name = "LIST",
        value_delimiter = ',',
        default_value = "10,100,1000"
    )]
    pub be_n: Vec<usize>,
    /// Smallest t of the Berry-Esseen log grid.
    #[arg(long, default_value_t = 0.01)]
    pub be_t_min: f64,
    /// Largest t of the Berry-Esseen log grid.
    #[arg(long, default_value_t = 1000.0)]
    pub be_t_max: f64,
    /// Points on the Berry-Esseen grid.
    #[arg(long, default_value_t = 100)]
    pub be_points: usize,

    /// Density of the mean of n copies of e^{tX}, X ~ U(0,1): t=T n=N [m=M].
    #[arg(long, value_name = "KEY=VALUE", num_args = 1..=3)]
    pub fft: Option<Vec<String>>,
    /// Output of --fft.
    #[arg(long, value_name = "PATH", default_value = "fft-density.csv")]
    pub fft_out: PathBuf,
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> anyhow::Result<()> {
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn run(args: LabArgs) -> anyhow::Result<()> {
    let fft = args.fft.as_deref().map(parse_fft).transpose()?;
    if args.yup_table.is_none() && args.yup_curve.is_none() && args.be.is_none() && fft.is_none() {
        return usage("nothing to do: pass --yup-table, --yup-curve, --be or --fft");
    }
    if !(args.q >= 0.0 && args.q.is_finite()) {
        return usage("--q must be a finite non-negative number");
    }
    let custom = !args.rows.is_empty();
    let rows: Vec<(RowSpec, Option<(f64, f64)>)> = if custom {
        args.rows.iter().map(|&r| (r, None)).collect()
    } else {
        REFERENCE_TABLE
            .iter()
            .map(|r| {
                (
                    RowSpec {
                        dist: r.dist,
                        n: r.n,
                        a: r.a,
                    },
                    Some((r.t_min, r.yup)),
                )
            })
            .collect()
    };
    let mut flagged = 0usize;

    if let Some(path) = &args.yup_table {
        let mut w = csv_writer(path)?;
        w.write_record([
            "dist",
            "n",
            "a",
            "t_min",
            "yup",
            "reference_t_min",
            "reference_yup",
            "status",
        ])?;
        for (row, reference) in &rows {
            let (pt, py) =
                reference.map_or((String::new(), String::new()), |(t, y)| (num(t), num(y)));
            let (t, y, status) = match yup_population(row.dist, row.n, row.a, args.q) {
                Ok(m) => (num(m.t_min), num(m.y_min), "ok".to_string()),
                Err(e) => {
                    flagged += 1;
                    log::warn!("{}:{}:{}: {e}", row.dist, row.n, row.a);
                    (String::new(), String::new(), e.to_string())
                }
            };
            w.write_record([
                row.dist.to_string(),
                row.n.to_string(),
                num(row.a),
                t,
                y,
                pt,
                py,
                status,
            ])?;
        }
        finish(w, path)?;
    }

    if let Some(path) = &args.yup_curve {
        if args.curve_points < 2 {
            return usage("--curve-points must be at least 2");
        }
        let mut w = csv_writer(path)?;
        w.write_record(["dist", "n", "a", "t", "yup", "status"])?;
        for (row, _) in &rows {
            let m = MomentSummary::population(row.dist.mean(), row.dist.variance(), row.n, args.q)?;
            for t in log_grid(YUP_T_RANGE.0, YUP_T_RANGE.1, args.curve_points) {
                let v = log_yup(t, row.a, &m).exp();
                let (cell, status) = if v.is_finite() {
                    (num(v), "ok")
                } else {
                    flagged += 1;
                    (String::new(), "overflow")
                };
                w.write_record([
                    row.dist.to_string(),
                    row.n.to_string(),
                    num(row.a),
                    num(t),
                    cell,
                    status.into(),
                ])?;
            }
        }
        finish(w, path)?;
    }

    if let Some(path) = &args.be {
        if !(args.be_t_min > 0.0 && args.be_t_max >= args.be_t_min && args.be_points >= 1) {
            return usage("Berry-Esseen grid needs 0 < be-t-min <= be-t-max and be-points >= 1");
        }
        if args.be_n.contains(&0) {
            return usage("--be-n values must be at least 1");
        }
        let mode: BerryEsseenMode = args.be_mode.into();
        let formula = match mode {
            BerryEsseenMode::Paper => "C*rho/(sigma^4*n)",
            BerryEsseenMode::Standard => "C*rho/(sigma^3*sqrt(n))",
        };
        if mode == BerryEsseenMode::Paper {
            log::info!(
                "paper mode uses {formula}; the classical statement is C*rho/(sigma^3*sqrt(n))"
            );
        }
        let mut w = csv_writer(path)?;
        w.write_record(["t", "n", "mode", "formula", "rhs", "status"])?;
        for &n in &args.be_n {
            for t in log_grid(args.be_t_min, args.be_t_max, args.be_points) {
                let (cell, status) = match berry_esseen_rhs(t, n, mode) {
                    Ok(v) if v.is_finite() => (num(v), "ok".to_string()),
                    Ok(_) => {
                        flagged += 1;
                        (String::new(), "overflow".to_string())
                    }
                    Err(e) => {
                        flagged += 1;
                        (String::new(), e.to_string())
                    }
                };
                let mode_name = match mode {
                    BerryEsseenMode::Paper => "paper",
                    BerryEsseenMode::Standard => "standard",
                };
                w.write_record([
                    num(t),
                    n.to_string(),
                    mode_name.into(),
                    formula.into(),
                    cell,
                    status,
                ])?;
            }
        }
        finish(w, path)?;
    }

    if let Some(spec) = fft {
        let d = fft_mean_density(spec.t, spec.n, spec.m)?;
        let mut w = csv_writer(&args.fft_out)?;
        w.write_record(["y", "mass", "lower", "upper"])?;
        for (i, (y, p)) in d.support.iter().zip(&d.masses).enumerate() {
            let lo = d.lower.as_ref().map_or(String::new(), |v| num(v[i]));
            let hi = d.upper.as_ref().map_or(String::new(), |v| num(v[i]));
            w.write_record([num(*y), num(*p), lo, hi])?;
        }
        finish(w, &args.fft_out)?;
        log::info!(
            "t={} n={} m={}: total mass {:.12}, mean {:.8}",
            spec.t,
            spec.n,
            spec.m,
            d.total_mass(),
            d.mean()
        );
    }
    if flagged > 0 {
        log::warn!("{flagged} entries flagged as non-finite; see the status column");
    }
    Ok(())
}
