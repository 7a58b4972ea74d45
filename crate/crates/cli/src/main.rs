//! Experiment driver for the regular-ROBP error-reduction framework:
//! program generation, invariant suites, weighted-PRG evaluation sweeps,
//! deterministic expectation estimates, and report emission.
//!
//! Exit codes: 0 pass, 1 invariant failure, 2 input error.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use regwprg_core::approx::{
    bs_intervals, delta_identity_residual, level_matrix, BaseProvider, EpsSchedule, LevelKey,
    PerturbMode,
};
use regwprg_core::ratlin::{rat_from_str, rat_int, rat_to_f64, rat_to_string};
use regwprg_core::robp::{gen_regular, ProgramJson, RegularRobp};
use regwprg_core::spacerec::{
    estimate_expectation, lca, lca_definition_scan, newrec_matrix, newrec_plan_depth,
    richardson_check, GeneralLevels, NewrecEngine,
};
use regwprg_core::svapprox::{sv_error, sv_main_harness, sv_norm_check};
use regwprg_core::weights::{
    default_weight_cap, structured_test_set, total_weight, wprg_main_harness,
};
use regwprg_core::wprg::{
    build_wprg, enum_bits_width, enum_term, eval_wprg, eval_wprg_sampled, expand,
    expand_signed_sum, G0Config, G0Generator, WprgBuildParams, EVAL_SEED_BITS_CAP,
};
use regwprg_core::Rat;

const EXIT_FAIL: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "regwprg",
    about = "Error-reduction toolkit for regular read-once branching programs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded regular program and write it as JSON.
    Gen {
        /// Program length; must be a power of two.
        n: usize,
        /// Program width.
        w: usize,
        /// Generator seed.
        seed: u64,
        /// Output path for the program JSON.
        out: PathBuf,
    },
    /// Run an invariant suite against a program file.
    Verify {
        program: PathBuf,
        /// One of: identity, weights, sv, expand, newrec, richardson, eps.
        suite: String,
        /// Maximum recursion level for the matrix suites.
        #[arg(long, default_value_t = 3)]
        k: u32,
        /// Level sweep bound for the eps suite.
        #[arg(long, default_value_t = 50)]
        kmax: u32,
        /// Schedule parameter gamma, exact rational or decimal, in (0, 1/2).
        #[arg(long, default_value = "1/4")]
        gamma: String,
        /// Budget family: standard (quadratic denominator) or uniform
        /// (flat denominator with level cap kmax).
        #[arg(long, default_value = "standard")]
        schedule: String,
        /// Base provider: exact, perturbed, prg, rounded.
        #[arg(long, default_value = "perturbed")]
        provider: String,
        /// Perturbation budget (defaults to eps(0)/3 of the schedule).
        #[arg(long)]
        delta: Option<String>,
        /// Perturbation mode: inf, weight, sv.
        #[arg(long, default_value = "inf")]
        mode: String,
        /// Dyadic grid exponent for the rounded provider.
        #[arg(long, default_value_t = 12)]
        grid: u32,
        /// Numeric tolerance for the spectral checks.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Seed for providers and random test tuples.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random tuples drawn by the fact checks.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Report path (JSON or CSV depending on the suite).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the weighted PRG and evaluate it against the exact expectation.
    Wprg {
        program: PathBuf,
        /// Target error, exact rational or decimal.
        eps: String,
        /// Schedule parameter gamma.
        gamma: String,
        /// Monte Carlo sample count when the seed space exceeds the cap.
        #[arg(long)]
        sample: Option<u64>,
        /// Expander degree exponent for the walk generator.
        #[arg(long, default_value_t = 8)]
        degree_bits: u32,
        /// Base generator symbol width.
        #[arg(long, default_value_t = 2)]
        g0_symbol_bits: u32,
        /// Base generator expander degree exponent (default fits the length).
        #[arg(long)]
        g0_degree_bits: Option<u32>,
        /// Fixed spectral threshold (default adapts to the graph size).
        #[arg(long)]
        lambda_threshold: Option<f64>,
        /// Seed for expander generation.
        #[arg(long, default_value_t = 0)]
        graph_seed: u64,
        /// CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deterministically estimate the acceptance probability within eps.
    Estimate {
        program: PathBuf,
        /// Target error, exact rational or decimal, positive.
        eps: String,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pad a program with identity layers up to a longer power-of-two length.
    Pad {
        program: PathBuf,
        target: usize,
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("REGWPRG_THREADS") {
        if let Ok(t) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { n, w, seed, out } => cmd_gen(n, w, seed, &out),
        Command::Verify {
            program,
            suite,
            k,
            kmax,
            gamma,
            schedule,
            provider,
            delta,
            mode,
            grid,
            tol,
            seed,
            count,
            out,
        } => {
            let cfg = VerifyConfig {
                program: program.display().to_string(),
                suite,
                k,
                kmax,
                gamma,
                schedule,
                provider,
                delta,
                mode,
                grid,
                tol,
                seed,
                count,
            };
            cmd_verify(&program, cfg, out.as_deref())
        }
        Command::Wprg {
            program,
            eps,
            gamma,
            sample,
            degree_bits,
            g0_symbol_bits,
            g0_degree_bits,
            lambda_threshold,
            graph_seed,
            out,
        } => cmd_wprg(WprgArgs {
            path: program,
            eps,
            gamma,
            sample,
            degree_bits,
            g0_symbol_bits,
            g0_degree_bits,
            lambda_threshold,
            graph_seed,
            out,
        }),
        Command::Estimate { program, eps, out } => cmd_estimate(&program, &eps, out.as_deref()),
        Command::Pad { program, target, out } => cmd_pad(&program, target, &out),
    }
}

fn load_program(path: &Path) -> Result<Arc<RegularRobp>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading program file {}", path.display()))?;
    let json: ProgramJson =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let program =
        RegularRobp::from_json(&json).with_context(|| format!("validating {}", path.display()))?;
    Ok(Arc::new(program))
}

fn parse_rat(s: &str, what: &str) -> Result<Rat> {
    rat_from_str(s).map_err(|e| anyhow!("invalid {what} {s:?}: {e}"))
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing report {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_gen(n: usize, w: usize, seed: u64, out: &Path) -> Result<ExitCode> {
    let program = gen_regular(n, w, seed)?;
    let json = serde_json::to_string_pretty(&program.to_json())?;
    std::fs::write(out, format!("{json}\n"))
        .with_context(|| format!("writing {}", out.display()))?;
    let verdict = regwprg_core::robp::check_regular(w, &program.to_json().layers);
    println!(
        "wrote {} (n={n}, w={w}, seed={seed}); regular: {}",
        out.display(),
        verdict.is_ok()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Clone)]
struct VerifyConfig {
    program: String,
    suite: String,
    k: u32,
    kmax: u32,
    gamma: String,
    schedule: String,
    provider: String,
    delta: Option<String>,
    mode: String,
    grid: u32,
    tol: f64,
    seed: u64,
    count: usize,
}

impl VerifyConfig {
    fn perturb_mode(&self) -> Result<PerturbMode> {
        Ok(match self.mode.as_str() {
            "inf" => PerturbMode::Inf,
            "weight" => PerturbMode::Weight,
            "sv" => PerturbMode::Sv,
            other => bail!("unknown perturbation mode {other:?} (want inf|weight|sv)"),
        })
    }

    fn delta(&self, schedule: &EpsSchedule) -> Result<Rat> {
        match &self.delta {
            Some(s) => parse_rat(s, "delta"),
            None => Ok(schedule.eps(0) / rat_int(3)),
        }
    }
}

fn make_provider(
    program: &Arc<RegularRobp>,
    cfg: &VerifyConfig,
    schedule: &EpsSchedule,
    mode_override: Option<PerturbMode>,
) -> Result<BaseProvider> {
    Ok(match cfg.provider.as_str() {
        "exact" => BaseProvider::exact(program.clone()),
        "perturbed" => {
            let mode = mode_override.map(Ok).unwrap_or_else(|| cfg.perturb_mode())?;
            BaseProvider::perturbed(program.clone(), cfg.delta(schedule)?, mode, cfg.seed)
        }
        "rounded" => BaseProvider::rounded(program.clone(), cfg.grid),
        "prg" => {
            let g0 = G0Generator::build(program.n(), G0Config::fitted(program.n(), cfg.seed))?;
            BaseProvider::prg_backed(program.clone(), Arc::new(g0))
        }
        other => bail!("unknown provider {other:?} (want exact|perturbed|prg|rounded)"),
    })
}

fn cmd_verify(path: &Path, cfg: VerifyConfig, out: Option<&Path>) -> Result<ExitCode> {
    let program = load_program(path)?;
    let gamma = parse_rat(&cfg.gamma, "gamma")?;
    let n = program.n().max(2);
    let schedule = match cfg.schedule.as_str() {
        "standard" => EpsSchedule::new(gamma, n)?,
        "uniform" => EpsSchedule::uniform_denominator(gamma, n, cfg.kmax)?,
        other => bail!("unknown schedule {other:?} (want standard|uniform)"),
    };
    let pass = match cfg.suite.as_str() {
        "identity" => suite_identity(&program, &cfg, &schedule, out)?,
        "eps" => suite_eps(&cfg, &schedule, out)?,
        "weights" => suite_weights(&program, &cfg, &schedule, out)?,
        "sv" => suite_sv(&program, &cfg, &schedule, out)?,
        "expand" => suite_expand(&program, &cfg, &schedule, out)?,
        "newrec" => suite_newrec(&program, &cfg, &schedule, out)?,
        "richardson" => suite_richardson(&program, &cfg, &schedule, out)?,
        other => bail!("unknown suite {other:?}"),
    };
    println!("suite {}: {}", cfg.suite, if pass { "pass" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) })
}

#[derive(Serialize)]
struct IdentityVerdict {
    key: LevelKey,
    residual_inf_norm: String,
}

fn suite_identity(
    program: &Arc<RegularRobp>,
    cfg: &VerifyConfig,
    schedule: &EpsSchedule,
    out: Option<&Path>,
) -> Result<bool> {
    let provider = make_provider(program, cfg, schedule, None)?;
    let mut verdicts = Vec::new();
    let mut pass = true;
    for (l, r) in bs_intervals(program.n()) {
        if r - l <= 1 {
            continue;
        }
        for k in 1..=cfg.k {
            let key = LevelKey::new(l, r, k);
            let residual = delta_identity_residual(&provider, key)?;
            if !residual.is_zero() {
                pass = false;
            }
            verdicts.push(IdentityVerdict {
                key,
                residual_inf_norm: rat_to_string(&residual.inf_norm()),
            });
        }
    }
    let report = serde_json::json!({ "config": cfg, "results": verdicts, "pass": pass });
    write_or_print(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    Ok(pass)
}

fn suite_eps(cfg: &VerifyConfig, schedule: &EpsSchedule, out: Option<&Path>) -> Result<bool> {
    let rows = schedule.check_inequality(cfg.kmax);
    let pass = rows.iter().all(|r| r.pass);
    let report = serde_json::json!({ "config": cfg, "results": rows, "pass": pass });
    write_or_print(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    Ok(pass)
}

fn random_rat_vector(w: usize, seed: u64) -> regwprg_core::RatVector {
    use rand_core::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    regwprg_core::ratlin::Vector::from_fn(w, |_| {
        let x = (rng.next_u64() % 65) as i64 - 32;
        regwprg_core::ratlin::rat(x, 16)
    })
}

fn suite_weights(
    program: &Arc<RegularRobp>,
    cfg: &VerifyConfig,
    schedule: &EpsSchedule,
    out: Option<&Path>,
) -> Result<bool> {
    use num::Zero;
    let n = program.n();
    let w = program.w();
    let cap = default_weight_cap(w);
    let mut facts_pass = true;
    for i in 0..cfg.count {
        let y = random_rat_vector(w, cfg.seed ^ ((i as u64) << 16));
        let l = (i * 7) % n;
        let r = l + 1 + (i * 5) % (n - l);
        let m = l + (r - l) / 2;
        let whole = total_weight(program, l, r, &y)?;
        if m > l && m < r {
            let suffix = program.rw_matrix(m, r)?.mat_vec(&y)?;
            let left = total_weight(program, l, m, &suffix)?;
            let right = total_weight(program, m, r, &y)?;
            facts_pass &= whole == left.clone() + right.clone();
            facts_pass &= left.max(right) <= whole;
        }
        facts_pass &= whole <= cap.clone() * y.inf_norm();
        let constant =
            regwprg_core::ratlin::Vector::from_fn(w, |_| regwprg_core::ratlin::rat(3, 7));
        facts_pass &= total_weight(program, l, r, &constant)?.is_zero();
    }
    // Weight certification needs the weight-projected perturbation.
    let provider = make_provider(program, cfg, schedule, Some(PerturbMode::Weight))?;
    let test_set = structured_test_set(w, cfg.seed, 8);
    let rows = wprg_main_harness(&provider, schedule, cfg.k, &test_set)
        .map_err(|e| anyhow!("weight harness: {e}"))?;
    let harness_pass = rows.iter().all(|r| r.pass);
    let mut csv = String::from("l,r,k,t,measured,bound,pass\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.l,
            row.r,
            row.k,
            row.t,
            rat_to_string(&row.measured),
            rat_to_string(&row.bound),
            row.pass
        ));
    }
    let content = format!("# config: {}\n{csv}", serde_json::to_string(cfg)?);
    write_or_print(out, &content)?;
    if !facts_pass {
        eprintln!("weight facts failed on random tuples");
    }
    Ok(facts_pass && harness_pass)
}

fn suite_sv(
    program: &Arc<RegularRobp>,
    cfg: &VerifyConfig,
    schedule: &EpsSchedule,
    out: Option<&Path>,
) -> Result<bool> {
    use num::Signed;
    use regwprg_core::svapprox::mixing_gap;
    let n = program.n();
    let w = program.w();
    let mut facts_pass = true;
    for i in 0..cfg.count {
        let y = random_rat_vector(w, cfg.seed ^ 0xD00D ^ ((i as u64) << 8));
        let l = (i * 3) % n;
        let r = l + 1 + (i * 11) % (n - l);
        let m = l + (r - l) / 2;
        let a = program.rw_matrix(l, m)?;
        let b = program.rw_matrix(m, r)?;
        let chain = mixing_gap(&b, &y)? + mixing_gap(&a, &b.mat_vec(&y)?)?;
        facts_pass &= chain == mixing_gap(&a.mat_mul(&b)?, &y)?;
        facts_pass &= !mixing_gap(&program.rw_matrix(l, r)?, &y)?.is_negative();
    }
    let full = program.rw_matrix(0, n)?;
    let self_cert = sv_error(&full, &full, cfg.tol)?;
    facts_pass &= self_cert.eps_measured == 0.0 && self_cert.kernel_ok;

    // SV certification needs the kernel-projected perturbation.
    let provider = make_provider(program, cfg, schedule, Some(PerturbMode::Sv))?;
    let candidate = provider.level0(0, n).map_err(|e| anyhow!("{e}"))?;
    let cert = sv_error(&full, &candidate, cfg.tol)?;
    let norm_rows = sv_norm_check(
        &full,
        &candidate,
        cert.eps_measured,
        &structured_test_set(w, cfg.seed, 8),
        cfg.tol,
    )?;
    facts_pass &= norm_rows.iter().all(|r| r.pass);

    let rows = sv_main_harness(&provider, schedule, cfg.k, cfg.tol)
        .map_err(|e| anyhow!("sv harness: {e}"))?;
    let harness_pass = rows.iter().all(|r| r.pass);
    let report = serde_json::json!({
        "config": cfg,
        "self_certificate": self_cert,
        "norm_check": norm_rows,
        "harness": rows,
        "pass": facts_pass && harness_pass,
    });
    write_or_print(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    Ok(facts_pass && harness_pass)
}

fn suite_expand(
    program: &Arc<RegularRobp>,
    cfg: &VerifyConfig,
    schedule: &EpsSchedule,
    out: Option<&Path>,
) -> Result<bool> {
    let n = program.n();
    let provider = make_provider(program, cfg, schedule, None)?;
    let mut pass = true;
    let mut rows = Vec::new();
    for (l, r) in bs_intervals(n) {
        let t = (r - l).trailing_zeros();
        for k in 0..=cfg.k {
            let terms = expand(l, r, k, n)?;
            let sum = expand_signed_sum(&provider, l, r, k)?;
            let lvl = level_matrix(&provider, LevelKey::new(l, r, k))?;
            let equal = sum == lvl;
            let size_ok = (terms.len() as f64) <= ((r - l) as f64).powi(2 * k as i32);
            let len_ok = terms.iter().all(|sq| sq.len() <= (k * t) as usize + 1);
            pass &= equal && size_ok && len_ok;
            rows.push(serde_json::json!({
                "l": l, "r": r, "k": k,
                "terms": terms.len(),
                "sum_equals_recursion": equal,
                "size_bound_ok": size_ok,
                "length_bound_ok": len_ok,
            }));
        }
    }
    let mut enum_ok = true;
    if n <= 8 {
        for k in 0..=cfg.k.min(2) {
            let width = enum_bits_width(n, k);
            let mut collected: Vec<_> = (0..(1u64 << width))
                .map(|i| {
                    let bits: Vec<bool> = (0..width).map(|b| (i >> b) & 1 == 1).collect();
                    enum_term(n, k, &bits)
                })
                .filter(|sq| !sq.is_dummy())
                .collect();
            collected.sort();
            let mut expected = expand(0, n, k, n)?;
            expected.sort();
            enum_ok &= collected == expected;
        }
    }
    pass &= enum_ok;
    let report = serde_json::json!({
        "config": cfg, "results": rows, "enumeration_multiset_ok": enum_ok, "pass": pass,
    });
    write_or_print(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    Ok(pass)
}

fn suite_newrec(
    program: &Arc<RegularRobp>,
    cfg: &VerifyConfig,
    schedule: &EpsSchedule,
    out: Option<&Path>,
) -> Result<bool> {
    let n = program.n();
    let provider = make_provider(program, cfg, schedule, None)?;
    let levels = GeneralLevels::new(&provider);
    let engine = NewrecEngine::new(&provider);
    let mut pass = true;
    let mut checked = 0u64;
    for l in 0..n {
        for r in (l + 1)..=n {
            if r - l > 1 {
                pass &= lca(l, r)? == lca_definition_scan(l, r, n)?;
            }
            for k in 1..=cfg.k {
                for h in 1..=k {
                    let expected = levels.matrix(l, r, k)?;
                    let via_engine = engine.matrix(l, r, k, h)?;
                    pass &= via_engine == expected;
                    checked += 1;
                    if n <= 8 {
                        let (honest, ledger) = newrec_matrix(&provider, l, r, k, h)?;
                        pass &= honest == expected;
                        let bound =
                            (k.max(1) as usize).next_power_of_two().trailing_zeros() + 1;
                        pass &= ledger.max_recursion_depth <= bound;
                    }
                }
            }
        }
    }
    let mut depth_ok = true;
    for k in 1..=64u32 {
        depth_ok &= newrec_plan_depth(k, None)
            <= (k as usize).next_power_of_two().trailing_zeros() + 1;
    }
    pass &= depth_ok;
    let report = serde_json::json!({
        "config": cfg, "identities_checked": checked, "plan_depth_ok": depth_ok, "pass": pass,
    });
    write_or_print(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    Ok(pass)
}

fn suite_richardson(
    program: &Arc<RegularRobp>,
    cfg: &VerifyConfig,
    schedule: &EpsSchedule,
    out: Option<&Path>,
) -> Result<bool> {
    let provider = make_provider(program, cfg, schedule, None)?;
    let report = richardson_check(&provider, cfg.k)?;
    let pass = report.all_ok;
    let doc = serde_json::json!({ "config": cfg, "results": report, "pass": pass });
    write_or_print(out, &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    Ok(pass)
}

struct WprgArgs {
    path: PathBuf,
    eps: String,
    gamma: String,
    sample: Option<u64>,
    degree_bits: u32,
    g0_symbol_bits: u32,
    g0_degree_bits: Option<u32>,
    lambda_threshold: Option<f64>,
    graph_seed: u64,
    out: Option<PathBuf>,
}

fn cmd_wprg(args: WprgArgs) -> Result<ExitCode> {
    use num::Signed;
    let program = load_program(&args.path)?;
    let eps = parse_rat(&args.eps, "eps")?;
    let gamma = parse_rat(&args.gamma, "gamma")?;
    let g0_config = G0Config {
        symbol_bits: args.g0_symbol_bits,
        degree_bits: args
            .g0_degree_bits
            .unwrap_or_else(|| G0Config::fitted(program.n(), args.graph_seed).degree_bits),
        lambda_threshold: args.lambda_threshold,
        graph_seed: args.graph_seed,
    };
    let params = WprgBuildParams {
        degree_bits: args.degree_bits,
        lambda_threshold: args.lambda_threshold,
        graph_seed: args.graph_seed,
    };
    let desc = build_wprg(&program, eps.clone(), gamma.clone(), g0_config, params)
        .map_err(|e| anyhow!("building the weighted PRG: {e}"))?;
    let truth = program.brute_expectation();
    let (value, exact) = if desc.seed_bits <= EVAL_SEED_BITS_CAP {
        (eval_wprg(&program, &desc)?, true)
    } else {
        let samples = args.sample.ok_or_else(|| {
            anyhow!(
                "seed space 2^{} exceeds the exhaustive cap 2^{}; pass --sample N for an estimate",
                desc.seed_bits,
                EVAL_SEED_BITS_CAP
            )
        })?;
        (eval_wprg_sampled(&program, &desc, samples, args.graph_seed)?, false)
    };
    let abs_error = (value.clone() - truth.clone()).abs();
    let pass = abs_error <= eps;
    let config = serde_json::json!({
        "program": args.path.display().to_string(),
        "eps": args.eps, "gamma": args.gamma,
        "degree_bits": args.degree_bits,
        "g0_symbol_bits": args.g0_symbol_bits, "g0_degree_bits": args.g0_degree_bits,
        "lambda_threshold": args.lambda_threshold, "graph_seed": args.graph_seed,
        "sample": args.sample,
        "descriptor": desc.summary(),
    });
    let mut csv =
        String::from("n,w,gamma,k,d,s_size,inw_lambda,eval,truth,abs_error,bound,exact,pass\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        desc.n,
        desc.w,
        rat_to_string(&gamma),
        desc.k,
        desc.seed_bits,
        desc.s_size,
        desc.g_inw.max_lambda(),
        rat_to_string(&value),
        rat_to_string(&truth),
        rat_to_string(&abs_error),
        rat_to_string(&eps),
        exact,
        pass
    ));
    let content = format!("# config: {}\n{csv}", serde_json::to_string(&config)?);
    write_or_print(args.out.as_deref(), &content)?;
    println!(
        "wprg: k={} d={} |S|={} eval={} truth={} |err|={} bound={} ({}) => {}",
        desc.k,
        desc.seed_bits,
        desc.s_size,
        rat_to_f64(&value),
        rat_to_f64(&truth),
        rat_to_f64(&abs_error),
        rat_to_f64(&eps),
        if exact { "exact" } else { "sampled" },
        if pass { "pass" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) })
}

fn cmd_estimate(path: &Path, eps_str: &str, out: Option<&Path>) -> Result<ExitCode> {
    use num::Signed;
    let program = load_program(path)?;
    let eps = parse_rat(eps_str, "eps")?;
    if !eps.is_positive() {
        bail!("eps must be positive, got {eps_str}");
    }
    let report = estimate_expectation(&program, &eps).map_err(|e| anyhow!("{e}"))?;
    let truth = program.brute_expectation();
    let abs_error = (report.value.clone() - truth.clone()).abs();
    let pass = abs_error <= eps;
    let doc = serde_json::json!({
        "config": { "program": path.display().to_string(), "eps": eps_str },
        "value": rat_to_string(&report.value),
        "truth": rat_to_string(&truth),
        "abs_error": rat_to_string(&abs_error),
        "level": report.level,
        "grid_log2": report.grid_log2,
        "base_cert_max": report.base_cert_max,
        "ledger": report.ledger,
        "pass": pass,
    });
    if let Some(path) = out {
        std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    }
    println!(
        "estimate: value={} truth={} |err|={} (bound {}) level={} grid=2^-{} \
         ledger={{depth:{}, live_peak:{}, base_calls:{}}} => {}",
        rat_to_f64(&report.value),
        rat_to_f64(&truth),
        rat_to_f64(&abs_error),
        rat_to_f64(&eps),
        report.level,
        report.grid_log2,
        report.ledger.max_recursion_depth,
        report.ledger.max_live_matrices,
        report.ledger.base_calls,
        if pass { "pass" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) })
}

fn cmd_pad(path: &Path, target: usize, out: &Path) -> Result<ExitCode> {
    let program = load_program(path)?;
    let padded = program.pad_with_identity(target)?;
    let json = serde_json::to_string_pretty(&padded.to_json())?;
    std::fs::write(out, format!("{json}\n"))?;
    println!("padded {} from n={} to n={}", path.display(), program.n(), target);
    Ok(ExitCode::SUCCESS)
}
