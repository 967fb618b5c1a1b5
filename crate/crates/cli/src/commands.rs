//! The five subcommands: gen-curves, gen-scene, train, eval, gradcheck.

use crate::{CliFailure, Ctx};
use clap::Args;
use nlsq_core::bench::{rows_to_csv, run_benchmark};
use nlsq_core::classical::ClassicalConfig;
use nlsq_core::curves::{
    sample_instance_with_sigma, CurveFamily, CurveProblem, FamilyTag, NOISE_SIGMA,
};
use nlsq_core::learned::{load_model, save_model, MetaModel};
use nlsq_core::linalg::{DenseMatrix, DenseVector};
use nlsq_core::photo::{
    pgm, photometric_rmse, rotation_error, solve_stereo, synth_scene, translation_direction_error,
    SceneConfig, SceneKind, StereoMethod, StereoProblem,
};
use nlsq_core::problem::{validate_jacobian, LeastSquaresProblem};
use nlsq_core::rng::RngState;
use nlsq_core::timing::{fit_power_law, scaling_sweep};
use nlsq_core::train::{
    train_meta, train_rows_to_csv, Checkpoint, LossWeights, MetaTrainConfig, TrainProblemKind,
    TrainingInstance,
};
use nlsq_core::Result as CoreResult;
use std::io::Write;
use std::path::Path;

/// Seed streams for the CLI-level generators (the library reserves 1..3 for
/// training/validation/benchmark).
const GEN_CURVES_STREAM: u64 = 10;
const GEN_SCENE_STREAM: u64 = 11;
const STEREO_EVAL_STREAM: u64 = 12;
const GRADCHECK_STREAM: u64 = 13;

fn write_file(path: &Path, contents: &str) -> Result<(), CliFailure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn parse_families(spec: &str) -> Result<Vec<FamilyTag>, CliFailure> {
    if spec == "all" {
        return Ok(FamilyTag::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| FamilyTag::parse(s.trim()).map_err(|e| CliFailure::new(2, e.to_string())))
        .collect()
}

#[derive(Args)]
pub struct GenCurvesArgs {
    /// Comma-separated family list (expsum, sine, sinc, gaussian) or "all".
    #[arg(long)]
    families: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    /// Observation noise sigma.
    #[arg(long)]
    sigma: Option<f64>,
}

pub fn gen_curves(ctx: &Ctx, args: GenCurvesArgs) -> Result<(), CliFailure> {
    let families_spec =
        ctx.config
            .resolve("gen_curves.families", args.families, "all".to_string())
            .map_err(|m| CliFailure::new(2, m))?;
    let count = ctx
        .config
        .resolve("gen_curves.count", args.count, 10usize)
        .map_err(|m| CliFailure::new(2, m))?;
    let sigma = ctx
        .config
        .resolve("gen_curves.sigma", args.sigma, NOISE_SIGMA)
        .map_err(|m| CliFailure::new(2, m))?;
    if sigma < 0.0 {
        return Err(CliFailure::new(2, "sigma must be >= 0"));
    }
    let families = parse_families(&families_spec)?;
    let dir = ctx.out_dir.join("curves");
    std::fs::create_dir_all(&dir)?;
    let root = RngState::new(ctx.seed).derive(GEN_CURVES_STREAM);
    let mut manifest = String::from("index,family,a,b,sigma,file\n");
    for k in 0..count {
        let mut rng = root.derive(k as u64);
        let tag = families[rng.below(families.len() as u64) as usize];
        let family = CurveFamily::standard(tag);
        let instance = sample_instance_with_sigma(&family, &mut rng, sigma);
        let file = format!("curve_{k:04}.json");
        let json = serde_json::to_string_pretty(&instance)
            .map_err(|e| CliFailure::new(1, e.to_string()))?;
        write_file(&dir.join(&file), &json)?;
        manifest.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k,
            tag.as_str(),
            instance.truth.0,
            instance.truth.1,
            sigma,
            file
        ));
    }
    write_file(&dir.join("manifest.csv"), &manifest)?;
    println!("wrote {count} curve instance(s) to {}", dir.display());
    Ok(())
}

#[derive(Args)]
pub struct GenSceneArgs {
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// fronto | slanted | two_plane
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    baseline_translation: Option<f64>,
    #[arg(long)]
    baseline_rotation_deg: Option<f64>,
    #[arg(long)]
    depth: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
}

pub fn gen_scene(ctx: &Ctx, args: GenSceneArgs) -> Result<(), CliFailure> {
    let to2 = |m: String| CliFailure::new(2, m);
    let width = ctx.config.resolve("gen_scene.width", args.width, 32usize).map_err(to2)?;
    let height = ctx.config.resolve("gen_scene.height", args.height, 24usize).map_err(to2)?;
    let kind_str = ctx
        .config
        .resolve("gen_scene.scene", args.scene, "fronto".to_string())
        .map_err(to2)?;
    let kind = SceneKind::parse(&kind_str).map_err(|e| CliFailure::new(2, e.to_string()))?;
    let baseline_translation = ctx
        .config
        .resolve("gen_scene.baseline_translation", args.baseline_translation, 0.12)
        .map_err(to2)?;
    let baseline_rotation_deg = ctx
        .config
        .resolve("gen_scene.baseline_rotation_deg", args.baseline_rotation_deg, 3.0)
        .map_err(to2)?;
    let depth = ctx.config.resolve("gen_scene.depth", args.depth, 2.0).map_err(to2)?;
    let count = ctx.config.resolve("gen_scene.count", args.count, 1usize).map_err(to2)?;
    let config = SceneConfig {
        width,
        height,
        kind,
        depth,
        baseline_translation,
        baseline_rotation_deg,
        ..SceneConfig::default()
    };
    if baseline_translation == 0.0 && baseline_rotation_deg == 0.0 {
        eprintln!("warning: zero baseline; the two views will be identical");
    }
    let dir = ctx.out_dir.join("scenes");
    std::fs::create_dir_all(&dir)?;
    let root = RngState::new(ctx.seed).derive(GEN_SCENE_STREAM);
    for k in 0..count {
        let mut rng = root.derive(k as u64);
        let instance = synth_scene(&mut rng, &config)?;
        let json = serde_json::to_string(&instance).map_err(|e| CliFailure::new(1, e.to_string()))?;
        write_file(&dir.join(format!("scene_{k:03}.json")), &json)?;
        pgm::write_pgm(&instance.target, &dir.join(format!("scene_{k:03}_target.pgm")))?;
        pgm::write_pgm(&instance.source, &dir.join(format!("scene_{k:03}_source.pgm")))?;
        pgm::write_pgm_normalized(
            width,
            height,
            &instance.truth_z.z,
            &dir.join(format!("scene_{k:03}_depth.pgm")),
        )?;
    }
    println!("wrote {count} scene(s) to {}", dir.display());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// curves | stereo
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    outer_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    unroll: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    conv_channels: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Stereo training scene resolution.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Resume from a checkpoint file.
    #[arg(long)]
    resume: Option<std::path::PathBuf>,
}

pub fn train(ctx: &Ctx, args: TrainArgs) -> Result<(), CliFailure> {
    let to2 = |m: String| CliFailure::new(2, m);
    let problem_str = ctx
        .config
        .resolve("train.problem", args.problem, "curves".to_string())
        .map_err(to2)?;
    let width = ctx.config.resolve("train.width", args.width, 16usize).map_err(to2)?;
    let height = ctx.config.resolve("train.height", args.height, 12usize).map_err(to2)?;
    let (problem, default_steps, default_batch) = match problem_str.as_str() {
        "curves" => (TrainProblemKind::Curves, 20_000usize, 32usize),
        "stereo" => (
            TrainProblemKind::Stereo(SceneConfig {
                width,
                height,
                ..SceneConfig::default()
            }),
            5_000,
            8,
        ),
        other => {
            return Err(CliFailure::new(2, format!("unknown problem class '{other}'")));
        }
    };
    let defaults = MetaTrainConfig::default();
    let config = MetaTrainConfig {
        problem,
        outer_steps: ctx
            .config
            .resolve("train.outer_steps", args.outer_steps, default_steps)
            .map_err(to2)?,
        batch_size: ctx
            .config
            .resolve("train.batch_size", args.batch_size, default_batch)
            .map_err(to2)?,
        unroll: ctx.config.resolve("train.unroll", args.unroll, defaults.unroll).map_err(to2)?,
        adam: nlsq_core::train::AdamParams {
            lr: ctx.config.resolve("train.lr", args.lr, defaults.adam.lr).map_err(to2)?,
            ..defaults.adam
        },
        grad_clip: ctx
            .config
            .resolve("train.grad_clip", args.grad_clip, defaults.grad_clip)
            .map_err(to2)?,
        checkpoint_every: ctx
            .config
            .resolve("train.checkpoint_every", args.checkpoint_every, defaults.checkpoint_every)
            .map_err(to2)?,
        hidden: ctx.config.resolve("train.hidden", args.hidden, defaults.hidden).map_err(to2)?,
        num_cells: ctx.config.resolve("train.cells", args.cells, defaults.num_cells).map_err(to2)?,
        conv_channels: ctx
            .config
            .resolve("train.conv_channels", args.conv_channels, defaults.conv_channels)
            .map_err(to2)?,
        seed: ctx.seed,
        checkpoint_dir: Some(ctx.out_dir.join("checkpoints")),
        ..defaults
    };
    let resume = match &args.resume {
        Some(path) => {
            ctx.config.record("train.resume", &path.display());
            Some(Checkpoint::load(path)?)
        }
        None => None,
    };
    std::fs::create_dir_all(&ctx.out_dir)?;
    let (model, rows) = match train_meta(&config, resume) {
        Ok(out) => out,
        Err(e @ nlsq_core::Error::NonFiniteGradient { step }) => {
            let dump = format!(
                "training aborted: non-finite gradient budget exhausted at outer step {step}\n{}",
                ctx.config.provenance()
            );
            write_file(&ctx.out_dir.join("training_failure.txt"), &dump)?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    save_model(&model, &ctx.out_dir.join("model.json"))?;
    write_file(&ctx.out_dir.join("training.csv"), &train_rows_to_csv(&rows))?;
    let last = rows.last().expect("at least one outer step");
    println!(
        "trained {} outer steps; final train loss {:.6}, val loss {:.6}",
        rows.len(),
        last.train_loss,
        last.val_loss
    );
    println!("model written to {}", ctx.out_dir.join("model.json").display());
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Trained model file; optional for lm-only and --timing runs.
    #[arg(long)]
    model: Option<std::path::PathBuf>,
    /// curves | stereo
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// all | lm-only | learned-only
    #[arg(long)]
    method: Option<String>,
    /// Run the per-iteration cost scaling sweep over image resolutions.
    #[arg(long)]
    timing: bool,
    /// Stereo evaluation scene resolution.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

pub fn eval(ctx: &Ctx, args: EvalArgs) -> Result<(), CliFailure> {
    let to2 = |m: String| CliFailure::new(2, m);
    if args.timing {
        ctx.config.record("eval.timing", &true);
        let model = match &args.model {
            Some(path) => {
                ctx.config.record("eval.model", &path.display());
                load_model(path)?
            }
            // Weights do not affect cost; any conv model measures the same.
            None => MetaModel::conv(16, &mut RngState::new(ctx.seed).derive(99)),
        };
        let repeats = ctx.config.resolve("eval.timing_repeats", None, 3usize).map_err(to2)?;
        let rows = scaling_sweep(&model, ctx.seed, repeats)?;
        write_file(&ctx.out_dir.join("timing.csv"), &nlsq_core::timing::rows_to_csv(&rows))?;
        println!("{:>9} {:>8} {:>20} {:>12}", "res", "pixels", "method", "wall_ms");
        for r in &rows {
            println!(
                "{:>4}x{:<4} {:>8} {:>20} {:>12.3}",
                r.width, r.height, r.pixels, r.method, r.wall_ms
            );
        }
        println!(
            "power-law exponents: lm_iteration {:.3}, learned_iteration {:.3}",
            fit_power_law(&rows, "lm_iteration"),
            fit_power_law(&rows, "learned_iteration")
        );
        return Ok(());
    }

    let problem_str = ctx
        .config
        .resolve("eval.problem", args.problem, "curves".to_string())
        .map_err(to2)?;
    let n_test = ctx.config.resolve("eval.n_test", args.n_test, 100usize).map_err(to2)?;
    let iterations = ctx
        .config
        .resolve("eval.iterations", args.iterations, 15usize)
        .map_err(to2)?;
    let method = ctx
        .config
        .resolve("eval.method", args.method, "all".to_string())
        .map_err(to2)?;
    if !matches!(method.as_str(), "all" | "lm-only" | "learned-only") {
        return Err(CliFailure::new(2, format!("unknown method filter '{method}'")));
    }
    let model = match &args.model {
        Some(path) => {
            ctx.config.record("eval.model", &path.display());
            Some(load_model(path)?)
        }
        None => None,
    };
    if model.is_none() && method != "lm-only" {
        return Err(CliFailure::new(
            2,
            "a --model is required unless --method lm-only",
        ));
    }

    match problem_str.as_str() {
        "curves" => {
            let out = run_benchmark(model.as_ref(), n_test, iterations, &RngState::new(ctx.seed))?;
            let rows: Vec<_> = out
                .rows
                .into_iter()
                .filter(|r| match method.as_str() {
                    "lm-only" => r.method.starts_with("lm"),
                    "learned-only" => r.method == "lsnet",
                    _ => true,
                })
                .collect();
            write_file(&ctx.out_dir.join("benchmark.csv"), &rows_to_csv(&rows))?;
            print!("{}", out.summary.render());
        }
        "stereo" => {
            let width = ctx.config.resolve("eval.width", args.width, 32usize).map_err(to2)?;
            let height = ctx.config.resolve("eval.height", args.height, 24usize).map_err(to2)?;
            eval_stereo(ctx, model.as_ref(), n_test, iterations, width, height, &method)?;
        }
        other => {
            return Err(CliFailure::new(2, format!("unknown problem class '{other}'")));
        }
    }
    Ok(())
}

fn eval_stereo(
    ctx: &Ctx,
    model: Option<&MetaModel>,
    n_test: usize,
    iterations: usize,
    width: usize,
    height: usize,
    method: &str,
) -> Result<(), CliFailure> {
    let config = SceneConfig {
        width,
        height,
        ..SceneConfig::default()
    };
    let root = RngState::new(ctx.seed).derive(STEREO_EVAL_STREAM);
    let mut csv = String::from("seed,method,iteration,objective,depth_l1,rot_deg,trans_dir_deg,wall_ms\n");
    let mut final_rmse_reduction: Vec<(String, f64)> = Vec::new();
    for k in 0..n_test {
        let mut rng = root.derive(k as u64);
        let instance = synth_scene(&mut rng, &config)?;
        let (z0, p0) = instance.default_init();
        let rmse0 = photometric_rmse(&instance, &z0, &p0);
        let mut runs: Vec<(String, nlsq_core::photo::StereoSolution)> = Vec::new();
        if method != "learned-only" {
            let cfg = ClassicalConfig {
                max_iterations: iterations,
                ..ClassicalConfig::default()
            };
            runs.push((
                "lm".to_string(),
                solve_stereo(&instance, StereoMethod::LevenbergMarquardt(&cfg), None)?,
            ));
        }
        if method != "lm-only" {
            if let Some(model) = model {
                runs.push((
                    "lsnet".to_string(),
                    solve_stereo(
                        &instance,
                        StereoMethod::Learned {
                            model,
                            max_iterations: iterations,
                            epsilon: nlsq_core::learned::solve::DEFAULT_EPSILON,
                        },
                        None,
                    )?,
                ));
            }
        }
        for (name, sol) in &runs {
            for i in 0..sol.trace.iterates.len() {
                let (z, pose) = instance.unpack(&sol.trace.iterates[i]);
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    k,
                    name,
                    i,
                    sol.trace.objectives[i],
                    z.l1_error(&instance.truth_z),
                    rotation_error(pose.alpha, instance.truth_pose.alpha).to_degrees(),
                    translation_direction_error(pose.t, instance.truth_pose.t).to_degrees(),
                    sol.trace.wall_ms[i],
                ));
            }
            let rmse = photometric_rmse(&instance, &sol.z, &sol.pose);
            final_rmse_reduction.push((name.clone(), 1.0 - rmse / rmse0));
        }
    }
    write_file(&ctx.out_dir.join("stereo_eval.csv"), &csv)?;
    for name in ["lm", "lsnet"] {
        let mut vals: Vec<f64> = final_rmse_reduction
            .iter()
            .filter(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "{name}: median photometric RMSE reduction {:.1}% over {} instance(s)",
            100.0 * vals[vals.len() / 2],
            vals.len()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// all | curves | stereo | bptt
    #[arg(long)]
    scope: Option<String>,
    /// Instances per check.
    #[arg(long)]
    instances: Option<usize>,
    /// Override every tolerance (e.g. --tol 0 fails everything).
    #[arg(long)]
    tol: Option<f64>,
    /// Test hook: negate the first Jacobian column of one curve family.
    #[arg(long, hide = true)]
    inject_bug: Option<String>,
}

/// A problem wrapper that corrupts the analytic Jacobian; used to verify the
/// checker actually catches sign errors.
struct SignBug<P>(P);

impl<P: LeastSquaresProblem> LeastSquaresProblem for SignBug<P> {
    fn dim_x(&self) -> usize {
        self.0.dim_x()
    }
    fn dim_r(&self) -> usize {
        self.0.dim_r()
    }
    fn residuals(&self, x: &DenseVector) -> CoreResult<DenseVector> {
        self.0.residuals(x)
    }
    fn jacobian(&self, x: &DenseVector) -> CoreResult<DenseMatrix> {
        let mut j = self.0.jacobian(x)?;
        for i in 0..j.rows() {
            let v = j.get(i, 0);
            j.set(i, 0, -v);
        }
        Ok(j)
    }
    fn fd_validation_mask(&self, x: &DenseVector) -> Option<Vec<bool>> {
        self.0.fd_validation_mask(x)
    }
}

struct CheckOutcome {
    name: String,
    instances: usize,
    max_rel: f64,
    tol: f64,
}

impl CheckOutcome {
    fn passed(&self) -> bool {
        self.max_rel <= self.tol
    }
}

pub fn gradcheck(ctx: &Ctx, args: GradcheckArgs) -> Result<(), CliFailure> {
    let to2 = |m: String| CliFailure::new(2, m);
    let scope = ctx
        .config
        .resolve("gradcheck.scope", args.scope, "all".to_string())
        .map_err(to2)?;
    let instances = ctx
        .config
        .resolve("gradcheck.instances", args.instances, 100usize)
        .map_err(to2)?;
    let tol_curves = ctx
        .config
        .resolve("gradcheck.tol_curves", args.tol, 1e-5)
        .map_err(to2)?;
    let tol_photo = ctx.config.resolve("gradcheck.tol_photo", args.tol, 1e-3).map_err(to2)?;
    let tol_bptt = ctx.config.resolve("gradcheck.tol_bptt", args.tol, 1e-4).map_err(to2)?;
    if let Some(bug) = &args.inject_bug {
        ctx.config.record("gradcheck.inject_bug", bug);
    }
    let root = RngState::new(ctx.seed).derive(GRADCHECK_STREAM);
    let mut outcomes: Vec<CheckOutcome> = Vec::new();

    if scope == "all" || scope == "curves" {
        for tag in FamilyTag::ALL {
            let family = CurveFamily::standard(tag);
            let mut max_rel = 0.0_f64;
            for k in 0..instances {
                let mut rng = root.derive(tag as u64).derive(k as u64);
                let instance = sample_instance_with_sigma(&family, &mut rng, NOISE_SIGMA);
                let x = DenseVector::from_vec(vec![
                    rng.uniform(family.a_range.0, family.a_range.1),
                    rng.uniform(family.b_range.0, family.b_range.1),
                ]);
                let problem = CurveProblem::new(instance);
                let report = if args.inject_bug.as_deref() == Some(tag.as_str()) {
                    validate_jacobian(&SignBug(problem), &x, tol_curves)?
                } else {
                    validate_jacobian(&problem, &x, tol_curves)?
                };
                max_rel = max_rel.max(report.max_rel);
            }
            outcomes.push(CheckOutcome {
                name: format!("jacobian/{}", tag.as_str()),
                instances,
                max_rel,
                tol: tol_curves,
            });
        }
    }

    if scope == "all" || scope == "stereo" {
        let config = SceneConfig {
            width: 16,
            height: 12,
            ..SceneConfig::default()
        };
        let mut max_rel = 0.0_f64;
        let photo_instances = instances.min(100);
        for k in 0..photo_instances {
            let mut rng = root.derive(100).derive(k as u64);
            let instance = synth_scene(&mut rng, &config)?;
            let problem = StereoProblem::new(&instance);
            let x = instance.pack(&instance.truth_z, &instance.truth_pose);
            let report = validate_jacobian(&problem, &x, tol_photo)?;
            max_rel = max_rel.max(report.max_rel);
        }
        outcomes.push(CheckOutcome {
            name: "jacobian/photometric".to_string(),
            instances: photo_instances,
            max_rel,
            tol: tol_photo,
        });
    }

    if scope == "all" || scope == "bptt" {
        let mut rng = root.derive(200);
        let model = MetaModel::dense(2, 3, 1, &mut rng);
        let family = CurveFamily::standard(FamilyTag::Sine);
        let instance = sample_instance_with_sigma(&family, &mut rng, NOISE_SIGMA);
        let x0 = instance.family.initial_guess();
        let truth = DenseVector::from_vec(vec![instance.truth.0, instance.truth.1]);
        let insts = vec![TrainingInstance::Dense {
            problem: Box::new(CurveProblem::new(instance)),
            x0,
            truth,
        }];
        let (max_rel, _) =
            nlsq_core::train::fd_gradcheck(&model, &insts, 2, &LossWeights::default())?;
        outcomes.push(CheckOutcome {
            name: "bptt/dense".to_string(),
            instances: 1,
            max_rel,
            tol: tol_bptt,
        });
    }

    let mut csv = String::from("check,instances,max_rel,tol,passed\n");
    let mut worst: Option<&CheckOutcome> = None;
    for o in &outcomes {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            o.name,
            o.instances,
            o.max_rel,
            o.tol,
            o.passed()
        ));
        println!(
            "[{}] {}: max_rel {:.3e} (tol {:.0e}, {} instance(s))",
            if o.passed() { "ok" } else { "FAIL" },
            o.name,
            o.max_rel,
            o.tol,
            o.instances
        );
        if !o.passed() && worst.map_or(true, |w| o.max_rel / o.tol.max(1e-300) > w.max_rel / w.tol.max(1e-300)) {
            worst = Some(o);
        }
    }
    write_file(&ctx.out_dir.join("gradcheck.csv"), &csv)?;
    if let Some(w) = worst {
        let mut err = std::io::stderr();
        let _ = writeln!(
            err,
            "gradcheck failed: worst offender {} with max_rel {:.3e} over tol {:.0e}",
            w.name, w.max_rel, w.tol
        );
        return Err(CliFailure::new(6, format!("{} exceeded tolerance", w.name)));
    }
    Ok(())
}
