use ring_clusters::continuation::{
    continue_from_pitchfork, detect_bifurcations, trace_branch, BifurcationKind, Branch, StepPolicy,
};
use ring_clusters::equilibria::{expand_primary, newton_solve, newton_solve_report, primary_oracle};
use ring_clusters::model::{FullState, Parameters};
use ring_clusters::simulate::{
    classify_trajectory, default_step, equilibrium_state, integrate_dde, random_perturbation,
};
use ring_clusters::stability::{
    characteristic_roots_with, count_unstable, linearize_full_rotating, linearize_reduced, RootOptions,
};
use ring_clusters::symmetry::{classify_isotropy, parameter_shift, SOLVER_TOL};
use ring_clusters::Error;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{self, Seed, AUDIT_TOL};
use crate::{
    ClassifyArgs, ContinueArgs, ModelArgs, OracleArgs, ShiftArgs, SimulateArgs, SolveArgs, StabilityArgs,
};

fn setup_jobs(model: &ModelArgs) -> Result<(), CliError> {
    if let Some(n) = model.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn config_for(command: &str, params: Parameters, options: Vec<(String, String)>) -> RunConfig {
    let mut cfg = RunConfig::new(command, params);
    for (k, v) in options {
        cfg.set(&k, v);
    }
    cfg
}

fn seeded(model: &ModelArgs, spec: &str) -> Result<(Seed, Vec<(String, String)>), CliError> {
    setup_jobs(model)?;
    let mut options = Vec::new();
    let seed = io::load_seed(spec, model, &mut options)?;
    Ok((seed, options))
}

pub fn oracle(a: OracleArgs) -> Result<(), CliError> {
    setup_jobs(&a.model)?;
    let params = io::resolve_params(&a.model, None)?;
    let taus = io::parse_grid(&a.tau)?;
    let m = a.m as usize;
    let cfg = config_for("oracle", params, vec![("m".into(), m.to_string()), ("tau".into(), a.tau.clone())]);
    let hash = cfg.hash();

    let uncoupled = (params.lambda.abs().sqrt().max(1e-3), params.omega[0] - params.gamma * params.lambda);
    let mut guess = uncoupled;
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut audit = Vec::new();
    for &tau in &taus {
        let p = params.with_delay(tau);
        // natural-parameter seeding from the previous grid point, then from the uncoupled state
        let sol = primary_oracle(&p, m, guess.0, guess.1).or_else(|e| match e {
            Error::InvalidArgument(_) => Err(e),
            _ => primary_oracle(&p, m, uncoupled.0, uncoupled.1),
        });
        match sol {
            Ok(s) => {
                guess = (s.r0, s.omega_collective);
                let res = io::max_residual(&params, &expand_primary(&s))?;
                if !(res < AUDIT_TOL) {
                    audit.push(format!("tau = {tau}: residual {res:e}"));
                }
                rows.push(vec![tau.to_string(), m.to_string(), s.r0.to_string(), s.omega_collective.to_string()]);
            }
            Err(e @ Error::InvalidArgument(_)) => return Err(e.into()),
            Err(e) => failed.push(format!("tau = {tau}: {e}")),
        }
    }
    let path = io::out_path(&a.model.out_dir, "oracle.csv")?;
    io::write_csv(&path, &hash, &["tau", "m", "r0", "Omega"], &rows)?;
    println!("{} of {} grid points converged; wrote {}", rows.len(), taus.len(), path.display());
    if !failed.is_empty() {
        return Err(CliError::Unconverged(failed.join("; ")));
    }
    if !audit.is_empty() {
        return Err(CliError::Audit(audit.join("; ")));
    }
    Ok(())
}

pub fn solve(a: SolveArgs) -> Result<(), CliError> {
    let (seed, options) = seeded(&a.model, &a.seed.seed)?;
    let report = newton_solve_report(&seed.params, &seed.eq)?;
    let eq = report.equilibrium;
    let cfg = config_for("solve", seed.params, options);
    let rec = io::record(&cfg, &seed.params, &eq)?;
    let path = io::out_path(&a.model.out_dir, "record.json")?;
    io::write_json(&path, &rec)?;
    println!(
        "{} at tau = {}: Omega = {}, residual {:e} after {} Newton iterations; wrote {}",
        rec.isotropy,
        eq.tau,
        eq.omega_collective,
        rec.residual,
        report.iterations,
        path.display()
    );
    Ok(())
}

fn branch_rows(branch: &Branch) -> Vec<Vec<String>> {
    branch
        .points
        .iter()
        .map(|p| {
            let e = &p.eq;
            let mut row = vec![e.tau.to_string(), e.omega_collective.to_string()];
            row.extend(e.r.iter().map(|x| x.to_string()));
            row.extend(e.psi.iter().map(|x| x.to_string()));
            row.push(p.n_unstable.to_string());
            row.push(p.re_rightmost().to_string());
            row.push(p.isotropy.label.to_string());
            row
        })
        .collect()
}

fn write_branch(model: &ModelArgs, cfg: &RunConfig, branch: &Branch) -> Result<(), CliError> {
    let hash = cfg.hash();
    let dir = &model.out_dir;
    io::write_csv(
        &io::out_path(dir, "branch.csv")?,
        &hash,
        &["tau", "Omega", "r1", "r2", "r3", "r4", "psi1", "psi2", "psi3", "n_unstable", "re_rightmost", "isotropy"],
        &branch_rows(branch),
    )?;
    let bif_rows: Vec<Vec<String>> = branch
        .bifurcations
        .iter()
        .map(|b| vec![b.kind.as_str().to_string(), b.tau.to_string(), b.omega_collective.to_string()])
        .collect();
    io::write_csv(&io::out_path(dir, "bifurcations.csv")?, &hash, &["kind", "tau", "Omega"], &bif_rows)?;
    io::write_json(
        &io::out_path(dir, "branch.json")?,
        &json!({ "config_hash": hash, "config": cfg, "branch": branch }),
    )
}

pub fn continue_cmd(a: ContinueArgs) -> Result<(), CliError> {
    setup_jobs(&a.model)?;
    let range = io::parse_range(&a.range)?;
    let mut policy = StepPolicy { direction: a.direction.into(), ..StepPolicy::default() };
    let mut options = vec![("range".to_string(), a.range.clone()), ("direction".to_string(), format!("{:?}", a.direction))];
    if let Some(h) = a.step_initial {
        policy.initial = h;
        options.push(("step-initial".into(), h.to_string()));
    }
    if let Some(h) = a.step_min {
        policy.min = h;
        options.push(("step-min".into(), h.to_string()));
    }
    if let Some(h) = a.step_max {
        policy.max = h;
        options.push(("step-max".into(), h.to_string()));
    }
    if let Some(n) = a.max_points {
        policy.max_points = n;
        options.push(("max-points".into(), n.to_string()));
    }

    let (params, result) = if let Some(path) = &a.from_pitchfork {
        let (bifs, base) = io::load_bifurcations(path)?;
        let params = io::resolve_params(&a.model, base)?;
        let index = match a.bifurcation_index {
            Some(i) => i,
            None => bifs
                .iter()
                .position(|b| b.kind == BifurcationKind::Pitchfork)
                .ok_or_else(|| CliError::Usage(format!("{} lists no pitchfork", path.display())))?,
        };
        let bif = bifs
            .get(index)
            .ok_or_else(|| CliError::Usage(format!("bifurcation index {index} out of range ({} listed)", bifs.len())))?;
        if bif.kind != BifurcationKind::Pitchfork {
            return Err(CliError::Usage(format!("bifurcation {index} is a {}, not a pitchfork", bif.kind.as_str())));
        }
        options.push(("from-pitchfork".into(), path.display().to_string()));
        options.push(("from-pitchfork-sha256".into(), io::file_digest(path)?));
        options.push(("bifurcation-index".into(), index.to_string()));
        options.push(("side".into(), a.side.to_string()));
        options.push(("epsilon".into(), a.epsilon.to_string()));
        (params, continue_from_pitchfork(&params, bif, a.side, a.epsilon, range, &policy))
    } else {
        let spec = a.seed.as_deref().expect("clap requires a seed without --from-pitchfork");
        let seed = io::load_seed(spec, &a.model, &mut options)?;
        let start = newton_solve(&seed.params, &seed.eq)?;
        let result = trace_branch(&seed.params, &start, range, &policy).map(|mut b| {
            b.seed = seed.description.clone();
            b
        });
        (seed.params, result)
    };
    let cfg = config_for("continue", params, options);
    match result {
        Ok(branch) => {
            write_branch(&a.model, &cfg, &branch)?;
            println!(
                "{} points, {} bifurcations, termination {:?}; wrote {}",
                branch.points.len(),
                branch.bifurcations.len(),
                branch.termination,
                a.model.out_dir.display()
            );
            Ok(())
        }
        Err(Error::StepUnderflow { tau, mut partial }) => {
            partial.bifurcations = detect_bifurcations(&partial).unwrap_or_default();
            write_branch(&a.model, &cfg, &partial)?;
            Err(Error::StepUnderflow { tau, partial }.into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let (seed, mut options) = seeded(&a.model, &a.seed.seed)?;
    let eq = seed.eq;
    let p = seed.params.with_delay(eq.tau);
    let dt = a.dt.unwrap_or_else(|| default_step(eq.tau));
    if a.stride == 0 {
        return Err(CliError::Usage("--stride must be positive".into()));
    }
    options.extend([
        ("t-end".to_string(), a.t_end.to_string()),
        ("dt".to_string(), dt.to_string()),
        ("perturb".to_string(), a.perturb.to_string()),
        ("rng-seed".to_string(), a.rng_seed.to_string()),
        ("tail".to_string(), a.tail.to_string()),
        ("stride".to_string(), a.stride.to_string()),
    ]);
    let cfg = config_for("simulate", p, options);
    let hash = cfg.hash();

    let v = random_perturbation(a.rng_seed, false);
    let eps = a.perturb;
    let history = move |t: f64| {
        let mut x = equilibrium_state(&eq, t).to_array();
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += eps * vi;
        }
        FullState::from_array(&x)
    };
    let traj = integrate_dde(&p, &history, a.t_end, dt)?;

    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .step_by(a.stride)
        .map(|(t, s)| {
            let mut row = vec![t.to_string()];
            for j in 0..s.r.len() {
                row.push(s.r[j].to_string());
                row.push(s.phi[j].to_string());
            }
            row
        })
        .collect();
    let dir = &a.model.out_dir;
    let header = ["t", "r1", "phi1", "r2", "phi2", "r3", "phi3", "r4", "phi4"];
    io::write_csv(&io::out_path(dir, "trajectory.csv")?, &hash, &header, &rows)?;

    let obs = classify_trajectory(&traj, a.tail)?;
    io::write_json(
        &io::out_path(dir, "observation.json")?,
        &json!({
            "config_hash": hash,
            "config": cfg,
            "equilibrium": eq,
            "observation": obs,
        }),
    )?;
    println!(
        "observed {} at mean frequency {}; wrote {}",
        obs.classification.label,
        obs.mean_frequency,
        dir.display()
    );
    Ok(())
}

pub fn stability(a: StabilityArgs) -> Result<(), CliError> {
    let (seed, mut options) = seeded(&a.model, &a.seed.seed)?;
    if a.roots == 0 {
        return Err(CliError::Usage("--roots must be positive".into()));
    }
    options.push(("roots".into(), a.roots.to_string()));
    options.push(("full".into(), a.full.to_string()));
    let p = seed.params.with_delay(seed.eq.tau);
    let cfg = config_for("stability", p, options);

    let opts = RootOptions::default();
    let roots = characteristic_roots_with(&linearize_reduced(&p, &seed.eq)?, a.roots, &opts)?;
    let full = if a.full {
        Some(characteristic_roots_with(&linearize_full_rotating(&p, &seed.eq)?, a.roots + 1, &opts)?)
    } else {
        None
    };
    println!("re,im");
    for r in &roots {
        println!("{},{}", r.value.re, r.value.im);
    }
    io::write_json(
        &io::out_path(&a.model.out_dir, "stability.json")?,
        &json!({
            "config_hash": cfg.hash(),
            "config": cfg,
            "equilibrium": seed.eq,
            "n_unstable": count_unstable(&roots),
            "roots": roots,
            "full_roots": full,
        }),
    )
}

pub fn classify(a: ClassifyArgs) -> Result<(), CliError> {
    let (seed, mut options) = seeded(&a.model, &a.seed.seed)?;
    if !(a.tol > 0.0) {
        return Err(CliError::Usage(format!("tolerance must be positive, got {}", a.tol)));
    }
    options.push(("tol".into(), a.tol.to_string()));
    let cfg = config_for("classify", seed.params.with_delay(seed.eq.tau), options);
    let class = classify_isotropy(&seed.eq, a.tol);
    println!("{}", class.label);
    io::write_json(
        &io::out_path(&a.model.out_dir, "classify.json")?,
        &json!({
            "config_hash": cfg.hash(),
            "config": cfg,
            "equilibrium": seed.eq,
            "isotropy": class.label,
            "order": class.order,
            "pattern": class.pattern_name,
        }),
    )
}

pub fn shift(a: ShiftArgs) -> Result<(), CliError> {
    let (seed, mut options) = seeded(&a.model, &a.seed.seed)?;
    options.push(("j".into(), a.j.to_string()));
    let moved = parameter_shift(&seed.eq, a.j)?;
    let eq = newton_solve(&seed.params, &moved)?;
    let cfg = config_for("shift", seed.params, options);
    let rec = io::record(&cfg, &seed.params, &eq)?;
    let path = io::out_path(&a.model.out_dir, "record.json")?;
    io::write_json(&path, &rec)?;
    println!(
        "{} at tau = {} -> {} at tau = {}; wrote {}",
        classify_isotropy(&seed.eq, SOLVER_TOL).label,
        seed.eq.tau,
        rec.isotropy,
        eq.tau,
        path.display()
    );
    Ok(())
}
