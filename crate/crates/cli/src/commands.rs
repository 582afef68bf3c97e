use std::path::Path;

use czkit_core::amenability::{find_r_doubling_metric, find_r_doubling_with};
use czkit_core::chains::build_base_family;
use czkit_core::cubes::{build_cubes, subsample_auto, subsample_scales, verify_cubes, DyadicTree};
use czkit_core::cz::{coarsen_decomposition, constant_scan, verify_decomposition, CzEngine, Decomposition, Mode};
use czkit_core::family::{
    ball_family, family_constant, is_dense, per_set_doubling, verify_doubling_family, SetFamily, SetMeta, Variant,
};
use czkit_core::function::Function;
use czkit_core::maximal::{maximal_function, weak11_check};
use czkit_core::mms::path;
use czkit_core::models::{generate, model_invariant_report, sidecar, GeneratorSet, ModelSpec, SolvableProductModel};
use czkit_core::{CzError, MetricMeasureSpace, PointSet};
use serde_json::{json, Value};

use crate::report::{distinct_paths, emit, envelope, write_json, CliError, CliResult, Input};
use crate::*;

/// Runs one subcommand; `Ok(false)` means a checked property failed.
pub fn run(command: Command) -> CliResult<bool> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Cubes(a) => cubes(a),
        Command::Family(FamilyCommand::Verify(a)) => family_verify(a),
        Command::Family(FamilyCommand::FromCubes(a)) => family_from_cubes(a),
        Command::Family(FamilyCommand::Balls(a)) => family_balls(a),
        Command::Basefamily(a) => basefamily(a),
        Command::Maximal(a) => maximal(a),
        Command::Decompose(a) => decompose(a),
        Command::Verify(a) => verify(a),
        Command::Coarsen(a) => coarsen(a),
        Command::Scan(a) => scan(a),
        Command::Folner(a) => folner(a),
        Command::Report(a) => report(a),
    }
}

fn need<T>(v: Option<T>, flag: &str, model: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::usage(format!("--model {model} needs --{flag}")))
}

enum Source {
    /// The path graph has no group structure.
    Path(usize),
    Model(ModelSpec),
}

fn model_spec(m: &ModelArgs, inputs: &mut Vec<Input>) -> CliResult<Source> {
    if let Some(p) = &m.spec {
        let input = Input::read(p)?;
        let spec: ModelSpec = serde_json::from_value(input.json()?).map_err(CzError::from)?;
        inputs.push(input);
        return Ok(Source::Model(spec));
    }
    let kind = m.model.ok_or_else(|| CliError::usage("one of --model or --spec is required"))?;
    let generators = match m.generators {
        Generators::Standard => GeneratorSet::Standard,
        Generators::Extended => GeneratorSet::Extended,
    };
    let spec = match kind {
        ModelKind::Path => return Ok(Source::Path(need(m.n, "n", "path")?)),
        ModelKind::Grid => ModelSpec::Grid { dim: need(m.dim, "dim", "grid")?, side: need(m.side, "side", "grid")? },
        ModelKind::Tree => ModelSpec::Tree {
            degree: need(m.degree, "degree", "tree")?,
            depth: need(m.depth, "depth", "tree")?,
        },
        ModelKind::Heisenberg => ModelSpec::Heisenberg { radius: need(m.radius, "radius", "heisenberg")?, generators },
        ModelKind::Bs12 => ModelSpec::Bs12 { radius: need(m.radius, "radius", "bs12")? },
    };
    Ok(Source::Model(spec))
}

fn read_space(p: &Path) -> CliResult<(Input, MetricMeasureSpace)> {
    let input = Input::read(p)?;
    let space = MetricMeasureSpace::from_json(input.json()?)?;
    Ok((input, space))
}

fn read_family(p: &Path, space: &MetricMeasureSpace) -> CliResult<(Input, SetFamily)> {
    let input = Input::read(p)?;
    let fam = SetFamily::from_json(input.json()?)?;
    fam.validate(space)?;
    Ok((input, fam))
}

/// Accepts `{"values": [...]}` or a bare array.
fn read_function(p: &Path, space: &MetricMeasureSpace) -> CliResult<(Input, Function)> {
    let input = Input::read(p)?;
    let v = input.json()?;
    let f = match v {
        Value::Array(_) => Function::new(serde_json::from_value(v).map_err(CzError::from)?),
        other => serde_json::from_value(other).map_err(CzError::from)?,
    };
    f.check(space)?;
    Ok((input, f))
}

fn read_decomposition(p: &Path, space: &MetricMeasureSpace) -> CliResult<(Input, Decomposition)> {
    let input = Input::read(p)?;
    let dec = Decomposition::from_json(input.json()?)?;
    dec.f.check(space)?;
    dec.g.check(space)?;
    Ok((input, dec))
}

fn write_out(o: &Output, value: &Value) -> CliResult<()> {
    if let Some(p) = &o.out {
        write_json(p, value)?;
    }
    Ok(())
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialise")
}

fn gen(a: GenArgs) -> CliResult<bool> {
    let mut inputs = Vec::new();
    let source = model_spec(&a.model, &mut inputs)?;
    distinct_paths(
        &inputs.iter().map(|i| i.path.as_path()).collect::<Vec<_>>(),
        &[a.output.out.as_deref(), a.output.report.as_deref(), a.sidecar.as_deref()],
    )?;
    let mut result = serde_json::Map::new();
    let mut pass = true;
    let space = match source {
        Source::Path(n) => {
            let s = path(n)?;
            result.insert("model".into(), json!({ "model": "path", "n": n }));
            s
        }
        Source::Model(spec) => {
            let model = generate(&spec)?;
            result.insert("model".into(), to_value(&spec));
            if let Some(p) = &a.sidecar {
                write_json(p, &sidecar(&model))?;
            }
            if let Some(seed) = a.seed {
                let rep = model_invariant_report(&model, seed)?;
                pass &= rep.passed();
                result.insert("seed".into(), json!(seed));
                result.insert("invariants".into(), to_value(&rep));
            }
            model.space
        }
    };
    result.insert("n".into(), json!(space.n()));
    result.insert("total_measure".into(), json!(space.total_measure()));
    result.insert("diameter".into(), json!(space.diameter()));
    write_out(&a.output, &space.to_json())?;
    let refs: Vec<&Input> = inputs.iter().collect();
    emit(&envelope("gen", &refs, pass, Value::Object(result)), a.output.report.as_deref())?;
    Ok(pass)
}

fn cubes(a: CubesArgs) -> CliResult<bool> {
    distinct_paths(&[&a.space], &[a.output.out.as_deref(), a.output.report.as_deref(), a.family_out.as_deref()])?;
    let (input, space) = read_space(&a.space)?;
    let depth = match a.depth {
        Some(d) => d,
        None => space.diameter().max(1.0).log2().ceil() as usize + 2,
    };
    let tree = build_cubes(&space, a.delta, depth)?;
    let (tree, sub) = match (a.every, a.subsample) {
        (Some(m), _) => {
            let out = subsample_scales(&space, &tree, m)?;
            (out.tree.clone(), Some(out))
        }
        (None, Subsample::Auto) => {
            let out = subsample_auto(&space, &tree)?;
            (out.tree.clone(), Some(out))
        }
        (None, Subsample::None) => (tree, None),
    };
    let rep = verify_cubes(&space, &tree, sub.is_some());
    write_out(&a.output, &tree.to_json())?;
    if let Some(p) = &a.family_out {
        write_json(p, &tree.family().to_json())?;
    }
    let result = json!({
        "depth": depth,
        "levels": tree.levels.iter().map(Vec::len).collect::<Vec<_>>(),
        "exponents": tree.exponents,
        "subsample": sub.map(|s| json!({
            "m": s.m, "min_ratio": s.min_ratio, "passes": s.passes, "suggested_m": s.suggested_m,
        })),
        "checks": to_value(&rep),
    });
    let pass = rep.passed();
    emit(&envelope("cubes", &[&input], pass, result), a.output.report.as_deref())?;
    Ok(pass)
}

fn family_verify(a: FamilyVerifyArgs) -> CliResult<bool> {
    distinct_paths(&[&a.space, &a.family], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
    let (si, space) = read_space(&a.space)?;
    let (fi, fam) = read_family(&a.family, &space)?;
    let c = match a.constant {
        Some(c) => c,
        None => {
            let c = family_constant(&space, &fam)?;
            if !c.is_finite() {
                return Err(CliError::Violation("family is not doubling at any finite constant".into()));
            }
            c.max(1.0)
        }
    };
    let variant = match a.variant {
        VariantArg::Loose => Variant::Loose,
        VariantArg::Strict => Variant::Strict,
    };
    let mut rep = verify_doubling_family(&space, &fam, c, variant)?;
    if a.details {
        rep.per_set_doubling = Some(per_set_doubling(&space, &fam)?);
        rep.density = Some(is_dense(&space, &fam));
    }
    let value = to_value(&rep);
    write_out(&a.output, &value)?;
    emit(&envelope("family verify", &[&si, &fi], rep.pass, value), a.output.report.as_deref())?;
    Ok(rep.pass)
}

fn family_from_cubes(a: FromCubesArgs) -> CliResult<bool> {
    distinct_paths(&[&a.cubes], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
    let input = Input::read(&a.cubes)?;
    let tree = DyadicTree::from_json(input.json()?)?;
    let fam = tree.family();
    write_out(&a.output, &fam.to_json())?;
    emit(&envelope("family from-cubes", &[&input], true, json!({ "sets": fam.len() })), a.output.report.as_deref())?;
    Ok(true)
}

fn family_balls(a: BallsArgs) -> CliResult<bool> {
    distinct_paths(&[&a.space], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
    let (input, space) = read_space(&a.space)?;
    let centers: Vec<usize> = (0..space.n()).collect();
    let mut fam = ball_family(&space, &centers, &a.radii)?;
    fam.push(PointSet::full(space.n()), SetMeta::default());
    fam.dedup();
    write_out(&a.output, &fam.to_json())?;
    let result = json!({ "sets": fam.len(), "radii": a.radii });
    emit(&envelope("family balls", &[&input], true, result), a.output.report.as_deref())?;
    Ok(true)
}

fn basefamily(a: BaseFamilyArgs) -> CliResult<bool> {
    distinct_paths(&[&a.spec], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
    let input = Input::read(&a.spec)?;
    let spec = match serde_json::from_value(input.json()?).map_err(CzError::from)? {
        ModelSpec::Solvable(s) => s,
        _ => return Err(CliError::usage("basefamily needs a solvable model description")),
    };
    let model = SolvableProductModel::new(spec)?;
    let tree = build_cubes(&model.w0_space()?, a.delta, a.depth)?;
    let base = build_base_family(&model, &tree, a.m_const, a.stride)?;
    let space = model.space()?;
    let c = family_constant(&space, &base.family)?;
    let pass = c.is_finite() && verify_doubling_family(&space, &base.family, c.max(1.0), Variant::Loose)?.pass;
    write_out(&a.output, &base.family.to_json())?;
    let chains: Vec<Value> = base
        .spec
        .cubes
        .iter()
        .map(|ch| {
            json!({
                "cube": ch.cube,
                "level": ch.level,
                "link": ch.link,
                "steps": ch.certificates.len(),
                "r_q": ch.r_q,
            })
        })
        .collect();
    let result = json!({
        "n": space.n(),
        "m_const": base.spec.m_const,
        "c2_hat": base.spec.c2_hat,
        "c3_hat": base.spec.c3_hat,
        "retried": base.spec.retried,
        "stride": base.spec.stride,
        "family_size": base.spec.family_size,
        "family_constant": c,
        "chains": chains,
    });
    emit(&envelope("basefamily", &[&input], pass, result), a.output.report.as_deref())?;
    Ok(pass)
}

fn maximal(a: MaximalArgs) -> CliResult<bool> {
    distinct_paths(&[&a.space, &a.family, &a.function], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
    let (si, space) = read_space(&a.space)?;
    let (fi, fam) = read_family(&a.family, &space)?;
    let (gi, f) = read_function(&a.function, &space)?;
    let m = maximal_function(&space, &fam, &f)?;
    let w = weak11_check(&space, &fam, &f, a.lambdas.as_deref())?;
    let pass = a.constant.is_none_or(|c| w.constant <= c);
    write_out(&a.output, &json!({ "values": m.values }))?;
    let result = json!({ "weak11": to_value(&w), "bound": a.constant, "uncovered": m.uncovered });
    emit(&envelope("maximal", &[&si, &fi, &gi], pass, result), a.output.report.as_deref())?;
    Ok(pass)
}

fn decompose(a: DecomposeArgs) -> CliResult<bool> {
    distinct_paths(&[&a.space, &a.family, &a.function], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
    let (si, space) = read_space(&a.space)?;
    let (fi, fam) = read_family(&a.family, &space)?;
    let (gi, f) = read_function(&a.function, &space)?;
    let engine = match a.constant {
        Some(c) => CzEngine::with_constant(&space, &fam, c)?,
        None => CzEngine::new(&space, &fam)?,
    };
    let dec = engine.decompose(&f, a.lambda)?;
    write_out(&a.output, &dec.to_json())?;
    let result = json!({
        "lambda": dec.lambda,
        "constant": dec.constant,
        "lambda_bound": engine.lambda_bound(&f),
        "pieces": dec.items.len(),
        "exceptional_measure": space.measure(&dec.exceptional_set()),
        "l1": f.l1(&space),
    });
    emit(&envelope("decompose", &[&si, &fi, &gi], true, result), a.output.report.as_deref())?;
    Ok(true)
}

fn verify(a: VerifyArgs) -> CliResult<bool> {
    distinct_paths(&[&a.space, &a.decomposition], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
    let (si, space) = read_space(&a.space)?;
    let (di, dec) = read_decomposition(&a.decomposition, &space)?;
    let mode = match a.mode {
        ModeArg::Full => Mode::Full,
        ModeArg::LargeScale => Mode::LargeScale,
        ModeArg::SmallScale => Mode::SmallScale,
    };
    let rep = verify_decomposition(&space, &dec, mode, a.bound)?;
    let value = to_value(&rep);
    write_out(&a.output, &value)?;
    emit(&envelope("verify", &[&si, &di], rep.pass, value), a.output.report.as_deref())?;
    Ok(rep.pass)
}

fn coarsen(a: CoarsenArgs) -> CliResult<bool> {
    distinct_paths(&[&a.space, &a.decomposition], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
    let (si, space) = read_space(&a.space)?;
    let (di, dec) = read_decomposition(&a.decomposition, &space)?;
    let out = coarsen_decomposition(&space, &dec, a.c_cz)?;
    let rep = verify_decomposition(&space, &out.decomposition, Mode::LargeScale, None)?;
    write_out(&a.output, &out.decomposition.to_json())?;
    let result = json!({
        "centers": out.centers,
        "groups": to_value(&out.groups),
        "composite_bound": out.composite_bound,
        "pieces": out.decomposition.items.len(),
        "large_scale": to_value(&rep),
    });
    emit(&envelope("coarsen", &[&si, &di], rep.pass, result), a.output.report.as_deref())?;
    Ok(rep.pass)
}

fn scan(a: ScanArgs) -> CliResult<bool> {
    let mut ins: Vec<&Path> = vec![&a.space, &a.family];
    ins.extend(a.functions.iter().map(|p| p.as_path()));
    distinct_paths(&ins, &[a.output.out.as_deref(), a.output.report.as_deref(), a.csv.as_deref()])?;
    let (si, space) = read_space(&a.space)?;
    let (fi, fam) = read_family(&a.family, &space)?;
    let mut inputs = vec![si, fi];
    let mut fs = Vec::new();
    for p in &a.functions {
        let (i, f) = read_function(p, &space)?;
        inputs.push(i);
        fs.push(f);
    }
    let mut lambdas = a.lambdas.clone();
    if a.relative {
        let c = family_constant(&space, &fam)?;
        fs = fs
            .into_iter()
            .map(|f| {
                let l = f.l1(&space);
                if l > 0.0 { f.scaled(1.0 / l) } else { f }
            })
            .collect();
        let unit = c / space.total_measure();
        lambdas.iter_mut().for_each(|l| *l *= unit);
    }
    let table = constant_scan(&space, &fam, &fs, &lambdas)?;
    let achieved = table.family_constant.max(table.max_constant);
    if let Some(p) = &a.csv {
        let mut w = csv::Writer::from_path(p)?;
        for row in &table.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|source| CliError::Io { path: p.clone(), source })?;
    }
    let value = json!({
        "scale": a.scale,
        "family_constant": table.family_constant,
        "max_constant": table.max_constant,
        "achieved_constant": achieved,
        "rows": to_value(&table.rows),
    });
    write_out(&a.output, &value)?;
    let pass = table.rows.iter().all(|r| r.skipped || r.pass);
    let refs: Vec<&Input> = inputs.iter().collect();
    emit(&envelope("scan", &refs, pass, value), a.output.report.as_deref())?;
    Ok(pass)
}

fn folner(a: FolnerArgs) -> CliResult<bool> {
    let (inputs, cert) = if let Some(p) = &a.space {
        distinct_paths(&[p], &[a.output.out.as_deref(), a.output.report.as_deref()])?;
        let (input, space) = read_space(p)?;
        let cert = find_r_doubling_metric(&space, a.center, a.r, a.budget)?;
        (vec![input], cert)
    } else {
        let mut inputs = Vec::new();
        let Source::Model(spec) = model_spec(&a.model, &mut inputs)? else {
            return Err(CliError::usage("the path graph is not a group model; generate it and pass --space"));
        };
        let refs: Vec<&Path> = inputs.iter().map(|i| i.path.as_path()).collect();
        distinct_paths(&refs, &[a.output.out.as_deref(), a.output.report.as_deref()])?;
        let group = generate(&spec)?.group.ok_or_else(|| CliError::usage("model has no group structure; pass --space"))?;
        (inputs, find_r_doubling_with(&group, a.r, a.budget, a.max_shape)?)
    };
    let value = json!({
        "found": cert.found,
        "ratio": cert.ratio(),
        "certificate": to_value(&cert),
    });
    write_out(&a.output, &to_value(&cert))?;
    let refs: Vec<&Input> = inputs.iter().collect();
    emit(&envelope("folner", &refs, cert.found, value), a.output.report.as_deref())?;
    Ok(cert.found)
}

fn report(a: ReportArgs) -> CliResult<bool> {
    let ins: Vec<&Path> = a.inputs.iter().map(|p| p.as_path()).collect();
    distinct_paths(&ins, &[a.output.out.as_deref(), a.output.report.as_deref(), a.csv.as_deref()])?;
    let mut inputs = Vec::new();
    let mut entries = Vec::new();
    let mut scale_rows = Vec::new();
    let mut all_pass = true;
    for p in &a.inputs {
        let input = Input::read(p)?;
        let v = input.json()?;
        if v.get("tool").and_then(Value::as_str) != Some("czkit") {
            return Err(CliError::usage(format!("{} is not a czkit report", p.display())));
        }
        let pass = v["pass"].as_bool().unwrap_or(false);
        all_pass &= pass;
        let command = v["command"].as_str().unwrap_or_default().to_string();
        if command == "scan" {
            let r = &v["result"];
            scale_rows.push((
                p.display().to_string(),
                r["scale"].as_f64(),
                r["family_constant"].as_f64(),
                r["max_constant"].as_f64(),
                r["achieved_constant"].as_f64(),
            ));
        }
        entries.push(json!({
            "path": p.display().to_string(),
            "sha256": input.sha256(),
            "command": command,
            "version": v["version"],
            "pass": pass,
            "inputs": v["inputs"],
        }));
        inputs.push(input);
    }
    if let Some(p) = &a.csv {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["report", "scale", "family_constant", "max_constant", "achieved_constant"])?;
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for (name, s, c, m, ach) in &scale_rows {
            w.write_record([name.clone(), cell(*s), cell(*c), cell(*m), cell(*ach)])?;
        }
        w.flush().map_err(|source| CliError::Io { path: p.clone(), source })?;
    }
    let summary = json!({ "reports": entries, "all_pass": all_pass, "scan_rows": scale_rows.len() });
    write_out(&a.output, &summary)?;
    let refs: Vec<&Input> = inputs.iter().collect();
    emit(&envelope("report", &refs, all_pass, summary), a.output.report.as_deref())?;
    Ok(all_pass)
}
