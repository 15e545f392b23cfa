//! Subcommand bodies.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{DatasetProfile, DecodeSection, RunConfig};
use super::{
    BaselineArgs, CliError, EvalArgs, ExtractArgs, GenerateArgs, OverlayArgs, RenderArgs, SweepArgs,
};
use crate::baseline::run_baseline;
use crate::dataset::generate_case;
use crate::decode::{
    stochastic_decode, DecodeContext, DecodeRun, ExactOracle, ExternalScorer, HeuristicScorer,
    NoisyOracle, SamplingParams, StepScorer,
};
use crate::io::{
    encode_f32, encode_png16, keypoints_from_json, keypoints_to_json, read_image, write_atomic,
    KeypointFile,
};
use crate::metrics::{compare_trees, evaluate_dataset, list_cases};
use crate::prompt::StackBuilder;
use crate::render::{add_perlin, draw_overlay, render_tree};
use crate::tree::{format_g17, tree_from_json, tree_to_json, validate_tree, Tree};
use crate::types::ImageGrid;

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::failure(e.to_string())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(fail)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::failure(format!("{}: {e}", path.display())))
}

fn read_tree(path: &Path) -> Result<Tree, CliError> {
    tree_from_json(&read_text(path)?)
        .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))
}

fn read_keypoints(path: &Path) -> Result<KeypointFile, CliError> {
    keypoints_from_json(&read_text(path)?)
        .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::failure(format!("{}: {e}", dir.display())))
}

fn parent_dir(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// `out/name.ext` → `out/name.config.json`.
fn sidecar(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.config.json"))
}

fn save_config(cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    write(path, cfg.to_json().as_bytes())
}

fn image_bytes(grid: &ImageGrid, path: &Path) -> Result<Vec<u8>, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => encode_png16(grid).map_err(fail),
        Some("f32") => Ok(encode_f32(grid)),
        _ => Err(CliError::usage(format!(
            "{}: image output must end in .png or .f32",
            path.display()
        ))),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn generate(mut cfg: RunConfig, a: GenerateArgs) -> Result<(), CliError> {
    if let Some(c) = a.count {
        cfg.dataset.count = c;
    }
    if a.slab {
        cfg.dataset.profile = DatasetProfile::Slab;
    }
    if a.no_png {
        cfg.dataset.png = false;
    }
    cfg.growth.seed = cfg.seed;
    cfg.growth.slab_mode = cfg.dataset.profile == DatasetProfile::Slab;
    cfg.growth
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    cfg.render
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    create_dir(&a.out)?;
    save_config(&cfg, &a.out.join("resolved_config.json"))?;

    let results: Vec<Result<Value, String>> = (0..cfg.dataset.count)
        .into_par_iter()
        .map(|i| {
            let case_seed = cfg.seed.wrapping_add(i as u64);
            let case = generate_case(
                &cfg.growth,
                &cfg.render,
                case_seed,
                cfg.dataset.max_attempts,
            )
            .map_err(|e| e.to_string())?;
            let mut files = vec![
                (
                    format!("tree_{i}.json"),
                    tree_to_json(&case.tree).into_bytes(),
                ),
                (
                    format!("keypoints_{i}.json"),
                    keypoints_to_json(&case.keypoints).into_bytes(),
                ),
                (format!("image_{i}.f32"), encode_f32(&case.image)),
            ];
            if cfg.dataset.png {
                files.push((
                    format!("image_{i}.png"),
                    encode_png16(&case.image).map_err(|e| e.to_string())?,
                ));
            }
            let mut sums = serde_json::Map::new();
            for (name, bytes) in &files {
                write_atomic(&a.out.join(name), bytes).map_err(|e| e.to_string())?;
                sums.insert(name.clone(), Value::String(sha256_hex(bytes)));
            }
            Ok(json!({
                "id": i,
                "case_seed": case_seed,
                "growth_seed": case.seed,
                "nodes": case.tree.len(),
                "has_crossing": case.has_crossing,
                "sha256": sums,
            }))
        })
        .collect();

    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => cases.push(v),
            Err(reason) => failures.push(json!({"id": i, "reason": reason})),
        }
    }
    let crossings = cases.iter().filter(|c| c["has_crossing"] == true).count();
    let manifest = json!({
        "count": cfg.dataset.count,
        "seed": cfg.seed,
        "profile": cfg.dataset.profile,
        "config": serde_json::to_value(&cfg).expect("config serializes"),
        "cases": cases,
        "failures": failures,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&a.out.join("manifest.json"), text.as_bytes())?;
    eprintln!(
        "generated {} of {} cases ({} with crossings) in {}",
        cases.len(),
        cfg.dataset.count,
        crossings,
        a.out.display()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "{} case(s) failed to generate",
            failures.len()
        )))
    }
}

pub fn render(mut cfg: RunConfig, a: RenderArgs) -> Result<(), CliError> {
    if let Some(s) = a.noise_seed {
        cfg.render.noise_seed = s;
    }
    cfg.render
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let tree = read_tree(&a.tree)?;
    let image = add_perlin(&render_tree(&tree, &cfg.render), &cfg.render);
    let bytes = image_bytes(&image, &a.out)?;
    parent_dir(&a.out)?;
    write(&a.out, &bytes)?;
    save_config(&cfg, &sidecar(&a.out))
}

enum ScorerKind {
    Exact,
    Noisy,
    Heuristic,
    Command(String),
}

fn parse_scorer(name: &str) -> Result<ScorerKind, CliError> {
    match name {
        "exact" => Ok(ScorerKind::Exact),
        "noisy" => Ok(ScorerKind::Noisy),
        "heuristic" => Ok(ScorerKind::Heuristic),
        s => match s.strip_prefix("cmd:") {
            Some(c) if !c.trim().is_empty() => Ok(ScorerKind::Command(c.to_owned())),
            _ => Err(CliError::usage(format!(
                "unknown scorer {s:?}; expected exact, noisy, heuristic or cmd:<command>"
            ))),
        },
    }
}

/// Scorer that needs no subprocess; `gt` is required by the oracles.
fn local_scorer(
    kind: &ScorerKind,
    d: &DecodeSection,
    seed: u64,
    gt: Option<Tree>,
) -> Result<Box<dyn StepScorer>, CliError> {
    let exact = |gt: Tree| {
        ExactOracle::new(gt)
            .with_magnitude(d.logit_magnitude)
            .with_tolerance(d.match_tolerance)
    };
    let need = || CliError::usage("the oracle scorers need a ground-truth tree");
    Ok(match kind {
        ScorerKind::Exact => Box::new(exact(gt.ok_or_else(need)?)),
        ScorerKind::Noisy => {
            let gt = gt.ok_or_else(need)?;
            Box::new(
                NoisyOracle::new(gt.clone(), d.eta, seed)
                    .with_selection_eta(d.selection_eta)
                    .with_exact(exact(gt)),
            )
        }
        ScorerKind::Heuristic => Box::new(HeuristicScorer::new(d.heuristic.clone())),
        ScorerKind::Command(_) => unreachable!("external scorers are spawned separately"),
    })
}

fn decode_image(
    scorer: &dyn StepScorer,
    cfg: &RunConfig,
    image: ImageGrid,
    keypoints: &KeypointFile,
    root: usize,
) -> Result<DecodeRun, String> {
    let builder = StackBuilder::new(image, cfg.decode.alpha).map_err(|e| e.to_string())?;
    let ctx = DecodeContext::new(scorer, &builder, &keypoints.keypoints, cfg.decode.profile)
        .with_rule(cfg.decode.selection);
    let params = SamplingParams {
        gamma: cfg.decode.gamma,
        n_dec: cfg.decode.n_dec,
        seed: cfg.seed,
    };
    stochastic_decode(&ctx, root, &params).map_err(|e| e.to_string())
}

fn check_sampling(d: &DecodeSection) -> Result<(), CliError> {
    SamplingParams {
        gamma: d.gamma,
        n_dec: d.n_dec,
        seed: 0,
    }
    .validate()
    .map_err(|e| CliError::usage(e.to_string()))
}

pub fn extract(mut cfg: RunConfig, a: ExtractArgs) -> Result<(), CliError> {
    if let Some(s) = a.scorer {
        cfg.decode.scorer = s;
    }
    if let Some(g) = a.gamma {
        cfg.decode.gamma = g;
    }
    if let Some(n) = a.n_dec {
        cfg.decode.n_dec = n;
    }
    check_sampling(&cfg.decode)?;
    let kind = parse_scorer(&cfg.decode.scorer)?;
    let image = read_image(&a.image).map_err(fail)?;
    let keypoints = read_keypoints(&a.keypoints)?;
    let root = a
        .root
        .or(keypoints.root)
        .ok_or_else(|| CliError::usage("the keypoints file has no root; pass --root"))?;
    let gt = a.tree.as_deref().map(read_tree).transpose()?;
    let scorer: Box<dyn StepScorer> = match &kind {
        ScorerKind::Command(c) => Box::new(ExternalScorer::spawn(c).map_err(fail)?),
        k => local_scorer(k, &cfg.decode, cfg.seed, gt)?,
    };
    let run =
        decode_image(scorer.as_ref(), &cfg, image, &keypoints, root).map_err(CliError::failure)?;
    drop(scorer);

    parent_dir(&a.out)?;
    write(&a.out, tree_to_json(&run.merged).as_bytes())?;
    save_config(&cfg, &sidecar(&a.out))?;
    if let Some(dir) = &a.samples_dir {
        create_dir(dir)?;
        for (s, t) in run.samples.iter().enumerate() {
            write(
                &dir.join(format!("sample_{s}.json")),
                tree_to_json(t).as_bytes(),
            )?;
        }
    }
    eprintln!(
        "decoded {} nodes from {} sample(s), {} truncated",
        run.merged.len(),
        run.samples.len(),
        run.truncated_samples
    );
    let report = validate_tree(&run.merged, cfg.decode.profile);
    if report.is_valid() {
        Ok(())
    } else {
        Err(CliError::invalid(format!(
            "decoded tree is invalid: {:?}",
            report.violations
        )))
    }
}

pub fn baseline(mut cfg: RunConfig, a: BaselineArgs) -> Result<(), CliError> {
    if let Some(r) = a.snap_radius {
        cfg.baseline.snap_radius_px = r;
    }
    cfg.render
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let gt = read_tree(&a.tree)?;
    let result = run_baseline(
        &gt,
        &cfg.render,
        cfg.baseline.snap_radius_px,
        cfg.decode.profile,
    )
    .map_err(fail)?;
    parent_dir(&a.out)?;
    write(&a.out, tree_to_json(&result.tree).as_bytes())?;
    save_config(&cfg, &sidecar(&a.out))?;
    if !result.unreachable.is_empty() {
        eprintln!(
            "{} leaf/leaves unreachable from the root",
            result.unreachable.len()
        );
    }
    Ok(())
}

pub fn eval(cfg: RunConfig, a: EvalArgs) -> Result<(), CliError> {
    create_dir(&a.out)?;
    save_config(&cfg, &a.out.join("resolved_config.json"))?;
    let report = evaluate_dataset(
        &a.pred,
        &a.gt,
        cfg.metrics.samples_per_edge,
        cfg.render.height,
        cfg.render.width,
    )
    .map_err(|e| CliError::failure(format!("{}: {e}", a.gt.display())))?;
    write(&a.out.join("report.csv"), report.to_csv().as_bytes())?;
    write(&a.out.join("report.json"), report.to_json().as_bytes())?;
    let show = |v: Option<f64>| v.map_or_else(|| "n/a".into(), format_g17);
    println!(
        "n={} mean_hd={} mean_cd={} failures={}",
        report.cases.len(),
        show(report.mean_hd()),
        show(report.mean_cd()),
        report.failures.len()
    );
    if report.cases.is_empty() {
        return Err(CliError::invalid("no case could be evaluated"));
    }
    if !report.failures.is_empty() {
        return Err(CliError::invalid(format!(
            "{} case(s) failed evaluation",
            report.failures.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepCell {
    gamma: f64,
    n_dec: usize,
    mean_hd: Option<f64>,
    mean_cd: Option<f64>,
    n: usize,
    failures: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config: Value,
    cells: Vec<SweepCell>,
}

fn sweep_csv(cells: &[SweepCell]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, format_g17);
    let mut s = String::from("gamma,n_dec,mean_hd,mean_cd,n\n");
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            format_g17(c.gamma),
            c.n_dec,
            opt(c.mean_hd),
            opt(c.mean_cd),
            c.n
        ));
    }
    s
}

struct SweepCase {
    id: String,
    tree: PathBuf,
    keypoints: PathBuf,
    image: PathBuf,
}

fn sweep_cases(data: &Path) -> Result<Vec<SweepCase>, CliError> {
    let listed =
        list_cases(data).map_err(|e| CliError::failure(format!("{}: {e}", data.display())))?;
    if listed.is_empty() {
        return Err(CliError::usage(format!(
            "{} holds no tree_<id>.json files",
            data.display()
        )));
    }
    Ok(listed
        .into_iter()
        .map(|(id, tree)| {
            let f32_path = data.join(format!("image_{id}.f32"));
            let image = if f32_path.exists() {
                f32_path
            } else {
                data.join(format!("image_{id}.png"))
            };
            SweepCase {
                keypoints: data.join(format!("keypoints_{id}.json")),
                id,
                tree,
                image,
            }
        })
        .collect())
}

fn sweep_one(
    cfg: &RunConfig,
    kind: &ScorerKind,
    external: Option<&ExternalScorer>,
    case: &SweepCase,
) -> Result<(f64, f64), String> {
    let gt = read_tree(&case.tree).map_err(|e| e.message)?;
    let keypoints = read_keypoints(&case.keypoints).map_err(|e| e.message)?;
    let root = keypoints.root.ok_or("keypoints file has no root")?;
    let image = read_image(&case.image).map_err(|e| e.to_string())?;
    let (h, w) = image.shape();
    let run = match external {
        Some(x) => decode_image(x, cfg, image, &keypoints, root)?,
        None => {
            let scorer = local_scorer(kind, &cfg.decode, cfg.seed, Some(gt.clone()))
                .map_err(|e| e.message)?;
            decode_image(scorer.as_ref(), cfg, image, &keypoints, root)?
        }
    };
    compare_trees(&run.merged, &gt, cfg.metrics.samples_per_edge, h, w).map_err(|e| e.to_string())
}

pub fn sweep(mut cfg: RunConfig, a: SweepArgs) -> Result<(), CliError> {
    if let Some(s) = a.scorer {
        cfg.decode.scorer = s;
    }
    if let Some(g) = a.gammas {
        cfg.sweep.gammas = g;
    }
    if let Some(n) = a.n_decs {
        cfg.sweep.n_decs = n;
    }
    if cfg.sweep.gammas.is_empty() || cfg.sweep.n_decs.is_empty() {
        return Err(CliError::usage("the sweep grid is empty"));
    }
    for &gamma in &cfg.sweep.gammas {
        for &n_dec in &cfg.sweep.n_decs {
            check_sampling(&DecodeSection {
                gamma,
                n_dec,
                ..cfg.decode.clone()
            })?;
        }
    }
    let kind = parse_scorer(&cfg.decode.scorer)?;
    let cases = sweep_cases(&a.data)?;
    create_dir(&a.out)?;
    save_config(&cfg, &a.out.join("resolved_config.json"))?;

    let config_value = serde_json::to_value(&cfg).expect("config serializes");
    let checkpoint_path = a.out.join("sweep_checkpoint.json");
    let mut done: Vec<SweepCell> = match fs::read_to_string(&checkpoint_path) {
        Ok(text) => match serde_json::from_str::<Checkpoint>(&text) {
            Ok(c) if c.config == config_value => c.cells,
            _ => {
                eprintln!("ignoring checkpoint from a different configuration");
                Vec::new()
            }
        },
        Err(_) => Vec::new(),
    };
    let external = match &kind {
        ScorerKind::Command(c) => Some(ExternalScorer::spawn(c).map_err(fail)?),
        _ => None,
    };

    let mut cells = Vec::new();
    for &gamma in &cfg.sweep.gammas {
        for &n_dec in &cfg.sweep.n_decs {
            if let Some(c) = done.iter().find(|c| c.gamma == gamma && c.n_dec == n_dec) {
                cells.push(c.clone());
                continue;
            }
            let mut cell_cfg = cfg.clone();
            cell_cfg.decode.gamma = gamma;
            cell_cfg.decode.n_dec = n_dec;
            let results: Vec<Result<(f64, f64), String>> = cases
                .par_iter()
                .map(|c| sweep_one(&cell_cfg, &kind, external.as_ref(), c))
                .collect();
            let (mut hd, mut cd, mut n, mut failures) = (0.0, 0.0, 0usize, 0usize);
            for (case, r) in cases.iter().zip(&results) {
                match r {
                    Ok((h, c)) => {
                        hd += h;
                        cd += c;
                        n += 1;
                    }
                    Err(e) => {
                        failures += 1;
                        eprintln!("gamma={gamma} n_dec={n_dec} case {}: {e}", case.id);
                    }
                }
            }
            let cell = SweepCell {
                gamma,
                n_dec,
                mean_hd: (n > 0).then(|| hd / n as f64),
                mean_cd: (n > 0).then(|| cd / n as f64),
                n,
                failures,
            };
            eprintln!(
                "gamma={gamma} n_dec={n_dec}: mean_hd={:?} mean_cd={:?} n={n}",
                cell.mean_hd, cell.mean_cd
            );
            done.push(cell.clone());
            cells.push(cell);
            let checkpoint = Checkpoint {
                config: config_value.clone(),
                cells: done.clone(),
            };
            write(
                &checkpoint_path,
                serde_json::to_string_pretty(&checkpoint)
                    .expect("checkpoint")
                    .as_bytes(),
            )?;
            write(&a.out.join("sweep.csv"), sweep_csv(&cells).as_bytes())?;
        }
    }
    write(&a.out.join("sweep.csv"), sweep_csv(&cells).as_bytes())?;
    let failed: usize = cells.iter().map(|c| c.failures).sum();
    if failed > 0 {
        return Err(CliError::failure(format!(
            "{failed} decode(s) failed across the sweep"
        )));
    }
    Ok(())
}

pub fn overlay(cfg: RunConfig, a: OverlayArgs) -> Result<(), CliError> {
    let image = read_image(&a.image).map_err(fail)?;
    let tree = read_tree(&a.tree)?;
    let bytes = image_bytes(&draw_overlay(&image, &tree), &a.out)?;
    parent_dir(&a.out)?;
    write(&a.out, &bytes)?;
    save_config(&cfg, &sidecar(&a.out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scorer_specs() {
        assert!(matches!(parse_scorer("exact"), Ok(ScorerKind::Exact)));
        assert!(
            matches!(parse_scorer("cmd:python3 s.py"), Ok(ScorerKind::Command(c)) if c == "python3 s.py")
        );
        assert_eq!(parse_scorer("cmd:").err().unwrap().code, 64);
        assert_eq!(parse_scorer("oracle").err().unwrap().code, 64);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar(Path::new("out/pred.json")),
            PathBuf::from("out/pred.config.json")
        );
        assert_eq!(
            sidecar(Path::new("img.png")),
            PathBuf::from("img.config.json")
        );
    }

    #[test]
    fn csv_layout() {
        let cells = vec![SweepCell {
            gamma: 3.0,
            n_dec: 5,
            mean_hd: Some(1.5),
            mean_cd: None,
            n: 0,
            failures: 2,
        }];
        assert_eq!(
            sweep_csv(&cells),
            "gamma,n_dec,mean_hd,mean_cd,n\n3,5,1.5,,0\n"
        );
    }
}
