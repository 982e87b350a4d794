use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use specbio::hamiltonian::{build_hamiltonian, estimate_bulk, CohortMatrix, SpectralModel};
use specbio::io::{cohort_to_csv, fmt_num, model_from_json, model_to_json, parse_cohort_csv};
use specbio::perturbation::fingerprint;
use specbio::prognostic::{discriminant_modes, discriminant_residuals, llr_oracle, SpectralScorer};
use specbio::synth::{eigenplane_separation, regime_cohort, spiked_ensemble, two_group_demo, Regime};
use specbio::thermo::{free_energy, parse_beta_grid};
use specbio::transfer::transfer_models;
use specbio::unification::{between_scatter_rank_ratio, cca_modes, lda_from_scatter, pca_modes, ScatterPair};
use specbio::{Error, Result};

use crate::config::Config;
use crate::report::Recorder;
use crate::{Cli, Command, Format, Method};

/// Tolerance on the spread of `Π − ℓ` across patients.
pub const ORACLE_SPREAD_TOL: f64 = 1e-8;
/// Population covariances are written to the sidecar up to this dimension.
pub const SIDECAR_COVARIANCE_MAX_P: usize = 64;

/// Matrix columns as nested lists, from a column-major slice.
fn columns(data: &[f64], rows: usize) -> Vec<Vec<f64>> {
    data.chunks(rows.max(1)).map(<[f64]>::to_vec).collect()
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Fit { .. } => "fit",
        Command::Perturb { .. } => "perturb",
        Command::Score { .. } => "score",
        Command::Transfer { .. } => "transfer",
        Command::Thermo { .. } => "thermo",
        Command::Synth { .. } => "synth",
        Command::Reduce { .. } => "reduce",
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    let (config, source) = Config::resolve(cli.config.as_deref())?;
    let arguments = serde_json::to_value(&cli.command)?;
    let mut rec = Recorder::new(name(&cli.command), arguments, config, source.map(|p| p.display().to_string()));
    let format = cli.format;
    match &cli.command {
        Command::Fit { cohort, out } => fit(&mut rec, cohort, out).and_then(|v| envelope(rec, v, format)),
        Command::Perturb {
            reference,
            disease,
            discriminant,
            ridge,
        } => perturb(rec, reference, disease, *discriminant, *ridge, format),
        Command::Score {
            model,
            patients,
            sigma2,
            oracle,
            top_k,
        } => score(rec, model, patients, sigma2.as_deref(), *oracle, *top_k, format),
        Command::Transfer { source, target, r } => {
            let r = r.unwrap_or(rec.settings().transfer.r);
            let policy = rec.settings().transfer.policy;
            let s = load_model(&mut rec, source)?;
            let t = load_model(&mut rec, target)?;
            let diag = transfer_models(&s, &t, r, &policy)?;
            envelope(rec, diag, format)
        }
        Command::Thermo { model, grid } => {
            let grid = grid.clone().unwrap_or_else(|| rec.settings().thermo.grid.clone());
            let m = load_model(&mut rec, model)?;
            let betas = parse_beta_grid(&grid, m.eigenvalues()[0])?;
            let profile = free_energy(m.eigenvalues(), &betas)?;
            match format.unwrap_or(Format::Csv) {
                Format::Csv => Ok(profile.to_csv()),
                Format::Json => envelope(rec, json!({ "grid": grid, "profile": profile }), Some(Format::Json)),
            }
        }
        Command::Synth { .. } => synth(rec, &cli.command, format),
        Command::Reduce {
            method,
            inputs,
            r,
            ridge,
        } => reduce(rec, *method, inputs, *r, *ridge, format),
    }
}

fn envelope(rec: Recorder, payload: impl Serialize, format: Option<Format>) -> Result<String> {
    if format == Some(Format::Csv) {
        return Err(Error::Input("this command has no tabular output; use --format json".into()));
    }
    let mut text = serde_json::to_string_pretty(&rec.finish(payload)?)?;
    text.push('\n');
    Ok(text)
}

fn load_model(rec: &mut Recorder, path: &Path) -> Result<SpectralModel> {
    model_from_json(&rec.read_input(path)?, None)
}

fn load_cohort(rec: &mut Recorder, path: &Path) -> Result<CohortMatrix> {
    parse_cohort_csv(&rec.read_input(path)?)
}

/// Reorders `cohort` to `names`; the two name sets must match.
fn align_columns(cohort: &CohortMatrix, names: &[String]) -> Result<CohortMatrix> {
    if cohort.names() == names {
        return Ok(cohort.clone());
    }
    let have: BTreeSet<&String> = cohort.names().iter().collect();
    let want: BTreeSet<&String> = names.iter().collect();
    if have != want {
        let diff: Vec<&str> = have.symmetric_difference(&want).map(|s| s.as_str()).collect();
        return Err(Error::Alignment(format!(
            "biomarker sets differ; symmetric difference: {}",
            diff.join(", ")
        )));
    }
    let idx: Vec<usize> = names
        .iter()
        .map(|n| cohort.names().iter().position(|m| m == n).expect("same set"))
        .collect();
    cohort.select_columns(&idx)
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn fit(rec: &mut Recorder, cohort_path: &Path, out: &Path) -> Result<Value> {
    let cohort = load_cohort(rec, cohort_path)?;
    for j in cohort.zero_variance_columns() {
        rec.warn(format!("biomarker {} has zero variance", cohort.names()[j]));
    }
    let model = build_hamiltonian(&cohort.center())?;
    let bulk = match estimate_bulk(&model) {
        Ok(b) => Some(b),
        Err(e) => {
            rec.warn(format!("bulk estimate unavailable: {e}"));
            None
        }
    };
    let text = model_to_json(&model)?;
    fs::write(out, &text)?;
    Ok(json!({
        "model_path": out.display().to_string(),
        "model_sha256": digest(&text),
        "n": model.n_source(),
        "p": model.dim(),
        "gamma": model.gamma(),
        "names": model.names(),
        "eigenvalues": model.eigenvalues(),
        "eigengap": model.spectrum().eigengap(),
        "bulk": bulk,
    }))
}

fn perturb(
    mut rec: Recorder,
    reference: &Path,
    disease: &Path,
    discriminant: bool,
    ridge: Option<f64>,
    format: Option<Format>,
) -> Result<String> {
    let ridge = ridge.unwrap_or(rec.settings().perturb.ridge);
    let h0 = load_model(&mut rec, reference)?;
    let hd = load_model(&mut rec, disease)?;
    let report = fingerprint(&h0, &hd)?;
    if format == Some(Format::Csv) {
        return Ok(report.mode_table_csv());
    }
    if !report.crossings.is_empty() {
        rec.warn(format!("{} possible eigenvalue crossing(s)", report.crossings.len()));
    }
    let disc = if discriminant {
        let modes = discriminant_modes(h0.hamiltonian(), hd.hamiltonian(), ridge)?;
        let residuals = discriminant_residuals(h0.hamiltonian(), hd.hamiltonian(), &modes);
        Some(json!({
            "ridge": modes.ridge,
            "values": modes.values,
            "vectors": columns(modes.vectors.as_slice(), modes.vectors.nrows()),
            "residuals": residuals,
        }))
    } else {
        None
    };
    envelope(rec, json!({ "fingerprint": report, "discriminant": disc }), format)
}

#[derive(Serialize)]
struct ScoreRow {
    patient_id: String,
    pi: f64,
    projections: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    llr: Option<f64>,
}

fn score(
    mut rec: Recorder,
    model_path: &Path,
    patients: &Path,
    sigma2: Option<&str>,
    oracle: bool,
    top_k: Option<usize>,
    format: Option<Format>,
) -> Result<String> {
    let sigma2_spec = sigma2.map(str::to_owned).unwrap_or_else(|| rec.settings().score.sigma2.clone());
    let top_k = top_k.unwrap_or(rec.settings().score.top_k);
    let model = load_model(&mut rec, model_path)?;
    let cohort = align_columns(&load_cohort(&mut rec, patients)?, model.names())?;
    let (sigma2, source) = if sigma2_spec.trim() == "auto" {
        (estimate_bulk(&model)?.sigma2, "auto")
    } else {
        let v = sigma2_spec
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Input(format!("--sigma2 must be 'auto' or a number, got '{sigma2_spec}'")))?;
        (v, "given")
    };
    let scorer = SpectralScorer::new(model.spectrum(), sigma2)?;
    let k = top_k.min(model.dim());
    let mut rows = Vec::with_capacity(cohort.n());
    let mut truncated = BTreeSet::new();
    for (i, id) in cohort.patient_ids().iter().enumerate() {
        let x: Vec<f64> = cohort.raw_row(i).iter().zip(model.means()).map(|(v, m)| v - m).collect();
        let prof = scorer.profile(id, &x)?;
        truncated.extend(prof.truncated_modes.iter().copied());
        let llr = if oracle {
            Some(llr_oracle(&x, model.hamiltonian(), sigma2)?)
        } else {
            None
        };
        rows.push(ScoreRow {
            patient_id: id.clone(),
            pi: prof.composite,
            projections: prof.projections[..k].to_vec(),
            llr,
        });
    }
    let oracle_check = if oracle {
        let diffs: Vec<f64> = rows.iter().map(|r| r.pi - r.llr.expect("oracle")).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let spread = diffs.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max);
        if spread > ORACLE_SPREAD_TOL {
            return Err(Error::Certificate(format!(
                "Pi - llr varies by {spread:e} across patients (tolerance {ORACLE_SPREAD_TOL:e})"
            )));
        }
        Some(json!({ "mean_difference": mean, "max_deviation": spread, "expected": -scorer.constant() }))
    } else {
        None
    };
    if !truncated.is_empty() {
        rec.warn(format!(
            "patients project onto modes excluded by the eigenvalue floor: {truncated:?}"
        ));
    }
    if format == Some(Format::Csv) {
        let mut out = String::from("patient_id,Pi,C");
        for j in 1..=k {
            out.push_str(&format!(",pi_{j}"));
        }
        if oracle {
            out.push_str(",llr");
        }
        out.push('\n');
        for r in &rows {
            out.push_str(&format!("{},{},{}", r.patient_id, fmt_num(r.pi), fmt_num(scorer.constant())));
            for p in &r.projections {
                out.push_str(&format!(",{}", fmt_num(*p)));
            }
            if let Some(l) = r.llr {
                out.push_str(&format!(",{}", fmt_num(l)));
            }
            out.push('\n');
        }
        return Ok(out);
    }
    let summary = json!({
        "sigma2": sigma2,
        "sigma2_source": source,
        "constant": scorer.constant(),
        "weights": scorer.weights(),
        "excluded_modes": scorer.excluded_modes(),
        "top_k": k,
        "oracle": oracle_check,
    });
    envelope(rec, json!({ "summary": summary, "patients": rows }), format)
}

fn sidecar_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.with_extension("sidecar.json"))
}

fn write_json(path: &Path, value: &Value) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, &text)?;
    Ok(digest(&text))
}

const RNG_NOTE: &str = "ChaCha20Rng::seed_from_u64 (rand_chacha 0.9); StandardNormal ziggurat (rand_distr 0.5); row-major draws";

fn synth(mut rec: Recorder, cmd: &Command, format: Option<Format>) -> Result<String> {
    let Command::Synth {
        regime,
        spiked,
        two_group,
        seed,
        out,
        sidecar,
        n,
        p,
        gamma,
        sigma2,
        rate,
    } = cmd
    else {
        unreachable!("synth dispatch")
    };
    rec.seed(*seed);
    let sidecar = sidecar_path(out, sidecar);
    let settings = rec.settings().synth.clone();
    let (cohort, side) = if let Some(name) = regime {
        let mut spec = settings.regime;
        spec.regime = name.parse::<Regime>()?;
        spec.seed = *seed;
        spec.n = n.unwrap_or(spec.n);
        spec.p = p.unwrap_or(spec.p);
        let (cohort, cov) = regime_cohort(&spec)?;
        if let Some(req) = cov.requested_factor {
            rec.warn(format!("gain factor {req} clipped to {} to keep the covariance PD", cov.factor));
        }
        if cov.ridge > 0.0 {
            rec.warn(format!("covariance repaired with ridge {:e}", cov.ridge));
        }
        let side = json!({
            "kind": "regime",
            "spec": spec,
            "rng": RNG_NOTE,
            "blocks": cov.blocks,
            "factor": cov.factor,
            "requested_factor": cov.requested_factor,
            "ridge": cov.ridge,
            "min_eigenvalue": cov.min_eigenvalue,
            "population_covariance": (spec.p <= SIDECAR_COVARIANCE_MAX_P).then(|| cov.covariance.to_rows()),
        });
        (cohort, side)
    } else if let Some(list) = spiked {
        let mut spec = settings.spiked;
        spec.thetas = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| Error::Input(format!("bad spike strength '{s}'"))))
            .collect::<Result<_>>()?;
        spec.seed = *seed;
        spec.n = n.unwrap_or(spec.n);
        spec.gamma = gamma.unwrap_or(spec.gamma);
        spec.sigma2 = sigma2.unwrap_or(spec.sigma2);
        let e = spiked_ensemble(&spec)?;
        let pdim = e.cohort.p();
        let side = json!({
            "kind": "spiked",
            "spec": spec,
            "rng": RNG_NOTE,
            "p": pdim,
            "directions": columns(e.directions.as_slice(), pdim),
            "population_covariance": (pdim <= SIDECAR_COVARIANCE_MAX_P).then(|| e.covariance.to_rows()),
        });
        (e.cohort, side)
    } else {
        debug_assert!(*two_group);
        let mut spec = settings.two_group;
        spec.seed = *seed;
        spec.p = p.unwrap_or(spec.p);
        spec.rate = rate.unwrap_or(spec.rate);
        let demo = two_group_demo(&spec)?;
        let sep = eigenplane_separation(&demo)?;
        let side = json!({
            "kind": "two_group",
            "spec": spec,
            "rng": RNG_NOTE,
            "patients": demo.patients,
            "labels": demo.labels,
            "direction": demo.direction,
            "separation": { "lambda1": sep.lambda1, "lambda2": sep.lambda2, "auc": sep.auc, "scores": sep.scores },
        });
        (demo.cohort, side)
    };
    let csv = cohort_to_csv(&cohort);
    fs::write(out, &csv)?;
    let side_digest = write_json(&sidecar, &side)?;
    envelope(
        rec,
        json!({
            "cohort_path": out.display().to_string(),
            "cohort_sha256": digest(&csv),
            "sidecar_path": sidecar.display().to_string(),
            "sidecar_sha256": side_digest,
            "n": cohort.n(),
            "p": cohort.p(),
        }),
        format,
    )
}

fn reduce(
    mut rec: Recorder,
    method: Method,
    inputs: &[PathBuf],
    r: Option<usize>,
    ridge: Option<f64>,
    format: Option<Format>,
) -> Result<String> {
    let r = r.unwrap_or(rec.settings().reduce.r);
    let ridge = ridge.unwrap_or(rec.settings().reduce.ridge);
    let need = if method == Method::Pca { 1 } else { 2 };
    if inputs.len() != need {
        return Err(Error::Input(format!("{method:?} takes {need} cohort file(s), got {}", inputs.len())));
    }
    let payload = match method {
        Method::Pca => {
            let c = load_cohort(&mut rec, &inputs[0])?;
            let m = pca_modes(&c, r)?;
            json!({
                "method": "pca",
                "names": c.names(),
                "r": r,
                "values": m.values,
                "vectors": columns(m.vectors.as_slice(), m.vectors.nrows()),
            })
        }
        Method::Lda => {
            let h = load_cohort(&mut rec, &inputs[0])?;
            let d = align_columns(&load_cohort(&mut rec, &inputs[1])?, h.names())?;
            let scatter = ScatterPair::from_cohorts(&h, &d)?;
            let dir = lda_from_scatter(&scatter, ridge)?;
            if dir.is_none() {
                rec.warn("class means coincide: no discriminant direction");
            }
            json!({
                "method": "lda",
                "names": h.names(),
                "n0": scatter.n0,
                "nd": scatter.nd,
                "between_rank_ratio": between_scatter_rank_ratio(&scatter)?,
                "direction": dir,
            })
        }
        Method::Cca => {
            let x = load_cohort(&mut rec, &inputs[0])?;
            let y = load_cohort(&mut rec, &inputs[1])?;
            let m = cca_modes(&x, &y, r, ridge)?;
            json!({
                "method": "cca",
                "x_names": x.names(),
                "y_names": y.names(),
                "r": r,
                "modes": m,
            })
        }
    };
    envelope(rec, payload, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_split() {
        assert_eq!(columns(&[1.0, 2.0, 3.0, 4.0], 2), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn alignment_reorders_or_names_the_difference() {
        let c = parse_cohort_csv("patient_id,a,b\nx,1,2\ny,3,4\n").unwrap();
        let swapped = align_columns(&c, &["b".into(), "a".into()]).unwrap();
        assert_eq!(swapped.raw_row(0), vec![2.0, 1.0]);
        let err = align_columns(&c, &["a".into(), "z".into()]).unwrap_err().to_string();
        assert!(err.contains("b, z"), "{err}");
    }
}
