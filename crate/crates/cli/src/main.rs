//! Command-line workbench: parse exact submanifold and map definitions, run
//! the analyses, and emit deterministic text or JSON reports.
//!
//! Exit codes: 0 on success, 1 when a verification fails, 2 on input errors.

mod input;

use clap::{Parser, Subcommand, ValueEnum};
use crgeo::error::CrError;
use crgeo::manifold::{check_defining, check_involution, FormalSubmanifold};
use crgeo::mapping::{
    check_invertible, check_maps_into, is_cr_submersive, jet, probe_uniqueness, FormalMap,
};
use crgeo::nondegen::{ell_nondegenerate, holomorphically_nondegenerate, HoloVerdict};
use crgeo::parametrize::{jet_variety_all_charts, Parametrization};
use crgeo::reflection::{check_basic_identity, choose_jtilde, jet_determination, DeterminationVerdict};
use crgeo::segre::{check_lemma_413, finite_type_segre, segre_map, segre_rank};
use crgeo::vfields::hormander_flag;
use input::{ManifoldInput, MapInput};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "crgeo", about = "Exact workbench for formal CR submanifolds and their mappings")]
struct Cli {
    /// Override the truncation cap of every input.
    #[arg(long, global = true)]
    cap: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, normalize, and classify a submanifold: nondegeneracy order,
    /// holomorphic nondegeneracy, commutator flag, and the Segre-rank
    /// finite-type verdict with cross-check.
    Analyze {
        input: PathBuf,
        /// Commutator length budget (default: codimension + 2).
        #[arg(long)]
        max_length: Option<usize>,
        /// Nondegeneracy order budget (default: cap - 1, at most 4).
        #[arg(long)]
        ell_max: Option<usize>,
    },
    /// Print Segre mappings, their ranks, and the diagonal identities.
    Segre {
        input: PathBuf,
        /// Largest mapping order to print (default: d + 2).
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Check that a map sends the source into the target, its submersivity,
    /// and the reflection identity.
    Mapcheck {
        input: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// Target manifold (defaults to the source).
        #[arg(long)]
        target: Option<PathBuf>,
        /// Largest derivative order of the reflection identity check.
        #[arg(long, default_value = "2")]
        alpha_max: usize,
        /// Index choice: "auto" or comma-separated 1-based indices.
        #[arg(long, default_value = "auto")]
        jtilde: String,
    },
    /// Jet determination: do two maps with matching jets coincide?
    Determine {
        input: PathBuf,
        #[arg(long)]
        map1: PathBuf,
        #[arg(long)]
        map2: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Chain length (defaults to the minimal full-rank Segre order).
        #[arg(long)]
        k0: Option<usize>,
        /// Cross-check with the degreewise solver.
        #[arg(long)]
        oracle: bool,
    },
    /// Rebuild a map from its jet through the parametrization pipeline and
    /// compare.
    Parametrize {
        input: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Comparison degree (default 6).
        #[arg(long, default_value = "6")]
        degree: usize,
        #[arg(long, default_value = "auto")]
        jtilde: String,
    },
    /// Emit the polynomial equations satisfied by jets of CR submersive
    /// maps.
    Variety {
        input: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Truncation degree of the mapping-equation block (default 3).
        #[arg(long, default_value = "3")]
        trunc: usize,
        /// Write the system to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("input error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_manifold(path: &PathBuf, cap: Option<usize>) -> Result<(FormalSubmanifold, usize), CrError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CrError::Input(format!("{}: {e}", path.display())))?;
    let parsed: ManifoldInput = serde_json::from_str(&text)
        .map_err(|e| CrError::Input(format!("{}: {e}", path.display())))?;
    let effective = cap.unwrap_or(parsed.cap);
    Ok((parsed.build(cap)?, effective))
}

fn load_map(path: &PathBuf, cap: usize) -> Result<FormalMap, CrError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CrError::Input(format!("{}: {e}", path.display())))?;
    let parsed: MapInput = serde_json::from_str(&text)
        .map_err(|e| CrError::Input(format!("{}: {e}", path.display())))?;
    parsed.build(cap)
}

fn parse_jtilde(spec: &str, src: &FormalSubmanifold, dst: &FormalSubmanifold, h: &FormalMap) -> Result<Vec<usize>, CrError> {
    if spec == "auto" {
        choose_jtilde(src, dst, h)
    } else {
        let mut out = Vec::new();
        for part in spec.split(',') {
            let v: usize = part
                .trim()
                .parse()
                .map_err(|_| CrError::Input(format!("bad index '{part}'")))?;
            if v == 0 || v > src.n {
                return Err(CrError::Input(format!("index {v} out of range 1..{}", src.n)));
            }
            out.push(v - 1);
        }
        Ok(out)
    }
}

fn var_names(mfd: &FormalSubmanifold) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..mfd.n {
        names.push(format!("z{}", i + 1));
    }
    for j in 0..mfd.d {
        names.push(format!("w{}", j + 1));
    }
    for i in 0..mfd.n {
        names.push(format!("x{}", i + 1));
    }
    for j in 0..mfd.d {
        names.push(format!("t{}", j + 1));
    }
    names
}

fn run(cli: Cli) -> Result<bool, CrError> {
    let machine = matches!(cli.format, Format::Machine);
    match cli.command {
        Command::Analyze {
            input,
            max_length,
            ell_max,
        } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| CrError::Input(format!("{}: {e}", input.display())))?;
            let parsed: ManifoldInput = serde_json::from_str(&text)
                .map_err(|e| CrError::Input(format!("{}: {e}", input.display())))?;
            let cap = cli.cap.unwrap_or(parsed.cap);
            let rho = parsed.build_rho(cap)?;
            let report = check_defining(&rho, parsed.n + parsed.d, parsed.d);
            if !report.all_ok() {
                if machine {
                    println!(
                        "{}",
                        json!({"cap": cap, "defining_ok": false, "messages": report.messages})
                    );
                } else {
                    println!("cap D = {cap}");
                    println!("defining series: INVALID");
                    for m in &report.messages {
                        println!("  - {m}");
                    }
                }
                return Ok(false);
            }
            let mfd = crgeo::manifold::normalize(&rho, parsed.n, parsed.d)?;
            check_involution(&mfd)?;
            let ell_budget = ell_max.unwrap_or_else(|| (cap - 1).min(4));
            let nd = ell_nondegenerate(&mfd, ell_budget);
            let holo = holomorphically_nondegenerate(&mfd);
            let flag = hormander_flag(&mfd, max_length);
            let segre = finite_type_segre(&mfd);
            let agree = segre.finite == flag.finite_type;
            if machine {
                let witness = match &holo {
                    HoloVerdict::Degenerate(w) => {
                        let names: Vec<String> = var_names(&mfd)[..mfd.ambient()].to_vec();
                        Some(
                            w.iter()
                                .map(|f| f.format_with(&names))
                                .collect::<Vec<_>>(),
                        )
                    }
                    _ => None,
                };
                println!(
                    "{}",
                    json!({
                        "cap": cap,
                        "n": mfd.n, "d": mfd.d,
                        "normal_form": mfd.q.iter().map(|q| q.format_with(&var_names(&mfd))).collect::<Vec<_>>(),
                        "ell0": nd.ell0,
                        "span_dims": nd.span_dims,
                        "holomorphically_degenerate": holo.is_degenerate(),
                        "holo_witness": witness,
                        "hormander_numbers": flag.m,
                        "multiplicities": flag.l,
                        "flag_r": flag.r,
                        "flag_finite_type": flag.finite_type,
                        "flag_inconclusive": flag.inconclusive,
                        "segre_ranks": segre.ranks,
                        "segre_finite_type": segre.finite,
                        "k1": segre.k1,
                        "verdicts_agree": agree,
                    })
                );
            } else {
                println!("cap D = {cap}  (all verdicts are up to this degree)");
                println!("ambient N = {}, codimension d = {}", mfd.ambient(), mfd.d);
                let names = var_names(&mfd);
                for (j, q) in mfd.q.iter().enumerate() {
                    println!("normal form: w{} = {}", j + 1, q.format_with(&names));
                }
                match nd.ell0 {
                    Some(l) => println!("finitely nondegenerate: ell0 = {l}"),
                    None => println!(
                        "not finitely nondegenerate up to ell = {} (span dims {:?})",
                        nd.ell_max, nd.span_dims
                    ),
                }
                match &holo {
                    HoloVerdict::Degenerate(w) => {
                        let names: Vec<String> = var_names(&mfd)[..mfd.ambient()].to_vec();
                        let parts: Vec<String> = w
                            .iter()
                            .enumerate()
                            .filter(|(_, f)| !f.is_zero())
                            .map(|(i, f)| format!("({}) d/d{}", f.format_with(&names), names[i]))
                            .collect();
                        println!("holomorphically degenerate; witness: {}", parts.join(" + "));
                    }
                    HoloVerdict::NondegenerateAtCap(c) => {
                        println!("holomorphically nondegenerate at cap {c}")
                    }
                }
                println!(
                    "commutator flag: numbers {:?}, multiplicities {:?}, r = {} (dim D(0) = {}, dim g(0) = {})",
                    flag.m, flag.l, flag.r, flag.d0_dim, flag.g0_dim
                );
                if flag.finite_type {
                    println!("flag verdict: finite type");
                } else if flag.inconclusive {
                    println!(
                        "flag verdict: inconclusive at length budget {}",
                        flag.max_length
                    );
                } else {
                    println!("flag verdict: not finite type up to length {}", flag.max_length);
                }
                println!("Segre ranks {:?}", segre.ranks);
                match segre.k1 {
                    Some(k1) => println!("Segre verdict: finite type, k1 = {k1}"),
                    None => println!("Segre verdict: not finite type (scan up to d + 1)"),
                }
                println!(
                    "cross-check: {}",
                    if agree { "verdicts agree" } else { "VERDICTS DISAGREE" }
                );
            }
            Ok(agree)
        }
        Command::Segre { input, k_max } => {
            let (mfd, cap) = load_manifold(&input, cli.cap)?;
            let k_max = k_max.unwrap_or(mfd.d + 2);
            let mut ok = true;
            let mut report = Vec::new();
            for k in 1..=k_max {
                let v = segre_map(&mfd, k);
                let rank = segre_rank(&mfd, k);
                let names: Vec<String> = (0..k * mfd.n)
                    .map(|i| {
                        if i < mfd.n {
                            format!("z{}", i + 1)
                        } else {
                            let block = (i - mfd.n) / mfd.n + 1;
                            let pos = (i - mfd.n) % mfd.n + 1;
                            if block % 2 == 1 {
                                format!("x{block}_{pos}")
                            } else {
                                format!("z{block}_{pos}")
                            }
                        }
                    })
                    .collect();
                let comps: Vec<String> = v
                    .components
                    .iter()
                    .map(|c| c.format_with(&names))
                    .collect();
                report.push(json!({"k": k, "rank": rank.rank, "truncation_warning": rank.truncation_warning, "components": comps}));
                if !machine {
                    println!("v^{k}: rank {}{}", rank.rank, if rank.truncation_warning { " (truncation warning)" } else { "" });
                    for (i, c) in comps.iter().enumerate() {
                        println!("  [{}] {}", i + 1, c);
                    }
                }
            }
            let mut lemma = Vec::new();
            for k in 1..=2.min(k_max) {
                let rep = check_lemma_413(&mfd, k)?;
                if !machine {
                    println!(
                        "diagonal identities at k = {k}: composition {} , partial rank {} vs {}",
                        if rep.composition_vanishes { "vanishes" } else { "FAILS" },
                        rep.partial_rank,
                        rep.full_rank
                    );
                }
                ok &= rep.all_ok();
                lemma.push(json!({"k": k, "composition_vanishes": rep.composition_vanishes, "partial_rank": rep.partial_rank, "full_rank": rep.full_rank}));
            }
            if machine {
                println!("{}", json!({"cap": cap, "maps": report, "diagonal": lemma, "ok": ok}));
            }
            Ok(ok)
        }
        Command::Mapcheck {
            input,
            map,
            target,
            alpha_max,
            jtilde,
        } => {
            let (src, cap) = load_manifold(&input, cli.cap)?;
            let dst = match &target {
                Some(p) => load_manifold(p, cli.cap)?.0,
                None => src.clone(),
            };
            let h = load_map(&map, cap)?;
            let maps_into = check_maps_into(&h, &src, &dst)?;
            let submersive = maps_into && is_cr_submersive(&h, &src, &dst);
            let invertible = h.src_dim() == h.dst_dim() && check_invertible(&h);
            let mut identity_ok = None;
            if maps_into && submersive {
                let nd = ell_nondegenerate(&dst, (cap - 1).min(4));
                if let Some(ell0) = nd.ell0 {
                    let jt = parse_jtilde(&jtilde, &src, &dst, &h)?;
                    let rep = check_basic_identity(&src, &dst, &h, &jt, ell0, alpha_max)?;
                    identity_ok = Some(rep.ok());
                }
            }
            let ok = maps_into && identity_ok != Some(false);
            if machine {
                println!(
                    "{}",
                    json!({"cap": cap, "maps_into": maps_into, "cr_submersive": submersive, "invertible": invertible, "reflection_identity": identity_ok})
                );
            } else {
                println!("cap D = {cap}");
                println!("maps source into target: {maps_into}");
                println!("CR submersive at 0: {submersive}");
                println!("invertible: {invertible}");
                match identity_ok {
                    Some(v) => println!(
                        "reflection identity up to order {alpha_max}: {}",
                        if v { "holds" } else { "FAILS" }
                    ),
                    None => println!("reflection identity: skipped (target not finitely nondegenerate or map not submersive)"),
                }
            }
            Ok(ok)
        }
        Command::Determine {
            input,
            map1,
            map2,
            target,
            k0,
            oracle,
        } => {
            let (src, cap) = load_manifold(&input, cli.cap)?;
            let dst = match &target {
                Some(p) => load_manifold(p, cli.cap)?.0,
                None => src.clone(),
            };
            let h1 = load_map(&map1, cap)?;
            let h2 = load_map(&map2, cap)?;
            let verdict = finite_type_segre(&src);
            let k0 = match k0 {
                Some(k) => k,
                None => verdict.k1.ok_or(CrError::NotFiniteType)?,
            };
            let nd = ell_nondegenerate(&dst, (cap - 1).min(4));
            let ell0 = nd.ell0.ok_or(CrError::NotFinitelyNondegenerate)?;
            let v = jet_determination(&src, &dst, &h1, &h2, k0, ell0)?;
            let mut oracle_line = None;
            if oracle {
                let seed = jet(&h1, k0 * ell0);
                let horizon = cap.saturating_sub(3).max(k0 * ell0 + 1);
                let probe = probe_uniqueness(&src, &dst, &seed, horizon, 2)?;
                oracle_line = Some(format!(
                    "degreewise oracle: extension {} (dead branches {}, surviving {})",
                    if probe.certified_unique() { "certified unique" } else { "NOT unique" },
                    probe.dead_branches,
                    probe.surviving_branches
                ));
            }
            let ok = matches!(v, DeterminationVerdict::Equal);
            if machine {
                println!(
                    "{}",
                    json!({"cap": cap, "k0": k0, "ell0": ell0, "verdict": format!("{v:?}"), "oracle": oracle_line})
                );
            } else {
                println!("cap D = {cap}, k0 = {k0}, ell0 = {ell0}");
                match &v {
                    DeterminationVerdict::Equal => println!("maps agree up to degree {cap}"),
                    DeterminationVerdict::JetMismatch { order } => {
                        println!("jet mismatch at order {order}")
                    }
                    DeterminationVerdict::ChainFailure { level } => {
                        println!("chain failure at Segre level {level}")
                    }
                }
                if let Some(l) = oracle_line {
                    println!("{l}");
                }
            }
            Ok(ok)
        }
        Command::Parametrize {
            input,
            map,
            target,
            degree,
            jtilde,
        } => {
            let (src, cap) = load_manifold(&input, cli.cap)?;
            let dst = match &target {
                Some(p) => load_manifold(p, cli.cap)?.0,
                None => src.clone(),
            };
            let h = load_map(&map, cap)?;
            if !check_maps_into(&h, &src, &dst)? {
                return Err(CrError::Input("map does not send the source into the target".into()));
            }
            let nd = ell_nondegenerate(&dst, (cap - 1).min(4));
            let ell0 = nd.ell0.ok_or(CrError::NotFinitelyNondegenerate)?;
            let jt = parse_jtilde(&jtilde, &src, &dst, &h)?;
            let par = Parametrization::new(&src, &dst, &jt, ell0, degree)?;
            let seed = jet(&h, par.k1 * ell0);
            let rebuilt = par.full_parametrization(&seed, degree)?;
            let mut matches = true;
            for (a, b) in rebuilt.components.iter().zip(&h.components) {
                if a.truncate(degree) != b.truncate(degree) {
                    matches = false;
                }
            }
            if machine {
                println!(
                    "{}",
                    json!({"cap": cap, "k1": par.k1, "ell0": ell0, "jet_order": par.k1 * ell0, "reproduced_to_degree": degree, "matches": matches})
                );
            } else {
                println!(
                    "jet order k1*ell0 = {} (k1 = {}, ell0 = {ell0})",
                    par.k1 * ell0,
                    par.k1
                );
                println!(
                    "parametrization from the jet {} the map up to degree {degree}",
                    if matches { "reproduces" } else { "DOES NOT reproduce" }
                );
            }
            Ok(matches)
        }
        Command::Variety {
            input,
            target,
            trunc,
            out,
        } => {
            let (src, cap) = load_manifold(&input, cli.cap)?;
            let dst = match &target {
                Some(p) => load_manifold(p, cli.cap)?.0,
                None => src.clone(),
            };
            let nd = ell_nondegenerate(&dst, (cap - 1).min(4));
            let ell0 = nd.ell0.ok_or(CrError::NotFinitelyNondegenerate)?;
            let systems = jet_variety_all_charts(&src, &dst, ell0, trunc)?;
            let mut text = String::new();
            for sys in &systems {
                text.push_str(&format!(
                    "# chart jtilde = {:?} ({} equations, truncation degree {})\n",
                    sys.jtilde.iter().map(|j| j + 1).collect::<Vec<_>>(),
                    sys.equations.len(),
                    sys.truncation_degree
                ));
                text.push_str(&sys.render());
            }
            match out {
                Some(p) => std::fs::write(&p, &text)
                    .map_err(|e| CrError::Input(format!("{}: {e}", p.display())))?,
                None => print!("{text}"),
            }
            Ok(true)
        }
    }
}
