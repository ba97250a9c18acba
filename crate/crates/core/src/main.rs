use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use semzip::atom::SemanticAtom;
use semzip::case::{load_case_set, write_case_set, CaseRecord, CaseSet, Regime, Representation};
use semzip::decoder::{prompt_records, representation_payload, export_prompts};
use semzip::harness::{
    aggregate_markdown, aggregate_stage, begin_run, decode_stage, load_manifest, load_scores, prepare_stage,
    run_pipeline, score_stage, sensitivity, sensitivity_csv, sensitivity_markdown, write_failure_marker, Environment,
    HarnessConfig,
};
use semzip::packet::{KeywordTable, Packetizer};

/// Lossy context codecs and a round-trip atom-recovery harness.
#[derive(Parser)]
#[command(name = "semzip", version)]
struct Cli {
    /// Run configuration (TOML). Defaults to ./semzip.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Case-set directory (overrides the config).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Directory holding run directories (overrides the config).
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config, case set, dictionaries and stored representations.
    Validate,
    /// Token counts of one representation against the original text.
    Tokenize {
        #[arg(long)]
        case: String,
        #[arg(long)]
        regime: Regime,
    },
    /// Render gold atoms into one or more regimes.
    Render {
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        case: Option<String>,
        #[arg(long)]
        all: bool,
        /// Regimes to render (repeatable); all six by default.
        #[arg(long)]
        regime: Vec<Regime>,
        /// Protocol dictionary to render with.
        #[arg(long)]
        dict: Option<String>,
        /// Store the renderings in the case files.
        #[arg(long)]
        write: bool,
    },
    /// Write decoder prompts as JSONL.
    ExportPrompts {
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        regime: Vec<Regime>,
    },
    /// Decode a run's prompts, creating the run if needed. Resumable.
    Decode {
        #[arg(long)]
        run: String,
        #[command(flatten)]
        decoder: DecoderFlags,
    },
    /// Score archived decoder outputs. Never touches the network.
    Score {
        #[arg(long)]
        run: String,
        /// Thresholds to score at (repeatable); the run's sweep by default.
        #[arg(long)]
        threshold: Vec<f64>,
    },
    /// Write the report tables for a scored run.
    Aggregate {
        #[arg(long)]
        run: String,
    },
    /// Per-threshold means for a scored run.
    Sensitivity {
        #[arg(long)]
        run: String,
    },
    /// Split a case's atoms into a protected/lossy hybrid packet.
    Packet {
        #[arg(long)]
        case: String,
        #[arg(long)]
        dict: Option<String>,
    },
    /// The full pipeline: prepare, decode, score, aggregate.
    Run {
        #[arg(long)]
        run_id: Option<String>,
        #[command(flatten)]
        decoder: DecoderFlags,
    },
}

#[derive(Args)]
struct DecoderFlags {
    /// Decode with the built-in deterministic stub instead of the endpoint.
    #[arg(long)]
    stub: bool,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    max_output_tokens: Option<u32>,
    /// Require the whole response to be one JSON object.
    #[arg(long)]
    strict_json: bool,
    /// Permit sampling settings other than temperature 0 and top_p 1.
    #[arg(long)]
    unsafe_sampling: bool,
}

impl DecoderFlags {
    fn apply(&self, config: &mut HarnessConfig) {
        if let Some(m) = &self.model {
            config.decoder.model = m.clone();
        }
        if let Some(e) = &self.endpoint {
            config.decoder.endpoint = e.clone();
        }
        if let Some(p) = self.parallelism {
            config.parallelism = p;
        }
        if let Some(n) = self.max_output_tokens {
            config.decoder.max_output_tokens = n;
        }
        config.decoder.strict_json |= self.strict_json;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    let mut config = match &cli.config {
        Some(path) => HarnessConfig::load(path)?,
        None if Path::new("semzip.toml").is_file() => HarnessConfig::load(Path::new("semzip.toml"))?,
        None => HarnessConfig::default(),
    };
    if let Some(d) = &cli.dataset {
        config.dataset = d.clone();
    }
    if let Some(r) = &cli.runs_dir {
        config.runs_dir = r.clone();
    }
    Ok(config)
}

fn load_cases(config: &HarnessConfig) -> Result<CaseSet> {
    load_case_set(&config.dataset).with_context(|| format!("loading case set {}", config.dataset.display()))
}

fn find_case<'a>(set: &'a CaseSet, id: &str) -> Result<&'a CaseRecord> {
    set.get(id).ok_or_else(|| anyhow!("no case `{id}` (known: {})", set.ids().join(", ")))
}

fn gold(case: &CaseRecord) -> Vec<SemanticAtom> {
    case.gold_atoms.iter().map(|g| g.atom.clone()).collect()
}

/// `--run` is a run id under the runs directory, or a path to a run directory.
fn run_dir(config: &HarnessConfig, run: &str) -> PathBuf {
    let as_path = PathBuf::from(run);
    if as_path.join("manifest.json").is_file() {
        as_path
    } else {
        config.runs_dir.join(run)
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Validate => validate(config),
        Command::Tokenize { case, regime } => tokenize(config, &case, regime),
        Command::Render {
            case,
            all: _,
            regime,
            dict,
            write,
        } => render(config, case.as_deref(), &regime, dict.as_deref(), write),
        Command::ExportPrompts { out, regime } => {
            let env = Environment::new(config)?;
            let set = load_cases(&env.config)?;
            let regimes = if regime.is_empty() { env.config.regimes.clone() } else { regime };
            let records = prompt_records(&set, &regimes, &env.template, &env.codec)?;
            let text = export_prompts(&records, &env.template);
            match out {
                Some(path) => {
                    std::fs::write(&path, text).with_context(|| path.display().to_string())?;
                    eprintln!("wrote {} prompts to {}", records.len(), path.display());
                }
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
            Ok(())
        }
        Command::Decode { run, decoder } => {
            decoder.apply(&mut config);
            let dir = run_dir(&config, &run);
            let env = decoder_env(config, &decoder)?;
            if !dir.join("manifest.json").is_file() {
                let set = load_cases(&env.config)?;
                let dir = begin_run(&env, &set, Some(&run))?;
                eprintln!("created run {}", dir.display());
                if let Err(e) = prepare_stage(&env, &set, &dir) {
                    write_failure_marker(&dir, &e, &[]);
                    return Err(e.into());
                }
                decode_and_report(&env, &dir, &["prepare".to_string()])
            } else {
                decode_and_report(&env, &dir, &[])
            }
        }
        Command::Score { run, threshold } => {
            let dir = run_dir(&config, &run);
            let env = Environment::new(config)?;
            let thresholds = (!threshold.is_empty()).then_some(threshold.as_slice());
            let scores = score_stage(&env, &dir, thresholds)?;
            let rows = sensitivity(&scores);
            print!("{}", sensitivity_markdown(&rows));
            eprintln!("wrote {} score files", scores.len());
            Ok(())
        }
        Command::Aggregate { run } => {
            let rows = aggregate_stage(&run_dir(&config, &run))?;
            print!("{}", aggregate_markdown(&rows));
            Ok(())
        }
        Command::Sensitivity { run } => {
            let dir = run_dir(&config, &run);
            let manifest = load_manifest(&dir)?;
            let rows = sensitivity(&load_scores(&dir, &manifest)?);
            let reports = dir.join("reports");
            std::fs::create_dir_all(&reports)?;
            std::fs::write(reports.join("sensitivity.csv"), sensitivity_csv(&rows))?;
            let md = sensitivity_markdown(&rows);
            std::fs::write(reports.join("sensitivity.md"), &md)?;
            print!("{md}");
            Ok(())
        }
        Command::Packet { case, dict } => packet(config, &case, dict.as_deref()),
        Command::Run { run_id, decoder } => {
            decoder.apply(&mut config);
            let env = decoder_env(config, &decoder)?;
            let set = load_cases(&env.config)?;
            let dir = run_pipeline(&env, &set, run_id.as_deref())?;
            let rows = aggregate_stage(&dir)?;
            print!("{}", aggregate_markdown(&rows));
            println!("\nrun directory: {}", dir.display());
            Ok(())
        }
    }
}

fn decode_and_report(env: &Environment, dir: &Path, completed: &[String]) -> Result<()> {
    match decode_stage(env, dir) {
        Ok(sent) => {
            println!("decoded {sent} pending prompts into {}", dir.join("raw").display());
            Ok(())
        }
        Err(e) => {
            write_failure_marker(dir, &e, completed);
            Err(e.into())
        }
    }
}

fn decoder_env(config: HarnessConfig, flags: &DecoderFlags) -> Result<Environment> {
    let mut env = Environment::new(config)?;
    env.stub = flags.stub;
    env.unsafe_sampling = flags.unsafe_sampling;
    env.config.decoder.validate(env.unsafe_sampling)?;
    Ok(env)
}

fn validate(config: HarnessConfig) -> Result<()> {
    let env = Environment::new(config)?;
    env.config.decoder.validate(false)?;
    let set = load_cases(&env.config)?;
    let mut problems = Vec::new();
    for case in &set.cases {
        let atoms = gold(case);
        for rep in case.representations.values().filter(|r| r.regime.is_decodable()) {
            let dict = rep.dictionary_id.as_deref().and_then(|id| set.dictionary(id));
            match env.codec.parse_symbolic(&rep.payload, rep.regime, dict) {
                Ok(back) if env.codec.same_atoms(&atoms, &back) => {}
                Ok(_) => problems.push(format!("{} / {}: stored payload does not decode to the gold atoms", case.case_id, rep.regime)),
                Err(e) => problems.push(format!("{} / {}: {e}", case.case_id, rep.regime)),
            }
        }
    }
    for (id, dict) in &set.dictionaries {
        let reparsed = semzip::codec::parse_dictionary(&dict.header_text)
            .with_context(|| format!("dictionary {id}"))?;
        if reparsed.entries != dict.entries {
            problems.push(format!("dictionary {id}: header does not re-parse to the same entries"));
        }
    }
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("{p}");
        }
        bail!("{} problem(s) found", problems.len());
    }
    println!(
        "ok: {} cases, {} gold atoms, {} stored representations, {} dictionaries",
        set.cases.len(),
        set.cases.iter().map(|c| c.gold_atoms.len()).sum::<usize>(),
        set.cases.iter().map(|c| c.representations.len()).sum::<usize>(),
        set.dictionaries.len()
    );
    Ok(())
}

fn tokenize(config: HarnessConfig, case_id: &str, regime: Regime) -> Result<()> {
    let env = Environment::new(config)?;
    let set = load_cases(&env.config)?;
    let case = find_case(&set, case_id)?;
    let (payload, header) = match case.representation(regime) {
        Some(rep) => (
            rep.payload.clone(),
            rep.dictionary_id.as_deref().and_then(|id| set.dictionary(id)).map(|d| d.header_text.clone()),
        ),
        None => (representation_payload(&set, case_id, regime, &env.codec)?, None),
    };
    println!("case {case_id}, regime {regime}");
    println!("{:<12} {:>9} {:>11} {:>9}", "vocabulary", "original", "compressed", "gain");
    for (vocab, _) in env.vocabularies()? {
        let original = vocab.count(&case.original_text);
        let compressed = vocab.count(&payload);
        let gain = semzip::bpe::gain_from_counts(original, compressed)?;
        println!("{:<12} {original:>9} {compressed:>11} {gain:>9.4}", vocab.name());
        if let Some(h) = &header {
            println!("{:<12} {:>9} {:>11}  (dictionary header, not in gain)", "", "", vocab.count(h));
        }
    }
    Ok(())
}

fn render(config: HarnessConfig, case_id: Option<&str>, regimes: &[Regime], dict_id: Option<&str>, write: bool) -> Result<()> {
    let env = Environment::new(config)?;
    let mut set = load_cases(&env.config)?;
    let regimes: Vec<Regime> = if regimes.is_empty() { Regime::ALL.to_vec() } else { regimes.to_vec() };
    let dict = match dict_id {
        Some(id) => Some(set.dictionary(id).ok_or_else(|| anyhow!("no dictionary `{id}`"))?.clone()),
        None => None,
    };
    if let Some(id) = case_id {
        find_case(&set, id)?;
    }
    for case in set.cases.iter_mut().filter(|c| case_id.is_none_or(|id| c.case_id == id)) {
        let atoms = gold(case);
        println!("== {}", case.case_id);
        for &regime in &regimes {
            let r = env
                .codec
                .render(&atoms, regime, dict.as_ref())
                .with_context(|| format!("{} / {regime}", case.case_id))?;
            println!("[{regime}] {}", r.payload);
            if write {
                let mut rep = Representation::new(regime, r.payload);
                rep.dictionary_id = dict_id.map(str::to_string);
                case.insert_representation(rep);
            }
        }
    }
    if write {
        write_case_set(&env.config.dataset, &set)?;
        eprintln!("stored representations in {}", env.config.dataset.display());
    }
    Ok(())
}

fn packet(config: HarnessConfig, case_id: &str, dict_id: Option<&str>) -> Result<()> {
    let env = Environment::new(config)?;
    let set = load_cases(&env.config)?;
    let case = find_case(&set, case_id)?;
    let dict = match dict_id {
        Some(id) => Some(set.dictionary(id).ok_or_else(|| anyhow!("no dictionary `{id}`"))?),
        None => None,
    };
    let packetizer = Packetizer {
        keywords: KeywordTable::builtin(),
        aliases: env.alias_table().clone(),
    };
    let packet = packetizer.build_packet(&gold(case), dict, &env.codec)?;
    println!("{}\n", packet.text());
    println!("{:<3} {:<28} {:<9} rules", "#", "subject", "channel");
    for d in &packet.decisions {
        let rules: Vec<&str> = d.triggered_rules.iter().map(|r| r.name()).collect();
        let rules = if d.ambiguous { "ambiguous (protected by default)".to_string() } else { rules.join(", ") };
        println!("{:<3} {:<28} {:<9} {rules}", d.index, d.subject, format!("{:?}", d.channel).to_lowercase());
    }
    Ok(())
}
