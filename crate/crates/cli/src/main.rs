//! `streamta`: decode feature files with a streaming transformer model, and
//! generate test models and features.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamta_core::io::{load_features, load_model, load_posteriorgram, save_features, save_model, Vocab};
use streamta_core::numcore::Matrix;
use streamta_core::search::{CtcPrefixSearch, JointCtcTaSearch};
use streamta_core::streaming::encoder_latency_ms;
use streamta_core::{
    conditions, ctc_prefix_search, language_models, recognize, strategies, theoretical_latency_ms, DecodeParams,
    DecodeResult, FeatureMatrix, LanguageModel, LmOptions, LookAhead, ModelConfig, ModelParams, SearchContext,
    Session, StreamConfig,
};

#[derive(Parser, Debug)]
#[command(name = "streamta", version, about = "Streaming transformer speech recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode feature files and print one transcript per utterance.
    Decode(DecodeArgs),
    /// CTC prefix beam search over stored posteriorgrams.
    CtcDecode(CtcDecodeArgs),
    /// Write a randomly initialized model archive.
    GenModel(GenModelArgs),
    /// Write a random feature file.
    GenFeatures(GenFeaturesArgs),
    /// Print the theoretical latency of a look-ahead setting.
    Latency(LatencyArgs),
}

#[derive(Args, Debug, Clone)]
struct SearchArgs {
    /// ARPA language model file.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Language model type; defaults to `ngram` with --lm and `none` otherwise.
    #[arg(long)]
    lm_type: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.7)]
    alpha0: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 300)]
    k: usize,
    #[arg(long, default_value_t = 30)]
    p: usize,
    #[arg(long, default_value_t = 16.0)]
    theta1: f64,
    #[arg(long, default_value_t = 6.0)]
    theta2: f64,
    /// Decoder look-ahead in encoder frames.
    #[arg(long, default_value_t = 18)]
    eps_dec: usize,
    /// Write the per-frame search trace to standard error.
    #[arg(long)]
    trace: bool,
}

impl SearchArgs {
    fn params(&self) -> DecodeParams {
        DecodeParams {
            lambda: self.lambda,
            alpha0: self.alpha0,
            alpha: self.alpha,
            beta: self.beta,
            k_size: self.k,
            p_size: self.p,
            theta1: self.theta1,
            theta2: self.theta2,
            eps_dec: self.eps_dec,
            ..DecodeParams::default()
        }
    }

    fn language_model(&self, vocab: &Vocab) -> Result<Box<dyn LanguageModel>> {
        let kind = match (&self.lm_type, &self.lm) {
            (Some(kind), _) => kind.as_str(),
            (None, Some(_)) => "ngram",
            (None, None) => "none",
        };
        let opts = LmOptions {
            labels: vocab.label_count(),
            path: self.lm.clone(),
            vocab: Some(vocab.clone()),
        };
        Ok(language_models().create(kind, &opts)?)
    }
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Feature file; repeat for several utterances.
    #[arg(long, required = true)]
    features: Vec<PathBuf>,
    /// Per-layer encoder look-ahead in frames, or `inf`.
    #[arg(long, default_value = "3")]
    eps_enc: LookAhead,
    /// Decode through a streaming session fed chunks of this many frames.
    #[arg(long)]
    streaming: Option<usize>,
    /// Pure CTC prefix beam search without the attention decoder.
    #[arg(long, conflicts_with = "strategy")]
    ctc_only: bool,
    #[arg(long, default_value = JointCtcTaSearch::NAME)]
    strategy: String,
    /// Condition deleting cached decoder scores.
    #[arg(long, default_value = "never")]
    dcond: String,
    /// Condition adding decoder scores.
    #[arg(long, default_value = "always")]
    acond: String,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug)]
struct CtcDecodeArgs {
    /// Posteriorgram file; repeat for several utterances.
    #[arg(long, required = true)]
    posteriors: Vec<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug)]
struct GenModelArgs {
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary the model emits.
    #[arg(long)]
    vocab: PathBuf,
    /// Size preset: tiny, small or large.
    #[arg(long, default_value = "tiny")]
    preset: String,
    #[arg(long)]
    e_layers: Option<usize>,
    #[arg(long)]
    d_layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long, default_value_t = 83)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenFeaturesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    frames: usize,
    #[arg(long, default_value_t = 83)]
    dim: usize,
    #[arg(long, default_value_t = 10.0)]
    frame_shift_ms: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct LatencyArgs {
    #[arg(long, default_value_t = 12)]
    e_layers: usize,
    #[arg(long, default_value = "3")]
    eps_enc: LookAhead,
    #[arg(long, default_value_t = 18)]
    eps_dec: usize,
    #[arg(long, default_value_t = 10.0)]
    frame_shift_ms: f32,
}

fn print_trace(name: &Path, result: &DecodeResult) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "# {}", name.display());
    for entry in &result.trace {
        let _ = writeln!(err, "{entry}");
    }
}

fn check_vocab(model: &ModelParams, vocab: &Vocab) -> Result<()> {
    let cfg = &model.config;
    if cfg.vocab_size != vocab.len() || cfg.sos != vocab.sos() || cfg.eos != vocab.eos() {
        bail!(
            "vocabulary ({} tokens, <sos>={}, <eos>={:?}) does not match the model ({} tokens, <sos>={}, <eos>={:?})",
            vocab.len(),
            vocab.sos(),
            vocab.eos(),
            cfg.vocab_size,
            cfg.sos,
            cfg.eos
        );
    }
    Ok(())
}

fn stream_utterance(
    model: &ModelParams,
    strategy: &dyn streamta_core::SearchStrategy,
    ctx: SearchContext<'_>,
    cfg: StreamConfig,
    x: &FeatureMatrix,
    chunk: usize,
) -> Result<DecodeResult> {
    if chunk == 0 {
        bail!("--streaming chunk size must be positive");
    }
    let mut session = Session::new(model, strategy, ctx, cfg)?;
    let mut start = 0;
    while start < x.len() {
        let end = (start + chunk).min(x.len());
        session.push(&FeatureMatrix::new(x.frames.slice_rows(start, end), x.frame_shift_ms))?;
        start = end;
    }
    Ok(session.finalize()?)
}

fn run_decode(args: &DecodeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let vocab = Vocab::load(&args.vocab)?;
    check_vocab(&model, &vocab)?;
    let lm = args.search.language_model(&vocab)?;
    let strategy_name = if args.ctc_only { CtcPrefixSearch::NAME } else { &args.strategy };
    let strategy = strategies().create(strategy_name, &())?;
    let dcond = conditions().create(&args.dcond, &())?;
    let acond = conditions().create(&args.acond, &())?;
    let ctx = SearchContext {
        params: args.search.params(),
        lm: lm.as_ref(),
        decoder: Some(&model.decoder),
        dcond: dcond.as_ref(),
        acond: acond.as_ref(),
    };
    ctx.params.validate()?;
    let mut out = std::io::stdout().lock();
    for path in &args.features {
        let x = load_features(path)?;
        let result = match args.streaming {
            Some(chunk) => {
                let cfg = StreamConfig {
                    eps_enc: args.eps_enc,
                    eps_dec: args.search.eps_dec,
                    frame_shift_ms: x.frame_shift_ms,
                };
                stream_utterance(&model, strategy.as_ref(), ctx, cfg, &x, chunk)
            }
            None => recognize(&model, &x, args.eps_enc, strategy.as_ref(), ctx).map_err(Into::into),
        }
        .with_context(|| format!("decoding {}", path.display()))?;
        if args.search.trace {
            print_trace(path, &result);
        }
        writeln!(out, "{}", vocab.detokenize(&result.labels))?;
    }
    Ok(())
}

fn run_ctc_decode(args: &CtcDecodeArgs) -> Result<()> {
    let vocab = Vocab::load(&args.vocab)?;
    let lm = args.search.language_model(&vocab)?;
    let params = args.search.params();
    let mut out = std::io::stdout().lock();
    for path in &args.posteriors {
        let mut post = load_posteriorgram(path)?;
        if post.width() != vocab.len() + 1 {
            bail!(
                "{}: posteriorgram has {} columns, vocabulary needs {}",
                path.display(),
                post.width(),
                vocab.len() + 1
            );
        }
        let result = ctc_prefix_search(&mut post, lm.as_ref(), &params)?;
        if args.search.trace {
            print_trace(path, &result);
        }
        writeln!(out, "{}", vocab.detokenize(&result.labels))?;
    }
    Ok(())
}

fn run_gen_model(args: &GenModelArgs) -> Result<()> {
    let vocab = Vocab::load(&args.vocab)?;
    let v = vocab.len();
    let mut cfg = match args.preset.as_str() {
        "tiny" => ModelConfig::with_dims(2, 1, 8, 16, 2, v, args.feat_dim),
        "small" => ModelConfig::small(v, args.feat_dim),
        "large" => ModelConfig::large(v, args.feat_dim),
        other => bail!("unknown preset '{other}' (available: tiny, small, large)"),
    };
    let d_model = args.d_model.unwrap_or(cfg.d_model);
    cfg = ModelConfig::with_dims(
        args.e_layers.unwrap_or(cfg.e_layers),
        args.d_layers.unwrap_or(cfg.d_layers),
        d_model,
        args.d_ff.unwrap_or(if args.d_model.is_some() { 2 * d_model } else { cfg.d_ff }),
        args.heads.unwrap_or(cfg.heads),
        v,
        args.feat_dim,
    );
    cfg.sos = vocab.sos();
    cfg.eos = vocab.eos();
    cfg.validate()?;
    let model = ModelParams::random(&cfg, &mut ChaCha8Rng::seed_from_u64(args.seed));
    save_model(&args.out, &model)?;
    Ok(())
}

fn run_gen_features(args: &GenFeaturesArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let data = (0..args.frames * args.dim).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
    let x = FeatureMatrix::new(Matrix::from_vec(args.frames, args.dim, data)?, args.frame_shift_ms);
    save_features(&args.out, &x)?;
    Ok(())
}

fn run_latency(args: &LatencyArgs) -> Result<()> {
    let cfg = StreamConfig {
        eps_enc: args.eps_enc,
        eps_dec: args.eps_dec,
        frame_shift_ms: args.frame_shift_ms,
    };
    println!("encoder {} ms", encoder_latency_ms(&cfg, args.e_layers));
    println!("total {} ms", theoretical_latency_ms(&cfg, args.e_layers));
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Decode(a) => run_decode(a),
        Command::CtcDecode(a) => run_ctc_decode(a),
        Command::GenModel(a) => run_gen_model(a),
        Command::GenFeatures(a) => run_gen_features(a),
        Command::Latency(a) => run_latency(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
