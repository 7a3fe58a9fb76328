//! `tmt` — corpus generation, two-stage training, streaming synthesis, and
//! pipeline latency analysis from one binary.

mod config;

use std::io::{BufWriter, Read, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use config::FileConfig;
use tmt_core::checkpoint::load_checkpoint;
use tmt_core::corpus::{generate_corpus, load_corpus, save_corpus, AlignedExample, VocabLayout};
use tmt_core::infer::{SessionConfig, SpeechSampling, StreamSession, TextInput};
use tmt_core::latency::{
    analytic_fpl, analytic_rtf, results_csv_row, simulate_pipeline, write_events_csv, FplMode,
    LatencyParams, ModelClass, RESULTS_CSV_HEADER,
};
use tmt_core::mask::{build_causal_mask, designed_mask_for};
use tmt_core::model::{ModelConfig, ModelParams};
use tmt_core::sequence::build_finetune_sequence;
use tmt_core::train::{evaluate, run_training, TrainConfig, TrainStage};

#[derive(Parser)]
#[command(
    name = "tmt",
    about = "Synchronous text-token to speech-token generation at desk scale",
    version
)]
struct Cli {
    /// Flat `key = value` config file (falls back to $TMT_CONFIG); flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic aligned corpus file.
    CorpusGen(CorpusGenArgs),
    /// Masked pretraining over alternating spans.
    Pretrain(TrainArgs),
    /// Fine-tune a pretrained checkpoint on single-step sequences.
    Finetune(TrainArgs),
    /// Teacher-forced exact-match evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Stream text tokens through a trained model and emit audio chunks.
    Synth(SynthArgs),
    /// Analytic + simulated first-packet latency and real-time factor.
    Simulate(SimulateArgs),
    /// Dump attention masks and sequence layouts for golden-file tests.
    MasksDump(MasksDumpArgs),
}

#[derive(clap::Args)]
struct CorpusGenArgs {
    /// Output corpus path [required]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of sentences [default: 2000]
    #[arg(long)]
    n: Option<usize>,
    /// Generator seed [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Text vocabulary size [default: 32]
    #[arg(long)]
    text_vocab: Option<usize>,
    /// Speech vocabulary size [default: 64]
    #[arg(long)]
    speech_vocab: Option<usize>,
    /// Largest span length class [default: 32]
    #[arg(long)]
    max_duration: Option<usize>,
    /// Shortest sentence [default: 3]
    #[arg(long)]
    len_min: Option<usize>,
    /// Longest sentence [default: 12]
    #[arg(long)]
    len_max: Option<usize>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Training corpus path [required]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output checkpoint path [required]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to continue from (pretrain: optional resume; finetune:
    /// required unless --from-scratch)
    #[arg(long)]
    init: Option<PathBuf>,
    /// Alias of --init for pretraining [same]
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Optimization steps [default: 3000 pretrain / 1000 finetune]
    #[arg(long)]
    steps: Option<usize>,
    /// Examples per step [default: 16]
    #[arg(long)]
    batch: Option<usize>,
    /// Base learning rate [default: 3e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Linear warmup steps [default: 100]
    #[arg(long)]
    warmup: Option<usize>,
    /// Seed for batches and masks [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Look-ahead text tokens [default: 1]
    #[arg(long)]
    q: Option<usize>,
    /// Held-out corpus for periodic evaluation
    #[arg(long)]
    eval_corpus: Option<PathBuf>,
    /// Evaluate every N steps (0 = never) [default: 0]
    #[arg(long)]
    eval_every: Option<usize>,
    /// Training-curve CSV path
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Train the ablation without the pretraining stage (finetune only)
    #[arg(long)]
    from_scratch: bool,
    /// Supervise every duration placeholder, not only the trailing one
    #[arg(long)]
    supervise_all_durations: bool,
    /// Transformer layers for fresh models [default: 4]
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads [default: 4]
    #[arg(long)]
    heads: Option<usize>,
    /// Model width [default: 128]
    #[arg(long)]
    dim: Option<usize>,
    /// Feed-forward width [default: 256]
    #[arg(long)]
    ffn: Option<usize>,
    /// Maximum composed-sequence length [default: 512]
    #[arg(long)]
    max_seq: Option<usize>,
    /// Text vocabulary size for fresh models [default: 32]
    #[arg(long)]
    text_vocab: Option<usize>,
    /// Speech vocabulary size for fresh models [default: 64]
    #[arg(long)]
    speech_vocab: Option<usize>,
    /// Largest span length class for fresh models [default: 32]
    #[arg(long)]
    max_duration: Option<usize>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Checkpoint to evaluate [required]
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Evaluation corpus [required]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Look-ahead text tokens [default: 1]
    #[arg(long)]
    q: Option<usize>,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Trained checkpoint [required]
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Inline text token ids, space separated (e.g. "5 11 3")
    #[arg(long)]
    text: Option<String>,
    /// File of whitespace-separated token ids (stdin when neither is given)
    #[arg(long)]
    text_file: Option<PathBuf>,
    /// Look-ahead text tokens [default: 1]
    #[arg(long)]
    q: Option<usize>,
    /// Decoder chunk size in speech tokens [default: 15]
    #[arg(long)]
    chunk: Option<usize>,
    /// Top-k classes for duration sampling, 1 = greedy [default: 1]
    #[arg(long)]
    dur_topk: Option<usize>,
    /// Duration modulation factor [default: 1.0]
    #[arg(long)]
    modulation: Option<f64>,
    /// Top-k for speech tokens, 0 = greedy [default: 0]
    #[arg(long)]
    speech_topk: Option<usize>,
    /// Sampling seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Decode under the plain causal mask (ablation)
    #[arg(long)]
    causal_mask: bool,
    /// Mock-decoder samples per speech token [default: 4]
    #[arg(long)]
    samples_per_token: Option<usize>,
    /// Simulated upstream token interval in ms, 0 = feed immediately [default: 0]
    #[arg(long)]
    dllm_ms: Option<u64>,
    /// Raw audio output (little-endian f64 samples)
    #[arg(long)]
    audio_out: Option<PathBuf>,
    /// Session trace CSV output
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Corpus-format file whose first line becomes the prosody prompt
    #[arg(long)]
    prompt_file: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Model class: cosyvoice | valle | cosyvoice2 | maskgct | f5tts | tmt [required]
    #[arg(long)]
    model: Option<String>,
    /// Upstream ms per text token [default: 25]
    #[arg(long)]
    dllm_ms: Option<f64>,
    /// Generator ms per step [default: 5]
    #[arg(long)]
    dtts_ms: Option<f64>,
    /// Decoder chunk size [default: 15]
    #[arg(long)]
    chunk: Option<usize>,
    /// Speech-token frame length in ms [default: 40]
    #[arg(long)]
    frame_ms: Option<f64>,
    /// Text tokens in the utterance [default: 10]
    #[arg(long)]
    text_len: Option<usize>,
    /// Speech tokens in the utterance [default: 100]
    #[arg(long)]
    speech_len: Option<usize>,
    /// Sampling iterations of the non-autoregressive classes (b)
    #[arg(long)]
    nar_iters: Option<usize>,
    /// Decode steps until the first chunk (c) when no trace is given
    #[arg(long)]
    first_chunk_steps: Option<usize>,
    /// Look-ahead of the synchronous class [default: 1]
    #[arg(long)]
    q: Option<usize>,
    /// Per-token span lengths for the synchronous class (e.g. "7 5 8")
    #[arg(long)]
    trace: Option<String>,
    /// Append a results CSV row here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the event log CSV here
    #[arg(long)]
    events: Option<PathBuf>,
    /// FPL flavor: L (with upstream) or A (text ready) [default: L]
    #[arg(long)]
    mode: Option<String>,
}

#[derive(clap::Args)]
struct MasksDumpArgs {
    /// Span lengths of the synthetic sentence [default: "7 5 8"]
    #[arg(long)]
    durations: Option<String>,
    /// Decode step to mask [default: 2]
    #[arg(long)]
    n: Option<usize>,
    /// Look-ahead [default: 1]
    #[arg(long)]
    q: Option<usize>,
    /// Golden mask output path [required]
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Position dump output path
    #[arg(long)]
    seq_out: Option<PathBuf>,
    /// Dump the causal ablation mask instead of the designed one
    #[arg(long)]
    causal: bool,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::CorpusGen(args) => corpus_gen(args, &file),
        Command::Pretrain(args) => train(args, &file, TrainStage::Pretrain),
        Command::Finetune(args) => train(args, &file, TrainStage::Finetune),
        Command::Eval(args) => eval(args, &file),
        Command::Synth(args) => synth(args, &file),
        Command::Simulate(args) => simulate(args, &file),
        Command::MasksDump(args) => masks_dump(args, &file),
    }
}

fn vocab_from(
    file: &FileConfig,
    text_vocab: Option<usize>,
    speech_vocab: Option<usize>,
    max_duration: Option<usize>,
) -> Result<VocabLayout> {
    Ok(VocabLayout::new(
        file.resolve(text_vocab, "text-vocab", 32)?,
        file.resolve(speech_vocab, "speech-vocab", 64)?,
        file.resolve(max_duration, "max-duration", 32)?,
    )?)
}

fn corpus_gen(args: CorpusGenArgs, file: &FileConfig) -> Result<()> {
    let out: PathBuf = file.resolve_required(args.out, "out")?;
    let n = file.resolve(args.n, "n", 2000)?;
    let seed = file.resolve(args.seed, "seed", 1)?;
    let vocab = vocab_from(file, args.text_vocab, args.speech_vocab, args.max_duration)?;
    let len_min = file.resolve(args.len_min, "len-min", 3)?;
    let len_max = file.resolve(args.len_max, "len-max", 12)?;
    let corpus = generate_corpus(n, seed, &vocab, (len_min, len_max))?;
    save_corpus(&out, &corpus)?;
    println!("wrote {} sentences to {}", corpus.len(), out.display());
    Ok(())
}

fn train(args: TrainArgs, file: &FileConfig, stage: TrainStage) -> Result<()> {
    let corpus_path: PathBuf = file.resolve_required(args.corpus, "corpus")?;
    let out: PathBuf = file.resolve_required(args.out, "out")?;
    let init_path = match stage {
        TrainStage::Pretrain => file.resolve_optional(args.resume.or(args.init), "resume")?,
        TrainStage::Finetune => file.resolve_optional(args.init, "init")?,
    };
    if stage == TrainStage::Finetune && init_path.is_none() && !args.from_scratch {
        bail!("finetune needs --init <checkpoint>, or --from-scratch for the ablation");
    }

    let defaults = TrainConfig::desk_default(stage);
    let config = TrainConfig {
        stage,
        steps: file.resolve(args.steps, "steps", defaults.steps)?,
        batch_size: file.resolve(args.batch, "batch", defaults.batch_size)?,
        learning_rate: file.resolve(args.lr, "lr", defaults.learning_rate)?,
        warmup_steps: file.resolve(args.warmup, "warmup", defaults.warmup_steps)?,
        seed: file.resolve(args.seed, "seed", defaults.seed)?,
        q: file.resolve(args.q, "q", defaults.q)?,
        checkpoint_path: Some(out.clone()),
        eval_every: file.resolve(args.eval_every, "eval-every", 0)?,
        supervise_all_durations: args.supervise_all_durations,
        curve_path: file.resolve_optional(args.curve, "curve")?,
    };

    let (params, vocab, optimizer) = match &init_path {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let (params, vocab, step, opt) = ckpt.into_params()?;
            println!("resuming from {} at step {step}", path.display());
            // a fresh stage restarts the schedule; keep moments only on resume
            let opt = if stage == TrainStage::Finetune { None } else { opt };
            (params, vocab, opt)
        }
        None => {
            let vocab =
                vocab_from(file, args.text_vocab, args.speech_vocab, args.max_duration)?;
            let model_config = ModelConfig {
                num_layers: file.resolve(args.layers, "layers", 4)?,
                num_heads: file.resolve(args.heads, "heads", 4)?,
                model_dim: file.resolve(args.dim, "dim", 128)?,
                ffn_dim: file.resolve(args.ffn, "ffn", 256)?,
                max_seq_len: file.resolve(args.max_seq, "max-seq", 512)?,
                ..ModelConfig::desk_default(&vocab)
            };
            let params = ModelParams::init(model_config, config.seed)?;
            (params, vocab, None)
        }
    };

    let corpus = load_corpus(&corpus_path, &vocab)?;
    let eval_corpus = match file.resolve_optional(args.eval_corpus, "eval-corpus")? {
        Some(path) => Some(load_corpus(&path, &vocab)?),
        None => None,
    };

    let started = Instant::now();
    let outcome = run_training(
        &config,
        &corpus,
        eval_corpus.as_deref(),
        &vocab,
        params,
        optimizer,
    )?;
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    match outcome.reports.last() {
        Some(last) => println!(
            "{stage}: {} steps in {minutes:.1} min, final loss {:.4} (mask {:.4}, duration {:.4})",
            outcome.reports.len(),
            last.total,
            last.l_mask,
            last.l_duration
        ),
        None => println!("{stage}: no steps run; wrote the initial checkpoint"),
    }
    println!("checkpoint: {}", out.display());
    Ok(())
}

fn eval(args: EvalArgs, file: &FileConfig) -> Result<()> {
    let ckpt_path: PathBuf = file.resolve_required(args.ckpt, "ckpt")?;
    let corpus_path: PathBuf = file.resolve_required(args.corpus, "corpus")?;
    let q = file.resolve(args.q, "q", 1)?;
    let (params, vocab, step, _) = load_checkpoint(&ckpt_path)?.into_params()?;
    let corpus = load_corpus(&corpus_path, &vocab)?;
    let m = evaluate(&params, &corpus, q, &vocab)?;
    println!(
        "step={step} examples={} speech_token_accuracy={:.4} duration_exact_match={:.4} span_exact_match={:.4}",
        corpus.len(),
        m.speech_token_accuracy,
        m.duration_exact_match,
        m.span_exact_match
    );
    Ok(())
}

fn read_text_tokens(args: &SynthArgs, file: &FileConfig) -> Result<Vec<usize>> {
    let inline = file.resolve_optional(args.text.clone(), "text")?;
    let text_file = file.resolve_optional(args.text_file.clone(), "text-file")?;
    let raw = match (inline, text_file) {
        (Some(t), _) => t,
        (None, Some(path)) => std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?,
        (None, None) => {
            let mut buf = String::new();
            std::io::stdin().read_to_string(&mut buf)?;
            buf
        }
    };
    raw.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| anyhow!("`{tok}` is not a text token id"))
        })
        .collect()
}

fn synth(args: SynthArgs, file: &FileConfig) -> Result<()> {
    let ckpt_path: PathBuf = file.resolve_required(args.ckpt.clone(), "ckpt")?;
    let (params, vocab, _, _) = load_checkpoint(&ckpt_path)?.into_params()?;
    let tokens = read_text_tokens(&args, file)?;
    let speech_topk = file.resolve(args.speech_topk, "speech-topk", 0)?;
    let session_cfg = SessionConfig {
        q: file.resolve(args.q, "q", 1)?,
        chunk_size: file.resolve(args.chunk, "chunk", 15)?,
        duration_topk: file.resolve(args.dur_topk, "dur-topk", 1)?,
        duration_modulation: file.resolve(args.modulation, "modulation", 1.0)?,
        speech_sampling: if speech_topk == 0 {
            SpeechSampling::Greedy
        } else {
            SpeechSampling::TopK(speech_topk)
        },
        seed: file.resolve(args.seed, "seed", 0)?,
        use_designed_mask: !args.causal_mask,
        samples_per_token: file.resolve(args.samples_per_token, "samples-per-token", 4)?,
    };
    let prompt = match file.resolve_optional(args.prompt_file.clone(), "prompt-file")? {
        Some(path) => {
            let lines = load_corpus(&path, &vocab)?;
            Some(
                lines
                    .into_iter()
                    .next()
                    .ok_or_else(|| anyhow!("prompt file {} is empty", path.display()))?,
            )
        }
        None => None,
    };
    let pacing = Duration::from_millis(file.resolve(args.dllm_ms, "dllm-ms", 0)?);

    let mut audio_out = match file.resolve_optional(args.audio_out.clone(), "audio-out")? {
        Some(path) => Some((
            BufWriter::new(
                std::fs::File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))?,
            ),
            path,
        )),
        None => None,
    };

    let mut session = StreamSession::open(&params, vocab.clone(), session_cfg, prompt.as_ref())?;
    let started = Instant::now();
    let mut first_chunk_at: Option<Duration> = None;
    let mut chunk_count = 0usize;
    let mut sample_count = 0usize;
    let mut write_chunks = |chunks: &[tmt_core::infer::AudioChunk],
                            audio_out: &mut Option<(BufWriter<std::fs::File>, PathBuf)>|
     -> Result<()> {
        for chunk in chunks {
            if first_chunk_at.is_none() {
                first_chunk_at = Some(started.elapsed());
            }
            chunk_count += 1;
            sample_count += chunk.samples.len();
            if let Some((w, _)) = audio_out {
                for s in &chunk.samples {
                    w.write_all(&s.to_le_bytes())?;
                }
            }
        }
        Ok(())
    };

    for (i, &token) in tokens.iter().enumerate() {
        if i > 0 && !pacing.is_zero() {
            std::thread::sleep(pacing);
        }
        if session.is_closed() {
            eprintln!("generation stopped before the text ran out ({} of {} tokens fed)", i, tokens.len());
            break;
        }
        let chunks = session.feed_token(TextInput::Token(token))?;
        write_chunks(&chunks, &mut audio_out)?;
    }
    if !session.is_closed() {
        let chunks = session.feed_token(TextInput::EndOfText)?;
        write_chunks(&chunks, &mut audio_out)?;
    }

    if let Some((mut w, path)) = audio_out {
        w.flush()?;
        println!("audio: {} ({} samples)", path.display(), sample_count);
    }
    if let Some(path) = file.resolve_optional(args.trace_out.clone(), "trace-out")? {
        let f = std::fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        session.write_trace_csv(BufWriter::new(f))?;
        println!("trace: {}", path.display());
    }
    println!(
        "generated {} speech tokens over {} spans in {} forwards, {} chunks",
        session.speech_tokens().len(),
        session.span_lens().len(),
        session.forward_count(),
        chunk_count
    );
    if let Some(fpl) = first_chunk_at {
        println!("wall-clock first packet: {:.1} ms", fpl.as_secs_f64() * 1e3);
    }
    Ok(())
}

fn parse_ms(v: f64) -> Duration {
    Duration::from_nanos((v * 1e6).round() as u64)
}

fn simulate(args: SimulateArgs, file: &FileConfig) -> Result<()> {
    let model: ModelClass = file
        .resolve_required::<String>(args.model, "model")?
        .parse()
        .map_err(|e: String| anyhow!(e))?;
    let mode = match file
        .resolve(args.mode, "mode", "L".to_string())?
        .to_ascii_uppercase()
        .as_str()
    {
        "A" => FplMode::A,
        "L" => FplMode::L,
        other => bail!("mode must be A or L, got `{other}`"),
    };
    let trace: Option<Vec<usize>> = match file.resolve_optional(args.trace, "trace")? {
        Some(raw) => Some(
            raw.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| anyhow!("bad trace entry `{t}`")))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let mut params = LatencyParams {
        d_llm: parse_ms(file.resolve(args.dllm_ms, "dllm-ms", 25.0)?),
        d_tts: parse_ms(file.resolve(args.dtts_ms, "dtts-ms", 5.0)?),
        chunk: file.resolve(args.chunk, "chunk", 15)?,
        frame: parse_ms(file.resolve(args.frame_ms, "frame-ms", 40.0)?),
        text_len: file.resolve(args.text_len, "text-len", 10)?,
        speech_len: file.resolve(args.speech_len, "speech-len", 100)?,
        nar_iters: file.resolve_optional(args.nar_iters, "nar-iters")?,
        first_chunk_steps: file.resolve_optional(args.first_chunk_steps, "first-chunk-steps")?,
        look_ahead: Some(file.resolve(args.q, "q", 1)?),
    };

    let (fpl, rtf, events) = if model == ModelClass::Tmt && args_trace_present(&trace) {
        let spans = trace.as_deref().unwrap();
        let sim = simulate_pipeline(model, &params, Some(spans))?;
        params.first_chunk_steps = sim.c_observed;
        params.text_len = spans.len();
        params.speech_len = spans.iter().sum();
        let fpl = match mode {
            FplMode::A => sim.fpl_a,
            FplMode::L => sim.fpl_l,
        };
        println!(
            "{model}: first chunk after {} decode steps (from trace)",
            sim.c_observed.unwrap_or(0)
        );
        (fpl, sim.rtf, Some(sim.events))
    } else if model == ModelClass::Tmt {
        let fpl = analytic_fpl(model, &params, mode)?;
        (fpl, analytic_rtf(model, &params)?, None)
    } else {
        let sim = simulate_pipeline(model, &params, None)?;
        let fpl = match mode {
            FplMode::A => sim.fpl_a,
            FplMode::L => sim.fpl_l,
        };
        (fpl, sim.rtf, Some(sim.events))
    };

    println!(
        "{model} FPL-{mode} = {:.3} ms, RTF = {:.5}",
        fpl.as_secs_f64() * 1e3,
        rtf
    );

    if let Some(path) = file.resolve_optional(args.out, "out")? {
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        if fresh {
            writeln!(f, "{RESULTS_CSV_HEADER}")?;
        }
        writeln!(f, "{}", results_csv_row(model, mode, &params, fpl, rtf))?;
        println!("results: {}", path.display());
    }
    if let Some(path) = file.resolve_optional(args.events, "events")? {
        let events = events.ok_or_else(|| {
            anyhow!("no event log without a simulation (give --trace for this class)")
        })?;
        let f = std::fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        write_events_csv(BufWriter::new(f), &events)?;
        println!("events: {}", path.display());
    }
    Ok(())
}

fn args_trace_present(trace: &Option<Vec<usize>>) -> bool {
    trace.as_ref().is_some_and(|t| !t.is_empty())
}

fn masks_dump(args: MasksDumpArgs, file: &FileConfig) -> Result<()> {
    let durations_raw = file.resolve(args.durations, "durations", "7 5 8".to_string())?;
    let durations: Vec<usize> = durations_raw
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| anyhow!("bad duration `{t}`")))
        .collect::<Result<_>>()?;
    if durations.is_empty() {
        bail!("need at least one span duration");
    }
    let n = file.resolve(args.n, "n", 2)?;
    let q = file.resolve(args.q, "q", 1)?;
    let mask_out: PathBuf = file.resolve_required(args.mask_out, "mask-out")?;
    let vocab = VocabLayout::desk_default();

    // synthetic sentence: text token i is i mod V_t, speech position j is j mod V_s
    let mut durations_end = Vec::with_capacity(durations.len());
    let mut acc = 0;
    for &d in &durations {
        acc += d;
        durations_end.push(acc);
    }
    let example = AlignedExample {
        text: (0..durations.len()).map(|i| i % vocab.text_vocab_size).collect(),
        speech: (0..acc).map(|j| j % vocab.speech_vocab_size).collect(),
        durations_end,
    };
    let (seq, _) = build_finetune_sequence(&example, n, q, &vocab, false)?;
    let mask = if args.causal {
        build_causal_mask(seq.len())
    } else {
        designed_mask_for(&seq)?
    };
    std::fs::write(&mask_out, mask.to_golden_string())
        .with_context(|| format!("writing {}", mask_out.display()))?;
    println!("mask: {} ({}x{})", mask_out.display(), seq.len(), seq.len());
    if let Some(path) = file.resolve_optional(args.seq_out, "seq-out")? {
        std::fs::write(&path, seq.dump_positions())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("sequence: {}", path.display());
    }
    Ok(())
}
