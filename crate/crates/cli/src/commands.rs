use std::io::Write;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use mcdecode::backend::server;
use mcdecode::conflict::{check_pool, read_pool, self_pool};
use mcdecode::evaluation::{compare, read_dataset, write_atomic, write_jsonl, ReportFile};
use mcdecode::retrieval::{read_corpus, Bm25Params};
use mcdecode::{
    generate_conflict_set, load_backend, Embedder, Index, LanguageModel, Pipeline, ScriptedModel,
    TfidfEmbedder,
};
use serde_json::json;

use crate::{
    split_list, AskArgs, Command, CompareArgs, ConflictArgs, ConflictCommand, EvalCommand,
    EvalRunArgs, IndexBuildArgs, IndexCommand, IndexSearchArgs, ServeArgs,
};

pub fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Index(IndexCommand::Build(a)) => index_build(a),
        Command::Index(IndexCommand::Search(a)) => index_search(a),
        Command::Ask(a) => ask(a),
        Command::Eval(EvalCommand::Run(a)) => eval_run(a),
        Command::Conflict(ConflictCommand::Generate(a)) => conflict_generate(a),
        Command::Compare(a) => compare_reports(a),
        Command::ServeMock(a) => serve_mock(a),
    }
}

fn index_build(a: IndexBuildArgs) -> anyhow::Result<ExitCode> {
    let defaults = Bm25Params::default();
    let params = Bm25Params {
        k1: a.k1.unwrap_or(defaults.k1),
        b: a.b.unwrap_or(defaults.b),
    };
    let corpus = read_corpus(&a.corpus)?;
    let index = Index::build(corpus, params)?;
    index.save(&a.out)?;
    println!(
        "indexed {} passages ({} terms) into {}",
        index.num_docs(),
        index.terms().len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn index_search(a: IndexSearchArgs) -> anyhow::Result<ExitCode> {
    let index = Index::open(&a.index)?;
    let mut out = std::io::stdout().lock();
    for hit in index.search(&a.query, a.k)? {
        writeln!(out, "{}\t{:.6}\t{}\t{}", hit.rank, hit.score, hit.passage.id, hit.passage.title)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn ask(a: AskArgs) -> anyhow::Result<ExitCode> {
    let mut config = a.run.resolve()?;
    if let Some(s) = &a.strategy {
        config.strategies = split_list(s);
    }
    let pipeline = Pipeline::from_config(config)?;
    let output = pipeline.ask(&a.question, a.context.as_deref(), a.irrelevant_context.as_deref())?;
    let backend = pipeline.backend.as_ref();
    let mut out = std::io::stdout().lock();
    if a.trace {
        if let Some(p) = &output.relevant {
            writeln!(out, "relevant [{}]: {}", p.id, p.text)?;
        }
        if let Some(p) = &output.irrelevant {
            writeln!(out, "irrelevant [{}]: {}", p.id, p.text)?;
        }
    }
    for answer in &output.answers {
        writeln!(out, "{}: {}", answer.strategy.name(), answer.prediction)?;
        if !a.trace {
            continue;
        }
        writeln!(out, "step\talpha\tC\tC_R\ttoken\ttop5")?;
        for t in &answer.result.traces {
            let top: Vec<String> = t
                .top5_combined
                .iter()
                .map(|(id, p)| format!("{}={p:.4}", surface(backend, *id)))
                .collect();
            writeln!(
                out,
                "{}\t{:.4}\t{}\t{}\t{}\t{}",
                t.step_index,
                t.alpha_used,
                confidence(t.confidence_parametric),
                confidence(t.confidence_relevant),
                surface(backend, t.chosen_token),
                top.join(" ")
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn confidence(c: Option<f64>) -> String {
    c.map_or_else(|| "-".into(), |c| format!("{c:.4}"))
}

fn surface(backend: &dyn LanguageModel, id: u32) -> String {
    if id == backend.vocab().eos_id {
        return "<eos>".into();
    }
    match backend.detokenize(&[id]) {
        Ok(s) => format!("{s:?}"),
        Err(_) => format!("#{id}"),
    }
}

fn eval_run(a: EvalRunArgs) -> anyhow::Result<ExitCode> {
    let mut config = a.run.resolve()?;
    if let Some(s) = &a.strategies {
        config.strategies = split_list(s);
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    if let Some(p) = &a.out {
        config.output.report = Some(p.clone());
    }
    if let Some(p) = &a.traces_dir {
        config.output.traces_dir = Some(p.clone());
    }
    config.strict |= a.strict;
    config.exclude_errored |= a.exclude_errored;
    let dataset = read_dataset(&a.dataset)?;
    let pipeline = Pipeline::from_config(config)?;
    let file = pipeline.run_to_file(&dataset)?;
    if let Some(path) = &file.config.output.report {
        file.save(path)?;
        eprintln!("wrote {}", path.display());
    }
    let labelled: Vec<(String, &mcdecode::RunReport)> =
        file.reports.iter().map(|r| (r.strategy.clone(), r)).collect();
    if labelled.len() >= 2 {
        write!(std::io::stdout().lock(), "{}", compare(&labelled)?)?;
    } else {
        for (label, r) in &labelled {
            let em = r.em.map_or_else(|| "-".into(), |x| format!("{x:.4}"));
            writeln!(std::io::stdout().lock(), "{label}\t{em}")?;
        }
    }
    for r in &file.reports {
        if r.errored > 0 {
            eprintln!("{}: {} of {} items errored", r.strategy, r.errored, r.items.len());
        }
        if let Some(flag) = &r.flag {
            eprintln!("{}: {flag}", r.strategy);
        }
    }
    if file.config.strict && file.any_errored() {
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn conflict_generate(a: ConflictArgs) -> anyhow::Result<ExitCode> {
    let dataset = read_dataset(&a.dataset)?;
    let (pool, provenance) = match &a.pool {
        Some(path) => (read_pool(path)?, path.display().to_string()),
        None => (self_pool(&dataset), "self".to_string()),
    };
    check_pool(&pool)?;
    let (records, stats) = generate_conflict_set(&dataset, &pool, a.seed);
    write_jsonl(&a.out, &records)?;
    let summary = json!({
        "pool": provenance,
        "pool_size": pool.len(),
        "seed": a.seed,
        "stats": stats,
    });
    let stats_path = a.out.with_extension("stats.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_atomic(&stats_path, text.as_bytes())?;
    println!(
        "generated {} of {} records ({} skipped) into {}",
        stats.generated,
        stats.total,
        stats.skipped.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn compare_reports(a: CompareArgs) -> anyhow::Result<ExitCode> {
    let files = a
        .reports
        .iter()
        .map(|p| ReportFile::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let multi = files.len() > 1;
    let labelled: Vec<(String, &mcdecode::RunReport)> = files
        .iter()
        .zip(&a.reports)
        .flat_map(|(f, path)| {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            f.reports.iter().map(move |r| {
                let label = if multi { format!("{stem}:{}", r.strategy) } else { r.strategy.clone() };
                (label, r)
            })
        })
        .collect();
    write!(std::io::stdout().lock(), "{}", compare(&labelled)?)?;
    Ok(ExitCode::SUCCESS)
}

fn serve_mock(a: ServeArgs) -> anyhow::Result<ExitCode> {
    let model: Arc<dyn LanguageModel> = match (&a.script, &a.backend) {
        (Some(path), _) => Arc::new(ScriptedModel::from_file(path)?),
        (None, Some(spec)) => load_backend(spec, &Default::default())?,
        (None, None) => anyhow::bail!(mcdecode::Error::Config("serve-mock needs --script or --backend".into())),
    };
    let embedder = match &a.index {
        Some(dir) => Some(Arc::new(TfidfEmbedder::from_index(&Index::open(dir)?)) as Arc<dyn Embedder>),
        None => None,
    };
    let handle = server::spawn(model, embedder, a.bind)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "listening on {}", handle.url())?;
    out.flush()?;
    drop(out);
    handle.wait();
    Ok(ExitCode::SUCCESS)
}
