"""Command-line interface.

Every subcommand maps to one library operation: ingest -> corpus + index
build, synth-gen -> synthetic QA generation, refine-q2a -> forum answer
refinement, build-raft -> dataset assembly, eval -> scoring and the leakage
report, serve -> HTTP service, query -> one-shot question.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from raftkit.config import AssistantConfig, load_config
from raftkit.corpus import CorpusConfig, CorpusStore, filter_and_truncate
from raftkit.gateway import ModelGateway, oracle_score
from raftkit.jsonl import read_jsonl, write_jsonl
from raftkit.metrics import (
    MetricConfig,
    ScoreReport,
    leakage_report,
    score_samples,
)
from raftkit.raft import (
    IdkPolicy,
    build_datasets,
    emit_dataset,
    make_manifest,
)
from raftkit.retrieval import AccessFilter, RetrievalEngine
from raftkit.service import GenerationFailed, build_state, handle_query, make_app
from raftkit.synth import QAPair, SynthConfig, generate_for_corpus, refine_answer


def _parse_pattern_map(entries: tuple[str, ...], multi: bool) -> dict:
    out: dict = {}
    for entry in entries:
        if "=" not in entry:
            raise click.UsageError(f"expected PATTERN=VALUE, got {entry!r}")
        pattern, _, value = entry.partition("=")
        out[pattern] = (
            [g.strip() for g in value.split(",") if g.strip()] if multi else value
        )
    return out


@click.group()
@click.option(
    "-c",
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="key=value config file (default: $ASSISTANT_CONFIG, else built-ins)",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Access-controlled retrieval assistant and RAFT dataset tools."""
    ctx.obj = load_config(config_path)


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--group", "groups", multiple=True, help="PATTERN=group1,group2 access mapping")
@click.option("--category", "categories", multiple=True, help="PATTERN=Category mapping")
@click.option("--no-index", is_flag=True, help="skip building the search index")
@click.pass_obj
def ingest(cfg: AssistantConfig, paths, groups, categories, no_index) -> None:
    """Ingest text files into the corpus and build the search index."""
    store = CorpusStore(cfg.corpus_dir)
    stats = store.ingest(
        list(paths),
        group_map=_parse_pattern_map(groups, multi=True),
        category_map=_parse_pattern_map(categories, multi=False),
    )
    for path, err in stats.errors:
        click.echo(f"skipped {path}: {err}", err=True)
    click.echo(
        f"ingested {stats.kept} docs ({stats.dropped} dropped), "
        f"{stats.chunks_total} chunks"
    )
    if not no_index:
        gateway = ModelGateway(cfg.gateway)
        engine = RetrievalEngine.build(store.load_chunks(), embed_fn=gateway.embed)
        engine.save(cfg.index_dir)
        click.echo(f"index written to {cfg.index_dir} ({len(engine)} chunks)")


@main.command("synth-gen")
@click.option("--rafs/--no-rafs", default=False, help="few-shot real questions from history")
@click.option("--rafs-k", default=5, show_default=True)
@click.option("--history-limit", default=50, show_default=True)
@click.option("--out", "out_path", default="synth/qa.jsonl", show_default=True)
@click.pass_obj
def synth_gen(cfg: AssistantConfig, rafs, rafs_k, history_limit, out_path) -> None:
    """Generate one synthetic Q/A pair per corpus document."""
    store = CorpusStore(cfg.corpus_dir)
    docs = filter_and_truncate(store.load_docs(), CorpusConfig())
    if not docs:
        raise click.ClickException("no eligible documents in the corpus")
    history = store.fetch_history(history_limit) if rafs else []
    gateway = ModelGateway(cfg.gateway)
    synth_cfg = SynthConfig(rafs_k=rafs_k, use_rafs=rafs)
    pairs, failures = generate_for_corpus(docs, history, synth_cfg, gateway)
    for doc_id, reason in failures:
        click.echo(f"skipped {doc_id}: {reason}", err=True)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, (qa.to_record() for qa in pairs))
    click.echo(f"wrote {len(pairs)} pairs to {out} ({len(failures)} failed)")


@main.command("refine-q2a")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True)
@click.pass_obj
def refine_q2a(cfg: AssistantConfig, in_path, out_path) -> None:
    """Rewrite raw forum answers into standalone answers; pairs whose
    refinement fails are kept raw."""
    gateway = ModelGateway(cfg.gateway)
    refined: list[QAPair] = []
    failures = 0
    for record in read_jsonl(in_path):
        qa = QAPair.from_record(record)
        try:
            refined.append(refine_answer(qa, gateway))
        except Exception as exc:
            failures += 1
            click.echo(f"kept raw {qa.qa_id}: {exc}", err=True)
            refined.append(qa)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, (qa.to_record() for qa in refined))
    click.echo(f"wrote {len(refined)} pairs to {out} ({failures} kept raw)")


@main.command("build-raft")
@click.option("--qa", "qa_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--q2a", "q2a_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--idk-fraction", default=0.1, show_default=True)
@click.option("--seed", default=17, show_default=True)
@click.option("--test-fraction", default=0.1, show_default=True)
@click.option("--out", "out_dir", default="datasets", show_default=True)
@click.option(
    "--groups",
    default=None,
    help="comma-separated access groups for retrieval (default: all groups; "
    "dataset building is an offline, trusted step)",
)
@click.pass_obj
def build_raft(cfg, qa_path, q2a_path, idk_fraction, seed, test_fraction, out_dir, groups) -> None:
    """Assemble RAFT train/test datasets from QA pairs."""
    pairs = [QAPair.from_record(r) for r in read_jsonl(qa_path)]
    if q2a_path:
        pairs += [QAPair.from_record(r) for r in read_jsonl(q2a_path)]
    if not pairs:
        raise click.ClickException("no QA pairs to build from")
    gateway = ModelGateway(cfg.gateway)
    if not (cfg.index_dir / "lexical.idx").exists():
        raise click.ClickException(f"no index at {cfg.index_dir}; run ingest first")
    engine = RetrievalEngine.load(cfg.index_dir, embed_fn=gateway.embed)
    if groups is None:
        filt = AccessFilter(engine.all_groups())
    else:
        filt = AccessFilter(frozenset(g.strip() for g in groups.split(",") if g.strip()))
    policy = IdkPolicy(fraction=idk_fraction, seed=seed)
    try:
        examples, plan = build_datasets(
            pairs,
            engine,
            cfg.retrieval,
            filt,
            policy,
            test_fraction=test_fraction,
            split_seed=seed,
            char_cap=cfg.prompt_char_cap,
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    paths = emit_dataset(examples, out_dir, make_manifest(cfg.retrieval, policy))
    for cat in sorted(plan.per_category):
        train_n, test_n = plan.per_category[cat]
        click.echo(f"  {cat or '(uncategorized)'}: {train_n} train / {test_n} test")
    click.echo(f"wrote {', '.join(str(p) for p in paths.values())}")


@main.group()
def eval() -> None:
    """Score predictions and report context-removal leakage."""


def _load_samples(dataset_path: str, predictions_path: str) -> list[tuple[str, str, str]]:
    refs = {r["example_id"]: r["answer"] for r in read_jsonl(dataset_path)}
    preds = {}
    for lineno, r in enumerate(read_jsonl(predictions_path), start=1):
        if "example_id" not in r or "response" not in r:
            raise click.ClickException(
                f"{predictions_path} line {lineno}: predictions rows need "
                '"example_id" and "response" keys'
            )
        preds[r["example_id"]] = r["response"]
    missing = sorted(set(refs) - set(preds))
    if missing:
        raise click.ClickException(
            f"predictions missing for {len(missing)} examples (first: {missing[0]})"
        )
    return [(eid, refs[eid], preds[eid]) for eid in sorted(refs)]


def _make_scorer(cfg: AssistantConfig, scorer_name: str):
    if scorer_name == "oracle":
        return oracle_score
    return ModelGateway(cfg.gateway).scorer


def _score_file(cfg, dataset, predictions, scorer_name) -> ScoreReport:
    samples = _load_samples(dataset, predictions)
    return score_samples(samples, _make_scorer(cfg, scorer_name), MetricConfig())


@eval.command("run")
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scorer", type=click.Choice(["oracle", "remote"]), default="oracle", show_default=True)
@click.option("--out", "out_path", default="report.json", show_default=True)
@click.pass_obj
def eval_run(cfg: AssistantConfig, dataset, predictions, scorer, out_path) -> None:
    """Score a prediction file against a dataset's reference answers."""
    report = _score_file(cfg, dataset, predictions, scorer)
    Path(out_path).write_text(
        json.dumps(report.to_record(), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    click.echo(
        f"n={report.n} precision={report.mean_precision:.4f} "
        f"recall={report.mean_recall:.4f} f1={report.mean_f1:.4f} "
        f"idk={report.idk_count}"
    )


@eval.command("leakage")
@click.option("--dataset-full", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions-full", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset-mc", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions-mc", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scorer", type=click.Choice(["oracle", "remote"]), default="oracle", show_default=True)
@click.option("--out", "out_path", default="leakage.json", show_default=True)
@click.pass_obj
def eval_leakage(cfg, dataset_full, predictions_full, dataset_mc, predictions_mc, scorer, out_path) -> None:
    """Compare recall on the full test set vs its missing-context variant."""
    full = _score_file(cfg, dataset_full, predictions_full, scorer)
    mc = _score_file(cfg, dataset_mc, predictions_mc, scorer)
    report = leakage_report(full, mc)
    Path(out_path).write_text(
        json.dumps(report.to_record(), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    click.echo(report.text_table())


@main.command()
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
@click.pass_obj
def serve(cfg: AssistantConfig, host, port) -> None:
    """Run the HTTP service."""
    import uvicorn

    state = build_state(cfg)
    app = make_app(state)
    uvicorn.run(app, host=host or cfg.host, port=port or cfg.port, log_level="warning")


@main.command()
@click.option("--user", "user_id", default="", help="requesting user id (blank = public)")
@click.option("--top-n", default=None, type=int)
@click.argument("question")
@click.pass_obj
def query(cfg: AssistantConfig, user_id, top_n, question) -> None:
    """Ask one question and print the answer with its provenance."""
    state = build_state(cfg)
    try:
        resp = handle_query(state, user_id, question, top_n)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    except GenerationFailed as exc:
        click.echo(f"generation failed: {exc}", err=True)
        for p in exc.provenance:
            click.echo(f"  {p.chunk_id}  {p.doc_id}  {p.category}", err=True)
        sys.exit(1)
    click.echo(resp.answer)
    if resp.degraded:
        click.echo("(degraded: lexical-only retrieval)", err=True)
    if resp.provenance:
        click.echo("")
        click.echo("sources:")
        for p in resp.provenance:
            badge = ",".join(p.access_groups) if p.access_groups else "public"
            click.echo(f"  [{p.chunk_id}] doc={p.doc_id} category={p.category} access={badge} score={p.fused_score:.5f}")


if __name__ == "__main__":
    main()
