"""Command-line entry point wiring every module together.

Subcommands: gen-suite, evaluate, build-corpus, convert-dictionary,
report-diff. All randomness flows from explicit --seed flags; a missing seed
is generated, printed, and recorded in the output manifest. Output
directories are content-addressed by run hash so distinct runs never
overwrite each other.
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from .agents import make_policy
from .bank import convert_legacy_dictionary, load_bank, load_shipped_bank, parse_bank
from .benchgen import (
    EpisodeCard,
    SuiteSpec,
    generalization_split,
    generate_suite,
    read_suite,
    suite_manifest,
    write_suite,
)
from .episode import InjectionPlan, dumps_canonical, trajectory_to_line
from .errors import FaultHarnessError, ConfigError
from .metrics import (
    aggregate,
    bootstrap_ci,
    correlations,
    grade_episode,
    grade_series,
    report_csv_rows,
    report_to_json_text,
)
from .pipeline import (
    CorpusSpec,
    CorpusTrace,
    RepairRequest,
    RuleBasedTeacher,
    RemoteTeacher,
    compose_corpus,
    detect_first_failure,
    finalize,
    repair,
    truncate_at_failure,
)
from .remote import EndpointConfig, TOKEN_ENV_VAR
from .seeds import derive_seed
from .simulator import run_episode
from .tasks import builtin_task_pool
from .taxonomy import CATALOG, ErrorClass

RUN_SEED_STREAM = 0xE7A1


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    generated = secrets.randbits(32)
    click.echo(f"seed not given; generated seed={generated}")
    return generated


@click.group()
def main():
    """Fault-injection simulator and robustness evaluation harness."""


# --- gen-suite -----------------------------------------------------------------------


@main.command("gen-suite")
@click.option("--n", "n_episodes", type=int, required=True, help="Number of episode cards.")
@click.option("--seed", type=int, default=None, help="Master seed (generated if absent).")
@click.option("--clean-fraction", type=float, default=0.2, show_default=True)
@click.option(
    "--protocol",
    type=click.Choice(["Paladin", "ToolReflect"]),
    default="Paladin",
    show_default=True,
)
@click.option(
    "--hold-out",
    "hold_out",
    multiple=True,
    help="Failure kind to hold out of the agent-visible bank (repeatable).",
)
@click.option("--out", type=click.Path(), default="suite.jsonl", show_default=True)
def cmd_gen_suite(n_episodes, seed, clean_fraction, protocol, hold_out, out):
    """Generate a deterministic evaluation suite (plus pruned bank if held out)."""
    seed = _resolve_seed(seed)
    spec = SuiteSpec(
        n_episodes=n_episodes,
        master_seed=seed,
        clean_fraction=clean_fraction,
        held_out_kinds=frozenset(hold_out),
        protocol=protocol,
    )
    bank = load_shipped_bank()
    visible_bank, cards = generalization_split(spec, bank=bank)
    out_path = Path(out)
    write_suite(out_path, cards)
    manifest = suite_manifest(spec, cards, bank.version)
    manifest_path = out_path.with_suffix(out_path.suffix + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    if hold_out:
        bank_path = out_path.with_suffix(out_path.suffix + ".bank.json")
        bank_doc = {
            "version": f"{bank.version}-heldout",
            "exemplars": [ex.to_json() for ex in visible_bank.exemplars],
        }
        bank_path.write_text(json.dumps(bank_doc, sort_keys=True, indent=2) + "\n")
        click.echo(f"pruned bank: {bank_path} ({len(visible_bank)} exemplars)")
    failures = sum(1 for c in cards if not c.plan.is_clean)
    click.echo(
        f"suite: {out_path} ({len(cards)} cards, {failures} failure episodes, "
        f"seed={seed})"
    )


# --- evaluate -------------------------------------------------------------------------


def _run_card(card: EpisodeCard, agent_name: str, bank, seed: int, endpoint):
    policy = make_policy(
        agent_name,
        steps=card.steps,
        retry_budget=card.retry_budget,
        gate_seed=seed,
        endpoint=endpoint,
    )
    traj = run_episode(
        prompt=card.prompt,
        tools=card.tools,
        agent=policy,
        plan=card.plan,
        config=card.sim_config(rng_seed=seed),
        bank=bank,
        episode_id=card.episode_id,
    )
    grade = grade_episode(traj, card)
    return traj, grade


@main.command("evaluate")
@click.option("--suite", type=click.Path(exists=True), required=True)
@click.option(
    "--agent",
    type=click.Choice(["vanilla", "toolbench", "reflect", "critic", "paladin", "remote"]),
    required=True,
)
@click.option("--bank", "bank_path", type=click.Path(exists=True), default=None)
@click.option("--no-retrieval", is_flag=True, help="Remove the bank handle (ablation).")
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out-dir", type=click.Path(), default="runs", show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--n-resamples", type=int, default=1000, show_default=True)
@click.option("--endpoint-url", default=None, help="Remote agent endpoint base URL.")
@click.option("--endpoint-model", default="default")
@click.option("--assert-min-rr", type=float, default=None)
@click.option("--assert-min-tsr", type=float, default=None)
@click.option("--assert-min-csr", type=float, default=None)
def cmd_evaluate(
    suite,
    agent,
    bank_path,
    no_retrieval,
    seed,
    jobs,
    out_dir,
    alpha,
    n_resamples,
    endpoint_url,
    endpoint_model,
    assert_min_rr,
    assert_min_tsr,
    assert_min_csr,
):
    """Run every card through the simulator, grade, aggregate, write reports."""
    seed = _resolve_seed(seed)
    cards = read_suite(suite)
    if not cards:
        raise click.ClickException("suite file holds no cards")
    bank = None
    bank_version = "disabled"
    if not no_retrieval:
        bank_obj = load_bank(bank_path) if bank_path else load_shipped_bank()
        bank = bank_obj
        bank_version = bank_obj.version
    endpoint = None
    if agent == "remote":
        if not endpoint_url:
            raise click.ClickException("remote agent requires --endpoint-url")
        endpoint = EndpointConfig(base_url=endpoint_url, model=endpoint_model)

    def job(card: EpisodeCard):
        return _run_card(card, agent, bank, seed, endpoint)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(job, cards))
    else:
        results = [job(card) for card in cards]

    trajectories = [traj for traj, _ in results]
    grades = [grade for _, grade in results]
    report = aggregate(grades, alpha=alpha)
    for i, metric in enumerate(("tsr", "rr", "csr", "es")):
        try:
            report.bootstrap[metric] = bootstrap_ci(
                grades,
                metric,
                n_resamples=n_resamples,
                seed=derive_seed(seed, RUN_SEED_STREAM, i),
            )
        except FaultHarnessError:
            pass
    report.n_resamples = n_resamples
    report.correlations = correlations(grade_series(grades))

    suite_bytes = Path(suite).read_bytes()
    flags = {
        "agent": agent,
        "seed": seed,
        "alpha": alpha,
        "no_retrieval": no_retrieval,
        "bank_version": bank_version,
        "n_resamples": n_resamples,
        "suite": Path(suite).name,
    }
    run_hash = hashlib.sha256(
        suite_bytes + dumps_canonical(flags).encode("utf-8")
    ).hexdigest()[:12]
    run_dir = Path(out_dir) / f"run-{run_hash}"
    run_dir.mkdir(parents=True, exist_ok=True)

    (run_dir / "trajectories.jsonl").write_text(
        "".join(trajectory_to_line(t) + "\n" for t in trajectories)
    )
    (run_dir / "report.json").write_text(report_to_json_text(report))
    (run_dir / "report.csv").write_text(
        "\n".join(report_csv_rows(report, Path(suite).name, agent)) + "\n"
    )
    (run_dir / "manifest.json").write_text(
        json.dumps({"flags": flags, "run_hash": run_hash}, sort_keys=True, indent=2)
        + "\n"
    )

    doc = report.to_json()
    click.echo(
        "tsr={tsr} rr={rr} csr={csr} es={es} composite={composite}".format(**doc)
    )
    click.echo(f"report: {run_dir}")

    failed = []
    if assert_min_rr is not None and (doc["rr"] is None or doc["rr"] < assert_min_rr):
        failed.append(f"rr {doc['rr']} < {assert_min_rr}")
    if assert_min_tsr is not None and doc["tsr"] < assert_min_tsr:
        failed.append(f"tsr {doc['tsr']} < {assert_min_tsr}")
    if assert_min_csr is not None and (doc["csr"] is None or doc["csr"] < assert_min_csr):
        failed.append(f"csr {doc['csr']} < {assert_min_csr}")
    if failed:
        click.echo("assertion failures: " + "; ".join(failed), err=True)
        sys.exit(1)


# --- build-corpus ----------------------------------------------------------------------


@main.command("build-corpus")
@click.option("--target", type=int, default=100, show_default=True)
@click.option("--recovery-fraction", type=float, default=0.8, show_default=True)
@click.option(
    "--teacher",
    type=click.Choice(["rule", "remote"]),
    default="rule",
    show_default=True,
)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(), default="corpus", show_default=True)
@click.option("--endpoint-url", default=None)
@click.option("--endpoint-model", default="default")
def cmd_build_corpus(
    target, recovery_fraction, teacher, seed, out_dir, endpoint_url, endpoint_model
):
    """Build a recovery-annotated corpus with spans and manifest."""
    seed = _resolve_seed(seed)
    bank = load_shipped_bank()
    if teacher == "remote":
        if not endpoint_url:
            raise click.ClickException("--teacher remote requires --endpoint-url")
        if not os.environ.get(TOKEN_ENV_VAR):
            raise click.ClickException(
                f"--teacher remote requires the {TOKEN_ENV_VAR} environment variable"
            )
        teacher_backend = RemoteTeacher(
            EndpointConfig(base_url=endpoint_url, model=endpoint_model)
        )
    else:
        teacher_backend = RuleBasedTeacher(bank)

    spec = CorpusSpec(target_size=target, recovery_fraction=recovery_fraction, seed=seed)
    n_recovery = round(target * recovery_fraction)
    n_clean = target - n_recovery

    tasks = builtin_task_pool()
    kinds = sorted(CATALOG)
    repaired: list[CorpusTrace] = []
    quarantine: list[str] = []
    i = 0
    while len(repaired) < n_recovery and i < n_recovery * 4:
        task = tasks[i % len(tasks)]
        kind = CATALOG[kinds[i % len(kinds)]]
        episode_seed = derive_seed(seed, 0xC0, i)
        i += 1
        plan = InjectionPlan(
            seed=episode_seed,
            kind=kind.identifier,
            manifestation=kind.default_manifestation,
            turn_index=1,
        )
        policy = make_policy("toolbench", steps=task.steps)
        traj = run_episode(task.prompt, task.tools, policy, plan)
        found = detect_first_failure(traj)
        if found is None:
            continue
        turn_index, signature = found
        truncated = truncate_at_failure(traj, turn_index)
        request = RepairRequest(
            task=task.prompt, toolset=task.tools, truncated_trace=truncated,
            error=signature,
        )
        try:
            fixed = repair(request, teacher_backend)
        except FaultHarnessError as exc:
            quarantine.append(
                dumps_canonical(
                    {"episode_id": traj.episode_id, "reason": str(exc)}
                )
            )
            continue
        repaired.append(CorpusTrace(trace=fixed, signature=signature))

    clean: list[CorpusTrace] = []
    for j in range(n_clean):
        task = tasks[j % len(tasks)]
        episode_seed = derive_seed(seed, 0xC1, j)
        policy = make_policy("vanilla", steps=task.steps)
        traj = run_episode(task.prompt, task.tools, policy, InjectionPlan(seed=episode_seed))
        clean.append(CorpusTrace(trace=finalize(task.prompt, task.tools, traj), signature=None))

    corpus = compose_corpus(repaired, clean, spec, dictionary_version=bank.version)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.jsonl").write_text("".join(line + "\n" for line in corpus.lines()))
    (out / "spans.json").write_text(
        json.dumps(corpus.spans, sort_keys=True, indent=2) + "\n"
    )
    (out / "manifest.json").write_text(
        json.dumps(corpus.manifest, sort_keys=True, indent=2) + "\n"
    )
    if quarantine:
        (out / "quarantine.jsonl").write_text("".join(q + "\n" for q in quarantine))
    click.echo(
        f"corpus: {out / 'corpus.jsonl'} ({n_recovery} recovery + {n_clean} clean, "
        f"seed={seed}, quarantined={len(quarantine)})"
    )


# --- convert-dictionary -----------------------------------------------------------------


@main.command("convert-dictionary")
@click.option("--src", "src", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def cmd_convert_dictionary(src, out):
    """Convert a Python-literal branch dictionary into the canonical format."""
    text = Path(src).read_text(encoding="utf-8")
    doc = convert_legacy_dictionary(text)
    bank = parse_bank(doc)  # validates before writing
    Path(out).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    click.echo(f"converted {src} -> {out} ({len(bank)} exemplars)")


# --- report-diff -------------------------------------------------------------------------


@main.command("report-diff")
@click.argument("report_a", type=click.Path(exists=True))
@click.argument("report_b", type=click.Path(exists=True))
def cmd_report_diff(report_a, report_b):
    """Print per-metric deltas between two report.json files."""
    a = json.loads(Path(report_a).read_text())
    b = json.loads(Path(report_b).read_text())
    for metric in ("tsr", "rr", "csr", "es", "composite"):
        va, vb = a.get(metric), b.get(metric)
        if va is None or vb is None:
            click.echo(f"{metric}: {va} -> {vb}")
        else:
            click.echo(f"{metric}: {va:.4f} -> {vb:.4f} (delta {vb - va:+.4f})")


if __name__ == "__main__":
    main()
