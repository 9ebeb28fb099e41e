"""Operator CLI: key generation, corpus runs, chain verification, prompt
inspection, and a desk microbenchmark.

Exit codes are a stable contract for CI: 0 success, 1 verification or suite
failure, 2 usage / IO / parse errors.
"""

from __future__ import annotations

import random
import statistics
import sys
import time
from pathlib import Path

import click
import yaml

from . import context as ctxmod
from . import crypto, harness, pep, prompts
from .context import Principal
from .errors import CorpusFormatError, PromptLedgerError
from .intent import default_concepts
from .pep import PEPConfig, config_from_file
from .policy import TOP, policy, policy_from_dict

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _load_config(path: str | None, layers: str | None) -> PEPConfig:
    config = config_from_file(path) if path else PEPConfig()
    if layers is not None:
        mask = frozenset(int(part) for part in layers.split(",") if part.strip())
        config = config.with_layers(mask)
    return config


def _load_registry_file(path: str) -> crypto.Registry:
    """Registry file schema: agents/tools maps of id -> hex key (+ policy path)."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    reg = crypto.Registry()
    for agent_id, key_hex in (data.get("agents") or {}).items():
        reg.register_agent(str(agent_id), bytes.fromhex(key_hex))
    for tool_id, spec in (data.get("tools") or {}).items():
        tool_policy = TOP
        if isinstance(spec, dict):
            key_hex = spec["key"]
            if spec.get("policy"):
                policy_path = Path(path).parent / spec["policy"]
                tool_policy = policy_from_dict(yaml.safe_load(policy_path.read_text()) or {})
        else:
            key_hex = spec
        reg.register_tool(str(tool_id), bytes.fromhex(key_hex), tool_policy)
    return reg


@click.group()
def main() -> None:
    """Signed prompt lineage, hash-chained contexts, fail-closed enforcement."""


@main.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--name", default="agent", show_default=True, help="Key name used for file stems.")
@click.option("--force", is_flag=True, help="Overwrite existing key material.")
def keygen(out_dir: str, name: str, force: bool) -> None:
    """Generate an Ed25519 seed file plus a registry stanza."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed_path = out / f"{name}.seed"
    registry_path = out / "registry.yaml"
    if (seed_path.exists() or registry_path.exists()) and not force:
        click.echo(f"error: {seed_path} or {registry_path} exists (use --force)", err=True)
        sys.exit(EXIT_USAGE)
    import secrets

    seed = secrets.token_bytes(32)
    kp = crypto.KeyPair.from_seed(seed)
    probe = crypto.sign(b"promptledger-keygen-probe", kp)
    if not crypto.verify(probe, b"promptledger-keygen-probe", kp.verify_key):
        click.echo("error: generated key failed the sign/verify probe", err=True)
        sys.exit(EXIT_FAIL)
    seed_path.write_text(seed.hex() + "\n", encoding="utf-8")
    registry_path.write_text(
        yaml.safe_dump({"agents": {kp.key_id: kp.verify_key.hex()}}, sort_keys=True),
        encoding="utf-8",
    )
    click.echo(f"wrote {seed_path} and {registry_path} (key id {kp.key_id})")


@main.command("run-suite")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--benign", "benign_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--layers", default=None, help="Comma-separated layer mask, e.g. 1,2,3,4,5.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
def run_suite_cmd(corpus_path, benign_path, config_path, layers, report_path) -> None:
    """Replay the attack + benign corpora; exit 0 only on full detection."""
    try:
        config = _load_config(config_path, layers)
        attacks = (
            harness.load_corpus(corpus_path)
            if corpus_path
            else harness.load_corpus_text(harness.default_corpus_texts()[0])
        )
        benign = (
            harness.load_corpus(benign_path)
            if benign_path
            else harness.load_corpus_text(harness.default_corpus_texts()[1])
        )
    except (CorpusFormatError, OSError, yaml.YAMLError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    report = harness.run_suite(attacks, benign, config, start_epoch=harness.wall_clock())
    click.echo(harness.render_text(report), nl=False)
    if report_path:
        Path(report_path).write_text(harness.render_machine(report), encoding="utf-8")
    sys.exit(EXIT_OK if report.all_green else EXIT_FAIL)


@main.command("ablate")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--layers", required=True, help="Layer mask to enable, e.g. 1,2 (empty string for none).")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
def ablate_cmd(corpus_path, layers, report_path) -> None:
    """Run attacks under a layer mask; expectations re-derive per case."""
    try:
        attacks = (
            harness.load_corpus(corpus_path)
            if corpus_path
            else harness.load_corpus_text(harness.default_corpus_texts()[0])
        )
        mask = [int(part) for part in layers.split(",") if part.strip()]
    except (CorpusFormatError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    report = harness.ablate(attacks, mask)
    click.echo(harness.render_text(report), nl=False)
    if report_path:
        Path(report_path).write_text(harness.render_machine(report), encoding="utf-8")
    sys.exit(EXIT_OK if report.mismatched == 0 else EXIT_FAIL)


@main.command("verify")
@click.argument("export_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--registry", "registry_path", type=click.Path(exists=True, dir_okay=False), default=None)
def verify_cmd(export_path, registry_path) -> None:
    """Re-verify an exported context chain (and attestations, given keys)."""
    try:
        ctx = ctxmod.parse_export(Path(export_path).read_text(encoding="utf-8"))
    except (ValueError, KeyError, OSError) as exc:
        click.echo(f"error: unreadable export: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    broken = ctxmod.first_broken_link(ctx)
    if broken is not None:
        click.echo(f"TAMPERED: first broken link at entry index {broken}")
        sys.exit(EXIT_FAIL)
    click.echo(f"chain OK: {len(ctx.entries)} entries, head {ctx.head.hex}")
    if registry_path:
        reg = _load_registry_file(registry_path)
        now = harness.wall_clock()
        for name in sorted(ctx.attestations):
            ok = ctxmod.require_attestation(ctx, name, max_age_seconds=1 << 31, now=now, reg=reg)
            click.echo(f"attestation {name}: {'OK' if ok else 'INVALID'}")
            if not ok:
                sys.exit(EXIT_FAIL)
    sys.exit(EXIT_OK)


@main.command("inspect")
@click.argument("prompt_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--registry", "registry_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--max-depth", default=prompts.DEFAULT_MAX_DEPTH, show_default=True)
def inspect_cmd(prompt_path, registry_path, max_depth) -> None:
    """Print a prompt's lineage fields, size, and signature status."""
    try:
        armored = Path(prompt_path).read_text(encoding="utf-8")
        p = prompts.from_armor(armored)
    except (ValueError, OSError) as exc:
        click.echo(f"error: unreadable prompt file: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo(f"id:         {p.id}")
    click.echo(f"depth:      {p.depth}")
    click.echo(f"parent_id:  {p.parent_id or '(root)'}")
    click.echo(f"root_id:    {p.root_id}")
    click.echo(f"creator:    {p.metadata.creator}")
    click.echo(f"context:    {p.metadata.context_id}")
    click.echo(f"text:       {p.text!r}")
    click.echo(f"root_text:  {p.root_text!r}")
    click.echo(f"policy:     allowed={sorted(a.text for a in p.policy.allowed)} "
               f"denied={sorted(d.text for d in p.policy.denied)}")
    size = len(prompts.prompt_to_bytes(p))
    click.echo(f"size:       {size} bytes, embedded signatures: {prompts.embedded_signature_count(p)}")
    if registry_path:
        reg = _load_registry_file(registry_path)
        try:
            valid = prompts.verify_lineage(p, reg, max_depth=max_depth)
        except PromptLedgerError:
            valid = False
        click.echo(f"signature:  {'VALID' if valid else 'SIGNATURE INVALID'}")
        sys.exit(EXIT_OK if valid else EXIT_FAIL)
    click.echo("signature:  NOT CHECKED (pass --registry to verify)")
    sys.exit(EXIT_OK)


@main.command("bench")
@click.option("--iterations", default=1000, show_default=True, type=click.IntRange(min=100))
def bench_cmd(iterations: int) -> None:
    """Time root creation, a ten-step derivation, and full enforcement."""
    rng = random.Random(2024)
    reg = crypto.Registry()
    agent = crypto.KeyPair.from_seed(bytes([7]) * 32)
    tool = crypto.KeyPair.from_seed(bytes([8]) * 32)
    reg.register_agent("agent-1", agent.verify_key)
    reg.register_agent(agent.key_id, agent.verify_key)
    reg.register_tool("search", tool.verify_key, TOP)
    reg.register_agent(tool.key_id, tool.verify_key)
    org = policy(allowed=["*"], denied=["*credential*", "*password*", "*.pii"])
    reg.register_org_policy("*", org)
    now = harness.wall_clock()
    principal = Principal("agent-1", agent.verify_key, "analyst")
    ctx = ctxmod.create_context(principal, b"bench", reg, context_id="ctx-bench", now=now, rng=rng)
    config = PEPConfig(max_depth=16)

    def timed(fn, n):
        samples = []
        for _ in range(n):
            t0 = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - t0) * 1e6)
        return samples

    user = policy(allowed=["*"])
    create_samples = timed(
        lambda: prompts.create_root("analyze quarterly sales data", user, org, agent, "ctx-bench", now=now, rng=rng),
        iterations,
    )

    root = prompts.create_root("analyze quarterly sales data", user, org, agent, "ctx-bench", now=now, rng=rng)

    def derive_chain():
        p = root
        for i in range(10):
            p = prompts.derive(p, f"step {i}", TOP, TOP, agent, reg, max_depth=16, now=now, rng=rng)
        return p

    derive_samples = timed(derive_chain, max(iterations // 10, 10))
    deep = derive_chain()

    inv = pep.build_invocation(
        invocation_id="bench-inv", kp=agent, caller_id="agent-1", tool_id="search",
        operation="search", resource="docs.q4_report", prompt=deep,
        context_id="ctx-bench", sequence_number=0, timestamp=now,
    )

    # Wrap signature verification so its share of enforcement time is visible.
    sig_time = 0.0
    real_verify = crypto.verify

    def instrumented_verify(sig, payload, vk):
        nonlocal sig_time
        t0 = time.perf_counter()
        result = real_verify(sig, payload, vk)
        sig_time += time.perf_counter() - t0
        return result

    for module in (pep, prompts, ctxmod):
        module.crypto.verify = instrumented_verify  # type: ignore[attr-defined]
    try:
        t_total0 = time.perf_counter()
        enforce_samples = timed(
            lambda: pep.verify_and_enforce(inv, ctx, reg, config, now=now), iterations
        )
        total_time = time.perf_counter() - t_total0
    finally:
        for module in (pep, prompts, ctxmod):
            module.crypto.verify = real_verify  # type: ignore[attr-defined]

    def stats(label, samples):
        click.echo(
            f"{label:<28} mean {statistics.fmean(samples):9.1f} us   "
            f"median {statistics.median(samples):9.1f} us   n={len(samples)}"
        )

    stats("create_root", create_samples)
    stats("derive x10 (depth 10)", derive_samples)
    stats("verify_and_enforce", enforce_samples)
    share = sig_time / total_time if total_time else 0.0
    click.echo(f"signature verification share of enforcement time: {share:.0%}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
