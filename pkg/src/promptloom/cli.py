"""Headless entry point: validate, run, render, serve, and log analysis."""

from __future__ import annotations

import json
import sys

import click

from . import editlog
from .backends import (
    BackendConfig,
    BackendKind,
    MockBackend,
    from_config,
    load_rules,
)
from .executor import RunMode, initial_state, plan_step, run_chain
from .library import (
    BUILTIN_NAMES,
    ParseError,
    SchemaError,
    UnknownBuiltin,
    ValidationError,
    TranscriptWriter,
    builtin,
    load_spec,
    record_to_json,
)
from .model import topological_order, validate_chain


def _load_chain(spec_path, builtin_name):
    if (spec_path is None) == (builtin_name is None):
        raise click.UsageError("provide exactly one of SPEC file or --builtin")
    if builtin_name is not None:
        try:
            return builtin(builtin_name)
        except UnknownBuiltin:
            raise click.UsageError(
                f"unknown builtin {builtin_name!r}; choices: {', '.join(BUILTIN_NAMES)}"
            )
    try:
        with open(spec_path, encoding="utf-8") as fh:
            return load_spec(fh.read())
    except OSError as exc:
        raise click.UsageError(str(exc))
    except (ParseError, SchemaError, ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


def _make_backend(backend_name, rules_path):
    if backend_name == "mock":
        mock = MockBackend()
        if rules_path:
            with open(rules_path, encoding="utf-8") as fh:
                for rule in load_rules(json.load(fh)):
                    mock.register_rule(rule)
        return mock
    return from_config(BackendConfig(kind=BackendKind.HTTP))


def _apply_seed_overrides(seeds, overrides, chain):
    """--seed layer=value replaces that layer's default seeds (repeatable to add)."""
    seeds = {k: list(v) for k, v in seeds.items()}
    by_name = {layer.name: layer.id for layer in chain.layers}
    replaced: set[str] = set()
    for item in overrides:
        if "=" not in item:
            raise click.UsageError(f"--seed expects layer=value, got {item!r}")
        key, value = item.split("=", 1)
        layer_id = by_name.get(key, key)
        if layer_id not in replaced:
            seeds[layer_id] = []
            replaced.add(layer_id)
        seeds[layer_id].append(value)
    return seeds


@click.group()
def main():
    """promptloom: author, run, and steer LLM prompt chains."""


@main.command("builtin-list")
def builtin_list():
    """List the built-in chains."""
    for name in BUILTIN_NAMES:
        chain, _ = builtin(name)
        ops = " -> ".join(chain.step(sid).op.value for sid in topological_order(chain))
        click.echo(f"{name}: {ops}")


@main.command()
@click.argument("spec", required=False)
@click.option("--builtin", "builtin_name", default=None, help="validate a built-in chain")
def validate(spec, builtin_name):
    """Validate a chain spec; prints OK or the violation report."""
    chain, _ = _load_chain(spec, builtin_name)
    report = validate_chain(chain)
    if not report:
        click.echo("OK")
        return
    for violation in report:
        click.echo(f"{violation.code}: {violation.message}")
    sys.exit(1)


@main.command()
@click.argument("spec", required=False)
@click.option("--builtin", "builtin_name", default=None)
@click.option("--step", "step_id", required=True)
@click.option("--block", default=0, show_default=True)
@click.option("--seed", "seed_overrides", multiple=True, help="layer=value, repeatable")
def render(spec, builtin_name, step_id, block, seed_overrides):
    """Print the exact prompt for one running block, without executing."""
    chain, seeds = _load_chain(spec, builtin_name)
    seeds = _apply_seed_overrides(seeds, seed_overrides, chain)
    state = initial_state(chain, seeds)
    # Upstream steps may not have run; render only works for blocks whose
    # inputs are seeded or already present.
    try:
        plans = plan_step(chain, state, chain.step(step_id))
    except KeyError:
        raise click.UsageError(f"unknown step {step_id!r}")
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if block >= len(plans):
        click.echo(f"error: step has {len(plans)} blocks", err=True)
        sys.exit(1)
    click.echo(plans[block].prompt_preview.prompt, nl=False)
    click.echo()


@main.command()
@click.argument("spec", required=False)
@click.option("--builtin", "builtin_name", default=None)
@click.option("--backend", "backend_name", type=click.Choice(["mock", "http"]), default="mock")
@click.option("--rules", "rules_path", default=None, help="JSON file of mock rules")
@click.option("--out", "out_path", default=None, help="transcript output (JSON lines)")
@click.option("--mode", type=click.Choice(["full", "stale"]), default="full")
@click.option("--seed", "seed_overrides", multiple=True, help="layer=value, repeatable")
@click.option("--parallel/--no-parallel", default=False)
def run(spec, builtin_name, backend_name, rules_path, out_path, mode, seed_overrides, parallel):
    """Execute a chain and print the final leaf-layer entries."""
    chain, seeds = _load_chain(spec, builtin_name)
    seeds = _apply_seed_overrides(seeds, seed_overrides, chain)
    backend = _make_backend(backend_name, rules_path)
    state = initial_state(chain, seeds)

    run_mode = RunMode.FULL if mode == "full" else RunMode.STALE_ONLY
    report = run_chain(chain, state, backend, mode=run_mode, parallel=parallel)

    if out_path:
        writer = TranscriptWriter(out_path, chain.id)
        for record in report.records:
            writer.append(record_to_json(record))

    for step_id, message in report.errors:
        click.echo(f"error in {step_id}: {message}", err=True)

    for layer in chain.leaf_layers():
        for entry in state.entries.get(layer.id, []):
            click.echo(f"{layer.name}: {entry.text}")

    if report.errors:
        sys.exit(1)


@main.command("analyze-log")
@click.argument("logfile")
def analyze_log(logfile):
    """Classify a JSON-lines event log and print session stats as JSON."""
    events = []
    try:
        with open(logfile, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    events.append(editlog.event_from_json(json.loads(line)))
    except OSError as exc:
        raise click.UsageError(str(exc))
    except (KeyError, ValueError) as exc:
        click.echo(f"error: malformed event log: {exc}", err=True)
        sys.exit(1)
    categories = editlog.classify_session(events)
    click.echo(json.dumps(editlog.stats_to_json(editlog.stats(categories)), indent=2))


@main.command()
@click.option("--port", default=8787, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--backend", "backend_name", type=click.Choice(["mock", "http"]), default="mock")
@click.option("--rules", "rules_path", default=None)
@click.option("--static", "static_dir", default=None, help="directory of UI assets to serve")
def serve(port, host, backend_name, rules_path, static_dir):
    """Start the HTTP API (binds loopback by default)."""
    from .service import serve as serve_app

    backend = _make_backend(backend_name, rules_path)
    serve_app(backend, host=host, port=port, static_dir=static_dir)


if __name__ == "__main__":
    main()
