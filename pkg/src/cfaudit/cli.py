"""Command-line runner: gen, pick, audit, sweep, report.

Every subcommand reads one JSON config and writes into ``--out``. Outputs are a
pure function of the config (``--jobs`` only changes wall-clock time), and
every file carries the config hash and tool version.

Exit codes: 0 success, 2 config error, 3 the audit flagged something,
1 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from . import __version__
from .audit import INCONSISTENT, audit_explanation_only, audit_full, audit_partial
from .config import RunConfig, expand_seeds, load_config
from .errors import CfAuditError, ConfigError, NoRuns, ParseError
from .metrics import UtilityEnv, UtilitySpec
from .models import model_to_dict
from .pipeline import (SpecStatement, build_model, build_spaces, dump_json, instance_indices,
                       load_data, meta, method_configs, read_json, reported_from_dict,
                       reported_to_dict, resolved_methods, resolved_models, statement_from_config,
                       strip, utility_env)
from .prng import derive_seed
from .ranking import ExplanationSpace, ProviderPolicy, rank, select_flagged
from .sweep import RUN_COLUMNS, baseline_specs, execute_runs, summarize_sweep, sweep_specs
from .tabular import FeatureSchema, encode_many, format_value, make_normalization

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_FLAGGED = 0, 1, 2, 3
META_COLUMNS = ("config_hash", "tool_version")


# ------------------------------------------------------------------- helpers

def write_csv(path: Path, columns, rows, m: dict) -> None:
    """CSV with the reproducibility columns appended to every row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(columns) + list(META_COLUMNS))
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns] + [m["config_hash"], m["tool_version"]])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _cell(v):
    if isinstance(v, float):
        return format_value(v) if v.is_integer() else repr(v)
    return v


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _base_dir(args) -> Path:
    return Path(args.config).resolve().parent if args.config else Path(".")


def _dataset(cfg: RunConfig) -> dict:
    return cfg.dataset.model_dump(mode="json", exclude_none=True)


def _check_indices(idx, test) -> None:
    bad = [i for i in idx if not 0 <= i < len(test)]
    if bad:
        raise ConfigError(f"instance indices outside the test set (size {len(test)}): {bad[:5]}")


class Run:
    """Data, models and method realisations for one config, built once."""

    def __init__(self, cfg: RunConfig, base_dir: Path):
        self.cfg = cfg
        self.meta = meta(cfg.config_hash())
        self.train, self.test = load_data(_dataset(cfg), base_dir)
        self.schema = self.train.schema
        self.model_entries = resolved_models(cfg)
        self.method_entries = resolved_methods(cfg)
        for e in self.method_entries:
            unknown = set(e["restricted"]) - set(self.schema.names)
            if unknown:
                raise ConfigError(f"restricted features not in schema: {sorted(unknown)}")
        self.methods = method_configs(self.method_entries, self.schema)
        if cfg.policy.kind == "sensitive-avoiding":
            unknown = set(cfg.policy.sensitive_set) - set(self.schema.names)
            if unknown:
                raise ConfigError(f"policy sensitive_set not in schema: {sorted(unknown)}")
        self.indices = instance_indices(cfg)
        _check_indices(self.indices, self.test)
        self._models = None
        self._env = None

    @property
    def models(self):
        if self._models is None:
            self._models = [build_model(e, self.train) for e in self.model_entries]
        return self._models

    @property
    def env(self):
        if self._env is None:
            self._env = utility_env(self.train, self.cfg.recon_k)
        return self._env

    def xs(self, indices=None):
        return [strip(self.test.rows[i]) for i in (self.indices if indices is None else indices)]


# ----------------------------------------------------------------------- gen

def space_path(out: Path, i: int) -> Path:
    return out / "spaces" / f"space_{i:04d}.json"


def run_gen(run: Run, out: Path, jobs: int) -> list[ExplanationSpace | None]:
    spaces = build_spaces(run.models, run.methods, run.xs(), run.train, jobs)
    for k, m in enumerate(run.models):
        dump_json(out / "models" / f"model_{k:02d}.json", {**model_to_dict(m), "meta": run.meta})
    listing = []
    for i, sp in zip(run.indices, spaces):
        if sp is None:
            listing.append({"instance_index": i, "file": None, "size": 0})
            continue
        dump_json(space_path(out, i), {**sp.to_dict(run.schema), "instance_index": i, "meta": run.meta})
        listing.append({"instance_index": i, "file": space_path(out, i).relative_to(out).as_posix(),
                        "size": len(sp), "failures": len(sp.manifest.get("failures", []))})
    dump_json(out / "manifest.json", {
        "format": "cfaudit.manifest/1", "meta": run.meta, "config": run.cfg.model_dump(mode="json"),
        "schema": run.schema.to_dict(), "instances": run.indices,
        "models": [{"index": k, "kind": e["kind"], "seed": e["seed"], "model_id": m.model_id}
                   for k, (e, m) in enumerate(zip(run.model_entries, run.models))],
        "methods": run.method_entries, "stated_utility": run.cfg.stated_utility,
        "true_utility": run.cfg.true_utility or run.cfg.stated_utility, "spaces": listing})
    return spaces


def load_spaces(out: Path, run: Run) -> list[ExplanationSpace | None] | None:
    """Spaces from an earlier ``gen`` of the same config, else None."""
    mpath = out / "manifest.json"
    if not mpath.exists():
        return None
    man = read_json(mpath)
    if man.get("meta") != run.meta or man.get("instances") != run.indices:
        return None
    return [None if e["file"] is None else
            ExplanationSpace.from_dict(read_json(out / e["file"]), run.schema)
            for e in man["spaces"]]


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.seed)
    run = Run(cfg, _base_dir(args))
    spaces = run_gen(run, Path(args.out), args.jobs)
    empty = sum(s is None for s in spaces)
    print(f"gen: {len(spaces) - empty} spaces written ({empty} empty) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------- pick

def cmd_pick(args) -> int:
    cfg = load_config(args.config, args.seed)
    run = Run(cfg, _base_dir(args))
    out = Path(args.out)
    spaces = load_spaces(out, run)
    if spaces is None:
        spaces = run_gen(run, out, args.jobs)
    policy = ProviderPolicy(cfg.policy.kind, tuple(cfg.policy.sensitive_set), cfg.policy.fallback)
    utility = cfg.true()
    reports, fallbacks, skipped = [], [], []
    for i, sp in zip(run.indices, spaces):
        if sp is None:
            skipped.append(i)
            continue
        rec, fell_back = select_flagged(policy, rank(sp, utility, run.env), run.schema)
        reports.append((i, rec))
        if fell_back:
            fallbacks.append(i)
    dump_json(out / "reported.json", reported_to_dict(run.schema, reports, {
        "meta": run.meta, "policy": cfg.policy.model_dump(), "fallbacks": fallbacks,
        "skipped": skipped}))
    st = statement_from_config(cfg, run.models)
    st.meta = run.meta
    dump_json(out / "statement.json", st.to_dict())
    print(f"pick: {len(reports)} reports ({len(fallbacks)} fallbacks, {len(skipped)} skipped), "
          f"statement access level {st.access_level}")
    return EXIT_OK


# --------------------------------------------------------------------- audit

def cmd_audit(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    st_path = Path(args.statement) if args.statement else out / "statement.json"
    rep_path = Path(args.reported) if args.reported else out / "reported.json"
    statement = SpecStatement.from_dict(read_json(st_path))
    schema, reported = reported_from_dict(read_json(rep_path))
    m = meta(cfg.config_hash())
    base = _base_dir(args)
    level = statement.access_level
    if level == "full":
        report = audit_full(statement, reported, args.jobs, base)
    elif level == "partial":
        a = cfg.audit
        report = audit_partial(
            statement, reported,
            model_seeds=expand_seeds(a.sweep_model_seeds, cfg.master_seed, "audit-model"),
            cf_seeds=expand_seeds(a.sweep_cf_seeds, cfg.master_seed, "audit-cf"),
            alpha=a.alpha, iterations=a.iterations, min_runs=a.min_runs,
            permutation_seed=(a.permutation_seed if a.permutation_seed is not None
                              else derive_seed(cfg.master_seed, "permutation")),
            jobs=args.jobs, base_dir=base)
    else:
        report = audit_explanation_only(schema, reported, statement.model_class, statement.vc_bound)
    dump_json(out / "audit" / "report.json", {**report.to_dict(), "meta": m})
    (out / "audit" / "verdicts.csv").write_text(report.verdicts_csv(m), encoding="utf-8")
    counts = report.summary["verdict_counts"]
    print(f"audit ({level}): overall {report.overall}; " +
          ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
    return EXIT_FLAGGED if report.flagged or report.overall == INCONSISTENT else EXIT_OK


# --------------------------------------------------------------------- sweep

PAIR_COLUMNS = ("group", "model_seed", "cf_seed", "all_sparsity", "restricted_sparsity",
                "restricted_lower")
GROUP_COLUMNS = ("group", "mask", "runs", "sparsity_mean", "sparsity_min", "sparsity_max",
                 "heom_mean", "heom_min", "heom_max", "im1_mean", "im1_min", "im1_max")


def containment(runs, baseline) -> dict:
    """Where the restricted (cherry-picked) baseline run sits relative to the
    unrestricted seed-sweep runs, metric by metric."""
    ref = [r for r in runs if r.mask == "all"]
    picked = next(r for r in baseline if r.mask == "restricted")
    out = {}
    for metric in ("sparsity", "heom", "im1"):
        vals = [getattr(r, f"mean_{metric}") for r in ref]
        v = getattr(picked, f"mean_{metric}")
        out[metric] = {"restricted_baseline": v, "sweep_min": min(vals), "sweep_max": max(vals),
                       "inside": bool(min(vals) <= v <= max(vals))}
    return out


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.seed)
    if cfg.sweep is None:
        raise ConfigError("config has no 'sweep' section")
    run = Run(cfg, _base_dir(args))
    sw = cfg.sweep
    unknown = set(sw.restricted) - set(run.schema.names)
    if unknown:
        raise ConfigError(f"sweep restricted features not in schema: {sorted(unknown)}")
    if sw.instances is None:
        idx = list(range(len(run.test)))
    else:
        idx = list(range(sw.instances.first)) if sw.instances.first else list(sw.instances.indices)
        _check_indices(idx, run.test)
    model_seeds = expand_seeds(sw.model_seeds, cfg.master_seed, "sweep-model")
    cf_seeds = expand_seeds(sw.cf_seeds, cfg.master_seed, "sweep-cf")
    specs = sweep_specs(model_seeds, cf_seeds, sw.baseline_model_seed, sw.baseline_cf_seed,
                        sw.restricted)
    bspecs = baseline_specs(sw.baseline_model_seed, sw.baseline_cf_seed, sw.restricted)
    model_entry = {k: v for k, v in run.model_entries[0].items()}
    method_entry = dict(run.method_entries[0])
    results = execute_runs(specs + bspecs, model_entry, method_entry, run.train, run.xs(idx),
                           run.env, args.jobs)
    runs, baseline = results[: len(specs)], results[len(specs):]
    summary = summarize_sweep(runs)
    out = Path(args.out) / "sweep"
    write_csv(out / "runs.csv", RUN_COLUMNS, [r.row(k) for k, r in enumerate(runs)], run.meta)
    write_csv(out / "baseline.csv", RUN_COLUMNS, [r.row(k) for k, r in enumerate(baseline)],
              run.meta)
    write_csv(out / "pairs.csv", PAIR_COLUMNS, summary["pairs"], run.meta)
    write_csv(out / "groups.csv", GROUP_COLUMNS, summary["groups"], run.meta)
    write_csv(out / "plot_sparsity.csv", ("group", "mask", "seed", "mean_sparsity"),
              summary["plot_sparsity"], run.meta)
    write_csv(out / "plot_proximity_plausibility.csv", ("group", "mask", "mean_heom", "mean_im1"),
              summary["plot_proximity_plausibility"] +
              [{"group": "baseline", "mask": r.mask, "mean_heom": r.mean_heom,
                "mean_im1": r.mean_im1} for r in baseline], run.meta)
    cont = containment(runs, baseline)
    dump_json(out / "summary.json", {
        "format": "cfaudit.sweep/1", "meta": run.meta, "n_runs": len(runs),
        "n_instances": len(idx), "model_seeds": model_seeds, "cf_seeds": cf_seeds,
        "restricted": list(sw.restricted), "groups": summary["groups"],
        "pairs_restricted_lower": summary["pairs_restricted_lower"],
        "pairs_total": summary["pairs_total"],
        "fraction_restricted_lower": summary["fraction_restricted_lower"],
        "baseline": [r.row(k) for k, r in enumerate(baseline)], "containment": cont})
    print(f"sweep: {len(runs)} runs over {len(idx)} instances; restricted lower in "
          f"{summary['pairs_restricted_lower']}/{summary['pairs_total']} pairs; "
          + ", ".join(f"{k} {'inside' if v['inside'] else 'outside'}" for k, v in cont.items()))
    return EXIT_OK


# -------------------------------------------------------------------- report

def space_table(space: ExplanationSpace, utility: UtilitySpec, schema: FeatureSchema,
                env=None) -> tuple[list[str], list[dict]]:
    """Encoded table of ``x`` and every record, with utility and rank.

    The encoding is the one the stated utility works in: a local-set context
    over ``{x} U E`` unless the utility is ``l2_normalized`` on training ranges.
    """
    if utility.kind == "l2_normalized" and utility.normalization == "train-ranges":
        ctx = env.train_ctx
    else:
        ctx = make_normalization([space.instance, *(r.counterfactual for r in space.records)],
                                 "local-set", schema, constant_ok=True)
    cols = []
    for f, sl in zip(schema.features, ctx.slices):
        if sl.stop - sl.start == 1:
            cols.append(f.name)
        else:
            cols += [f"{f.name}={c}" for c in f.categories]
    Z = encode_many([space.instance, *(r.counterfactual for r in space.records)], ctx)
    ranking = rank(space, utility, env or UtilityEnv(schema))
    rows = [{"row": "x", **dict(zip(cols, Z[0].tolist())), "utility": "", "rank": ""}]
    for k, rec in enumerate(space.records):
        rows.append({"row": f"e{rec.id}", **dict(zip(cols, Z[k + 1].tolist())),
                     "utility": float(ranking.values[k]), "rank": ranking.rank[k]})
    return ["row", *cols, "utility", "rank"], rows


def _needs_training(u: UtilitySpec) -> bool:
    if u.kind == "penalized":
        return u.penalty_mode == "hard-constant" and _needs_training(u.base)
    if u.kind == "l2_normalized":
        return u.normalization == "train-ranges"
    return u.kind in ("heom_negative", "im1_negative")


def cmd_report(args) -> int:
    src = Path(args.run_dir or args.out)
    out = Path(args.out) / "report"
    have_spaces = (src / "manifest.json").exists()
    have_sweep = (src / "sweep" / "runs.csv").exists()
    have_audit = (src / "audit" / "report.json").exists()
    if not (have_spaces or have_sweep or have_audit):
        raise NoRuns(f"no gen, audit or sweep outputs under {src}")
    m = None
    summary: dict = {"format": "cfaudit.report/1"}
    if have_spaces:
        man = read_json(src / "manifest.json")
        m = man["meta"]
        schema = FeatureSchema.from_dict(man["schema"])
        utility = UtilitySpec.from_dict(man["stated_utility"])
        env = None
        if _needs_training(utility):
            cfg_data = man.get("config")
            if cfg_data is None:
                raise ParseError("manifest lacks the config needed to rebuild training ranges")
            train, _ = load_data(cfg_data["dataset"], _base_dir(args))
            env = utility_env(train, cfg_data.get("recon_k", 2))
        records, sizes = [], []
        for entry in man["spaces"]:
            if entry.get("file") is None:
                continue
            sp = ExplanationSpace.from_dict(read_json(src / entry["file"]), schema)
            cols, rows = space_table(sp, utility, schema, env)
            i = entry["instance_index"]
            write_csv(out / "tables" / f"space_{i:04d}.csv", cols, rows, m)
            sizes.append(len(sp))
            for rec, row in zip(sp.records, rows[1:]):
                records.append({"instance_index": i, "id": rec.id, "rank": row["rank"],
                             "utility": row["utility"], "n_changed": rec.n_changed(),
                             **{n: v for n, v in zip(schema.names, rec.counterfactual.values)}})
        write_csv(out / "space_records.csv", ["instance_index", "id", "rank", "utility", "n_changed",
                                            *schema.names], records, m)
        summary["spaces"] = {"count": len(sizes), "records": sum(sizes),
                             "stated_utility": utility.to_dict()}
    if have_audit:
        rep = read_json(src / "audit" / "report.json")
        m = m or rep["meta"]
        summary["audit"] = {"access_level": rep["access_level"], "overall": rep["overall"],
                            "verdict_counts": rep["summary"]["verdict_counts"],
                            "flagged": rep["summary"]["flagged"]}
    if have_sweep:
        runs = read_csv(src / "sweep" / "runs.csv")
        m = m or {"config_hash": runs[0]["config_hash"], "tool_version": runs[0]["tool_version"]}
        cols = [c for c in runs[0] if c not in META_COLUMNS]
        write_csv(out / "runs.csv", cols, runs, m)
        sw = read_json(src / "sweep" / "summary.json")
        write_csv(out / "sweep_groups.csv", GROUP_COLUMNS, sw["groups"], m)
        write_csv(out / "sparsity_by_run.csv", ("group", "mask", "model_seed", "cf_seed",
                                              "mean_sparsity"), runs, m)
        scatter = [dict(r, label=f"{r['group']}/{r['mask']}") for r in runs]
        write_csv(out / "proximity_plausibility.csv",
                  ("label", "model_seed", "cf_seed", "mean_heom", "mean_im1"), scatter, m)
        contrast = [dict(r, label="cherry-picked" if r["mask"] == "restricted" else "baseline")
                for r in sw["baseline"]]
        contrast += [dict(r, label=f"{r['group']}") for r in runs if r["mask"] == "all"]
        write_csv(out / "seed_vs_method.csv",
                  ("label", "model_seed", "cf_seed", "mean_sparsity", "mean_heom", "mean_im1"),
                  contrast, m)
        summary["sweep"] = {"runs": len(runs), "groups": sw["groups"],
                            "fraction_restricted_lower": sw["fraction_restricted_lower"],
                            "pairs_restricted_lower": sw["pairs_restricted_lower"],
                            "pairs_total": sw["pairs_total"], "containment": sw["containment"]}
    dump_json(out / "summary.json", {**summary, "meta": m})
    print(f"report: written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfaudit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cfaudit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="run config (JSON)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        return sp

    common(sub.add_parser("gen", help="generate explanation spaces")).set_defaults(func=cmd_gen)
    common(sub.add_parser("pick", help="simulate the provider's selection")).set_defaults(
        func=cmd_pick)
    a = sub.add_parser("audit", help="audit reported explanations against a statement")
    common(a)
    a.add_argument("--statement", help="statement file (default OUT/statement.json)")
    a.add_argument("--reported", help="reported explanations (default OUT/reported.json)")
    a.set_defaults(func=cmd_audit)
    common(sub.add_parser("sweep", help="seed sweep with and without the restricted mask")
           ).set_defaults(func=cmd_sweep)
    r = sub.add_parser("report", help="aggregate a run directory into tables and plot data")
    common(r, config_required=False)
    r.add_argument("run_dir", nargs="?", help="run directory (default OUT)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("config error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CfAuditError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
