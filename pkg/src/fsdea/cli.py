"""Command-line pipeline: validate -> FSI -> regressions -> tables.

Exit codes: 0 success, 1 validation failure, 2 configuration or IO error,
3 more than 10% of unit-pairs flagged by the solver, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys

from . import econ
from .exceptions import ConfigError, EstimationError, FsdeaError, SchemaError, SpecError
from .malmquist import FsiOptions, compute_fsi
from .netdea import DeaOptions, NetworkSpec, bank_network_spec, records_frame
from .panel import VariableDictionary, default_dictionary, load_panel, validate_panel, write_panel
from .synth import CONTROLS, DgpConfig, bank_spec, generate, write_synthetic

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_SOLVER, EXIT_ESTIMATION = 0, 1, 2, 3, 4
FAILURE_SHARE_LIMIT = 0.10

DEFAULT_CONFIG = {
    "paths": {"input": None, "spec": None, "dictionary": None, "output_dir": "output", "fsi": None},
    "options": {"positivity_floor": 1e-6, "feasibility_tol": 1e-8, "optimality_tol": 1e-9,
                "iteration_limit": 50_000, "seed": 0, "n_jobs": 1, "shift_columns": [], "shift_floor": 0.1,
                "stage3_external_input": None},
    "analysis": {"baseline": True, "iv": True, "cf": True, "mechanism": True, "heterogeneity": True},
    "regression": {"dependent": "FSI", "explanatory": ["FTI"], "controls": list(CONTROLS),
                   "instruments": {"lagged": ["FTI"], "external": ["IV2"]},
                   "channels": ["MI_d", "MI_l", "MI_p"],
                   "split": {"column": "listed", "rule": "flag"}},
    "simulate": {},
}
ALIASES = {"input": "paths.input", "spec": "paths.spec", "dictionary": "paths.dictionary",
           "output_dir": "paths.output_dir", "out": "paths.output_dir", "fsi": "paths.fsi"}

log = logging.getLogger("fsdea")


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        payload = {"level": record.levelname.lower(), "logger": record.name, "event": record.getMessage()}
        payload.update(getattr(record, "fields", {}))
        return json.dumps(payload, sort_keys=True, default=str)


def _setup_logging(level: str) -> None:
    root = logging.getLogger("fsdea")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root.addHandler(handler)
    root.setLevel(level.upper())
    root.propagate = False


def _event(msg, level=logging.INFO, **fields):
    log.log(level, msg, extra={"fields": fields})


# configuration ---------------------------------------------------------------

def _leaf_paths(cfg, prefix=""):
    for k, v in cfg.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict) and k not in ("instruments", "split", "simulate"):
            yield from _leaf_paths(v, path + ".")
        else:
            yield path


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def _resolve_key(cfg: dict, key: str) -> str:
    key = key.replace("-", "_")
    if key in ALIASES:
        return ALIASES[key]
    if "." in key:
        return key
    matches = [p for p in _leaf_paths(cfg) if p.rsplit(".", 1)[-1] == key]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise ConfigError(f"unknown option --{key}")
    raise ConfigError(f"ambiguous option --{key}: {matches}")


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "simulate":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_config(config_path, overrides) -> dict:
    """Defaults, then the JSON file, then ``--key value`` overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                cfg = _merge(cfg, json.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    toks = list(overrides)
    i = 0
    while i < len(toks):
        tok = toks[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        elif key.startswith("no-") and (i + 1 == len(toks) or toks[i + 1].startswith("--")):
            key, raw = key[3:], "false"
            i += 1
        elif i + 1 == len(toks) or toks[i + 1].startswith("--"):
            raw = "true"
            i += 1
        else:
            raw = toks[i + 1]
            i += 2
        _set_path(cfg, _resolve_key(cfg, key), _parse_value(raw))
    return cfg


def _require_file(path, what):
    if not path:
        raise ConfigError(f"no {what} given")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _output_dir(cfg) -> str:
    out = cfg["paths"]["output_dir"]
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output dir {out}: {exc}") from None
    return out


def _load_spec(cfg) -> NetworkSpec:
    path = cfg["paths"]["spec"]
    if path:
        _require_file(path, "network spec")
        try:
            return NetworkSpec.from_json(path)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid network spec {path}: {exc}") from None
    ext = cfg["options"].get("stage3_external_input")
    if not ext:
        raise ConfigError("no network spec: give paths.spec or options.stage3_external_input")
    return bank_network_spec(ext)


def _load_dictionary(cfg) -> VariableDictionary:
    path = cfg["paths"]["dictionary"]
    if path:
        _require_file(path, "variable dictionary")
        return VariableDictionary.from_json(path)
    return default_dictionary()


def _load_panel(cfg):
    path = _require_file(cfg["paths"]["input"], "input panel")
    return load_panel(path, _load_dictionary(cfg))


def _fsi_options(cfg) -> FsiOptions:
    o = cfg["options"]
    dea = DeaOptions(positivity_floor=float(o["positivity_floor"]), feasibility_tol=float(o["feasibility_tol"]),
                     optimality_tol=float(o["optimality_tol"]), iteration_limit=int(o["iteration_limit"]),
                     n_jobs=int(o["n_jobs"]))
    return FsiOptions(dea, tuple(o.get("shift_columns") or ()), float(o["shift_floor"]))


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_frame(df, path) -> None:
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


# commands --------------------------------------------------------------------

def cmd_validate(cfg) -> int:
    spec = _load_spec(cfg)
    panel = _load_panel(cfg)
    out = _output_dir(cfg)
    report = validate_panel(panel, spec, cfg["options"].get("shift_columns") or ())
    report.to_json(os.path.join(out, "validation.json"))
    counts = report.as_dict()["counts"]
    _event("validation finished", dea_ready=report.dea_ready, counts=counts)
    print(f"validate: {'DEA-ready' if report.dea_ready else 'NOT DEA-ready'}; issues {counts}")
    for issue in report.dea_issues[:10]:
        print(f"  {issue.kind}: unit={issue.unit} period={issue.period} column={issue.column}")
    return EXIT_OK if report.dea_ready else EXIT_INVALID


def _run_fsi(cfg, panel, spec, out):
    result = compute_fsi(panel, spec, _fsi_options(cfg))
    _write_frame(result.table(), os.path.join(out, "fsi.csv"))
    _write_frame(records_frame(result.efficiency, spec.n_stages), os.path.join(out, "efficiency.csv"))
    share = result.failure_share()
    _event("fsi finished", lp_status=result.status_counts(), failure_share=share,
           pairs=len(result.records), skipped=len(result.skipped))
    print(f"fsi: {len(result.records)} unit-pairs, LP status {result.status_counts()}, "
          f"flagged share {share:.3f}")
    return result, share


def cmd_fsi(cfg) -> int:
    spec = _load_spec(cfg)
    panel = _load_panel(cfg)
    out = _output_dir(cfg)
    report = validate_panel(panel, spec, cfg["options"].get("shift_columns") or ())
    if not report.dea_ready:
        report.to_json(os.path.join(out, "validation.json"))
        print("fsi: panel is not DEA-ready; see validation.json")
        return EXIT_INVALID
    _, share = _run_fsi(cfg, panel, spec, out)
    return EXIT_SOLVER if share > FAILURE_SHARE_LIMIT else EXIT_OK


def _fsi_from_file(panel, path):
    import pandas as pd
    table = pd.read_csv(_require_file(path, "FSI table"), dtype={"unit": str})
    table = table.set_index(["unit", "period"])
    cols = {c: table[c] for c in table.columns if c != "status"}
    return panel.with_columns(cols, roles={"FSI": "regression-dependent"})


def _regress(cfg, panel, out) -> int:
    r = cfg["regression"]
    design = econ.RegressionDesign(r["dependent"], tuple(r["explanatory"]), tuple(r["controls"]))
    inst = econ.InstrumentSet(tuple(r["instruments"].get("lagged", ())), tuple(r["instruments"].get("external", ())))
    switches = cfg["analysis"]
    failed = []

    def table(name, build):
        try:
            fits = build()
        except (EstimationError, SchemaError) as exc:
            failed.append(name)
            _event("estimation failed", logging.ERROR, table=name, error=str(exc))
            print(f"regress: {name} failed: {exc}")
            return
        econ.write_table(fits, os.path.join(out, f"{name}.csv"))
        _write_json({k: f.to_dict() for k, f in fits.items()}, os.path.join(out, f"{name}.json"))
        _event("table written", table=name, columns=list(fits))
        print(f"regress: wrote {name}.csv")

    if switches.get("baseline"):
        def baseline():
            no_ctrl = design.replace(controls=())
            return {"(1)": econ.fit_twfe(no_ctrl, panel), "(2)": econ.fit_twfe(design, panel)}
        table("baseline", baseline)
    if switches.get("iv"):
        def iv():
            res = econ.fit_2sls(design, inst, panel)
            return {"first stage": res.first_stage, "2SLS": res}
        table("iv", iv)
    if switches.get("cf"):
        def cf():
            res = econ.fit_control_function(design, inst, panel)
            fs = econ.fit_2sls(design, inst, panel).first_stage
            return {"first stage": fs, "CF": res}
        table("cf", cf)
    if switches.get("mechanism"):
        def mech():
            fits = {}
            for ch in r["channels"]:
                pair = econ.mechanism_two_stage(panel, ch, design)
                fits[f"{ch} first"] = pair["first"]
                fits[f"{ch} second"] = pair["second"]
            return fits
        table("mechanism", mech)
    if switches.get("heterogeneity"):
        def het():
            split = r["split"]
            res = econ.heterogeneity_split(panel, design,
                                           econ.SplitCriterion(split["column"], split.get("rule", "median")))
            return {"A": res["A"], "B": res["B"]}
        table("heterogeneity", het)
    return EXIT_ESTIMATION if failed else EXIT_OK


def cmd_regress(cfg) -> int:
    panel = _load_panel(cfg)
    out = _output_dir(cfg)
    code = EXIT_OK
    if cfg["paths"].get("fsi"):
        panel = _fsi_from_file(panel, cfg["paths"]["fsi"])
    elif cfg["regression"]["dependent"] not in panel:
        spec = _load_spec(cfg)
        result, share = _run_fsi(cfg, panel, spec, out)
        panel = result.panel
        code = EXIT_SOLVER if share > FAILURE_SHARE_LIMIT else EXIT_OK
    rc = _regress(cfg, panel, out)
    return rc if rc != EXIT_OK else code


def cmd_simulate(cfg) -> int:
    out = _output_dir(cfg)
    params = dict(cfg.get("simulate") or {})
    params.setdefault("seed", int(cfg["options"].get("seed", 0)))
    dgp = DgpConfig.from_dict(params)
    panel = generate(dgp)
    path = os.path.join(out, "panel.csv")
    write_synthetic(panel, path, dictionary_path=os.path.join(out, "dictionary.json"))
    bank_spec().to_json(os.path.join(out, "spec.json"))
    _event("simulated panel", units=dgp.n_units, periods=dgp.n_periods, seed=dgp.seed)
    print(f"simulate: wrote {path} ({dgp.n_units} units x {dgp.n_periods} periods, seed {dgp.seed})")
    return EXIT_OK


def cmd_all(cfg) -> int:
    if not cfg["paths"]["input"]:
        cmd_simulate(cfg)
        out = cfg["paths"]["output_dir"]
        cfg["paths"]["input"] = os.path.join(out, "panel.csv")
        cfg["paths"]["dictionary"] = cfg["paths"]["dictionary"] or os.path.join(out, "dictionary.json")
        cfg["paths"]["spec"] = cfg["paths"]["spec"] or os.path.join(out, "spec.json")
    rc = cmd_validate(cfg)
    if rc != EXIT_OK:
        return rc
    spec = _load_spec(cfg)
    panel = _load_panel(cfg)
    out = _output_dir(cfg)
    result, share = _run_fsi(cfg, panel, spec, out)
    write_panel(result.panel, os.path.join(out, "fsi_panel.csv"))
    rc = _regress(cfg, result.panel, out)
    if rc != EXIT_OK:
        return rc
    return EXIT_SOLVER if share > FAILURE_SHARE_LIMIT else EXIT_OK


COMMANDS = {"validate": cmd_validate, "fsi": cmd_fsi, "regress": cmd_regress, "simulate": cmd_simulate,
            "all": cmd_all}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fsdea",
        description="Network-DEA Malmquist sustainability index and fixed-effects regressions.",
        epilog="Any config entry can be overridden with --key value (e.g. --seed 3, "
               "--options.n_jobs 4, --no-heterogeneity).")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--log-level", default="info")
    return p


def main(argv=None) -> int:
    args, rest = build_parser().parse_known_args(argv)
    _setup_logging(args.log_level)
    try:
        cfg = build_config(args.config, rest)
        return COMMANDS[args.command](cfg)
    except (ConfigError, SpecError) as exc:
        _event("configuration error", logging.ERROR, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        _event("estimation error", logging.ERROR, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (FsdeaError, OSError) as exc:
        _event("input error", logging.ERROR, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
