"""Batch front-end: ``rgexact [subcommand] --config run.json [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 cap exceeded,
4 divergent expansion, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import math
import os
import sys
import time
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from . import cluster_expansion as ce
from . import combinatorics as cb
from .blockspin import BlockMap, Kernel
from .constrained_gibbs import hypothesis_check, make_rng
from .errors import CapExceeded, DivergentExpansion, InvalidSpec, NumericalFailure
from .jacobian import band_profile, jacobian_matrix, translation_family
from .lattice import BlockScheme, LatticeSpec, build_lattice, site_set
from .rg_map import renormalize, rg_flow
from .spin_model import DEFAULT_ENUMERATION_CAP, Interaction, encode_set, instantiate

log = logging.getLogger("rgexact")

SCHEMA_TAG = "rgexact/run_report/1"
SAMPLING = {"hypothesis-check"}
EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_DIVERGENT, EXIT_NUMERICAL = 0, 2, 3, 4, 5

DEFAULTS = {
    "method": "auto",
    "kernel": {"kind": "decimation", "b": 2},
    "scheme": {"a": 3},
    "caps": {"enumeration": DEFAULT_ENUMERATION_CAP, "n_max": 3, "max_polymers": 12},
    "options": {},
}
OPTION_DEFAULTS = {
    "renormalize": {"tol": 1e-12},
    "flow": {"max_range": None},
    "jacobian": {"z_max_size": 2, "translation_symmetry": False, "zero_floor": 1e-13},
    "band-scan": {"z_max_size": 2, "translation_symmetry": False, "zero_floor": 1e-13},
    "hypothesis-check": {"tau_policy": ["periodic"], "sp_samples": None, "pair_budget": None,
                         "include_samples": False},
    "expand": {"sigma_prime": 0, "M": 2.0},
    "kp-check": {"M": 2.0, "sigma_prime": 0, "random_trials": 0, "n_polymers": 6},
    "count": {"r": 1, "c_link": 1, "M": 2, "n_max": 10},
}
NEEDS_MODEL = {"renormalize", "flow", "jacobian", "band-scan", "hypothesis-check", "expand"}


class ConfigError(InvalidSpec):
    def __init__(self, diagnostics):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


def load_schema() -> dict:
    text = resources.files("rgexact").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def _path(err) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def validate(config) -> list[str]:
    """Every schema and consistency violation as ``path: message``; never computes anything."""
    validator = jsonschema.Draft202012Validator(load_schema())
    diags = [f"{_path(e)}: {e.message}" for e in sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))]
    if not isinstance(config, dict) or diags:
        return diags
    sub = config["subcommand"]
    if sub in SAMPLING and "seed" not in config:
        diags.append(f"/seed: seed is required for the sampling subcommand {sub!r}")
    if sub in NEEDS_MODEL:
        for key in ("lattice", "interaction"):
            if key not in config:
                diags.append(f"/{key}: required for subcommand {sub!r}")
    scheme = config.get("scheme", {})
    kernel = config.get("kernel", {})
    b = scheme.get("b", kernel.get("b", 2))
    L = scheme.get("L")
    if L is not None and L % b:
        diags.append(f"/scheme/L: commensurability rule violated: block spacing b={b} must divide L={L}")
    if "b" in scheme and "b" in kernel and scheme["b"] != kernel["b"] and kernel.get("kind") != "trivial":
        diags.append(f"/scheme/b: scheme spacing {scheme['b']} differs from kernel spacing {kernel['b']}")
    lat = config.get("lattice")
    if lat and L is not None and not L % b:
        for k, e in enumerate(lat["extent"]):
            if e % L:
                diags.append(f"/lattice/extent/{k}: L={L} must divide the extent {e}")
    if lat:
        try:
            LatticeSpec.from_dict(lat)
        except InvalidSpec as exc:
            diags.append(f"/lattice: {exc}")
    return diags


def resolve(config: dict) -> dict:
    """Config with every default filled in, as embedded in the report."""
    out = copy.deepcopy(config)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            out[key] = {**val, **out.get(key, {})}
        else:
            out.setdefault(key, val)
    kernel = out["kernel"]
    kernel.setdefault("b", 2)
    if kernel["kind"] == "kadanoff":
        kernel.setdefault("kappa", 1.0)
    out["scheme"].setdefault("b", kernel["b"] if kernel["kind"] != "trivial" else 1)
    out["scheme"].setdefault("L", out["scheme"]["b"] if out["scheme"]["b"] > 1 else 2)
    if "lattice" in out:
        out["lattice"].setdefault("boundary", "periodic")
    out["options"] = {**OPTION_DEFAULTS.get(out["subcommand"], {}), **out["options"]}
    return out


# -- model construction -----------------------------------------------------


def build_interaction(cfg: dict) -> Interaction:
    inter = cfg["interaction"]
    spec = LatticeSpec.from_dict(cfg["lattice"])
    if "nearest_neighbor" in inter:
        nn = inter["nearest_neighbor"]
        return Interaction.nearest_neighbor(spec.geometry, nn["beta"], nn.get("field", 0.0))
    return Interaction.from_dict({"couplings": inter["couplings"],
                                  "translation_invariant": inter.get("translation_invariant")})


def build_kernel(cfg: dict) -> Kernel:
    return Kernel.from_dict(cfg["kernel"])


def build_scheme(cfg: dict) -> BlockScheme:
    s = cfg["scheme"]
    return BlockScheme(s["b"], s["L"], s["a"])


def _sets(xs) -> list:
    return [site_set(tuple(s) for s in X) for X in xs]


# -- subcommands ------------------------------------------------------------


def cmd_renormalize(cfg, ctx):
    spec = LatticeSpec.from_dict(cfg["lattice"])
    res = renormalize(build_interaction(cfg), build_kernel(cfg), spec, cfg["method"], cfg["options"]["tol"],
                      cfg["caps"]["enumeration"])
    ctx.use(build_lattice(spec).n if res.method == "enumerate" else 0)
    return {"method": res.method, "image": res.image.to_dict(),
            "couplings": res.couplings.to_dict()["couplings"]}


def cmd_flow(cfg, ctx):
    spec = LatticeSpec.from_dict(cfg["lattice"])
    opts = cfg["options"]
    steps = rg_flow(build_interaction(cfg), build_kernel(cfg), spec, opts["steps"], opts["max_range"],
                    cfg["method"], cfg["caps"]["enumeration"])
    ctx.use(build_lattice(spec).n)
    return {"steps": [{"step": s.step, "volume": s.spec.to_dict(),
                       "norm": None if math.isnan(s.norm) else s.norm, "truncation": s.truncation,
                       "couplings": s.couplings.to_dict()["couplings"]} for s in steps]}


def _families(cfg):
    spec = LatticeSpec.from_dict(cfg["lattice"])
    T = build_kernel(cfg)
    opts = cfg["options"]
    bm = BlockMap(spec, T)
    if bm.image is None:
        raise InvalidSpec("jacobian needs a kernel with block spins")
    img = build_lattice(bm.image)
    if "z_family" in opts:
        zs = _sets(opts["z_family"])
    else:
        zs = [Z for k in range(1, opts["z_max_size"] + 1) for Z in itertools.combinations(img.sites, k)]
    if "w_family" in opts:
        ws = _sets(opts["w_family"])
    else:
        shapes = opts.get("w_shapes") or [[[0] * spec.d, [1] + [0] * (spec.d - 1)]]
        ws = translation_family(_sets(shapes), spec)
    return spec, T, zs, ws


def _jacobian(cfg, ctx):
    spec, T, zs, ws = _families(cfg)
    J = instantiate(build_interaction(cfg), spec)
    ctx.use(build_lattice(spec).n)
    return spec, jacobian_matrix(J, T, spec, zs, ws, cfg["options"]["translation_symmetry"], ctx.threads,
                                 cfg["method"], cfg["caps"]["enumeration"])


def cmd_jacobian(cfg, ctx):
    spec, mat = _jacobian(cfg, ctx)
    scheme = build_scheme(cfg).attach(spec)
    ctx.artifacts["jacobian.csv"] = mat.to_csv(scheme)
    return {"n_z": len(mat.zs), "n_w": len(mat.ws), "max_abs": float(abs(mat.values).max()) if mat.values.size else 0.0}


def cmd_band_scan(cfg, ctx):
    spec, mat = _jacobian(cfg, ctx)
    scheme = build_scheme(cfg).attach(spec)
    prof = band_profile(mat, scheme, zero_floor=cfg["options"]["zero_floor"])
    ctx.artifacts["jacobian.csv"] = mat.to_csv(scheme)
    ctx.artifacts["band_profile.json"] = prof.to_json(indent=2)
    out = prof.to_dict()
    out["inversions"] = [list(x) for x in prof.inversions()]
    return out


def cmd_hypothesis_check(cfg, ctx):
    opts = cfg["options"]
    vols = [LatticeSpec.from_dict(v) for v in opts.get("volumes", [cfg["lattice"]])]
    rep = hypothesis_check(build_interaction(cfg), build_kernel(cfg), vols, tuple(opts["tau_policy"]),
                           opts["sp_samples"], opts["pair_budget"], cfg["seed"], ctx.threads, cfg["method"],
                           cfg["caps"]["enumeration"])
    ctx.use(max(build_lattice(v).n for v in vols))
    ctx.artifacts["correlations.csv"] = rep.to_csv()
    return rep.to_dict(include_samples=opts["include_samples"])


def _expansion(cfg, ctx, sigma_prime):
    spec = LatticeSpec.from_dict(cfg["lattice"])
    T = build_kernel(cfg)
    code = None if T.kind == "trivial" else sigma_prime
    res = ce.iterated_block_sum(build_interaction(cfg), T, spec, build_scheme(cfg), code,
                                cap=cfg["caps"]["enumeration"])
    ctx.use(res.lattice.n)
    return res


def _set_key(N) -> str:
    return json.dumps(sorted(list(y) for y in N))


def cmd_expand(cfg, ctx):
    opts = cfg["options"]
    res = _expansion(cfg, ctx, opts["sigma_prime"])
    n_max = cfg["caps"]["n_max"]
    weights = ce.polymer_weights(res.activities, res, n_max)
    rec = ce.reconstruct(res, n_max)
    kp = ce.kp_condition_check(weights, opts["M"], res.scheme)
    out = {
        "stages": [{"type": st.block_type, "lr_supports": [encode_set(res.sites_of(m)) for m in st.lr]}
                   for st in res.stages],
        "F_last": res.F_last,
        "E_of_one": res.modified_expectation(()),
        "activities": [{"B": encode_set(a.B), "coefficient": a.coefficient, "sup_norm": a.sup_norm,
                        "allowable": ce.allowable(a.bar, res.scheme)} for a in res.activities],
        "epsilon_L": ce.epsilon_L(res.activities),
        "weights": [{"N": _set_key(N), "w": weights.w[N], "v": weights.v[N]} for N in weights.supports],
        "reconstruction": rec.__dict__,
        "kp": {"M": kp.M, "passed": kp.passed, "worst_margin": kp.worst_margin},
    }
    if "W" in opts:
        dec = ce.numerator_decomposition(weights, res, _sets([opts["W"]])[0], n_max)
        out["numerator"] = {"expectation": dec.expectation,
                            "direct": res.direct_expectation(_sets([opts["W"]])[0]),
                            "w_tilde": {_set_key(R): v for R, v in dec.w_tilde.items()}}
    return out


def cmd_kp_check(cfg, ctx):
    opts = cfg["options"]
    M = opts["M"]
    out = {}
    if opts["random_trials"]:
        extent = tuple(opts.get("bar_extent", [6]))
        geometry = "square_1d" if len(extent) == 1 else "square_2d"
        scheme = BlockScheme(1, 1, cfg["scheme"]["a"]).attach(LatticeSpec(geometry, extent, "free"))
        rng = make_rng(cfg.get("seed", 0))
        fails = 0
        worst = 0.0
        sites = scheme.bar_sites
        for _ in range(opts["random_trials"]):
            pw = ce.random_polymer_system(rng, scheme, opts["n_polymers"], M)
            k = int(rng.integers(1, len(sites) + 1))
            Y = [sites[i] for i in rng.choice(len(sites), size=k, replace=False)]
            av = ce.avoidance_oracle(pw, Y, M, cfg["caps"]["max_polymers"])
            fails += not av.passed
            worst = max(worst, abs(av.ratio) / av.bound)
        out["avoidance"] = {"trials": opts["random_trials"], "failures": fails, "worst_ratio_over_bound": worst}
        ctx.passed = fails == 0
        return out
    if "polymers" in opts:
        lat = LatticeSpec.from_dict(cfg["lattice"])
        scheme = build_scheme(cfg).attach(lat)
        pw = ce.PolymerWeights.from_weights({frozenset(tuple(y) for y in P["N"]): P["w"] for P in opts["polymers"]},
                                            scheme)
    else:
        res = _expansion(cfg, ctx, opts["sigma_prime"])
        scheme = res.scheme
        pw = ce.polymer_weights(res.activities, res, cfg["caps"]["n_max"])
    kp = ce.kp_condition_check(pw, M, scheme)
    out["kp"] = {"M": M, "passed": kp.passed,
                 "sites": [{"y": list(y), "sum": s, "margin": m} for y, (s, m) in kp.per_site.items()]}
    if "Y" in opts:
        av = ce.avoidance_oracle(pw, [tuple(y) for y in opts["Y"]], M, cfg["caps"]["max_polymers"])
        out["avoidance"] = av.__dict__
    ctx.passed = kp.passed
    return out


def cmd_count(cfg, ctx):
    o = cfg["options"]
    params = cb.CountingParams(o["p"], o["r"], o["c_link"], Fraction(str(o["M"])))
    coeffs = cb.recursion_coeffs(params, o["n_max"])
    lag = cb.lagrange_coeffs(params, o["n_max"])
    rb = cb.radius_and_bound(params, o["n_max"])
    ctx.artifacts["coefficients.csv"] = coeffs.to_csv()
    out = {
        "coefficients": [str(a) for a in coeffs.values],
        "lagrange_agrees": coeffs.values == lag.values,
        "radius": str(rb.radius),
        "epsilon_threshold": cb.epsilon_threshold(params),
        "divergence_point": str(cb.divergence_point(params)),
    }
    if "eps" in o:
        out["tail_sum"] = cb.tail_sum(params, o["eps"])
    return out


COMMANDS = {
    "renormalize": cmd_renormalize,
    "flow": cmd_flow,
    "jacobian": cmd_jacobian,
    "band-scan": cmd_band_scan,
    "hypothesis-check": cmd_hypothesis_check,
    "expand": cmd_expand,
    "kp-check": cmd_kp_check,
    "count": cmd_count,
}


class RunContext:
    def __init__(self, cap: int, threads: int):
        self.cap = cap
        self.threads = threads
        self.sites = 0
        self.artifacts: dict[str, str] = {}
        self.passed = True

    def use(self, n: int):
        self.sites = max(self.sites, n)

    @property
    def utilization(self) -> dict:
        return {"sites": self.sites, "cap": self.cap, "fraction": self.sites / self.cap}


def run(config: dict, threads: int = 1) -> tuple[dict, dict[str, str], int]:
    """Validate, execute and package one run; returns (report, artifacts, exit code)."""
    diags = validate(config)
    if diags:
        raise ConfigError(diags)
    cfg = resolve(config)
    ctx = RunContext(cfg["caps"]["enumeration"], threads)
    t0 = time.perf_counter()
    results = COMMANDS[cfg["subcommand"]](cfg, ctx)
    report = {
        "schema": SCHEMA_TAG,
        "version": __version__,
        "config": cfg,
        "results": results,
        "wall_time": time.perf_counter() - t0,
        "cap_utilization": ctx.utilization,
    }
    code = EXIT_OK if ctx.passed else EXIT_DIVERGENT
    return report, ctx.artifacts, code


def _json_default(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    if hasattr(x, "item"):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rgexact", description="Exact finite-volume renormalization experiments.")
    ap.add_argument("subcommand", nargs="?", choices=sorted(COMMANDS),
                    help="overrides the subcommand named in the config")
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="directory for report.json and CSV artifacts (default: stdout)")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    ap.add_argument("--validate-only", action="store_true", help="print diagnostics and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if isinstance(config, dict):
        if args.subcommand:
            config["subcommand"] = args.subcommand
        if args.seed is not None:
            config["seed"] = args.seed
    if args.validate_only:
        diags = validate(config)
        print(json.dumps({"diagnostics": diags}, indent=2))
        return EXIT_CONFIG if diags else EXIT_OK
    try:
        report, artifacts, code = run(config, max(1, args.threads))
    except ConfigError as exc:
        print(json.dumps({"diagnostics": exc.diagnostics}, indent=2), file=sys.stderr)
        return EXIT_CONFIG
    except CapExceeded as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except DivergentExpansion as exc:
        print(f"divergent expansion: {exc}", file=sys.stderr)
        return EXIT_DIVERGENT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidSpec as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = json.dumps(report, indent=2, default=_json_default)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n")
        for name, body in artifacts.items():
            (out / name).write_text(body)
        log.info("wrote %s", os.fspath(out))
    else:
        print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
