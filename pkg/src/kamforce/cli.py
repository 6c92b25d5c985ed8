"""Command-line front end.

Verbs: ``alpha``, ``solve``, ``barrier``, ``aubry``, ``scan``, ``diffuse``.
Settings come from an optional ``key = value`` config file and are
overridden by flags.  Exit codes: 0 success, 2 negative result
(obstruction or no connection), 1 any other error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import aubry as ab
from . import forcing as fc
from . import tables
from . import weakkam as wk
from .action import build_kernel, grid_for
from .errors import ConfigError, KamError, NegativeResult, NoConnectionError, ObstructionError
from .model import BUILTINS, builtin_model, cover_model, expression_model

DEFAULTS = {
    "model": "pendulum",
    "grid": "128",
    "substeps": "8",
    "c": "0",
    "c_range": "",
    "N": "32",
    "N_prime": "64",
    "n_alpha": "64",
    "seed": "0",
    "seeds": "1",
    "cover": "",
    "expr": "",
    "dim": "1",
    "P": "0",
    "P_prime": "0.6",
    "step": "0.1",
    "tol_fix": "",
    "tol_aubry": "",
    "tol_mane": "",
    "tol_orbit": "",
    "out": "out",
    "cache": "",
}

TOL_KEYS = ("tol_fix", "tol_aubry", "tol_mane", "tol_orbit")


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _floats(text):
    return [float(x) for x in str(text).replace(" ", "").split(",") if x != ""]


def _ints(text):
    return [int(x) for x in str(text).replace(" ", "").split(",") if x != ""]


@dataclass
class RunConfig:
    values: dict
    params: dict

    def __getitem__(self, key):
        return self.values[key]

    def canonical(self):
        # output and cache locations do not change results
        vals = {k: v for k, v in self.values.items() if k not in ("out", "cache")}
        return json.dumps({"values": vals, "params": self.params}, sort_keys=True)

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def model(self):
        name = self.values["model"]
        if name == "custom":
            if not self.values["expr"]:
                raise ConfigError("custom model needs expr")
            m = expression_model(self.values["expr"], int(self.values["dim"]))
        else:
            if name not in BUILTINS:
                raise ConfigError(f"unknown model {name!r}")
            m = builtin_model(name, **self.params)
        if self.values["cover"]:
            axis, k = (int(s) for s in self.values["cover"].split(":"))
            m = cover_model(m, axis, k)
        return m

    def sizes(self, model):
        sizes = _ints(self.values["grid"])
        if len(sizes) == 1:
            sizes = sizes * model.dim
        if len(sizes) != model.dim:
            raise ConfigError("grid dimension does not match the model")
        if self.values["cover"]:
            axis, k = (int(s) for s in self.values["cover"].split(":"))
            sizes[axis] *= k
        return tuple(sizes)

    def tol_overrides(self):
        out = {}
        for key in TOL_KEYS:
            if self.values[key] != "":
                out[key[4:]] = float(self.values[key])
        return out

    def classes(self, dim):
        if self.values["c_range"]:
            lo, hi, step = _floats(self.values["c_range"].replace(":", ","))
            n = int(np.floor((hi - lo) / step + 1e-9)) + 1 if hi >= lo else 0
            vals = lo + step * np.arange(n)
            return [np.array([v] + [0.0] * (dim - 1)) for v in vals]
        c = _floats(self.values["c"])
        if len(c) == 1 and dim > 1:
            c = c + [0.0] * (dim - 1)
        if len(c) != dim:
            raise ConfigError("class dimension does not match the model")
        return [np.array(c)]


def build_config(args) -> RunConfig:
    values = dict(DEFAULTS)
    params = {}
    if args.config:
        file_vals = read_config(args.config)
        for key, val in file_vals.items():
            if key.startswith("param."):
                params[key[6:]] = float(val)
            elif key in values:
                values[key] = val
            else:
                raise ConfigError(f"unknown config key {key!r}")
    for key in values:
        val = getattr(args, key, None)
        if val is not None:
            values[key] = str(val)
    for item in args.param or []:
        if "=" not in item:
            raise ConfigError(f"--param expects k=v, got {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = float(v)
    values["verb"] = args.verb
    return RunConfig(values, params)


# -- cache --------------------------------------------------------------------


class Cache:
    """Content-addressed store of barrier tables."""

    def __init__(self, root):
        self.root = root
        if root:
            os.makedirs(root, exist_ok=True)

    def key(self, *parts):
        return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:24]

    def path(self, key, suffix):
        return os.path.join(self.root, key + suffix)

    def barrier(self, cfg, model, sizes, M, c, N, N_prime, compute):
        if not self.root:
            return compute()
        key = self.key("barrier", cfg.values["model"], cfg.params, cfg.values["expr"],
                       cfg.values["cover"], list(sizes), M, list(map(float, c)), N, N_prime)
        binp, meta = self.path(key, ".bin"), self.path(key, ".json")
        if os.path.exists(binp) and os.path.exists(meta):
            tab = tables.read_table(binp)
            with open(meta) as fh:
                info = json.load(fh)
            a = wk.AlphaEstimate(np.asarray(info["alpha"]["c"]), info["alpha"]["lower"],
                                 info["alpha"]["upper"], info["alpha"]["n_used"],
                                 info["alpha"]["tight_lower"], info["alpha"]["tight_upper"],
                                 info["alpha"]["value"], info["alpha"]["value_error"])
            grid = grid_for(model, sizes)
            return wk.PeierlsBarrier(np.asarray(c, dtype=float), tab.data, N, N_prime,
                                     info["error_bound"], grid, a, info["decrement"])
        b = compute()
        tables.write_table(binp, tables.barrier_table(b, M))
        with open(meta, "w") as fh:
            json.dump(dict(b.to_dict(), alpha=b.alpha.to_dict()), fh, sort_keys=True)
        return b


# -- verbs ------------------------------------------------------------------


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not serializable: {type(x)}")


class Context:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.model = cfg.model()
        self.sizes = cfg.sizes(self.model)
        self.M = int(cfg["substeps"])
        self.grid = grid_for(self.model, self.sizes)
        self.grid.check_cap()
        self.out = cfg["out"]
        os.makedirs(self.out, exist_ok=True)
        self.cache = Cache(cfg["cache"])

    def kernel(self, c):
        return build_kernel(self.model, c, self.grid, self.M)

    def tolerances(self, kernel):
        try:
            return wk.Tolerances.for_kernel(kernel, **self.cfg.tol_overrides())
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def barrier(self, c, kernel=None):
        N, Np = int(self.cfg["N"]), int(self.cfg["N_prime"])

        def compute():
            k = kernel if kernel is not None else self.kernel(c)
            return wk.truncated_barrier(k, wk.alpha(k, int(self.cfg["n_alpha"])), N, Np)

        return self.cache.barrier(self.cfg, self.model, self.sizes, self.M, c, N, Np, compute)

    def meta(self, **extra):
        config = {k: v for k, v in self.cfg.values.items() if k not in ("out", "cache")}
        return dict(config_hash=self.cfg.hash, config=config, params=self.cfg.params,
                    model=self.model.describe(), **extra)

    def path(self, name):
        return os.path.join(self.out, name)


def verb_alpha(ctx: Context):
    rows, errors = [], []
    for c in ctx.cfg.classes(ctx.model.dim):
        try:
            k = build_kernel(ctx.model, c, ctx.grid, ctx.M, keep_backpointers=False)
            a = wk.alpha(k, int(ctx.cfg["n_alpha"]))
            rows.append(list(c) + [a.lower, a.upper, a.value])
        except KamError as err:
            errors.append(dict(c=c.tolist(), **err.to_dict()))
    head = [f"c{i + 1}" for i in range(ctx.model.dim)] + ["lower", "upper", "value"]
    tables.write_csv(ctx.path("alpha.csv"), head, rows)
    summary = ctx.meta(rows=len(rows), errors=errors, error_budget=dict(
        max_width=max((r[-2] - r[-3] for r in rows), default=0.0)))
    _write_json(ctx.path("alpha.json"), summary)
    return summary


def verb_solve(ctx: Context):
    c = ctx.cfg.classes(ctx.model.dim)[0]
    k = ctx.kernel(c)
    a = wk.alpha(k, int(ctx.cfg["n_alpha"]))
    tol = ctx.tolerances(k)
    rng = np.random.default_rng(int(ctx.cfg["seed"]))
    sols = []
    for i in range(int(ctx.cfg["seeds"])):
        seed = None if i == 0 else wk.random_lipschitz_seed(ctx.grid, rng)
        sol = wk.weak_kam_solve(k, a, seed, tol_fix=tol.fix)
        sols.append(sol)
        tables.write_table(ctx.path(f"solution_{i}.bin"), tables.function_table(sol.u, c, ctx.M))
        tables.grid_function_csv(ctx.path(f"solution_{i}.csv"), sol.u)
    summary = ctx.meta(alpha=a.to_dict(), residuals=[s.residual for s in sols],
                       tolerances=tol.to_dict(), error_budget=dict(tol_fix=tol.fix))
    _write_json(ctx.path("solve.json"), summary)
    return summary


def verb_barrier(ctx: Context):
    c = ctx.cfg.classes(ctx.model.dim)[0]
    b = ctx.barrier(c)
    tables.write_table(ctx.path("barrier.bin"), tables.barrier_table(b, ctx.M))
    pts = ctx.grid.coords()
    head = [f"q{i + 1}" for i in range(ctx.model.dim)] + ["h_xx"]
    tables.write_csv(ctx.path("barrier_diagonal.csv"), head, np.column_stack([pts, b.diagonal()]))
    summary = ctx.meta(barrier=b.to_dict(), alpha=b.alpha.to_dict(),
                       error_budget=dict(error_bound=b.error_bound))
    _write_json(ctx.path("barrier.json"), summary)
    return summary


def verb_aubry(ctx: Context):
    c = ctx.cfg.classes(ctx.model.dim)[0]
    k = ctx.kernel(c)
    tol = ctx.tolerances(k)
    b = ctx.barrier(c, k)
    aub = ab.aubry_set(b, tol.aubry)
    part = ab.static_classes(aub, b)
    mane, defects = ab.mane_set(b, aub, tol.mane)
    mather = ab.mather_set_approx(aub, b, k)
    hist, edges = np.histogram(defects, bins=10)
    pts = ctx.grid.coords()
    head = [f"q{i + 1}" for i in range(ctx.model.dim)] + ["h_xx", "mane_defect"]
    tables.write_csv(ctx.path("aubry_diagonal.csv"), head,
                     np.column_stack([pts, b.diagonal(), defects]))
    summary = ctx.meta(
        aubry=aub.to_dict(ctx.grid),
        classes=part.to_dict(ctx.grid),
        n_classes=len(part),
        class_centers=[pts[cl[np.argmin(b.diagonal()[cl])]].tolist() for cl in part.classes],
        mane=dict(cells=mane.tolist(), histogram=hist.tolist(), edges=edges.tolist()),
        mather=mather.tolist(),
        tolerances=tol.to_dict(),
        error_budget=dict(barrier_error=b.error_bound, tol_aubry=tol.aubry, tol_mane=tol.mane),
    )
    _write_json(ctx.path("aubry.json"), summary)
    return summary


def verb_scan(ctx: Context):
    cs = np.array([c[0] for c in ctx.cfg.classes(ctx.model.dim)])
    scan = fc.twist_forcing_scan(ctx.model, cs, ctx.sizes, ctx.M,
                                 (int(ctx.cfg["N"]), int(ctx.cfg["N_prime"])),
                                 ctx.cfg.tol_overrides())
    tables.write_csv(ctx.path("scan.csv"), ["c", "in_G", "aubry_fraction"],
                     np.column_stack([scan.cs, scan.in_G, scan.aubry_fraction]))
    summary = ctx.meta(scan=scan.to_dict())
    _write_json(ctx.path("scan.json"), summary)
    return summary


def verb_diffuse(ctx: Context):
    factory = fc.KernelFactory(ctx.model, ctx.sizes, ctx.M, ctx.cfg.tol_overrides())
    classes = fc.class_path(float(ctx.cfg["P"]), float(ctx.cfg["P_prime"]), float(ctx.cfg["step"]),
                            dim=ctx.model.dim)
    chain = fc.diffusion_chain(factory, classes)
    if chain.orbit is not None:
        chain.orbit.orbit.to_csv(ctx.path("orbit.csv"))
    tol = factory.tolerances()
    summary = ctx.meta(chain=chain.to_dict(), error_budget=dict(tol_orbit=tol.orbit))
    _write_json(ctx.path("chain.json"), summary)
    if chain.failure is not None:
        fail = dict(chain.failure)
        code, message = fail.pop("code"), fail.pop("message")
        kind = {"obstruction": ObstructionError, "no_connection": NoConnectionError}.get(code)
        if kind is not None:
            raise kind(message, **fail)
        err = KamError(message, **fail)
        err.code = code
        raise err
    return summary


VERBS = {
    "alpha": verb_alpha,
    "solve": verb_solve,
    "barrier": verb_barrier,
    "aubry": verb_aubry,
    "scan": verb_scan,
    "diffuse": verb_diffuse,
}


def make_parser():
    ap = argparse.ArgumentParser(prog="kamforce", description=__doc__.split("\n")[0])
    ap.add_argument("verb", choices=sorted(VERBS))
    ap.add_argument("--config", help="key = value settings file")
    ap.add_argument("--model", help="free, pendulum, forced_pendulum, arnold or custom")
    ap.add_argument("--param", action="append", help="model parameter k=v (repeatable)")
    ap.add_argument("--expr", help="Lagrangian expression for --model custom")
    ap.add_argument("--dim", help="dimension of a custom model")
    ap.add_argument("--grid", help="grid sizes, e.g. 256 or 32,32")
    ap.add_argument("--substeps", help="substeps M per period")
    ap.add_argument("--c", help="cohomology class, e.g. 0.5 or 0.3,0")
    ap.add_argument("--c-range", dest="c_range", help="start:stop:step along the first axis")
    ap.add_argument("--N", help="barrier lower truncation")
    ap.add_argument("--N-prime", dest="N_prime", help="barrier upper truncation")
    ap.add_argument("--n-alpha", dest="n_alpha", help="iterations for the alpha bracket")
    ap.add_argument("--P", help="diffuse: starting p1")
    ap.add_argument("--P-prime", dest="P_prime", help="diffuse: final p1")
    ap.add_argument("--step", help="diffuse: class step")
    for key in TOL_KEYS:
        ap.add_argument("--" + key.replace("_", "-"), dest=key)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--cache", help="cache directory")
    ap.add_argument("--seed", help="random seed")
    ap.add_argument("--seeds", help="number of solver seeds")
    ap.add_argument("--cover", help="axis:k cover of the model")
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        ctx = Context(cfg)
        summary = VERBS[args.verb](ctx)
        print(json.dumps(dict(status="ok", verb=args.verb, config_hash=cfg.hash,
                              out=ctx.out), sort_keys=True))
        return 0
    except NegativeResult as err:
        print(json.dumps(dict(status="negative", **err.to_dict()), sort_keys=True, default=_jsonable))
        return 2
    except KamError as err:
        print(json.dumps(dict(status="error", **err.to_dict()), sort_keys=True, default=_jsonable))
        return 1
    except (ValueError, OSError) as err:
        print(json.dumps(dict(status="error", code="error", message=str(err)), sort_keys=True))
        return 1


if __name__ == "__main__":
    sys.exit(main())
