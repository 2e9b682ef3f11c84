"""Command-line pipeline: simulate -> fit -> infer -> audit, plus studies.

Every command reads an optional JSON config (``--config``), applies the
command-line overrides and writes its outputs under ``--out``. Each output
carries the hash of the resolved config; the trajectory and estimate files
additionally carry the hash of the inputs that produced them so downstream
commands can reject files made under a different setup.

Exit codes: 0 success, 2 validation error, 3 numerical or estimation failure.
"""

import argparse
import csv
import datetime
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bases import BasisSpec, eta3, eval_basis
from .errors import CapabilityError, NPHMMError
from .evaluation import RateTable, align_to_model, aligned, rate_study
from .experiments import audit_runs, summarize_audits
from .inference import oracle_posteriors, posterior_track, tv_distance
from .model import HmmSpec, c_star_constant, emission_matrix, markov_constants, sample_trajectory
from .spectral import SpectralEstimate, estimate

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
EMISSION_GRID = 512


class ValidationError(NPHMMError, ValueError):
    """Bad configuration, arguments or mismatched input files."""


def section4_config():
    """Configuration of the two-state beta(2,5) / beta(4,3) experiment."""
    return {
        "hmm": "section4",
        "basis": {"family": "histogram", "size": 11},
        "n": 60000,
        "seeds": [0],
    }


@dataclass
class RunConfig:
    """Resolved settings of one command.

    ``hmm`` is a path to a model JSON, the name ``"section4"`` or an inline
    model dict. ``n`` is the simulated trajectory length; ``p`` the number of
    estimation triples (default ``n - 2``, the first ``p + 2`` observations);
    ``infer_steps`` the length of the trailing segment that is smoothed
    (default: the whole trajectory).
    """

    hmm: object = "section4"
    basis: dict = field(default_factory=lambda: {"family": "histogram", "size": 11})
    n: int = 60000
    p: int = None
    infer_steps: int = None
    seeds: list = field(default_factory=lambda: [0])
    out: str = "out"
    retries: int = 8
    delta: float = float(np.exp(-1.0))
    k_max: int = 50
    p_grid: list = field(default_factory=lambda: [4000, 16000, 64000])
    rate_seeds: int = 20
    audit_runs: int = 50
    audit_p: int = 60000
    audit_n: int = 200

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def model(self):
        if isinstance(self.hmm, dict):
            return HmmSpec.from_dict(self.hmm)
        if self.hmm == "section4":
            from .model import section4_hmm

            return section4_hmm()
        path = Path(self.hmm)
        if not path.is_file():
            raise ValidationError(f"hmm file not found: {path}")
        return HmmSpec.from_json(path)

    def basis_spec(self):
        return BasisSpec(self.basis["family"], self.basis["size"])

    @property
    def p_eff(self):
        return self.n - 2 if self.p is None else self.p

    def validate(self, hmm):
        spec = self.basis_spec()
        if spec.size < hmm.k:
            raise ValidationError(f"basis size M={spec.size} below K={hmm.k}")
        if not self.seeds:
            raise ValidationError("seed list is empty")
        if self.n < 1:
            raise ValidationError(f"trajectory length n must be >= 1, got {self.n}")
        if not 1 <= self.p_eff <= self.n - 2:
            raise ValidationError(f"p={self.p_eff} needs 1 <= p <= n - 2 = {self.n - 2}")
        if self.infer_steps is not None and not 1 <= self.infer_steps <= self.n:
            raise ValidationError(f"infer_steps={self.infer_steps} outside [1, n]")
        if list(self.p_grid) != sorted(set(self.p_grid)):
            raise ValidationError("p_grid must be strictly increasing")

    def resolved(self, hmm):
        d = asdict(self)
        d["hmm"] = hmm.to_dict()
        d["basis"] = self.basis_spec().to_dict()
        d["p"] = self.p_eff
        d.pop("out")
        return d


def _hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Context:
    """Config, model and hashes shared by the commands of one invocation."""

    def __init__(self, cfg, quiet=False):
        self.cfg = cfg
        self.hmm = cfg.model()
        cfg.validate(self.hmm)
        self.spec = cfg.basis_spec()
        self.out = Path(cfg.out)
        self.quiet = quiet
        resolved = cfg.resolved(self.hmm)
        self.config_hash = _hash(resolved)
        self.data_hash = _hash({"hmm": resolved["hmm"], "n": cfg.n})
        self.written = []

    def estimate_hash(self, seed):
        return _hash({"data": self.data_hash, "seed": seed, "basis": self.spec.to_dict(),
                      "p": self.cfg.p_eff, "retries": self.cfg.retries})

    def log(self, msg):
        if not self.quiet:
            print(msg, file=sys.stderr)

    def path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.written.append(p)
        return p

    def header(self, **extra):
        items = {"config_hash": self.config_hash, **extra}
        return " ".join(f"{k}: {v}" for k, v in items.items())

    def write_json(self, name, payload):
        payload = {"config_hash": self.config_hash, **payload}
        with open(self.path(name), "w") as fh:
            json.dump(_plain(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_manifest(self, command):
        files = {}
        for p in sorted(set(self.written)):
            files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {
            "command": command,
            "config_hash": self.config_hash,
            "data_hash": self.data_hash,
            "config": self.cfg.resolved(self.hmm),
            "files": files,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / f"manifest_{command}.json", "w") as fh:
            json.dump(_plain(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _read_header(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            tokens = line[1:].split()
            for key, value in zip(tokens[::2], tokens[1::2]):
                meta[key.rstrip(":")] = value
    return meta


def trajectory_path(ctx, seed):
    return ctx.out / f"trajectory_seed{seed}.csv"


def estimate_path(ctx, seed):
    return ctx.out / f"estimate_{ctx.spec.family}{ctx.spec.size}_seed{seed}.json"


def load_trajectory(ctx, seed):
    path = trajectory_path(ctx, seed)
    if not path.is_file():
        raise ValidationError(f"missing trajectory {path}; run simulate first")
    meta = _read_header(path)
    if meta.get("data_hash") != ctx.data_hash or meta.get("seed") != str(seed):
        raise ValidationError(f"{path} was produced by a different model, length or seed")
    table = np.loadtxt(path, delimiter=",", comments="#", skiprows=2, ndmin=2)
    return table[:, 1].astype(int), table[:, 2]


def load_estimate(ctx, seed):
    path = estimate_path(ctx, seed)
    if not path.is_file():
        raise ValidationError(f"missing estimate {path}; run fit first")
    with open(path) as fh:
        d = json.load(fh)
    if d.get("estimate_hash") != ctx.estimate_hash(seed):
        raise ValidationError(f"{path} was produced under a different configuration")
    return SpectralEstimate.from_dict(d)


def cmd_simulate(ctx):
    for seed in ctx.cfg.seeds:
        traj = sample_trajectory(ctx.hmm, ctx.cfg.n, seed)
        path = ctx.path(trajectory_path(ctx, seed).name)
        with open(path, "w", newline="") as fh:
            fh.write(f"# {ctx.header(data_hash=ctx.data_hash, seed=seed)}\n")
            w = csv.writer(fh)
            w.writerow(["time", "hidden_state", "observation"])
            for t, (x, y) in enumerate(zip(traj.hidden.tolist(), traj.obs.tolist()), start=1):
                w.writerow([t, x, repr(y)])
        ctx.log(f"simulate: wrote {path}")


def cmd_fit(ctx):
    hmm, spec = ctx.hmm, ctx.spec
    for seed in ctx.cfg.seeds:
        _, obs = load_trajectory(ctx, seed)
        est = estimate(obs[: ctx.cfg.p_eff + 2], spec, hmm.k, seed=seed, retries=ctx.cfg.retries)
        alignment = align_to_model(hmm, est)
        path = ctx.path(estimate_path(ctx, seed).name)
        est.to_json(
            path,
            config_hash=ctx.config_hash,
            data_hash=ctx.data_hash,
            estimate_hash=ctx.estimate_hash(seed),
            alignment_to_truth=list(alignment.perm),
            p=ctx.cfg.p_eff,
        )
        grid = (np.arange(EMISSION_GRID) + 0.5) / EMISSION_GRID
        f_hat = eval_basis(spec, grid) @ est.o_hat[:, list(alignment.perm)]
        f_true = emission_matrix(hmm, grid)
        csv_path = ctx.path(f"emissions_{spec.family}{spec.size}_seed{seed}.csv")
        with open(csv_path, "w", newline="") as fh:
            fh.write(f"# {ctx.header(estimate_hash=ctx.estimate_hash(seed))}\n")
            w = csv.writer(fh)
            w.writerow(["y", *[f"estimate_{x}" for x in range(hmm.k)],
                        *[f"true_{x}" for x in range(hmm.k)]])
            for i, y in enumerate(grid):
                w.writerow([repr(float(y)), *map(_fmt, f_hat[i]), *map(_fmt, f_true[i])])
        ctx.log(f"fit: wrote {path} and {csv_path}")


def cmd_infer(ctx):
    hmm, spec = ctx.hmm, ctx.spec
    steps = ctx.cfg.infer_steps or ctx.cfg.n
    for seed in ctx.cfg.seeds:
        _, obs = load_trajectory(ctx, seed)
        est = load_estimate(ctx, seed)
        obs = obs[-steps:]
        al = aligned(est, align_to_model(hmm, est))
        plug = posterior_track(al.q, al.pi, np.maximum(al.emissions(obs), 0.0), obs)
        truth = oracle_posteriors(hmm, obs)
        gap = tv_distance(truth.smooth, plug.smooth)
        path = ctx.path(f"posteriors_{spec.family}{spec.size}_seed{seed}.csv")
        plug.to_csv(
            path,
            extra_columns={
                "oracle_filter": truth.filter,
                "oracle_smooth": truth.smooth,
                "tv_gap": gap,
            },
            header_comment=ctx.header(estimate_hash=ctx.estimate_hash(seed)),
        )
        ctx.log(f"infer: wrote {path} (median tv_gap {np.median(gap):.4f})")


def cmd_audit(ctx):
    cfg = ctx.cfg
    seeds = [cfg.seeds[0] + i for i in range(cfg.audit_runs)]
    reports = audit_runs(ctx.hmm, ctx.spec, cfg.audit_p, cfg.audit_n, seeds)
    for seed, rep in zip(seeds, reports):
        rep.to_csv(ctx.path(f"audit_seed{seed}.csv"), header_comment=ctx.header(seed=seed))
        rep.write_sidecar(ctx.path(f"audit_seed{seed}.json"), config_hash=ctx.config_hash)
    summary = summarize_audits(reports)
    ctx.write_json("audit_summary.json", summary)
    ctx.log(f"audit: {summary['runs']} runs, {summary['violations']} violations")
    return summary


def cmd_rates(ctx):
    cfg = ctx.cfg
    table = rate_study(ctx.hmm, ctx.spec, cfg.p_grid, cfg.rate_seeds, seed_offset=cfg.seeds[0])
    table.to_csv(ctx.path("rates.csv"), header_comment=ctx.header())
    ctx.write_json("rates_summary.json", {"summary": table.summary})
    ctx.log(f"rates: medians of ||P_hat - P||_F {_medians(table, 'p_err')}")
    return table


def _medians(table: RateTable, key):
    return [round(s[key]["median"], 6) for s in table.summary]


def cmd_constants(ctx):
    mc = markov_constants(ctx.hmm, ctx.cfg.k_max)
    e3 = eta3(ctx.spec)
    payload = {
        "markov": mc.to_dict(),
        "pi_star": ctx.hmm.pi,
        "delta": ctx.cfg.delta,
        "concentration_constant": c_star_constant(ctx.hmm, ctx.cfg.delta, ctx.cfg.k_max),
        "eta3": {"basis": ctx.spec.to_dict(), "value": e3.value, "upper_bound": e3.upper_bound},
    }
    ctx.write_json("constants.json", payload)
    ctx.log(f"constants: {json.dumps(_plain(mc.to_dict()))}")
    return payload


def cmd_reproduce_section4(cfg, quiet):
    """Simulate once, then fit and smooth with both bases and write the constants."""
    base = Path(cfg.out)
    variants = [("histogram", 11), ("trigonometric", 13)]
    for family, size in variants:
        sub = RunConfig(**{**asdict(cfg), "basis": {"family": family, "size": size},
                           "out": str(base)})
        ctx = Context(sub, quiet)
        if family == variants[0][0]:
            cmd_simulate(ctx)
            cmd_constants(ctx)
        cmd_fit(ctx)
        cmd_infer(ctx)
        ctx.write_manifest(f"reproduce-section4_{family}{size}")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "infer": cmd_infer,
    "audit": cmd_audit,
    "rates": cmd_rates,
    "constants": cmd_constants,
}


def _fmt(v):
    return repr(float(v))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nphmm",
        description="Spectral estimation and plug-in smoothing for HMMs with "
        "nonparametric emissions.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, action="append", dest="seeds",
                        help="seed (repeatable); replaces the config seed list")
    common.add_argument("--out", help="output directory")
    common.add_argument("--basis", choices=["hist", "trig"], help="projection basis family")
    common.add_argument("--m", type=int, help="basis size M")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "reproduce-section4"]:
        sub.add_parser(name, parents=[common])
    return parser


def load_config(args):
    d = {}
    if args.command == "reproduce-section4":
        d.update(section4_config())
    if args.config is not None:
        try:
            with open(args.config) as fh:
                d.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
    cfg = RunConfig.from_dict(d)
    if args.seeds:
        cfg.seeds = list(args.seeds)
    if args.out is not None:
        cfg.out = args.out
    if args.basis is not None or args.m is not None:
        basis = dict(cfg.basis)
        if args.basis is not None:
            basis["family"] = args.basis
        if args.m is not None:
            basis["size"] = args.m
        cfg.basis = basis
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "reproduce-section4":
            cmd_reproduce_section4(cfg, args.quiet)
        else:
            ctx = Context(cfg, args.quiet)
            COMMANDS[args.command](ctx)
            ctx.write_manifest(args.command)
    except (ValueError, TypeError, KeyError, CapabilityError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, NPHMMError) as exc:
        diag = getattr(exc, "diagnostics", None)
        print(f"numerical error: {exc}", file=sys.stderr)
        if diag:
            print(json.dumps(_plain(diag), sort_keys=True), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
