"""Experiment specifications, sweeps and CSV output.

An experiment is described by a YAML file::

    preset: se_vs_power          # or nmse_vs_power, se_vs_asd, nmse_vs_asd, ee_vs_bits, custom
    network: {L: 4, K: 3, M: 16, f: 3, asd_deg: 10, tx_power_dbm: 30}
    sweep: {axis: power_dbm, values: [0, 10, 20, 30]}
    schemes: [MRC, QA-M-MMSE, QA-S-MMSE]
    bits: [1, 3, inf]
    estimator: aware             # aware | unaware | both
    evaluators: both             # mc | asy | both
    trials: {smallscale: 50, drops: 50}
    seed: 1

Every output CSV starts with a comment line carrying the code version, the
seed and a hash of the resolved specification.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .combining import canonical_scheme, is_unaware
from .energy import PowerModel, energy_efficiency, p_total
from .estimation import estimation_statistics
from .quantization import BitAllocation, distortion_factor
from .scenario import ConfigError, NetworkConfig, build_grid, build_pilot_book
from .se_asymptotic import asymptotic_terms
from .se_montecarlo import make_drop, prepare_drop, simulate_drop

PRESETS = ("se_vs_power", "nmse_vs_power", "se_vs_asd", "nmse_vs_asd", "ee_vs_bits", "custom")
SWEEP_AXES = ("power_dbm", "asd_deg", "bits", "M")

_PRESET_DEFAULTS = {
    "se_vs_power": {"axis": "power_dbm", "values": [-10, 0, 10, 20, 30]},
    "nmse_vs_power": {"axis": "power_dbm", "values": [0, 10, 20, 30, 40]},
    "se_vs_asd": {"axis": "asd_deg", "values": [5, 10, 20, 30, 40]},
    "nmse_vs_asd": {"axis": "asd_deg", "values": [5, 10, 20, 30, 40]},
    "ee_vs_bits": {"axis": "bits", "values": list(range(1, 11))},
}

DESK_TRIALS = (50, 50)
PAPER_TRIALS = (100, 100)


def _parse_bits(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "none", "unquantized"):
        return math.inf
    if v is None:
        return math.inf
    return float(v)


def _fmt_bits(b) -> str:
    return "inf" if math.isinf(b) else str(int(b))


@dataclass
class ExperimentSpec:
    """Resolved experiment description."""

    preset: str
    network: NetworkConfig
    axis: str
    values: list
    schemes: list = field(default_factory=lambda: ["MRC", "QA-M-MMSE", "QA-S-MMSE"])
    bits: list = field(default_factory=lambda: [math.inf])
    estimator: str = "aware"
    evaluators: str = "both"
    n_smallscale: int = DESK_TRIALS[0]
    n_drops: int = DESK_TRIALS[1]
    seed: int = 0
    ee_scheme: str = "QA-M-MMSE"
    power_model: PowerModel = field(default_factory=PowerModel)

    def problems(self) -> list[str]:
        out = list(self.network.problems())
        if self.preset not in PRESETS:
            out.append(f"unknown preset {self.preset!r}")
        if self.axis not in SWEEP_AXES:
            out.append(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            out.append("sweep values must be non-empty")
        elif list(self.values) != sorted(self.values):
            out.append("sweep values must be sorted")
        if self.n_drops < 1:
            out.append("trials.drops must be >= 1")
        if self.n_smallscale < 2 and self.evaluators != "asy":
            out.append("trials.smallscale must be >= 2 for Monte Carlo")
        if self.estimator not in ("aware", "unaware", "both"):
            out.append(f"estimator must be aware, unaware or both, not {self.estimator!r}")
        if self.evaluators not in ("mc", "asy", "both"):
            out.append(f"evaluators must be mc, asy or both, not {self.evaluators!r}")
        for s in self.schemes:
            try:
                canonical_scheme(s)
            except ValueError as exc:
                out.append(str(exc))
        bit_values = list(self.bits) + (list(self.values) if self.axis == "bits" else [])
        for b in bit_values:
            try:
                distortion_factor(b)
            except (ValueError, TypeError):
                out.append(f"invalid bit count {b!r} (must be an integer >= 1 or inf)")
        if self.axis == "M":
            out.extend(f"M = {v} must be a positive integer" for v in self.values if int(v) < 1)
        return out

    def validate(self) -> "ExperimentSpec":
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def as_dict(self) -> dict:
        d = asdict(self)
        d["network"] = asdict(self.network)
        d["bits"] = [_fmt_bits(b) for b in self.bits]
        d["values"] = [(_fmt_bits(v) if self.axis == "bits" else v) for v in self.values]
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def spec_from_dict(raw: dict, paper_scale: bool = False, seed: int | None = None) -> ExperimentSpec:
    """Build a spec from parsed YAML; raises :class:`ConfigError` on bad input."""
    if not isinstance(raw, dict):
        raise ConfigError("experiment file must contain a mapping")
    raw = dict(raw)
    preset = str(raw.pop("preset", "custom"))
    net_raw = dict(raw.pop("network", {}) or {})
    if "grid_shape" in net_raw and net_raw["grid_shape"] is not None:
        net_raw["grid_shape"] = tuple(net_raw["grid_shape"])
    known = set(NetworkConfig.__dataclass_fields__)
    unknown = set(net_raw) - known
    if unknown:
        raise ConfigError(f"unknown network keys: {sorted(unknown)}")
    try:
        network = NetworkConfig.paper_scale(**net_raw) if paper_scale else NetworkConfig(**net_raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    sweep = dict(_PRESET_DEFAULTS.get(preset, {}))
    sweep.update(raw.pop("sweep", {}) or {})
    if "axis" not in sweep or "values" not in sweep:
        raise ConfigError("a custom experiment needs sweep.axis and sweep.values")
    axis = str(sweep["axis"])
    values = list(sweep["values"])
    if axis == "bits":
        values = [_parse_bits(v) for v in values]
    bits = raw.pop("bits", [math.inf])
    bits = [_parse_bits(b) for b in (bits if isinstance(bits, list) else [bits])]
    trials = raw.pop("trials", {}) or {}
    default_trials = PAPER_TRIALS if paper_scale else DESK_TRIALS
    power = raw.pop("power_model", {}) or {}
    try:
        pm = PowerModel(**power)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"power_model: {exc}") from exc
    schemes = raw.pop("schemes", ["MRC", "QA-M-MMSE", "QA-S-MMSE"])
    file_seed = raw.pop("seed", network.rng_seed)
    spec = ExperimentSpec(
        preset=preset,
        network=network,
        axis=axis,
        values=values,
        schemes=list(schemes),
        bits=bits,
        estimator=str(raw.pop("estimator", "aware")),
        evaluators=str(raw.pop("evaluators", "both")),
        n_smallscale=int(trials.get("smallscale", default_trials[0])),
        n_drops=int(trials.get("drops", default_trials[1])),
        seed=int(file_seed if seed is None else seed),
        ee_scheme=str(raw.pop("ee_scheme", "QA-M-MMSE")),
        power_model=pm,
    )
    raw.pop("output", None)
    if raw:
        raise ConfigError(f"unknown keys: {sorted(raw)}")
    return spec


def load_spec(path, paper_scale: bool = False, seed: int | None = None) -> ExperimentSpec:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return spec_from_dict(raw or {}, paper_scale=paper_scale, seed=seed)


def validate(spec: ExperimentSpec) -> dict:
    """Derived quantities and problems, never raising."""
    net = spec.network
    out = {"problems": spec.problems(), "tau_p": net.tau_p, "tau_u": net.tau_u,
           "prelog": net.prelog, "sigma2_w": net.sigma2}
    alpha = {}
    for b in sorted(set(spec.bits + (spec.values if spec.axis == "bits" else []))):
        try:
            alpha[_fmt_bits(b)] = distortion_factor(b)
        except (ValueError, TypeError):
            pass
    out["alpha"] = alpha
    if not net.problems():
        grid = build_grid(net)
        out["pilot_groups"] = grid.pilot_group.tolist()
        out["pilot_index"] = build_pilot_book(net, grid).pilot_index.tolist()
    return out


def git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=5)
        if res.returncode == 0 and res.stdout.strip():
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def write_csv(path, header: list[str], rows: list[list], spec: ExperimentSpec) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# git-describe={git_describe()} seed={spec.seed} config_hash={spec.config_hash()}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])
    return path


def _cell(x):
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return x


def _point_config(spec: ExperimentSpec, value):
    net = spec.network
    if spec.axis == "power_dbm":
        return replace(net, tx_power_dbm=float(value))
    if spec.axis == "asd_deg":
        return replace(net, asd_deg=float(value))
    if spec.axis == "M":
        return replace(net, M=int(value))
    return net


def _point_bits(spec: ExperimentSpec, value) -> list:
    return [value] if spec.axis == "bits" else list(spec.bits)


class _DropCache:
    """User positions depend only on ``(seed, drop)``; correlation also on ASD and M."""

    def __init__(self):
        self._cache = {}

    def get(self, cfg: NetworkConfig, seed: int, d: int):
        key = (cfg.asd_deg, cfg.M, seed, d)
        if key not in self._cache:
            self._cache[key] = make_drop(cfg, seed, d)
        return self._cache[key]


def _se_point(spec: ExperimentSpec, cfg: NetworkConfig, bits, cache, threads: int) -> dict:
    """Per-drop sum SE for every (scheme, evaluator) at one sweep point."""
    schemes = [canonical_scheme(s) for s in spec.schemes]
    if spec.estimator == "unaware":
        schemes = [s for s in schemes if s == "MRC" or is_unaware(s)] or schemes
    elif spec.estimator == "both":
        extra = [s.replace("QA-", "U-") for s in schemes if s.startswith("QA-")]
        schemes = schemes + [s for s in extra if s not in schemes]
    use_mc = spec.evaluators in ("mc", "both")
    use_asy = spec.evaluators in ("asy", "both")

    def one(d):
        ctx = prepare_drop(cfg, bits, spec.seed, d, geometry=cache.get(cfg, spec.seed, d))
        res = {}
        if use_mc:
            accs = simulate_drop(ctx, schemes, spec.n_smallscale, spec.seed)
            for s in schemes:
                t = accs[s].terms(ctx.powers, cfg.sigma2, cfg.prelog)
                res[(s, "mc")] = (t.sum_se(), float(np.sqrt(np.sum(t.stderr["se"] ** 2))), t.se(), t.stderr["se"])
        if use_asy:
            for s in schemes:
                if is_unaware(s):
                    continue
                t = asymptotic_terms(ctx.stats, s, cfg.prelog)
                res[(s, "asy")] = (t.sum_se(), 0.0, t.se(), None)
        return res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_drop = list(pool.map(one, range(spec.n_drops)))
    else:
        per_drop = [one(d) for d in range(spec.n_drops)]
    return {"schemes": schemes, "per_drop": per_drop}


def _summarize(per_drop, key):
    vals = np.array([r[key][0] for r in per_drop if key in r])
    if len(vals) == 0:
        return float("nan"), float("nan")
    if len(vals) > 1:
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))
    return float(vals[0]), float(per_drop[0][key][1])


def _run_se(spec, threads, out_dir: Path, console) -> list[Path]:
    axis = spec.axis
    cache = _DropCache()
    rows, user_rows = [], []
    for value in spec.values:
        cfg = _point_config(spec, value)
        for b in _point_bits(spec, value):
            pt = _se_point(spec, cfg, b, cache, threads)
            for s in pt["schemes"]:
                mc = _summarize(pt["per_drop"], (s, "mc"))
                asy = _summarize(pt["per_drop"], (s, "asy"))
                x = _fmt_bits(value) if axis == "bits" else value
                rows.append([x, s, _fmt_bits(b), mc[0], mc[1], asy[0]])
                console(f"{axis}={x} bits={_fmt_bits(b)} {s:10s} se_mc={mc[0]:.4f} se_asy={asy[0]:.4f}")
                for d, r in enumerate(pt["per_drop"]):
                    if (s, "mc") not in r:
                        continue
                    se, se_err = r[(s, "mc")][2], r[(s, "mc")][3]
                    asy_se = r[(s, "asy")][2] if (s, "asy") in r else None
                    for j in range(se.shape[0]):
                        for k in range(se.shape[1]):
                            mc_v = float(se[j, k])
                            asy_v = float(asy_se[j, k]) if asy_se is not None else float("nan")
                            gap = abs(asy_v - mc_v) / mc_v if mc_v > 0 else float("nan")
                            user_rows.append([d, s, _fmt_bits(b), cfg.tx_power_dbm, cfg.asd_deg, cfg.M,
                                              f"{j}:{k}", mc_v, float(se_err[j, k]), asy_v, gap])
    header = [axis, "scheme", "bits", "se_mc", "se_stderr", "se_asy"]
    paths = [write_csv(out_dir / f"{spec.preset}.csv", header, rows, spec)]
    if user_rows:
        paths.append(write_csv(out_dir / f"{spec.preset}_users.csv",
                               ["drop_id", "scheme", "bits", "power_dbm", "asd_deg", "M", "user", "se_mc",
                                "se_stderr", "se_asy", "rel_gap"], user_rows, spec))
    return paths


def _run_nmse(spec, threads, out_dir: Path, console) -> list[Path]:
    cache = _DropCache()
    modes = {"aware": [True], "unaware": [False], "both": [True, False]}[spec.estimator]
    rows = []
    for value in spec.values:
        cfg = _point_config(spec, value)
        for b in _point_bits(spec, value):
            for aware in modes:
                vals = []
                for d in range(spec.n_drops):
                    grid, drop, corr = cache.get(cfg, spec.seed, d)
                    pilots = build_pilot_book(cfg, grid)
                    st = estimation_statistics(corr, pilots, BitAllocation.from_spec(b, cfg.L, cfg.M),
                                               cfg.powers(), cfg.sigma2, aware=aware)
                    n = st.nmse()
                    vals.append(np.mean([n[j, j] for j in range(cfg.L)]))
                label = "aware" if aware else "unaware"
                rows.append([cfg.tx_power_dbm, _fmt_bits(b), cfg.asd_deg, label, float(np.mean(vals))])
                console(f"power={cfg.tx_power_dbm} asd={cfg.asd_deg} bits={_fmt_bits(b)} {label:8s} "
                        f"nmse={np.mean(vals):.5f}")
    header = ["power_dbm", "bits", "asd_deg", "estimator", "nmse_mean"]
    return [write_csv(out_dir / f"{spec.preset}.csv", header, rows, spec)]


def _run_ee(spec, threads, out_dir: Path, console) -> list[Path]:
    cache = _DropCache()
    scheme = canonical_scheme(spec.ee_scheme)
    evaluator = "asy" if spec.evaluators in ("asy", "both") else "mc"
    if evaluator == "asy" and is_unaware(scheme):
        evaluator = "mc"
    sub = replace(spec, schemes=[scheme], estimator="aware", evaluators=evaluator)
    cfg = spec.network
    rows = []
    for b in spec.values:
        pt = _se_point(sub, cfg, b, cache, threads)
        mean, _ = _summarize(pt["per_drop"], (scheme, evaluator))
        alloc = BitAllocation.uniform(b, cfg.L, cfg.M)
        P = p_total(alloc, spec.power_model)
        ee = energy_efficiency(mean, alloc, spec.power_model)
        rows.append([_fmt_bits(b), mean, P, ee, scheme, evaluator])
        console(f"bits={_fmt_bits(b)} sum_se={mean:.4f} p_total={P:.3f} W ee={ee:.4e} bit/J")
    header = ["bits", "sum_se", "p_total_w", "ee_bits_per_joule", "scheme", "evaluator"]
    return [write_csv(out_dir / f"{spec.preset}.csv", header, rows, spec)]


def run(spec: ExperimentSpec, out_dir="results", threads: int = 1, console=print) -> list[Path]:
    """Run an experiment and write its CSV files; returns their paths."""
    spec.validate()
    out_dir = Path(out_dir)
    if spec.preset == "ee_vs_bits":
        if any(math.isinf(b) for b in spec.values):
            raise ConfigError("ee_vs_bits needs finite bit counts")
        return _run_ee(spec, threads, out_dir, console)
    if spec.preset.startswith("nmse"):
        return _run_nmse(spec, threads, out_dir, console)
    return _run_se(spec, threads, out_dir, console)
